"""Inverse-problem solving with invertible surrogates and localized search.

Train one invertible network bidirectionally so its forward direction
regresses the physical forward process and its inverse direction samples
the posterior over designs, draw space-filling posterior samples for a
target observation, then descend each sample on the learned surrogate to
an exact inverse solution.
"""

from .benchmarks import (
    BallisticsParams,
    NormStats,
    PairedDataset,
    TaskSpec,
    arm_forward,
    ballistics_forward,
    ballistics_trajectory,
    forward_batch,
    gen_dataset,
    load_dataset_csv,
    make_task,
    sample_prior,
    save_dataset_csv,
    sinewave_forward,
    sinewave_mode_labels,
    sinewave_modes,
)
from .config import RunSettings, load_config_file, resolve
from .flows import (
    FlowConfig,
    InvertibleNet,
    log_det_jacobian,
    log_posterior_density,
    net_forward,
    net_inverse,
)
from .harness import (
    ScenarioSummary,
    compare_methods,
    evaluate_reports_file,
    mode_coverage,
    render_table,
    resim_error,
    scenario_many,
    scenario_single,
    summarize_reports,
)
from .localization import (
    FeedForwardNet,
    LocalizeConfig,
    NAConfig,
    inn_raw_solve,
    ipage_solve,
    localize,
    na_solve,
    sample_posterior,
    surrogate_grad,
    train_na_surrogate,
)
from .losses import (
    KernelSpec,
    boundary_loss,
    l2_forward_loss,
    latent_loss,
    ml_loss,
    mmd,
    total_loss,
    x_prior_loss,
)
from .reports import SolveReport, config_hash, load_reports, save_reports
from .sampling import SamplerKind, UnitDesign, lhs, maximin_lhs, srs, to_gaussian
from .training import TrainConfig, TrainedModel, adam_step, train, weight_schedule

__version__ = "0.1.0"
