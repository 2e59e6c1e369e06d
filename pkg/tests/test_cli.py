import numpy as np
import pytest

from ipage.cli import main
from ipage.config import load_config_file, resolve
from ipage.reports import load_reports
from ipage.training import TrainedModel

TINY_CFG = """
[flow]
n_blocks = 2
subnet_layers = 2
subnet_width = 8

[training]
epochs = 4
batch_size = 64
lr_start = 5e-3
lr_end = 1e-3

[localization]
localize_steps = 10
m = 4

[na]
na_epochs = 3
na_steps = 20
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.ini"
    cfg.write_text(TINY_CFG)
    data = root / "sine.csv"
    assert main(["gen", "--task", "sinewave", "--n", "160", "--seed", "1",
                 "--out", str(data)]) == 0
    model = root / "sine.ckpt"
    assert main(["train", "--task", "sinewave", "--config", str(cfg),
                 "--data", str(data), "--seed", "1", "--out", str(model)]) == 0
    return {"root": root, "cfg": cfg, "data": data, "model": model}


def test_gen_deterministic_bytes(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["gen", "--task", "ballistics", "--n", "30", "--seed", "7",
                 "--out", str(a)]) == 0
    assert main(["gen", "--task", "ballistics", "--n", "30", "--seed", "7",
                 "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_train_rerun_byte_identical(workdir, tmp_path):
    again = tmp_path / "again.ckpt"
    assert main(["train", "--task", "sinewave", "--config", str(workdir["cfg"]),
                 "--data", str(workdir["data"]), "--seed", "1", "--out", str(again)]) == 0
    assert again.read_bytes() == workdir["model"].read_bytes()
    log = str(workdir["model"]) + ".log.csv"
    header = open(log).readline().strip()
    assert header == "epoch,lambda_x,lambda_y,lambda_z,loss_x,loss_y,loss_z,val_l2"


def test_solve_rerun_byte_identical(workdir, tmp_path):
    r1, r2 = tmp_path / "r1.jsonl", tmp_path / "r2.jsonl"
    base = ["solve", "--task", "sinewave", "--config", str(workdir["cfg"]),
            "--model", str(workdir["model"]), "--m", "4", "--steps", "10",
            "--sampler", "mlhs", "--seed", "3"]
    assert main(base + ["--out", str(r1)]) == 0
    assert main(base + ["--out", str(r2)]) == 0
    assert r1.read_bytes() == r2.read_bytes()
    reports = load_reports(r1)
    assert len(reports) == 1
    assert reports[0].m == 4
    assert reports[0].config_hash


def test_solve_methods_inn_raw_and_na(workdir, tmp_path):
    out = tmp_path / "raw.jsonl"
    assert main(["solve", "--task", "sinewave", "--config", str(workdir["cfg"]),
                 "--model", str(workdir["model"]), "--m", "3", "--method", "inn-raw",
                 "--seed", "0", "--out", str(out)]) == 0
    assert load_reports(out)[0].method == "inn-raw"

    na_out = tmp_path / "na.jsonl"
    assert main(["solve", "--task", "sinewave", "--config", str(workdir["cfg"]),
                 "--model", str(workdir["model"]), "--m", "3", "--method", "na",
                 "--data", str(workdir["data"]), "--seed", "0",
                 "--out", str(na_out)]) == 0
    rep = load_reports(na_out)[0]
    assert rep.method == "na"
    assert "r_min_true_loss" in rep.extra

    reuse_out = tmp_path / "na2.jsonl"
    assert main(["solve", "--task", "sinewave", "--config", str(workdir["cfg"]),
                 "--model", str(workdir["model"]), "--m", "3", "--method", "na",
                 "--na-reuse", "--seed", "0", "--out", str(reuse_out)]) == 0


def test_na_without_data_fails(workdir, tmp_path):
    assert main(["solve", "--task", "sinewave", "--config", str(workdir["cfg"]),
                 "--model", str(workdir["model"]), "--method", "na", "--seed", "0",
                 "--out", str(tmp_path / "x.jsonl")]) == 1


def test_eval_round_trip_and_hash_refusal(workdir, tmp_path):
    report = tmp_path / "r.jsonl"
    assert main(["solve", "--task", "sinewave", "--config", str(workdir["cfg"]),
                 "--model", str(workdir["model"]), "--m", "4", "--seed", "5",
                 "--out", str(report)]) == 0
    summary1 = tmp_path / "s1.csv"
    summary2 = tmp_path / "s2.csv"
    assert main(["eval", "--reports", str(report), "--out", str(summary1)]) == 0
    assert main(["eval", "--reports", str(report), "--out", str(summary2)]) == 0
    assert summary1.read_bytes() == summary2.read_bytes()
    assert main(["eval", "--reports", str(report), "--out", str(tmp_path / "s3.csv"),
                 "--expect-hash", "deadbeef"]) == 1


def test_compare_writes_auditable_artifacts(workdir, tmp_path):
    prefix = str(tmp_path / "cmp")
    assert main(["compare", "--task", "sinewave", "--config", str(workdir["cfg"]),
                 "--model", str(workdir["model"]), "--methods", "ipage,inn-raw",
                 "--m", "4", "--seeds", "0,1", "--out", prefix]) == 0
    reports = load_reports(prefix + ".reports.jsonl")
    assert {r.method for r in reports} == {"ipage", "inn-raw"}
    lines = open(prefix + ".summary.csv").read().splitlines()
    assert len(lines) == 3


def test_model_task_mismatch_rejected(workdir, tmp_path):
    assert main(["solve", "--task", "robotic-arm", "--model", str(workdir["model"]),
                 "--seed", "0", "--out", str(tmp_path / "x.jsonl")]) == 1


def test_bad_target_dimension_rejected(workdir, tmp_path):
    assert main(["solve", "--task", "sinewave", "--config", str(workdir["cfg"]),
                 "--model", str(workdir["model"]), "--target", "1.0,2.0",
                 "--seed", "0", "--out", str(tmp_path / "x.jsonl")]) == 1


# ---------------------------------------------------------------------------
# config resolution

def test_config_defaults_per_task():
    s = resolve("sinewave")
    assert (s.flow.n_blocks, s.flow.subnet_width, s.flow.activation) == (4, 128, "relu")
    assert (s.train.batch_size, s.train.epochs) == (1024, 300)
    assert (s.train.lr_start, s.train.lr_end) == (1e-3, 1e-5)
    assert s.localize.lr == 1e-3 and s.localize.steps == 300
    arm = resolve("robotic-arm")
    assert (arm.flow.n_blocks, arm.flow.subnet_width, arm.flow.activation) == (6, 256, "leaky_relu")
    assert (arm.train.batch_size, arm.train.epochs) == (512, 200)
    assert arm.localize.lr == 5e-3
    bal = resolve("ballistics", paper_scale=True)
    assert bal.train.epochs == 500
    assert bal.scenario["single_m"] == 1000 and bal.scenario["many_repeats"] == 50


def test_config_overrides_and_hash_stability(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[training]\nepochs = 12\n[flow]\nsubnet_width = 32\n"
                   "[ballistics]\ndrag = 0.5\n")
    s = resolve("ballistics", load_config_file(cfg), seed=4)
    assert s.train.epochs == 12
    assert s.flow.subnet_width == 32
    assert s.task.ballistics.drag == 0.5
    assert s.run_hash() == resolve("ballistics", load_config_file(cfg), seed=4).run_hash()
    assert s.run_hash() != resolve("ballistics", seed=4).run_hash()


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        resolve("sinewave", {"learning_rate": "0.1"})
    with pytest.raises(ValueError):
        resolve("crystal")


def test_config_duplicate_key_rejected(tmp_path):
    cfg = tmp_path / "dup.ini"
    cfg.write_text("[a]\nepochs = 1\n[b]\nepochs = 2\n")
    with pytest.raises(ValueError):
        load_config_file(cfg)
