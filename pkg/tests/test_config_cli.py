import hashlib
import os

import numpy as np
import pytest

from memsoc.cli import main
from memsoc.config import default_config, parse_config, serialize_config
from memsoc.errors import ConfigError

SMALL_CONFIG = """
[data]
counts = 40,34,20
length = 64

[pca]
components = 24
conditioning = 6

[classifier]
epochs = 15

[diffusion]
signal_length = 64
patch_size = 16
token_dim = 16
blocks = 1
epochs = 8
balance_to = 56,48,30

[run]
seed = 77
test_reserve = 40
ab_seeds = 1
"""


def _sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


def _write_config(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(SMALL_CONFIG)
    return str(path)


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def test_config_roundtrip_identity():
    cfg = default_config()
    text = serialize_config(cfg)
    again = serialize_config(parse_config(text))
    assert text == again


def test_config_defaults_and_overrides():
    cfg = parse_config("[classifier]\nepochs = 7\n")
    assert cfg.classifier.epochs == 7
    assert cfg.classifier.batch_size == 32       # untouched default
    assert cfg.data.counts == (431, 385, 212)
    assert cfg.diffusion.balance_to == (2012, 1540, 852)


def test_config_rejects_unknown_section_and_key():
    with pytest.raises(ConfigError, match="unknown config section"):
        parse_config("[mystery]\nx = 1\n")
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("[data]\nbanana = 1\n")


def test_config_value_errors():
    with pytest.raises(ConfigError, match="epochs"):
        parse_config("[classifier]\nepochs = soon\n")
    with pytest.raises(ConfigError, match="qat"):
        parse_config("[classifier]\nqat = maybe\n")


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def test_cli_usage_errors_exit_1():
    assert main(["no-such-command"]) == 1
    assert main([]) == 1


def test_cli_missing_inputs_exit_2(tmp_path):
    cfg = _write_config(tmp_path)
    assert main(["--config", cfg, "--out", str(tmp_path / "w"), "train"]) == 2


def test_cli_gen_data_deterministic(tmp_path):
    cfg = _write_config(tmp_path)
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["--config", cfg, "--out", out1, "gen-data"]) == 0
    assert main(["--config", cfg, "--out", out2, "gen-data"]) == 0
    assert _sha(os.path.join(out1, "dataset.txt")) == _sha(os.path.join(out2, "dataset.txt"))
    with open(os.path.join(out1, "summary.csv")) as fh:
        assert fh.readline().strip() == "label,provenance,count"


def test_cli_gen_data_counts_flag(tmp_path):
    cfg = _write_config(tmp_path)
    out = str(tmp_path / "c")
    assert main(["--config", cfg, "--out", out, "gen-data",
                 "--counts", "1,1,1"]) == 0
    text = open(os.path.join(out, "dataset.txt")).read().strip().splitlines()
    assert len(text) == 1 + 3


def test_cli_full_small_pipeline(tmp_path):
    cfg = _write_config(tmp_path)
    out = str(tmp_path / "ws")
    for cmd in (["gen-data"], ["train-diffusion"], ["augment"], ["train"],
                ["compile"], ["simulate"], ["device-cdf"], ["report"]):
        assert main(["--config", cfg, "--out", out] + cmd) == 0, cmd
    for name in ("dataset.txt", "dataset_augmented.txt", "classifier.ckpt",
                 "denoiser.ckpt", "pca.ckpt", "plan.txt", "env_results.csv",
                 "residuals.csv", "trace_summary.csv", "device_cdf.csv",
                 "loss_curves.csv", "diffusion_loss.csv", "snapshots.txt",
                 "accuracy_bars.svg", "device_cdf.svg", "loss_curves.svg"):
        assert os.path.exists(os.path.join(out, name)), name
    with open(os.path.join(out, "env_results.csv")) as fh:
        header = fh.readline().strip()
        rows = [line.split(",") for line in fh]
    assert header == "env,overall,healthy,heart_attack,liver_cancer"
    assert [r[0] for r in rows] == ["float", "quantized_sim", "soc_sim"]


def test_cli_simulate_noise_off_equalizes_envs(tmp_path):
    cfg = _write_config(tmp_path)
    out = str(tmp_path / "ws2")
    for cmd in (["gen-data"], ["train-diffusion"], ["augment"], ["train"],
                ["compile"]):
        assert main(["--config", cfg, "--out", out] + cmd) == 0
    assert main(["--config", cfg, "--out", out, "simulate", "--noise", "off"]) == 0
    with open(os.path.join(out, "env_results.csv")) as fh:
        fh.readline()
        rows = {line.split(",")[0]: line.strip().split(",")[1:] for line in fh}
    assert rows["quantized_sim"] == rows["soc_sim"]


def test_cli_fingerprint_mismatch_exit_5(tmp_path):
    cfg = _write_config(tmp_path)
    out = str(tmp_path / "ws3")
    for cmd in (["gen-data"], ["train-diffusion"], ["augment"], ["train"],
                ["compile"]):
        assert main(["--config", cfg, "--out", out] + cmd) == 0
    # retrain with a different seed: checkpoint no longer matches the plan
    assert main(["--config", cfg, "--seed", "123", "--out", out, "train"]) == 0
    assert main(["--config", cfg, "--out", out, "simulate"]) == 5


def test_cli_augment_identity_policy_writes_same_bytes(tmp_path):
    cfg_text = SMALL_CONFIG.replace("balance_to = 56,48,30", "balance_to = 40,34,20")
    path = tmp_path / "exp.ini"
    path.write_text(cfg_text)
    out = str(tmp_path / "ws4")
    assert main(["--config", str(path), "--out", out, "gen-data"]) == 0
    assert main(["--config", str(path), "--out", out, "train-diffusion"]) == 0
    assert main(["--config", str(path), "--out", out, "augment"]) == 0
    assert _sha(os.path.join(out, "dataset.txt")) == _sha(
        os.path.join(out, "dataset_augmented.txt"))
