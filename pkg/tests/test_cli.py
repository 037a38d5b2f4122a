import csv
import os

import pytest

from hw2mp.checkpoint import load_checkpoint
from hw2mp.cli import main

TINY = """
vocab = ab, cd, ef
n_samples = 12
split_ratio = 0.75
batch_size = 2
r_w = 8
r_c = 4
M_w = 2
M_c = 2
gen_base_channels = 2
gen_max_channels = 4
z_channels = 1
word_channels = 2, 2, 2, 2
char_channels = 2, 2, 2
gan_steps = 2
checkpoint_every = 1
log_every = 1
hwr_epochs = 2
hwr_hidden = 4
hwr_channels = 2, 2, 2, 2, 2
hidden_dims = 4, 8
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY)
    return str(p)


def run(cfg_file, out, *extra):
    return main([extra[0], "--config", cfg_file, "--out-dir", str(out), "-q", *extra[1:]])


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_render_data(cfg_file, tmp_path):
    assert run(cfg_file, tmp_path, "render-data") == 0
    assert os.path.exists(tmp_path / "data" / "manifest.jsonl")
    assert os.path.exists(tmp_path / "data" / "stats.json")
    with open(tmp_path / "data" / "manifest.jsonl") as fh:
        assert len(fh.readlines()) == 12


def test_train_gan_outputs_and_determinism(cfg_file, tmp_path):
    assert run(cfg_file, tmp_path / "a", "train-gan") == 0
    assert run(cfg_file, tmp_path / "b", "train-gan") == 0
    metrics = rows(tmp_path / "a" / "metrics.csv")
    assert metrics[0] == ["step", "L_w", "L_c", "recon_L1", "total"] and len(metrics) == 3
    assert metrics == rows(tmp_path / "b" / "metrics.csv")
    report = rows(tmp_path / "a" / "gan_report.csv")
    assert report[0] == ["metric", "value", "n", "config_hash"]
    ckpt = load_checkpoint(tmp_path / "a" / "generator")
    assert ckpt.step == 2 and ckpt.config_hash == report[1][3]
    assert os.path.isdir(tmp_path / "a" / "checkpoints" / "step_000001" / "word_disc")


def test_manifest_input(cfg_file, tmp_path):
    assert run(cfg_file, tmp_path, "render-data") == 0
    manifest = str(tmp_path / "data" / "manifest.jsonl")
    assert run(cfg_file, tmp_path / "m", "train-gan", "--set", f"manifest={manifest}") == 0


def test_recognizer_evaluate_sweep_plot(cfg_file, tmp_path):
    assert run(cfg_file, tmp_path / "gan", "train-gan") == 0
    gen = str(tmp_path / "gan" / "generator")
    assert run(cfg_file, tmp_path / "ocr", "train-hwr", "--set", "hwr_images=machine_print") == 0
    assert rows(tmp_path / "ocr" / "hwr_curve.csv")[0] == ["epoch", "ctc_loss"]
    ocr = str(tmp_path / "ocr" / "recognizer")
    assert run(cfg_file, tmp_path / "ev", "evaluate", "--set", f"generator_checkpoint={gen}",
               "--set", f"recognizer_checkpoint={ocr}") == 0
    report = {r[0]: float(r[1]) for r in rows(tmp_path / "ev" / "eval_report.csv")[1:]}
    assert set(report) == {"fhd", "fhd_noise", "ave_LD", "word_accuracy", "heldout_l1"}
    assert run(cfg_file, tmp_path / "joint", "train-hwr", "--set", "hwr_mode=joint",
               "--set", f"generator_checkpoint={gen}") == 0
    assert run(cfg_file, tmp_path / "sw", "sweep-hidden-dim") == 0
    sweep = rows(tmp_path / "sw" / "sweep.csv")
    assert [r[0] for r in sweep[1:]] == ["4", "8"]
    assert os.path.getsize(tmp_path / "sw" / "sweep.png") > 0
    assert main(["plot", "--out-dir", str(tmp_path / "gan"), "-q"]) == 0
    assert os.path.getsize(tmp_path / "gan" / "metrics.png") > 0
    assert main(["plot", "--out-dir", str(tmp_path / "ocr"), "--format", "svg", "-q"]) == 0
    assert os.path.exists(tmp_path / "ocr" / "curve.svg")


class TestExitCodes:
    def test_unknown_key(self, cfg_file, tmp_path):
        assert run(cfg_file, tmp_path, "train-gan", "--set", "nonsense=1") == 2

    def test_missing_generator(self, cfg_file, tmp_path):
        assert run(cfg_file, tmp_path, "train-hwr", "--set", "hwr_mode=joint") == 2
        assert run(cfg_file, tmp_path, "evaluate") == 2

    def test_data_errors(self, cfg_file, tmp_path):
        assert run(cfg_file, tmp_path, "train-gan", "--set", "manifest=/nope.jsonl") == 3
        assert run(cfg_file, tmp_path, "render-data", "--set", "vocab=a-b") == 3
        assert run(cfg_file, tmp_path, "evaluate", "--set", f"generator_checkpoint={tmp_path}",
                   "--set", f"recognizer_checkpoint={tmp_path}") == 3
        assert main(["plot", "--out-dir", str(tmp_path / "empty"), "-q"]) == 3

    def test_numerical_failure(self, cfg_file, tmp_path):
        assert run(cfg_file, tmp_path, "train-gan", "--set", "lr=1e30") == 4
