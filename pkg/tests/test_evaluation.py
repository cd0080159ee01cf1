import csv

import numpy as np
import pytest
import torch

from rawprotect.evaluation import (ATTACK_SUITE, FIDELITY_COLUMNS, ISP_MODES, SEG_COLUMNS,
                                   evaluate, protect_raw, render_pair)
from rawprotect.imaging import synthetic_raw_corpus
from rawprotect.isp import LearnableIsp
from rawprotect.mpfnet import MpfConfig
from rawprotect.training import TrainConfig, as_tensor_batch, init_state, save_state

DET = {"architecture_id": "unet", "base": 8, "stages": 3}


@pytest.fixture(scope="module")
def test_raws():
    return as_tensor_batch(synthetic_raw_corpus(8, 32, seed=9))


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    cfg = TrainConfig(crop_size=32, n_isp_surrogates=1)
    state = init_state(cfg, [LearnableIsp(width=8)], MpfConfig(c_f=8, n_blocks=1, s=0.5), None,
                       None, DET)
    return save_state(state, tmp_path_factory.mktemp("ckpt") / "ckpt-0", cfg)


def test_identity_protection_gives_capped_fidelity(checkpoint, test_raws):
    report = evaluate(checkpoint, test_raws, attacks=("none",), tampers=("splice",))
    assert [r["isp"] for r in report.fidelity] == list(ISP_MODES)
    for row in report.fidelity:
        assert row["psnr"] == 100.0
        assert row["ssim"] == pytest.approx(1.0, abs=1e-9)


def test_protect_raw_is_identity_for_fresh_protector(checkpoint, test_raws):
    from rawprotect.training import load_state
    state, _ = load_state(checkpoint)
    assert torch.equal(protect_raw(state, test_raws), test_raws)
    rgb, rgb_hat = render_pair(state, test_raws, "unseen", seed=0)
    assert torch.equal(rgb, rgb_hat)
    with pytest.raises(ValueError):
        render_pair(state, test_raws, "fisheye", seed=0)


def test_report_rows_ranges_and_csv_schema(checkpoint, test_raws, tmp_path):
    attacks = ("none", "jpeg90", "gaussian_blur")
    report = evaluate(checkpoint, test_raws, attacks=attacks, out_dir=tmp_path)
    assert len(report.rows) == 3 * len(attacks)
    for r in report.rows:
        assert all(0 <= r[k] <= 1 for k in ("recall", "f1", "iou"))
        assert r["n_images"] == 8
    assert set(report.false_alarm) == set(attacks)
    assert all(0 <= v <= 1 for v in report.false_alarm.values())
    with (tmp_path / "localization.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == SEG_COLUMNS and len(rows) == 1 + len(report.rows)
    with (tmp_path / "fidelity.csv").open() as fh:
        assert tuple(next(csv.reader(fh))) == FIDELITY_COLUMNS
    assert (tmp_path / "summary.md").read_text().startswith("# Evaluation summary")
    assert report.f1("splice", "none") == report.rows[0]["f1"]
    with pytest.raises(KeyError):
        report.f1("splice", "jpeg70")


def test_evaluation_is_deterministic(checkpoint, test_raws, tmp_path):
    evaluate(checkpoint, test_raws, attacks=("none", "awgn"), seed=3, out_dir=tmp_path / "a")
    evaluate(checkpoint, test_raws, attacks=("none", "awgn"), seed=3, out_dir=tmp_path / "b")
    for name in ("localization.csv", "fidelity.csv", "false_alarm.csv", "summary.md"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_evaluation_input_checks(checkpoint, test_raws):
    with pytest.raises(ValueError, match="at least 8"):
        evaluate(checkpoint, test_raws[:4])
    with pytest.raises(ValueError, match="unknown attacks"):
        evaluate(checkpoint, test_raws, attacks=("blur9",))


def test_attack_suite_covers_the_reported_columns():
    for name in ("none", "rescale", "awgn", "jpeg90", "jpeg85", "jpeg70", "median_blur",
                 "gaussian_blur"):
        assert name in ATTACK_SUITE
