"""Metrics against loop oracles: both MSE conventions, PSNR sentinel,
Gaussian-window SSIM, CSI confusion counting, report plumbing."""

from __future__ import annotations

import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from modernn.errors import ContractError, ShapeError
from modernn.metrics import (CsiResult, MetricReport, compute_report, csi,
                             mse_frame, mse_pixel, psnr, psnr_from_mse,
                             report_to_csv, report_to_text, ssim)


def frames(seed, *shape, scale=255.0):
    return np.random.default_rng(seed).random(shape) * scale


class TestMse:
    def test_pixel_matches_fsum_oracle(self):
        p, t = frames(0, 3, 1, 8, 8), frames(1, 3, 1, 8, 8)
        assert abs(mse_pixel(p, t) - oracles.mse_pixel_loops(p, t)) < 1e-9

    def test_pixel_offset_by_one_is_exactly_one(self):
        t = frames(2, 2, 1, 5, 5)
        assert mse_pixel(t + 1.0, t) == 1.0

    def test_frame_matches_fsum_oracle(self):
        p, t = frames(3, 4, 2, 1, 6, 6), frames(4, 4, 2, 1, 6, 6)
        assert abs(mse_frame(p, t) - oracles.mse_frame_loops(p, t)) < 1e-9

    def test_frame_convention_is_summed_per_frame(self):
        t = np.zeros((2, 1, 4, 4))
        p = np.full((2, 1, 4, 4), 255.0)
        # two frames, each contributing 16 unit squared errors on the 0..1 scale
        assert mse_frame(p, t) == pytest.approx(16.0)

    def test_single_frame_has_no_leading_axes(self):
        p, t = frames(5, 1, 5, 5), frames(6, 1, 5, 5)
        assert mse_frame(p, t) == pytest.approx(
            float(np.sum(((p - t) / 255.0) ** 2)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse_pixel(np.zeros(3), np.zeros(4))
        with pytest.raises(ShapeError):
            mse_frame(np.zeros((4, 4)), np.zeros((4, 4)))


class TestPsnr:
    def test_identical_is_infinite(self):
        t = frames(7, 1, 6, 6)
        assert psnr(t, t) == math.inf

    def test_matches_oracle(self):
        p, t = frames(8, 2, 1, 6, 6), frames(9, 2, 1, 6, 6)
        assert abs(psnr(p, t) - oracles.psnr_loops(p, t)) < 1e-9

    def test_known_value(self):
        t = np.zeros((1, 4, 4))
        assert psnr(t + 255.0, t) == pytest.approx(0.0)

    def test_negative_mse_rejected(self):
        with pytest.raises(ContractError):
            psnr_from_mse(-1.0)


class TestSsim:
    def test_identical_is_one(self):
        t = frames(10, 1, 16, 16)
        assert abs(ssim(t, t) - 1.0) < 1e-9

    def test_matches_loop_oracle(self):
        p, t = frames(11, 2, 14, 14), frames(12, 2, 14, 14)
        assert abs(ssim(p, t) - oracles.ssim_loops(p, t)) < 1e-9

    def test_matches_loop_oracle_small_window(self):
        p, t = frames(13, 1, 9, 9), frames(14, 1, 9, 9)
        got = ssim(p, t, window=5)
        want = oracles.ssim_loops(p, t, window=5)
        assert abs(got - want) < 1e-9

    def test_noise_lowers_score(self):
        t = frames(15, 1, 16, 16)
        noisy = t + np.random.default_rng(16).normal(0, 40, t.shape)
        assert ssim(noisy, t) < ssim(t, t)

    def test_frame_smaller_than_window_rejected(self):
        with pytest.raises(ContractError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestCsi:
    def test_matches_counting_oracle(self):
        p, t = frames(17, 3, 1, 8, 8), frames(18, 3, 1, 8, 8)
        got = csi(p, t, 128.0)
        value, hits, misses, fa, degenerate = oracles.csi_loops(p, t, 128.0)
        assert got.value == value
        assert (got.hits, got.misses, got.false_alarms) == (hits, misses, fa)
        assert got.degenerate == degenerate

    def test_threshold_is_inclusive(self):
        p = np.array([[128.0, 127.9]])
        t = np.array([[128.0, 128.0]])
        r = csi(p, t, 128.0)
        assert (r.hits, r.misses, r.false_alarms) == (1, 1, 0)
        assert r.value == 0.5

    def test_degenerate_case_scores_one(self):
        r = csi(np.zeros((4, 4)), np.zeros((4, 4)), 128.0)
        assert r.degenerate and r.value == 1.0 and float(r) == 1.0

    def test_perfect_and_disjoint(self):
        t = (frames(19, 1, 6, 6) > 127).astype(float) * 255
        assert csi(t, t, 128.0).value == 1.0
        assert csi(255.0 - t, t, 128.0).value == 0.0

    @given(st.integers(0, 10_000))
    def test_value_in_unit_interval(self, seed):
        rng = np.random.default_rng(seed)
        p = rng.integers(0, 2, (6, 6)) * 255.0
        t = rng.integers(0, 2, (6, 6)) * 255.0
        r = csi(p, t, 128.0)
        assert 0.0 <= r.value <= 1.0
        assert r.hits + r.misses == int(np.sum(t >= 128.0))
        assert r.hits + r.false_alarms == int(np.sum(p >= 128.0))


class TestReport:
    def _report(self):
        p = frames(20, 2, 3, 1, 12, 12)
        t = frames(21, 2, 3, 1, 12, 12)
        return compute_report(p, t, csi_threshold=128.0), p, t

    def test_per_frame_and_aggregate(self):
        report, p, t = self._report()
        assert len(report.per_frame) == 3
        for f in range(3):
            assert report.per_frame[f].mse == pytest.approx(
                mse_pixel(p[:, f], t[:, f]))
        assert report.aggregate.mse == pytest.approx(
            sum(m.mse for m in report.per_frame) / 3)
        assert report.aggregate.csi == pytest.approx(
            sum(m.csi for m in report.per_frame) / 3)

    def test_requires_horizon_axis(self):
        with pytest.raises(ShapeError):
            compute_report(np.zeros((3, 12, 12)), np.zeros((3, 12, 12)))

    def test_csv_round_trip(self, tmp_path):
        report, _, _ = self._report()
        path = tmp_path / "m.csv"
        report_to_csv(report, path)
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["frame", "mse", "mse_frame", "psnr", "ssim", "csi",
                           "csi_degenerate"]
        assert len(rows) == 5  # header + 3 frames + aggregate
        assert rows[-1][0] == "aggregate"
        # repr round trip is exact
        assert float(rows[1][1]) == report.per_frame[0].mse

    def test_text_rendering(self):
        report, _, _ = self._report()
        text = report_to_text(report)
        assert f"frame0.mse={report.per_frame[0].mse!r}" in text
        assert f"aggregate.ssim={report.aggregate.ssim!r}" in text
        assert text.endswith("\n")
