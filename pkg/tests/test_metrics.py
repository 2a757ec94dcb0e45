import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from iprrn.errors import InputError
from iprrn.metrics import (
    MetricsReport,
    gap_report,
    plot_psnr_curves,
    psnr,
    rgb_to_y,
    sequence_report,
    ssim,
    write_metrics_csv,
)

from oracles import luminance_loops, psnr_loops, ssim_loops


class TestPSNR:
    def test_identical_frames_give_inf_sentinel(self):
        x = torch.rand(3, 8, 8)
        assert psnr(x, x) == math.inf
        assert psnr(x, x, channel_mode="RGB") == math.inf

    def test_uniform_offset_closed_form(self):
        # 16/255 offset everywhere -> 20 log10(255/16) ~ 24.05 dB
        ref = torch.full((3, 16, 16), 0.5, dtype=torch.float64)
        test = ref + 16.0 / 255.0
        expected = 20 * math.log10(255 / 16)
        assert psnr(ref, test, channel_mode="RGB") == pytest.approx(expected, abs=1e-9)
        assert expected == pytest.approx(24.05, abs=0.005)

    def test_y_mode_matches_conversion_oracle(self):
        rng = np.random.default_rng(21)
        a = rng.random((3, 24, 24))
        b = rng.random((3, 24, 24))
        ours = psnr(a, b, channel_mode="Y")
        oracle = psnr_loops(luminance_loops(a), luminance_loops(b))
        assert ours == pytest.approx(oracle, abs=0.01)

    def test_y_and_rgb_differ_on_colored_pair(self):
        rng = np.random.default_rng(22)
        a = rng.random((3, 16, 16))
        b = rng.random((3, 16, 16))
        assert psnr(a, b, "Y") != pytest.approx(psnr(a, b, "RGB"), abs=1e-6)

    def test_symmetry_and_monotonicity(self):
        ref = torch.rand(3, 8, 8) * 0.5
        assert psnr(ref, ref + 0.1, "RGB") == pytest.approx(
            psnr(ref + 0.1, ref, "RGB"), abs=1e-12
        )
        assert psnr(ref, ref + 0.05, "RGB") > psnr(ref, ref + 0.2, "RGB")

    def test_dim_mismatch(self):
        with pytest.raises(InputError):
            psnr(torch.rand(3, 8, 8), torch.rand(3, 8, 9))

    def test_inputs_clamped_at_metric_boundary(self):
        ref = torch.zeros(3, 8, 8)
        overshoot = torch.full((3, 8, 8), 1.7)  # clamps to 1.0
        capped = torch.ones(3, 8, 8)
        assert psnr(ref, overshoot, "RGB") == pytest.approx(
            psnr(ref, capped, "RGB"), abs=1e-12
        )

    def test_border_crop(self):
        ref = torch.rand(3, 12, 12)
        test = ref.clone()
        test[:, 0, :] = 0.0  # damage only the border
        assert math.isfinite(psnr(ref, test, "RGB", border_crop=0))
        assert psnr(ref, test, "RGB", border_crop=2) == math.inf


class TestSSIM:
    def test_identical_is_one(self):
        x = torch.rand(3, 16, 16)
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_inverted_binary_can_go_negative_but_bounded(self):
        rng = np.random.default_rng(5)
        a = (rng.random((1, 16, 16)) > 0.5).astype(np.float64)
        b = 1.0 - a
        value = ssim(a, b, channel_mode="RGB")
        assert -1.0 <= value <= 1.0
        assert value < 0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(33)
        a = rng.random((1, 32, 32))
        b = np.clip(a + 0.1 * rng.standard_normal((1, 32, 32)), 0, 1)
        ours = ssim(a, b, channel_mode="RGB")
        oracle = ssim_loops(a[0], b[0])
        assert ours == pytest.approx(oracle, abs=1e-6)

    def test_symmetry(self):
        rng = np.random.default_rng(34)
        a = rng.random((3, 16, 16))
        b = rng.random((3, 16, 16))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_too_small_frame(self):
        with pytest.raises(InputError):
            ssim(torch.rand(3, 8, 8), torch.rand(3, 8, 8))


class TestGapReport:
    def test_table_arithmetic_city(self):
        stats = gap_report([25.37, 28.0, 32.14])
        assert stats.min_psnr == 25.37
        assert stats.max_psnr == 32.14
        assert stats.gap_psnr == pytest.approx(32.14 - 25.37, abs=1e-12)
        assert stats.gap_psnr == pytest.approx(6.77, abs=1e-9)

    def test_table_arithmetic_calendar(self):
        stats = gap_report([24.18, 25.0, 25.26])
        assert stats.gap_psnr == pytest.approx(1.08, abs=1e-9)

    def test_constant_list_gap_zero(self):
        assert gap_report([30.0, 30.0, 30.0]).gap_psnr == 0.0

    def test_inf_excluded_and_counted(self):
        stats = gap_report([math.inf, 20.0, 25.0])
        assert stats.n_inf == 1
        assert stats.gap_psnr == 5.0
        assert stats.mean_psnr == 22.5

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            gap_report([])

    @given(st.lists(st.floats(10, 50), min_size=1, max_size=20),
           st.floats(-5, 5))
    @settings(max_examples=50, deadline=None)
    def test_gap_translation_invariant(self, values, shift):
        base = gap_report(values).gap_psnr
        shifted = gap_report([v + shift for v in values]).gap_psnr
        assert shifted == pytest.approx(base, abs=1e-9)


class TestConversion:
    def test_luminance_matches_rounded_coefficients(self):
        rng = np.random.default_rng(8)
        rgb = rng.random((3, 6, 6))
        np.testing.assert_allclose(rgb_to_y(rgb), luminance_loops(rgb), atol=5e-4)

    def test_luminance_range_is_studio_swing(self):
        black = rgb_to_y(np.zeros((3, 2, 2)))
        white = rgb_to_y(np.ones((3, 2, 2)))
        assert black[0, 0] == pytest.approx(16 / 255, abs=1e-9)
        assert white[0, 0] == pytest.approx(235 / 255, abs=1e-3)


class TestReportExport:
    def make_report(self):
        ref = torch.rand(4, 3, 16, 16)
        test = (ref + 0.05 * torch.randn(4, 3, 16, 16)).clamp(0, 1)
        return sequence_report(ref, test, clip_id="clip0")

    def test_sequence_report_invariants(self):
        report = self.make_report()
        assert len(report.per_frame_psnr) == 4
        assert len(report.per_frame_ssim) == 4
        assert report.gap_psnr == pytest.approx(
            report.max_psnr - report.min_psnr, abs=1e-12
        )
        assert report.channel_mode == "Y"

    def test_csv_round_trip_and_gap_column(self, tmp_path):
        report = self.make_report()
        out = tmp_path / "metrics.csv"
        write_metrics_csv([report], out)
        rows = out.read_text().strip().splitlines()
        assert rows[0] == "clip,frame_idx,psnr,ssim,gap"
        frame_rows = [r.split(",") for r in rows[1:-1]]
        summary = rows[-1].split(",")
        psnrs = [float(r[2]) for r in frame_rows]
        assert summary[1] == "summary"
        assert float(summary[4]) == pytest.approx(max(psnrs) - min(psnrs), abs=1e-12)

    def test_inf_rows_serialize(self, tmp_path):
        x = torch.rand(2, 3, 16, 16)
        report = sequence_report(x, x, clip_id="same")
        out = tmp_path / "metrics.csv"
        write_metrics_csv([report], out)
        rows = [r.split(",") for r in out.read_text().strip().splitlines()[1:]]
        assert float(rows[0][2]) == math.inf
        assert report.n_inf == 2

    def test_plot_written(self, tmp_path):
        out = tmp_path / "curves.png"
        plot_psnr_curves({"a": [20.0, 21.0, math.inf], "b": [19.0, 20.0, 20.5]}, out)
        assert out.stat().st_size > 0

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            sequence_report(torch.rand(3, 3, 16, 16), torch.rand(2, 3, 16, 16))
