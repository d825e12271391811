"""Distortion metrics, RD loss, BD-rate, and the report tooling."""

import math

import numpy as np
import pytest

from mocomp.codec import FrameStats
from mocomp.errors import DomainError, FormatError, ShapeError
from mocomp.metrics import (
    MSE_LAMBDA_GRID,
    MSSSIM_MIN_EXTENT,
    RdPoint,
    bd_rate,
    bit_allocation_delta_csv,
    bit_allocation_report,
    lambda_grid,
    mse,
    ms_ssim,
    psnr,
    rd_loss,
    read_rd_csv,
)
from mocomp.tensor import Tensor


def curve(*pairs):
    return [RdPoint(r, q) for r, q in pairs]


BASE_CURVE = curve((0.1, 30.0), (0.2, 32.0), (0.4, 34.0), (0.8, 36.0))


class TestMse:
    def test_identical(self):
        t = Tensor.full((2, 3), 0.7)
        assert mse(t, t) == 0.0

    def test_constant_offset(self):
        a = Tensor.full((4, 4), 0.5, dtype=np.float64)
        b = Tensor.full((4, 4), 0.6, dtype=np.float64)
        assert abs(mse(a, b) - 0.01) < 1e-12

    def test_matches_elementwise_brute_force(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.uniform(0, 1, (3, 5, 5)).astype(np.float32))
        b = Tensor(rng.uniform(0, 1, (3, 5, 5)).astype(np.float32))
        brute = sum(
            (float(x) - float(y)) ** 2 for x, y in zip(a.data.ravel(), b.data.ravel())
        ) / a.size
        assert abs(mse(a, b) - brute) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse(Tensor.zeros((2, 2)), Tensor.zeros((2, 3)))


class TestPsnr:
    def test_unit_mse_at_peak_255(self):
        a = Tensor.of([[1.0]])
        b = Tensor.of([[0.0]])
        assert abs(psnr(a, b, peak=255.0) - 48.1308) < 1e-3

    def test_identical_inputs_hit_infinity_sentinel(self):
        t = Tensor.full((2, 2), 0.3)
        assert psnr(t, t) == math.inf

    def test_mse_equal_to_peak_squared_gives_zero(self):
        a = Tensor.of([[2.0]])
        b = Tensor.of([[0.0]])
        assert abs(psnr(a, b, peak=2.0)) < 1e-12

    def test_strictly_decreasing_in_mse(self):
        values = []
        for err in [0.1, 0.2, 0.4, 0.8]:
            a = Tensor.full((1, 4), 0.0)
            b = Tensor.full((1, 4), math.sqrt(err))
            values.append(psnr(a, b, peak=1.0))
        assert all(v2 < v1 for v1, v2 in zip(values, values[1:]))


class TestMsSsim:
    def test_identical_images_score_one(self):
        rng = np.random.default_rng(1)
        a = Tensor(rng.uniform(0, 1, (1, 176, 176)).astype(np.float32))
        assert abs(ms_ssim(a, a) - 1.0) < 1e-9

    def test_symmetric_bit_exact(self):
        rng = np.random.default_rng(2)
        a = Tensor(rng.uniform(0, 1, (3, 176, 180)).astype(np.float32))
        b = Tensor(rng.uniform(0, 1, (3, 176, 180)).astype(np.float32))
        assert ms_ssim(a, b) == ms_ssim(b, a)

    def test_tiny_noise_stays_near_one(self):
        # regression-pinned after first verified run
        rng = np.random.default_rng(1)
        const = Tensor.full((1, 176, 176), 0.5)
        noisy = Tensor((const.data + rng.normal(0, 1e-3, const.dims)).astype(np.float32))
        value = ms_ssim(const, noisy, peak=1.0)
        assert 0.99 < value < 1.0
        assert abs(value - 0.9998566925693165) < 1e-6

    def test_never_exceeds_one(self):
        rng = np.random.default_rng(3)
        for _ in range(3):
            a = Tensor(rng.uniform(0, 1, (1, 176, 176)).astype(np.float32))
            b = Tensor(rng.uniform(0, 1, (1, 176, 176)).astype(np.float32))
            assert ms_ssim(a, b) <= 1.0 + 1e-9

    def test_small_input_error_names_required_size(self):
        a = Tensor.full((1, 128, 176), 0.5)
        with pytest.raises(DomainError, match=str(MSSSIM_MIN_EXTENT)):
            ms_ssim(a, a)

    def test_shape_checks(self):
        with pytest.raises(ShapeError):
            ms_ssim(Tensor.zeros((2, 176, 176)), Tensor.zeros((2, 176, 176)))


class TestRdLoss:
    def test_plug_in_arithmetic(self):
        assert abs(rd_loss(0.1, 0.001, 2048.0) - 2.148) < 1e-12

    def test_zero_distortion(self):
        assert rd_loss(0.375, 0.0, 512.0) == 0.375

    def test_affine_in_each_argument(self):
        base = rd_loss(0.2, 0.01, 256.0)
        assert abs(rd_loss(0.2 + 1.0, 0.01, 256.0) - (base + 1.0)) < 1e-12
        assert abs(rd_loss(0.2, 0.01 + 1.0, 256.0) - (base + 256.0)) < 1e-9

    def test_lambda_grids(self):
        assert lambda_grid("mse") == MSE_LAMBDA_GRID == (256.0, 512.0, 1024.0, 2048.0)
        assert lambda_grid("ms_ssim") == tuple(v / 50.0 for v in MSE_LAMBDA_GRID)

    def test_lambda_validation(self):
        with pytest.raises(DomainError):
            rd_loss(0.1, 0.1, 0.0)


class TestBdRate:
    def test_identical_curves_give_zero(self):
        assert abs(bd_rate(BASE_CURVE, BASE_CURVE)) < 1e-9

    def test_uniformly_halved_rates_give_minus_fifty(self):
        halved = [RdPoint(p.rate / 2, p.quality) for p in BASE_CURVE]
        assert abs(bd_rate(BASE_CURVE, halved) - (-50.0)) < 0.01

    def test_every_curve_is_its_own_anchor(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            rates = np.cumsum(rng.uniform(0.05, 0.3, 4))
            quals = np.cumsum(rng.uniform(0.5, 2.0, 4)) + 30
            c = curve(*zip(rates, quals))
            assert abs(bd_rate(c, c)) < 1e-9

    def test_antisymmetry_in_log_domain(self):
        other = curve((0.09, 30.5), (0.19, 32.5), (0.37, 34.2), (0.7, 36.5))
        fwd = bd_rate(BASE_CURVE, other)
        rev = bd_rate(other, BASE_CURVE)
        assert abs(math.log10(1 + fwd / 100) + math.log10(1 + rev / 100)) < 1e-6

    def test_invariant_to_shared_quality_shift(self):
        other = curve((0.09, 30.5), (0.19, 32.5), (0.37, 34.2), (0.7, 36.5))
        shifted_a = [RdPoint(p.rate, p.quality + 5.0) for p in BASE_CURVE]
        shifted_b = [RdPoint(p.rate, p.quality + 5.0) for p in other]
        assert abs(bd_rate(BASE_CURVE, other) - bd_rate(shifted_a, shifted_b)) < 1e-9

    def test_insufficient_points(self):
        with pytest.raises(DomainError, match="4 points"):
            bd_rate(BASE_CURVE[:3], BASE_CURVE)

    def test_no_quality_overlap(self):
        far = [RdPoint(p.rate, p.quality + 100.0) for p in BASE_CURVE]
        with pytest.raises(DomainError, match="overlap"):
            bd_rate(BASE_CURVE, far)

    def test_non_monotone_rate_rejected(self):
        bad = curve((0.1, 30.0), (0.1, 32.0), (0.4, 34.0), (0.8, 36.0))
        with pytest.raises(DomainError, match="increasing"):
            bd_rate(bad, BASE_CURVE)


class TestRdCsv:
    def test_round_trip(self):
        text = "rate_bpp,quality\n0.1,30\n0.2,32\n0.4,34\n0.8,36\n"
        points = read_rd_csv(text)
        assert points == BASE_CURVE

    def test_header_required(self):
        with pytest.raises(FormatError, match="header"):
            read_rd_csv("0.1,30\n")


def stats_rows(*rows):
    return [FrameStats(i, *row) for i, row in enumerate(rows)]


class TestBitAllocationReport:
    def test_single_frame_averages_equal_that_frame(self):
        report = bit_allocation_report(stats_rows((0.25, 0.0, 0.01, 20.0)))
        assert report.mean_total_bpp == 0.25
        assert report.mean_motion_bpp == 0.0
        assert report.mean_psnr == 20.0

    def test_constant_psnr_mean(self):
        rows = stats_rows(*[(0.1 * (i + 1), 0.0, 0.01, 25.0) for i in range(5)])
        assert bit_allocation_report(rows).mean_psnr == 25.0

    def test_csv_and_table_shapes(self):
        report = bit_allocation_report(
            stats_rows((0.25, 0.0, 0.01, 20.0), (0.5, 0.0, 0.02, 17.0))
        )
        csv = report.to_csv().splitlines()
        assert csv[0] == "frame_index,total_bpp,motion_bpp,mse,psnr"
        assert len(csv) == 4 and csv[-1].startswith("mean,")
        table = report.to_table().splitlines()
        assert table[0].startswith("#") and len(table) == 3

    def test_empty_input(self):
        with pytest.raises(DomainError):
            bit_allocation_report([])

    def test_delta_columns(self):
        a = stats_rows((0.25, 0.0, 0.01, 20.0), (0.5, 0.0, 0.02, 17.0))
        b = stats_rows((0.2, 0.0, 0.01, 21.0), (0.4, 0.0, 0.02, 18.0))
        lines = bit_allocation_delta_csv(a, b).splitlines()
        assert lines[0] == (
            "frame_index,a_total_bpp,b_total_bpp,delta_total_bpp,a_psnr,b_psnr,delta_psnr"
        )
        cells = lines[1].split(",")
        assert float(cells[3]) == pytest.approx(0.05)
        assert float(cells[6]) == pytest.approx(-1.0)

    def test_delta_length_mismatch(self):
        with pytest.raises(DomainError):
            bit_allocation_delta_csv(stats_rows((0.1, 0.0, 0.01, 20.0)), [])
