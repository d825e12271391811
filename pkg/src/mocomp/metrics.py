"""Distortion metrics, rate-distortion loss, BD-rate, and report tooling.

PSNR of identical inputs returns math.inf as a distinguished sentinel so
losslessness stays distinguishable; report layers may cap it for
display. MS-SSIM follows the usual five-scale construction with an
11-tap Gaussian window (sigma 1.5), scale weights (0.0448, 0.2856,
0.3001, 0.2363, 0.1333) and stabilizers K1=0.01, K2=0.03; color images
are scored per channel and averaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.ndimage import correlate1d

from .errors import DomainError, FormatError, ShapeError
from .tensor import Tensor

MSE_LAMBDA_GRID = (256.0, 512.0, 1024.0, 2048.0)
MSSSIM_LAMBDA_DIVISOR = 50.0

_MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_MSSSIM_SCALES = 5
_MSSSIM_WINDOW = 11
_MSSSIM_SIGMA = 1.5
_MSSSIM_K1 = 0.01
_MSSSIM_K2 = 0.03
MSSSIM_MIN_EXTENT = _MSSSIM_WINDOW * 2 ** (_MSSSIM_SCALES - 1)  # 176

_BD_SAMPLES = 1000


@dataclass(frozen=True)
class RdPoint:
    """One operating point of a rate-distortion curve."""

    rate: float  # bits per pixel
    quality: float  # PSNR in dB or MS-SSIM score

    def __post_init__(self) -> None:
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise DomainError(f"rate must be positive and finite, got {self.rate}")
        if not math.isfinite(self.quality):
            raise DomainError(f"quality must be finite, got {self.quality}")


def mse(a: Tensor, b: Tensor) -> float:
    """Mean squared difference, accumulated in float64."""
    if a.dims != b.dims:
        raise ShapeError(f"mse operands differ in shape: {a.dims} vs {b.dims}")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(a: Tensor, b: Tensor, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; math.inf when the inputs match."""
    if peak <= 0:
        raise DomainError(f"peak must be positive, got {peak}")
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def _gaussian_window(taps: int, sigma: float) -> np.ndarray:
    offsets = np.arange(taps, dtype=np.float64) - (taps - 1) / 2.0
    w = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return w / w.sum()


def _local_means(plane: np.ndarray, window: np.ndarray) -> np.ndarray:
    half = window.size // 2
    filtered = correlate1d(plane, window, axis=0, mode="constant")
    filtered = correlate1d(filtered, window, axis=1, mode="constant")
    return filtered[half:-half, half:-half]  # interior only: a valid-mode window


def _downsample2(plane: np.ndarray) -> np.ndarray:
    h2, w2 = plane.shape[0] // 2, plane.shape[1] // 2
    trimmed = plane[: 2 * h2, : 2 * w2]
    return trimmed.reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def _ms_ssim_plane(a: np.ndarray, b: np.ndarray, peak: float) -> float:
    window = _gaussian_window(_MSSSIM_WINDOW, _MSSSIM_SIGMA)
    c1 = (_MSSSIM_K1 * peak) ** 2
    c2 = (_MSSSIM_K2 * peak) ** 2
    score = 1.0
    for scale in range(_MSSSIM_SCALES):
        mu_a = _local_means(a, window)
        mu_b = _local_means(b, window)
        var_a = _local_means(a * a, window) - mu_a * mu_a
        var_b = _local_means(b * b, window) - mu_b * mu_b
        cov = _local_means(a * b, window) - mu_a * mu_b
        cs = (2.0 * cov + c2) / (var_a + var_b + c2)
        weight = _MSSSIM_WEIGHTS[scale]
        if scale < _MSSSIM_SCALES - 1:
            score *= max(float(np.mean(cs)), 0.0) ** weight
            a = _downsample2(a)
            b = _downsample2(b)
        else:
            luminance = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
            score *= max(float(np.mean(luminance * cs)), 0.0) ** weight
    return score


def ms_ssim(a: Tensor, b: Tensor, peak: float = 1.0) -> float:
    """Five-scale structural similarity; symmetric in its arguments."""
    if a.dims != b.dims:
        raise ShapeError(f"ms_ssim operands differ in shape: {a.dims} vs {b.dims}")
    if a.rank != 3 or a.dims[0] not in (1, 3):
        raise ShapeError(f"ms_ssim expects 1 or 3 x H x W tensors, got {a.dims}")
    if min(a.dims[1], a.dims[2]) < MSSSIM_MIN_EXTENT:
        raise DomainError(
            f"ms_ssim needs min(H, W) >= {MSSSIM_MIN_EXTENT} for {_MSSSIM_SCALES} "
            f"scales with an {_MSSSIM_WINDOW}-tap window, got {a.dims[1]} x {a.dims[2]}"
        )
    scores = [
        _ms_ssim_plane(
            a.data[c].astype(np.float64), b.data[c].astype(np.float64), peak
        )
        for c in range(a.dims[0])
    ]
    return float(np.mean(scores))


def rd_loss(rate_bpp: float, distortion: float, rd_lambda: float) -> float:
    """Scalarized objective: rate plus lambda-weighted distortion."""
    if rd_lambda <= 0:
        raise DomainError(f"lambda must be positive, got {rd_lambda}")
    if not (math.isfinite(rate_bpp) and math.isfinite(distortion)):
        raise DomainError("rate and distortion must be finite")
    return rate_bpp + rd_lambda * distortion


def lambda_grid(metric: str = "mse") -> tuple[float, ...]:
    """Default lambda sweep; the MS-SSIM variant divides the grid by 50."""
    if metric == "mse":
        return MSE_LAMBDA_GRID
    if metric == "ms_ssim":
        return tuple(v / MSSSIM_LAMBDA_DIVISOR for v in MSE_LAMBDA_GRID)
    raise DomainError(f"unknown metric {metric!r}")


def _validate_curve(points: Sequence[RdPoint], label: str) -> None:
    if len(points) < 4:
        raise DomainError(f"{label} curve needs >= 4 points, got {len(points)}")
    for prev, cur in zip(points, points[1:]):
        if cur.rate <= prev.rate:
            raise DomainError(f"{label} curve rates must be strictly increasing")
        if cur.quality <= prev.quality:
            raise DomainError(
                f"{label} curve qualities must be strictly increasing for "
                f"interpolation"
            )


def bd_rate(anchor: Sequence[RdPoint], test: Sequence[RdPoint]) -> float:
    """Average rate difference between two RD curves, in percent.

    Natural cubic splines of log10(rate) against quality are integrated
    by the trapezoid rule over the overlapping quality interval;
    negative results mean the test curve saves bits at equal quality.
    """
    _validate_curve(anchor, "anchor")
    _validate_curve(test, "test")
    lo = max(anchor[0].quality, test[0].quality)
    hi = min(anchor[-1].quality, test[-1].quality)
    if hi <= lo:
        raise DomainError(
            f"quality ranges do not overlap: anchor "
            f"[{anchor[0].quality:.6g}, {anchor[-1].quality:.6g}] vs test "
            f"[{test[0].quality:.6g}, {test[-1].quality:.6g}]"
        )
    spline_anchor = CubicSpline(
        [p.quality for p in anchor], [math.log10(p.rate) for p in anchor],
        bc_type="natural",
    )
    spline_test = CubicSpline(
        [p.quality for p in test], [math.log10(p.rate) for p in test],
        bc_type="natural",
    )
    qs = np.linspace(lo, hi, _BD_SAMPLES)
    delta = np.trapezoid(spline_test(qs) - spline_anchor(qs), qs) / (hi - lo)
    return float((10.0**delta - 1.0) * 100.0)


def read_rd_csv(text: str) -> list[RdPoint]:
    """Parse an RD curve CSV with a required ``rate_bpp,quality`` header."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].replace(" ", "") != "rate_bpp,quality":
        raise FormatError("RD curve CSV must start with header 'rate_bpp,quality'")
    points = []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != 2:
            raise FormatError(f"malformed RD curve row {ln!r}")
        try:
            points.append(RdPoint(float(cells[0]), float(cells[1])))
        except ValueError as exc:
            raise FormatError(f"non-numeric RD curve row {ln!r}") from exc
    return points


def _fmt(x: float) -> str:
    return format(x, ".6g")


@dataclass(frozen=True)
class BitAllocationReport:
    """Per-frame rate and quality series with their averages."""

    frames: tuple
    mean_total_bpp: float
    mean_motion_bpp: float
    mean_psnr: float

    def to_csv(self) -> str:
        lines = ["frame_index,total_bpp,motion_bpp,mse,psnr"]
        for s in self.frames:
            lines.append(
                f"{s.frame_index},{_fmt(s.total_bpp)},{_fmt(s.motion_bpp)},"
                f"{_fmt(s.mse)},{_fmt(s.psnr)}"
            )
        lines.append(
            f"mean,{_fmt(self.mean_total_bpp)},{_fmt(self.mean_motion_bpp)},,"
            f"{_fmt(self.mean_psnr)}"
        )
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        """Whitespace-delimited table suitable for gnuplot."""
        lines = ["# frame_index total_bpp motion_bpp mse psnr"]
        for s in self.frames:
            lines.append(
                f"{s.frame_index} {_fmt(s.total_bpp)} {_fmt(s.motion_bpp)} "
                f"{_fmt(s.mse)} {_fmt(s.psnr)}"
            )
        return "\n".join(lines) + "\n"


def bit_allocation_report(stats: Iterable) -> BitAllocationReport:
    """Aggregate per-frame coding records (any FrameStats-shaped objects)."""
    frames = tuple(stats)
    if not frames:
        raise DomainError("bit allocation report needs at least one frame record")
    return BitAllocationReport(
        frames=frames,
        mean_total_bpp=float(np.mean([s.total_bpp for s in frames])),
        mean_motion_bpp=float(np.mean([s.motion_bpp for s in frames])),
        mean_psnr=float(np.mean([s.psnr for s in frames])),
    )


def bit_allocation_delta_csv(a: Iterable, b: Iterable) -> str:
    """Side-by-side per-frame comparison of two logs with delta columns (a - b)."""
    a = list(a)
    b = list(b)
    if len(a) != len(b):
        raise DomainError(
            f"cannot compare logs of different length: {len(a)} vs {len(b)} frames"
        )
    if not a:
        raise DomainError("bit allocation comparison needs at least one frame record")
    lines = [
        "frame_index,a_total_bpp,b_total_bpp,delta_total_bpp,a_psnr,b_psnr,delta_psnr"
    ]
    for sa, sb in zip(a, b):
        lines.append(
            f"{sa.frame_index},{_fmt(sa.total_bpp)},{_fmt(sb.total_bpp)},"
            f"{_fmt(sa.total_bpp - sb.total_bpp)},{_fmt(sa.psnr)},{_fmt(sb.psnr)},"
            f"{_fmt(sa.psnr - sb.psnr)}"
        )
    return "\n".join(lines) + "\n"
