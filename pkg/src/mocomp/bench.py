"""Empirical check of the attention kernels' complexity claims.

Times the quadratic and factorized kernels across token counts on
identical seeded inputs, then fits log-log slopes: the quadratic kernel
should land near slope 2, the factorized one near slope 1. Timing runs
are forced single-threaded (BLAS pools pinned to one thread) because a
size-dependent thread ramp would bend the slopes; the harness refuses
to fit slopes when that guarantee is absent.
"""

from __future__ import annotations

import statistics
import time
import tracemalloc
from contextlib import nullcontext
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import kernels
from .attention import (
    AttentionInputs,
    efficient_cross_attention,
    vanilla_cross_attention,
)
from .errors import DomainError
from .tensor import Tensor

DEFAULT_TOKEN_COUNTS = (256, 512, 1024, 2048, 4096, 8192, 16384)
DEFAULT_CHANNELS = 64
DEFAULT_REPS = 9
DEFAULT_WARMUP = 2
DEFAULT_MEM_BUDGET = 2 * 1024**3  # bytes for the vanilla L x L float32 buffer
MIN_REPS = 5
NOISE_R2_THRESHOLD = 0.95

KERNELS = ("vanilla", "efficient")

# test hook signature: (kernel, tokens, channels) -> seconds
SampleHook = Callable[[str, int, int], float]


@dataclass(frozen=True)
class BenchSample:
    kernel: str
    tokens: int
    channels: int
    median_ns: int
    reps: int
    warmup: int
    skipped: bool = False
    peak_bytes: int = 0


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float
    points: int

    @property
    def noisy(self) -> bool:
        return self.r_squared < NOISE_R2_THRESHOLD


@dataclass(frozen=True)
class BenchReport:
    samples: tuple[BenchSample, ...]
    slopes: dict[str, SlopeFit] = field(default_factory=dict)
    single_threaded: bool = False
    backend: str = kernels.BACKEND
    seed: int = 0
    mem_budget: int = DEFAULT_MEM_BUDGET


def fit_loglog_slope(points: Sequence[tuple[float, float]]) -> tuple[float, float, float]:
    """Ordinary least squares on (ln x, ln t); returns (slope, intercept, r^2)."""
    if len(points) < 3:
        raise DomainError(f"slope fit needs >= 3 points, got {len(points)}")
    xs = np.array([p[0] for p in points], dtype=np.float64)
    ts = np.array([p[1] for p in points], dtype=np.float64)
    if np.any(xs <= 0) or np.any(ts <= 0):
        raise DomainError("slope fit needs strictly positive coordinates")
    lx = np.log(xs)
    lt = np.log(ts)
    lx_c = lx - lx.mean()
    var = float(np.dot(lx_c, lx_c))
    if var == 0.0:
        raise DomainError("slope fit needs at least two distinct x values")
    slope = float(np.dot(lx_c, lt)) / var
    intercept = float(lt.mean() - slope * lx.mean())
    residuals = lt - (slope * lx + intercept)
    ss_res = float(np.dot(residuals, residuals))
    lt_c = lt - lt.mean()
    ss_tot = float(np.dot(lt_c, lt_c))
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return slope, intercept, r_squared


def measure_peak_bytes(fn: Callable[[], object]) -> int:
    """Peak traced allocation while running ``fn`` once (numpy buffers included)."""
    was_tracing = tracemalloc.is_tracing()
    if not was_tracing:
        tracemalloc.start()
    tracemalloc.reset_peak()
    _, before_peak = tracemalloc.get_traced_memory()
    fn()
    _, peak = tracemalloc.get_traced_memory()
    if not was_tracing:
        tracemalloc.stop()
    return max(0, peak - before_peak)


def _median_time_ns(fn: Callable[[], object], reps: int, warmup: int) -> int:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        t1 = time.perf_counter_ns()
        samples.append(t1 - t0)
    return int(statistics.median(samples))


def _make_inputs(seed: int, tokens: int, channels: int) -> AttentionInputs:
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, tokens]))
    q = rng.standard_normal((tokens, channels), dtype=np.float32)
    kv = rng.standard_normal((tokens, channels), dtype=np.float32)
    return AttentionInputs(Tensor(q), Tensor(kv))


def _kernel_fn(kernel: str, inputs: AttentionInputs) -> Callable[[], object]:
    if kernel == "vanilla":
        return lambda: vanilla_cross_attention(inputs)
    return lambda: efficient_cross_attention(inputs)


def fit_report_slopes(report: BenchReport) -> dict[str, SlopeFit]:
    """Slope per kernel over its non-skipped samples; single-thread runs only."""
    if not report.single_threaded:
        raise DomainError(
            "refusing to fit slopes: timing was not single-threaded"
        )
    slopes: dict[str, SlopeFit] = {}
    for kernel in KERNELS:
        pts = [
            (float(s.tokens), s.median_ns / 1e9)
            for s in report.samples
            if s.kernel == kernel and not s.skipped
        ]
        if len(pts) >= 3:
            slope, intercept, r2 = fit_loglog_slope(pts)
            slopes[kernel] = SlopeFit(slope, intercept, r2, len(pts))
    return slopes


def run_attention_scaling(
    token_counts: Sequence[int] = DEFAULT_TOKEN_COUNTS,
    channels: int = DEFAULT_CHANNELS,
    reps: int = DEFAULT_REPS,
    warmup: int = DEFAULT_WARMUP,
    mem_budget: int = DEFAULT_MEM_BUDGET,
    seed: int = 2024,
    sample_hook: SampleHook | None = None,
    measure_memory: bool = True,
    enforce_single_thread: bool = True,
) -> BenchReport:
    """Time both kernels across token counts and fit their scaling slopes.

    Vanilla points whose L x L float32 similarity buffer would exceed
    ``mem_budget`` are recorded as skipped, not failed.
    """
    token_counts = tuple(int(v) for v in token_counts)
    if reps < MIN_REPS:
        raise DomainError(f"need at least {MIN_REPS} repetitions, got {reps}")
    if len(set(token_counts)) < 4 or list(token_counts) != sorted(set(token_counts)):
        raise DomainError(
            f"token counts must be >= 4 strictly increasing values, got {token_counts}"
        )
    samples: list[BenchSample] = []
    limiter = threadpool_limits(limits=1) if enforce_single_thread else nullcontext()
    with limiter:
        for tokens in token_counts:
            inputs = None
            for kernel in KERNELS:
                if kernel == "vanilla" and tokens * tokens * 4 > mem_budget:
                    samples.append(
                        BenchSample(kernel, tokens, channels, 0, reps, warmup, skipped=True)
                    )
                    continue
                if sample_hook is not None:
                    seconds = sample_hook(kernel, tokens, channels)
                    samples.append(
                        BenchSample(kernel, tokens, channels, int(seconds * 1e9), reps, warmup)
                    )
                    continue
                if inputs is None:
                    inputs = _make_inputs(seed, tokens, channels)
                fn = _kernel_fn(kernel, inputs)
                median_ns = _median_time_ns(fn, reps, warmup)
                peak = measure_peak_bytes(fn) if measure_memory else 0
                samples.append(
                    BenchSample(kernel, tokens, channels, median_ns, reps, warmup,
                                peak_bytes=peak)
                )
    report = BenchReport(
        samples=tuple(samples),
        single_threaded=enforce_single_thread,
        backend=kernels.BACKEND,
        seed=seed,
        mem_budget=mem_budget,
    )
    if report.single_threaded:
        report.slopes.update(fit_report_slopes(report))
    return report


def run_channel_scaling(
    channel_counts: Sequence[int] = (256, 512, 1024, 2048),
    tokens: int = 2048,
    reps: int = DEFAULT_REPS,
    warmup: int = DEFAULT_WARMUP,
    seed: int = 2024,
    sample_hook: SampleHook | None = None,
) -> tuple[list[BenchSample], SlopeFit]:
    """Sweep the channel count at fixed L for the factorized kernel.

    Its cost is dominated by the C x C mixing product, so doubling C
    should roughly quadruple the time (slope about 2 against C).
    """
    channel_counts = tuple(int(v) for v in channel_counts)
    if len(set(channel_counts)) < 3 or list(channel_counts) != sorted(set(channel_counts)):
        raise DomainError(
            f"channel counts must be >= 3 strictly increasing values, got {channel_counts}"
        )
    samples: list[BenchSample] = []
    with threadpool_limits(limits=1):
        for channels in channel_counts:
            if sample_hook is not None:
                seconds = sample_hook("efficient", tokens, channels)
                median_ns = int(seconds * 1e9)
            else:
                inputs = _make_inputs(seed, tokens, channels)
                median_ns = _median_time_ns(
                    _kernel_fn("efficient", inputs), reps, warmup
                )
            samples.append(
                BenchSample("efficient", tokens, channels, median_ns, reps, warmup)
            )
    slope, intercept, r2 = fit_loglog_slope(
        [(float(s.channels), s.median_ns / 1e9) for s in samples]
    )
    return samples, SlopeFit(slope, intercept, r2, len(samples))


def report_to_csv(report: BenchReport) -> str:
    lines = ["kernel,L,C,median_ns,reps"]
    for s in report.samples:
        if not s.skipped:
            lines.append(f"{s.kernel},{s.tokens},{s.channels},{s.median_ns},{s.reps}")
    return "\n".join(lines) + "\n"


def report_summary(report: BenchReport) -> dict:
    return {
        "backend": report.backend,
        "single_threaded": report.single_threaded,
        "seed": report.seed,
        "mem_budget_bytes": report.mem_budget,
        "slopes": {
            name: {
                "slope": fit.slope,
                "intercept": fit.intercept,
                "r_squared": fit.r_squared,
                "noisy": fit.noisy,
                "points": fit.points,
            }
            for name, fit in report.slopes.items()
        },
        "skipped": [
            {"kernel": s.kernel, "L": s.tokens, "reason": "memory budget"}
            for s in report.samples
            if s.skipped
        ],
        "peak_bytes": {
            f"{s.kernel}@{s.tokens}": s.peak_bytes
            for s in report.samples
            if not s.skipped and s.peak_bytes
        },
    }
