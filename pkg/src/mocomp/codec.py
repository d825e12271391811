"""Forward-only conditional coding pipeline.

A frame is encoded by four stride-2 convolution stages whose inputs are
conditioned on per-scale context features, quantized, rated by a
factorized Gaussian proxy, and decoded by a mirrored upsampling stack.
All convolution weights are seeded draws; nothing is trained. The five
ablation modes control which context families each side may read:

    both            local + global at encoder and decoder
    local_only      warped contexts only, on both sides
    global_only     attention contexts only, on both sides
    global_enc_only local everywhere, attention at the encoder only
    global_dec_only local everywhere, attention at the decoder only

Encoder-side attention queries are the stage activations themselves
(the frame is lifted to the scale-0 channel count by a seeded pointwise
projection); decoder-side queries are the mirrored decoder activations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import ndtr

from . import metrics
from .attention import EmbedParams, global_context
from .errors import DomainError, FormatError, ShapeError
from .motion import FlowField, PyramidConfig, build_pyramid, local_contexts
from .seeding import derived_rng
from .tensor import Tensor, concat_channels

ABLATION_MODES = ("both", "local_only", "global_only", "global_enc_only", "global_dec_only")

_MODE_FAMILIES: dict[str, frozenset[str]] = {
    "both": frozenset({"local", "global_enc", "global_dec"}),
    "local_only": frozenset({"local"}),
    "global_only": frozenset({"global_enc", "global_dec"}),
    "global_enc_only": frozenset({"local", "global_enc"}),
    "global_dec_only": frozenset({"local", "global_dec"}),
}

_LEAKY_SLOPE = np.float32(0.01)
_RATE_FLOOR = 1e-300  # keeps per-symbol bits finite in the deep Gaussian tail

STATS_CSV_HEADER = "frame_index,total_bpp,motion_bpp,mse,psnr"


@dataclass(frozen=True)
class CodecConfig:
    """Rate multiplier, ablation mode, channel plan, seed and rate-model scale."""

    rd_lambda: float = 1024.0
    mode: str = "both"
    context_channels: tuple[int, int, int] = (32, 48, 64)
    latent_channels: int = 96
    seed: int = 0
    rate_sigma: float = 8.0

    def __post_init__(self) -> None:
        if self.rd_lambda <= 0:
            raise DomainError(f"lambda must be positive, got {self.rd_lambda}")
        if self.mode not in ABLATION_MODES:
            raise DomainError(
                f"unknown ablation mode {self.mode!r}; choose from {ABLATION_MODES}"
            )
        if min(self.context_channels) < 1 or self.latent_channels < 1:
            raise DomainError("channel counts must be >= 1")
        if self.rate_sigma <= 0:
            raise DomainError(f"rate sigma must be positive, got {self.rate_sigma}")

    @property
    def families(self) -> frozenset[str]:
        return _MODE_FAMILIES[self.mode]


@dataclass(frozen=True)
class CodingContexts:
    """Per-scale conditioning inputs for one side of the codec.

    ``local`` holds the three warped context maps; ``attention_sources``
    holds the three reference feature maps used as attention key/values.
    Families excluded by the active mode are never read, so perturbing
    them cannot change any output.
    """

    local: tuple[Tensor, Tensor, Tensor] | None = None
    attention_sources: tuple[Tensor, Tensor, Tensor] | None = None


@dataclass(frozen=True)
class Latent:
    """Quantized transform coefficients plus the pre-quantization values."""

    quantized: Tensor
    pre_quant: Tensor

    def __post_init__(self) -> None:
        if self.quantized.dims != self.pre_quant.dims:
            raise ShapeError(
                f"quantized dims {self.quantized.dims} do not match pre-quant "
                f"{self.pre_quant.dims}"
            )
        if not np.all(self.quantized.data == np.round(self.quantized.data)):
            raise ValueError("quantized latent entries must be integral")


@dataclass(frozen=True)
class FrameStats:
    """Per-frame coding record for bit-allocation reports."""

    frame_index: int
    total_bpp: float
    motion_bpp: float
    mse: float
    psnr: float

    def __post_init__(self) -> None:
        if self.total_bpp < 0 or self.motion_bpp < 0 or self.mse < 0:
            raise ValueError("bpp and mse fields must be nonnegative")


def _leaky(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, _LEAKY_SLOPE * x)


def _conv_weights(seed: int, tag: str, cout: int, cin: int, k: int):
    rng = derived_rng(seed, "codec", tag)
    bound = 1.0 / math.sqrt(cin * k * k)
    w = rng.uniform(-bound, bound, (cout, cin, k, k)).astype(np.float32)
    b = rng.uniform(-bound, bound, cout).astype(np.float32)
    return w, b


def _conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1) -> np.ndarray:
    k = w.shape[2]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    out = np.einsum("oikl,ihwkl->ohw", w, windows, optimize=True)
    return out + b[:, None, None]


def _upsample2(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def _embed_params(config: CodecConfig) -> tuple[EmbedParams, EmbedParams, EmbedParams]:
    # one parameter set per scale, shared between encoder and decoder sides
    rng = derived_rng(config.seed, "codec", "embed-seeds")
    seeds = rng.integers(0, 2**32, size=3)
    return tuple(
        EmbedParams.generate(c, int(s))
        for c, s in zip(config.context_channels, seeds)
    )


def _context_parts(
    base: Tensor,
    scale: int,
    contexts: CodingContexts,
    config: CodecConfig,
    side: str,
    query: Tensor,
    embeds,
) -> Tensor:
    """Concatenate ``base`` with whatever context families the mode admits."""
    family = "global_enc" if side == "enc" else "global_dec"
    parts = [base]
    if "local" in config.families:
        if contexts.local is None:
            raise ShapeError(f"mode {config.mode!r} requires local contexts")
        parts.append(contexts.local[scale])
    if family in config.families:
        if contexts.attention_sources is None:
            raise ShapeError(f"mode {config.mode!r} requires attention sources")
        parts.append(global_context(query, contexts.attention_sources[scale], embeds[scale]))
    return concat_channels(parts)


def contextual_encode(frame: Tensor, contexts: CodingContexts, config: CodecConfig) -> Tensor:
    """Four stride-2 stages; contexts join the stage inputs at scales 0, 1, 2."""
    if frame.rank != 3 or frame.dims[0] != 3:
        raise ShapeError(f"frame must be 3 x H x W, got {frame.dims}")
    _, h, w = frame.dims
    if h % 16 or w % 16:
        raise ShapeError(f"frame spatial dims must be multiples of 16, got {h} x {w}")
    c0, c1, c2 = config.context_channels
    embeds = _embed_params(config)

    if "global_enc" in config.families:
        # lift the frame to the scale-0 channel count for its attention query
        wq = derived_rng(config.seed, "codec", "enc.query0").uniform(
            -1.0 / math.sqrt(3), 1.0 / math.sqrt(3), (c0, 3)
        ).astype(np.float32)
        query0 = Tensor(np.einsum("oi,ihw->ohw", wq, frame.data, optimize=True))
    else:
        query0 = frame

    x = _context_parts(frame, 0, contexts, config, "enc", query0, embeds).data
    w1, b1 = _conv_weights(config.seed, "enc.stage1", c1, x.shape[0], 3)
    a1 = _leaky(_conv2d(x, w1, b1, stride=2))

    x = _context_parts(Tensor(a1), 1, contexts, config, "enc", Tensor(a1), embeds).data
    w2, b2 = _conv_weights(config.seed, "enc.stage2", c2, x.shape[0], 3)
    a2 = _leaky(_conv2d(x, w2, b2, stride=2))

    x = _context_parts(Tensor(a2), 2, contexts, config, "enc", Tensor(a2), embeds).data
    w3, b3 = _conv_weights(config.seed, "enc.stage3", c2, x.shape[0], 3)
    a3 = _leaky(_conv2d(x, w3, b3, stride=2))

    w4, b4 = _conv_weights(config.seed, "enc.stage4", config.latent_channels, c2, 3)
    return Tensor(_leaky(_conv2d(a3, w4, b4, stride=2)))


def quantize(pre: Tensor) -> Tensor:
    """Elementwise rounding, halves away from zero."""
    d = pre.data
    return Tensor(np.copysign(np.floor(np.abs(d) + d.dtype.type(0.5)), d))


def contextual_decode(latent: Latent, contexts: CodingContexts, config: CodecConfig) -> Tensor:
    """Mirrored upsampling stack; output clamped to [0, 1]."""
    lat = latent.quantized
    if lat.rank != 3 or lat.dims[0] != config.latent_channels:
        raise ShapeError(
            f"latent must be {config.latent_channels} x H/16 x W/16, got {lat.dims}"
        )
    c0, c1, c2 = config.context_channels
    embeds = _embed_params(config)

    def up_stage(x: np.ndarray, tag: str, cout: int) -> np.ndarray:
        w, b = _conv_weights(config.seed, tag, cout, x.shape[0], 3)
        return _leaky(_conv2d(_upsample2(x), w, b, stride=1))

    d1 = up_stage(lat.data, "dec.stage1", c2)
    d2 = up_stage(d1, "dec.stage2", c2)
    x = _context_parts(Tensor(d2), 2, contexts, config, "dec", Tensor(d2), embeds).data
    d3 = up_stage(x, "dec.stage3", c1)
    x = _context_parts(Tensor(d3), 1, contexts, config, "dec", Tensor(d3), embeds).data
    d4 = up_stage(x, "dec.stage4", c0)
    x = _context_parts(Tensor(d4), 0, contexts, config, "dec", Tensor(d4), embeds).data
    wf, bf = _conv_weights(config.seed, "dec.final", 3, x.shape[0], 3)
    return Tensor(np.clip(_conv2d(x, wf, bf, stride=1), 0.0, 1.0))


def estimate_rate(latent: Latent, sigma: float) -> float:
    """Estimated bits of the quantized latent under a factorized Gaussian.

    Each symbol k costs -log2 of the probability mass on [k-0.5, k+0.5]
    for a zero-mean Gaussian with scale sigma. Strictly positive, and
    nondecreasing in each symbol's magnitude.
    """
    if sigma <= 0:
        raise DomainError(f"rate sigma must be positive, got {sigma}")
    k = np.abs(latent.quantized.data.astype(np.float64))
    mass = ndtr((0.5 - k) / sigma) - ndtr((-0.5 - k) / sigma)
    mass = np.maximum(mass, _RATE_FLOOR)
    return float(-np.log2(mass).sum())


def code_frame(
    frame: Tensor,
    reference_feature: Tensor,
    flow: FlowField,
    config: CodecConfig,
    frame_index: int = 0,
) -> tuple[Tensor, FrameStats]:
    """Run the full pipeline on one frame against a propagated reference feature.

    Motion bits are reported as zero: the flow is an input here, not
    coded, and the field is kept so logs stay schema-compatible.
    """
    if frame.rank != 3 or frame.dims[0] != 3:
        raise ShapeError(f"frame must be 3 x H x W, got {frame.dims}")
    _, h, w = frame.dims
    if reference_feature.rank != 3 or reference_feature.dims[1:] != (h, w):
        raise ShapeError(
            f"reference feature spatial dims {reference_feature.dims[1:]} do not "
            f"match frame {(h, w)}"
        )
    pyramid = build_pyramid(
        reference_feature, PyramidConfig(config.context_channels, config.seed)
    )
    needs_local = "local" in config.families
    contexts = CodingContexts(
        local=local_contexts(pyramid, flow) if needs_local else None,
        attention_sources=pyramid.scales,
    )
    pre = contextual_encode(frame, contexts, config)
    latent = Latent(quantize(pre), pre)
    bits = estimate_rate(latent, config.rate_sigma)
    recon = contextual_decode(latent, contexts, config)
    err = metrics.mse(frame, recon)
    stats = FrameStats(
        frame_index=frame_index,
        total_bpp=bits / (h * w),
        motion_bpp=0.0,
        mse=err,
        psnr=metrics.psnr(frame, recon, peak=1.0),
    )
    return recon, stats


def _fmt(x: float) -> str:
    return format(x, ".6g")


def stats_to_csv(stats) -> str:
    """Serialize frame records; 6 significant digits, dot decimal separator."""
    lines = [STATS_CSV_HEADER]
    for s in stats:
        lines.append(
            f"{s.frame_index},{_fmt(s.total_bpp)},{_fmt(s.motion_bpp)},"
            f"{_fmt(s.mse)},{_fmt(s.psnr)}"
        )
    return "\n".join(lines) + "\n"


def parse_stats_csv(text: str) -> list[FrameStats]:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].replace(" ", "") != STATS_CSV_HEADER:
        raise FormatError(f"stats CSV must start with header {STATS_CSV_HEADER!r}")
    records = []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != 5:
            raise FormatError(f"malformed stats row {ln!r}")
        try:
            records.append(
                FrameStats(
                    frame_index=int(cells[0]),
                    total_bpp=float(cells[1]),
                    motion_bpp=float(cells[2]),
                    mse=float(cells[3]),
                    psnr=float(cells[4]),
                )
            )
        except ValueError as exc:
            raise FormatError(f"non-numeric stats row {ln!r}") from exc
    return records
