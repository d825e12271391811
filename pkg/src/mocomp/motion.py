"""Flow-based local compensation and its supporting machinery.

Bilinear backward warping with analytic gradients, multi-scale feature
pyramids, flow rescaling, synthetic flow generators, a full-search SAD
block matcher for demo content, and file I/O for flow fields and 8-bit
PGM/PPM frames.

Warp conventions, shared with the compiled kernels: sampling clamps to
the frame border, and the flow gradient at integer lattice points takes
the sub-gradient of the right/down interpolation cell.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import kernels
from .errors import DomainError, FormatError, ShapeError
from .seeding import derived_rng
from .tensor import Tensor

DEFAULT_FLOW_CAP = 512.0  # pixels, per displacement component

FLO_MAGIC = 202021.25


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement field, (H, W, 2) with u before v.

    Stored as float32 for forward use; float64 is accepted so the warp
    gradients can be verified against finite differences at full
    precision. Component magnitudes beyond ``magnitude_cap`` are
    rejected outright.
    """

    data: np.ndarray
    magnitude_cap: float = DEFAULT_FLOW_CAP

    def __post_init__(self) -> None:
        arr = self.data
        if not isinstance(arr, np.ndarray) or arr.ndim != 3 or arr.shape[2] != 2:
            raise ShapeError("flow field must be an (H, W, 2) array")
        if arr.dtype not in (np.float32, np.float64):
            raise TypeError(f"flow dtype must be float32 or float64, got {arr.dtype}")
        if min(arr.shape[:2]) < 1:
            raise ShapeError(f"flow extents must be >= 1, got {arr.shape[:2]}")
        if not np.isfinite(arr).all():
            raise ValueError("flow entries must be finite")
        if np.abs(arr).max() > self.magnitude_cap:
            raise DomainError(
                f"flow magnitude {np.abs(arr).max():.6g} exceeds cap "
                f"{self.magnitude_cap:.6g}"
            )
        if not arr.flags.c_contiguous:
            object.__setattr__(self, "data", np.ascontiguousarray(arr))

    @classmethod
    def zeros(cls, height: int, width: int, dtype=np.float32) -> "FlowField":
        return cls(np.zeros((height, width, 2), dtype=dtype))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def u(self) -> np.ndarray:
        return self.data[:, :, 0]

    @property
    def v(self) -> np.ndarray:
        return self.data[:, :, 1]


@dataclass(frozen=True)
class PyramidConfig:
    """Channel plan and weight seed for feature pyramid extraction."""

    channels: tuple[int, int, int] = (32, 48, 64)
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.channels) < 1:
            raise ShapeError(f"channel counts must be >= 1, got {self.channels}")


@dataclass(frozen=True)
class FeaturePyramid:
    """Feature maps at full, half and quarter resolution."""

    scale0: Tensor
    scale1: Tensor
    scale2: Tensor

    @property
    def scales(self) -> tuple[Tensor, Tensor, Tensor]:
        return (self.scale0, self.scale1, self.scale2)


def bilinear_warp(feature: Tensor, flow: FlowField) -> Tensor:
    """Backward warp: output(x, y) samples the feature at (x+u, y+v)."""
    if feature.rank != 3:
        raise ShapeError(f"feature must be C x H x W, got {feature.dims}")
    if feature.dims[1:] != (flow.height, flow.width):
        raise ShapeError(
            f"feature spatial dims {feature.dims[1:]} do not match flow "
            f"{(flow.height, flow.width)}"
        )
    return Tensor(kernels.warp_forward(feature.data, flow.data))


def bilinear_warp_backward(
    feature: Tensor, flow: FlowField, d_out: Tensor
) -> tuple[Tensor, Tensor]:
    """Analytic gradients of the bilinear sampler.

    Returns (d_feature, d_flow); d_flow is an (H, W, 2) tensor rather
    than a FlowField since gradients are not displacement fields.
    """
    if d_out.dims != feature.dims:
        raise ShapeError(
            f"upstream gradient dims {d_out.dims} do not match feature {feature.dims}"
        )
    d_feat, d_flow = kernels.warp_backward(feature.data, flow.data, d_out.data)
    return Tensor(d_feat), Tensor(d_flow)


def _avgpool2_ceil(x: np.ndarray) -> np.ndarray:
    """2x2 average pooling on the trailing two axes, ceiling extents.

    Ragged edge cells average over the elements actually present, so
    spatially constant inputs stay exactly constant.
    """
    h, w = x.shape[-2], x.shape[-1]
    idx_h = np.arange(0, h, 2)
    idx_w = np.arange(0, w, 2)
    summed = np.add.reduceat(np.add.reduceat(x, idx_h, axis=-2), idx_w, axis=-1)
    counts_h = np.minimum(2, h - idx_h)
    counts_w = np.minimum(2, w - idx_w)
    counts = (counts_h[:, None] * counts_w[None, :]).astype(x.dtype)
    return summed / counts


def _project_channels(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    # pointwise (1x1) channel projection
    return np.einsum("oi,ihw->ohw", weight, x, optimize=True)


def _projection_weight(cout: int, cin: int, seed: int, tag: str) -> np.ndarray:
    rng = derived_rng(seed, "pyramid", tag)
    bound = 1.0 / math.sqrt(cin)
    return rng.uniform(-bound, bound, (cout, cin)).astype(np.float32)


def build_pyramid(propagated: Tensor, config: PyramidConfig) -> FeaturePyramid:
    """Extract three scales: project, then alternate 2x2 mean pooling and projection."""
    if propagated.rank != 3:
        raise ShapeError(f"propagated feature must be C x H x W, got {propagated.dims}")
    cin, h, w = propagated.dims
    if h < 4 or w < 4:
        raise ShapeError(f"pyramid needs spatial extents >= 4, got {h} x {w}")
    c0, c1, c2 = config.channels
    x = propagated.data.astype(np.float32, copy=False)
    s0 = _project_channels(x, _projection_weight(c0, cin, config.seed, "scale0"))
    p1 = _avgpool2_ceil(s0)
    s1 = _project_channels(p1, _projection_weight(c1, c0, config.seed, "scale1"))
    p2 = _avgpool2_ceil(s1)
    s2 = _project_channels(p2, _projection_weight(c2, c1, config.seed, "scale2"))
    return FeaturePyramid(Tensor(s0), Tensor(s1), Tensor(s2))


def downsample_flow(flow: FlowField, factor: int) -> FlowField:
    """Rescale a flow to a coarser grid: mean-pool displacements, divide by factor.

    Factor 4 is two successive factor-2 passes, which coincides with a
    single 4x4 pooling whenever the extents divide evenly.
    """
    if factor not in (2, 4):
        raise DomainError(f"downsample factor must be 2 or 4, got {factor}")
    data = flow.data
    passes = 1 if factor == 2 else 2
    for _ in range(passes):
        pooled = np.stack(
            [_avgpool2_ceil(data[:, :, 0]), _avgpool2_ceil(data[:, :, 1])], axis=-1
        )
        data = pooled / data.dtype.type(2.0)
    return FlowField(np.ascontiguousarray(data), magnitude_cap=flow.magnitude_cap)


def local_contexts(
    pyramid: FeaturePyramid, flow: FlowField
) -> tuple[Tensor, Tensor, Tensor]:
    """Warp each pyramid scale with the correspondingly rescaled flow."""
    if pyramid.scale0.dims[1:] != (flow.height, flow.width):
        raise ShapeError(
            f"flow {(flow.height, flow.width)} does not match pyramid base "
            f"{pyramid.scale0.dims[1:]}"
        )
    l0 = bilinear_warp(pyramid.scale0, flow)
    l1 = bilinear_warp(pyramid.scale1, downsample_flow(flow, 2))
    l2 = bilinear_warp(pyramid.scale2, downsample_flow(flow, 4))
    return (l0, l1, l2)


def translation_flow(u: float, v: float, width: int, height: int) -> FlowField:
    data = np.empty((height, width, 2), dtype=np.float32)
    data[:, :, 0] = u
    data[:, :, 1] = v
    return FlowField(data)


def rotation_flow(angle: float, width: int, height: int) -> FlowField:
    """Displacement field of a rigid rotation about the frame center."""
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    xg, yg = np.meshgrid(np.arange(width, dtype=np.float64) - cx,
                         np.arange(height, dtype=np.float64) - cy)
    cos_a = math.cos(angle)
    sin_a = math.sin(angle)
    du = (cos_a - 1.0) * xg - sin_a * yg
    dv = sin_a * xg + (cos_a - 1.0) * yg
    return FlowField(np.stack([du, dv], axis=-1).astype(np.float32))


def zoom_flow(scale: float, width: int, height: int) -> FlowField:
    """Radial displacement field (scale - 1) * (p - center)."""
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    xg, yg = np.meshgrid(np.arange(width, dtype=np.float64) - cx,
                         np.arange(height, dtype=np.float64) - cy)
    k = scale - 1.0
    return FlowField(np.stack([k * xg, k * yg], axis=-1).astype(np.float32))


def synth_flow(kind: str, params: Mapping[str, float], width: int, height: int) -> FlowField:
    """Dispatching front end for the synthetic generators above."""
    for value in params.values():
        if not math.isfinite(value):
            raise DomainError(f"synthetic flow parameters must be finite, got {params}")
    if kind == "translation":
        return translation_flow(params.get("u", 0.0), params.get("v", 0.0), width, height)
    if kind == "rotation":
        return rotation_flow(params.get("angle", 0.0), width, height)
    if kind == "zoom":
        return zoom_flow(params.get("scale", 1.0), width, height)
    raise DomainError(f"unknown synthetic flow kind {kind!r}")


def block_match(
    reference: Tensor, current: Tensor, block: int, search_range: int
) -> FlowField:
    """Full-search SAD block matching between two grayscale frames.

    Each block of the current frame is matched against the reference;
    the winning displacement points from a current-frame pixel to its
    reference sample, so warping the reference with the result
    approximates the current frame. Ties break toward the smallest
    |u|+|v|, then the smallest v, then the smallest u. Candidates that
    would leave the reference are not searched.
    """
    if reference.rank != 3 or reference.dims[0] != 1:
        raise ShapeError(f"reference must be 1 x H x W grayscale, got {reference.dims}")
    if current.dims != reference.dims:
        raise ShapeError(
            f"current frame dims {current.dims} do not match reference {reference.dims}"
        )
    if block < 4:
        raise DomainError(f"block size must be >= 4, got {block}")
    if search_range < 1:
        raise DomainError(f"search range must be >= 1, got {search_range}")
    _, h, w = reference.dims
    if h < block or w < block:
        raise ShapeError(
            f"frame {h} x {w} is smaller than one {block} x {block} block"
        )
    flow = kernels.block_match(
        reference.data[0], current.data[0], block, search_range
    )
    return FlowField(flow)


def write_flow(flow: FlowField) -> bytes:
    """Serialize to the interleaved little-endian flow format."""
    header = struct.pack("<fii", FLO_MAGIC, flow.width, flow.height)
    return header + np.ascontiguousarray(flow.data, dtype="<f4").tobytes()


def read_flow(data: bytes) -> FlowField:
    """Parse a flow file; exact inverse of :func:`write_flow`."""
    if len(data) < 12:
        raise FormatError("flow file truncated before header end")
    magic, width, height = struct.unpack("<fii", data[:12])
    if magic != np.float32(FLO_MAGIC):
        raise FormatError(f"bad flow magic {magic!r}")
    if width <= 0 or height <= 0:
        raise FormatError(f"flow dimensions must be positive, got {width} x {height}")
    expected = 12 + width * height * 2 * 4
    if len(data) != expected:
        raise FormatError(
            f"flow payload length mismatch: header promises {expected - 12} bytes, "
            f"found {len(data) - 12}"
        )
    arr = np.frombuffer(data, dtype="<f4", count=width * height * 2, offset=12)
    arr = arr.reshape(height, width, 2).astype(np.float32, copy=True)
    try:
        return FlowField(arr)
    except (ValueError, DomainError) as exc:
        raise FormatError(f"flow payload invalid: {exc}") from exc


def load_flow(path) -> FlowField:
    with open(path, "rb") as fh:
        return read_flow(fh.read())


def save_flow(flow: FlowField, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_flow(flow))


def _read_header_token(data: bytes, pos: int) -> tuple[bytes, int]:
    # skip whitespace and '#' comment lines, then read one token
    n = len(data)
    while pos < n:
        ch = data[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < n and data[pos : pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("image header ended unexpectedly")
    return data[start:pos], pos


def read_image(data: bytes) -> Tensor:
    """Parse a binary PGM (P5) or PPM (P6) frame into a [0, 1] float tensor."""
    magic, pos = _read_header_token(data, 0)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported image magic {magic!r}, expected P5 or P6")
    fields = []
    for _ in range(3):
        token, pos = _read_header_token(data, pos)
        try:
            fields.append(int(token))
        except ValueError as exc:
            raise FormatError(f"non-numeric image header token {token!r}") from exc
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(f"image dimensions must be positive, got {width} x {height}")
    if maxval != 255:
        raise FormatError(f"only 8-bit images with maxval 255 are supported, got {maxval}")
    pos += 1  # single whitespace byte after the maxval token
    channels = 1 if magic == b"P5" else 3
    count = width * height * channels
    if len(data) - pos != count:
        raise FormatError(
            f"image payload length mismatch: expected {count} bytes, "
            f"found {len(data) - pos}"
        )
    arr = np.frombuffer(data, dtype=np.uint8, count=count, offset=pos)
    if channels == 1:
        planes = arr.reshape(1, height, width)
    else:
        planes = arr.reshape(height, width, 3).transpose(2, 0, 1)
    return Tensor(np.ascontiguousarray(planes).astype(np.float32) / np.float32(255.0))


def write_image(t: Tensor) -> bytes:
    """Serialize a [0, 1] float tensor as binary PGM/PPM, rounding to 8 bits."""
    if t.rank != 3 or t.dims[0] not in (1, 3):
        raise ShapeError(f"image tensor must be 1 or 3 x H x W, got {t.dims}")
    channels, height, width = t.dims
    scaled = np.clip(t.data.astype(np.float64), 0.0, 1.0) * 255.0
    bytes_ = np.round(scaled).astype(np.uint8)
    magic = b"P5" if channels == 1 else b"P6"
    header = magic + b"\n" + f"{width} {height}\n255\n".encode("ascii")
    if channels == 1:
        payload = bytes_[0].tobytes()
    else:
        payload = np.ascontiguousarray(bytes_.transpose(1, 2, 0)).tobytes()
    return header + payload


def load_image(path) -> Tensor:
    with open(path, "rb") as fh:
        return read_image(fh.read())


def save_image(t: Tensor, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_image(t))
