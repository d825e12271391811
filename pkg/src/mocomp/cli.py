"""Batch command-line front end.

Subcommands wire the file formats (tensor containers, flow files,
PGM/PPM frames, CSV tables) to the library operations. Exit codes:
0 success, 1 verification failure (gradcheck), 2 format or I/O error,
3 shape error, 4 resource cap exceeded, 5 domain error. All numeric
output uses 6 significant digits with a dot decimal separator.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import codec, kernels, metrics, motion
from .attention import (
    AttentionInputs,
    DEFAULT_SIMILARITY_CAP,
    efficient_attention_backward,
    efficient_cross_attention,
    materialize_efficient_similarity,
    vanilla_cross_attention,
)
from .errors import DomainError, EvaluationError, FormatError, ResourceLimitError, ShapeError
from .tensor import (
    Tensor,
    finite_difference_gradient,
    load_tensor,
    matmul,
    matmul_backward,
    save_tensor,
    softmax_rows,
    softmax_rows_backward,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_FORMAT = 2
EXIT_SHAPE = 3
EXIT_RESOURCE = 4
EXIT_DOMAIN = 5

PAD_MULTIPLE = 64


def _fmt(x: float) -> str:
    return format(x, ".6g")


def _require_inputs(*paths: str) -> None:
    for p in paths:
        if not Path(p).is_file():
            raise FormatError(f"input file not found: {p}")


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise FormatError(f"expected a comma-separated integer list, got {text!r}") from exc


def _parse_bytes(text: str) -> int:
    units = {"k": 1024, "m": 1024**2, "g": 1024**3}
    t = text.strip().lower()
    if t and t[-1] in units:
        return int(float(t[:-1]) * units[t[-1]])
    return int(t)


def _cmd_attend(args) -> int:
    _require_inputs(args.query, args.keyvalue)
    inputs = AttentionInputs(load_tensor(args.query), load_tensor(args.keyvalue))
    if args.variant == "vanilla":
        out, sim = vanilla_cross_attention(inputs)
        if args.sim:
            save_tensor(sim, args.sim)
    else:
        out = efficient_cross_attention(inputs)
        if args.materialize:
            if not args.sim:
                raise FormatError("--materialize requires --sim OUT_PATH")
            save_tensor(materialize_efficient_similarity(inputs, args.cap), args.sim)
    save_tensor(out, args.out)
    return EXIT_OK


def _cmd_warp(args) -> int:
    _require_inputs(args.feature, args.flow)
    warped = motion.bilinear_warp(load_tensor(args.feature), motion.load_flow(args.flow))
    save_tensor(warped, args.out)
    return EXIT_OK


def _pad_to_multiple(frame: Tensor, multiple: int) -> Tensor:
    _, h, w = frame.dims
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if ph == 0 and pw == 0:
        return frame
    return Tensor(np.pad(frame.data, ((0, 0), (0, ph), (0, pw)), mode="edge"))


def _cmd_code(args) -> int:
    flows = args.flow
    if len(flows) not in (1, len(args.frames)):
        raise FormatError(
            f"expected 1 or {len(args.frames)} flow files, got {len(flows)}"
        )
    _require_inputs(*args.frames, args.ref, *flows)
    config = codec.CodecConfig(
        rd_lambda=args.rd_lambda,
        mode=args.mode,
        context_channels=tuple(args.channels),
        latent_channels=args.latent_channels,
        seed=args.seed,
        rate_sigma=args.sigma,
    )
    reference = load_tensor(args.ref)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    all_stats = []
    for index, frame_path in enumerate(args.frames):
        frame = motion.load_image(frame_path)
        if frame.dims[0] == 1:
            frame = Tensor(np.repeat(frame.data, 3, axis=0))
        orig_h, orig_w = frame.dims[1], frame.dims[2]
        padded = _pad_to_multiple(frame, PAD_MULTIPLE)
        if reference.dims[1:] != padded.dims[1:]:
            raise ShapeError(
                f"reference feature spatial dims {reference.dims[1:]} must match "
                f"the padded frame {padded.dims[1:]}"
            )
        flow = motion.load_flow(flows[index % len(flows)])
        recon, stats = codec.code_frame(padded, reference, flow, config, frame_index=index)
        cropped = Tensor(np.ascontiguousarray(recon.data[:, :orig_h, :orig_w]))
        motion.save_image(cropped, out_dir / (Path(frame_path).stem + "_recon.ppm"))
        all_stats.append(stats)
    Path(args.stats).write_text(codec.stats_to_csv(all_stats))
    return EXIT_OK


def _cmd_bench(args) -> int:
    report = bench_mod.run_attention_scaling(
        token_counts=args.token_counts,
        channels=args.channels,
        reps=args.reps,
        mem_budget=args.mem_budget,
        seed=args.seed,
    )
    Path(args.out).write_text(bench_mod.report_to_csv(report))
    summary = bench_mod.report_summary(report)
    Path(args.summary).write_text(json.dumps(summary, indent=2) + "\n")
    for name, fit in report.slopes.items():
        print(f"{name}: slope {_fmt(fit.slope)} r2 {_fmt(fit.r_squared)}")
    return EXIT_OK


def _cmd_bdrate(args) -> int:
    _require_inputs(args.anchor, args.test)
    anchor = metrics.read_rd_csv(Path(args.anchor).read_text())
    test = metrics.read_rd_csv(Path(args.test).read_text())
    print(_fmt(metrics.bd_rate(anchor, test)))
    return EXIT_OK


def _gradcheck_case(kernel: str, seed: int, tolerance: float, eps: float) -> float:
    """Run one seeded gradient check; returns the scale-relative error."""
    import zlib

    rng = np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(kernel.encode())]))

    def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
        scale = max(float(np.abs(numeric).max()), 1e-12)
        return float(np.abs(analytic - numeric).max()) / scale

    if kernel == "matmul":
        a = Tensor(rng.uniform(-1, 1, (3, 4)))
        b = Tensor(rng.uniform(-1, 1, (4, 2)))
        w = Tensor(rng.uniform(-1, 1, (3, 2)))
        d_a, d_b = matmul_backward(a, b, w)
        fd_a = finite_difference_gradient(
            lambda t: float((matmul(t, b).data * w.data).sum()), a, eps
        )
        fd_b = finite_difference_gradient(
            lambda t: float((matmul(a, t).data * w.data).sum()), b, eps
        )
        return max(rel_err(d_a.data, fd_a.data), rel_err(d_b.data, fd_b.data))
    if kernel == "softmax":
        x = Tensor(rng.uniform(-3, 3, (4, 5)))
        w = Tensor(rng.uniform(-1, 1, (4, 5)))
        d_x = softmax_rows_backward(softmax_rows(x), w)
        fd = finite_difference_gradient(
            lambda t: float((softmax_rows(t).data * w.data).sum()), x, eps
        )
        return rel_err(d_x.data, fd.data)
    if kernel == "warp":
        feat = Tensor(rng.uniform(-1, 1, (2, 5, 6)))
        # keep offsets fractional: the sampler is not differentiable on the lattice
        mag = rng.uniform(0.15, 0.85, (5, 6, 2))
        sign = rng.choice([-1.0, 1.0], (5, 6, 2))
        flow = motion.FlowField((mag * sign).astype(np.float64))
        w = Tensor(rng.uniform(-1, 1, (2, 5, 6)))
        d_feat, d_flow = motion.bilinear_warp_backward(feat, flow, w)
        fd_feat = finite_difference_gradient(
            lambda t: float((motion.bilinear_warp(t, flow).data * w.data).sum()),
            feat, eps,
        )
        fd_flow = finite_difference_gradient(
            lambda t: float(
                (motion.bilinear_warp(feat, motion.FlowField(t.data)).data * w.data).sum()
            ),
            Tensor(flow.data.copy()), eps,
        )
        return max(rel_err(d_feat.data, fd_feat.data), rel_err(d_flow.data, fd_flow.data))
    if kernel == "efficient_attention":
        q = Tensor(rng.uniform(-2, 2, (5, 3)))
        kv = Tensor(rng.uniform(-2, 2, (7, 3)))
        w = Tensor(rng.uniform(-1, 1, (5, 3)))
        d_q, d_kv = efficient_attention_backward(AttentionInputs(q, kv), w)
        fd_q = finite_difference_gradient(
            lambda t: float(
                (efficient_cross_attention(AttentionInputs(t, kv)).data * w.data).sum()
            ),
            q, eps,
        )
        fd_kv = finite_difference_gradient(
            lambda t: float(
                (efficient_cross_attention(AttentionInputs(q, t)).data * w.data).sum()
            ),
            kv, eps,
        )
        return max(rel_err(d_q.data, fd_q.data), rel_err(d_kv.data, fd_kv.data))
    raise FormatError(f"unknown gradcheck kernel {kernel!r}")


GRADCHECK_KERNELS = ("softmax", "matmul", "warp", "efficient_attention")


def run_gradcheck(kernel: str, seeds: int, tolerance: float = 1e-4, eps: float = 1e-5):
    """Check one kernel over many seeds; returns (worst_error, failures)."""
    worst = 0.0
    failures = 0
    for seed in range(seeds):
        err = _gradcheck_case(kernel, seed, tolerance, eps)
        worst = max(worst, err)
        if err > tolerance:
            failures += 1
    return worst, failures


def _cmd_gradcheck(args) -> int:
    kernels_to_run = GRADCHECK_KERNELS if args.kernel == "all" else (args.kernel,)
    print(f"{'kernel':<22}{'seeds':>7}{'max_rel_err':>14}  status")
    any_failed = False
    for kernel in kernels_to_run:
        worst, failures = run_gradcheck(kernel, args.seeds, args.tolerance, args.eps)
        status = "pass" if failures == 0 else f"FAIL ({failures} seeds)"
        any_failed = any_failed or failures > 0
        print(f"{kernel:<22}{args.seeds:>7}{_fmt(worst):>14}  {status}")
    return EXIT_CHECK_FAILED if any_failed else EXIT_OK


def _cmd_synthflow(args) -> int:
    params = {}
    if args.kind == "translation":
        params = {"u": args.u, "v": args.v}
    elif args.kind == "rotation":
        params = {"angle": args.angle}
    elif args.kind == "zoom":
        params = {"scale": args.scale}
    flow = motion.synth_flow(args.kind, params, args.width, args.height)
    motion.save_flow(flow, args.out)
    return EXIT_OK


def _cmd_blockmatch(args) -> int:
    _require_inputs(args.reference, args.current)
    ref = motion.load_image(args.reference)
    cur = motion.load_image(args.current)
    flow = motion.block_match(ref, cur, args.block, args.range)
    motion.save_flow(flow, args.out)
    return EXIT_OK


def _cmd_report(args) -> int:
    _require_inputs(args.stats, *([args.other] if args.other else []))
    records = codec.parse_stats_csv(Path(args.stats).read_text())
    if args.other:
        other = codec.parse_stats_csv(Path(args.other).read_text())
        Path(args.out).write_text(metrics.bit_allocation_delta_csv(records, other))
    else:
        report = metrics.bit_allocation_report(records)
        Path(args.out).write_text(report.to_csv())
        if args.table:
            Path(args.table).write_text(report.to_table())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mocomp",
        description="Motion-compensation kernels and rate-distortion analytics "
        f"(kernel backend: {kernels.BACKEND})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attend", help="run a cross-attention kernel on tensor files")
    p.add_argument("query")
    p.add_argument("keyvalue")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--variant", choices=("vanilla", "efficient"), default="efficient")
    p.add_argument("--sim", help="where to write the similarity matrix")
    p.add_argument("--materialize", action="store_true",
                   help="materialize the factorized similarity (efficient variant)")
    p.add_argument("--cap", type=int, default=DEFAULT_SIMILARITY_CAP,
                   help="similarity entry cap for --materialize")
    p.set_defaults(func=_cmd_attend)

    p = sub.add_parser("warp", help="bilinear-warp a feature tensor with a flow file")
    p.add_argument("feature")
    p.add_argument("flow")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=_cmd_warp)

    p = sub.add_parser("code", help="code PPM frames against a reference feature")
    p.add_argument("frames", nargs="+")
    p.add_argument("--ref", required=True, help="reference feature tensor (padded size)")
    p.add_argument("--flow", required=True, nargs="+",
                   help="one flow file, or one per frame")
    p.add_argument("--mode", choices=codec.ABLATION_MODES, default="both")
    p.add_argument("--lambda", dest="rd_lambda", type=float, default=1024.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=8.0)
    p.add_argument("--channels", type=_parse_int_list, default=[32, 48, 64])
    p.add_argument("--latent-channels", type=int, default=96)
    p.add_argument("--out-dir", default="recon")
    p.add_argument("--stats", default="stats.csv")
    p.set_defaults(func=_cmd_code)

    p = sub.add_parser("bench", help="time both attention kernels and fit slopes")
    p.add_argument("--Ls", dest="token_counts", type=_parse_int_list,
                   default=list(bench_mod.DEFAULT_TOKEN_COUNTS))
    p.add_argument("--C", dest="channels", type=int, default=bench_mod.DEFAULT_CHANNELS)
    p.add_argument("--reps", type=int, default=bench_mod.DEFAULT_REPS)
    p.add_argument("--mem-budget", type=_parse_bytes, default=bench_mod.DEFAULT_MEM_BUDGET,
                   help="vanilla similarity-buffer budget in bytes (suffix K/M/G)")
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("-o", "--out", default="bench.csv")
    p.add_argument("--summary", default="bench_summary.json")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("bdrate", help="BD-rate of a test RD curve against an anchor")
    p.add_argument("anchor")
    p.add_argument("test")
    p.set_defaults(func=_cmd_bdrate)

    p = sub.add_parser("gradcheck", help="verify backward kernels against finite differences")
    p.add_argument("--kernel", choices=GRADCHECK_KERNELS + ("all",), default="all")
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--eps", type=float, default=1e-5)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("synthflow", help="generate a synthetic flow field")
    p.add_argument("kind", choices=("translation", "rotation", "zoom"))
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--u", type=float, default=0.0)
    p.add_argument("--v", type=float, default=0.0)
    p.add_argument("--angle", type=float, default=0.0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=_cmd_synthflow)

    p = sub.add_parser("blockmatch", help="full-search SAD motion estimation")
    p.add_argument("reference")
    p.add_argument("current")
    p.add_argument("--block", type=int, default=8)
    p.add_argument("--range", type=int, default=4)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=_cmd_blockmatch)

    p = sub.add_parser("report", help="bit-allocation report from a stats CSV")
    p.add_argument("stats")
    p.add_argument("other", nargs="?", help="second log for side-by-side deltas")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--table", help="also write a gnuplot-style whitespace table")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ShapeError as exc:
        print(f"shape error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except ResourceLimitError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (DomainError, EvaluationError) as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
