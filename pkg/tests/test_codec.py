"""Conditional coding pipeline: quantizer, rate proxy, ablation dataflow."""

import math

import numpy as np
import pytest

from mocomp import codec, motion
from mocomp.codec import (
    ABLATION_MODES,
    CodecConfig,
    CodingContexts,
    FrameStats,
    Latent,
    code_frame,
    contextual_decode,
    contextual_encode,
    estimate_rate,
    parse_stats_csv,
    quantize,
    stats_to_csv,
)
from mocomp.errors import DomainError, FormatError, ShapeError
from mocomp.metrics import psnr
from mocomp.motion import FlowField, PyramidConfig, build_pyramid, local_contexts
from mocomp.tensor import Tensor

SMALL_PLAN = dict(context_channels=(8, 12, 16), latent_channels=24)


def make_scene(seed=0, size=32):
    rng = np.random.default_rng(seed)
    frame = Tensor(rng.uniform(0, 1, (3, size, size)).astype(np.float32))
    ref = Tensor(rng.uniform(0, 1, (3, size, size)).astype(np.float32))
    flow = motion.translation_flow(1.0, -0.5, size, size)
    return frame, ref, flow


def make_contexts(ref, flow, config):
    pyramid = build_pyramid(ref, PyramidConfig(config.context_channels, config.seed))
    return CodingContexts(
        local=local_contexts(pyramid, flow),
        attention_sources=pyramid.scales,
    )


class TestCodecConfig:
    def test_validation(self):
        with pytest.raises(DomainError):
            CodecConfig(rd_lambda=0.0)
        with pytest.raises(DomainError):
            CodecConfig(mode="off")
        with pytest.raises(DomainError):
            CodecConfig(rate_sigma=-1.0)

    def test_families_by_mode(self):
        assert CodecConfig(mode="both").families == {"local", "global_enc", "global_dec"}
        assert CodecConfig(mode="local_only").families == {"local"}
        assert CodecConfig(mode="global_only").families == {"global_enc", "global_dec"}
        assert CodecConfig(mode="global_enc_only").families == {"local", "global_enc"}
        assert CodecConfig(mode="global_dec_only").families == {"local", "global_dec"}


class TestQuantize:
    def test_halves_round_away_from_zero(self):
        q = quantize(Tensor.of([[0.5, -0.5, 1.49, -1.49, 2.5]]))
        np.testing.assert_array_equal(q.data, [[1.0, -1.0, 1.0, -1.0, 3.0]])

    def test_integers_are_fixed_points(self):
        values = Tensor.of([[-3.0, 0.0, 7.0]])
        np.testing.assert_array_equal(quantize(values).data, values.data)

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        pre = Tensor(rng.uniform(-10, 10, (4, 5)).astype(np.float32))
        once = quantize(pre)
        np.testing.assert_array_equal(quantize(once).data, once.data)


class TestEstimateRate:
    def test_zero_latent_closed_form(self):
        lat = Latent(Tensor.zeros((2, 3)), Tensor.zeros((2, 3)))
        per_element = estimate_rate(lat, 1.0) / 6
        phi = lambda z: 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))
        closed = -math.log2(phi(0.5) - phi(-0.5))
        assert abs(per_element - closed) < 1e-12
        assert abs(per_element - 1.3851) < 1e-3

    def test_monotone_in_magnitude(self):
        bits = []
        for value in [0.0, 1.0, 2.0, 4.0, 40.0, 400.0]:
            lat = Latent(Tensor.of([[value]]), Tensor.of([[value]]))
            bits.append(estimate_rate(lat, 1.0))
        assert all(b2 > b1 for b1, b2 in zip(bits, bits[1:-1], strict=False))
        assert bits[-1] >= bits[-2]  # deep tail hits the probability floor
        assert all(b > 0 and math.isfinite(b) for b in bits)

    def test_additive_over_elements(self):
        single = Latent(Tensor.of([[2.0]]), Tensor.of([[2.0]]))
        tiled = Latent(Tensor.full((3, 4), 2.0), Tensor.full((3, 4), 2.0))
        assert abs(estimate_rate(tiled, 2.0) - 12 * estimate_rate(single, 2.0)) < 1e-9

    def test_sigma_validation(self):
        lat = Latent(Tensor.zeros((1, 1)), Tensor.zeros((1, 1)))
        with pytest.raises(DomainError):
            estimate_rate(lat, 0.0)


class TestLatent:
    def test_rejects_non_integral(self):
        with pytest.raises(ValueError):
            Latent(Tensor.of([[0.25]]), Tensor.of([[0.25]]))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ShapeError):
            Latent(Tensor.zeros((1, 2)), Tensor.zeros((2, 1)))


class TestContextualEncode:
    def test_latent_shape_from_stride_arithmetic(self):
        frame, ref, flow = make_scene(size=64)
        config = CodecConfig(mode="both", context_channels=(32, 48, 64),
                             latent_channels=96, seed=0)
        pre = contextual_encode(frame, make_contexts(ref, flow, config), config)
        assert pre.dims == (96, 4, 4)

    def test_deterministic_for_fixed_seed(self):
        frame, ref, flow = make_scene(seed=3)
        config = CodecConfig(mode="both", seed=9, **SMALL_PLAN)
        ctx = make_contexts(ref, flow, config)
        a = contextual_encode(frame, ctx, config)
        b = contextual_encode(frame, ctx, config)
        assert a.data.tobytes() == b.data.tobytes()

    def test_mode_changes_the_latent(self):
        frame, ref, flow = make_scene(seed=4)
        both = CodecConfig(mode="both", seed=2, **SMALL_PLAN)
        local = CodecConfig(mode="local_only", seed=2, **SMALL_PLAN)
        ctx = make_contexts(ref, flow, both)
        a = contextual_encode(frame, ctx, both)
        b = contextual_encode(frame, ctx, local)
        assert a.data.tobytes() != b.data.tobytes()

    def test_requires_multiple_of_16(self):
        config = CodecConfig(**SMALL_PLAN)
        frame = Tensor.full((3, 20, 32), 0.5)
        with pytest.raises(ShapeError, match="16"):
            contextual_encode(frame, CodingContexts(), config)

    def test_missing_required_contexts(self):
        frame, ref, flow = make_scene()
        config = CodecConfig(mode="local_only", **SMALL_PLAN)
        with pytest.raises(ShapeError, match="local"):
            contextual_encode(frame, CodingContexts(), config)


class TestContextualDecode:
    def test_frame_shape_restored(self):
        frame, ref, flow = make_scene(size=64)
        config = CodecConfig(mode="both", context_channels=(32, 48, 64),
                             latent_channels=96, seed=0)
        ctx = make_contexts(ref, flow, config)
        pre = contextual_encode(frame, ctx, config)
        recon = contextual_decode(Latent(quantize(pre), pre), ctx, config)
        assert recon.dims == (3, 64, 64)
        assert recon.data.min() >= 0.0 and recon.data.max() <= 1.0

    def test_decoder_side_global_sensitivity_by_mode(self):
        frame, ref, flow = make_scene(seed=5)
        for mode, should_react in [("global_dec_only", True), ("local_only", False)]:
            config = CodecConfig(mode=mode, seed=7, **SMALL_PLAN)
            ctx = make_contexts(ref, flow, config)
            pre = contextual_encode(frame, ctx, config)
            latent = Latent(quantize(pre), pre)
            base = contextual_decode(latent, ctx, config)
            zeroed = CodingContexts(
                local=ctx.local,
                attention_sources=tuple(Tensor.zeros(s.dims) for s in ctx.attention_sources),
            )
            other = contextual_decode(latent, zeroed, config)
            changed = base.data.tobytes() != other.data.tobytes()
            assert changed == should_react


def family_contexts(ctx, family, delta=0.5):
    """Perturb exactly one context family; sources are per-side by call site."""
    bump = lambda ts: tuple(Tensor(t.data + np.float32(delta)) for t in ts)
    if family == "local":
        return CodingContexts(local=bump(ctx.local), attention_sources=ctx.attention_sources)
    return CodingContexts(local=ctx.local, attention_sources=bump(ctx.attention_sources))


class TestAblationConnectivity:
    @pytest.mark.parametrize("mode", ABLATION_MODES)
    def test_sensitivity_matrix(self, mode):
        frame, ref, flow = make_scene(seed=11)
        config = CodecConfig(mode=mode, seed=13, **SMALL_PLAN)
        ctx = make_contexts(ref, flow, config)
        pre = contextual_encode(frame, ctx, config)
        latent = Latent(quantize(pre), pre)
        recon = contextual_decode(latent, ctx, config)

        for family in ("local", "global_enc", "global_dec"):
            enc_ctx = ctx
            dec_ctx = ctx
            if family == "local":
                enc_ctx = dec_ctx = family_contexts(ctx, "local")
            elif family == "global_enc":
                enc_ctx = family_contexts(ctx, "sources")
            else:
                dec_ctx = family_contexts(ctx, "sources")

            pre_p = contextual_encode(frame, enc_ctx, config)
            latent_p = Latent(quantize(pre_p), pre_p)
            recon_p = contextual_decode(latent_p, dec_ctx, config)

            enc_same = pre_p.data.tobytes() == pre.data.tobytes()
            dec_same = recon_p.data.tobytes() == recon.data.tobytes()
            if family in config.families:
                assert not (enc_same and dec_same), (mode, family)
            else:
                assert enc_same and dec_same, (mode, family)


class TestCodeFrame:
    def test_psnr_field_is_internally_consistent(self):
        frame, ref, flow = make_scene(seed=6)
        config = CodecConfig(mode="both", seed=1, **SMALL_PLAN)
        recon, stats = code_frame(frame, ref, flow, config, frame_index=4)
        assert stats.frame_index == 4
        assert stats.motion_bpp == 0.0
        assert stats.psnr == psnr(frame, recon, peak=1.0)
        assert stats.total_bpp > 0

    def test_deterministic_across_runs(self):
        frame, ref, flow = make_scene(seed=7)
        config = CodecConfig(mode="both", seed=5, **SMALL_PLAN)
        r1, s1 = code_frame(frame, ref, flow, config)
        r2, s2 = code_frame(frame, ref, flow, config)
        assert r1.data.tobytes() == r2.data.tobytes()
        assert s1 == s2

    def test_aligned_contexts_beat_misaligned_at_pinned_seed(self):
        # regression-pinned: with untrained seeded weights the margin is
        # seed-specific, so this fixes one configuration and keeps it
        rng = np.random.default_rng(1)
        base = rng.uniform(0, 1, (3, 8, 8)).astype(np.float32)
        smooth = np.repeat(np.repeat(base, 8, axis=1), 8, axis=2)
        frame = Tensor(smooth)
        ref = Tensor(smooth.copy())
        config = CodecConfig(mode="local_only", context_channels=(16, 24, 32),
                             latent_channels=48, seed=1)
        _, aligned = code_frame(frame, ref, FlowField.zeros(64, 64), config)
        scrambled = FlowField(rng.uniform(-24, 24, (64, 64, 2)).astype(np.float32))
        _, misaligned = code_frame(frame, ref, scrambled, config)
        assert aligned.mse < misaligned.mse

    def test_both_mode_latent_depends_on_both_families(self):
        frame, ref, flow = make_scene(seed=8)
        config = CodecConfig(mode="both", seed=3, **SMALL_PLAN)
        ctx = make_contexts(ref, flow, config)
        pre = contextual_encode(frame, ctx, config)
        pre_local = contextual_encode(frame, family_contexts(ctx, "local"), config)
        pre_global = contextual_encode(frame, family_contexts(ctx, "sources"), config)
        assert pre_local.data.tobytes() != pre.data.tobytes()
        assert pre_global.data.tobytes() != pre.data.tobytes()

    def test_reference_spatial_mismatch(self):
        frame, ref, flow = make_scene()
        small_ref = Tensor.full((3, 16, 16), 0.5)
        with pytest.raises(ShapeError):
            code_frame(frame, small_ref, flow, CodecConfig(**SMALL_PLAN))


class TestStatsCsv:
    def test_round_trip(self):
        records = [
            FrameStats(0, 0.125, 0.0, 0.0625, 12.0412),
            FrameStats(1, 0.25, 0.0, 0.03125, 15.0515),
        ]
        text = stats_to_csv(records)
        assert text.splitlines()[0] == "frame_index,total_bpp,motion_bpp,mse,psnr"
        back = parse_stats_csv(text)
        assert back == records

    def test_infinite_psnr_survives_round_trip(self):
        records = [FrameStats(0, 0.5, 0.0, 0.0, math.inf)]
        back = parse_stats_csv(stats_to_csv(records))
        assert back[0].psnr == math.inf

    def test_header_required(self):
        with pytest.raises(FormatError, match="header"):
            parse_stats_csv("0,0.1,0,0.01,20\n")

    def test_malformed_row(self):
        with pytest.raises(FormatError):
            parse_stats_csv("frame_index,total_bpp,motion_bpp,mse,psnr\n0,0.1\n")
