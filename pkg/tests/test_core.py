import math

import pytest
from hypothesis import given, strategies as st

from avloc.core import (
    ConfigError,
    ForgeryMode,
    PipelineConfig,
    Segment,
    ValidationError,
    VideoAnnotation,
    apply_overrides,
    clamp_segment,
    iou,
    parse_config_text,
    validate_annotation,
)


def segments(max_abs=1000.0):
    # bounds on a 1/64 grid: interval arithmetic stays exact in float64,
    # so the iff-style identities below are not blurred by rounding
    bounds = st.integers(min_value=-int(max_abs * 64), max_value=int(max_abs * 64))
    return (
        st.tuples(bounds, bounds)
        .filter(lambda t: t[0] < t[1])
        .map(lambda t: Segment(t[0] / 64.0, t[1] / 64.0))
    )


class TestSegment:
    def test_rejects_degenerate(self):
        with pytest.raises(ValidationError):
            Segment(5.0, 5.0)
        with pytest.raises(ValidationError):
            Segment(7.0, 3.0)

    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError):
            Segment(0.0, math.inf)

    def test_length(self):
        assert Segment(1.5, 4.0).length == 2.5


class TestIou:
    def test_identity(self):
        assert iou(Segment(0, 10), Segment(0, 10)) == 1.0

    def test_disjoint(self):
        assert iou(Segment(0, 10), Segment(20, 30)) == 0.0

    def test_partial_overlap(self):
        assert iou(Segment(0, 10), Segment(5, 15)) == pytest.approx(1 / 3)

    def test_touching_is_zero(self):
        assert iou(Segment(0, 5), Segment(5, 9)) == 0.0

    @given(segments(), segments())
    def test_symmetric_and_bounded(self, a, b):
        v = iou(a, b)
        assert 0.0 <= v <= 1.0
        assert v == iou(b, a)

    @given(segments(), segments())
    def test_one_iff_identical(self, a, b):
        if iou(a, b) == 1.0:
            assert a.start == b.start and a.end == b.end
        if a == b:
            assert iou(a, b) == 1.0

    @given(segments(), segments())
    def test_zero_iff_disjoint(self, a, b):
        overlap = min(a.end, b.end) - max(a.start, b.start)
        assert (iou(a, b) == 0.0) == (overlap <= 0)


class TestClampSegment:
    def test_lower_clamp(self):
        assert clamp_segment(Segment(-1, 5), 40) == Segment(0, 5)

    def test_upper_clamp(self):
        assert clamp_segment(Segment(10, 50), 40) == Segment(10, 40)

    def test_fully_outside(self):
        assert clamp_segment(Segment(41, 45), 40) is None

    def test_bad_duration(self):
        with pytest.raises(ValidationError):
            clamp_segment(Segment(0, 1), 0.0)

    @given(segments(), st.floats(min_value=0.1, max_value=500.0))
    def test_idempotent(self, seg, duration):
        once = clamp_segment(seg, duration)
        if once is not None:
            assert clamp_segment(once, duration) == once


class TestValidateAnnotation:
    def test_real_empty_accepted(self):
        ann = VideoAnnotation("a", 10.0, (), (), ForgeryMode.REAL)
        assert validate_annotation(ann) == ann

    def test_real_with_period_rejected(self):
        ann = VideoAnnotation("a", 10.0, (Segment(0, 5),), (), ForgeryMode.REAL)
        with pytest.raises(ValidationError, match="mode=real"):
            validate_annotation(ann)

    def test_period_clamped(self):
        ann = VideoAnnotation(
            "a", 40.0, (Segment(38, 45),), (), ForgeryMode.AUDIO_REAL_VIDEO_FAKE
        )
        out = validate_annotation(ann)
        assert out.visual_fake_periods == (Segment(38, 40),)

    def test_period_outside_video_rejected(self):
        ann = VideoAnnotation(
            "a", 40.0, (Segment(41, 45),), (), ForgeryMode.AUDIO_REAL_VIDEO_FAKE
        )
        with pytest.raises(ValidationError):
            validate_annotation(ann)

    def test_audio_fake_mode_forbids_visual_periods(self):
        ann = VideoAnnotation(
            "a", 10.0, (Segment(0, 1),), (Segment(0, 1),), ForgeryMode.AUDIO_FAKE_VIDEO_REAL
        )
        with pytest.raises(ValidationError):
            validate_annotation(ann)


class TestPipelineConfig:
    def test_defaults_match_reference_setup(self):
        cfg = PipelineConfig()
        assert cfg.num_frames == 512
        assert cfg.max_duration == 40.0
        assert cfg.feature_dim == 256
        assert cfg.boundary_hidden_dims == (512, 128)
        assert cfg.boundary_samples == 10
        assert cfg.learning_rate == 1e-5
        assert cfg.frame_loss_weight == 2.0
        assert cfg.boundary_loss_weight == 1.0
        assert cfg.contrastive_loss_weight == 0.1
        assert cfg.contrastive_margin == 0.99
        assert cfg.weight_decay == 1e-4
        assert cfg.nms_alpha == 0.7234
        assert cfg.nms_t1 == 0.1968
        assert cfg.nms_t2 == 0.4123
        assert cfg.erf_fake_threshold == 0.5
        assert cfg.erf_real_append_conf == 0.95
        assert cfg.erf_fake_append_conf == 0.55

    def test_invariants(self):
        with pytest.raises(ConfigError):
            PipelineConfig(num_frames=1)
        with pytest.raises(ConfigError):
            PipelineConfig(nms_t1=0.5, nms_t2=0.4)
        with pytest.raises(ConfigError):
            PipelineConfig(contrastive_margin=1.5)
        with pytest.raises(ConfigError):
            PipelineConfig(frame_loss_weight=0.0)
        with pytest.raises(ConfigError):
            PipelineConfig(attention_heads=5)  # must divide feature_dim

    def test_parse_config_text(self):
        cfg = parse_config_text(
            """
            # toy overrides
            num_frames = 64
            feature_dim = 32
            boundary_hidden_dims = 48, 24
            learning_rate = 0.05
            rng_seed = 7
            """
        )
        assert cfg.num_frames == 64
        assert cfg.boundary_hidden_dims == (48, 24)
        assert cfg.learning_rate == 0.05
        assert cfg.rng_seed == 7
        assert cfg.nms_alpha == 0.7234  # untouched default

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown configuration key"):
            parse_config_text("frames = 64")

    def test_malformed_line_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("num_frames 64")

    def test_apply_overrides(self):
        cfg = apply_overrides(PipelineConfig(), {"nms_alpha": "0.5", "rng_seed": "3"})
        assert cfg.nms_alpha == 0.5
        assert cfg.rng_seed == 3
        with pytest.raises(ConfigError):
            apply_overrides(cfg, {"bogus": "1"})
