import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from occutrack.core import (
    AnnotationError,
    BallAnnotation,
    ConfigError,
    ContractViolation,
    FrameWindow,
    IngestError,
    LossWeights,
    PipelineConfig,
    Visibility,
    load_config,
    read_annotation_csv,
    save_config,
    validate_annotation,
    write_annotation_csv,
)


def test_visibility_codes_are_fixed():
    assert Visibility.OUT_OF_FRAME == 0
    assert Visibility.VISIBLE == 1
    assert Visibility.PARTIALLY_OCCLUDED == 2
    assert Visibility.FULLY_OCCLUDED == 3


class TestConfig:
    def test_empty_file_gives_defaults(self, tmp_path):
        p = tmp_path / "empty.yaml"
        p.write_text("")
        cfg = load_config(p)
        assert cfg.t == 5
        assert (cfg.height, cfg.width) == (288, 512)
        assert cfg.target_index == 2
        assert cfg.sigma == 3.0
        assert cfg.loss_weights == (0.0, 1.0, 2.0, 4.0)
        assert cfg.activation_mode == "softmax-axial"

    def test_target_index_follows_window_length(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("t: 3\n")
        assert load_config(p).target_index == 1

    def test_explicit_target_index_kept(self):
        cfg = PipelineConfig(t=5, target_index=4)
        assert cfg.target_index == 4

    def test_unknown_key_is_named(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("t: 3\nsgima: 2.0\n")
        with pytest.raises(ConfigError, match="sgima"):
            load_config(p)

    def test_uppercase_keys_accepted(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("T: 3\n")
        assert load_config(p).t == 3

    def test_negative_sigma_rejected(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("sigma: -1.0\n")
        with pytest.raises(ConfigError, match="sigma"):
            load_config(p)

    def test_bad_target_index_rejected(self):
        with pytest.raises(ConfigError, match="target_index"):
            PipelineConfig(t=3, target_index=3)

    def test_non_mapping_file_rejected(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_roundtrip(self, tmp_path):
        cfg = PipelineConfig(t=3, height=144, width=256, sigma=2.0,
                             loss_weights=(0, 1, 3, 5), use_flow=True,
                             stage_channels=(4, 8), spatial_kernels=(3, 3),
                             temporal_kernels=(3, 1), spatial_pools=(2, 2))
        p = tmp_path / "c.yaml"
        save_config(cfg, p)
        assert load_config(p) == cfg

    def test_effective_weights_honor_toggle(self):
        cfg = PipelineConfig(loss_weights=(0, 1, 2, 4))
        assert cfg.effective_weights().w == (0.0, 1.0, 2.0, 4.0)
        cfg = dataclasses.replace(cfg, use_weighted_bce=False)
        assert cfg.effective_weights().w == (0.0, 1.0, 1.0, 1.0)

    def test_stage_plan_lengths_must_match(self):
        with pytest.raises(ConfigError, match="spatial_kernels"):
            PipelineConfig(stage_channels=(8, 16), spatial_kernels=(3,),
                           temporal_kernels=(3, 3), spatial_pools=(2, 2))


class TestLossWeights:
    def test_indexing_by_visibility(self):
        w = LossWeights((0.0, 1.0, 2.0, 4.0))
        assert w[Visibility.OUT_OF_FRAME] == 0.0
        assert w[Visibility.FULLY_OCCLUDED] == 4.0

    def test_all_zero_rejected(self):
        with pytest.raises(ConfigError):
            LossWeights((0.0, 0.0, 0.0, 0.0))

    def test_negative_rejected(self):
        with pytest.raises(ConfigError):
            LossWeights((0.0, -1.0, 2.0, 4.0))


class TestAnnotation:
    def test_in_frame_passes(self):
        ann = BallAnnotation(0, 10.0, 20.0, Visibility.VISIBLE)
        assert validate_annotation(ann, (288, 512)) is ann

    def test_out_of_bounds_rejected(self):
        ann = BallAnnotation(0, 512.0, 20.0, Visibility.VISIBLE)
        with pytest.raises(AnnotationError):
            validate_annotation(ann, (288, 512))

    def test_out_of_frame_sentinel_passes(self):
        ann = BallAnnotation(3, -1.0, -1.0, Visibility.OUT_OF_FRAME)
        assert validate_annotation(ann, (288, 512)) is ann

    def test_position_forbidden_for_out_of_frame(self):
        ann = BallAnnotation(3, -1.0, -1.0, Visibility.OUT_OF_FRAME)
        with pytest.raises(ContractViolation):
            ann.position()

    @given(x=st.floats(0, 511.99), y=st.floats(0, 287.99),
           vis=st.sampled_from([Visibility.VISIBLE, Visibility.PARTIALLY_OCCLUDED,
                                Visibility.FULLY_OCCLUDED]))
    def test_any_in_bounds_position_passes(self, x, y, vis):
        ann = BallAnnotation(0, x, y, vis)
        assert validate_annotation(ann, (288, 512)).position() == (x, y)


class TestAnnotationCsv:
    def test_roundtrip(self, tmp_path):
        anns = [
            BallAnnotation(0, 100.5, 50.25, Visibility.VISIBLE),
            BallAnnotation(1, 103.0, 54.0, Visibility.PARTIALLY_OCCLUDED),
            BallAnnotation(2, -1.0, -1.0, Visibility.OUT_OF_FRAME),
            BallAnnotation(3, 99.0, 40.0, Visibility.FULLY_OCCLUDED),
        ]
        p = tmp_path / "clip.csv"
        write_annotation_csv(anns, p)
        back = read_annotation_csv(p)
        assert back == anns

    def test_header_enforced(self, tmp_path):
        p = tmp_path / "clip.csv"
        p.write_text("frame,vis,x,y\n0,1,1.0,1.0\n")
        with pytest.raises(IngestError, match="header"):
            read_annotation_csv(p)

    def test_bad_visibility_code_line_reported(self, tmp_path):
        p = tmp_path / "clip.csv"
        p.write_text("frame,visibility,x,y\n0,1,1.0,1.0\n1,7,1.0,1.0\n")
        with pytest.raises(IngestError, match=":3"):
            read_annotation_csv(p)

    def test_out_of_frame_rows_forced_to_sentinel(self, tmp_path):
        p = tmp_path / "clip.csv"
        p.write_text("frame,visibility,x,y\n0,0,55.0,44.0\n")
        (ann,) = read_annotation_csv(p)
        assert (ann.x, ann.y) == (-1.0, -1.0)


class TestFrameWindow:
    def _window(self, t=3):
        frames = np.zeros((t, 16, 24, 3), dtype=np.float32)
        anns = [BallAnnotation(i, 5.0, 5.0, Visibility.VISIBLE) for i in range(t)]
        return FrameWindow(frames, anns, t // 2, "clip0:0", (16, 24))

    def test_target_accessor(self):
        win = self._window(t=3)
        assert win.target.frame_index == 1
        assert win.shape == (3, 16, 24)

    def test_annotation_count_must_match(self):
        frames = np.zeros((3, 16, 24, 3), dtype=np.float32)
        anns = [BallAnnotation(0, 5.0, 5.0, Visibility.VISIBLE)]
        with pytest.raises(ContractViolation):
            FrameWindow(frames, anns, 1, "clip0:0", (16, 24))

    def test_target_index_bounds(self):
        frames = np.zeros((3, 16, 24, 3), dtype=np.float32)
        anns = [BallAnnotation(i, 5.0, 5.0, Visibility.VISIBLE) for i in range(3)]
        with pytest.raises(ContractViolation):
            FrameWindow(frames, anns, 3, "clip0:0", (16, 24))
