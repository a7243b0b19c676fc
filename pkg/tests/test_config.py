import pytest

from hiermatch.config import EvalThresholds, PipelineConfig, RunConfig, apply_overrides, dump_config, load_config
from hiermatch.errors import MalformedFile


def test_defaults_valid():
    cfg = RunConfig()
    assert cfg.pipeline.mode == "deterministic" and cfg.eval == EvalThresholds(2.0, 5.0, 1.0)


def test_overrides_types():
    cfg = apply_overrides(RunConfig(), [("pipeline.mask", "off"), ("pipeline.n_keypoints", "256,128,64"),
                                        ("eval.eps_trans", "1.5"), ("output_dir", "x")])
    assert cfg.pipeline.mask is False and cfg.pipeline.n_keypoints == (256, 128, 64)
    assert cfg.eval.eps_trans == 1.5 and cfg.output_dir == "x"
    with pytest.raises(KeyError):
        apply_overrides(RunConfig(), [("pipeline.unknown", "1")])
    with pytest.raises(ValueError):
        apply_overrides(RunConfig(), [("pipeline.mask", "maybe")])


def test_validation():
    with pytest.raises(ValueError):
        PipelineConfig(mode="other")
    with pytest.raises(ValueError):
        PipelineConfig(desc_temperature=0)
    with pytest.raises(ValueError):
        EvalThresholds(eps_trans=0)


def test_dump_load_round_trip(tmp_path):
    cfg = apply_overrides(RunConfig(), [("pipeline.k1", "12"), ("pipeline.double_soft", "false")])
    p = tmp_path / "c.cfg"
    p.write_text(dump_config(cfg))
    assert load_config(p) == cfg


def test_malformed_names_line(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\n\npipeline.k1 = 4\npipeline.k2\n")
    with pytest.raises(MalformedFile, match="c.cfg:4"):
        load_config(p)
    p.write_text("pipeline.k1 = four\n")
    with pytest.raises(MalformedFile, match="c.cfg:1"):
        load_config(p)


def test_missing_paths():
    with pytest.raises(FileNotFoundError):
        RunConfig(dataset="/nonexistent/dir").check_paths()
