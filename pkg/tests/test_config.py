import pytest

from superalign.config import PipelineConfig, apply_overrides, load_config, parse_config_text
from superalign.errors import FormatError, ParameterError


def test_defaults():
    cfg = PipelineConfig()
    assert cfg.filter_fraction == 0.15
    assert cfg.matcher.name == "global_softmax"
    assert cfg.estimator == "weighted_kabsch"
    assert (cfg.loss.alpha, cfg.loss.beta) == (0.1, 1.0)


def test_overrides_convert_by_type():
    cfg = apply_overrides(PipelineConfig(), [
        ("voxel_size", "0.01"), ("matcher", "dual"), ("ransac.max_iterations", "77"),
        ("descriptor.radius_scales", "1.0, 2.0"), ("sinkhorn.slack", "no")])
    assert cfg.voxel_size == 0.01
    assert cfg.matcher.name == "dual_softmax"
    assert cfg.ransac.max_iterations == 77
    assert cfg.descriptor.radius_scales == (1.0, 2.0)
    assert cfg.sinkhorn.slack is False


def test_descriptor_change_recomputes_dim():
    a = PipelineConfig().descriptor.feature_dim
    b = apply_overrides(PipelineConfig(), [("descriptor.histogram_bins", "8")]).descriptor.feature_dim
    assert a != b


@pytest.mark.parametrize("key,value", [
    ("voxel", "1"), ("ransac.iters", "3"), ("matcher.name", "hungarian"),
    ("filter_fraction", "0"), ("filter_fraction", "abc"), ("descriptor", "1")])
def test_bad_overrides(key, value):
    with pytest.raises(ParameterError):
        apply_overrides(PipelineConfig(), [(key, value)])


def test_text_format(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# a comment\n\nestimator = ransac   # trailing\nmatcher.temperature=0.01\n")
    cfg = load_config(p)
    assert cfg.estimator == "ransac" and cfg.matcher.temperature == 0.01


def test_text_errors_carry_location():
    with pytest.raises(FormatError) as e:
        parse_config_text("voxel_size = 0.01\nnot a pair\n", path="x.cfg")
    assert e.value.line == 2
    with pytest.raises(FormatError):
        parse_config_text("bogus = 1\n")
