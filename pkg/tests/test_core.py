import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dawsol.core import (
    Box,
    ClassMask,
    ConfigError,
    PixelAnnotation,
    RunConfig,
    ValidationError,
    dump_config,
    load_config,
    parse_config,
    save_config,
    seeded_rng,
)


def test_missing_n_defaults_to_32(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("num_classes = 5\nlambda1 = 0.2\n")
    cfg = load_config(path)
    assert cfg.samples_per_subset == 32
    assert cfg.num_classes == 5 and cfg.lambda1 == 0.2


def test_zero_lambdas_are_valid():
    cfg = parse_config("lambda1 = 0\nlambda2 = 0\n")
    assert cfg.lambda1 == 0 and cfg.lambda2 == 0


def test_zero_classes_rejected():
    with pytest.raises(ValidationError) as err:
        parse_config("num_classes = 0\n")
    assert err.value.field == "num_classes"


def test_parse_error_reports_line():
    with pytest.raises(ConfigError) as err:
        parse_config("# comment\nlambda1 = 0.3\nthis line is broken\n")
    assert err.value.line == 3


def test_bad_value_reports_line():
    with pytest.raises(ConfigError) as err:
        parse_config("seed = 1\nlambda2 = lots\n")
    assert err.value.line == 2


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="bogus"):
        parse_config("bogus = 1\n")


def test_uda_none_with_lambda1_is_error():
    with pytest.raises(ValidationError, match="lambda1"):
        RunConfig(uda_method="none", lambda1=0.5)
    RunConfig(uda_method="none", lambda1=0.0)


def test_negative_lambda_rejected():
    with pytest.raises(ValidationError):
        RunConfig(lambda2=-1.0)


def test_defaults():
    cfg = RunConfig()
    assert cfg.image_size == 224
    assert cfg.samples_per_subset == 32
    assert cfg.momentum == 0.9 and cfg.weight_decay == 1e-4


@settings(max_examples=50, deadline=None)
@given(
    k=st.integers(1, 50),
    n=st.integers(1, 200),
    l1=st.floats(0, 10, allow_nan=False),
    l2=st.floats(0, 10, allow_nan=False),
    uda=st.sampled_from(["mmd", "dann"]),
    aug=st.sampled_from(["none", "has", "cutmix"]),
    literal=st.booleans(),
    seed=st.integers(0, 2**31),
)
def test_config_round_trip(k, n, l1, l2, uda, aug, literal, seed):
    cfg = RunConfig(num_classes=k, samples_per_subset=n, lambda1=l1, lambda2=l2, uda_method=uda,
                    augmentation=aug, eq7_literal=literal, seed=seed)
    assert parse_config(dump_config(cfg)) == cfg


def test_save_load_file(tmp_path):
    cfg = RunConfig(seed=11, image_size=96)
    save_config(cfg, tmp_path / "x.cfg")
    assert load_config(tmp_path / "x.cfg") == cfg


def test_seeded_rng_determinism():
    a = seeded_rng(7).random(100)
    b = seeded_rng(7).random(100)
    c = seeded_rng(8).random(100)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert seeded_rng(0).random(5).shape == (5,)


def test_class_mask_argmax_lowest_index():
    m = ClassMask((0, 1, 0, 1))
    assert m.dominant_class == 1
    assert ClassMask.one_hot(2, 4).y == (0.0, 0.0, 1.0, 0.0)
    with pytest.raises(ValidationError):
        ClassMask((0, 0, 0))


def test_annotation_validation():
    Box(0, 0, 0, 9, 9).validate(10, 10)
    with pytest.raises(ValidationError):
        Box(0, 0, 0, 10, 9).validate(10, 10)
    with pytest.raises(ValidationError):
        PixelAnnotation(0, mask=np.zeros((4, 5), bool)).validate(5, 5)
