"""Config parsing: defaults, passthrough, and constraint rejection."""

import pytest

from promptfuse import ConfigError, parse_config
from promptfuse.config import read_keyvalues, with_overrides


def test_empty_document_gives_defaults():
    cfg = parse_config("")
    assert cfg.lambda_ == 1e-5
    assert cfg.seed == 1
    assert cfg.num_train_steps == 1000
    assert cfg.num_ddim_steps == 50
    assert cfg.patch_size == 1
    assert cfg.fusion_mode == "adaptive"
    assert cfg.inversion_formula == "paper-exact-inverse"
    assert cfg.replication_count is None
    assert cfg.guidance_scale == 1.0
    assert cfg.pooling == "last-token"
    assert cfg.inv_norm_mode == "pooled"


def test_single_key_passthrough():
    cfg = parse_config("patch_size = 2\n")
    assert cfg.patch_size == 2
    assert cfg == with_overrides(parse_config(""), patch_size=2)


def test_comments_and_blank_lines():
    cfg = parse_config("# a comment\n\nseed = 7  # trailing comment\n")
    assert cfg.seed == 7


@pytest.mark.parametrize(
    "text",
    [
        "lambda = -1",
        "lambda = 0",
        "patch_size = 0",
        "num_ddim_steps = 0",
        "num_train_steps = 100\nnum_ddim_steps = 200",
        "replication_count = 0",
        "fusion_mode = blend",
        "inversion_formula = euler",
        "pooling = first",
        "pooling = index",  # missing pooling_index
        "pooling_index = -1",
        "inv_norm_mode = max",
    ],
)
def test_constraint_violations(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_unknown_key():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("beta_midpoint = 0.5")


def test_type_mismatch():
    with pytest.raises(ConfigError, match="cannot parse"):
        parse_config("num_ddim_steps = fifty")


def test_duplicate_key():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("seed = 1\nseed = 2")


def test_malformed_line():
    with pytest.raises(ConfigError, match="key = value"):
        parse_config("just some words")


def test_read_keyvalues_splits_on_first_equals():
    assert read_keyvalues("a = b = c") == {"a": "b = c"}


def test_index_pooling_accepted_with_index():
    cfg = parse_config("pooling = index\npooling_index = 3")
    assert cfg.pooling == "index" and cfg.pooling_index == 3
