import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lce.config import ConfigError, RunConfig, parse_lines


def test_defaults_roundtrip_exactly(tmp_path):
    cfg = RunConfig()
    text = cfg.to_text()
    assert RunConfig.from_text(text) == cfg
    assert RunConfig.from_text(text).to_text() == text
    cfg.save(tmp_path / "c.txt")
    assert RunConfig.load(tmp_path / "c.txt") == cfg
    assert "sr.channels=144\n" in text and "run.mode=case3\n" in text and "sr.scale" not in text


def test_overrides_and_types():
    cfg = RunConfig().replace({"sr.channels": "96", "train.augment": "false", "train.milestones": "0.3,0.6",
                               "data.sigma_range": "0.5,1.5", "run.mode": "case1", "data.scale": "4"})
    assert cfg.sr.channels == 96 and cfg.train.augment is False and cfg.train.milestones == (0.3, 0.6)
    assert cfg.data.sigma_range == (0.5, 1.5) and cfg.mode == "case1"
    assert cfg.sr.scale == 4  # follows data.scale
    assert RunConfig.from_text(cfg.to_text()) == cfg


@pytest.mark.parametrize("overrides", [{"sr.bogus": "1"}, {"nope.x": "1"}, {"sr.scale": "2"},
                                       {"sr.channels": "ten"}, {"train.augment": "maybe"},
                                       {"sr.heads": "5"}, {"train.stage": "gan"}, {"run.mode": "case7"}])
def test_rejected_overrides(overrides):
    with pytest.raises(ConfigError):
        RunConfig().replace(overrides)


def test_parse_lines():
    assert parse_lines(["# comment", "", " a.b = 3 ", "c.d=x=y"]) == {"a.b": "3", "c.d": "x=y"}
    with pytest.raises(ConfigError):
        parse_lines(["no equals sign"])


def test_digest_tracks_content():
    a, b = RunConfig(), RunConfig().replace({"train.seed": "1"})
    assert a.digest() == RunConfig().digest() and a.digest() != b.digest() and len(a.digest()) == 32


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 64), st.integers(1, 10**6), st.floats(1e-6, 1e-1), st.booleans(), st.sampled_from([2, 4]))
def test_property_roundtrip(c, steps, lr, aug, scale):
    cfg = RunConfig().replace({"corrector.channels": str(c * 16), "train.steps": str(steps), "train.lr": repr(lr),
                               "train.augment": str(aug).lower(), "data.scale": str(scale)})
    back = RunConfig.from_text(cfg.to_text())
    assert back == cfg and back.train.lr == lr
