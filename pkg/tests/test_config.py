import pytest
from hypothesis import given, settings, strategies as st

from imnet import config as cfgmod
from imnet.config import ABLATIONS, RunConfig
from imnet.errors import ConfigError


def test_defaults_round_trip():
    cfg = RunConfig().validate()
    assert cfgmod.loads(cfgmod.dumps(cfg)) == cfg


def test_dumps_is_canonical():
    text = cfgmod.dumps(cfgmod.tiny())
    assert cfgmod.dumps(cfgmod.loads(text)) == text


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(ABLATIONS), st.integers(0, 6), st.floats(1e-5, 1e-1), st.integers(1, 15),
       st.integers(0, 2**31))
def test_round_trip_property(mode, rounds, lr, k, seed):
    cfg = RunConfig(ablation=mode, percentiles=k, seed=seed,
                    prototype=cfgmod.PrototypePairConfig(update_rounds=rounds),
                    optimizer=cfgmod.OptimizerConfig(learning_rate=lr)).validate()
    again = cfgmod.loads(cfgmod.dumps(cfg))
    assert again == cfg
    assert again.optimizer.learning_rate == lr


def test_comments_and_blank_lines():
    cfg = cfgmod.loads("# header\n\nablation = spatial  # trailing\nseed = 3\n")
    assert cfg.ablation == "spatial" and cfg.seed == 3


@pytest.mark.parametrize("text, match", [
    ("bogus.key = 1\n", "unknown key"),
    ("seed = 1\nseed = 2\n", "duplicate key"),
    ("seed\n", "key = value"),
    ("seed = one\n", "bad value"),
    ("prototype.enabled = maybe\n", "bad value"),
    ("ablation = everything\n", "ablation must be"),
    ("backbone.channels = 8,16\n", "backbone.channels"),
    ("backbone.input_size = 60\n", "not divisible"),
    ("selfcorr.percentiles = 64\n", "selfcorr.percentiles"),
    ("loss.weights = 1,0,1\n", "loss.weights"),
    ("optimizer.kind = rmsprop\n", "optimizer.kind"),
])
def test_rejections(text, match):
    with pytest.raises(ConfigError, match=match):
        cfgmod.loads(text)


@pytest.mark.parametrize("mode, enabled, updates, rounds", [
    ("baseline", False, False, 0),
    ("prototype", True, False, 0),
    ("prototype-update", True, True, 4),
    ("spatial", True, True, 4),
    ("channel", True, True, 4),
    ("full", True, True, 4),
])
def test_ablation_sets_flags(mode, enabled, updates, rounds):
    cfg = cfgmod.loads(f"ablation = {mode}\n")
    assert (cfg.prototype.enabled, cfg.prototype.updates_enabled, cfg.prototype.rounds) == (enabled, updates, rounds)
    assert cfg.lccd_planes == ("spatial" if mode == "spatial" else "channel")


def test_contradicting_flag_rejected():
    with pytest.raises(ConfigError, match="contradicts"):
        cfgmod.loads("ablation = baseline\nprototype.enabled = true\n")
    # an agreeing value is accepted
    assert not cfgmod.loads("ablation = baseline\nprototype.enabled = false\n").prototype.enabled


def test_replace_switches_mode():
    cfg = RunConfig().validate().replace(ablation="baseline", **{"optimizer.steps": 7})
    assert cfg.ablation == "baseline" and not cfg.prototype.enabled and cfg.optimizer.steps == 7
    assert cfg.replace(ablation="full").prototype.rounds == 4


def test_decoder_defaults_mirror_backbone():
    assert RunConfig().decoder == (32, 16, 16)
    assert cfgmod.loads("decoder.channels = 8,8,8\n").decoder == (8, 8, 8)


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        cfgmod.load(tmp_path / "nope.cfg")
