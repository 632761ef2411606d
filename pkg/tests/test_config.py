import pytest

from tabseg.config import (
    DESK_LEARNING_RATE, PLAN_KEYS, TRAIN_KEYS, desk_train_config, model_from_keys, parse_kv_text,
    plan_from_file, plan_from_values, train_config_from_file,
)
from tabseg.errors import ConfigurationError


def test_parse_comments_types_and_bools():
    values = parse_kv_text("epochs = 5  # short\n\nloss_masking = off\nlearning_rate=1e-3\n", TRAIN_KEYS)
    assert values == {"epochs": 5, "loss_masking": False, "learning_rate": 1e-3}


@pytest.mark.parametrize("text,match", [
    ("epoch = 5", r":1: unknown key 'epoch'"),
    ("seed = 1\nseed = 2", r":2: duplicate key 'seed'"),
    ("seed: 1", "expected 'key = value'"),
    ("seed = one", "cannot parse 'one' as int"),
    ("loss_masking = maybe", "boolean"),
])
def test_parse_errors_carry_line_numbers(text, match):
    with pytest.raises(ConfigurationError, match=match):
        parse_kv_text(text, TRAIN_KEYS, "cfg")


def test_presets():
    desk = model_from_keys({"variant": "unet"})
    assert (desk.variant, desk.input_size, desk.features) == ("unet", 32, 64)
    paper = model_from_keys({"preset": "paper"})
    assert (paper.input_size, paper.features, paper.token_dim) == (192, 128, 512)
    assert model_from_keys({"features": 64}).features == 64
    with pytest.raises(ConfigurationError, match="preset"):
        model_from_keys({"preset": "huge"})


def test_desk_train_defaults():
    cfg = desk_train_config("resunet", features=16, epochs=7)
    assert cfg.learning_rate == DESK_LEARNING_RATE and cfg.weight_decay == 1e-6
    assert cfg.batch_size == 3 and cfg.loss_masking
    assert cfg.model.features == 16 and cfg.epochs == 7
    with pytest.raises(ConfigurationError, match="batch_size"):
        desk_train_config(batch_size=0)


def test_train_config_file(tmp_path):
    path = tmp_path / "t.cfg"
    path.write_text("variant = unet_se\ndata = d\ncheckpoint = c.ckpt\nepochs = 3\n")
    cfg = train_config_from_file(path)
    assert cfg.model.variant == "unet_se" and cfg.epochs == 3
    assert cfg.history_path == "c.ckpt.history.csv"
    path.write_text("data = d\n")
    with pytest.raises(ConfigurationError, match="checkpoint"):
        train_config_from_file(path)
    path.write_text("checkpoint = c\n")
    with pytest.raises(ConfigurationError, match="'data' or both"):
        train_config_from_file(path)
    with pytest.raises(ConfigurationError, match="not found"):
        train_config_from_file(tmp_path / "missing.cfg")


BASE = {"source": "siteA", "data_root": "d", "checkpoint_dir": "c", "report": "r"}


def test_plan_defaults():
    perf = plan_from_values({**BASE, "kind": "performance"})
    assert perf.variants == ("tabs", "resunet", "unet_se", "unet")
    assert perf.targets == ("siteA",)
    assert str(perf.checkpoint_path("unet")).endswith("siteA__unet.ckpt")
    rel = plan_from_values({**BASE, "kind": "reliability", "target": "siteD"})
    assert rel.variants == ("tabs",)


def test_generality_needs_distinct_target():
    with pytest.raises(ConfigurationError, match="different from the source"):
        plan_from_values({**BASE, "kind": "generality", "target": "siteB,siteA"})
    plan = plan_from_values({**BASE, "kind": "generality", "target": "siteB, siteC"})
    assert plan.targets == ("siteB", "siteC")


@pytest.mark.parametrize("extra,match", [
    ({"kind": "ablation"}, "kind"),
    ({"kind": "performance", "variants": "tabs,vnet"}, "variants"),
])
def test_plan_validation(extra, match):
    with pytest.raises(ConfigurationError, match=match):
        plan_from_values({**BASE, **extra})


def test_plan_missing_key_and_file(tmp_path):
    with pytest.raises(ConfigurationError, match="'report'"):
        plan_from_values({"kind": "performance", "source": "a", "data_root": "d", "checkpoint_dir": "c"})
    path = tmp_path / "p.cfg"
    path.write_text("kind = performance\nsource = siteA\ndata_root = d\ncheckpoint_dir = c\n"
                    "report = r\nepochs = 4\nfeatures = 16\n")
    plan = plan_from_file(path)
    assert plan.training["epochs"] == 4
    assert plan.model_config("tabs").features == 16
    assert set(PLAN_KEYS) >= {"kind", "target"}
