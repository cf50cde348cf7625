import pytest

from dpfl.config import dump_config, load_config, parse_config, with_seed
from dpfl.engine import RunConfig
from dpfl.errors import ConfigError

MINIMAL = "mode = dpfl\nnum_clients = 4\nbudget = 2\nrounds = 5\nseed = 9\n"


def test_minimal_config_fills_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.mode == "dpfl" and cfg.budget == 2 and cfg.seed == 9
    assert cfg.dataset.seed == 9 and cfg.partition.seed == 9 and cfg.partition.num_clients == 4
    assert cfg.malicious is None
    assert cfg.sgd == RunConfig().sgd


def test_sections_comments_and_unbounded():
    text = MINIMAL.replace("budget = 2", "budget = unbounded  # everyone") + (
        "sgd.learning_rate = 0.1\npartition.scheme = pathological\npartition.classes_per_client = 2\n"
        "malicious.runs_ggc = false\n\n# trailing comment\n")
    cfg = parse_config(text)
    assert cfg.budget is None and cfg.sgd.learning_rate == 0.1
    assert cfg.partition.classes_per_client == 2 and cfg.malicious.runs_ggc is False
    assert cfg.malicious.fraction == 0.4


@pytest.mark.parametrize("extra, pattern", [
    ("colour = red\n", r"<config>:6: unknown key 'colour'"),
    ("sgd.epochs = 3\n", r":6: unknown key 'sgd.epochs'"),
    ("seed = 1\n", r":6: duplicate key 'seed'"),
    ("tau_init = many\n", r":6: bad value for 'tau_init'"),
    ("just words\n", r":6: expected 'key = value'"),
    ("malicious.runs_ggc = maybe\n", r":6: bad value"),
])
def test_line_numbered_errors(extra, pattern):
    with pytest.raises(ConfigError, match=pattern):
        parse_config(MINIMAL + extra)


def test_missing_key_is_named():
    with pytest.raises(ConfigError, match="missing required key 'budget'"):
        parse_config(MINIMAL.replace("budget = 2\n", ""))


def test_semantic_errors_surface():
    with pytest.raises(ConfigError):
        parse_config(MINIMAL.replace("mode = dpfl", "mode = gossip"))
    with pytest.raises(ConfigError, match="unsigned 64-bit"):
        parse_config(MINIMAL.replace("seed = 9", "seed = -1"))


def test_dump_round_trip(tmp_path):
    cfg = parse_config(MINIMAL + "malicious.fraction = 0.2\ncoin_mode = mixed\n")
    again = parse_config(dump_config(cfg))
    assert again == cfg
    path = tmp_path / "c.conf"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_with_seed_propagates():
    cfg = with_seed(parse_config(MINIMAL), 123)
    assert cfg.seed == cfg.dataset.seed == cfg.partition.seed == 123


def test_relative_natural_path(tmp_path):
    (tmp_path / "run.conf").write_text(MINIMAL + "partition.scheme = natural_file\npartition.path = data.csv\n")
    cfg = load_config(tmp_path / "run.conf")
    assert cfg.partition.path == str(tmp_path / "data.csv")


def test_unreadable_file():
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config("/nonexistent/x.conf")
