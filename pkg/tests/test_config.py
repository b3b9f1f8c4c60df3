from dataclasses import fields
from pathlib import Path

import pytest

from feedback_urn.config import dumps_config, load_config, loads_config
from feedback_urn.errors import ConfigError

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = sorted((ROOT / "configs").rglob("*.toml"))

MINIMAL = """
[[scenario]]
name = "x"
[[scenario.regions]]
label = "A"
prior = 10
rate = 1.0
[[scenario.regions]]
label = "B"
prior = 5
rate = 2.0
"""


def test_shipped_configs_exist():
    names = {p.name for p in CONFIGS}
    assert {"urn.toml", "sepp.toml"} <= names


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.name)
def test_round_trip(path):
    exp = load_config(path)
    again = loads_config(dumps_config(exp))
    assert again == exp
    for a, b in zip(exp.scenarios, again.scenarios):
        for f in fields(a):
            assert getattr(a, f.name) == getattr(b, f.name), f.name


def test_full_urn_config_shape():
    exp = load_config(ROOT / "configs" / "full" / "urn.toml")
    assert len(exp.scenarios) == 12
    assert all(s.horizon_days == 1000 and s.reps == 1000 for s in exp.scenarios)
    assert {s.regions[0].prior for s in exp.scenarios} <= {609.0, 379.0}


def test_minimal_defaults():
    s = loads_config(MINIMAL).scenarios[0]
    assert s.engine.value == "urn"
    assert s.decay.p_d == 0.01
    assert not s.corrected


@pytest.mark.parametrize(
    "patch, where",
    [
        ("typo = 1\n", "config"),
        ('[[scenario]]\nname = "x"\nhorizon = 3\n', "horizon"),
    ],
)
def test_unknown_top_level_keys(patch, where):
    with pytest.raises(ConfigError, match=where):
        loads_config(patch + MINIMAL if where == "config" else patch)


@pytest.mark.parametrize(
    "extra",
    [
        "[scenario.decay]\np_d = 0.1\nspeed = 2\n",
        "[scenario.incident_mode]\nkind = 'mixed'\nw_d = 0.5\nw_r = 0.5\nw_x = 0\n",
    ],
)
def test_unknown_nested_keys(extra):
    with pytest.raises(ConfigError, match="unknown key"):
        loads_config(MINIMAL + extra)


def test_unknown_region_key():
    bad = MINIMAL.replace('rate = 2.0', 'rate = 2.0\ncolour = "red"')
    with pytest.raises(ConfigError, match="colour"):
        loads_config(bad)


@pytest.mark.parametrize(
    "text",
    [
        "not toml = = 1",
        "",
        MINIMAL + MINIMAL,  # duplicate names
        MINIMAL.replace('prior = 10\n', ''),
        MINIMAL + "[scenario.incident_mode]\nkind = 'mixed'\n",
        MINIMAL.replace('name = "x"', 'name = "x"\ncorrection = "sometimes"'),
        MINIMAL.replace('name = "x"', 'name = "x"\nengine = "quantum"'),
    ],
)
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        loads_config(text)
