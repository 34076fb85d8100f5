import glob
import os

import pytest

from ovallab.config import load_config, parse_config
from ovallab.errors import ConfigError
from ovallab.selftest import validate_shipped_configs

from conftest import REPO

MINIMAL = """
name = "b"
[params]
n = 2
k = 1
[bowl]
"""


def test_minimal_config_gets_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.params.m == 1 and cfg.bowl == {"rho_max": 100.0, "tol": 1e-11, "h": 0.005}
    assert cfg.flow is None and cfg.output_dir.endswith("b")


def test_output_root_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("OVALLAB_OUT", str(tmp_path))
    assert parse_config(MINIMAL).output_dir == str(tmp_path / "b")


@pytest.mark.parametrize("text,key", [
    (MINIMAL.replace("k = 1", "k = 2"), "params"),
    (MINIMAL + "foo = 1\n", "bowl.foo"),
    (MINIMAL.replace("[bowl]", "[bowl]\nrho_max = \"far\""), "bowl.rho_max"),
    (MINIMAL.replace('name = "b"', ""), "name"),
    (MINIMAL + "[flow]\ntau0 = -100.0\ntau_end = -25.0\nd = [1.0, 2.0]\n", "flow.d"),
    (MINIMAL + "[flow]\ntau0 = -100.0\n", "flow.tau_end"),
    (MINIMAL + "[diagnostics]\nreports = [\"tip\", \"nope\"]\n", "diagnostics.reports[1]"),
    (MINIMAL + "[diagnostics]\nsource = \"cylinder\"\ntau = 3.0\n", "diagnostics.tau"),
    (MINIMAL + "[diagnostics]\n", "diagnostics.source"),
    (MINIMAL + "[ode]\ntau_from = -10.0\ntau_to = -20.0\n", "ode.tau_to"),
    (MINIMAL + "[compare]\nrun = \"x\"\n", "compare.window"),
])
def test_errors_name_the_key(text, key):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.key == key
    assert key in str(info.value)


def test_malformed_toml():
    with pytest.raises(ConfigError, match="malformed"):
        parse_config("name = ")


def test_int_is_accepted_for_float_but_not_bool_for_int():
    assert parse_config(MINIMAL.replace("[bowl]", "[bowl]\nrho_max = 50")).bowl["rho_max"] == 50.0
    with pytest.raises(ConfigError, match="expected int"):
        parse_config(MINIMAL.replace("n = 2", "n = true"))


def test_relative_paths_resolve_against_the_config(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(MINIMAL.replace('name = "b"', 'name = "b"\noutput_dir = "out/b"'))
    assert load_config(str(p)).output_dir == str(tmp_path / "out" / "b")


def test_shipped_configs_are_valid():
    root = os.path.join(REPO, "demos", "configs")
    assert len(glob.glob(os.path.join(root, "*.toml"))) >= 4
    assert validate_shipped_configs(root) == []
