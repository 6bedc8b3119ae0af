import glob
import json
import os

import numpy as np
import pytest

from smp_lab.errors import ConfigurationError, ExpressionError
from smp_lab.scenario import load_scenario, parse_scenario

SCENARIOS = sorted(glob.glob(os.path.join(os.path.dirname(__file__), "..", "scenarios", "*.json")))


@pytest.mark.parametrize("path", SCENARIOS, ids=os.path.basename)
def test_shipped_scenarios_load(path):
    sc = load_scenario(path)
    assert sc.n_steps >= 2 and sc.n_paths >= 1
    assert len(sc.scenario_hash) == 64 and len(sc.config_digest) == 40


def test_defaults():
    sc = parse_scenario({"model": {"b": "x"}})
    assert sc.T == 1.0 and sc.n_steps == 100 and sc.seed == 0
    assert sc.delay_map().is_identity
    assert sc.solver.picard_tol == 1e-18 and sc.solver.basis.degree == 2
    assert sc.x0 == 0.0


def test_model_expressions_become_coefficients():
    sc = parse_scenario({"model": {"b": "x + 2*y", "sigma": "0.1*u", "g": "x^2", "x0": 1.5,
                                   "partials": {"b_x": 1}}, "delay": {"kind": "proportional", "a": 0.5}})
    cs = sc.coefficient_set()
    assert cs.b(0.0, 1.0, 2.0, 0.0, 0.0) == 5.0
    assert cs.g(3.0) == 9.0
    assert cs.partial("b_x")(0, 1, 1, 1, 1) == 1.0
    assert cs.partial("b_y")(0.0, 1.0, 1.0, 0.0, 0.0) == pytest.approx(2.0, rel=1e-6)
    d = sc.delay_map()
    assert d.tau_idx[-1, 0] == 50


def test_lq_block():
    sc = parse_scenario({"lq": {"A": [0.1, 0.2], "C": 1.0, "a": 0.25}})
    assert sc.lq.A == (0.1, 0.2) and sc.lq.a == 0.25
    assert sc.delay_map().tau_idx[-1, 0] == 25


@pytest.mark.parametrize("raw,msg", [
    ({"model": {}, "lq": {}}, "not both"),
    ({"lq": {}, "delay": {"kind": "proportional", "a": 0.5}}, "lq.a"),
    ({"gird": {}}, "unknown key gird"),
    ({"grid": {"T": 0}}, "grid.T"),
    ({"grid": {"n_steps": 1}}, "grid.n_steps"),
    ({"n_paths": 2.5}, "n_paths"),
    ({"seed": -1}, "seed"),
    ({"seed": True}, "seed"),
    ({"delay": {"kind": "warp"}}, "unknown delay kind"),
    ({"delay": {"kind": "proportional"}}, "delay.a"),
    ({"delay": {"kind": "proportional", "a": 2.0}}, r"a must lie in \(0,1\]"),
    ({"lq": {"a": 0.0}}, r"\(0,1\]"),
    ({"lq": {"Q": []}}, "non-empty"),
    ({"model": {"partials": {"b_w": "1"}}}, "model.partials.b_w"),
    ({"model": {"u_min": 1, "u_max": 0}}, "u_min"),
    ({"absde": {"driver": "y"}}, "absde.terminal"),
    ({"solver": {"damping": 0}}, "solver.damping"),
    ({"solver": {"variables": ["q"]}}, "solver.variables"),
    ({"check": {"eps": []}}, "check.eps"),
    ([], "JSON object"),
    ({}, "empty"),
])
def test_rejections(raw, msg):
    with pytest.raises(ConfigurationError, match=msg):
        parse_scenario(raw)


def test_expression_errors_name_their_field():
    with pytest.raises(ExpressionError, match="model.b") as exc:
        parse_scenario({"model": {"b": "x*+u"}})
    assert exc.value.token == "+"
    with pytest.raises(ExpressionError, match="absde.driver"):
        parse_scenario({"absde": {"driver": "x", "terminal": "w"}})


def test_json_errors_report_line_and_column(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "seed": 1,\n  "grid": {"T": }\n}\n')
    with pytest.raises(ConfigurationError, match=r"bad.json:3:\d+"):
        load_scenario(str(p))
    empty = tmp_path / "empty.json"
    empty.write_text("  \n")
    with pytest.raises(ConfigurationError, match="empty"):
        load_scenario(str(empty))
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_scenario(str(tmp_path / "missing.json"))


def test_hash_ignores_formatting_but_digest_does_not(tmp_path):
    raw = {"seed": 3, "model": {"b": "x"}}
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    a.write_text(json.dumps(raw))
    b.write_text(json.dumps(raw, indent=4))
    sa, sb = load_scenario(str(a)), load_scenario(str(b))
    assert sa.scenario_hash == sb.scenario_hash
    assert sa.config_digest != sb.config_digest


def test_overrides_change_the_hash():
    sc = parse_scenario({"seed": 3, "model": {"b": "x"}})
    other = sc.with_overrides(seed=4, n_paths=10)
    assert other.seed == 4 and other.n_paths == 10
    assert other.scenario_hash != sc.scenario_hash
    assert sc.with_overrides().scenario_hash == sc.scenario_hash
    with pytest.raises(ConfigurationError):
        sc.with_overrides(n_paths=0)


def test_control_respects_bounds():
    sc = parse_scenario({"model": {"control": "t", "u_min": 0, "u_max": 1}})
    u = sc.control()
    assert u.u_min == 0 and u.u_max == 1
    assert np.allclose(u.values[:, 0], sc.grid.nodes[:-1])
    with pytest.raises(ConfigurationError):
        parse_scenario({"model": {"control": "2", "u_max": 1}}).control()


def test_require():
    sc = parse_scenario({"model": {}})
    with pytest.raises(ConfigurationError, match="absde"):
        sc.require("absde")
    with pytest.raises(ConfigurationError, match="model or lq"):
        parse_scenario({"absde": {"terminal": "w"}}).require("model-or-lq")
