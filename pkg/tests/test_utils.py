import json
import math
import os

import numpy as np
import pytest

from fiberlim.fib_errors import ConfigError
from fiberlim.fib_material import RegimeTag
from fiberlim.fib_utils import load_scenario, vector_function, write_csv, write_json, write_nodal_table


def write_text(path, text):
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return str(path)


class TestScenarios:
    @pytest.mark.parametrize("name, tag", [
        ("critical", RegimeTag.CRITICAL),
        ("soft", RegimeTag.SOFT),
        ("stiff", RegimeTag.STIFF),
        ("flexion", RegimeTag.FLEXION),
        ("conjectural", RegimeTag.GAMMA_ZERO),
        ("regimes", RegimeTag.CRITICAL),
        ("quick", RegimeTag.CRITICAL),
    ])
    def test_shipped_scenarios(self, scenarios_dir, name, tag):
        scenario = load_scenario(os.path.join(scenarios_dir, f"{name}.toml"))
        assert scenario.regime == tag
        assert scenario.limit.tag() == tag

    def test_infinite_limits(self, scenarios_dir):
        stiff = load_scenario(os.path.join(scenarios_dir, "stiff.toml"))
        assert math.isinf(stiff.limit.gamma)
        assert math.isinf(stiff.effective().gamma)
        flexion = load_scenario(os.path.join(scenarios_dir, "flexion.toml"))
        assert flexion.effective().E_1 == pytest.approx(2.5)

    def test_defaults(self, tmp_path):
        scenario = load_scenario(write_text(tmp_path / "empty.toml", ""))
        assert scenario.regime == RegimeTag.CRITICAL
        assert scenario.grid.elements == [8, 8, 8]
        assert scenario.sweep.epsilons == [0.5, 0.354]
        assert scenario.base().lam == 1.0

    def test_overrides(self, scenarios_dir):
        scenario = load_scenario(os.path.join(scenarios_dir, "critical.toml"),
                                 {"out": "elsewhere", "threads": 3, "seed": None})
        assert scenario.out == "elsewhere"
        assert scenario.threads == 3
        assert scenario.seed == 0

    def test_json_with_string_infinity(self, tmp_path):
        document = {"name": "j", "regime": "StiffGammaInfinite", "limit": {"gamma": "inf"}}
        scenario = load_scenario(write_text(tmp_path / "stiff.json", json.dumps(document)))
        assert math.isinf(scenario.limit.gamma)

    def test_json_text_in_toml_file(self, tmp_path):
        text = json.dumps({"name": "from_json", "sweep": {"epsilons": [0.5, 0.25]}})
        scenario = load_scenario(write_text(tmp_path / "scenario.toml", text))
        assert scenario.name == "from_json"
        assert scenario.sweep.epsilons == [0.5, 0.25]

    def test_malformed_toml_names_the_format(self, tmp_path):
        with pytest.raises(ConfigError, match="Malformed TOML"):
            load_scenario(write_text(tmp_path / "bad.toml", "name = [unterminated"))

    @pytest.mark.parametrize("text", [
        'regime = "Soft"',
        "unknown_key = 1",
        '[load]\nf = ["0", "0", "x4"]',
        '[load]\nf = ["0", "0"]',
        "[grid]\nelements = [0, 2, 2]",
        "[material]\nmu = 0",
        '[limit]\nweight = "x1 +"',
        '[[families]]\nname = "bad"\nradius = "x1"\nlambda = "1"\nmu = "1"',
        "name = [unterminated",
    ])
    def test_invalid(self, tmp_path, text):
        with pytest.raises(ConfigError):
            load_scenario(write_text(tmp_path / "bad.toml", text))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_scenario(str(tmp_path / "absent.toml"))


class TestWriters:
    def test_json_is_stable(self, tmp_path):
        path = tmp_path / "out" / "data.json"
        write_json(str(path), {"b": math.inf, "a": np.float64(0.5), "c": np.array([1, 2])})
        text = path.read_text(encoding="utf-8")
        assert text.endswith("}\n")
        assert text.index('"a"') < text.index('"b"')
        assert json.loads(text) == {"a": 0.5, "b": "inf", "c": [1, 2]}

    def test_csv_uses_crlf_and_repr(self, tmp_path):
        path = tmp_path / "table.csv"
        write_csv(str(path), ["x", "label"], [[0.1, "w"], [np.float64(1 / 3), 2]])
        raw = path.read_bytes()
        assert raw == b"x,label\r\n0.1,w\r\n0.3333333333333333,2\r\n"

    def test_nodal_table(self, tmp_path):
        path = tmp_path / "fields.csv"
        write_nodal_table(str(path), np.zeros((2, 7)))
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "x,y,z,u1,u2,u3,v3"
        assert len(lines) == 3

    def test_vector_function(self):
        function = vector_function(["x1", "2", "x3^2"])
        np.testing.assert_allclose(function(np.array([[1.0, 5.0, 3.0]])), [[1.0, 2.0, 9.0]])
