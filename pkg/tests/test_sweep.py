import csv
import io
import json
import os

import numpy as np
import pytest

from holonomic import sweep as S
from holonomic.bath import rate_gamma
from holonomic.errors import ConfigError
from holonomic.units import ps_to_internal


def small(variable="T_over_Omega", lo=0.005, hi=0.05, count=3, **extra):
    raw = {
        "system": {"epsilon": "1 eV", "omega": 25.0, "t_ad_ps": 7.5},
        "bath": {"kind": "superohmic", "k3": 0.1},
        "sweep": {"variable": variable, "min": lo, "max": hi, "count": count},
        "sampling": {"n": 4},
    }
    for key, value in extra.items():
        section, name = key.split("__")
        raw.setdefault(section, {})[name] = value
    return raw


def parse_csv(text):
    rows = list(csv.reader(io.StringIO(S.data_section(text))))
    return rows[0], [[float(x) for x in r] for r in rows[1:]]


def test_grid_values():
    assert np.allclose(S.Grid(1.0, 3.0, 3).values(), [1, 2, 3])
    assert np.allclose(S.Grid(1.0, 100.0, 3, "log").values(), [1, 10, 100])
    for bad in [(2.0, 1.0, 3), (1.0, 2.0, 1), (0.0, 1.0, 3, "log"), (1.0, 2.0, 3, "cubic")]:
        with pytest.raises(ConfigError):
            S.Grid(*bad)


def test_resolve_defaults_and_units():
    cfg = S.resolve_config(small())
    assert cfg.system.epsilon == 1000.0
    assert cfg.system.t_ad == pytest.approx(ps_to_internal(7.5))
    assert cfg.integrator.propagator == "magnus4"
    assert cfg.samples == 4 and cfg.baths == (cfg.bath,)


def test_unknown_key_is_named():
    raw = small()
    raw["bath"]["k5"] = 1.0
    with pytest.raises(ConfigError, match="bath.k5"):
        S.resolve_config(raw)


def test_malformed_grid_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(small(lo=0.05, hi=0.01)))
    assert S.run_cli(["--config", str(path), "--quiet"]) == S.EXIT_CONFIG
    assert "sweep.min" in capsys.readouterr().err


@pytest.mark.parametrize(
    "raw, field",
    [
        (small(sweep__fixed_alpha=True), "fixed_alpha"),
        (small(bath__temperature=0.1, bath__T_over_Omega=0.01), "T_over_Omega"),
        (small(sweep__variable="omega"), "variable"),
        (small(output__format="xml"), "format"),
        (small(bath__kind="ohmic"), "bath"),
        (small(sweep__alpha=280), "alpha"),
        (small(variable="t_ad", lo="1 ps", hi="bad"), "sweep.max"),
    ],
)
def test_config_errors(raw, field):
    with pytest.raises(ConfigError, match=field):
        S.resolve_config(raw)


def test_sweep_kind_guards():
    cfg = S.resolve_config(small())
    with pytest.raises(ConfigError):
        S.sweep_coupling(cfg)
    with pytest.raises(ConfigError):
        S.sweep_adiabatic_time(cfg)
    cfg = S.resolve_config(small("t_ad", "5 ps", "10 ps"))
    with pytest.raises(ConfigError, match="fixed_alpha"):
        S.sweep_adiabatic_time(cfg)


def test_override_parsing():
    raw = S.apply_override(small(), "bath.k3=0.05")
    raw = S.apply_override(raw, "system.gate=gate2")
    cfg = S.resolve_config(raw)
    assert cfg.bath.spectral.k3 == 0.05 and cfg.system.gate.value == "gate2"
    with pytest.raises(ConfigError):
        S.apply_override(raw, "bath.k3")


@pytest.mark.parametrize("name", S.PRESETS)
def test_presets_resolve(name):
    cfg = S.resolve_config(S.load_preset(name))
    assert cfg.grid.count >= 2
    with pytest.raises(ConfigError):
        S.load_preset("fig9")


def test_preset_captions():
    fig1 = S.resolve_config(S.load_preset("fig1"))
    assert [b.spectral.k3 for b in fig1.baths] == [0.05, 0.1, 0.2]
    fig2 = S.resolve_config(S.load_preset("fig2"))
    assert fig2.alpha == 280 and fig2.bath.temperature == pytest.approx(8.5e-3 * 25.0)
    fig3 = S.resolve_config(S.load_preset("fig3"))
    assert [b.spectral.kind.value for b in fig3.baths] == ["superohmic", "ohmic", "mixed"]


def test_cli_csv_output(tmp_path):
    out = tmp_path / "out.csv"
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(small()))
    code = S.run_cli(["--config", str(cfg_path), "--set", "bath.k3=0.05", "--out", str(out), "--quiet"])
    assert code == S.EXIT_OK
    text = out.read_text()
    header = [line for line in text.splitlines() if line.startswith("#")]
    assert any("bath.k3=0.05" in line for line in header)
    assert any('"k3": 0.05' in line for line in header)
    assert any("hbar_meV_ps" in line for line in header)
    columns, rows = parse_csv(text)
    assert tuple(columns) == S.CSV_COLUMNS
    assert len(rows) == 3
    assert all(r[4] == 0.05 for r in rows)
    assert not [p for p in os.listdir(tmp_path) if p.endswith(".tmp")]


def test_cli_json_output(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(small(bath__k3=0.0)))
    out = tmp_path / "out.json"
    assert S.run_cli(["--config", str(cfg_path), "--format", "json", "--out", str(out), "--quiet"]) == 0
    payload = json.loads(out.read_text())
    assert len(payload["records"]) == 3
    assert payload["metadata"]["units"]["energy"] == "meV"
    assert payload["records"][0]["T_M_meV"] == "nan" or payload["records"][0]["T_M_meV"] == 0.0


def test_cli_numerical_failure(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    raw = small(bath__k3=0.2, integrator__positivity_abort=1e-6, integrator__positivity_every=10)
    cfg_path.write_text(json.dumps(raw))
    assert S.run_cli(["--config", str(cfg_path), "--quiet"]) == S.EXIT_NUMERICAL
    assert "numerical error" in capsys.readouterr().err


def test_cli_unwritable_output(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(small(bath__k3=0.0, sweep__count=2)))
    target = tmp_path / "missing" / "out.csv"
    assert S.run_cli(["--config", str(cfg_path), "--out", str(target), "--quiet"]) == S.EXIT_IO


def test_cli_requires_source():
    assert S.run_cli([]) == S.EXIT_CONFIG


def test_zero_bath_is_flat():
    cfg = S.resolve_config(small(bath__k3=0.0))
    records = S.sweep_temperature(cfg)
    assert all(abs(r.fidelity_mean - 1.0) < 1e-6 for r in records)


def test_rate_overlay_matches_bath_rates():
    raw = small("t_ad", "4 ps", "12 ps", sweep__fixed_alpha=True, sweep__alpha=280, bath__T_over_Omega=0.0085)
    cfg = S.resolve_config(raw)
    records = S.sweep_adiabatic_time(cfg)
    for r in records:
        omega = 280.0 / ps_to_internal(r.t_ad_ps)
        plus, minus = rate_gamma(cfg.bath, omega**2 / 1000.0)
        assert r.gamma_plus == pytest.approx(plus, rel=1e-12, abs=1e-300)
        assert r.gamma_minus == pytest.approx(minus, rel=1e-12)
        assert r.alpha == pytest.approx(280.0)
        assert r.temperature == pytest.approx(0.2125)


def test_derived_columns():
    cfg = S.resolve_config(small())
    r = S.run_sweep(cfg)[0]
    assert r.t_over_omega == pytest.approx(0.005)
    assert r.t_m == pytest.approx(0.1 * 0.625**3, rel=1e-12)
    assert r.tau_e == pytest.approx(1 / (2 * np.pi * r.temperature))
    assert r.fidelity_min <= r.fidelity_mean <= r.fidelity_max


def test_parallel_equals_serial():
    cfg = S.resolve_config(small(count=2))
    serial = S.render_csv(cfg, S.run_sweep(cfg, jobs=1))
    parallel = S.render_csv(cfg, S.run_sweep(cfg, jobs=2))
    assert serial == parallel


def test_coupling_sweep_limits():
    raw = small("k3", 0.0, 0.2, sweep__series=[{"T_over_Omega": 0.016}, {"T_over_Omega": 0.005}])
    records = S.sweep_coupling(S.resolve_config(raw))
    hot, cold = records[:3], records[3:]
    assert hot[0].fidelity_mean == pytest.approx(1.0, abs=1e-6)
    assert all(c.fidelity_mean > h.fidelity_mean for c, h in zip(cold[1:], hot[1:]))


def test_weak_coupling_linearity():
    raw = small("k3", 0.005, 0.05, count=4, sweep__spacing="log", bath__T_over_Omega=0.016)
    records = S.sweep_coupling(S.resolve_config(raw))
    slopes = np.array([(1 - r.fidelity_mean) / r.k3 for r in records])
    assert slopes.max() / slopes.min() - 1 < 0.1


def test_ohmic_degrades_below_superohmic():
    raw = small(count=3, sweep__series=[{"kind": "superohmic"}, {"kind": "mixed", "k1": 4e-4}])
    records = S.sweep_temperature(S.resolve_config(raw))
    sup, mix = records[:3], records[3:]
    assert all(m.fidelity_mean < s.fidelity_mean for s, m in zip(sup, mix))


def test_summary_table_lists_points():
    cfg = S.resolve_config(small(bath__k3=0.0, sweep__count=2))
    table = S.summary_table(S.run_sweep(cfg))
    assert len(table.splitlines()) == 3
