"""Parameter sweeps, figure presets and the ``simulate`` command line.

A config is a JSON document with sections ``system``, ``bath``, ``sweep``,
``integrator``, ``sampling`` and ``output``.  Energies are meV (strings may
carry ``meV``/``eV``), times are ps.  ``sweep.series`` optionally lists
bath overrides; every series is run over the same grid and the rows are
written series by series, grid point by grid point.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import os
import sys as _sys
import tempfile
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from . import __version__
from .bath import BathParams, DensityKind, SpectralDensity, markov_threshold, memory_time
from .dynamics import IntegratorConfig
from .errors import ConfigError, HolonomicError, NumericalError
from .fidelity import DEFAULT_ETA_SQ, DEFAULT_SAMPLES, averaged_fidelity, decay_rates, sample_initial_states
from .qsystem import Frame, Gate, SystemParams
from .units import UNITS_METADATA, internal_to_ps, parse_energy, parse_time_ps, ps_to_internal

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "sweep_value",
    "T_meV",
    "T_over_Omega",
    "k1",
    "k3_per_meV2",
    "t_ad_ps",
    "alpha",
    "gamma_plus_meV",
    "gamma_minus_meV",
    "T_M_meV",
    "tau_E",
    "fidelity_mean",
    "fidelity_min",
    "fidelity_max",
    "n_samples",
)

VARIABLES = ("T", "T_over_Omega", "k1", "k3", "t_ad")
PRESETS = ("fig1", "fig1_inset", "fig2", "fig3", "fig3_inset")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3

DEFAULTS = {
    "system": {"epsilon": 1000.0, "omega": 25.0, "t_ad_ps": 7.5, "gate": "gate1", "frame": "static"},
    "bath": {"kind": None, "k1": 0.0, "k3": 0.0, "omega_c": 0.5, "temperature": None, "T_over_Omega": None},
    "sweep": {
        "variable": "T_over_Omega",
        "min": None,
        "max": None,
        "count": 8,
        "spacing": "linear",
        "fixed_alpha": False,
        "alpha": None,
        "series": None,
    },
    "integrator": {
        "step_factor": 0.05,
        "positivity_every": 100,
        "propagator": "magnus4",
        "positivity_abort": 1e-2,
        "lamb_shift": False,
    },
    "sampling": {"n": DEFAULT_SAMPLES, "eta_sq": DEFAULT_ETA_SQ},
    "output": {"path": None, "format": "csv"},
}

# Regime limits flagged in adiabatic-time sweeps.
RATIO_LIMIT = 0.5
CUTOFF_RATIO_LIMIT = 1e-2


@dataclass(frozen=True)
class Grid:
    min: float
    max: float
    count: int
    spacing: str = "linear"

    def __post_init__(self):
        if self.count < 2:
            raise ConfigError("sweep.count must be >= 2")
        if not (math.isfinite(self.min) and math.isfinite(self.max)):
            raise ConfigError("sweep.min and sweep.max must be finite")
        if self.min > self.max:
            raise ConfigError(f"sweep.min ({self.min}) exceeds sweep.max ({self.max})")
        if self.spacing not in ("linear", "log"):
            raise ConfigError(f"sweep.spacing must be 'linear' or 'log', got {self.spacing!r}")
        if self.spacing == "log" and self.min <= 0:
            raise ConfigError("sweep.min must be positive for log spacing")

    def values(self) -> np.ndarray:
        if self.spacing == "log":
            return np.geomspace(self.min, self.max, self.count)
        return np.linspace(self.min, self.max, self.count)


@dataclass(frozen=True)
class SweepConfig:
    system: SystemParams
    bath: BathParams
    variable: str
    grid: Grid
    fixed_alpha: bool = False
    alpha: float | None = None
    series: tuple = ()
    samples: int = DEFAULT_SAMPLES
    eta_sq: float = DEFAULT_ETA_SQ
    integrator: IntegratorConfig = field(default_factory=lambda: IntegratorConfig(positivity_abort=1e-2))
    output: str | None = None
    resolved: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.variable not in VARIABLES:
            raise ConfigError(f"sweep.variable must be one of {VARIABLES}, got {self.variable!r}")
        if self.fixed_alpha and self.variable != "t_ad":
            raise ConfigError("sweep.fixed_alpha applies only to t_ad sweeps")
        if self.samples < 1:
            raise ConfigError("sampling.n must be >= 1")
        if self.variable in ("k1", "k3") and self.grid.min < 0:
            raise ConfigError("sweep.min must be >= 0 for coupling sweeps")
        if self.variable in ("T", "T_over_Omega") and self.grid.min < 0:
            raise ConfigError("sweep.min must be >= 0 for temperature sweeps")
        if self.variable == "t_ad" and self.grid.min <= 0:
            raise ConfigError("sweep.min must be positive for t_ad sweeps")

    @property
    def baths(self) -> tuple:
        return self.series or (self.bath,)


@dataclass(frozen=True)
class SweepRecord:
    sweep_value: float
    temperature: float
    t_over_omega: float
    k1: float
    k3: float
    t_ad_ps: float
    alpha: float
    gamma_plus: float
    gamma_minus: float
    t_m: float
    tau_e: float
    fidelity_mean: float
    fidelity_min: float
    fidelity_max: float
    n_samples: int
    wall_time: float = 0.0
    flags: tuple = ()

    def row(self) -> list:
        values = (
            self.sweep_value,
            self.temperature,
            self.t_over_omega,
            self.k1,
            self.k3,
            self.t_ad_ps,
            self.alpha,
            self.gamma_plus,
            self.gamma_minus,
            self.t_m,
            self.tau_e,
            self.fidelity_mean,
            self.fidelity_min,
            self.fidelity_max,
        )
        return [repr(float(v)) for v in values] + [str(self.n_samples)]


# ---------------------------------------------------------------- config


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a section")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(raw: dict, assignment: str) -> dict:
    """Apply one ``section.key=value`` override to a raw config dict."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form KEY=VALUE")
    key, text = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = raw
    for i, part in enumerate(parts[:-1]):
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"config key {'.'.join(parts[: i + 1])!r} is not a section")
    node[parts[-1]] = _parse_value(text)
    return raw


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("holonomic").joinpath("presets", f"{name}.json").read_text()
    return json.loads(text)


def _number(section: str, key: str, value, parser=float) -> float:
    try:
        return float(parser(value))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from None


def _density(kind, k1: float, k3: float, omega_c: float) -> SpectralDensity:
    if kind is None:
        if k1 > 0 and k3 > 0:
            kind = DensityKind.MIXED
        elif k1 > 0:
            kind = DensityKind.OHMIC
        else:
            kind = DensityKind.SUPEROHMIC
    try:
        return SpectralDensity(DensityKind(kind), k1=k1, k3=k3, omega_c=omega_c)
    except ValueError as exc:
        raise ConfigError(f"bath: {exc}") from None


def _bath(section: dict, omega: float, label: str = "bath") -> BathParams:
    k1 = _number(label, "k1", section["k1"])
    k3 = _number(label, "k3", section["k3"])
    omega_c = _number(label, "omega_c", section["omega_c"], parse_energy)
    temperature, ratio = section["temperature"], section["T_over_Omega"]
    if temperature is not None and ratio is not None:
        raise ConfigError(f"{label}: give either temperature or T_over_Omega, not both")
    if temperature is not None:
        t = _number(label, "temperature", temperature, parse_energy)
    elif ratio is not None:
        t = _number(label, "T_over_Omega", ratio) * omega
    else:
        t = 0.0
    if t < 0:
        raise ConfigError(f"{label}: temperature must be >= 0")
    return BathParams(_density(section["kind"], k1, k3, omega_c), t)


def resolve_config(raw: dict) -> SweepConfig:
    """Validate a raw config dict and build a :class:`SweepConfig`."""
    merged = _merge(DEFAULTS, raw)
    s, b, w = merged["system"], merged["bath"], merged["sweep"]
    epsilon = _number("system", "epsilon", s["epsilon"], parse_energy)
    omega = _number("system", "omega", s["omega"], parse_energy)
    t_ad_ps = _number("system", "t_ad_ps", s["t_ad_ps"], parse_time_ps)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            system = SystemParams(epsilon, omega, ps_to_internal(t_ad_ps), Gate(s["gate"]), Frame(s["frame"]))
    except ValueError as exc:
        raise ConfigError(f"system: {exc}") from None
    bath = _bath(b, omega)

    series = ()
    if w["series"] is not None:
        if not isinstance(w["series"], list) or not w["series"]:
            raise ConfigError("sweep.series must be a non-empty list of bath overrides")
        series = tuple(
            _bath(_merge(b, entry, f"sweep.series[{i}]."), omega, f"sweep.series[{i}]")
            for i, entry in enumerate(w["series"])
        )

    for key in ("min", "max"):
        if w[key] is None:
            raise ConfigError(f"sweep.{key} is required")
    variable = w["variable"]
    parser = parse_time_ps if variable == "t_ad" else (parse_energy if variable == "T" else float)
    try:
        count = int(w["count"])
    except (TypeError, ValueError):
        raise ConfigError("sweep.count must be an integer") from None
    grid = Grid(
        _number("sweep", "min", w["min"], parser),
        _number("sweep", "max", w["max"], parser),
        count,
        str(w["spacing"]),
    )
    alpha = None if w["alpha"] is None else _number("sweep", "alpha", w["alpha"])
    if alpha is not None and not w["fixed_alpha"]:
        raise ConfigError("sweep.alpha requires sweep.fixed_alpha = true")

    i = merged["integrator"]
    try:
        integrator = IntegratorConfig(
            step_factor=float(i["step_factor"]),
            positivity_every=int(i["positivity_every"]),
            propagator=str(i["propagator"]),
            positivity_abort=float(i["positivity_abort"]),
            lamb_shift=bool(i["lamb_shift"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"integrator: {exc}") from None

    fmt = merged["output"]["format"]
    if fmt not in ("csv", "json"):
        raise ConfigError(f"output.format must be 'csv' or 'json', got {fmt!r}")
    eta_sq = _number("sampling", "eta_sq", merged["sampling"]["eta_sq"])
    if not 0 <= eta_sq < 1:
        raise ConfigError("sampling.eta_sq must lie in [0, 1)")
    return SweepConfig(
        system=system,
        bath=bath,
        variable=variable,
        grid=grid,
        fixed_alpha=bool(w["fixed_alpha"]),
        alpha=alpha,
        series=series,
        samples=int(merged["sampling"]["n"]),
        eta_sq=eta_sq,
        integrator=integrator,
        output=merged["output"]["path"],
        resolved=merged,
    )


# ---------------------------------------------------------------- points


def _with_coupling(bath: BathParams, k1: float | None = None, k3: float | None = None) -> BathParams:
    sd = bath.spectral
    k1 = sd.k1 if k1 is None else k1
    k3 = sd.k3 if k3 is None else k3
    return replace(bath, spectral=_density(None, k1, k3, sd.omega_c))


def point_params(cfg: SweepConfig, bath: BathParams, value: float) -> tuple[SystemParams, BathParams]:
    """System and bath at one grid value of the swept variable."""
    system = cfg.system
    if cfg.variable == "T":
        bath = replace(bath, temperature=value)
    elif cfg.variable == "T_over_Omega":
        bath = replace(bath, temperature=value * system.omega)
    elif cfg.variable == "k1":
        bath = _with_coupling(bath, k1=value)
    elif cfg.variable == "k3":
        bath = _with_coupling(bath, k3=value)
    else:
        t_ad = ps_to_internal(value)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if cfg.fixed_alpha:
                alpha = cfg.alpha if cfg.alpha is not None else system.alpha
                system = replace(system, omega=alpha / t_ad, t_ad=t_ad)
            else:
                system = replace(system, t_ad=t_ad)
    return system, bath


def _flags(system: SystemParams, bath: BathParams) -> tuple:
    flags = []
    if system.omega / system.epsilon >= RATIO_LIMIT:
        flags.append("omega_over_epsilon")
    if bath.spectral.omega_c / system.epsilon >= CUTOFF_RATIO_LIMIT:
        flags.append("omega_c_over_epsilon")
    if system.alpha < 50:
        flags.append("low_alpha")
    return tuple(flags)


def _evaluate(job) -> SweepRecord:
    cfg, bath, value = job
    start = time.perf_counter()
    system, bath = point_params(cfg, bath, value)
    samples = sample_initial_states(cfg.samples, cfg.eta_sq)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = averaged_fidelity(system, bath, samples, cfg.integrator)
    plus, minus = decay_rates(system, bath)
    threshold = markov_threshold(system, bath.spectral)
    tau_e = memory_time(bath) if bath.temperature > 0 else math.inf
    return SweepRecord(
        sweep_value=float(value),
        temperature=bath.temperature,
        t_over_omega=bath.temperature / system.omega,
        k1=bath.spectral.k1,
        k3=bath.spectral.k3,
        t_ad_ps=internal_to_ps(system.t_ad),
        alpha=system.alpha,
        gamma_plus=plus,
        gamma_minus=minus,
        t_m=threshold.temperature,
        tau_e=tau_e,
        fidelity_mean=result.mean,
        fidelity_min=result.minimum,
        fidelity_max=result.maximum,
        n_samples=result.n_samples,
        wall_time=time.perf_counter() - start,
        flags=_flags(system, bath),
    )


def run_sweep(cfg: SweepConfig, jobs: int = 1) -> list[SweepRecord]:
    """Evaluate every (series, grid point); output order is independent of ``jobs``."""
    work = [(cfg, bath, float(v)) for bath in cfg.baths for v in cfg.grid.values()]
    if jobs <= 1:
        return [_evaluate(job) for job in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_evaluate, work))


def _require(cfg: SweepConfig, allowed: tuple, name: str) -> None:
    if cfg.variable not in allowed:
        raise ConfigError(f"{name} needs sweep.variable in {allowed}, got {cfg.variable!r}")


def sweep_temperature(cfg: SweepConfig, jobs: int = 1) -> list[SweepRecord]:
    _require(cfg, ("T", "T_over_Omega"), "sweep_temperature")
    return run_sweep(cfg, jobs)


def sweep_adiabatic_time(cfg: SweepConfig, jobs: int = 1) -> list[SweepRecord]:
    """Sweep t_ad at fixed alpha; Omega = alpha / t_ad at every point.

    The gamma columns are the golden-rule rates at Omega(t_ad)^2 / eps, the
    overlay for the predicted position of the fidelity minimum.
    """
    _require(cfg, ("t_ad",), "sweep_adiabatic_time")
    if not cfg.fixed_alpha:
        raise ConfigError("sweep_adiabatic_time needs sweep.fixed_alpha = true")
    return run_sweep(cfg, jobs)


def sweep_coupling(cfg: SweepConfig, jobs: int = 1) -> list[SweepRecord]:
    _require(cfg, ("k1", "k3"), "sweep_coupling")
    return run_sweep(cfg, jobs)


def dispatch(cfg: SweepConfig, jobs: int = 1) -> list[SweepRecord]:
    if cfg.variable in ("T", "T_over_Omega"):
        return sweep_temperature(cfg, jobs)
    if cfg.variable == "t_ad":
        return sweep_adiabatic_time(cfg, jobs) if cfg.fixed_alpha else run_sweep(cfg, jobs)
    return sweep_coupling(cfg, jobs)


# ---------------------------------------------------------------- output


def metadata(cfg: SweepConfig) -> dict:
    return {
        "code": "holonomic",
        "version": __version__,
        "units": UNITS_METADATA,
        "config": cfg.resolved,
    }


def render_csv(cfg: SweepConfig, records: list[SweepRecord]) -> str:
    buf = io.StringIO()
    meta = metadata(cfg)
    for key in ("code", "version"):
        buf.write(f"# {key}: {meta[key]}\n")
    buf.write(f"# units: {json.dumps(meta['units'], sort_keys=True)}\n")
    buf.write(f"# config: {json.dumps(meta['config'], sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for record in records:
        writer.writerow(record.row())
    return buf.getvalue()


def data_section(text: str) -> str:
    """The CSV without its ``#`` metadata header."""
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith("#"))


def render_json(cfg: SweepConfig, records: list[SweepRecord]) -> str:
    rows = []
    for record in records:
        row = dict(zip(CSV_COLUMNS, (float(x) for x in record.row()[:-1])))
        row["n_samples"] = record.n_samples
        row["flags"] = list(record.flags)
        rows.append(row)
    # json cannot carry inf/nan; keep them as strings
    payload = {"metadata": metadata(cfg), "records": rows}
    return json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_jsonable(v) for v in obj]
    return obj


def write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".sweep-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def summary_table(records: list[SweepRecord]) -> str:
    lines = [f"{'value':>12} {'T/Omega':>10} {'k1':>9} {'k3':>7} {'t_ad ps':>8} {'F mean':>10} {'wall s':>7}"]
    for r in records:
        lines.append(
            f"{r.sweep_value:12.5g} {r.t_over_omega:10.4g} {r.k1:9.3g} {r.k3:7.3g} "
            f"{r.t_ad_ps:8.3g} {r.fidelity_mean:10.6f} {r.wall_time:7.2f}"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------- CLI


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simulate", description="Fidelity sweeps of holonomic gates in a phonon bath.")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", help="JSON config file")
    source.add_argument("--preset", choices=PRESETS, help="built-in figure protocol")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted override, repeatable")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes")
    parser.add_argument("--out", help="output path (overrides output.path)")
    parser.add_argument("--format", choices=("csv", "json"), help="output format")
    parser.add_argument("--quiet", action="store_true", help="suppress the summary table")
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.preset:
            raw = load_preset(args.preset)
        else:
            with open(args.config) as fh:
                raw = json.load(fh)
        for assignment in args.set:
            raw = apply_override(raw, assignment)
        if args.out:
            raw = apply_override(raw, f"output.path={json.dumps(args.out)}")
        if args.format:
            raw = apply_override(raw, f"output.format={json.dumps(args.format)}")
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = resolve_config(raw)
        if args.set:
            cfg.resolved["overrides"] = list(args.set)
        records = dispatch(cfg, args.jobs)
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, HolonomicError) as exc:
        print(f"numerical error: {exc}", file=_sys.stderr)
        return EXIT_NUMERICAL

    fmt = cfg.resolved["output"]["format"]
    text = render_csv(cfg, records) if fmt == "csv" else render_json(cfg, records)
    path = cfg.output
    try:
        if path:
            write_atomic(path, text)
        else:
            _sys.stdout.write(text)
    except OSError as exc:
        print(f"I/O error: {exc}", file=_sys.stderr)
        return EXIT_IO
    if not args.quiet:
        print(summary_table(records), file=_sys.stderr)
    return EXIT_OK


def main() -> None:
    logging.basicConfig(level=logging.ERROR)
    raise SystemExit(run_cli())


if __name__ == "__main__":
    main()
