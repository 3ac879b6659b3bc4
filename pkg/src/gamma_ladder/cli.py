"""Command-line front end: run configuration, orchestration, artifacts.

The config file is the single source of truth for all numerics; the only
values that flags or environment variables may override are the thread
count and the output directory, which cannot change any computed number.
With a fixed config the emitted artifacts are byte-identical across runs
and thread counts: per-n jobs are independent, and assembly is
single-threaded in n-order.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chains import empirical_measure, simulate_trajectory
from .errors import ConfigError, GammaLadderError, ValidationFailedError
from .expressions import load_catalog, parse_potential
from .landscape import Landscape, find_critical_points, validate_assumptions
from .reports import SCHEMA_VERSION, emit_reports, render_landscape_figure, write_json
from .verify import (
    ConvergenceTable,
    check_h1_rates,
    check_h5_separation,
    check_measure_ratios,
    dirac_recovery_table,
    extrapolate,
    level_recovery_table,
    saddle_recovery_table,
)

CLAIM_KINDS = ("rates", "mixtures", "saddle", "point", "ratios", "separation")
DEFAULT_TOLERANCES = {
    "rates": 0.10,  # relative, last row of each well-rate table
    "mixtures": 0.15,  # relative, mixture recovery vs reduced-chain functional
    "saddle": 0.15,  # relative, n * I_n vs the saddle curvature weight
    "point": 0.05,  # relative, I_n vs the escape-cost integrand
    "ratios": 1e-6,  # mass ratios and valley fractions (exponential decay)
    "mass": 1e-3,  # total valley mass vs 1
    "separation": 1e-2,  # relaxation-over-crossing ratio vs 0
}
_TOLERANCE_FAMILIES = (
    ("well-rate-", "rates"),
    ("mixture-recovery-", "mixtures"),
    ("saddle-recovery-", "saddle"),
    ("point-recovery-", "point"),
    ("mass-ratio-", "ratios"),
    ("valley-fraction-", "ratios"),
    ("valley-mass-", "mass"),
    ("well-relaxation-", "separation"),
)
ENV_THREADS = "GAMMA_LADDER_THREADS"
ENV_OUT = "GAMMA_LADDER_OUT"


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    """One verification run, fully determined by this record plus the seed."""

    potential: str
    dimension: int | None = None
    ns: tuple = (200, 400, 800, 1600)
    epsilon: float | None = None  # well-radius override
    epsilon_exponent: float = 0.4  # saddle cutoff window n^{-a}, 1/3 < a < 1/2
    levels: tuple | None = None  # depth scales to verify; None = all
    claims: tuple = ("rates", "mixtures", "saddle", "ratios", "separation")
    dirac_points: tuple = ()  # points for escape-cost recovery tables
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    seed: int = 1905
    out: str = "reports"
    threads: int = 1
    rate_level: int = 1  # level for the single-table `rates` subcommand
    simulate_n: int = 32
    horizon: float = 50.0
    start: int | None = None  # simulation start state; None = potential minimum


def config_from_dict(raw: dict) -> RunConfig:
    """Validate a parsed JSON object into a RunConfig.

    Every failure raises ConfigError naming the offending field; unknown
    fields are rejected so typos cannot silently fall back to defaults.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - known - {"schema_version"})
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")

    def _req(name, kind, value):
        if not isinstance(value, kind) or isinstance(value, bool):
            raise ConfigError(f"field '{name}': expected {kind.__name__}, got {value!r}")
        return value

    out: dict = {}
    if "potential" not in raw:
        raise ConfigError("field 'potential': required")
    out["potential"] = _req("potential", str, raw["potential"])
    if raw.get("dimension") is not None:
        dim = _req("dimension", int, raw["dimension"])
        if dim not in (1, 2):
            raise ConfigError(f"field 'dimension': must be 1 or 2, got {dim}")
        out["dimension"] = dim
    if "ns" in raw:
        ns = raw["ns"]
        if not isinstance(ns, (list, tuple)) or not ns:
            raise ConfigError("field 'ns': expected a nonempty list of integers")
        ns = tuple(_req("ns", int, v) for v in ns)
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ConfigError("field 'ns': grid must be strictly increasing")
        if ns[0] < 8:
            raise ConfigError("field 'ns': grid sizes start at 8")
        out["ns"] = ns
    if raw.get("epsilon") is not None:
        eps = float(_req("epsilon", (int, float), raw["epsilon"]))
        if eps <= 0.0:
            raise ConfigError("field 'epsilon': must be positive")
        out["epsilon"] = eps
    if "epsilon_exponent" in raw:
        a = float(_req("epsilon_exponent", (int, float), raw["epsilon_exponent"]))
        if not 1.0 / 3.0 < a < 0.5:
            raise ConfigError("field 'epsilon_exponent': must lie strictly between 1/3 and 1/2")
        out["epsilon_exponent"] = a
    if raw.get("levels") is not None:
        lv = raw["levels"]
        if not isinstance(lv, (list, tuple)) or not lv:
            raise ConfigError("field 'levels': expected a nonempty list of integers")
        lv = tuple(_req("levels", int, v) for v in lv)
        if any(v < 1 for v in lv) or len(set(lv)) != len(lv):
            raise ConfigError("field 'levels': must be distinct integers >= 1")
        out["levels"] = tuple(sorted(lv))
    if "claims" in raw:
        cl = raw["claims"]
        if not isinstance(cl, (list, tuple)):
            raise ConfigError("field 'claims': expected a list")
        bad = sorted(set(cl) - set(CLAIM_KINDS))
        if bad:
            raise ConfigError(f"field 'claims': unknown claim(s) {', '.join(map(str, bad))}")
        out["claims"] = tuple(dict.fromkeys(cl))
    if "dirac_points" in raw:
        pts = raw["dirac_points"]
        if not isinstance(pts, (list, tuple)):
            raise ConfigError("field 'dirac_points': expected a list of coordinate lists")
        coerced = []
        for x in pts:
            if not isinstance(x, (list, tuple)) or not x:
                raise ConfigError("field 'dirac_points': each point is a list of coordinates")
            coerced.append(tuple(float(_req("dirac_points", (int, float), v)) for v in x))
        out["dirac_points"] = tuple(coerced)
    if "tolerances" in raw:
        tol = raw["tolerances"]
        if not isinstance(tol, dict):
            raise ConfigError("field 'tolerances': expected an object")
        bad = sorted(set(tol) - set(DEFAULT_TOLERANCES))
        if bad:
            raise ConfigError(f"field 'tolerances': unknown key(s) {', '.join(bad)}")
        merged = dict(DEFAULT_TOLERANCES)
        for k, v in tol.items():
            v = float(_req(f"tolerances.{k}", (int, float), v))
            if v <= 0.0:
                raise ConfigError(f"field 'tolerances.{k}': must be positive")
            merged[k] = v
        out["tolerances"] = merged
    for name, kind in (("seed", int), ("threads", int), ("rate_level", int), ("simulate_n", int)):
        if name in raw:
            out[name] = _req(name, kind, raw[name])
    if out.get("threads", 1) < 1:
        raise ConfigError("field 'threads': must be >= 1")
    if out.get("rate_level", 1) < 1:
        raise ConfigError("field 'rate_level': must be >= 1")
    if out.get("simulate_n", 8) < 8:
        raise ConfigError("field 'simulate_n': grid sizes start at 8")
    if "out" in raw:
        out["out"] = _req("out", str, raw["out"])
    if "horizon" in raw:
        hz = float(_req("horizon", (int, float), raw["horizon"]))
        if hz <= 0.0:
            raise ConfigError("field 'horizon': must be positive")
        out["horizon"] = hz
    if raw.get("start") is not None:
        out["start"] = _req("start", int, raw["start"])
    config = RunConfig(**out)
    if "point" in config.claims and not config.dirac_points:
        raise ConfigError("field 'dirac_points': required when claims include 'point'")
    return config


def config_to_dict(config: RunConfig) -> dict:
    """Emit the full config with defaults materialized; inverse of parsing."""
    payload = {"schema_version": SCHEMA_VERSION}
    for f in dataclasses.fields(RunConfig):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = [list(v) if isinstance(v, tuple) else v for v in value]
        payload[f.name] = value
    return payload


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config {path} line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    return config_from_dict(raw)


def emit_config(config: RunConfig) -> str:
    return json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n"


def _resolve_landscape(config: RunConfig) -> Landscape:
    catalog = load_catalog()
    if config.potential in catalog:
        entry = catalog[config.potential]
        potential = parse_potential(entry["expression"], dim=entry["dim"])
    else:
        potential = parse_potential(config.potential, dim=config.dimension)
    if config.dimension is not None and potential.dim != config.dimension:
        raise ConfigError(
            f"field 'dimension': {config.dimension} does not match potential dim {potential.dim}"
        )
    return Landscape(potential, epsilon=config.epsilon)


def _run_meta(config: RunConfig) -> dict:
    """Config fields that determine the numbers; thread count and output
    directory are deliberately excluded so artifacts stay byte-identical."""
    payload = config_to_dict(config)
    for name in ("out", "threads"):
        payload.pop(name, None)
    return payload


# ---------------------------------------------------------------------------
# verification orchestration


def _selected_levels(landscape: Landscape, config: RunConfig) -> list:
    depth = landscape.depth_count
    if config.levels is None:
        return list(range(1, depth + 1))
    bad = [p for p in config.levels if p > depth]
    if bad:
        raise ConfigError(f"field 'levels': scale(s) {bad} exceed the depth count {depth}")
    return list(config.levels)


def _tables_for_n(landscape: Landscape, config: RunConfig, levels: list, n: int) -> list:
    """All selected one-row tables at a single grid size (one parallel job)."""
    tables: list = []
    if "rates" in config.claims:
        for p in levels:
            rate_tables = check_h1_rates(landscape, p, ns=(n,))
            tables.extend(tab for _, tab in sorted(rate_tables.items()))
    if "mixtures" in config.claims:
        for p in levels:
            states = landscape.ladder.levels[p - 1].reduced.states
            omega = {s: 1.0 / len(states) for s in states}
            table, _ = level_recovery_table(landscape, p, omega, ns=(n,))
            tables.append(table)
    if "saddle" in config.claims:
        table, _ = saddle_recovery_table(
            landscape, ns=(n,), epsilon_exponent=config.epsilon_exponent
        )
        tables.append(table)
    if "point" in config.claims:
        for x in config.dirac_points:
            table, _ = dirac_recovery_table(landscape, x, ns=(n,))
            tables.append(table)
    if "ratios" in config.claims:
        ratios = check_measure_ratios(landscape, ns=(n,), levels=levels)
        tables.extend(tab for _, tab in sorted(ratios.ratio_tables.items()))
        tables.extend(tab for _, tab in sorted(ratios.fraction_tables.items()))
        tables.extend(tab for _, tab in sorted(ratios.mass_tables.items()))
    if "separation" in config.claims:
        tables.append(check_h5_separation(landscape, ns=(n,)).table)
    return tables


def _merge_rows(per_n_tables: list) -> list:
    """Stitch per-n one-row tables into full tables, preserving claim order."""
    merged: dict = {}
    order: list = []
    for tables in per_n_tables:
        for t in tables:
            if t.claim not in merged:
                merged[t.claim] = ConvergenceTable(t.claim)
                order.append(t.claim)
            for n, value, target, _ in t.rows:
                merged[t.claim].add_row(n, value, target)
    return [merged[claim] for claim in order]


def _tolerance_for(claim: str, tolerances: dict) -> float:
    for prefix, family in _TOLERANCE_FAMILIES:
        if claim.startswith(prefix):
            return tolerances[family]
    return tolerances["rates"]


def collect_tables(landscape: Landscape, config: RunConfig, levels=None, threads=None) -> list:
    """Run the selected claims over the n-grid and judge every table.

    Distinct n are independent jobs over the shared immutable landscape;
    results are assembled in n-order on the calling thread, so the output
    does not depend on the worker count.
    """
    if levels is None:
        levels = _selected_levels(landscape, config)
    threads = config.threads if threads is None else threads
    # warm per-n chain construction in parallel; the cache keys are distinct
    if threads > 1 and len(config.ns) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_n = list(pool.map(lambda n: _tables_for_n(landscape, config, levels, n), config.ns))
    else:
        per_n = [_tables_for_n(landscape, config, levels, n) for n in config.ns]
    tables = _merge_rows(per_n)
    for table in tables:
        if len(table.rows) >= 3:
            extrapolate(table)
        table.judge(_tolerance_for(table.claim, config.tolerances))
    return tables


# ---------------------------------------------------------------------------
# subcommands


def _cmd_analyze(config: RunConfig) -> int:
    catalog = load_catalog()
    if config.potential in catalog:
        entry = catalog[config.potential]
        potential = parse_potential(entry["expression"], dim=entry["dim"])
    else:
        potential = parse_potential(config.potential, dim=config.dimension)
    out = Path(config.out)
    try:
        landscape = Landscape(potential, epsilon=config.epsilon)
    except ValidationFailedError:
        resolution = 256 if potential.dim == 1 else 64
        points = find_critical_points(potential, resolution, strict=False)
        report = validate_assumptions(potential, points)
        write_json(
            {"schema_version": SCHEMA_VERSION, "potential": potential.source,
             "validation": report},
            out / "landscape.json",
        )
        print(f"validation failed for {potential.source!r}:")
        for key, entry in report.items():
            if isinstance(entry, dict) and not entry.get("pass", True):
                detail = {k: v for k, v in entry.items() if k != "pass"}
                print(f"  {key}: {json.dumps(detail, sort_keys=True)}")
        return 1
    write_json(
        {"schema_version": SCHEMA_VERSION, **landscape.to_json_dict()},
        out / "landscape.json",
    )
    render_landscape_figure(landscape, out / "landscape.png")
    kinds = {"minimum": 0, "saddle": 0, "maximum": 0, "higher": 0}
    for p in landscape.critical_points:
        kinds[p.kind] = kinds.get(p.kind, 0) + 1
    print(f"potential: {landscape.potential.source} (dim {landscape.potential.dim})")
    print(f"critical points: {json.dumps(kinds, sort_keys=True)}")
    print(f"barrier height h = {landscape.wells.h}")
    print(f"depth scales: {landscape.wells.distinct_depths}")
    print(f"levels: {landscape.wells.level_labels}")
    print(f"wrote {out / 'landscape.json'} and {out / 'landscape.png'}")
    return 0


def _cmd_ladder(config: RunConfig) -> int:
    landscape = _resolve_landscape(config)
    out = Path(config.out)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "potential": landscape.potential.source,
        "depths": landscape.wells.distinct_depths,
        "ladder": landscape.ladder.to_json_dict(),
    }
    write_json(payload, out / "ladder.json")
    ladder = landscape.ladder
    print(f"{len(ladder.levels)} depth scale(s) over wells {list(ladder.base_states)}")
    for lv in ladder.levels:
        print(
            f"  scale {lv.level}: depth {lv.depth}, states {list(lv.reduced.states)}, "
            f"closed classes {lv.decomposition.closed}"
        )
    print(f"terminal measure: {json.dumps({str(k): v for k, v in ladder.terminal_measure.items()}, sort_keys=True)}")
    print(f"wrote {out / 'ladder.json'}")
    return 0


def _print_tables(tables: list) -> None:
    for table in tables:
        n, value, target, err = table.rows[-1]
        print(f"{table.verdict:4s} {table.claim}: n={n} value={value:.8g} "
              f"target={target:.8g} err={err:.3g} tol={table.tolerance:g}")


def _cmd_verify(config: RunConfig) -> int:
    landscape = _resolve_landscape(config)
    tables = collect_tables(landscape, config)
    emit_reports(tables, config.out, meta=_run_meta(config))
    _print_tables(tables)
    failures = sum(1 for t in tables if t.verdict == "fail")
    print(f"{len(tables)} claim(s), {failures} failing; reports in {config.out}")
    return 2 if failures else 0


def _cmd_rates(config: RunConfig) -> int:
    landscape = _resolve_landscape(config)
    p = config.rate_level
    if p > landscape.depth_count:
        raise ConfigError(
            f"field 'rate_level': scale {p} exceeds the depth count {landscape.depth_count}"
        )
    narrowed = dataclasses.replace(config, claims=("rates",), levels=(p,))
    tables = collect_tables(landscape, narrowed)
    emit_reports(tables, config.out, meta=_run_meta(narrowed))
    _print_tables(tables)
    failures = sum(1 for t in tables if t.verdict == "fail")
    return 2 if failures else 0


def _cmd_simulate(config: RunConfig) -> int:
    landscape = _resolve_landscape(config)
    chain = landscape.chain(config.simulate_n)
    if config.start is not None:
        if config.start not in chain.index:
            raise ConfigError(f"field 'start': state {config.start} not on the n={config.simulate_n} grid")
        start = config.start
    else:
        f_vals = landscape.potential.value(chain.site_coordinates)
        start = chain.states[int(np.argmin(f_vals))]
    sample = simulate_trajectory(chain, start, config.horizon, config.seed)
    occupation = empirical_measure(chain, sample)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    dim = landscape.potential.dim
    coord_header = ",".join(f"x{k + 1}" for k in range(dim))
    lines = [f"jump,time,state,{coord_header}"]
    for k, (state, t) in enumerate(zip(sample.states, sample.times)):
        coords = chain.site_coordinates[chain.index[state]]
        coord_text = ",".join(repr(float(c)) for c in np.atleast_1d(coords))
        lines.append(f"{k},{t!r},{state},{coord_text}")
    (out / "trajectory.csv").write_text("\n".join(lines) + "\n")
    lines = [f"state,{coord_header},occupation,stationary"]
    log_pi = chain.log_stationary
    for i, state in enumerate(chain.states):
        coords = chain.site_coordinates[i]
        coord_text = ",".join(repr(float(c)) for c in np.atleast_1d(coords))
        lines.append(f"{state},{coord_text},{occupation[state]!r},{math.exp(log_pi[i])!r}")
    (out / "empirical.csv").write_text("\n".join(lines) + "\n")
    print(f"simulated {len(sample.states)} jumps on the n={config.simulate_n} grid "
          f"up to t={config.horizon} from state {start}")
    print(f"wrote {out / 'trajectory.csv'} and {out / 'empirical.csv'}")
    return 0


_SUBCOMMANDS = {
    "analyze": _cmd_analyze,
    "ladder": _cmd_ladder,
    "verify": _cmd_verify,
    "rates": _cmd_rates,
    "simulate": _cmd_simulate,
}


def run(subcommand: str, config: RunConfig) -> int:
    """Execute one subcommand; returns the process exit code (0 / 2)."""
    if subcommand not in _SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    return _SUBCOMMANDS[subcommand](config)


# ---------------------------------------------------------------------------
# entry point


def _apply_overrides(config: RunConfig, args, environ) -> RunConfig:
    """Thread count and output directory only: flag beats env beats config."""
    updates: dict = {}
    if environ.get(ENV_OUT):
        updates["out"] = environ[ENV_OUT]
    if environ.get(ENV_THREADS):
        try:
            updates["threads"] = int(environ[ENV_THREADS])
        except ValueError as exc:
            raise ConfigError(f"{ENV_THREADS} must be an integer") from exc
    if args.out is not None:
        updates["out"] = args.out
    if args.threads is not None:
        updates["threads"] = args.threads
    if updates.get("threads", config.threads) < 1:
        raise ConfigError("thread count must be >= 1")
    return dataclasses.replace(config, **updates) if updates else config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gamma-ladder",
        description="Landscape analysis and rate-functional expansion checks "
        "for Gibbs random walks on the discrete torus.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, helptext in (
        ("analyze", "critical points, assumption checks, well structure"),
        ("ladder", "metastable hierarchy: depths, reduced chains, limit measures"),
        ("verify", "convergence tables for all selected expansion claims"),
        ("rates", "single sped-up mean-jump-rate table at one depth scale"),
        ("simulate", "sample a trajectory and its occupation measure"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--threads", type=int, default=None, help="worker threads (overrides config)")
    args = parser.parse_args(argv)
    try:
        config = parse_config(args.config)
        config = _apply_overrides(config, args, os.environ)
        return run(args.subcommand, config)
    except GammaLadderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
