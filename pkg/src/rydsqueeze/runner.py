"""Execution of validated configurations: simulate, scan, benchmark, plan.

All files are written by the calling process. Outputs that must be
byte-identical across reruns never contain wall-clock data; timings go to
separate ``*_timing`` files.
"""
from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import math
import os
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import SERIES_COLUMNS, ObservableSeries, n_b_tilde, optimal_squeezing
from .config import SCAN_AXES, ConfigError, PlanDocument, RunConfig, config_echo
from .engine import EnsembleSpec, _max_field, run_ensemble
from .errors import InvalidSpecError, RydSqueezeError
from .lattice import CouplingMatrix, LatticeSpec, PotentialSpec, coupling_matrix
from .models import DissipationSpec, ModelSpec, detuning
from .oracle import exact_series, ising_closed_form
from .planner import (
    TWO_PI,
    DressingParams,
    SpeciesRecord,
    constraint_check,
    dressed_dissipation,
    dressing_for_radius,
    dressing_from,
    fig3_overlay,
    get_species,
    lifetime,
    rows_to_csv,
)

log = logging.getLogger(__name__)

SCAN_COLUMNS = (
    "cell", "L", "r_b", "gamma_over_j0", "variant", "b_over_nj_bar", "n_sites", "n_b_tilde", "nj_bar",
    "xi2_opt", "xi2_opt_db", "xi2_err", "t_opt", "contrast", "collectivity", "boundary_minimum",
    "status", "error",
)  # fmt: skip
SCHEMA_VERSION = 1
JOURNAL = "scan_journal.jsonl"
ORACLE_FLOOR = 1e-9


@lru_cache(maxsize=1)
def version_string() -> str:
    """Package version plus the short commit hash when run from a checkout."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "-C", str(here), "rev-parse", "--short", "HEAD"],
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# --------------------------------------------------------------------------
# resolution: config -> simulation objects in dimensionless units
# --------------------------------------------------------------------------


@dataclass
class ResolvedRun:
    """Simulation inputs in units where time is measured in ``1 / rate_unit``.

    ``rate_unit`` is 1 for dimensionless configs and ``|J_plateau|`` in
    rad/s for physical ones, so output times are ``t_sim / rate_unit``.
    """

    config: RunConfig
    lattice: LatticeSpec
    couplings: CouplingMatrix
    model: ModelSpec
    dissipation: DissipationSpec
    ensemble: EnsembleSpec
    rate_unit: float = 1.0
    dressing: DressingParams | None = None
    species: SpeciesRecord | None = None
    notes: dict = field(default_factory=dict)

    @property
    def j_plateau(self) -> float:
        return self.couplings.potential.j_plateau

    @property
    def time_unit(self) -> str:
        return "s" if self.config.physical else "1/rate"


def _lattice(cfg: RunConfig) -> LatticeSpec:
    return LatticeSpec(tuple(cfg.lattice.lengths), cfg.lattice.boundary)


def resolve(cfg: RunConfig) -> ResolvedRun:
    lattice = _lattice(cfg)
    pot = cfg.potential
    kind = pot.kind if pot is not None else "soft-core-vdw"
    dressing = species = None
    if cfg.planner is not None:
        species = get_species(cfg.planner.species)
        if cfg.planner.omega_hz is not None:
            dressing = dressing_from(TWO_PI * cfg.planner.omega_hz, cfg.planner.f, species)
        else:
            dressing = dressing_for_radius(cfg.planner.r_b, cfg.planner.f, species)
        rate_unit, j_sim, r_b = dressing.j0_abs, 1.0, dressing.r_b
    elif pot.j_plateau_hz is not None:
        rate_unit, j_sim, r_b = TWO_PI * pot.j_plateau_hz, 1.0, pot.r_b
    else:
        rate_unit, j_sim, r_b = 1.0, (pot.j_plateau or 1.0), pot.r_b
    couplings = coupling_matrix(lattice, PotentialSpec(kind, r_b, j_sim))

    m = cfg.model
    variant, field_b = m.variant, 0.0
    if m.transverse_field is not None:
        field_b = m.transverse_field
    elif m.transverse_field_hz is not None:
        field_b = TWO_PI * m.transverse_field_hz / rate_unit
    elif m.b_over_nj_bar is not None:
        if math.isinf(m.b_over_nj_bar):
            variant = "XX_RWA"  # the infinite-drive limit
        else:
            field_b = m.b_over_nj_bar * couplings.nj_bar
    model = ModelSpec(variant, field_b, m.detuning_compensation, m.echo_pulse, m.include_longitudinal)

    d = cfg.dissipation
    if d.gamma_minus_over_j0 is not None or d.gamma_d_over_j0 is not None:
        dissipation = DissipationSpec((d.gamma_minus_over_j0 or 0.0) * j_sim, (d.gamma_d_over_j0 or 0.0) * j_sim)
    elif d.gamma_minus or d.gamma_d:
        dissipation = DissipationSpec(d.gamma_minus / rate_unit, d.gamma_d / rate_unit)
    elif dressing is not None and cfg.planner.dissipation:
        phys = dressed_dissipation(dressing, species)
        dissipation = DissipationSpec(phys.gamma_minus / rate_unit, phys.gamma_d / rate_unit)
    else:
        dissipation = DissipationSpec()

    e = cfg.ensemble
    ensemble = EnsembleSpec(
        n_traj=e.n_traj,
        dt=e.dt * rate_unit,
        t_max=e.t_max * rate_unit,
        sample_stride=e.sample_stride,
        master_seed=e.master_seed,
        initial_axis=e.initial_axis,
        block_size=e.block_size,
    )
    notes = {}
    if e.max_field_dt is not None:
        field_dt = _max_field(model, couplings, ensemble) * ensemble.dt
        k = max(1, math.ceil(field_dt / e.max_field_dt - 1e-12))
        if k > 1:
            ensemble = EnsembleSpec(
                n_traj=e.n_traj, dt=ensemble.dt / k, t_max=ensemble.t_max, sample_stride=e.sample_stride * k,
                master_seed=e.master_seed, initial_axis=e.initial_axis, block_size=e.block_size,
            )
        notes["substeps"] = k
    return ResolvedRun(cfg, lattice, couplings, model, dissipation, ensemble, rate_unit, dressing, species, notes)


def _rescale_time(series: ObservableSeries, rate_unit: float) -> ObservableSeries:
    if rate_unit == 1.0:
        return series
    return ObservableSeries(series.times / rate_unit, series.n_sites, series.mean, series.second,
                            series.mean_err, series.xi2_err, series.metadata)


def execute(run: ResolvedRun, workers: int | None = 1, solver: str | None = None) -> ObservableSeries:
    """Run the configured solver; returns the series in config time units."""
    solver = solver or run.config.solver
    ens = run.ensemble
    if solver == "dtwa":
        series = run_ensemble(run.model, run.couplings, run.dissipation, ens, workers=workers,
                              estimator=run.config.ensemble.estimator)
    elif solver == "exact":
        series = exact_series(run.model, run.couplings, ens.times, run.dissipation, ens.initial_axis)
    elif solver == "ising_closed_form":
        if run.model.variant != "Ising" or run.model.echo_pulse:
            raise InvalidSpecError("the closed-form solver handles the Ising variant without echo only")
        fields = None
        if run.model.include_longitudinal:
            fields = run.couplings.b_parallel - detuning(run.model, run.couplings)
        series = ising_closed_form(run.couplings, run.dissipation.gamma_minus, run.dissipation.gamma_d,
                                   ens.times, initial_axis=ens.initial_axis, fields=fields)
    else:
        raise InvalidSpecError(f"unknown solver {solver!r}")
    return _rescale_time(series, run.rate_unit)


# --------------------------------------------------------------------------
# output formatting
# --------------------------------------------------------------------------


def _num(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def series_csv(series: ObservableSeries) -> str:
    cols = series.table()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SERIES_COLUMNS)
    for k in range(len(series)):
        w.writerow([_num(cols[c][k]) for c in SERIES_COLUMNS])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def squeezing_summary(series: ObservableSeries) -> dict:
    res = optimal_squeezing(series)
    return {
        "xi2_opt": res.xi2_opt,
        "xi2_opt_db": res.xi2_opt_db,
        "xi2_opt_err": res.xi2_err,
        "t_opt": res.t_opt,
        "collectivity_at_opt": res.collectivity,
        "contrast_at_opt": res.contrast,
        "boundary_minimum": res.boundary_minimum,
    }


def _diagnostics(series: ObservableSeries) -> dict | None:
    diag = series.metadata.get("diagnostics")
    if diag is None:
        return None
    return {
        "max_norm_deviation": diag.max_norm_deviation,
        "max_integrator_drift": diag.max_integrator_drift,
        "max_energy_abs": diag.max_energy_abs,
        "max_energy_rel": diag.max_energy_rel,
        "max_field_dt": diag.max_field_dt,
        "echo_time": diag.echo_time,
    }


def run_summary(run: ResolvedRun, series: ObservableSeries) -> dict:
    summary = {
        "schema_version": SCHEMA_VERSION,
        "version": version_string(),
        "solver": run.config.solver,
        "master_seed": run.config.ensemble.master_seed,
        "n_sites": run.couplings.n_sites,
        "n_b_tilde": n_b_tilde(run.couplings.n_b),
        "nj_bar": run.couplings.nj_bar,
        "time_unit": run.time_unit,
        "rate_unit_rad_per_s": run.rate_unit if run.config.physical else None,
        "model": {"variant": run.model.variant, "transverse_field": run.model.transverse_field},
        "dissipation": {"gamma_minus": run.dissipation.gamma_minus, "gamma_d": run.dissipation.gamma_d},
        "dt": run.ensemble.dt / run.rate_unit,
        "substeps": run.notes.get("substeps", 1),
        "diagnostics": _diagnostics(series),
        "config": config_echo(run.config),
    }
    if run.dressing is not None:
        summary["dressing"] = run.dressing.as_dict()
    try:
        summary.update(squeezing_summary(series))
    except RydSqueezeError as exc:
        summary["squeezing_error"] = str(exc)
    return summary


def _check_finite(series: ObservableSeries):
    from .errors import NumericalError

    if not (np.all(np.isfinite(series.mean)) and np.all(np.isfinite(series.second))):
        raise NumericalError("non-finite observables")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def simulate(cfg: RunConfig, out_dir, workers: int | None = 1) -> dict:
    out_dir = Path(out_dir)
    start = time.perf_counter()
    run = resolve(cfg)
    series = execute(run, workers=workers)
    _check_finite(series)
    summary = run_summary(run, series)
    write_atomic(out_dir / cfg.outputs.timeseries, series_csv(series))
    write_atomic(out_dir / cfg.outputs.summary, dump_json(summary))
    write_atomic(out_dir / "run_timing.json", dump_json({"wall_time_s": time.perf_counter() - start}))
    return summary


def _axis_value(name, value):
    if name == "variant":
        return str(value)
    if name == "L":
        v = float(value)
        if v != int(v) or v < 1:
            raise ConfigError(f"scan axis L needs positive integers, got {value!r}")
        return int(v)
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"scan axis {name} needs numbers, got {value!r}") from None


def scan_cells(cfg: RunConfig) -> list[dict]:
    """Cartesian product of the scan axes, in the fixed axis order."""
    if cfg.scan is None:
        raise ConfigError("scan requires a 'scan' section with axes")
    names = [a for a in SCAN_AXES if a in cfg.scan.axes]
    values = [[_axis_value(a, v) for v in cfg.scan.axes[a]] for a in names]
    return [dict(zip(names, combo)) for combo in itertools.product(*values)]


def cell_config(cfg: RunConfig, cell: dict) -> RunConfig:
    from .config import parse_config

    data = cfg.model_dump(mode="python")
    data.pop("scan", None)
    if "L" in cell:
        data["lattice"]["lengths"] = [cell["L"]] * len(data["lattice"]["lengths"])
    if "r_b" in cell:
        if data.get("planner") is not None:
            data["planner"]["r_b"], data["planner"]["omega_hz"] = cell["r_b"], None
        else:
            data["potential"]["r_b"] = cell["r_b"]
    if "gamma_over_j0" in cell:
        data["dissipation"].update(gamma_minus_over_j0=cell["gamma_over_j0"], gamma_d_over_j0=cell["gamma_over_j0"])
    if "variant" in cell:
        data["model"]["variant"] = cell["variant"]
    if "b_over_nj_bar" in cell:
        ratio = cell["b_over_nj_bar"]
        data["model"].update(transverse_field=None, transverse_field_hz=None)
        if math.isinf(ratio):
            data["model"].update(variant="XX_RWA", b_over_nj_bar=None)
        else:
            data["model"].update(variant="LabFrameDriven", b_over_nj_bar=ratio, detuning_compensation=True)
    return parse_config(data)


def _cell_row(index: int, cell: dict, run: ResolvedRun | None, series, error: str | None) -> dict:
    row = dict.fromkeys(SCAN_COLUMNS)
    row["cell"] = index
    if run is not None:
        lengths = run.lattice.lengths
        row["L"] = lengths[0] if len(set(lengths)) == 1 else "x".join(map(str, lengths))
        row["r_b"] = run.couplings.potential.r_b
        row["gamma_over_j0"] = run.dissipation.gamma_minus / run.j_plateau
        row["variant"] = run.model.variant
        nj = run.couplings.nj_bar
        row["b_over_nj_bar"] = (run.model.transverse_field / nj if run.model.variant == "LabFrameDriven" and nj
                                else (math.inf if run.model.variant == "XX_RWA" else None))
        row["n_sites"] = run.couplings.n_sites
        row["n_b_tilde"] = n_b_tilde(run.couplings.n_b)
        row["nj_bar"] = nj
    row.update({k: v for k, v in cell.items()})
    if series is not None:
        try:
            res = optimal_squeezing(series)
            row.update(xi2_opt=res.xi2_opt, xi2_opt_db=res.xi2_opt_db, xi2_err=res.xi2_err, t_opt=res.t_opt,
                       contrast=res.contrast, collectivity=res.collectivity,
                       boundary_minimum=res.boundary_minimum)
        except RydSqueezeError as exc:
            error = str(exc)
    row["status"] = "ok" if error is None else "failed"
    row["error"] = error
    return row


def _cell_key(cell: dict) -> str:
    return json.dumps(_jsonable({k: (str(v) if isinstance(v, float) and math.isinf(v) else v)
                                 for k, v in cell.items()}), sort_keys=True)


def _config_hash(cfg: RunConfig) -> str:
    echo = config_echo(cfg)
    return hashlib.sha256(json.dumps(_jsonable(echo), sort_keys=True).encode()).hexdigest()


def _read_journal(path: Path, config_hash: str) -> dict[int, dict]:
    done: dict[int, dict] = {}
    if not path.exists():
        return done
    with open(path) as fh:
        lines = fh.read().splitlines()
    for k, line in enumerate(lines):
        try:
            entry = json.loads(line)
        except json.JSONDecodeError:
            if k == len(lines) - 1:
                break  # torn final write from an interrupted run
            raise ConfigError(f"corrupt scan journal {path} at line {k + 1}") from None
        if "config_hash" in entry:
            if entry["config_hash"] != config_hash:
                raise ConfigError(f"scan journal {path} belongs to a different configuration; "
                                  "rerun without --resume to start over")
            continue
        done[int(entry["cell"])] = entry
    return done


def scan_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCAN_COLUMNS)
    for row in sorted(rows, key=lambda r: r["cell"]):
        w.writerow([_num(row.get(c)) for c in SCAN_COLUMNS])
    return buf.getvalue()


def scan(cfg: RunConfig, out_dir, workers: int | None = 1, resume: bool = False,
         stop_after: int | None = None) -> list[dict]:
    """Run every scan cell, journaling each completed cell.

    ``stop_after`` ends the scan after that many newly computed cells
    without writing the final table (used to exercise resumption).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = scan_cells(cfg)
    chash = _config_hash(cfg)
    journal = out_dir / JOURNAL
    done = _read_journal(journal, chash) if resume else {}
    if not resume or not journal.exists():
        with open(journal, "w") as fh:
            fh.write(json.dumps({"config_hash": chash, "n_cells": len(cells)}) + "\n")

    computed = 0
    with open(journal, "a") as fh:
        for index, cell in enumerate(cells):
            if index in done:
                if done[index]["key"] != _cell_key(cell):
                    raise ConfigError("scan journal does not match the configured cells")
                continue
            if stop_after is not None and computed >= stop_after:
                return []
            start = time.perf_counter()
            run = series = error = None
            try:
                run = resolve(cell_config(cfg, cell))
                series = execute(run, workers=workers)
                _check_finite(series)
                if cfg.scan.save_series:
                    write_atomic(out_dir / cfg.outputs.series_dir / f"cell_{index:04d}.csv", series_csv(series))
            except (RydSqueezeError, MemoryError) as exc:
                error = f"{type(exc).__name__}: {exc}"
                log.warning("scan cell %d failed: %s", index, error)
            row = _cell_row(index, cell, run, series, error)
            entry = {"cell": index, "key": _cell_key(cell), "row": _jsonable(row),
                     "runtime_s": time.perf_counter() - start}
            fh.write(json.dumps(entry) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
            done[index] = entry
            computed += 1

    rows = [_restore_row(done[i]["row"]) for i in range(len(cells))]
    write_atomic(out_dir / cfg.outputs.scan, scan_csv(rows))
    timing = io.StringIO()
    tw = csv.writer(timing, lineterminator="\n")
    tw.writerow(("cell", "runtime_s"))
    for i in range(len(cells)):
        tw.writerow((i, repr(float(done[i]["runtime_s"]))))
    write_atomic(out_dir / "scan_timing.csv", timing.getvalue())
    return rows


def _restore_row(row: dict) -> dict:
    out = dict(row)
    if out.get("variant") == "XX_RWA" and out.get("b_over_nj_bar") is None:
        out["b_over_nj_bar"] = math.inf
    return out


def benchmark(cfg: RunConfig, out_dir, workers: int | None = 1) -> dict:
    """Engine against the exact oracle on the same configuration."""
    out_dir = Path(out_dir)
    run = resolve(cfg)
    dtwa = execute(run, workers=workers, solver="dtwa")
    exact = execute(run, solver="exact")
    a, b = optimal_squeezing(dtwa), optimal_squeezing(exact)
    grid = float(dtwa.times[1] - dtwa.times[0]) if len(dtwa) > 1 else float("nan")
    delta = dtwa.mean - exact.mean
    # differences below the oracle's own accuracy are not counted
    excess = np.maximum(np.abs(delta) - ORACLE_FLOOR, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(dtwa.mean_err > 0, excess / dtwa.mean_err, np.where(excess > 0, np.inf, 0.0))
    tol = cfg.benchmark
    d_db = a.xi2_opt_db - b.xi2_opt_db
    d_steps = (a.t_opt - b.t_opt) / grid
    report = {
        "version": version_string(),
        "n_sites": run.couplings.n_sites,
        "xi2_opt_db_dtwa": a.xi2_opt_db,
        "xi2_opt_db_exact": b.xi2_opt_db,
        "xi2_opt_err_dtwa": a.xi2_err,
        "delta_xi2_opt_db": d_db,
        "t_opt_dtwa": a.t_opt,
        "t_opt_exact": b.t_opt,
        "delta_t_opt": a.t_opt - b.t_opt,
        "delta_t_opt_steps": d_steps,
        "max_abs_delta_mean": float(np.abs(delta).max()),
        "max_z_score": float(z.max()),
        "tolerances": tol.model_dump(),
        "pass_xi2": abs(d_db) <= tol.tolerance_db,
        "pass_t_opt": abs(d_steps) <= tol.tolerance_steps + 1e-9,
        "pass_moments": bool(z.max() <= tol.z_max),
    }
    report["pass"] = report["pass_xi2"] and report["pass_t_opt"] and report["pass_moments"]
    write_atomic(out_dir / cfg.outputs.benchmark, dump_json(report))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("time", "xi2_dtwa", "xi2_exact", "dSx", "dSy", "dSz", "err_Sx", "err_Sy", "err_Sz"))
    xa, xb = dtwa.xi2, exact.xi2
    for k in range(len(dtwa)):
        w.writerow([_num(v) for v in (dtwa.times[k], xa[k], xb[k], *delta[k], *dtwa.mean_err[k])])
    write_atomic(out_dir / "benchmark_series.csv", buf.getvalue())
    return report


def _project_species(species: SpeciesRecord, n: int, quantum_defect: float | None) -> tuple[float, float, float]:
    """Spacing (um), C6 (rad/s um^6) and lifetime (us) carried to principal number ``n``."""
    if n == species.n:
        return species.spacing_um, species.c6, species.lifetime_us
    defect = species.quantum_defect if quantum_defect is None else quantum_defect
    if defect is None:
        raise InvalidSpecError(f"{species.label}: projecting to n={n} needs a quantum_defect")
    if not species.has_fit:
        raise InvalidSpecError(f"{species.label} has no decay fit; only n={species.n} is tabulated")
    s = (n - defect) / (species.n - defect)
    tau = lifetime(n, defect, species.a_fit, species.b_fit)[1]
    return species.spacing_um * s ** (7 / 3), species.c6 * s**11, tau


def plan(doc: PlanDocument, out_dir) -> dict:
    from dataclasses import asdict, replace

    from .planner import Quantity

    p = doc.plan
    out_dir = Path(out_dir)
    species = get_species(p.species)
    n = species.n if p.n is None else p.n
    spacing, c6, tau = _project_species(species, n, p.quantum_defect)
    target = species if n == species.n else replace(
        species, n=n, lattice_spacing=Quantity(spacing, "um"),
        c6_over_2pi=Quantity(c6 / TWO_PI / 1e9, "GHz um^6"), lifetime=Quantity(tau, "us"))
    if p.omega_hz is not None:
        params = dressing_from(TWO_PI * p.omega_hz, p.f, target)
    else:
        params = dressing_for_radius(p.r_b, p.f, target)
    lattice = LatticeSpec.square(14) if doc.lattice is None else LatticeSpec(tuple(doc.lattice.lengths),
                                                                            doc.lattice.boundary)
    unit = coupling_matrix(lattice, PotentialSpec("soft-core-vdw", params.r_b, 1.0))
    j_bar = unit.j_bar * params.j0_abs
    report = constraint_check(params, unit.n_sites, j_bar, require_drive=p.require_drive)
    diss = dressed_dissipation(params, target)
    result = {
        "version": version_string(),
        "species": {"label": species.label, "atom": species.atom, "state": species.state, "n": species.n,
                    "lattice_spacing": asdict(species.lattice_spacing),
                    "c6_over_2pi": asdict(species.c6_over_2pi), "lifetime": asdict(species.lifetime)},
        "n": n,
        "lattice_spacing_um": spacing,
        "lifetime_us": tau,
        "dressing": params.as_dict(),
        "lattice": {"lengths": list(lattice.lengths), "boundary": lattice.boundary},
        "n_sites": unit.n_sites,
        "nj_bar_hz": unit.n_sites * j_bar / TWO_PI,
        "constraints": report.as_dict(),
        "dissipation": {
            "gamma_minus_per_s": diss.gamma_minus,
            "gamma_d_per_s": diss.gamma_d,
            "gamma_minus_over_j0": diss.gamma_minus / params.j0_abs,
            "gamma_d_over_j0": diss.gamma_d / params.j0_abs,
        },
        "time_unit_s": 1.0 / params.j0_abs,
    }
    write_atomic(out_dir / doc.outputs.plan, dump_json(result))
    if p.overlay_r_b:
        rows = fig3_overlay(target, p.f, p.overlay_r_b, lattice, require_drive=p.require_drive)
        write_atomic(out_dir / doc.outputs.overlay, rows_to_csv(rows))
        result["overlay_rows"] = len(rows)
    return result
