"""Dissipative discrete truncated Wigner (DTWA) trajectory engine.

Trajectories are grouped into fixed-size blocks. Each block owns a random
stream derived from ``(master_seed, block_index)``, so the result does not
depend on how blocks are scheduled across workers. Observables are
accumulated as per-block sums and reduced in block order.
"""
from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analysis import ObservableSeries, squeezing_array
from .errors import InvalidSpecError, NumericalError
from .lattice import CouplingMatrix
from .models import DissipationSpec, ModelSpec, classical_energy, make_drift

log = logging.getLogger(__name__)

# max |Omega| dt above which a step-size warning is issued
STEP_WARN = 0.2
WORKERS_ENV = "RYDSQUEEZE_WORKERS"
N_BOOTSTRAP = 200

_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}


@dataclass
class TrajectoryState:
    """Classical spins, shape (..., N, 3), at a given time."""

    spins: np.ndarray
    time: float = 0.0

    @property
    def n_sites(self) -> int:
        return self.spins.shape[-2]


@dataclass(frozen=True)
class EnsembleSpec:
    """Trajectory count, time grid and seeding for one ensemble run.

    ``initial_sampling="mean_field"`` zeroes the transverse components
    instead of sampling them (a test hook for mean-field limits).
    """

    n_traj: int = 1000
    dt: float = 0.02
    t_max: float = 1.0
    sample_stride: int = 1
    master_seed: int = 0
    initial_axis: str = "z"
    block_size: int = 250
    initial_sampling: str = "discrete"

    def __post_init__(self):
        if self.n_traj < 1:
            raise InvalidSpecError("n_traj must be >= 1")
        if not self.dt > 0 or not self.t_max > 0:
            raise InvalidSpecError("dt and t_max must be positive")
        if self.sample_stride < 1 or self.block_size < 1:
            raise InvalidSpecError("sample_stride and block_size must be >= 1")
        if self.initial_axis not in _AXIS_INDEX:
            raise InvalidSpecError(f"initial_axis must be x, y or z, got {self.initial_axis!r}")
        if self.initial_sampling not in ("discrete", "mean_field"):
            raise InvalidSpecError(f"unknown initial_sampling {self.initial_sampling!r}")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_max / self.dt)))

    @property
    def record_steps(self) -> np.ndarray:
        return np.arange(0, self.n_steps + 1, self.sample_stride)

    @property
    def times(self) -> np.ndarray:
        return self.record_steps * self.dt

    @property
    def echo_step(self) -> int:
        return self.n_steps // 2

    def blocks(self) -> list[tuple[int, int]]:
        """``(block_index, size)`` for every trajectory block."""
        full, rest = divmod(self.n_traj, self.block_size)
        sizes = [self.block_size] * full + ([rest] if rest else [])
        return list(enumerate(sizes))


def block_rng(master_seed: int, block_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(master_seed) & (2**64 - 1), block_index])))


def _sample(n_sites, initial_axis, rng, size, sampling):
    """Component-major discrete Wigner sample, shape (3, size, N)."""
    if sampling == "discrete":
        spins = rng.integers(0, 2, size=(3, size, n_sites)).astype(float) - 0.5
    else:
        spins = np.zeros((3, size, n_sites))
    spins[_AXIS_INDEX[initial_axis]] = 0.5
    return spins


def sample_initial(n_sites: int, initial_axis: str, rng: np.random.Generator, size: int | None = None,
                   sampling: str = "discrete") -> TrajectoryState:
    """Discrete Wigner sample of the coherent state along ``initial_axis``.

    The polarised component is +1/2; each transverse component is +-1/2
    with equal probability, independently per spin.
    """
    spins = np.moveaxis(_sample(n_sites, initial_axis, rng, 1 if size is None else size, sampling), 0, -1)
    return TrajectoryState(spins[0] if size is None else spins, 0.0)


# Internal arrays are component-major, shape (3, B, N), so that each
# Cartesian component is contiguous.


def _cross(a, b):
    out = np.empty_like(b)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


def _rk4(spins, field, dt):
    if field is None:
        return spins

    def f(s):
        return _cross(field(s), s)

    k1 = f(spins)
    k2 = f(spins + 0.5 * dt * k1)
    k3 = f(spins + 0.5 * dt * k2)
    k4 = f(spins + dt * k3)
    return spins + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _longitudinal_only(model: ModelSpec) -> bool:
    """True when every spin's field points along z, so S_z is conserved."""
    return model.variant in ("Ising", "OAT") or (
        model.variant == "LabFrameDriven" and model.transverse_field == 0
    )


def _precess(spins, field, dt):
    """Exact step for a z-only field: rotation about z by ``Omega_z dt``."""
    _rotate(spins, 2, field(spins)[2] * dt)
    return spins


def _drift_step(spins, field, dt, norm0, exact_z):
    """Advance the coherent drift by ``dt``; return the pre-projection norm error."""
    if field is None:
        return spins, 0.0
    if exact_z:
        return _precess(spins, field, dt), 0.0
    spins = _rk4(spins, field, dt)
    return spins, _project(spins, norm0)


def _project(spins, norm0):
    """Rescale each spin to its conserved squared length; return the largest drift."""
    norm = (spins**2).sum(axis=0)
    spins *= np.sqrt(norm0 / norm)
    return float(np.abs(norm - norm0).max())


def _rotate(spins, axis: int, angles):
    """Rotate every spin about a Cartesian axis by per-spin angles (in place)."""
    a, b = (axis + 1) % 3, (axis + 2) % 3
    c, s = np.cos(angles), np.sin(angles)
    u = spins[a].copy()
    spins[a] = c * u - s * spins[b]
    spins[b] = s * u + c * spins[b]


def channel_rates(model: ModelSpec, dissipation: DissipationSpec | None) -> tuple[float, float, float]:
    """Dephasing rates about (x, y, z) applied as stochastic rotations."""
    if dissipation is None or dissipation.is_zero:
        return (0.0, 0.0, 0.0)
    if model.rotating_frame:
        return dissipation.rotating_frame_rates
    if dissipation.gamma_minus > 0 or model.variant == "LabFrameDriven":
        raise InvalidSpecError(
            f"{model.variant} runs support only pure dephasing in the engine; "
            "use the exact Ising solution for decay"
        )
    return (0.0, 0.0, dissipation.gamma_d)


def _noise(spins, rates, dt, rng, debug=False):
    active = [(axis, rate) for axis, rate in enumerate(rates) if rate > 0]
    if not active:
        return spins
    before = (spins**2).sum(axis=0) if debug else None
    draws = rng.standard_normal((len(active),) + spins.shape[1:])
    for k, (axis, rate) in enumerate(active):
        _rotate(spins, axis, draws[k] * np.sqrt(rate * dt))
    if debug:
        assert np.allclose((spins**2).sum(axis=0), before, rtol=0, atol=1e-12), "dephasing changed |S|"
    return spins


def apply_noise(spins, rates, dt, rng, debug: bool = False):
    """Random rotations about x, y, z with angle variance ``rate * dt``.

    ``spins`` has shape (..., N, 3); the result is returned (not in place).
    """
    cm = np.moveaxis(np.asarray(spins, dtype=float), -1, 0).copy()
    return np.moveaxis(_noise(cm, rates, dt, rng, debug), 0, -1)


def echo_pulse(spins):
    """Pi rotation about x: (x, y, z) -> (x, -y, -z), for spins of shape (..., 3)."""
    out = np.array(spins, dtype=float)
    out[..., 1:] *= -1
    return out


def step_trajectory(state: TrajectoryState, model: ModelSpec, couplings: CouplingMatrix,
                    dissipation: DissipationSpec | None, dt: float, rng: np.random.Generator,
                    debug: bool = False) -> TrajectoryState:
    """One drift step, then stochastic dephasing rotations.

    The drift is an RK4 step projected back onto each spin's sphere, or an
    exact precession when the field has only a z component.
    """
    spins = np.moveaxis(np.asarray(state.spins, dtype=float), -1, 0).copy()
    norm0 = (spins**2).sum(axis=0)
    spins, _ = _drift_step(spins, make_drift(model, couplings), dt, norm0, _longitudinal_only(model))
    _noise(spins, channel_rates(model, dissipation), dt, rng, debug=debug)
    if not np.all(np.isfinite(spins)):
        raise NumericalError(f"non-finite spin components at t={state.time + dt:g}")
    return TrajectoryState(np.moveaxis(spins, 0, -1), state.time + dt)


@dataclass
class BlockResult:
    index: int
    count: int
    first: np.ndarray  # (T, 3)   sum over trajectories of S_mu
    outer: np.ndarray  # (T, 3, 3) sum of S_mu S_nu (collective)
    diag: np.ndarray  # (T, 3, 3) sum of sum_i S_i^mu S_i^nu
    norm_dev: float = 0.0
    drift: float = 0.0  # largest per-step RK4 norm error before projection
    energy_abs: float = 0.0
    energy_rel: float = 0.0


def _run_block(task) -> BlockResult:
    index, size, model, couplings, dissipation, ens, debug = task
    rng = block_rng(ens.master_seed, index)
    n = couplings.n_sites
    spins = _sample(n, ens.initial_axis, rng, size, ens.initial_sampling)
    field_fn = make_drift(model, couplings)
    exact_z = _longitudinal_only(model)
    rates = channel_rates(model, dissipation)
    coherent = not any(rates)
    track_energy = coherent and not model.echo_pulse
    record = set(int(k) for k in ens.record_steps)
    n_rec = len(ens.record_steps)
    out = BlockResult(index, size, np.zeros((n_rec, 3)), np.zeros((n_rec, 3, 3)), np.zeros((n_rec, 3, 3)))

    def energy(s):
        return classical_energy(model, couplings, np.moveaxis(s, 0, -1))

    e0 = energy(spins) if track_energy else None
    norm0 = (spins**2).sum(axis=0)

    def accumulate(slot):
        tot = spins.sum(axis=2)  # (3, B)
        out.first[slot] = tot.sum(axis=1)
        out.outer[slot] = tot @ tot.T
        flat = spins.reshape(3, -1)
        out.diag[slot] = flat @ flat.T
        if coherent:
            out.norm_dev = max(out.norm_dev, float(np.abs((spins**2).sum(axis=0) - norm0).max()))
        if track_energy:
            de = np.abs(energy(spins) - e0)
            out.energy_abs = max(out.energy_abs, float(de.max()))
            nz = np.abs(e0) > 0
            if nz.any():
                out.energy_rel = max(out.energy_rel, float((de[nz] / np.abs(e0[nz])).max()))

    slot = 0
    accumulate(slot)
    slot += 1
    for step in range(1, ens.n_steps + 1):
        spins, drift = _drift_step(spins, field_fn, ens.dt, norm0, exact_z)
        out.drift = max(out.drift, drift)
        if not coherent:
            _noise(spins, rates, ens.dt, rng, debug=debug)
        if model.echo_pulse and step == ens.echo_step:
            spins[1:] *= -1
        if step in record:
            if not np.all(np.isfinite(spins)):
                raise NumericalError(f"non-finite spins in block {index} at step {step}")
            accumulate(slot)
            slot += 1
    return out


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, os.cpu_count() or 1))
    return max(1, int(workers))


def run_blocks(model, couplings, dissipation, ensemble: EnsembleSpec, workers: int | None = 1,
               debug: bool = False) -> list[BlockResult]:
    tasks = [(i, size, model, couplings, dissipation, ensemble, debug) for i, size in ensemble.blocks()]
    workers = min(resolve_workers(workers), len(tasks))
    if workers == 1:
        return [_run_block(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_block, tasks))


def _max_field(model, couplings, ensemble) -> float:
    rng = block_rng(ensemble.master_seed, 0)
    field_fn = make_drift(model, couplings)
    if field_fn is None:
        return 0.0
    probe = _sample(couplings.n_sites, ensemble.initial_axis, rng, 4, ensemble.initial_sampling)
    return float(np.linalg.norm(field_fn(probe), axis=0).max())


ESTIMATORS = ("classical", "diagonal_corrected")


def _second(outer, diag, n_sites, estimator):
    if estimator == "classical":
        return outer
    return corrected_second(outer, diag, n_sites)


def reduce_blocks(blocks: list[BlockResult], n_sites: int, estimator: str = "classical"):
    """Combine block sums in index order into means, moments and errors."""
    blocks = sorted(blocks, key=lambda b: b.index)
    count = sum(b.count for b in blocks)
    first = np.zeros_like(blocks[0].first)
    outer = np.zeros_like(blocks[0].outer)
    diag = np.zeros_like(blocks[0].diag)
    for b in blocks:
        first += b.first
        outer += b.outer
        diag += b.diag
    mean = first / count
    raw_second = outer / count
    second = _second(raw_second, diag / count, n_sites, estimator)
    if count > 1:
        var = (np.diagonal(raw_second, axis1=1, axis2=2) - mean**2) * count / (count - 1)
        err = np.sqrt(np.maximum(var, 0.0) / count)
    else:
        err = np.zeros_like(mean)
    return mean, second, err


def corrected_second(raw_second, raw_diag, n_sites):
    """Replace the same-site classical products by their exact spin-1/2 values.

    ``(s_i^mu s_i^nu + s_i^nu s_i^mu)/2 = delta_{mu nu}/4``.
    """
    return raw_second - raw_diag + np.eye(3) * (n_sites / 4)


def bootstrap_xi2(blocks: list[BlockResult], n_sites: int, seed: int, n_boot: int = N_BOOTSTRAP,
                  estimator: str = "classical"):
    """Standard deviation of xi^2 over block-bootstrap resamples (NaN if < 2 blocks)."""
    n_rec = blocks[0].first.shape[0]
    if len(blocks) < 2:
        return np.full(n_rec, np.nan)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), 0xB007]))
    first = np.stack([b.first for b in blocks])
    outer = np.stack([b.outer for b in blocks])
    diag = np.stack([b.diag for b in blocks])
    counts = np.array([b.count for b in blocks], dtype=float)
    picks = rng.integers(0, len(blocks), size=(n_boot, len(blocks)))
    w = np.stack([np.bincount(p, minlength=len(blocks)) for p in picks]).astype(float)  # (B, nb)
    tot = w @ counts
    mean = np.einsum("kb,btm->ktm", w, first) / tot[:, None, None]
    raw = np.einsum("kb,btmn->ktmn", w, outer) / tot[:, None, None, None]
    dg = np.einsum("kb,btmn->ktmn", w, diag) / tot[:, None, None, None]
    xi2 = squeezing_array(mean, _second(raw, dg, n_sites, estimator), n_sites)
    with np.errstate(invalid="ignore"):
        return np.nanstd(xi2, axis=0, ddof=1)


@dataclass
class RunDiagnostics:
    """Conservation and step-size diagnostics of one ensemble run.

    ``max_integrator_drift`` is the largest per-step RK4 norm error that the
    projection removed; ``max_norm_deviation`` is measured on the output.
    """

    max_norm_deviation: float
    max_energy_abs: float
    max_energy_rel: float
    max_field_dt: float
    max_integrator_drift: float = 0.0
    echo_time: float | None = None
    extra: dict = field(default_factory=dict)


def run_ensemble(model: ModelSpec, couplings: CouplingMatrix, dissipation: DissipationSpec | None,
                 ensemble: EnsembleSpec, workers: int | None = 1, debug: bool = False,
                 bootstrap: bool = True, estimator: str = "classical") -> ObservableSeries:
    """Ensemble-averaged collective observables on the recording grid.

    ``estimator="classical"`` averages the full classical products
    ``S^mu S^nu`` including same-site terms; ``"diagonal_corrected"`` swaps
    the same-site terms for their exact spin-1/2 values. The classical
    estimator tracks exact dynamics far better and is the default.

    Results are bit-identical for any ``workers`` given the same
    ``ensemble`` (the block decomposition depends only on ``block_size``).
    """
    if estimator not in ESTIMATORS:
        raise InvalidSpecError(f"estimator must be one of {ESTIMATORS}, got {estimator!r}")
    channel_rates(model, dissipation)  # validates the model/dissipation pairing
    n = couplings.n_sites
    field_dt = _max_field(model, couplings, ensemble) * ensemble.dt
    if field_dt > STEP_WARN:
        warnings.warn(f"max |Omega| dt = {field_dt:.3f} exceeds {STEP_WARN}; reduce dt", RuntimeWarning)
    if model.echo_pulse and ensemble.n_steps % 2:
        warnings.warn("odd step count: echo pulse is applied half a step early", RuntimeWarning)

    blocks = run_blocks(model, couplings, dissipation, ensemble, workers=workers, debug=debug)
    times = ensemble.times
    mean, second, err = reduce_blocks(blocks, n, estimator)
    xi2_err = bootstrap_xi2(blocks, n, ensemble.master_seed, estimator=estimator) if bootstrap else None
    diag = RunDiagnostics(
        max_norm_deviation=max(b.norm_dev for b in blocks),
        max_energy_abs=max(b.energy_abs for b in blocks),
        max_energy_rel=max(b.energy_rel for b in blocks),
        max_field_dt=field_dt,
        max_integrator_drift=max(b.drift for b in blocks),
        echo_time=ensemble.echo_step * ensemble.dt if model.echo_pulse else None,
    )
    meta = {"method": "dtwa", "n_traj": ensemble.n_traj, "master_seed": ensemble.master_seed,
            "dt": ensemble.dt, "estimator": estimator, "diagnostics": diag}
    if not np.all(np.isfinite(mean)):
        raise NumericalError("non-finite ensemble means")
    return ObservableSeries(times, n, mean, second, mean_err=err, xi2_err=xi2_err, metadata=meta)
