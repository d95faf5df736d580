"""Squeezing metrics, optimal-time extraction and scaling-scan reductions."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import AnalysisError, UndefinedSqueezingError

# Bloch vectors shorter than this fraction of N leave xi^2 undefined.
BLOCH_EPS = 1e-6

PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def to_db(x):
    return 10.0 * np.log10(x)


def _perp_basis(bhat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal pair spanning the plane orthogonal to unit vectors ``bhat`` (..., 3)."""
    # helper axis: the Cartesian axis least aligned with bhat
    helper = np.zeros_like(bhat)
    idx = np.argmin(np.abs(bhat), axis=-1)
    np.put_along_axis(helper, idx[..., None], 1.0, axis=-1)
    e1 = np.cross(bhat, helper)
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = np.cross(bhat, e1)
    return e1, e2


def _min_perp_variance(cov, e1, e2):
    v11 = np.einsum("...i,...ij,...j->...", e1, cov, e1)
    v22 = np.einsum("...i,...ij,...j->...", e2, cov, e2)
    v12 = np.einsum("...i,...ij,...j->...", e1, cov, e2)
    return (v11 + v22) / 2 - np.sqrt(((v11 - v22) / 2) ** 2 + v12**2)


def squeezing_array(mean, second, n_sites: int, basis=None) -> np.ndarray:
    """Vectorised Wineland parameter; NaN where the Bloch vector vanishes.

    ``mean`` has shape (..., 3) and ``second`` (..., 3, 3) holds symmetrised
    second moments. ``basis`` optionally overrides the perpendicular pair.
    """
    mean = np.asarray(mean, dtype=float)
    second = np.asarray(second, dtype=float)
    cov = second - mean[..., :, None] * mean[..., None, :]
    length = np.linalg.norm(mean, axis=-1)
    ok = length > BLOCH_EPS * n_sites
    safe = np.where(ok[..., None], mean, np.array([0.0, 0.0, 1.0]))
    bhat = safe / np.linalg.norm(safe, axis=-1, keepdims=True)
    e1, e2 = _perp_basis(bhat) if basis is None else basis(bhat)
    lam = _min_perp_variance(cov, e1, e2)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi2 = n_sites * lam / np.where(ok, length, 1.0) ** 2
    return np.where(ok, xi2, np.nan)


def squeezing_parameter(mean, second, n_sites: int) -> float:
    """Wineland squeezing ``N min Var(S_perp) / |<S>|^2`` at one time.

    Raises
    ------
    UndefinedSqueezingError
        If ``|<S>| <= 1e-6 N``.
    """
    xi2 = squeezing_array(mean, second, n_sites)
    if np.ndim(xi2) != 0:
        raise ValueError("squeezing_parameter expects moments at a single time")
    if np.isnan(xi2):
        raise UndefinedSqueezingError("Bloch vector vanishes; squeezing is undefined")
    return float(xi2)


def collectivity(second, n_sites: int):
    """``<S^2> / ((N/2)(N/2+1))`` from symmetrised second moments."""
    second = np.asarray(second, dtype=float)
    s2 = np.trace(second, axis1=-2, axis2=-1)
    return s2 / ((n_sites / 2) * (n_sites / 2 + 1))


@dataclass
class ObservableSeries:
    """Time-resolved collective moments of an N-spin system.

    ``second[t, mu, nu]`` holds ``<(S_mu S_nu + S_nu S_mu)/2>``.
    ``mean_err`` are standard errors of the first moments (zero for exact
    references); ``xi2_err`` is an optional bootstrap error on ``xi2``.
    """

    times: np.ndarray
    n_sites: int
    mean: np.ndarray
    second: np.ndarray
    mean_err: np.ndarray | None = None
    xi2_err: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        self.second = np.asarray(self.second, dtype=float)
        if self.mean_err is None:
            self.mean_err = np.zeros_like(self.mean)

    def __len__(self):
        return len(self.times)

    @property
    def s2(self) -> np.ndarray:
        return np.trace(self.second, axis1=-2, axis2=-1)

    @property
    def xi2(self) -> np.ndarray:
        return squeezing_array(self.mean, self.second, self.n_sites)

    @property
    def xi2_db(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return to_db(self.xi2)

    @property
    def contrast(self) -> np.ndarray:
        return np.linalg.norm(self.mean, axis=-1) / (self.n_sites / 2)

    @property
    def collectivity(self) -> np.ndarray:
        return collectivity(self.second, self.n_sites)

    def at(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        return self.mean[index], self.second[index]

    def table(self) -> dict[str, np.ndarray]:
        """Columns in the fixed CSV order."""
        xi2 = self.xi2
        with np.errstate(invalid="ignore"):
            xi2_db = to_db(xi2)
        cols = {"time": self.times}
        for k, name in enumerate("xyz"):
            cols[f"S{name}"] = self.mean[:, k]
        for a, b in PAIRS:
            cols["S" + "xyz"[a] + "xyz"[b]] = self.second[:, a, b]
        cols["S2"] = self.s2
        cols["xi2"] = xi2
        cols["xi2_db"] = xi2_db
        for k, name in enumerate("xyz"):
            cols[f"err_S{name}"] = self.mean_err[:, k]
        return cols


SERIES_COLUMNS = (
    "time", "Sx", "Sy", "Sz", "Sxx", "Syy", "Szz", "Sxy", "Sxz", "Syz",
    "S2", "xi2", "xi2_db", "err_Sx", "err_Sy", "err_Sz",
)  # fmt: skip


@dataclass(frozen=True)
class SqueezingResult:
    xi2_opt: float
    t_opt: float
    index: int
    contrast: float
    collectivity: float
    boundary_minimum: bool
    xi2_err: float = float("nan")

    @property
    def xi2_opt_db(self) -> float:
        return float(to_db(self.xi2_opt))


def optimal_squeezing(series: ObservableSeries) -> SqueezingResult:
    """On-grid minimum of ``xi2``; ties go to the earliest time."""
    if len(series) == 0:
        raise AnalysisError("empty series")
    xi2 = series.xi2
    if np.all(np.isnan(xi2)):
        raise AnalysisError("squeezing undefined at every time point")
    k = int(np.nanargmin(xi2))
    err = float(series.xi2_err[k]) if series.xi2_err is not None else float("nan")
    return SqueezingResult(
        xi2_opt=float(xi2[k]),
        t_opt=float(series.times[k]),
        index=k,
        contrast=float(series.contrast[k]),
        collectivity=float(series.collectivity[k]),
        boundary_minimum=k == len(series) - 1,
        xi2_err=err,
    )


# --------------------------------------------------------------------------
# scaling reductions
# --------------------------------------------------------------------------


def n_b_tilde(n_b: int) -> int:
    """Blockade neighbour count including the central site."""
    return n_b + 1


def crossing_size(sizes: Sequence[float], values: Sequence[float], level: float = 0.95):
    """Size where ``values`` first drops through ``level``, interpolated in log N.

    Returns ``(N, censored)``; if no crossing happens inside the scanned
    range, ``N`` is the largest size (a lower bound) and ``censored`` is True.
    """
    order = np.argsort(sizes)
    sizes = np.asarray(sizes, dtype=float)[order]
    values = np.asarray(values, dtype=float)[order]
    if values[0] < level:
        return float(sizes[0]), True
    for k in range(1, len(sizes)):
        if values[k] < level <= values[k - 1]:
            x0, x1 = np.log(sizes[k - 1]), np.log(sizes[k])
            frac = (values[k - 1] - level) / (values[k - 1] - values[k])
            return float(np.exp(x0 + frac * (x1 - x0))), False
    return float(sizes[-1]), True


def xi2_infinity(sizes: Sequence[int], xi2_opt: Sequence[float], rel_tol: float = 0.02):
    """Thermodynamic-limit estimate: largest-N value if it moved < ``rel_tol``.

    Returns ``(xi2_inf, censored)``.
    """
    order = np.argsort(sizes)
    vals = np.asarray(xi2_opt, dtype=float)[order]
    if len(vals) < 2:
        return float(vals[-1]), True
    change = abs(vals[-1] - vals[-2]) / vals[-2]
    return float(vals[-1]), bool(change >= rel_tol)


class OATCurve:
    """Optimal OAT squeezing as a function of atom number, for inversion.

    Values are computed on demand for integer N with the Dicke-basis oracle
    and checked to decrease strictly over the bracket used for inversion.
    """

    def __init__(self):
        self._cache: dict[int, float] = {}

    def __call__(self, n: int) -> float:
        from .oracle import oat_optimum

        n = int(n)
        if n not in self._cache:
            self._cache[n] = oat_optimum(n)[0]
        return self._cache[n]

    def invert(self, xi2_target: float, n_max: int = 1 << 20) -> tuple[float, bool]:
        """Effective OAT atom number reaching ``xi2_target``.

        Returns ``(N_OAT, censored)``; censored when the target is beyond
        ``n_max`` or not below the N=2 value.
        """
        lo = 2
        if xi2_target >= self(lo):
            return float(lo), True
        hi = 4
        while self(hi) > xi2_target:
            lo = hi
            hi *= 2
            if hi > n_max:
                return float(n_max), True
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if self(mid) > xi2_target:
                lo = mid
            else:
                hi = mid
        a, b = self(lo), self(hi)
        if not a > b:
            raise AnalysisError(f"OAT optimum not strictly decreasing between N={lo} and N={hi}")
        # interpolate log xi2 against log N between the bracketing integers
        frac = (np.log(a) - np.log(xi2_target)) / (np.log(a) - np.log(b))
        return float(np.exp(np.log(lo) + frac * (np.log(hi) - np.log(lo)))), False


def power_law_exponent(x: Iterable[float], y: Iterable[float]) -> float:
    """Least-squares slope of log y against log x."""
    slope, _ = np.polyfit(np.log(np.asarray(list(x), float)), np.log(np.asarray(list(y), float)), 1)
    return float(slope)


@dataclass
class ScanRow:
    n_sites: int
    r_b: float
    xi2_opt: float
    t_opt: float
    collectivity: float
    n_b_tilde: int


def scaling_scan(
    family: str,
    dimension: int,
    sides: Sequence[int],
    r_b_values: Sequence[float],
    *,
    potential_kind: str = "sharp-cutoff",
    boundary: str = "periodic",
    ensemble=None,
    times=None,
    workers: int = 1,
):
    """Optimal squeezing over a grid of sizes and blockade radii.

    ``family`` is ``"XX"`` (DTWA), ``"Ising"`` (exact closed form) or
    ``"OAT"`` (Dicke oracle with the lattice's mean coupling). Returns the
    per-cell rows and, per ``r_b``, ``N_OAT`` and ``N_0.95`` with censoring
    flags.
    """
    from .engine import EnsembleSpec, run_ensemble
    from .lattice import LatticeSpec, PotentialSpec, coupling_matrix
    from .models import DissipationSpec, ModelSpec
    from .oracle import ising_closed_form, oat_reference

    family = family.upper() if family.lower() != "ising" else "Ising"
    rows: list[ScanRow] = []
    for r_b in r_b_values:
        for side in sides:
            lat = LatticeSpec((side,) * dimension, boundary)
            cm = coupling_matrix(lat, PotentialSpec(potential_kind, r_b, 1.0))
            n = lat.n_sites
            if family == "XX":
                ens = ensemble if ensemble is not None else EnsembleSpec(n_traj=1000, dt=0.02, t_max=10.0)
                series = run_ensemble(ModelSpec("XX_RWA"), cm, DissipationSpec(), ens, workers=workers)
            elif family == "Ising":
                grid = times if times is not None else np.linspace(0, 10, 501)
                series = ising_closed_form(cm, times=grid)
            elif family == "OAT":
                grid = times if times is not None else np.linspace(0, 10, 501)
                series = oat_reference(n, cm.j_bar, grid)
            else:
                raise ValueError(f"unknown family {family!r}")
            res = optimal_squeezing(series)
            rows.append(ScanRow(n, float(r_b), res.xi2_opt, res.t_opt, res.collectivity, n_b_tilde(cm.n_b)))

    curve = OATCurve()
    summary = []
    for r_b in r_b_values:
        cells = sorted((r for r in rows if r.r_b == float(r_b)), key=lambda r: r.n_sites)
        sizes = [c.n_sites for c in cells]
        xi_inf, cens_inf = xi2_infinity(sizes, [c.xi2_opt for c in cells])
        n_oat, cens_oat = curve.invert(xi_inf)
        n95, cens95 = crossing_size(sizes, [c.collectivity for c in cells])
        summary.append(
            {
                "r_b": float(r_b),
                "n_b_tilde": cells[0].n_b_tilde,
                "xi2_inf": xi_inf,
                "n_oat": n_oat,
                "n_oat_censored": cens_inf or cens_oat,
                "n_095": n95,
                "n_095_censored": cens95,
            }
        )
    return rows, summary
