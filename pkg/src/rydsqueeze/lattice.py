"""Lattice geometry and soft-core coupling matrices.

All lengths are in units of the lattice spacing; the physical spacing only
enters through :mod:`rydsqueeze.planner`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidSpecError

# Slack used when comparing a lattice distance with the blockade radius.
_DIST_TOL = 1e-9

BOUNDARIES = ("open", "periodic")
POTENTIALS = ("soft-core-vdw", "sharp-cutoff")


@dataclass(frozen=True)
class LatticeSpec:
    """Hypercubic lattice in one or two dimensions."""

    lengths: tuple[int, ...]
    boundary: str = "open"

    def __post_init__(self):
        lengths = tuple(int(n) for n in np.atleast_1d(self.lengths))
        object.__setattr__(self, "lengths", lengths)
        if len(lengths) not in (1, 2):
            raise InvalidSpecError(f"dimension must be 1 or 2, got {len(lengths)}")
        if any(n < 1 for n in lengths):
            raise InvalidSpecError(f"all lattice lengths must be >= 1, got {lengths}")
        if self.boundary not in BOUNDARIES:
            raise InvalidSpecError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")

    @classmethod
    def chain(cls, length: int, boundary: str = "open") -> "LatticeSpec":
        return cls((length,), boundary)

    @classmethod
    def square(cls, side: int, boundary: str = "open") -> "LatticeSpec":
        return cls((side, side), boundary)

    @property
    def dimension(self) -> int:
        return len(self.lengths)

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.lengths))

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"


@dataclass(frozen=True)
class PotentialSpec:
    """Soft-core van der Waals potential or its sharp-cutoff idealisation.

    ``j_plateau`` is an angular frequency (rad per unit time).
    """

    kind: str = "soft-core-vdw"
    r_b: float = 1.0
    j_plateau: float = 1.0

    def __post_init__(self):
        if self.kind not in POTENTIALS:
            raise InvalidSpecError(f"potential kind must be one of {POTENTIALS}, got {self.kind!r}")
        if not self.r_b > 0:
            raise InvalidSpecError(f"r_b must be positive, got {self.r_b}")
        if not self.j_plateau > 0:
            raise InvalidSpecError(f"j_plateau must be positive, got {self.j_plateau}")

    def __call__(self, r):
        """Coupling strength at distance ``r`` (array-like, r > 0)."""
        r = np.asarray(r, dtype=float)
        if self.kind == "soft-core-vdw":
            return self.j_plateau / (1.0 + (r / self.r_b) ** 6)
        return np.where((r > 0) & (r <= self.r_b + _DIST_TOL), self.j_plateau, 0.0)


@dataclass(frozen=True, eq=False)
class CouplingMatrix:
    """Symmetric pair couplings ``J_ij`` plus derived aggregates.

    Attributes
    ----------
    values : ndarray, shape (N, N)
        Couplings with zero diagonal.
    j_bar : float
        Mean coupling, normalised so that ``(N-1) * j_bar == values.sum() / N``.
    n_b : int
        Number of sites other than a bulk reference site within ``r_b``
        (``-1`` when no potential was involved).
    b_parallel : ndarray, shape (N,)
        Longitudinal fields ``sum_j J_ij / 2``.
    """

    values: np.ndarray
    j_bar: float
    n_b: int = -1
    b_parallel: np.ndarray = field(default=None)
    lattice: LatticeSpec | None = None
    potential: PotentialSpec | None = None

    @property
    def n_sites(self) -> int:
        return self.values.shape[0]

    @property
    def nj_bar(self) -> float:
        """``N * j_bar``, the interaction scale the transverse drive is compared with."""
        return self.n_sites * self.j_bar

    @classmethod
    def from_matrix(cls, values, **kwargs) -> "CouplingMatrix":
        """Wrap an arbitrary symmetric matrix, symmetrising from its upper triangle."""
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise InvalidSpecError(f"coupling matrix must be square, got shape {values.shape}")
        upper = np.triu(values, 1)
        values = upper + upper.T
        n = values.shape[0]
        j_bar = values.sum() / (n * (n - 1)) if n > 1 else 0.0
        return cls(values=values, j_bar=float(j_bar), b_parallel=values.sum(axis=1) / 2, **kwargs)

    @classmethod
    def uniform(cls, n: int, j: float = 1.0) -> "CouplingMatrix":
        """All-to-all coupling of strength ``j``."""
        return cls.from_matrix(np.full((n, n), float(j)))

    def scaled(self, factor: float) -> "CouplingMatrix":
        return CouplingMatrix(
            values=self.values * factor,
            j_bar=self.j_bar * factor,
            n_b=self.n_b,
            b_parallel=self.b_parallel * factor,
            lattice=self.lattice,
            potential=self.potential,
        )


def build_lattice(spec: LatticeSpec) -> np.ndarray:
    """Integer site coordinates, shape (N, dimension), in row-major order."""
    axes = [np.arange(n) for n in spec.lengths]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def displacements(spec: LatticeSpec, coords: np.ndarray | None = None) -> np.ndarray:
    """Pairwise absolute displacement components, minimum image when periodic."""
    if coords is None:
        coords = build_lattice(spec)
    delta = np.abs(coords[:, None, :] - coords[None, :, :])
    if spec.periodic:
        lengths = np.asarray(spec.lengths)
        delta = np.minimum(delta, lengths - delta)
    return delta


def distance_matrix(spec: LatticeSpec) -> np.ndarray:
    delta = displacements(spec)
    return np.sqrt((delta.astype(float) ** 2).sum(axis=-1))


def reference_site(spec: LatticeSpec) -> int:
    """Bulk reference site: site 0 if periodic, else the site nearest the centre."""
    if spec.periodic:
        return 0
    coords = build_lattice(spec)
    center = (np.asarray(spec.lengths) - 1) / 2.0
    d2 = ((coords - center) ** 2).sum(axis=1)
    # argmin returns the lowest index among ties
    return int(np.argmin(d2))


def coupling_matrix(lattice: LatticeSpec, potential: PotentialSpec) -> CouplingMatrix:
    """Evaluate ``potential`` on every pair of lattice sites."""
    dist = distance_matrix(lattice)
    n = lattice.n_sites
    iu = np.triu_indices(n, 1)
    upper = np.zeros((n, n))
    upper[iu] = potential(dist[iu])
    values = upper + upper.T

    ref = reference_site(lattice)
    others = np.arange(n) != ref
    n_b = int(np.count_nonzero(dist[ref, others] <= potential.r_b + _DIST_TOL))

    j_bar = values.sum() / (n * (n - 1)) if n > 1 else 0.0
    return CouplingMatrix(
        values=values,
        j_bar=float(j_bar),
        n_b=n_b,
        b_parallel=longitudinal_field(values),
        lattice=lattice,
        potential=potential,
    )


def longitudinal_field(couplings) -> np.ndarray:
    """Site-resolved longitudinal field ``B_i = sum_j J_ij / 2``."""
    values = couplings.values if isinstance(couplings, CouplingMatrix) else np.asarray(couplings)
    return values.sum(axis=1) / 2.0


def translation_permutation(spec: LatticeSpec, shift: Sequence[int]) -> np.ndarray:
    """Site permutation ``p`` with ``p[i]`` the image of site ``i`` under a lattice shift.

    Only meaningful for periodic lattices.
    """
    coords = build_lattice(spec)
    lengths = np.asarray(spec.lengths)
    moved = (coords + np.asarray(shift)) % lengths
    return np.ravel_multi_index(tuple(moved.T), spec.lengths)
