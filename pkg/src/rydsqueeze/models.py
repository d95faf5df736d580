"""Hamiltonian variants, their classical spin fields, and dissipation rates.

Classical spins obey ``dS_i/dt = Omega_i x S_i`` with ``Omega_i = dH_cl/dS_i``.
With this convention a field along +x carries +z into -y, which is what the
Heisenberg equation gives for ``H = B s_x``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionError, InvalidSpecError, ResourceError
from .lattice import CouplingMatrix

VARIANTS = ("Ising", "XX_RWA", "LabFrameDriven", "OAT", "gOAT")
_ALIASES = {v.lower(): v for v in VARIANTS}
_ALIASES.update({"xx": "XX_RWA", "rwa": "XX_RWA", "lab": "LabFrameDriven", "driven": "LabFrameDriven"})

# Variants whose dynamics live in the frame of the transverse drive.
ROTATING_FRAME_VARIANTS = ("XX_RWA", "OAT", "gOAT")


def canonical_variant(name: str) -> str:
    try:
        return _ALIASES[str(name).lower()]
    except KeyError:
        raise InvalidSpecError(f"unknown model variant {name!r}; expected one of {VARIANTS}") from None


@dataclass(frozen=True)
class ModelSpec:
    """Which Hamiltonian drives the dynamics.

    ``transverse_field`` is only used by ``LabFrameDriven``, which always
    keeps the longitudinal terms. ``detuning_compensation`` subtracts the
    lattice-mean longitudinal field as a uniform detuning, and ``echo_pulse``
    requests a pi rotation about x halfway through the evolution.
    """

    variant: str = "XX_RWA"
    transverse_field: float = 0.0
    detuning_compensation: bool = False
    echo_pulse: bool = False
    include_longitudinal: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", canonical_variant(self.variant))
        if self.transverse_field < 0:
            raise InvalidSpecError(f"transverse field must be >= 0, got {self.transverse_field}")
        if self.variant == "LabFrameDriven":
            object.__setattr__(self, "include_longitudinal", True)

    @property
    def rotating_frame(self) -> bool:
        return self.variant in ROTATING_FRAME_VARIANTS


def rotating_frame_rates(gamma_minus: float, gamma_d: float) -> tuple[float, float, float]:
    """Dephasing rates ``(gamma_x, gamma_y, gamma_z)`` seen in the drive frame."""
    if gamma_minus < 0 or gamma_d < 0:
        raise InvalidSpecError(f"rates must be non-negative, got ({gamma_minus}, {gamma_d})")
    transverse = (gamma_minus + gamma_d) / 2
    return (float(gamma_minus), float(transverse), float(transverse))


def physical_rates(f: float, gamma_rg: float, gamma_re: float, gamma_eg: float = 0.0) -> tuple[float, float]:
    """Effective decay and dephasing rates of the dressed two-level system."""
    if not 0 < f < 1:
        raise InvalidSpecError(f"Rydberg fraction must lie in (0, 1), got {f}")
    if min(gamma_rg, gamma_re, gamma_eg) < 0:
        raise InvalidSpecError("decay rates must be non-negative")
    return (f * gamma_rg + (1 - f) * gamma_eg, f * gamma_re)


@dataclass(frozen=True)
class DissipationSpec:
    """Lab-frame decay (``s^-``) and dephasing rates, in rad per unit time."""

    gamma_minus: float = 0.0
    gamma_d: float = 0.0

    def __post_init__(self):
        if self.gamma_minus < 0 or self.gamma_d < 0:
            raise InvalidSpecError(f"rates must be non-negative, got ({self.gamma_minus}, {self.gamma_d})")

    @property
    def rotating_frame_rates(self) -> tuple[float, float, float]:
        return rotating_frame_rates(self.gamma_minus, self.gamma_d)

    @property
    def is_zero(self) -> bool:
        return self.gamma_minus == 0 and self.gamma_d == 0

    @classmethod
    def from_physical(cls, f, gamma_rg, gamma_re, gamma_eg=0.0) -> "DissipationSpec":
        return cls(*physical_rates(f, gamma_rg, gamma_re, gamma_eg))


def detuning(model: ModelSpec, couplings: CouplingMatrix) -> float:
    """Uniform compensating detuning (mean longitudinal field) or zero."""
    if model.variant == "LabFrameDriven" and model.detuning_compensation:
        return float(np.mean(couplings.b_parallel))
    return 0.0


def make_drift(model: ModelSpec, couplings: CouplingMatrix) -> Callable[[np.ndarray], np.ndarray] | None:
    """Return ``field(spins) -> Omega`` on component-major arrays (3, ..., N).

    Returns None when the field vanishes identically. The collective
    variants drop each spin's self-interaction, since ``(s_i^mu)^2 = 1/4``
    is a constant for spin 1/2.
    """
    J = couplings.values
    j_bar = couplings.j_bar
    variant = model.variant

    if variant in ("Ising", "LabFrameDriven"):
        h = couplings.b_parallel.copy() if model.include_longitudinal else np.zeros(couplings.n_sites)
        h = h - detuning(model, couplings)
        bx = model.transverse_field if variant == "LabFrameDriven" else 0.0
        if not J.any() and not h.any() and bx == 0:
            return None

        def field(spins):
            out = np.zeros_like(spins)
            out[0] = bx
            out[2] = spins[2] @ J + h
            return out

    elif variant == "XX_RWA":
        if not J.any():
            return None
        half_j = J / 2

        def field(spins):
            out = np.empty_like(spins)
            out[0] = 0.0
            out[1] = spins[1] @ half_j
            out[2] = spins[2] @ half_j
            return out

    elif variant == "OAT":
        if j_bar == 0:
            return None

        def field(spins):
            out = np.zeros_like(spins)
            sz = spins[2]
            out[2] = j_bar * (sz.sum(axis=-1, keepdims=True) - sz)
            return out

    else:  # gOAT
        if not J.any():
            return None

        def field(spins):
            out = spins @ J
            sx = spins[0]
            out[0] -= j_bar * (sx.sum(axis=-1, keepdims=True) - sx)
            return out

    return field


def _check_spins(spins, couplings):
    spins = np.asarray(spins, dtype=float)
    if spins.shape[-2:] != (couplings.n_sites, 3):
        raise DimensionError(f"spins of shape {spins.shape} do not match {couplings.n_sites} sites")
    return spins


def drift_field(model: ModelSpec, couplings: CouplingMatrix, spins, i: int | None = None) -> np.ndarray:
    """Effective field on site ``i`` (or all sites when ``i`` is None)."""
    spins = _check_spins(spins, couplings)
    field = make_drift(model, couplings)
    if field is None:
        omega = np.zeros_like(spins)
    else:
        omega = np.moveaxis(field(np.ascontiguousarray(np.moveaxis(spins, -1, 0))), 0, -1)
    return omega if i is None else omega[..., i, :]


def classical_energy(model: ModelSpec, couplings: CouplingMatrix, spins) -> np.ndarray:
    """Classical energy functional whose gradient is :func:`drift_field`."""
    spins = _check_spins(spins, couplings)
    J = couplings.values
    sx, sy, sz = spins[..., 0], spins[..., 1], spins[..., 2]

    def pair(a, b, mat):
        # sum_{i<j} mat_ij a_i b_j for symmetric mat with zero diagonal
        return 0.5 * ((a @ mat) * b).sum(axis=-1)

    variant = model.variant
    if variant in ("Ising", "LabFrameDriven"):
        h = couplings.b_parallel if model.include_longitudinal else np.zeros(couplings.n_sites)
        h = h - detuning(model, couplings)
        energy = pair(sz, sz, J) + sz @ h
        if variant == "LabFrameDriven":
            energy = energy + model.transverse_field * sx.sum(axis=-1)
        return energy
    if variant == "XX_RWA":
        return 0.5 * (pair(sy, sy, J) + pair(sz, sz, J))
    if variant == "OAT":
        tot = sz.sum(axis=-1)
        return couplings.j_bar / 2 * (tot**2 - (sz**2).sum(axis=-1))
    tot = sx.sum(axis=-1)
    return pair(sx, sx, J) + pair(sy, sy, J) + pair(sz, sz, J) - couplings.j_bar / 2 * (
        tot**2 - (sx**2).sum(axis=-1)
    )


def goat_decomposition_check(couplings: CouplingMatrix, max_sites: int = 10) -> float:
    """Largest entry of ``H_RWA - H_gOAT/2 - sum_{i<j} (J_bar - J_ij) s^x_i s^x_j / 2``.

    Both sides differ by the c-number ``-N J_bar / 16`` coming from
    ``(s_i^x)^2 = 1/4``; the comparison is made between traceless parts.
    """
    from .oracle import DenseOperatorSet

    n = couplings.n_sites
    if n > max_sites:
        raise ResourceError(f"dense decomposition check limited to {max_sites} sites, got {n}")
    ops = DenseOperatorSet(n)
    J = couplings.values
    lhs = ops.hamiltonian("XX_RWA", couplings)
    goat = ops.hamiltonian("gOAT", couplings)
    remainder = sum(
        (couplings.j_bar - J[i, j]) * ops.pair("x", i, "x", j) for i in range(n) for j in range(i + 1, n)
    )
    diff = lhs - 0.5 * goat - 0.5 * remainder
    dim = diff.shape[0]
    diff = diff - np.trace(diff) / dim * np.eye(dim)
    return float(np.max(np.abs(diff)))
