"""Rydberg-dressing parameter planning.

Converts a species, Rydberg fraction and Rabi frequency into the soft-core
potential used by the simulators, projects parameters to other principal
quantum numbers, and checks experimental limits.

Frequencies are stored as ordinary frequencies in Hz wherever a value is
shown to a user (``*_hz`` names); angular quantities (``omega``, ``delta``,
``j0``, rates) are in rad/s. The 2 pi conversion happens only here.
"""
from __future__ import annotations

import csv
import difflib
import io
import math
import warnings
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np
import yaml
from scipy.optimize import brentq

from .errors import InvalidSpecError
from .lattice import LatticeSpec, PotentialSpec, coupling_matrix
from .models import DissipationSpec, physical_rates

TWO_PI = 2 * math.pi
OMEGA_MAX = TWO_PI * 10e6  # rad/s
NJ_BAR_MAX = TWO_PI * 20e3  # rad/s
WEAK_DRESSING_WARN = 0.05
# transverse-field to interaction ratios offered as finite-drive presets
DRIVE_RATIOS = (2.5, 12.5)

_FREQ_UNITS = {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9, "THz": 1e12}


@dataclass(frozen=True)
class Quantity:
    value: float
    unit: str


@dataclass(frozen=True)
class SpeciesRecord:
    """One tabulated Rydberg state.

    ``c6_over_2pi`` keeps the published value and unit (``<freq> um^6``).
    """

    label: str
    atom: str
    state: str
    n: int
    lattice_spacing: Quantity
    c6_over_2pi: Quantity
    lifetime: Quantity
    quantum_defect: float | None = None
    a_fit: float | None = None
    b_fit: float | None = None

    def __post_init__(self):
        for name in ("lattice_spacing", "c6_over_2pi", "lifetime"):
            if not getattr(self, name).value > 0:
                raise InvalidSpecError(f"{self.label}: {name} must be positive")
        if self.c6_over_2pi.unit.split()[0] not in _FREQ_UNITS:
            raise InvalidSpecError(f"{self.label}: unknown C6 unit {self.c6_over_2pi.unit!r}")

    @property
    def spacing_um(self) -> float:
        return float(self.lattice_spacing.value)

    @property
    def c6_hz_um6(self) -> float:
        """C6 / 2pi in Hz um^6."""
        return float(self.c6_over_2pi.value) * _FREQ_UNITS[self.c6_over_2pi.unit.split()[0]]

    @property
    def c6(self) -> float:
        """C6 in rad/s um^6."""
        return TWO_PI * self.c6_hz_um6

    @property
    def lifetime_us(self) -> float:
        return float(self.lifetime.value)

    @property
    def decay_rate(self) -> float:
        """Total Rydberg decay rate in 1/s."""
        return 1e6 / self.lifetime_us

    @property
    def has_fit(self) -> bool:
        return self.a_fit is not None

    @property
    def n_star(self) -> float | None:
        return None if self.quantum_defect is None else self.n - self.quantum_defect


def _quantity(raw) -> Quantity:
    return Quantity(float(raw["value"]), str(raw["unit"]))


@lru_cache(maxsize=1)
def _table_document() -> dict:
    text = resources.files("rydsqueeze").joinpath("data/species.yaml").read_text()
    return yaml.safe_load(text)


def species_table() -> dict[str, SpeciesRecord]:
    """All tabulated species keyed by label, with decay fits attached."""
    doc = _table_document()
    fits = doc.get("decay_fits", {})
    table = {}
    for raw in doc["species"]:
        fit = fits.get(raw["atom"], {})
        table[raw["label"]] = SpeciesRecord(
            label=raw["label"],
            atom=raw["atom"],
            state=raw["state"],
            n=int(raw["n"]),
            lattice_spacing=_quantity(raw["lattice_spacing"]),
            c6_over_2pi=_quantity(raw["c6_over_2pi"]),
            lifetime=_quantity(raw["lifetime"]),
            quantum_defect=fit.get("quantum_defect"),
            a_fit=fit.get("a_fit"),
            b_fit=fit.get("b_fit"),
        )
    return table


def get_species(label: str) -> SpeciesRecord:
    table = species_table()
    if label in table:
        return table[label]
    close = difflib.get_close_matches(label, table, n=3, cutoff=0.3)
    hint = f" Did you mean {', '.join(close)}?" if close else ""
    raise InvalidSpecError(f"unknown species {label!r}.{hint} Available: {', '.join(table)}")


def species_yaml(records=None) -> str:
    """Serialise records back into the shipped table layout."""
    records = species_table().values() if records is None else records
    out = []
    for r in records:
        out.append({
            "label": r.label,
            "atom": r.atom,
            "state": r.state,
            "n": r.n,
            "lattice_spacing": asdict(r.lattice_spacing),
            "c6_over_2pi": asdict(r.c6_over_2pi),
            "lifetime": asdict(r.lifetime),
        })
    return yaml.safe_dump({"species": out}, sort_keys=False)


@dataclass(frozen=True)
class DressingParams:
    """Weak-dressing parameters of one species.

    ``omega`` and ``delta`` in rad/s; ``delta`` has the sign opposite to C6,
    so the plateau coupling ``j0 = omega^4 / (8 delta^3)`` carries the sign
    of ``delta``. Simulations use ``|j0|``; flipping the sign of a real
    Hamiltonian leaves the squeezing of a real initial state unchanged.
    """

    omega: float
    delta: float
    f: float
    r_b_phys: float  # um
    r_b: float  # lattice units
    j0: float
    spacing_um: float
    c6: float  # rad/s um^6

    @property
    def j0_abs(self) -> float:
        return abs(self.j0)

    @property
    def omega_hz(self) -> float:
        return self.omega / TWO_PI

    @property
    def j0_hz(self) -> float:
        return self.j0_abs / TWO_PI

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(omega_hz=self.omega_hz, delta_hz=self.delta / TWO_PI, j0_hz=self.j0 / TWO_PI)
        return d


def _check_fraction(f):
    if not 0 < f < 0.25:
        raise InvalidSpecError(f"Rydberg fraction must lie in (0, 0.25), got {f}")
    if f > WEAK_DRESSING_WARN:
        warnings.warn(f"Rydberg fraction {f} exceeds {WEAK_DRESSING_WARN}; weak dressing is questionable",
                      RuntimeWarning)


def _detuning_sign(c6: float, delta_sign: float | None) -> float:
    sign = -math.copysign(1.0, c6)
    if delta_sign is not None and math.copysign(1.0, delta_sign) != sign:
        raise InvalidSpecError("detuning must have the sign opposite to C6 for a blockade plateau")
    return sign


def dressing_from(omega: float, f: float, species: SpeciesRecord, delta_sign: float | None = None,
                  c6: float | None = None, spacing_um: float | None = None) -> DressingParams:
    """Dressing parameters for Rabi frequency ``omega`` (rad/s) and fraction ``f``.

    ``delta_sign`` may be given to assert a detuning sign; it must oppose C6.
    """
    if not omega > 0:
        raise InvalidSpecError(f"Rabi frequency must be positive, got {omega}")
    _check_fraction(f)
    c6 = species.c6 if c6 is None else c6
    spacing = species.spacing_um if spacing_um is None else spacing_um
    delta = _detuning_sign(c6, delta_sign) * omega / (2 * math.sqrt(f))
    r_b_phys = (abs(c6) / (2 * abs(delta))) ** (1 / 6)
    return DressingParams(
        omega=omega,
        delta=delta,
        f=omega**2 / (4 * delta**2),
        r_b_phys=r_b_phys,
        r_b=r_b_phys / spacing,
        j0=omega**4 / (8 * delta**3),
        spacing_um=spacing,
        c6=c6,
    )


def dressing_for_radius(r_b: float, f: float, species: SpeciesRecord) -> DressingParams:
    """Invert :func:`dressing_from`: the Rabi frequency giving blockade radius ``r_b``."""
    if not r_b > 0:
        raise InvalidSpecError(f"r_b must be positive, got {r_b}")
    _check_fraction(f)
    r_phys = r_b * species.spacing_um
    delta_abs = abs(species.c6) / (2 * r_phys**6)
    return dressing_from(2 * delta_abs * math.sqrt(f), f, species)


def lifetime(n: float, quantum_defect: float, a_fit: float, b_fit: float) -> tuple[float, float]:
    """``(gamma, tau)`` in (1/us, us) from the fit ``a / n*^3 + b / n*^2``."""
    n_star = n - quantum_defect
    if not n_star > 0:
        raise InvalidSpecError(f"effective quantum number must be positive, got {n_star}")
    gamma = a_fit * n_star**-3 + b_fit * n_star**-2
    return gamma, 1.0 / gamma


def pin_quantum_defect(n: float, tau_us: float, a_fit: float, b_fit: float) -> float:
    """Quantum defect for which the decay fit reproduces ``tau_us`` at ``n``."""
    return float(brentq(lambda d: lifetime(n, d, a_fit, b_fit)[1] - tau_us, 0.0, n - 1.0, xtol=1e-14))


def species_lifetime_us(species: SpeciesRecord, n: int | None = None) -> float:
    """Tabulated lifetime, or the fitted one at another ``n`` when a fit exists."""
    if n is None or n == species.n:
        return species.lifetime_us
    if not species.has_fit:
        raise InvalidSpecError(f"{species.label} has no decay fit; only n={species.n} is tabulated")
    return lifetime(n, species.quantum_defect, species.a_fit, species.b_fit)[1]


@dataclass(frozen=True)
class Projection:
    """Parameters carried from one effective quantum number to another."""

    n_star: float
    omega: float
    delta: float
    j0: float
    spacing_um: float
    c6: float
    r_b_phys: float
    r_b: float
    nj_bar: float | None = None


def scaling_project(ref: DressingParams, n_star_ref: float, n_star: float,
                    nj_bar_ref: float | None = None) -> Projection:
    """Carry ``ref`` from ``n_star_ref`` to ``n_star`` with the Rydberg power laws.

    Frequencies scale as ``n*^-3``, the spacing as ``n*^(7/3)`` and C6 as
    ``n*^11``, so the blockade radius in lattice units is unchanged.
    """
    if not (n_star_ref > 0 and n_star > 0):
        raise InvalidSpecError("effective quantum numbers must be positive")
    s = n_star / n_star_ref
    omega = ref.omega * s**-3
    delta = ref.delta * s**-3
    spacing = ref.spacing_um * s ** (7 / 3)
    c6 = ref.c6 * s**11
    r_b_phys = (abs(c6) / (2 * abs(delta))) ** (1 / 6)
    return Projection(
        n_star=n_star,
        omega=omega,
        delta=delta,
        j0=ref.j0 * s**-3,
        spacing_um=spacing,
        c6=c6,
        r_b_phys=r_b_phys,
        r_b=r_b_phys / spacing,
        nj_bar=None if nj_bar_ref is None else nj_bar_ref * s**-3,
    )


def project_dressing(ref: DressingParams, n_star_ref: float, n_star: float) -> DressingParams:
    p = scaling_project(ref, n_star_ref, n_star)
    return DressingParams(p.omega, p.delta, ref.f, p.r_b_phys, p.r_b, p.j0, p.spacing_um, p.c6)


@dataclass
class ConstraintReport:
    omega: float
    nj_bar: float
    violations: list[str] = field(default_factory=list)
    drive_presets: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def as_dict(self) -> dict:
        return {
            "omega_hz": self.omega / TWO_PI,
            "nj_bar_hz": self.nj_bar / TWO_PI,
            "omega_max_hz": OMEGA_MAX / TWO_PI,
            "nj_bar_max_hz": NJ_BAR_MAX / TWO_PI,
            "violations": list(self.violations),
            "ok": self.ok,
            "transverse_field_presets_hz": {str(k): v / TWO_PI for k, v in self.drive_presets.items()},
        }


def constraint_check(params: DressingParams, n_sites: int, j_bar: float, require_drive: bool = True,
                     omega_max: float = OMEGA_MAX, nj_bar_max: float = NJ_BAR_MAX) -> ConstraintReport:
    """Compare against the Rabi-frequency and interaction limits (both inclusive).

    ``j_bar`` is the physical mean coupling in rad/s. The interaction limit
    only matters when a transverse drive is needed (``require_drive``).
    """
    nj_bar = n_sites * abs(j_bar)
    report = ConstraintReport(omega=params.omega, nj_bar=nj_bar)
    if params.omega > omega_max:
        report.violations.append(
            f"Omega/2pi = {params.omega / TWO_PI:.4g} Hz exceeds {omega_max / TWO_PI:.4g} Hz")
    if require_drive and nj_bar > nj_bar_max:
        report.violations.append(
            f"N*Jbar/2pi = {nj_bar / TWO_PI:.4g} Hz exceeds {nj_bar_max / TWO_PI:.4g} Hz")
    report.drive_presets = {r: r * nj_bar for r in DRIVE_RATIOS}
    return report


def dressed_dissipation(params: DressingParams, species: SpeciesRecord, n: int | None = None) -> DissipationSpec:
    """Decay and dephasing rates (1/s) with the Rydberg decay split evenly
    between the two channels, ``gamma_- = gamma_d = f gamma_r / 2``."""
    gamma_r = 1e6 / species_lifetime_us(species, n)
    return DissipationSpec(*physical_rates(params.f, gamma_r / 2, gamma_r / 2))


OVERLAY_COLUMNS = (
    "r_b", "r_b_phys_um", "omega_hz", "j0_hz", "nj_bar_hz", "gamma_minus_over_j0", "jbar_tau_over_f",
    "omega_ok", "nj_bar_ok", "feasible", "on_curve",
)


def fig3_overlay(species: SpeciesRecord, f: float, r_b_grid, lattice: LatticeSpec | None = None,
                 require_drive: bool = True) -> list[dict]:
    """Parameter curve versus blockade radius at fixed Rydberg fraction.

    ``on_curve`` marks the contiguous feasible segment ending at the largest
    radius; the curve is cut where the first limit is exceeded.
    """
    lattice = LatticeSpec.square(14) if lattice is None else lattice
    tau_s = species.lifetime_us * 1e-6
    rows = []
    for r_b in np.asarray(r_b_grid, dtype=float):
        params = dressing_for_radius(float(r_b), f, species)
        unit = coupling_matrix(lattice, PotentialSpec("soft-core-vdw", float(r_b), 1.0))
        j_bar = unit.j_bar * params.j0_abs
        report = constraint_check(params, unit.n_sites, j_bar, require_drive=require_drive)
        diss = dressed_dissipation(params, species)
        rows.append({
            "r_b": float(r_b),
            "r_b_phys_um": params.r_b_phys,
            "omega_hz": params.omega_hz,
            "j0_hz": params.j0_hz,
            "nj_bar_hz": unit.n_sites * j_bar / TWO_PI,
            "gamma_minus_over_j0": diss.gamma_minus / params.j0_abs,
            "jbar_tau_over_f": j_bar * tau_s / f,
            "omega_ok": params.omega <= OMEGA_MAX,
            "nj_bar_ok": (not require_drive) or report.nj_bar <= NJ_BAR_MAX,
            "feasible": report.ok,
        })
    order = np.argsort([-r["r_b"] for r in rows], kind="stable")
    alive = True
    for k in order:
        alive = alive and rows[k]["feasible"]
        rows[k]["on_curve"] = alive
    return rows


def rows_to_csv(rows, columns=OVERLAY_COLUMNS) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)
