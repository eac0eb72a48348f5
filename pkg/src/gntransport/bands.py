"""Ribbon subband structure and closed-form energy scales.

Numeric Bloch diagonalization of a lead unit cell plus the analytic
formulas used by the extraction pipeline (Landau levels, hard-wall
subband spacing, expected plateau sequences).
"""

import csv
from dataclasses import dataclass

import numpy as np

from .constants import DEFAULT_CONSTANTS


class BandsError(Exception):
    pass


class AmbiguousEnergyError(BandsError):
    """Energy sits at a band extremum within grid resolution."""

    def __init__(self, energy_ev, count_below, count_above):
        super().__init__(
            f"E = {energy_ev:.6g} eV is at a band extremum within grid "
            f"resolution; counts at E -/+ step: {count_below}/{count_above}")
        self.energy_ev = energy_ev
        self.count_below = count_below
        self.count_above = count_above


@dataclass(frozen=True)
class BandStructure:
    k_per_nm: np.ndarray        # (nk,), covers one zone incl. both edges
    energies_ev: np.ndarray     # (nk, nbands), sorted ascending per k
    unit_cell_nm: float
    edge_type: str

    def __post_init__(self):
        self.k_per_nm.setflags(write=False)
        self.energies_ev.setflags(write=False)

    @property
    def n_bands(self):
        return self.energies_ev.shape[1]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k_per_nm"]
                       + [f"E_{m + 1}" for m in range(self.n_bands)])
            for k, row in zip(self.k_per_nm, self.energies_ev):
                w.writerow([f"{k:.12g}"] + [f"{e:.12g}" for e in row])


def ribbon_bands(lead, k_count=201, edge_type=""):
    """Bloch dispersion E_m(k) of a periodic lead cell on a uniform grid."""
    if k_count < 16:
        raise BandsError("k_count must be >= 16")
    p = lead.period_nm
    ks = np.linspace(-np.pi / p, np.pi / p, k_count)
    h00, h01 = lead.h00, lead.h01
    if not np.allclose(h00, h00.conj().T, atol=1e-12):
        raise BandsError("non-hermitian intra-cell block")
    energies = np.empty((k_count, h00.shape[0]))
    for i, k in enumerate(ks):
        hk = h00 + h01 * np.exp(1j * k * p) \
            + h01.conj().T * np.exp(-1j * k * p)
        energies[i] = np.linalg.eigvalsh(hk)
    return BandStructure(k_per_nm=ks, energies_ev=energies,
                         unit_cell_nm=p, edge_type=edge_type)


def _crossings(band, energy):
    """Number of sign changes of E(k) - energy over the closed zone."""
    s = np.sign(band - energy)
    # treat exact hits as ambiguous upstream; here nudge to positive
    s[s == 0] = 1
    return int(np.count_nonzero(s[1:] != s[:-1]))


def count_propagating_modes(bands, energy_ev):
    """Open channels at an energy: subbands crossing it moving right.

    Each spin-degenerate orbital channel counts once; conductance is
    count * 2e^2/h.  Raises :class:`AmbiguousEnergyError` when the energy
    pins a band extremum within the grid resolution.
    """
    e = bands.energies_ev
    if not (e.min() <= energy_ev <= e.max()):
        raise BandsError(f"energy {energy_ev} eV outside computed bands")
    total = sum(_crossings(e[:, m], energy_ev) for m in range(bands.n_bands))
    # extremum guard: if E pins a band edge within the energy resolution
    # of the k grid near that extremum, the count is grid-limited
    res = 0.0
    ambiguous = False
    for m in range(bands.n_bands):
        band = e[:, m]
        for idx in (int(np.argmin(band)), int(np.argmax(band))):
            lo, hi = max(idx - 1, 0), min(idx + 1, len(band) - 1)
            local = max(abs(band[lo] - band[idx]),
                        abs(band[hi] - band[idx]))
            if abs(energy_ev - band[idx]) < max(local, 1e-12):
                ambiguous = True
                res = max(res, local)
    if ambiguous:
        lo_n = sum(_crossings(e[:, m], energy_ev - 2 * res)
                   for m in range(bands.n_bands)) // 2
        hi_n = sum(_crossings(e[:, m], energy_ev + 2 * res)
                   for m in range(bands.n_bands)) // 2
        raise AmbiguousEnergyError(energy_ev, lo_n, hi_n)
    # right- and left-movers pair up band by band over a full zone
    return total // 2


def group_velocity(bands):
    """dE/dk by centered differences (eV nm), same shape as energies."""
    return np.gradient(bands.energies_ev, bands.k_per_nm, axis=0)


def landau_level(b_tesla, n, constants=DEFAULT_CONSTANTS):
    """Graphene Landau level v_F sqrt(2 hbar e B n) in eV."""
    if b_tesla <= 0:
        raise BandsError("landau_level requires B > 0")
    if n < 0 or int(n) != n:
        raise BandsError("orbital index n must be a non-negative integer")
    c = constants
    e_j = c.v_F * np.sqrt(2.0 * c.hbar * c.e_charge * b_tesla * n)
    return e_j / c.e_charge


def hard_wall_subband_spacing(width_nm, constants=DEFAULT_CONSTANTS):
    """Level spacing hbar v_F pi / W of a hard-wall channel, in eV."""
    if width_nm <= 0:
        raise BandsError("width must be positive")
    return constants.hbar_vf_evnm * np.pi / width_nm


def expected_plateau_sequence(edge_type, count):
    """Conductance plateau values in units of 2e^2/h.

    'armchair' (metallic): 1, 2, 3, ...; 'zigzag': 1, 3, 5, ...;
    'qhe': the graphene half-integer sequence 1, 3, 5, ... for any edge.
    """
    if count < 1:
        raise BandsError("count must be >= 1")
    if edge_type == "armchair":
        return list(range(1, count + 1))
    if edge_type in ("zigzag", "qhe"):
        return list(range(1, 2 * count, 2))
    raise BandsError(f"unknown sequence kind {edge_type!r}")
