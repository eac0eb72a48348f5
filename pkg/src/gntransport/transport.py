"""Landauer-Buttiker transmission through a device.

Lead surface Green's functions by Sancho-Rubio decimation, device Green's
function by block-recursive sweep over unit cells, then the trace formula
T = Tr[Gamma_L G Gamma_R G^dagger].  On top of the bare transmission sit
the measurement-style sweeps: gate traces with thermal broadening and
finite-bias differential conductance maps.
"""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .constants import DEFAULT_CONSTANTS, E_CHARGE_C
from .lattice import apply_peierls

DEFAULT_ETA_EV = 1e-6


class TransportError(Exception):
    pass


class LeadConvergenceError(TransportError):
    def __init__(self, energy_ev, eta_ev, iterations):
        super().__init__(
            f"lead surface Green's function did not converge at "
            f"E = {energy_ev:.6g} eV (eta = {eta_ev:.3g}, "
            f"{iterations} iterations)")
        self.energy_ev = energy_ev
        self.eta_ev = eta_ev


class ValidityWindowError(TransportError):
    """Fermi energy outside |E| < t'/3 where the scaled lattice is Dirac-like."""


def surface_greens_function(z, h00, v, max_iter=200, tol=1e-12):
    """Surface GF of a semi-infinite block chain.

    The surface cell couples to the rest of the chain through ``v``
    (matrix element <surface|H|next-inward>); fixed point of
    g = (z - h00 - v g v^dagger)^-1 via Sancho-Rubio decimation.
    """
    n = h00.shape[0]
    eye = np.eye(n)
    alpha = v.copy()
    beta = v.conj().T.copy()
    eps = h00.copy()
    eps_s = h00.copy()
    for _ in range(max_iter):
        if np.linalg.norm(alpha, 1) < tol:
            return np.linalg.inv(z * eye - eps_s)
        g = np.linalg.inv(z * eye - eps)
        ga = g @ alpha
        gb = g @ beta
        eps_s = eps_s + alpha @ gb
        eps = eps + alpha @ gb + beta @ ga
        alpha = alpha @ ga
        beta = beta @ gb
    raise LeadConvergenceError(np.real(z), np.imag(z), max_iter)


def lead_self_energy(lead, energy_ev, side, eta_ev=DEFAULT_ETA_EV):
    """Retarded self-energy a semi-infinite lead injects into its end cell.

    ``side`` is 'left' or 'right'; the broadening Gamma = i(Sigma-Sigma+)
    is positive semidefinite for a converged retarded solution.
    """
    z = energy_ev + 1j * eta_ev
    if side == "left":
        v_inward = lead.h01.conj().T     # surface couples to the cell left of it
        g = surface_greens_function(z, lead.h00, v_inward)
        return lead.h01.conj().T @ g @ lead.h01
    elif side == "right":
        g = surface_greens_function(z, lead.h00, lead.h01)
        return lead.h01 @ g @ lead.h01.conj().T
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def broadening(sigma):
    """Gamma = i (Sigma - Sigma^dagger)."""
    return 1j * (sigma - sigma.conj().T)


@dataclass
class TransmissionCalculator:
    """Caches the block structure of one device for repeated T(E) calls."""

    device: "object"
    eta_ev: float = DEFAULT_ETA_EV
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.device.is_connected():
            raise TransportError("device is disconnected")
        self.hd, self.hu = self.device.block_hamiltonians
        self.left = self.device.left_lead
        self.right = self.device.right_lead

    def transmission(self, energy_ev, reverse=False):
        """T(E) between the leads (per spin-degenerate channel pair)."""
        key = (round(float(energy_ev), 15), bool(reverse))
        if key in self._cache:
            return self._cache[key]
        z = energy_ev + 1j * self.eta_ev
        sig_l = lead_self_energy(self.left, energy_ev, "left", self.eta_ev)
        sig_r = lead_self_energy(self.right, energy_ev, "right", self.eta_ev)
        hd, hu = self.hd, self.hu
        if reverse:
            hd = hd[::-1]
            hu = [h.conj().T for h in hu[::-1]]
            sig_l, sig_r = sig_r, sig_l
        nb = len(hd)
        g = np.linalg.inv(z * np.eye(hd[0].shape[0]) - hd[0] - sig_l)
        gs = [g]
        for c in range(1, nb):
            heff = hd[c] + hu[c - 1].conj().T @ gs[-1] @ hu[c - 1]
            if c == nb - 1:
                heff = heff + sig_r
            g = np.linalg.inv(z * np.eye(hd[c].shape[0]) - heff)
            gs.append(g)
        # propagator G_{N-1,0} = g_{N-1} H_{N-1,N-2} g_{N-2} ... H_{1,0} g_0
        prop = gs[-1]
        for c in range(nb - 1, 0, -1):
            prop = prop @ hu[c - 1].conj().T @ gs[c - 1]
        t = np.trace(broadening(sig_r) @ prop
                     @ broadening(sig_l) @ prop.conj().T)
        t = float(np.real(t))
        self._cache[key] = t
        return t

    def transmissions(self, energies, threads=None, reverse=False):
        """T(E) over a grid, fanned out over worker threads."""
        energies = np.asarray(energies, dtype=float)
        if threads is None or threads <= 1:
            return np.array([self.transmission(e, reverse)
                             for e in energies])
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return np.array(list(ex.map(
                lambda e: self.transmission(e, reverse), energies)))


def transmission(device, energy_ev, eta_ev=DEFAULT_ETA_EV, reverse=False):
    """One-shot transmission; build a TransmissionCalculator for sweeps."""
    return TransmissionCalculator(device, eta_ev).transmission(
        energy_ev, reverse)


# ---- measurement-style sweeps ---------------------------------------


@dataclass
class TransmissionCurve:
    energies_ev: np.ndarray
    transmission: np.ndarray
    device_fingerprint: str = ""
    b_tesla: float = 0.0

    def __post_init__(self):
        if np.any(self.transmission < -1e-9):
            raise TransportError("negative transmission")

    def at(self, energy_ev):
        """Linear interpolation on the stored grid."""
        return float(np.interp(energy_ev, self.energies_ev,
                               self.transmission))


@dataclass
class ConductanceTrace:
    gate_voltages: np.ndarray     # V
    conductance: np.ndarray       # units of 2e^2/h
    alpha_f_per_m2: float
    dirac_point_v: float
    b_tesla: float = 0.0
    temperature_k: float = 0.0
    series_resistance_ohm: float = 0.0
    device_fingerprint: str = ""
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.gate_voltages = np.asarray(self.gate_voltages, dtype=float)
        self.conductance = np.asarray(self.conductance, dtype=float)
        if self.gate_voltages.shape != self.conductance.shape:
            raise TransportError("gate and conductance arrays differ")
        if self.alpha_f_per_m2 <= 0:
            raise TransportError("alpha must be positive")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# device = {self.device_fingerprint}\n")
            fh.write(f"# B_T = {self.b_tesla:.9g}\n")
            fh.write(f"# temperature_K = {self.temperature_k:.9g}\n")
            fh.write(f"# alpha_F_per_m2 = {self.alpha_f_per_m2:.9g}\n")
            fh.write(f"# dirac_point_V = {self.dirac_point_v:.9g}\n")
            fh.write(f"# R_series_ohm = "
                     f"{self.series_resistance_ohm:.9g}\n")
            w = csv.writer(fh)
            w.writerow(["Vg_V", "G_2e2_over_h"])
            for v, g in zip(self.gate_voltages, self.conductance):
                w.writerow([f"{v:.12g}", f"{g:.12g}"])


@dataclass
class BiasMap:
    gate_voltages: np.ndarray
    bias_voltages: np.ndarray
    g_diff: np.ndarray            # (n_gate, n_bias), units of 2e^2/h
    alpha_f_per_m2: float = 0.0
    dirac_point_v: float = 0.0
    b_tesla: float = 0.0
    device_fingerprint: str = ""

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# device = {self.device_fingerprint}\n")
            fh.write(f"# B_T = {self.b_tesla:.9g}\n")
            fh.write(f"# alpha_F_per_m2 = {self.alpha_f_per_m2:.9g}\n")
            fh.write(f"# dirac_point_V = {self.dirac_point_v:.9g}\n")
            w = csv.writer(fh)
            w.writerow(["Vg_V", "Vsd_V", "Gdiff_2e2_over_h"])
            for i, vg in enumerate(self.gate_voltages):
                for j, vb in enumerate(self.bias_voltages):
                    w.writerow([f"{vg:.12g}", f"{vb:.12g}",
                                f"{self.g_diff[i, j]:.12g}"])


def gate_to_fermi_energy(gate_v, alpha_f_per_m2, dirac_point_v,
                         hbar_vf_evnm):
    """Carrier density and signed Fermi energy from the gate voltage."""
    n = alpha_f_per_m2 * (np.asarray(gate_v, dtype=float)
                          - dirac_point_v) / E_CHARGE_C   # 1/m^2
    k_f = np.sqrt(np.pi * np.abs(n))                      # 1/m
    e_f = np.sign(n) * hbar_vf_evnm * 1e-9 * k_f          # eV
    return n, e_f


def fermi_window_weight(e_ev, e_f_ev, temperature_k,
                        constants=DEFAULT_CONSTANTS):
    """-df/dE evaluated at E - E_F (1/eV)."""
    kt = constants.k_B * temperature_k
    x = (e_ev - e_f_ev) / kt
    w = np.zeros_like(x)
    ok = np.abs(x) < 250
    w[ok] = 0.25 / kt / np.cosh(x[ok] / 2.0) ** 2
    return w


def thermal_broadening(curve, temperature_k, e_f_ev,
                       constants=DEFAULT_CONSTANTS):
    """Fermi-window average of T(E) around E_F.

    Trapezoidal quadrature over a +-10 k_B T window, normalized by the
    quadrature weight of the window itself so a constant transmission is
    reproduced exactly at any temperature.
    """
    if temperature_k < 1e-3:
        return curve.at(e_f_ev)
    kt = constants.k_B * temperature_k
    lo, hi = e_f_ev - 10 * kt, e_f_ev + 10 * kt
    es = curve.energies_ev
    if lo < es[0] - 1e-12 or hi > es[-1] + 1e-12:
        raise TransportError(
            f"thermal window [{lo:.4g}, {hi:.4g}] eV exceeds curve range "
            f"[{es[0]:.4g}, {es[-1]:.4g}]")
    sel = (es >= lo) & (es <= hi)
    grid = np.unique(np.concatenate([[lo], es[sel], [hi]]))
    if np.diff(grid).max() > kt / 4:
        raise TransportError(
            "transmission grid too coarse for this temperature: "
            f"step {np.diff(grid).max():.3g} eV > kT/4 = {kt / 4:.3g} eV")
    tvals = np.interp(grid, es, curve.transmission)
    w = fermi_window_weight(grid, e_f_ev, temperature_k, constants)
    num = np.trapezoid(tvals * w, grid)
    den = np.trapezoid(w, grid)
    return float(num / den)


def _validity_limit(device):
    return device.params.t_ev / 3.0


def conductance_vs_gate(device, gate_voltages, alpha_f_per_m2,
                        dirac_point_v, b_tesla=0.0, temperature_k=0.0,
                        eta_ev=DEFAULT_ETA_EV, threads=None,
                        constants=DEFAULT_CONSTANTS):
    """Linear-response gate sweep in units of 2e^2/h.

    The gate maps to E_F through n = alpha (Vg - V_D)/e and
    E_F = sign(n) hbar v_F sqrt(pi |n|), with the lattice Dirac velocity
    so simulated staircases line up with the analytic mode count.
    """
    gate_voltages = np.asarray(gate_voltages, dtype=float)
    if len(gate_voltages) and np.any(np.diff(gate_voltages) <= 0):
        raise TransportError("gate grid must be strictly increasing")
    dev = apply_peierls(device, b_tesla) if b_tesla else device
    hvf = dev.params.hbar_vf_evnm
    _, e_f = gate_to_fermi_energy(gate_voltages, alpha_f_per_m2,
                                  dirac_point_v, hvf)
    flags = []
    lim = _validity_limit(dev)
    if np.any(np.abs(e_f) > lim):
        flags.append(f"fermi energy exceeds validity window |E| < "
                     f"{lim:.4g} eV (lattice artifacts)")
    calc = TransmissionCalculator(dev, eta_ev)
    if temperature_k < 1e-3:
        g = calc.transmissions(e_f, threads=threads)
    else:
        kt = constants.k_B * temperature_k
        lo = e_f.min() - 10.5 * kt
        hi = e_f.max() + 10.5 * kt
        base = np.arange(lo, hi + kt / 5, kt / 5)
        grid = np.unique(np.round(np.concatenate([base, e_f]), 15))
        tvals = calc.transmissions(grid, threads=threads)
        curve = TransmissionCurve(grid, np.maximum(tvals, 0.0),
                                  dev.fingerprint(), dev.b_tesla)
        g = np.array([thermal_broadening(curve, temperature_k, e,
                                         constants) for e in e_f])
    return ConductanceTrace(
        gate_voltages=gate_voltages, conductance=np.maximum(g, 0.0),
        alpha_f_per_m2=alpha_f_per_m2, dirac_point_v=dirac_point_v,
        b_tesla=dev.b_tesla, temperature_k=temperature_k,
        device_fingerprint=dev.fingerprint(), flags=flags)


def bias_map(device, gate_voltages, bias_voltages, alpha_f_per_m2,
             dirac_point_v, b_tesla=0.0, eta_ev=DEFAULT_ETA_EV,
             threads=None):
    """Differential conductance over a (Vg, Vsd) grid.

    Symmetric source-drain split: g(Vg, Vsd) =
    [T(E_F + eVsd/2) + T(E_F - eVsd/2)] / 2, in units of 2e^2/h.
    """
    gate_voltages = np.asarray(gate_voltages, dtype=float)
    bias_voltages = np.asarray(bias_voltages, dtype=float)
    for name, grid in (("gate", gate_voltages), ("bias", bias_voltages)):
        if len(grid) > 1 and np.any(np.diff(grid) <= 0):
            raise TransportError(f"{name} grid must be strictly increasing")
    dev = apply_peierls(device, b_tesla) if b_tesla else device
    hvf = dev.params.hbar_vf_evnm
    _, e_f = gate_to_fermi_energy(gate_voltages, alpha_f_per_m2,
                                  dirac_point_v, hvf)
    shifts = bias_voltages / 2.0
    energies = np.unique(np.round(
        (e_f[:, None, None]
         + np.array([1.0, -1.0])[None, :, None] * shifts[None, None, :])
        .ravel(), 15))
    calc = TransmissionCalculator(dev, eta_ev)
    tvals = calc.transmissions(energies, threads=threads)
    lookup = dict(zip(energies, tvals))
    g = np.empty((len(gate_voltages), len(bias_voltages)))
    for i, e in enumerate(e_f):
        for j, s in enumerate(shifts):
            tp = lookup[round(e + s, 15)]
            tm = lookup[round(e - s, 15)]
            g[i, j] = 0.5 * (tp + tm)
    return BiasMap(gate_voltages=gate_voltages,
                   bias_voltages=bias_voltages, g_diff=np.maximum(g, 0.0),
                   alpha_f_per_m2=alpha_f_per_m2,
                   dirac_point_v=dirac_point_v, b_tesla=dev.b_tesla,
                   device_fingerprint=dev.fingerprint())
