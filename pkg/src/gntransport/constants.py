"""Physical constants and unit helpers.

All internal arithmetic is SI; lengths handed to/from the lattice and
analysis layers are in nm, energies in eV, following the conventions of
the measurement community this tool targets.
"""

from dataclasses import dataclass

# CODATA 2018 exact/recommended values
HBAR_JS = 1.054571817e-34      # J s
E_CHARGE_C = 1.602176634e-19   # C
H_JS = 6.62607015e-34          # J s
MU_B_EV_PER_T = 5.7883818060e-5   # eV/T
K_B_EV_PER_K = 8.617333262e-5     # eV/K

#: resistance quantum h/2e^2 in ohm (one spin-degenerate channel)
R_QUANTUM_OHM = H_JS / (2.0 * E_CHARGE_C**2)

#: hbar in eV s
HBAR_EVS = HBAR_JS / E_CHARGE_C


@dataclass(frozen=True)
class PhysicalConstants:
    """Constants entering the analytic formulas.

    ``v_F`` is configurable: the commonly quoted 1.0e6 m/s does not
    exactly match the nearest-neighbour tight-binding value
    (3/2) a t / hbar for a = 0.142 nm, t = 2.7 eV (~8.74e5 m/s).
    End-to-end comparisons against simulated lattices should pass the
    lattice value, see :func:`gntransport.lattice.LatticeParams.fermi_velocity`.
    """

    hbar: float = HBAR_JS            # J s
    e_charge: float = E_CHARGE_C     # C
    h: float = H_JS                  # J s
    v_F: float = 1.0e6               # m/s
    g_factor: float = 2.0
    mu_B: float = MU_B_EV_PER_T      # eV/T
    k_B: float = K_B_EV_PER_K        # eV/K

    def __post_init__(self):
        if any(x <= 0 for x in (self.hbar, self.e_charge, self.h,
                                self.v_F, self.mu_B, self.k_B)):
            raise ValueError("physical constants must be positive")
        if abs(self.h - 2.0 * 3.141592653589793 * self.hbar) > 1e-40:
            raise ValueError("h must equal 2*pi*hbar")

    @property
    def hbar_vf_evnm(self):
        """hbar * v_F in eV nm."""
        return self.hbar * self.v_F / self.e_charge * 1e9


DEFAULT_CONSTANTS = PhysicalConstants()
