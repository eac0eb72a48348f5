"""Honeycomb tight-binding device construction.

Builds ribbons and wide-narrow-wide constrictions with armchair or zigzag
edges, optional edge-vacancy disorder, gate potentials and a perpendicular
magnetic field entering through Peierls phases on the hoppings.

Conventions:
  * transport axis is x, transverse axis is y, lengths in nm
  * hoppings are stored once per bond (i < j in the canonical site order);
    the reverse amplitude is the complex conjugate, so hermiticity holds
    by construction
  * the device is sliced into columns along x such that hoppings couple
    only adjacent slices; two slices form one translational unit cell,
    and the first/last two cells double as the semi-infinite lead cells
"""

import hashlib
import json
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .constants import E_CHARGE_C, HBAR_JS

EDGE_ARMCHAIR = "armchair"
EDGE_ZIGZAG = "zigzag"
EDGE_TYPES = (EDGE_ARMCHAIR, EDGE_ZIGZAG)
PROFILES = ("abrupt", "wedge", "smooth-cosine")

#: pristine cells kept untouched at each end (they define the leads)
PAD_CELLS = 2


class LatticeError(Exception):
    pass


class WidthError(LatticeError):
    pass


class DisconnectedDeviceError(LatticeError):
    pass


@dataclass(frozen=True)
class LatticeParams:
    """Scaled nearest-neighbour graphene parameters.

    The scaled lattice keeps a*t fixed: a' = s*a, t' = t/s, which leaves
    hbar*v_F = (3/2) a t invariant.
    """

    cc_distance_nm: float = 0.142
    hopping_ev: float = 2.7
    scaling: float = 1.0

    def __post_init__(self):
        if self.cc_distance_nm <= 0 or self.hopping_ev <= 0:
            raise ValueError("cc_distance and hopping must be positive")
        if self.scaling < 1.0:
            raise ValueError("scaling_factor must be >= 1")

    @property
    def a_nm(self):
        """Scaled carbon-carbon distance a' (nm)."""
        return self.cc_distance_nm * self.scaling

    @property
    def t_ev(self):
        """Scaled hopping t' (eV)."""
        return self.hopping_ev / self.scaling

    @property
    def hbar_vf_evnm(self):
        """hbar*v_F = (3/2) a t in eV nm; invariant under scaling."""
        return 1.5 * self.cc_distance_nm * self.hopping_ev

    @property
    def fermi_velocity(self):
        """Dirac velocity of this lattice in m/s."""
        return self.hbar_vf_evnm * 1e-9 * E_CHARGE_C / HBAR_JS


@dataclass(frozen=True)
class GeometrySpec:
    edge_type: str
    lead_width_nm: float
    constriction_width_nm: float
    constriction_length_nm: float
    profile: str = "smooth-cosine"
    total_length_nm: float = 0.0
    metallic_snap: bool = True

    def __post_init__(self):
        if self.edge_type not in EDGE_TYPES:
            raise ValueError(f"unknown edge_type {self.edge_type!r}")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")
        for name in ("lead_width_nm", "constriction_width_nm",
                     "constriction_length_nm", "total_length_nm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.constriction_width_nm > self.lead_width_nm:
            raise ValueError("constriction_width must not exceed lead_width")


@dataclass(frozen=True)
class DisorderSpec:
    edge_removal_probability: float
    rng_seed: int
    edge_depth: int = 1

    def __post_init__(self):
        if not 0.0 <= self.edge_removal_probability <= 1.0:
            raise ValueError("edge_removal_probability must lie in [0, 1]")
        if self.edge_depth < 1:
            raise ValueError("edge_depth must be >= 1")


@dataclass(frozen=True)
class LeadCell:
    """Periodic lead unit cell: intra-cell block and coupling to the next."""

    positions: np.ndarray       # (n, 2) nm
    sublattice: np.ndarray      # (n,) 0=A, 1=B
    h00: np.ndarray             # (n, n) complex, intra-cell
    h01: np.ndarray             # (n, n) complex, cell i -> cell i+1
    period_nm: float


def _row_ladder(edge_type, a, width_nm):
    """Transverse atomic-row y positions up to at least width_nm."""
    if edge_type == EDGE_ARMCHAIR:
        # dimer lines, uniform pitch sqrt(3)a/2
        d = np.sqrt(3.0) * a / 2.0
        n = int(np.floor(width_nm / d + 0.5)) + 3
        return d * np.arange(n)
    # zigzag: 4 rows per 3a period
    offsets = np.array([0.0, 0.5, 1.5, 2.0]) * a
    n_per = int(np.ceil(width_nm / (3.0 * a))) + 2
    ys = (3.0 * a * np.arange(n_per)[:, None] + offsets[None, :]).ravel()
    return ys


def _row_count(edge_type, a, width_nm, metallic_snap):
    """Number of kept rows approximating width_nm, with optional snap."""
    ladder = _row_ladder(edge_type, a, width_nm + 3 * a)
    spans = ladder - ladder[0]
    n = int(np.argmin(np.abs(spans - width_nm))) + 1
    if edge_type == EDGE_ZIGZAG and n % 2 != 0:
        # zigzag ribbons terminate cleanly only on alternate rows
        n += 1 if abs(spans[n] - width_nm) < abs(spans[n - 2] - width_nm) \
            else -1
    if n < 3:
        raise WidthError(
            f"requested width {width_nm} nm gives {n} rows; need >= 3")
    if metallic_snap and edge_type == EDGE_ARMCHAIR:
        # metallic armchair class: dimer count == 2 (mod 3)
        if n % 3 != 2:
            for cand in (n + 1, n - 1):
                if cand % 3 == 2 and cand >= 3:
                    n = cand
                    break
    return n


def _generate_patch_extended(edge_type, a, x_min, x_max, y_max):
    """All honeycomb sites with x in [x_min, x_max], y in [-a/4, y_max].

    The lattice frame has zigzag edges along its u axis; the armchair
    device is the same frame with axes swapped.
    """
    s3 = np.sqrt(3.0)
    if edge_type == EDGE_ZIGZAG:
        u_lo, u_hi, v_hi = x_min, x_max, y_max
    else:
        u_lo, u_hi, v_hi = -a, y_max + a, x_max
    m_lo = -2 if edge_type == EDGE_ZIGZAG else \
        int(np.floor(x_min / (1.5 * a))) - 2
    m_hi = int(np.ceil(v_hi / (1.5 * a))) + 2
    n_lo = int(np.floor((u_lo - m_hi * s3 * a / 2) / (s3 * a))) - 2
    n_hi = int(np.ceil((u_hi - m_lo * s3 * a / 2) / (s3 * a))) + 2
    n, m = np.meshgrid(np.arange(n_lo, n_hi + 1),
                       np.arange(m_lo, m_hi + 1), indexing="ij")
    n = n.ravel()
    m = m.ravel()
    ua = n * s3 * a + m * s3 * a / 2
    va = m * 1.5 * a
    pos_a = np.column_stack([ua, va])
    pos_b = np.column_stack([ua + s3 * a / 2, va + 0.5 * a])
    pos = np.vstack([pos_a, pos_b])
    subl = np.concatenate([np.zeros(len(pos_a), dtype=np.int8),
                           np.ones(len(pos_b), dtype=np.int8)])
    if edge_type == EDGE_ARMCHAIR:
        pos = pos[:, ::-1].copy()
    tol = 0.26 * a
    keep = ((pos[:, 0] > x_min - tol) & (pos[:, 0] < x_max + tol)
            & (pos[:, 1] > -tol) & (pos[:, 1] < y_max + tol))
    return pos[keep], subl[keep]


def _slice_index(edge_type, a, x):
    if edge_type == EDGE_ZIGZAG:
        pitch = np.sqrt(3.0) * a / 2.0
        return np.round(x / pitch).astype(np.int64)
    return np.floor((x + 0.25 * a) / (1.5 * a)).astype(np.int64)


def slice_pitch_nm(edge_type, a):
    """Width of one transport slice (half a lead unit cell)."""
    return np.sqrt(3.0) * a / 2.0 if edge_type == EDGE_ZIGZAG else 1.5 * a


@dataclass(eq=False)
class DeviceLattice:
    """Immutable scattering region plus implicit semi-infinite leads.

    The lead unit cells are, by construction, the outermost two slices at
    each end; mutating operations return new instances.
    """

    params: LatticeParams
    geometry: GeometrySpec
    positions: np.ndarray       # (N, 2) nm
    sublattice: np.ndarray      # (N,)
    onsite: np.ndarray          # (N,) eV
    hop_i: np.ndarray           # (M,) int, i < j canonical direction
    hop_j: np.ndarray
    hop_t: np.ndarray           # (M,) complex eV, amplitude i -> j
    slice_of: np.ndarray        # (N,) int
    b_tesla: float = 0.0
    gauge_y0_nm: float = 0.0
    actual: dict = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.positions, self.sublattice, self.onsite,
                    self.hop_i, self.hop_j, self.hop_t, self.slice_of):
            arr.setflags(write=False)

    @property
    def n_sites(self):
        return len(self.positions)

    @property
    def n_slices(self):
        return int(self.slice_of.max()) + 1

    @property
    def n_cells(self):
        return self.n_slices // 2

    @property
    def edge_type(self):
        return self.geometry.edge_type

    # ---- block structure ---------------------------------------------

    @cached_property
    def cells(self):
        """List of site-index arrays, one per 2-slice unit cell."""
        cell_of = self.slice_of // 2
        return [np.flatnonzero(cell_of == c) for c in range(self.n_cells)]

    @cached_property
    def _cell_of_site(self):
        return self.slice_of // 2

    @cached_property
    def block_hamiltonians(self):
        """(Hd, Hu): intra-cell blocks and couplings cell c -> c+1."""
        cells = self.cells
        nc = len(cells)
        local = np.empty(self.n_sites, dtype=np.int64)
        for idx in cells:
            local[idx] = np.arange(len(idx))
        cell_of = self._cell_of_site
        hd = [np.zeros((len(idx), len(idx)), dtype=complex) for idx in cells]
        hu = [np.zeros((len(cells[c]), len(cells[c + 1])), dtype=complex)
              for c in range(nc - 1)]
        ci, cj = cell_of[self.hop_i], cell_of[self.hop_j]
        li, lj = local[self.hop_i], local[self.hop_j]
        for k in range(len(self.hop_i)):
            a, b = ci[k], cj[k]
            t = self.hop_t[k]
            if a == b:
                hd[a][li[k], lj[k]] += t
                hd[a][lj[k], li[k]] += np.conj(t)
            elif b == a + 1:
                hu[a][li[k], lj[k]] += t
            elif a == b + 1:
                hu[b][lj[k], li[k]] += np.conj(t)
            else:
                raise LatticeError("hopping couples non-adjacent cells")
        for c, idx in enumerate(cells):
            hd[c][np.arange(len(idx)), np.arange(len(idx))] += self.onsite[idx]
        return hd, hu

    def _lead(self, side):
        hd, hu = self.block_hamiltonians
        if side == "left":
            idx, h00, h01 = self.cells[0], hd[0], hu[0]
        else:
            idx, h00, h01 = self.cells[-1], hd[-1], hu[-1]
        if h00.shape != h01.shape:
            raise LatticeError("outermost cells are not lead-periodic")
        return LeadCell(positions=self.positions[idx],
                        sublattice=self.sublattice[idx],
                        h00=h00, h01=h01,
                        period_nm=2 * slice_pitch_nm(self.edge_type,
                                                     self.params.a_nm))

    @cached_property
    def left_lead(self):
        return self._lead("left")

    @cached_property
    def right_lead(self):
        return self._lead("right")

    # ---- integrity ---------------------------------------------------

    def check_hermitian(self, atol=1e-12):
        """Scan assembled blocks for conjugate symmetry."""
        hd, hu = self.block_hamiltonians
        for h in hd:
            if not np.allclose(h, h.conj().T, atol=atol):
                raise LatticeError("non-hermitian cell block")
        return True

    def is_connected(self):
        order = np.argsort(self.hop_i, kind="stable")
        nbrs = [[] for _ in range(self.n_sites)]
        for i, j in zip(self.hop_i, self.hop_j):
            nbrs[i].append(j)
            nbrs[j].append(i)
        seen = np.zeros(self.n_sites, dtype=bool)
        stack = list(self.cells[0])
        seen[self.cells[0]] = True
        while stack:
            s = stack.pop()
            for t in nbrs[s]:
                if not seen[t]:
                    seen[t] = True
                    stack.append(t)
        return bool(seen[self.cells[-1]].all())

    def fingerprint(self):
        """Stable content hash of the device."""
        h = hashlib.sha256()
        for arr in (np.round(self.positions, 9), self.sublattice,
                    np.round(self.onsite, 12), self.hop_i, self.hop_j,
                    np.round(self.hop_t.view(float), 12), self.slice_of):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(f"B={self.b_tesla:.9e};y0={self.gauge_y0_nm:.9e}".encode())
        return h.hexdigest()[:16]

    def to_json(self):
        """Export for debugging and cross-implementation diffing."""
        sites = [{"id": int(i), "x_nm": float(p[0]), "y_nm": float(p[1]),
                  "sublattice": "AB"[int(s)]}
                 for i, (p, s) in enumerate(zip(self.positions,
                                                self.sublattice))]
        hops = []
        for i, j, t in zip(self.hop_i, self.hop_j, self.hop_t):
            hops.append({"i": int(i), "j": int(j),
                         "re": float(t.real), "im": float(t.imag)})
            hops.append({"i": int(j), "j": int(i),
                         "re": float(t.real), "im": float(-t.imag)})
        geo = {k: getattr(self.geometry, k) for k in
               ("edge_type", "lead_width_nm", "constriction_width_nm",
                "constriction_length_nm", "profile", "total_length_nm",
                "metallic_snap")}
        par = {"cc_distance_nm": self.params.cc_distance_nm,
               "hopping_ev": self.params.hopping_ev,
               "scaling": self.params.scaling}
        return json.dumps({"sites": sites, "hoppings": hops,
                           "onsite": [float(v) for v in self.onsite],
                           "geometry": geo, "params": par,
                           "b_tesla": self.b_tesla,
                           "actual": self.actual}, indent=1)


# ---- builders --------------------------------------------------------


def _profile_fraction(profile, x, x_center, half_len, ramp_len):
    """Narrowing fraction r(x): 1 in the narrow section, 0 in the leads."""
    d = np.abs(x - x_center)
    if profile == "abrupt" or ramp_len <= 0:
        return (d <= half_len).astype(float)
    u = np.clip((d - half_len) / ramp_len, 0.0, 1.0)
    if profile == "wedge":
        return 1.0 - u
    return 0.5 * (1.0 + np.cos(np.pi * u))   # smooth-cosine


def _prune_dangling(pos, subl, pairs, protected=None):
    """Iteratively drop sites with fewer than 2 bonds.

    ``protected`` sites are never dropped; this stops erosion cascades
    (e.g. along a tapered edge) from eating into the pristine lead cells.
    """
    n = len(pos)
    keep = np.ones(n, dtype=bool)
    if protected is None:
        protected = np.zeros(n, dtype=bool)
    while True:
        deg = np.zeros(n, dtype=np.int64)
        for i, j in pairs:
            if keep[i] and keep[j]:
                deg[i] += 1
                deg[j] += 1
        bad = keep & (deg < 2) & ~protected
        if not bad.any():
            break
        keep[bad] = False
    return keep


def _assemble(params, geometry, pos, subl, n_cells, metallic_snap_applied):
    """Prune dangling atoms on the extended patch, then cut at exact cell
    boundaries.  Bonds crossing the cut are dropped from the device; they
    reappear as the lead coupling blocks, so boundary atoms keep their
    full coordination once the semi-infinite leads are attached."""
    a = params.a_nm
    edge = geometry.edge_type
    sl = _slice_index(edge, a, pos[:, 0])
    order = np.lexsort((subl, np.round(pos[:, 1] / a * 8).astype(np.int64),
                        sl))
    pos, subl, sl = pos[order], subl[order], sl[order]

    tree = cKDTree(pos)
    pairs = sorted(tree.query_pairs(r=1.01 * a))
    # the two pad cells at each end (and the off-device margin next to
    # them) must survive pruning untouched so the leads stay periodic
    cell = sl // 2
    protected = (cell < PAD_CELLS) | (cell >= n_cells - PAD_CELLS)
    keep = _prune_dangling(pos, subl, pairs, protected)
    keep &= (sl >= 0) & (sl < 2 * n_cells)
    if keep.sum() < 3:
        raise WidthError("device pruned to nothing; widen the geometry")
    remap = -np.ones(len(pos), dtype=np.int64)
    remap[keep] = np.arange(keep.sum())
    pos, subl, sl = pos[keep], subl[keep], sl[keep]
    hop_i, hop_j = [], []
    for i, j in pairs:
        if keep[i] and keep[j]:
            hop_i.append(remap[i])
            hop_j.append(remap[j])
    hop_i = np.asarray(hop_i, dtype=np.int64)
    hop_j = np.asarray(hop_j, dtype=np.int64)
    hop_t = np.full(len(hop_i), -params.t_ev, dtype=complex)

    if np.abs(sl[hop_i] - sl[hop_j]).max(initial=0) > 1:
        raise LatticeError("slicing failed: hops beyond adjacent slices")

    rows = np.unique(np.round(pos[:, 1] / a * 8).astype(np.int64))
    dev = DeviceLattice(
        params=params, geometry=geometry, positions=pos, sublattice=subl,
        onsite=np.zeros(len(pos)), hop_i=hop_i, hop_j=hop_j, hop_t=hop_t,
        slice_of=sl,
        actual={"width_nm": float(pos[:, 1].max() - pos[:, 1].min()),
                "length_nm": float(pos[:, 0].max() - pos[:, 0].min()),
                "rows": int(len(rows)),
                "metallic_snap_applied": bool(metallic_snap_applied)})
    # lead-periodicity guard: outer cell pairs must match slice for slice
    hd, _ = dev.block_hamiltonians
    for pair in ((0, 1), (len(hd) - 2, len(hd) - 1)):
        if hd[pair[0]].shape != hd[pair[1]].shape or \
                not np.allclose(hd[pair[0]], hd[pair[1]], atol=1e-12):
            raise LatticeError("end cells are not periodic lead cells")
    return dev


def build_constriction(params, geometry):
    """Wide-narrow-wide device; the narrow section approximates W."""
    a = params.a_nm
    edge = geometry.edge_type
    snap = geometry.metallic_snap
    n_lead = _row_count(edge, a, geometry.lead_width_nm, snap)
    n_nar = _row_count(edge, a, geometry.constriction_width_nm, snap)
    if n_nar > n_lead:
        n_nar = n_lead
    ladder = _row_ladder(edge, a, geometry.lead_width_nm + 3 * a)[:n_lead]

    cp = 2 * slice_pitch_nm(edge, a)
    n_cells = int(round(geometry.total_length_nm / cp))
    min_cells = 2 * PAD_CELLS + 1
    if n_cells < min_cells:
        raise LatticeError(
            f"total_length {geometry.total_length_nm} nm holds {n_cells} "
            f"cells; need >= {min_cells}")
    x_len = n_cells * cp

    # one margin cell at each end so boundary pruning happens off-device
    pos, subl = _generate_patch_extended(edge, a, -cp, x_len + cp,
                                         ladder[-1])

    j0 = (n_lead - n_nar) // 2
    if edge == EDGE_ZIGZAG:
        j0 -= j0 % 2   # narrow section must start on a valid bottom row
    j1 = j0 + n_nar - 1
    pad = PAD_CELLS * cp
    half = geometry.constriction_length_nm / 2.0
    ramp = x_len / 2.0 - half - pad
    r = _profile_fraction(geometry.profile, pos[:, 0], x_len / 2.0,
                          half, ramp)
    tol = 0.26 * a if edge == EDGE_ZIGZAG else 0.26 * (np.sqrt(3) * a / 2)
    lo = ladder[0] + (ladder[j0] - ladder[0]) * r - tol
    hi = ladder[-1] + (ladder[j1] - ladder[-1]) * r + tol
    ok = (pos[:, 1] > lo) & (pos[:, 1] < hi)
    dev = _assemble(params, geometry, pos[ok], subl[ok], n_cells,
                    snap and edge == EDGE_ARMCHAIR)
    dev.actual["lead_rows"] = n_lead
    dev.actual["constriction_rows"] = n_nar
    dev.actual["lead_width_nm"] = float(ladder[-1] - ladder[0])
    dev.actual["constriction_width_nm"] = float(ladder[j1] - ladder[j0])
    return dev


def build_ribbon(params, edge_type, width_nm, length_nm,
                 metallic_snap=False):
    """Uniform ribbon whose row count best approximates width_nm."""
    cp = 2 * slice_pitch_nm(edge_type, params.a_nm)
    if length_nm < 2 * cp:
        raise LatticeError(
            f"length {length_nm} nm shorter than 2 unit cells ({2 * cp:.3g})")
    geometry = GeometrySpec(
        edge_type=edge_type, lead_width_nm=width_nm,
        constriction_width_nm=width_nm,
        constriction_length_nm=max(length_nm - 1e-9, 1e-9),
        profile="abrupt",
        total_length_nm=max(length_nm, (2 * PAD_CELLS + 1) * cp),
        metallic_snap=metallic_snap)
    return build_constriction(params, geometry)


# ---- mutations -------------------------------------------------------


def apply_peierls(lattice, b_tesla, gauge_y0_nm=0.0):
    """Landau-gauge Peierls substitution, A = (-B (y - y0), 0).

    The gauge keeps the leads translationally invariant along x; the
    field is applied uniformly, leads included (2-probe geometry).
    """
    if b_tesla == 0.0 and gauge_y0_nm == lattice.gauge_y0_nm:
        return lattice
    a = lattice.params.a_nm
    lb_nm = np.sqrt(HBAR_JS / (E_CHARGE_C * abs(b_tesla))) * 1e9 \
        if b_tesla else np.inf
    if lb_nm < 4 * a:
        import warnings
        warnings.warn(
            f"magnetic length {lb_nm:.2f} nm below 4*a'={4 * a:.2f} nm; "
            "scaled-lattice results may be unreliable", stacklevel=2)
    xi, xj = lattice.positions[lattice.hop_i, 0], \
        lattice.positions[lattice.hop_j, 0]
    yi, yj = lattice.positions[lattice.hop_i, 1], \
        lattice.positions[lattice.hop_j, 1]
    # int A.dl along the straight bond, in units of hbar/e; nm^2 -> m^2
    phase = -(E_CHARGE_C * b_tesla / HBAR_JS) * 1e-18 \
        * 0.5 * (yi + yj - 2 * gauge_y0_nm) * (xj - xi)
    new = replace(lattice, hop_t=lattice.hop_t * np.exp(1j * phase),
                  b_tesla=lattice.b_tesla + b_tesla,
                  gauge_y0_nm=gauge_y0_nm)
    return new


def apply_onsite_potential(lattice, profile):
    """Set onsite energies to profile(x_nm, y_nm).

    The outermost two cells at each end copy the values of their inner
    neighbour cell so the leads stay periodic (asymptotic lead value).
    """
    x, y = lattice.positions[:, 0], lattice.positions[:, 1]
    onsite = np.asarray([float(profile(float(xx), float(yy)))
                         for xx, yy in zip(x, y)])
    if not np.all(np.isfinite(onsite)):
        raise LatticeError("onsite profile not finite everywhere")
    cells = lattice.cells
    onsite[cells[0]] = onsite[cells[1]]
    onsite[cells[-1]] = onsite[cells[-2]]
    return replace(lattice, onsite=onsite)


def edge_sites(lattice, depth=1):
    """Sites within `depth` bonds of the boundary (coordination < 3)."""
    nbrs = [[] for _ in range(lattice.n_sites)]
    for i, j in zip(lattice.hop_i, lattice.hop_j):
        nbrs[i].append(j)
        nbrs[j].append(i)
    frontier = {s for s in range(lattice.n_sites) if len(nbrs[s]) < 3}
    marked = set(frontier)
    for _ in range(depth - 1):
        frontier = {t for s in frontier for t in nbrs[s]} - marked
        marked |= frontier
    return np.array(sorted(marked), dtype=np.int64)


def apply_edge_disorder(lattice, spec):
    """Remove edge sites with probability p; leads stay pristine."""
    if spec.edge_removal_probability == 0.0:
        return lattice
    cell_of = lattice.slice_of // 2
    nc = lattice.n_cells
    protected = (cell_of < PAD_CELLS) | (cell_of >= nc - PAD_CELLS)
    cand = edge_sites(lattice, spec.edge_depth)
    cand = cand[~protected[cand]]
    rng = np.random.default_rng(spec.rng_seed)
    drop = cand[rng.random(len(cand)) < spec.edge_removal_probability]
    keep = np.ones(lattice.n_sites, dtype=bool)
    keep[drop] = False

    pairs = list(zip(lattice.hop_i, lattice.hop_j))
    # prune dangling fragments, but never inside the lead cells
    n = lattice.n_sites
    while True:
        deg = np.zeros(n, dtype=np.int64)
        for i, j in pairs:
            if keep[i] and keep[j]:
                deg[i] += 1
                deg[j] += 1
        bad = keep & (deg < 2) & ~protected
        if not bad.any():
            break
        keep[bad] = False

    remap = -np.ones(n, dtype=np.int64)
    remap[keep] = np.arange(keep.sum())
    hop_i, hop_j, hop_t = [], [], []
    for k, (i, j) in enumerate(pairs):
        if keep[i] and keep[j]:
            hop_i.append(remap[i])
            hop_j.append(remap[j])
            hop_t.append(lattice.hop_t[k])
    new = DeviceLattice(
        params=lattice.params, geometry=lattice.geometry,
        positions=lattice.positions[keep],
        sublattice=lattice.sublattice[keep],
        onsite=lattice.onsite[keep],
        hop_i=np.asarray(hop_i, dtype=np.int64),
        hop_j=np.asarray(hop_j, dtype=np.int64),
        hop_t=np.asarray(hop_t, dtype=complex),
        slice_of=lattice.slice_of[keep],
        b_tesla=lattice.b_tesla, gauge_y0_nm=lattice.gauge_y0_nm,
        actual=dict(lattice.actual,
                    disorder_p=spec.edge_removal_probability,
                    disorder_seed=spec.rng_seed,
                    removed_sites=int((~keep).sum())))
    if not new.is_connected():
        raise DisconnectedDeviceError(
            f"edge disorder p={spec.edge_removal_probability} "
            f"seed={spec.rng_seed} disconnected the device")
    return new
