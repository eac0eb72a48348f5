"""Extraction pipeline for conductance measurements.

Every routine runs identically on simulated traces and on ingested
measured CSVs: gate-voltage/density/wavenumber conversions, channel
width extracted three independent ways (semiclassical staircase slope,
magnetic crossover, bias spectroscopy), plateau detection, gate
capacitance from quantum Hall fillings, mean free path, and the small
energy scales (Zeeman vs thermal).
"""

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .constants import DEFAULT_CONSTANTS, R_QUANTUM_OHM


class AnalysisError(Exception):
    pass


class IngestionError(AnalysisError):
    """Measured-trace CSV violates the ingestion schema."""


# ---- unit conversions -----------------------------------------------


def gate_to_kf(gate_v, alpha_f_per_m2, dirac_point_v,
               constants=DEFAULT_CONSTANTS):
    """Carrier density (signed, 1/m^2) and Fermi wavenumber (1/m).

    n = alpha (V_g - V_D) / e; k_F = sqrt(pi |n|).  The sign of n is the
    carrier-type flag: positive for electrons, negative for holes.
    """
    if alpha_f_per_m2 <= 0:
        raise AnalysisError("alpha must be positive")
    n = alpha_f_per_m2 * (np.asarray(gate_v, dtype=float)
                          - dirac_point_v) / constants.e_charge
    k_f = np.sqrt(np.pi * np.abs(n))
    return n, k_f


def kf_to_gate(k_f_per_m, alpha_f_per_m2, dirac_point_v, carrier_sign=1,
               constants=DEFAULT_CONSTANTS):
    """Inverse of :func:`gate_to_kf` for one carrier type."""
    if alpha_f_per_m2 <= 0:
        raise AnalysisError("alpha must be positive")
    n = np.sign(carrier_sign) * np.asarray(k_f_per_m, dtype=float) ** 2 / np.pi
    return dirac_point_v + n * constants.e_charge / alpha_f_per_m2


def ballistic_conductance(k_f_per_m, width_m):
    """Sharvin limit of a graphene constriction.

    Returns (N, G_bal) with N = k_F W / pi transverse modes per spin-valley
    pair and G_bal = 2N in units of 2e^2/h.
    """
    if width_m <= 0:
        raise AnalysisError("width must be positive")
    k = np.asarray(k_f_per_m, dtype=float)
    if np.any(k < 0):
        raise AnalysisError("k_F must be non-negative")
    n_modes = k * width_m / np.pi
    return n_modes, 2.0 * n_modes


# ---- width extraction 1: semiclassical staircase slope --------------


@dataclass(frozen=True)
class WidthFit:
    width_nm: float
    residual: float          # rms of G - slope*k_F, units 2e^2/h
    carrier: str             # 'electron' or 'hole'
    n_points: int


def _fit_through_origin(x, y):
    slope = float(np.dot(x, y) / np.dot(x, x))
    resid = float(np.sqrt(np.mean((y - slope * x) ** 2)))
    return slope, resid


def fit_width_semiclassical(trace, constants=DEFAULT_CONSTANTS,
                            min_points=8):
    """Channel width from the slope of G vs k_F, per carrier type.

    G_bal = (2/pi) k_F W in units of 2e^2/h, so W = slope * pi/2.  Each
    sign of V_g - V_D is fitted separately; the result maps carrier type
    to a :class:`WidthFit`.  Raises when no side has ``min_points``
    usable points.
    """
    n, k_f = gate_to_kf(trace.gate_voltages, trace.alpha_f_per_m2,
                        trace.dirac_point_v, constants)
    g = trace.conductance
    fits = {}
    for name, sel in (("electron", n > 0), ("hole", n < 0)):
        if int(np.count_nonzero(sel)) < min_points:
            continue
        slope, resid = _fit_through_origin(k_f[sel], g[sel])
        fits[name] = WidthFit(width_nm=slope * np.pi / 2.0 * 1e9,
                              residual=resid, carrier=name,
                              n_points=int(np.count_nonzero(sel)))
    if not fits:
        raise AnalysisError(
            f"fewer than {min_points} usable points on either carrier side")
    return fits


# ---- plateau detection ----------------------------------------------


@dataclass(frozen=True)
class Plateau:
    center_gate_v: float
    mean_value: float        # units 2e^2/h
    gate_extent_v: float
    flatness_residual: float


@dataclass(frozen=True)
class PlateauSet:
    plateaus: tuple
    value_tolerance: float
    min_extent_v: float

    def __post_init__(self):
        centers = [p.center_gate_v for p in self.plateaus]
        if centers != sorted(centers):
            raise AnalysisError("plateaus must be ordered by center")
        for a, b in zip(self.plateaus, self.plateaus[1:]):
            if a.center_gate_v + a.gate_extent_v / 2 \
                    > b.center_gate_v - b.gate_extent_v / 2 + 1e-12:
                raise AnalysisError("plateau extents overlap")

    def nearest(self, value):
        """Plateau whose mean is closest to ``value``, or None."""
        if not self.plateaus:
            return None
        return min(self.plateaus,
                   key=lambda p: abs(p.mean_value - value))


def detect_plateaus(trace, value_tolerance=0.05, min_extent=None):
    """Flat stretches of a gate sweep.

    Sliding-window search for maximal gate intervals over which the
    conductance stays within ``value_tolerance`` (2e^2/h) of the interval
    mean; windows shorter than ``min_extent`` (V; default 5% of the sweep
    span) are dropped and overlapping windows resolved longest-first.
    The result is invariant under reversing the sweep direction.
    """
    vg = np.asarray(trace.gate_voltages, dtype=float)
    g = np.asarray(trace.conductance, dtype=float)
    if len(vg) < 2:
        raise AnalysisError("trace too short")
    order = np.argsort(vg)
    vg, g = vg[order], g[order]
    if np.any(np.diff(vg) <= 0):
        raise AnalysisError("gate grid has duplicate points")
    span = vg[-1] - vg[0]
    if min_extent is None:
        min_extent = 0.05 * span
    # two-pointer scan: j_max(i) = furthest right end keeping the window
    # within tolerance of its own mean, i.e. max-min <= 2*tolerance
    n = len(vg)
    windows = []
    j_end = 0
    for i in range(n):
        j = max(j_end, i)
        while j + 1 < n and (g[i:j + 2].max() - g[i:j + 2].min()
                             <= 2 * value_tolerance):
            j += 1
        if j > j_end or not windows:
            windows.append((i, j))
        j_end = j
    # keep maximal windows only (not contained in a neighbour)
    windows = [(i, j) for (i, j) in windows
               if not any(i2 <= i and j <= j2 and (i2, j2) != (i, j)
                          for (i2, j2) in windows)]
    candidates = []
    for i, j in windows:
        extent = vg[j] - vg[i]
        if extent < min_extent or j == i:
            continue
        seg = g[i:j + 1]
        mean = float(seg.mean())
        resid = float(np.sqrt(np.mean((seg - mean) ** 2)))
        candidates.append(Plateau(
            center_gate_v=float(0.5 * (vg[i] + vg[j])),
            mean_value=mean, gate_extent_v=float(extent),
            flatness_residual=resid))
    # resolve overlaps: keep longest first (ties by center, deterministic
    # under reversal since gate values are unchanged)
    chosen = []
    for p in sorted(candidates,
                    key=lambda p: (-p.gate_extent_v, p.center_gate_v)):
        lo = p.center_gate_v - p.gate_extent_v / 2
        hi = p.center_gate_v + p.gate_extent_v / 2
        if all(hi <= q.center_gate_v - q.gate_extent_v / 2 + 1e-12
               or lo >= q.center_gate_v + q.gate_extent_v / 2 - 1e-12
               for q in chosen):
            chosen.append(p)
    chosen.sort(key=lambda p: p.center_gate_v)
    return PlateauSet(plateaus=tuple(chosen),
                      value_tolerance=value_tolerance,
                      min_extent_v=min_extent)


# ---- width extraction 2: magnetic crossover -------------------------


@dataclass(frozen=True)
class CrossoverFit:
    b_star_t: float
    width_nm: float
    saturated_delta_v: float
    slope_v_per_t: float
    residual: float
    ambiguous: bool = False


def crossover_width(plateau_center_vs_b, alpha_f_per_m2, n_index=1,
                    dirac_point_v=0.0, constants=DEFAULT_CONSTANTS):
    """Constriction width from the field dependence of a plateau center.

    ``plateau_center_vs_b`` holds (B_T, delta_V) pairs where delta_V is
    the gate position of plateau N relative to the Dirac point.  The
    model is piecewise: delta_V constant below the crossover field B*
    (confinement-dominated) and linear through the origin above it
    (cyclotron-dominated); B* is where the branches intersect.  The
    saturated delta_V sets k_F through the gate capacitance and
    W = pi hbar k_F / (e B*): the cyclotron-diameter condition
    2 r_c = W holds at the field where the data leave the linear
    branch, which for a hard-wall first subband sits a factor 2/pi
    below the asymptote intersection B*, so evaluating 2 r_c there
    absorbs the factor into pi/2.

    Requires >= 4 points in each regime; an ambiguous split (non-positive
    slope or level) is reported with infinite residual rather than raised.
    """
    pts = sorted((float(b), float(dv)) for b, dv in plateau_center_vs_b)
    b = np.array([p[0] for p in pts])
    dv = np.array([p[1] for p in pts])
    if len(b) < 8:
        raise AnalysisError("need >= 4 points in each regime (>= 8 total)")
    best = None
    for k in range(4, len(b) - 3):      # points [0,k) flat, [k,n) linear
        level = float(dv[:k].mean())
        slope, _ = _fit_through_origin(b[k:], dv[k:])
        model = np.where(np.arange(len(b)) < k, level, slope * b)
        sse = float(np.sum((dv - model) ** 2))
        if best is None or sse < best[0]:
            best = (sse, level, slope)
    sse, level, slope = best
    resid = math.sqrt(sse / len(b))
    ambiguous = slope <= 0 or level <= 0
    if ambiguous:
        return CrossoverFit(b_star_t=float("nan"), width_nm=float("nan"),
                            saturated_delta_v=level, slope_v_per_t=slope,
                            residual=float("inf"), ambiguous=True)
    b_star = level / slope
    _, k_f = gate_to_kf(dirac_point_v + level, alpha_f_per_m2,
                        dirac_point_v, constants)
    width_m = math.pi * constants.hbar * float(k_f) \
        / (constants.e_charge * b_star)
    return CrossoverFit(b_star_t=b_star, width_nm=width_m * 1e9,
                        saturated_delta_v=level, slope_v_per_t=slope,
                        residual=resid)


# ---- gate capacitance from quantum Hall fillings --------------------


def extract_capacitance(plateau_gate_positions, b_tesla, dirac_point_v,
                        constants=DEFAULT_CONSTANTS):
    """Gate capacitance per area (F/m^2) from QHE plateau positions.

    Each (filling nu, V_g) pair pins a density n = nu e B / h; alpha is
    e times the least-squares slope of n versus V_g - V_D through the
    origin.
    """
    if b_tesla <= 0:
        raise AnalysisError("extract_capacitance requires B > 0")
    pts = list(plateau_gate_positions)
    if len(pts) < 2:
        raise AnalysisError("need at least two plateaus")
    nu = np.array([float(p[0]) for p in pts])
    vg = np.array([float(p[1]) for p in pts])
    dens = nu * constants.e_charge * b_tesla / constants.h
    x = vg - dirac_point_v
    if np.dot(x, x) < 1e-30:
        raise AnalysisError("degenerate fit: gate positions at V_D")
    slope, _ = _fit_through_origin(x, dens)
    if slope <= 0:
        raise AnalysisError("degenerate fit: non-positive capacitance")
    return slope * constants.e_charge


# ---- mean free path -------------------------------------------------


def mean_free_path(trace, sample_length_nm, sample_width_nm,
                   constants=DEFAULT_CONSTANTS):
    """Mean free path per gate point from the Einstein relation.

    Two-probe sheet conductance sigma = G L / W (dimensionless squares,
    G in 2e^2/h); lambda = sigma (pi/2) / k_F, which is algebraically
    identical to transmission * L with the Sharvin G_bal above.  Only
    k_F > 0 points are reported; G = 0 maps to lambda = 0.
    """
    if sample_length_nm <= 0 or sample_width_nm <= 0:
        raise AnalysisError("sample dimensions must be positive")
    _, k_f = gate_to_kf(trace.gate_voltages, trace.alpha_f_per_m2,
                        trace.dirac_point_v, constants)
    sigma = trace.conductance * sample_length_nm / sample_width_nm
    out = []
    for k, s in zip(k_f, sigma):
        if k <= 0:
            continue
        lam_m = s * np.pi / (2.0 * k)
        out.append((float(k), float(lam_m * 1e9)))
    return out


@dataclass(frozen=True)
class TransmissionFraction:
    t_frac: float
    mean_free_path_nm: float
    flags: tuple = ()


def transmission_fraction(g_measured, k_f_per_m, width_m, length_m):
    """Channel transmission G/G_bal and the implied mean free path T*L.

    ``g_measured`` in units of 2e^2/h.  A fraction above 1.05 is flagged
    as geometrically inconsistent rather than raised.
    """
    if min(g_measured, k_f_per_m, width_m, length_m) <= 0:
        raise AnalysisError("inputs must be positive")
    _, g_bal = ballistic_conductance(k_f_per_m, width_m)
    t = float(g_measured / g_bal)
    flags = ()
    if t > 1.05:
        flags = ("transmission exceeds 1: inconsistent geometry",)
    return TransmissionFraction(t_frac=t,
                                mean_free_path_nm=t * length_m * 1e9,
                                flags=flags)


# ---- width extraction 3: bias spectroscopy --------------------------


@dataclass(frozen=True)
class BiasSpacing:
    delta_e_mev: float
    width_nm: float
    half_plateau_value: float
    bias_v: float
    gate_extent_v: float


def subband_spacing_from_bias(bias_map, value_tolerance=0.05,
                              min_extent=None, half_tolerance=0.15,
                              constants=DEFAULT_CONSTANTS):
    """Subband spacing from where the half plateau is widest in gate.

    Finite source-drain bias splits each conductance step into two,
    producing plateaus at half-integer multiples of 2e^2/h; the bias at
    which such a half plateau attains its widest gate extent measures the
    subband spacing Delta E = e |V_sd|, and W = hbar v_F pi / Delta E.
    """
    vsd = np.asarray(bias_map.bias_voltages, dtype=float)
    finite = np.abs(vsd) > 1e-12
    if not np.any(finite):
        raise AnalysisError("no finite-bias data in map")
    best = None
    for j in np.flatnonzero(finite):
        col = _column_trace(bias_map, j)
        ps = detect_plateaus(col, value_tolerance, min_extent)
        for p in ps.plateaus:
            frac = p.mean_value - math.floor(p.mean_value)
            if abs(frac - 0.5) > half_tolerance or p.mean_value < 0.25:
                continue
            key = (p.gate_extent_v, -abs(vsd[j]))
            if best is None or key > best[0]:
                best = (key, p, float(vsd[j]))
    if best is None:
        raise AnalysisError("no half plateau resolvable")
    _, p, bias = best
    delta_e_ev = abs(bias)      # symmetric split: e|V_sd| spans one step
    width_nm = constants.hbar_vf_evnm * np.pi / delta_e_ev
    return BiasSpacing(delta_e_mev=delta_e_ev * 1e3, width_nm=width_nm,
                       half_plateau_value=p.mean_value, bias_v=bias,
                       gate_extent_v=p.gate_extent_v)


def _column_trace(bias_map, j):
    """View one bias column of a map as a gate trace."""
    from .transport import ConductanceTrace
    return ConductanceTrace(
        gate_voltages=bias_map.gate_voltages,
        conductance=bias_map.g_diff[:, j],
        alpha_f_per_m2=bias_map.alpha_f_per_m2 or 1.0,
        dirac_point_v=bias_map.dirac_point_v,
        b_tesla=bias_map.b_tesla)


# ---- small energy scales --------------------------------------------


def energy_scales(b_tesla, temperature_k, g_factor=2.0,
                  constants=DEFAULT_CONSTANTS):
    """(Zeeman eV, thermal eV, their ratio) for a field and temperature."""
    zeeman = g_factor * constants.mu_B * abs(b_tesla)
    thermal = constants.k_B * temperature_k
    ratio = zeeman / thermal if thermal > 0 else float("inf")
    if zeeman == 0 and thermal == 0:
        ratio = float("nan")
    return zeeman, thermal, ratio


# ---- series resistance ----------------------------------------------


def subtract_series_resistance(trace, r_series_ohm):
    """Remove a series (contact) resistance from a two-probe trace.

    G and the result are in units of 2e^2/h; points where the raw
    resistance does not exceed R_series are an over-subtraction error.
    Negative R_series re-adds a previously subtracted resistance.
    """
    from .transport import ConductanceTrace
    g = np.asarray(trace.conductance, dtype=float)
    with np.errstate(divide="ignore"):
        r_raw = np.where(g > 0, R_QUANTUM_OHM / np.maximum(g, 1e-300),
                         np.inf)                             # ohm
    if np.any(r_raw <= r_series_ohm):
        bad = int(np.argmax(r_raw <= r_series_ohm))
        raise AnalysisError(
            f"over-subtraction: raw resistance {r_raw[bad]:.4g} ohm at "
            f"point {bad} does not exceed R_series = {r_series_ohm} ohm")
    with np.errstate(divide="ignore"):
        g_corr = np.where(g > 0,
                          R_QUANTUM_OHM / (r_raw - r_series_ohm), 0.0)
    return ConductanceTrace(
        gate_voltages=np.array(trace.gate_voltages, copy=True),
        conductance=g_corr, alpha_f_per_m2=trace.alpha_f_per_m2,
        dirac_point_v=trace.dirac_point_v, b_tesla=trace.b_tesla,
        temperature_k=trace.temperature_k,
        series_resistance_ohm=trace.series_resistance_ohm + r_series_ohm,
        device_fingerprint=trace.device_fingerprint,
        flags=list(trace.flags))


# ---- extraction report ----------------------------------------------


ABSENT = {"absent": True}


@dataclass
class ExtractionReport:
    """Named extraction results, each with method tag and residual.

    Quantities that could not be computed stay explicitly absent
    (``{"absent": true, "reason": ...}``) instead of being zero-filled.
    """

    results: dict = field(default_factory=dict)

    FIELDS = ("width_semiclassical_nm", "width_crossover_nm",
              "width_spacing_nm", "alpha_F_per_m2", "mfp_nm_vs_kf",
              "delta_E_meV", "crossover_B_T")

    def set(self, name, value, method, residual=None, extra=None):
        entry = {"value": value, "method": method}
        if residual is not None:
            entry["residual"] = residual
        if extra:
            entry.update(extra)
        self.results[name] = entry

    def mark_absent(self, name, reason):
        self.results[name] = {"absent": True, "reason": reason}

    def as_dict(self):
        out = {}
        for name in self.FIELDS:
            out[name] = self.results.get(
                name, {"absent": True, "reason": "not requested"})
        for name, entry in self.results.items():
            if name not in out:
                out[name] = entry
        return out

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---- measured-trace ingestion ---------------------------------------

_META_FLOAT_KEYS = ("alpha_F_per_m2", "dirac_point_V", "B_T",
                    "temperature_K", "R_series_ohm", "L_nm", "W_nm")


def parse_measurement_csv(path):
    """Read a measured gate sweep into a trace plus its metadata.

    Format: leading ``# key = value`` metadata lines, then a header row
    ``Vg_V,G_siemens`` or ``Vg_V,G_2e2_over_h``, then numeric rows.
    Conductance in siemens is converted to units of 2e^2/h.  Returns
    (ConductanceTrace, metadata dict).  Schema violations carry the
    offending line number.
    """
    from .transport import ConductanceTrace
    meta = {}
    header = None
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" not in body:
                    raise IngestionError(
                        f"{path}:{lineno}: metadata line without '='")
                key, _, val = body.partition("=")
                meta[key.strip()] = val.strip()
                continue
            cells = [c.strip() for c in line.split(",")]
            if header is None:
                header = cells
                if len(header) != 2 or header[0] != "Vg_V" or \
                        header[1] not in ("G_siemens", "G_2e2_over_h"):
                    raise IngestionError(
                        f"{path}:{lineno}: header must be "
                        f"'Vg_V,G_siemens' or 'Vg_V,G_2e2_over_h', "
                        f"got {line!r}")
                continue
            if len(cells) != 2:
                raise IngestionError(
                    f"{path}:{lineno}: expected 2 columns, got {len(cells)}")
            try:
                rows.append((float(cells[0]), float(cells[1])))
            except ValueError:
                raise IngestionError(
                    f"{path}:{lineno}: non-numeric value in {line!r}")
    if header is None or not rows:
        raise IngestionError(f"{path}: no data rows found")
    for key in ("alpha_F_per_m2", "dirac_point_V"):
        if key not in meta:
            raise IngestionError(f"{path}: missing metadata key {key!r}")
    parsed = {}
    for key in _META_FLOAT_KEYS:
        if key in meta:
            try:
                parsed[key] = float(meta[key])
            except ValueError:
                raise IngestionError(
                    f"{path}: metadata {key!r} is not numeric: "
                    f"{meta[key]!r}")
    vg = np.array([r[0] for r in rows])
    g = np.array([r[1] for r in rows])
    if header[1] == "G_siemens":
        g = g * R_QUANTUM_OHM
    order = np.argsort(vg)
    trace = ConductanceTrace(
        gate_voltages=vg[order], conductance=g[order],
        alpha_f_per_m2=parsed["alpha_F_per_m2"],
        dirac_point_v=parsed["dirac_point_V"],
        b_tesla=parsed.get("B_T", 0.0),
        temperature_k=parsed.get("temperature_K", 0.0),
        series_resistance_ohm=parsed.get("R_series_ohm", 0.0))
    return trace, parsed
