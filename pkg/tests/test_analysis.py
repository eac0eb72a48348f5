import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gntransport.analysis import (AnalysisError, ExtractionReport,
                                  IngestionError, Plateau, PlateauSet,
                                  ballistic_conductance, crossover_width,
                                  detect_plateaus, energy_scales,
                                  extract_capacitance,
                                  fit_width_semiclassical, gate_to_kf,
                                  kf_to_gate, mean_free_path,
                                  parse_measurement_csv,
                                  subband_spacing_from_bias,
                                  subtract_series_resistance,
                                  transmission_fraction)
from gntransport.constants import DEFAULT_CONSTANTS, R_QUANTUM_OHM
from gntransport.transport import BiasMap, ConductanceTrace

ALPHA = 8e-4


def make_trace(vg, g, alpha=ALPHA, vd=0.0, **kw):
    return ConductanceTrace(np.asarray(vg, float), np.asarray(g, float),
                            alpha, vd, **kw)


# ---- conversions ----------------------------------------------------


def test_gate_to_kf_sign_and_magnitude():
    n, k = gate_to_kf([1.0], ALPHA, 0.0)
    assert n[0] == pytest.approx(ALPHA / DEFAULT_CONSTANTS.e_charge)
    assert k[0] == pytest.approx(np.sqrt(np.pi * n[0]))
    n2, k2 = gate_to_kf([-1.0], ALPHA, 0.0)
    assert n2[0] == pytest.approx(-n[0])
    assert k2[0] == pytest.approx(k[0])
    with pytest.raises(AnalysisError):
        gate_to_kf([1.0], -ALPHA, 0.0)


@given(vg=st.floats(-40.0, 40.0), vd=st.floats(-5.0, 5.0),
       alpha=st.floats(1e-5, 1e-2))
@settings(max_examples=60, deadline=None)
def test_gate_kf_round_trip(vg, vd, alpha):
    n, k = gate_to_kf([vg], alpha, vd)
    back = kf_to_gate(k, alpha, vd, carrier_sign=1 if n[0] >= 0 else -1)
    assert back[0] == pytest.approx(vg, abs=1e-9)


def test_ballistic_conductance_published_scale():
    # k_F = 0.7 / nm in a 2.5 um channel: ~56 modes, G_bal ~ 110 x 2e^2/h
    n, g = ballistic_conductance(7e7, 2.5e-6)
    assert n == pytest.approx(55.7, abs=0.1)
    assert g == pytest.approx(110.0, rel=0.02)
    with pytest.raises(AnalysisError):
        ballistic_conductance(7e7, -1.0)


def test_transmission_fraction_and_mfp_link():
    # G = 21 x 2e^2/h in that channel: T ~ 19%, lambda = T L ~ 190 nm
    res = transmission_fraction(21.0, 7e7, 2.5e-6, 1e-6)
    assert res.t_frac * 100 == pytest.approx(18.85, abs=0.05)
    assert res.mean_free_path_nm == pytest.approx(188.5, abs=0.5)
    assert res.flags == ()
    bad = transmission_fraction(200.0, 7e7, 2.5e-6, 1e-6)
    assert bad.flags


def test_mean_free_path_matches_transmission_times_length():
    vg = np.linspace(0.5, 3.0, 15)
    g = np.linspace(2.0, 9.0, 15)
    l_nm, w_nm = 1000.0, 2500.0
    trace = make_trace(vg, g)
    pts = mean_free_path(trace, l_nm, w_nm)
    assert len(pts) == len(vg)
    for (k, lam), gi in zip(pts, g):
        frac = transmission_fraction(gi, k, w_nm * 1e-9, l_nm * 1e-9)
        assert lam == pytest.approx(frac.mean_free_path_nm, rel=1e-10)
    with pytest.raises(AnalysisError):
        mean_free_path(trace, 0.0, w_nm)


# ---- semiclassical width fit ----------------------------------------


def test_fit_width_semiclassical_recovers_exact_width():
    width_nm = 85.0
    vg = np.concatenate([np.linspace(-3, -0.3, 12),
                         np.linspace(0.3, 3, 12)])
    n, k = gate_to_kf(vg, ALPHA, 0.0)
    g = (2.0 / np.pi) * k * width_nm * 1e-9
    fits = fit_width_semiclassical(make_trace(vg, g))
    assert set(fits) == {"electron", "hole"}
    for f in fits.values():
        assert f.width_nm == pytest.approx(width_nm, rel=1e-10)
        assert f.residual < 1e-10
    with pytest.raises(AnalysisError):
        fit_width_semiclassical(make_trace(vg[:4], g[:4]))


# ---- plateau detection ----------------------------------------------


def staircase_trace(noise=0.0, seed=0):
    vg = np.linspace(0.0, 3.8, 381)
    g = np.floor(vg) + np.clip((vg % 1 - 0.8) / 0.2, 0.0, 1.0)
    if noise:
        g = g + np.random.default_rng(seed).normal(0, noise, g.shape)
    return make_trace(vg, g)


def test_detect_plateaus_staircase():
    ps = detect_plateaus(staircase_trace(), value_tolerance=0.02,
                         min_extent=0.3)
    values = sorted(round(p.mean_value) for p in ps.plateaus)
    assert values == [0, 1, 2, 3]
    for p in ps.plateaus:
        assert p.flatness_residual <= 0.02


def test_detect_plateaus_reversal_invariant():
    tr = staircase_trace(noise=0.005)
    fwd = detect_plateaus(tr, value_tolerance=0.03, min_extent=0.3)
    rev = detect_plateaus(
        make_trace(tr.gate_voltages[::-1], tr.conductance[::-1]),
        value_tolerance=0.03, min_extent=0.3)
    assert len(fwd.plateaus) == len(rev.plateaus)
    for a, b in zip(fwd.plateaus, rev.plateaus):
        assert a.center_gate_v == pytest.approx(b.center_gate_v)
        assert a.mean_value == pytest.approx(b.mean_value)


def test_detect_plateaus_non_overlap_and_nearest():
    ps = detect_plateaus(staircase_trace(noise=0.01, seed=3),
                         value_tolerance=0.05, min_extent=0.2)
    for a, b in zip(ps.plateaus, ps.plateaus[1:]):
        assert a.center_gate_v + a.gate_extent_v / 2 \
            <= b.center_gate_v - b.gate_extent_v / 2 + 1e-12
    near = ps.nearest(2.0)
    assert near is not None and abs(near.mean_value - 2.0) < 0.1
    assert PlateauSet(plateaus=(), value_tolerance=0.05,
                      min_extent_v=0.1).nearest(1.0) is None


def test_plateau_set_validation():
    p1 = Plateau(0.5, 1.0, 0.4, 0.0)
    p2 = Plateau(0.6, 2.0, 0.4, 0.0)
    with pytest.raises(AnalysisError):
        PlateauSet(plateaus=(p1, p2), value_tolerance=0.05,
                   min_extent_v=0.1)
    with pytest.raises(AnalysisError):
        PlateauSet(plateaus=(p2, p1), value_tolerance=0.05,
                   min_extent_v=0.1)


def test_detect_plateaus_rejects_degenerate_grids():
    with pytest.raises(AnalysisError):
        detect_plateaus(make_trace([0.0], [1.0]))
    with pytest.raises(AnalysisError):
        detect_plateaus(make_trace([0.0, 0.0, 1.0], [1.0, 1.0, 1.0]))


# ---- crossover width ------------------------------------------------


def test_crossover_width_recovers_synthetic_model():
    level, slope = 0.12, 0.10          # B* = 1.2 T
    b = np.linspace(0.1, 3.0, 14)
    dv = np.where(b < level / slope, level, slope * b)
    fit = crossover_width(zip(b, dv), ALPHA)
    assert fit.b_star_t == pytest.approx(1.2, rel=1e-6)
    assert not fit.ambiguous
    _, kf = gate_to_kf([level], ALPHA, 0.0)
    expect_nm = np.pi * DEFAULT_CONSTANTS.hbar * kf[0] \
        / (DEFAULT_CONSTANTS.e_charge * 1.2) * 1e9
    assert fit.width_nm == pytest.approx(expect_nm, rel=1e-6)


def test_crossover_width_ambiguous_and_short():
    b = np.linspace(0.1, 3.0, 10)
    fit = crossover_width(zip(b, -0.1 * np.ones_like(b)), ALPHA)
    assert fit.ambiguous and fit.residual == np.inf
    assert np.isnan(fit.width_nm)
    with pytest.raises(AnalysisError):
        crossover_width(zip(b[:6], b[:6]), ALPHA)


# ---- capacitance ----------------------------------------------------


def test_extract_capacitance_round_trip():
    b, vd = 0.5, 0.2
    nus = [2, 6, 10, 14]
    pts = [(nu, kf_to_gate(np.sqrt(np.pi * nu * DEFAULT_CONSTANTS.e_charge
                                   * b / DEFAULT_CONSTANTS.h),
                           ALPHA, vd)) for nu in nus]
    alpha = extract_capacitance(pts, b, vd)
    assert alpha == pytest.approx(ALPHA, rel=1e-10)
    with pytest.raises(AnalysisError):
        extract_capacitance(pts, 0.0, vd)
    with pytest.raises(AnalysisError):
        extract_capacitance(pts[:1], b, vd)
    with pytest.raises(AnalysisError):
        extract_capacitance([(2, vd), (6, vd)], b, vd)


# ---- bias spectroscopy ----------------------------------------------


def synthetic_bias_map():
    """Half plateau at 1.5 widest at |Vsd| = 5 mV."""
    vg = np.linspace(0.0, 1.0, 201)
    vsd = np.array([-0.005, -0.002, 0.0, 0.002, 0.005])
    cols = []
    for vb in vsd:
        w = abs(vb) / 0.005          # half-step width grows with bias
        g = np.floor(2 * vg + 1)     # integer staircase vs gate
        half = (vg > 0.45 - 0.2 * w) & (vg < 0.45 + 0.2 * w)
        g = np.where(half, 1.5, g)
        cols.append(g)
    return BiasMap(vg, vsd, np.column_stack(cols), ALPHA, 0.0)


def test_subband_spacing_from_bias_synthetic():
    res = subband_spacing_from_bias(synthetic_bias_map(),
                                    value_tolerance=0.05,
                                    min_extent=0.05)
    assert res.bias_v == pytest.approx(-0.005)
    assert res.delta_e_mev == pytest.approx(5.0)
    assert res.half_plateau_value == pytest.approx(1.5, abs=0.05)
    assert res.width_nm == pytest.approx(
        DEFAULT_CONSTANTS.hbar_vf_evnm * np.pi / 0.005, rel=1e-9)


def test_subband_spacing_requires_finite_bias():
    vg = np.linspace(0, 1, 11)
    bm = BiasMap(vg, np.array([0.0]), np.ones((11, 1)), ALPHA, 0.0)
    with pytest.raises(AnalysisError):
        subband_spacing_from_bias(bm)


# ---- energy scales --------------------------------------------------


def test_energy_scales_published_values():
    z, th, ratio = energy_scales(0.2, 4.2)
    assert z * 1e6 == pytest.approx(23.2, abs=0.1)      # ueV
    assert th * 1e6 == pytest.approx(362.0, abs=1.0)    # ueV
    assert ratio == pytest.approx(0.064, abs=0.002)
    assert energy_scales(1.0, 0.0)[2] == np.inf
    assert np.isnan(energy_scales(0.0, 0.0)[2])


# ---- series resistance ----------------------------------------------


def test_subtract_series_resistance_inverse_and_guard():
    vg = np.linspace(0, 2, 9)
    g = np.linspace(0.0, 4.0, 9)
    tr = make_trace(vg, g)
    corr = subtract_series_resistance(tr, 500.0)
    back = subtract_series_resistance(corr, -500.0)
    assert np.allclose(back.conductance, g, atol=1e-12)
    assert corr.series_resistance_ohm == pytest.approx(500.0)
    # corrected conductance is larger wherever current flows
    assert np.all(corr.conductance[g > 0] > g[g > 0])
    assert corr.conductance[0] == 0.0
    with pytest.raises(AnalysisError):
        subtract_series_resistance(tr, 2 * R_QUANTUM_OHM)


# ---- extraction report ----------------------------------------------


def test_extraction_report_absent_marking(tmp_path):
    import json
    rep = ExtractionReport()
    rep.set("width_semiclassical_nm", 85.0, "staircase-slope",
            residual=0.01)
    rep.mark_absent("width_crossover_nm", "no field fan provided")
    d = rep.as_dict()
    assert d["width_semiclassical_nm"]["value"] == 85.0
    assert d["width_crossover_nm"] == {
        "absent": True, "reason": "no field fan provided"}
    assert d["delta_E_meV"]["absent"] is True
    path = tmp_path / "report.json"
    rep.to_json(path)
    assert json.loads(path.read_text())["alpha_F_per_m2"]["absent"]


# ---- CSV ingestion --------------------------------------------------


def write_csv(path, text):
    path.write_text(text)
    return path


def test_parse_measurement_csv_siemens_conversion(tmp_path):
    p = write_csv(tmp_path / "m.csv",
                  "# alpha_F_per_m2 = 8e-4\n"
                  "# dirac_point_V = 0.1\n"
                  "# temperature_K = 4.2\n"
                  "Vg_V,G_siemens\n"
                  "1.0,7.7484e-05\n"
                  "0.5,3.8742e-05\n")
    tr, meta = parse_measurement_csv(p)
    # sorted by gate, siemens -> 2e^2/h
    assert tr.gate_voltages[0] == 0.5
    assert tr.conductance[1] == pytest.approx(
        7.7484e-05 * R_QUANTUM_OHM, rel=1e-12)
    assert tr.conductance[1] == pytest.approx(1.0, abs=1e-3)
    assert tr.temperature_k == 4.2
    assert meta["dirac_point_V"] == 0.1


@pytest.mark.parametrize("body,fragment", [
    ("Vg_V,G_2e2_over_h\n1.0,2.0\n", "missing metadata key"),
    ("# alpha_F_per_m2 = 8e-4\n# dirac_point_V = 0\n"
     "Vg_V,Amps\n1.0,2.0\n", "header"),
    ("# alpha_F_per_m2 = 8e-4\n# dirac_point_V = 0\n"
     "Vg_V,G_2e2_over_h\n1.0,2.0,3.0\n", "2 columns"),
    ("# alpha_F_per_m2 = 8e-4\n# dirac_point_V = 0\n"
     "Vg_V,G_2e2_over_h\n1.0,two\n", "non-numeric"),
    ("# alpha_F_per_m2 = eight\n# dirac_point_V = 0\n"
     "Vg_V,G_2e2_over_h\n1.0,2.0\n", "not numeric"),
    ("# broken line\nVg_V,G_2e2_over_h\n1.0,2.0\n", "without '='"),
    ("# alpha_F_per_m2 = 8e-4\n# dirac_point_V = 0\n", "no data rows"),
])
def test_parse_measurement_csv_schema_errors(tmp_path, body, fragment):
    p = write_csv(tmp_path / "bad.csv", body)
    with pytest.raises(IngestionError) as exc:
        parse_measurement_csv(p)
    assert fragment in str(exc.value)


def test_schema_errors_carry_line_numbers(tmp_path):
    p = write_csv(tmp_path / "bad.csv",
                  "# alpha_F_per_m2 = 8e-4\n"
                  "# dirac_point_V = 0\n"
                  "Vg_V,G_2e2_over_h\n"
                  "1.0,2.0\n"
                  "1.5,oops\n")
    with pytest.raises(IngestionError) as exc:
        parse_measurement_csv(p)
    assert f"{p}:5:" in str(exc.value)
