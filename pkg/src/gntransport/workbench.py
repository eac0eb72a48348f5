"""Configuration-driven sweep runner and analysis orchestrator.

A JSON config describes one device, one sweep (gate trace, magnetic
field fan, bias map, or disorder ensemble) and optionally a set of
extractions to run on the results.  Outputs are plain CSV/JSON plus a
manifest with per-file checksums so identical configs and seeds yield
bit-identical runs.
"""

import csv
import dataclasses
import hashlib
import json
import os
import time

import numpy as np

from . import analysis as ana
from . import transport as tp
from .constants import DEFAULT_CONSTANTS, PhysicalConstants
from .lattice import (DisorderSpec, GeometrySpec, LatticeParams,
                      apply_edge_disorder, apply_peierls,
                      build_constriction)

ARTIFACT_VERSION = "0.1.0"

SWEEP_KINDS = ("gate", "field-fan", "bias-map", "disorder-ensemble")
EXTRACTIONS = ("semiclassical_width", "plateaus", "crossover",
               "capacitance", "mean_free_path", "bias_spacing",
               "energy_scales")


class ConfigError(Exception):
    """All validation problems of one document, each with its JSON path."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{p}: {m}" for p, m in self.errors))


class RunError(Exception):
    pass


# ---- config schema --------------------------------------------------

_GEOMETRY_KEYS = {"edge_type": str, "lead_width_nm": (int, float),
                  "constriction_width_nm": (int, float),
                  "constriction_length_nm": (int, float),
                  "profile": str, "total_length_nm": (int, float),
                  "metallic_snap": bool}
_LATTICE_KEYS = {"cc_distance_nm": (int, float),
                 "hopping_ev": (int, float), "scaling": (int, float)}
_DISORDER_KEYS = {"edge_removal_probability": (int, float),
                  "rng_seed": int, "edge_depth": int}
_SWEEP_KEYS = {"kind": str, "gate": dict, "bias": dict,
               "fields_T": list, "B_T": (int, float), "seeds": int,
               "alpha_F_per_m2": (int, float),
               "dirac_point_V": (int, float),
               "temperature_K": (int, float), "eta_eV": (int, float)}
_ANALYSIS_KEYS = {"extractions": list,
                  "value_tolerance": (int, float),
                  "min_extent_V": (int, float),
                  "L_nm": (int, float), "W_nm": (int, float),
                  "plateau_index": int, "v_F_m_per_s": (int, float)}
_OUTPUT_KEYS = {"directory": str, "formats": list}


@dataclasses.dataclass
class RunConfig:
    geometry: GeometrySpec
    lattice: LatticeParams
    disorder: "DisorderSpec | None"
    sweep: dict
    analysis: dict
    output: dict
    document: dict

    @property
    def config_hash(self):
        blob = json.dumps(self.document, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _check_keys(section, allowed, path, errors):
    for key, val in section.items():
        if key not in allowed:
            errors.append((f"{path}.{key}", "unknown key"))
        elif not isinstance(val, allowed[key]) or isinstance(val, bool) \
                and allowed[key] != bool:
            errors.append((f"{path}.{key}",
                           f"expected {allowed[key]}, got "
                           f"{type(val).__name__}"))


def _grid_values(spec, path, errors, allow_negative=True):
    if "values" in spec:
        extra = set(spec) - {"values"}
        for k in extra:
            errors.append((f"{path}.{k}", "unknown key"))
        vals = spec["values"]
        if not isinstance(vals, list) or not vals:
            errors.append((f"{path}.values", "must be a non-empty list"))
            return None
        arr = np.asarray(vals, dtype=float)
    else:
        extra = set(spec) - {"start", "stop", "count"}
        for k in extra:
            errors.append((f"{path}.{k}", "unknown key"))
        missing = {"start", "stop", "count"} - set(spec)
        if missing:
            errors.append((path, f"missing keys {sorted(missing)}"))
            return None
        if spec["count"] < 1:
            errors.append((f"{path}.count", "must be >= 1"))
            return None
        arr = np.linspace(spec["start"], spec["stop"], spec["count"])
    if len(arr) > 1 and np.any(np.diff(arr) <= 0):
        errors.append((path, "grid must be strictly increasing"))
        return None
    return arr


def parse_config(document):
    """Validate a config document into a RunConfig.

    Unknown keys are rejected, every violation is reported with its JSON
    path, and documented defaults are filled in.  Raises ConfigError
    listing all problems at once.
    """
    errors = []
    if not isinstance(document, dict):
        raise ConfigError([("$", "document must be a JSON object")])
    for key in document:
        if key not in ("device", "sweep", "analysis", "output"):
            errors.append((key, "unknown key"))
    device = document.get("device")
    if not isinstance(device, dict):
        errors.append(("device", "missing or not an object"))
        device = {}
    for key in device:
        if key not in ("geometry", "lattice", "disorder"):
            errors.append((f"device.{key}", "unknown key"))
    geo_doc = device.get("geometry")
    if not isinstance(geo_doc, dict):
        errors.append(("device.geometry", "missing or not an object"))
        geo_doc = {}
    _check_keys(geo_doc, _GEOMETRY_KEYS, "device.geometry", errors)
    lat_doc = device.get("lattice", {})
    _check_keys(lat_doc, _LATTICE_KEYS, "device.lattice", errors)
    dis_doc = device.get("disorder")
    if dis_doc is not None:
        _check_keys(dis_doc, _DISORDER_KEYS, "device.disorder", errors)

    sweep = dict(document.get("sweep") or {})
    if not sweep:
        errors.append(("sweep", "missing or not an object"))
    _check_keys(sweep, _SWEEP_KEYS, "sweep", errors)
    kind = sweep.get("kind")
    if kind not in SWEEP_KINDS:
        errors.append(("sweep.kind",
                       f"must be one of {', '.join(SWEEP_KINDS)}"))
    for key in ("alpha_F_per_m2", "dirac_point_V"):
        if key not in sweep:
            errors.append((f"sweep.{key}", "required"))
        elif key == "alpha_F_per_m2" and isinstance(
                sweep[key], (int, float)) and sweep[key] <= 0:
            errors.append((f"sweep.{key}", "must be positive"))
    if "gate" in sweep and isinstance(sweep["gate"], dict):
        sweep["gate_values"] = _grid_values(sweep["gate"], "sweep.gate",
                                            errors)
    else:
        errors.append(("sweep.gate", "required grid"))
    if kind == "bias-map":
        if "bias" in sweep and isinstance(sweep["bias"], dict):
            sweep["bias_values"] = _grid_values(sweep["bias"],
                                                "sweep.bias", errors)
        else:
            errors.append(("sweep.bias", "required for bias-map"))
    if kind == "field-fan":
        fields = sweep.get("fields_T")
        if not isinstance(fields, list) or not fields:
            errors.append(("sweep.fields_T",
                           "required non-empty list for field-fan"))
        elif sorted(fields) != fields:
            errors.append(("sweep.fields_T", "must be sorted ascending"))
    if kind == "disorder-ensemble":
        if not isinstance(sweep.get("seeds"), int) or sweep["seeds"] < 1:
            errors.append(("sweep.seeds",
                           "required positive count for disorder-ensemble"))
        if dis_doc is None:
            errors.append(("device.disorder",
                           "required for disorder-ensemble"))
    sweep.setdefault("B_T", 0.0)
    sweep.setdefault("temperature_K", 0.0)
    sweep.setdefault("eta_eV", tp.DEFAULT_ETA_EV)

    analysis = dict(document.get("analysis") or {})
    _check_keys(analysis, _ANALYSIS_KEYS, "analysis", errors)
    for name in analysis.get("extractions", []):
        if name not in EXTRACTIONS:
            errors.append(("analysis.extractions",
                           f"unknown extraction {name!r}"))
    analysis.setdefault("extractions", [])
    analysis.setdefault("value_tolerance", 0.05)

    output = dict(document.get("output") or {})
    _check_keys(output, _OUTPUT_KEYS, "output", errors)
    output.setdefault("directory", "out")
    output.setdefault("formats", ["csv", "json"])

    cw = geo_doc.get("constriction_width_nm")
    lw = geo_doc.get("lead_width_nm")
    if isinstance(cw, (int, float)) and isinstance(lw, (int, float)) \
            and cw > lw:
        errors.append(("device.geometry.constriction_width_nm",
                       "exceeds lead_width_nm"))
    geometry = lattice = disorder = None
    try:
        geometry = GeometrySpec(**geo_doc)
    except (TypeError, ValueError) as exc:
        if not errors:
            errors.append(("device.geometry", str(exc)))
    try:
        lattice = LatticeParams(**lat_doc)
    except (TypeError, ValueError) as exc:
        if not any(p.startswith("device.lattice") for p, _ in errors):
            errors.append(("device.lattice", str(exc)))
    if dis_doc is not None:
        try:
            disorder = DisorderSpec(**dis_doc)
        except (TypeError, ValueError) as exc:
            errors.append(("device.disorder", str(exc)))
    if errors:
        raise ConfigError(errors)
    return RunConfig(geometry=geometry, lattice=lattice,
                     disorder=disorder, sweep=sweep, analysis=analysis,
                     output=output, document=document)


def load_config(path):
    try:
        with open(path) as fh:
            document = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError([("$", f"malformed JSON: {exc}")])
    return parse_config(document)


# ---- run -------------------------------------------------------------


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclasses.dataclass
class RunManifest:
    config_hash: str
    artifact_version: str
    seeds: list
    wall_clock_s: float
    outputs: dict          # filename -> sha256
    warnings: list

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2,
                      sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls(**json.load(fh))


def _build_device(config, seed_override=None):
    dev = build_constriction(config.lattice, config.geometry)
    if config.disorder is not None:
        spec = config.disorder
        if seed_override is not None:
            spec = dataclasses.replace(spec, rng_seed=seed_override)
        dev = apply_edge_disorder(dev, spec)
    return dev


def run(config, out_dir=None, seed=None, threads=None):
    """Execute the configured sweep; returns the manifest.

    Output files land in ``out_dir`` (default: the config's output
    directory).  On failure all partially written outputs are removed.
    """
    out_dir = out_dir or config.output["directory"]
    os.makedirs(out_dir, exist_ok=True)
    sw = config.sweep
    gate = sw["gate_values"]
    alpha = sw["alpha_F_per_m2"]
    vd = sw["dirac_point_V"]
    temp = sw["temperature_K"]
    eta = sw["eta_eV"]
    written = []
    warnings = []
    seeds = []
    t0 = time.monotonic()

    def emit_trace(trace, name):
        path = os.path.join(out_dir, name)
        trace.to_csv(path)
        written.append(path)
        warnings.extend(trace.flags)
        return trace

    try:
        kind = sw["kind"]
        if kind == "gate":
            dev = _build_device(config, seed)
            if config.disorder is not None:
                seeds.append(seed if seed is not None
                             else config.disorder.rng_seed)
            trace = tp.conductance_vs_gate(
                dev, gate, alpha, vd, b_tesla=sw["B_T"],
                temperature_k=temp, eta_ev=eta, threads=threads)
            emit_trace(trace, "trace.csv")
        elif kind == "field-fan":
            dev = _build_device(config, seed)
            if config.disorder is not None:
                seeds.append(seed if seed is not None
                             else config.disorder.rng_seed)
            traces = []
            for b in sw["fields_T"]:
                trace = tp.conductance_vs_gate(
                    dev, gate, alpha, vd, b_tesla=float(b),
                    temperature_k=temp, eta_ev=eta, threads=threads)
                traces.append(trace)
                emit_trace(trace, f"fan_B{b:g}.csv")
            path = os.path.join(out_dir, "fan_combined.csv")
            with open(path, "w", newline="") as fh:
                fh.write(f"# device = {dev.fingerprint()}\n")
                fh.write(f"# fields_T = "
                         f"{' '.join(f'{b:g}' for b in sw['fields_T'])}\n")
                w = csv.writer(fh)
                w.writerow(["Vg_V"] + [f"G_B{b:g}_2e2_over_h"
                                       for b in sw["fields_T"]])
                for i, vg in enumerate(gate):
                    w.writerow([f"{vg:.12g}"]
                               + [f"{t.conductance[i]:.12g}"
                                  for t in traces])
            written.append(path)
        elif kind == "bias-map":
            dev = _build_device(config, seed)
            if config.disorder is not None:
                seeds.append(seed if seed is not None
                             else config.disorder.rng_seed)
            bmap = tp.bias_map(dev, gate, sw["bias_values"], alpha, vd,
                               b_tesla=sw["B_T"], eta_ev=eta,
                               threads=threads)
            path = os.path.join(out_dir, "bias_map.csv")
            bmap.to_csv(path)
            written.append(path)
        elif kind == "disorder-ensemble":
            base = seed if seed is not None else config.disorder.rng_seed
            traces = []
            for i in range(sw["seeds"]):
                s = base + i
                seeds.append(s)
                dev = _build_device(config, s)
                trace = tp.conductance_vs_gate(
                    dev, gate, alpha, vd, b_tesla=sw["B_T"],
                    temperature_k=temp, eta_ev=eta, threads=threads)
                traces.append(trace)
                emit_trace(trace, f"seed_{s}.csv")
            stack = np.stack([t.conductance for t in traces])
            path = os.path.join(out_dir, "ensemble.csv")
            with open(path, "w", newline="") as fh:
                fh.write(f"# seeds = {' '.join(map(str, seeds))}\n")
                w = csv.writer(fh)
                w.writerow(["Vg_V", "G_mean_2e2_over_h",
                            "G_std_2e2_over_h"])
                for i, vg in enumerate(gate):
                    w.writerow([f"{vg:.12g}",
                                f"{stack[:, i].mean():.12g}",
                                f"{stack[:, i].std():.12g}"])
            written.append(path)
        else:  # pragma: no cover - guarded by parse_config
            raise RunError(f"unknown sweep kind {kind!r}")
    except Exception:
        for path in written:
            if os.path.exists(path):
                os.unlink(path)
        raise
    manifest = RunManifest(
        config_hash=config.config_hash,
        artifact_version=ARTIFACT_VERSION, seeds=seeds,
        wall_clock_s=time.monotonic() - t0,
        outputs={os.path.basename(p): _sha256(p) for p in written},
        warnings=warnings)
    manifest.to_json(os.path.join(out_dir, "manifest.json"))
    return manifest


# ---- analyze ---------------------------------------------------------


def parse_bias_map_csv(path):
    """Read a bias-map CSV back into a BiasMap."""
    meta = {}
    rows = []
    header = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition("=")
                meta[key.strip()] = val.strip()
                continue
            cells = line.split(",")
            if header is None:
                header = cells
                if cells != ["Vg_V", "Vsd_V", "Gdiff_2e2_over_h"]:
                    raise ana.IngestionError(
                        f"{path}:{lineno}: unexpected bias-map header")
                continue
            if len(cells) != 3:
                raise ana.IngestionError(
                    f"{path}:{lineno}: expected 3 columns")
            try:
                rows.append(tuple(float(c) for c in cells))
            except ValueError:
                raise ana.IngestionError(
                    f"{path}:{lineno}: non-numeric value")
    if not rows:
        raise ana.IngestionError(f"{path}: no data rows")
    vg = np.unique([r[0] for r in rows])
    vb = np.unique([r[1] for r in rows])
    g = np.full((len(vg), len(vb)), np.nan)
    vgi = {v: i for i, v in enumerate(vg)}
    vbi = {v: i for i, v in enumerate(vb)}
    for r in rows:
        g[vgi[r[0]], vbi[r[1]]] = r[2]
    if np.any(np.isnan(g)):
        raise ana.IngestionError(f"{path}: incomplete (Vg, Vsd) grid")
    return tp.BiasMap(gate_voltages=vg, bias_voltages=vb, g_diff=g,
                      alpha_f_per_m2=float(meta.get("alpha_F_per_m2", 0)),
                      dirac_point_v=float(meta.get("dirac_point_V", 0)),
                      b_tesla=float(meta.get("B_T", 0)))


def _gather_inputs(inputs):
    """Split input paths / run directories into trace and map CSVs."""
    traces, maps = [], []
    for item in inputs:
        if os.path.isdir(item):
            names = sorted(os.listdir(item))
            for name in names:
                if not name.endswith(".csv"):
                    continue
                path = os.path.join(item, name)
                if name == "bias_map.csv":
                    maps.append(path)
                elif name in ("fan_combined.csv", "ensemble.csv"):
                    continue       # derived views of the per-trace files
                else:
                    traces.append(path)
        elif item.endswith("bias_map.csv"):
            maps.append(item)
        else:
            traces.append(item)
    return traces, maps


def analyze(inputs, analysis_cfg=None, constants=None):
    """Run the configured extractions over trace/map CSVs.

    ``inputs`` is a list of CSV paths and/or run directories.  Returns an
    ExtractionReport in which unobtainable quantities are explicitly
    absent.
    """
    cfg = dict(analysis_cfg or {})
    requested = cfg.get("extractions") or list(EXTRACTIONS)
    tol = cfg.get("value_tolerance", 0.05)
    min_ext = cfg.get("min_extent_V")
    if constants is None:
        if "v_F_m_per_s" in cfg:
            constants = PhysicalConstants(v_F=cfg["v_F_m_per_s"])
        else:
            constants = DEFAULT_CONSTANTS
    trace_paths, map_paths = _gather_inputs(inputs)
    traces = [ana.parse_measurement_csv(p) for p in trace_paths]
    report = ana.ExtractionReport()

    zero_b = [(t, m) for t, m in traces if abs(t.b_tesla) < 1e-12]
    primary = zero_b[0] if zero_b else (traces[0] if traces else None)

    if "semiclassical_width" in requested:
        if primary is None:
            report.mark_absent("width_semiclassical_nm", "no gate trace")
        else:
            try:
                fits = ana.fit_width_semiclassical(primary[0], constants)
                report.set(
                    "width_semiclassical_nm",
                    {c: f.width_nm for c, f in fits.items()},
                    method="staircase-slope-fit",
                    residual={c: f.residual for c, f in fits.items()})
            except ana.AnalysisError as exc:
                report.mark_absent("width_semiclassical_nm", str(exc))

    if "plateaus" in requested:
        if primary is None:
            report.mark_absent("plateaus", "no gate trace")
        else:
            ps = ana.detect_plateaus(primary[0], tol, min_ext)
            report.set("plateaus",
                       [dataclasses.asdict(p) for p in ps.plateaus],
                       method="sliding-window-flatness",
                       extra={"value_tolerance": ps.value_tolerance,
                              "min_extent_V": ps.min_extent_v})

    if "mean_free_path" in requested:
        meta = primary[1] if primary else {}
        l_nm = cfg.get("L_nm", meta.get("L_nm"))
        w_nm = cfg.get("W_nm", meta.get("W_nm"))
        if primary is None or l_nm is None or w_nm is None:
            report.mark_absent("mfp_nm_vs_kf",
                               "needs a gate trace plus L_nm and W_nm")
        else:
            pairs = ana.mean_free_path(primary[0], l_nm, w_nm, constants)
            report.set("mfp_nm_vs_kf", pairs, method="einstein-relation")

    if "energy_scales" in requested:
        if primary is None:
            report.mark_absent("energy_scales", "no gate trace")
        else:
            t = primary[0]
            z, th, ratio = ana.energy_scales(
                t.b_tesla, t.temperature_k, constants=constants)
            report.set("energy_scales",
                       {"zeeman_eV": z, "thermal_eV": th,
                        "ratio": ratio}, method="closed-form")

    finite_b = sorted(((t, m) for t, m in traces
                       if abs(t.b_tesla) > 1e-12),
                      key=lambda tm: tm[0].b_tesla)

    if "crossover" in requested:
        n_index = cfg.get("plateau_index", 1)
        points = []
        for t, _ in finite_b:
            ps = ana.detect_plateaus(t, tol, min_ext)
            p = ps.nearest(n_index)
            if p is not None and abs(p.mean_value - n_index) <= 0.5:
                points.append((t.b_tesla,
                               p.center_gate_v - t.dirac_point_v))
        if len(points) < 8:
            report.mark_absent(
                "width_crossover_nm",
                f"need >= 8 finite-field traces with plateau "
                f"{n_index} resolved, found {len(points)}")
            report.mark_absent("crossover_B_T", "see width_crossover_nm")
        else:
            t0 = finite_b[0][0]
            fit = ana.crossover_width(points, t0.alpha_f_per_m2,
                                      n_index, 0.0, constants)
            report.set("width_crossover_nm", fit.width_nm,
                       method="plateau-center-vs-B-piecewise-fit",
                       residual=fit.residual,
                       extra={"ambiguous": fit.ambiguous})
            report.set("crossover_B_T", fit.b_star_t,
                       method="plateau-center-vs-B-piecewise-fit",
                       residual=fit.residual)

    if "capacitance" in requested:
        done = False
        for t, _ in reversed(finite_b):    # strongest field first
            ps = ana.detect_plateaus(t, tol, min_ext)
            pts = []
            for target in (1, 3, 5, 7):     # graphene QHE sequence
                p = ps.nearest(target)
                if p is not None and abs(p.mean_value - target) <= 0.3:
                    pts.append((2 * target, p.center_gate_v))
            if len(pts) >= 2:
                alpha = ana.extract_capacitance(
                    pts, t.b_tesla, t.dirac_point_v, constants)
                report.set("alpha_F_per_m2", alpha,
                           method="qhe-filling-fit",
                           extra={"B_T": t.b_tesla,
                                  "fillings": [p[0] for p in pts]})
                done = True
                break
        if not done:
            report.mark_absent(
                "alpha_F_per_m2",
                "no finite-field trace with >= 2 quantum Hall plateaus")

    if "bias_spacing" in requested:
        if not map_paths:
            report.mark_absent("delta_E_meV", "no bias map")
            report.mark_absent("width_spacing_nm", "no bias map")
        else:
            try:
                bmap = parse_bias_map_csv(map_paths[0])
                sp = ana.subband_spacing_from_bias(
                    bmap, tol, min_ext, constants=constants)
                report.set("delta_E_meV", sp.delta_e_mev,
                           method="half-plateau-bias-spectroscopy",
                           extra={"bias_V": sp.bias_v,
                                  "half_plateau_value":
                                      sp.half_plateau_value})
                report.set("width_spacing_nm", sp.width_nm,
                           method="half-plateau-bias-spectroscopy")
            except ana.AnalysisError as exc:
                report.mark_absent("delta_E_meV", str(exc))
                report.mark_absent("width_spacing_nm", str(exc))

    return report
