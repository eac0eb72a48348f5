"""Command-line interface.

Subcommands: build (lattice export), bands (lead dispersion), sweep,
bias-map, analyze, repro fig2|fig3|fig4 (canned desk-scale runs).
Exit codes: 0 success, 1 validation error, 2 runtime/physics error,
3 flagged warnings escalated by --strict.
"""

import argparse
import json
import os
import sys

from . import workbench as wb
from .analysis import AnalysisError, IngestionError
from .bands import BandsError, ribbon_bands
from .lattice import LatticeError
from .transport import TransportError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_STRICT = 3


def _add_common(parser, config_required=True):
    parser.add_argument("--config", required=config_required,
                        help="JSON run configuration")
    parser.add_argument("--out", default=None,
                        help="output directory (default: from config)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the disorder RNG seed")
    parser.add_argument("--threads", type=int,
                        default=os.cpu_count(),
                        help="parallel energy evaluations")
    parser.add_argument("--strict", action="store_true",
                        help="treat flagged validity warnings as errors")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gnt",
        description="Graphene nanoconstriction ballistic transport "
                    "simulator and trace-analysis pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build",
                       help="build the device and export the lattice")
    _add_common(p)
    p = sub.add_parser("bands",
                       help="band structure of the device's lead cell")
    _add_common(p)
    p.add_argument("--k-count", type=int, default=201)
    p = sub.add_parser("sweep", help="run the configured sweep")
    _add_common(p)
    p = sub.add_parser("bias-map",
                       help="run a bias-map sweep (kind must be bias-map)")
    _add_common(p)
    p = sub.add_parser("analyze",
                       help="run extractions over CSVs or run directories")
    p.add_argument("inputs", nargs="*",
                   help="trace/map CSVs or run directories")
    _add_common(p, config_required=False)
    p = sub.add_parser("repro",
                       help="canned desk-scale figure reproductions")
    p.add_argument("figure", choices=("fig2", "fig3", "fig4"))
    _add_common(p, config_required=False)
    return parser


def _out_dir(args, config):
    return args.out or config.output["directory"]


def _finish(warnings, strict):
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    if warnings and strict:
        return EXIT_STRICT
    return EXIT_OK


def _cmd_build(args):
    config = wb.load_config(args.config)
    out = _out_dir(args, config)
    os.makedirs(out, exist_ok=True)
    dev = wb._build_device(config, args.seed)
    path = os.path.join(out, "lattice.json")
    with open(path, "w") as fh:
        fh.write(dev.to_json())
    print(f"wrote {path} ({dev.n_sites} sites, "
          f"fingerprint {dev.fingerprint()})")
    return EXIT_OK


def _cmd_bands(args):
    config = wb.load_config(args.config)
    out = _out_dir(args, config)
    os.makedirs(out, exist_ok=True)
    dev = wb._build_device(config, args.seed)
    bands = ribbon_bands(dev.left_lead, args.k_count, dev.edge_type)
    path = os.path.join(out, "bands.csv")
    bands.to_csv(path)
    print(f"wrote {path} ({bands.n_bands} bands)")
    return EXIT_OK


def _cmd_sweep(args, require_kind=None):
    config = wb.load_config(args.config)
    if require_kind and config.sweep["kind"] != require_kind:
        raise wb.ConfigError(
            [("sweep.kind", f"must be {require_kind!r} for this command")])
    out = _out_dir(args, config)
    manifest = wb.run(config, out_dir=out, seed=args.seed,
                      threads=args.threads)
    print(f"wrote {len(manifest.outputs)} outputs to {out} "
          f"in {manifest.wall_clock_s:.1f} s")
    if config.analysis.get("extractions"):
        report = wb.analyze([out], config.analysis)
        path = os.path.join(out, "report.json")
        report.to_json(path)
        print(f"wrote {path}")
    return _finish(manifest.warnings, args.strict)


def _cmd_analyze(args):
    analysis_cfg = {}
    inputs = list(args.inputs)
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
        if "analysis" in doc:
            analysis_cfg = doc["analysis"]
        inputs.extend(doc.get("inputs", []))
    if not inputs:
        print("analyze: no inputs given", file=sys.stderr)
        return EXIT_VALIDATION
    report = wb.analyze(inputs, analysis_cfg)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "report.json")
    report.to_json(path)
    print(f"wrote {path}")
    return EXIT_OK


# ---- canned figure reproductions ------------------------------------


def repro_config(figure):
    """Desk-scale config mirroring one published figure's structure."""
    device = {
        "geometry": {"edge_type": "armchair", "lead_width_nm": 150.0,
                     "constriction_width_nm": 60.0,
                     "constriction_length_nm": 40.0,
                     "profile": "smooth-cosine",
                     "total_length_nm": 170.0},
        "lattice": {"scaling": 20.0},
    }
    if figure == "fig2":
        # zero-field conductance staircase + semiclassical width fit
        return {
            "device": device,
            "sweep": {"kind": "gate",
                      "gate": {"start": 0.01, "stop": 0.62,
                               "count": 140},
                      "alpha_F_per_m2": 8e-4, "dirac_point_V": 0.0},
            "analysis": {"extractions": ["plateaus",
                                         "semiclassical_width"],
                         "min_extent_V": 0.01},
            "output": {"directory": "repro_fig2"},
        }
    if figure == "fig3":
        # magnetic-field fan: QHE plateaus and confinement crossover
        return {
            "device": device,
            "sweep": {"kind": "field-fan",
                      "fields_T": [0.3, 0.5, 0.8, 1.2, 1.7, 2.3, 3.0,
                                   4.0, 5.0, 6.5, 8.0],
                      "gate": {"start": 0.01, "stop": 0.62,
                               "count": 80},
                      "alpha_F_per_m2": 8e-4, "dirac_point_V": 0.0},
            "analysis": {"extractions": ["crossover", "capacitance"],
                         "min_extent_V": 0.01},
            "output": {"directory": "repro_fig3"},
        }
    # fig4: bias spectroscopy, half plateaus between integer steps
    return {
        "device": {
            "geometry": {"edge_type": "armchair",
                         "lead_width_nm": 160.0,
                         "constriction_width_nm": 80.0,
                         "constriction_length_nm": 50.0,
                         "profile": "smooth-cosine",
                         "total_length_nm": 190.0,
                         "metallic_snap": False},
            "lattice": {"scaling": 20.0},
        },
        "sweep": {"kind": "bias-map",
                  "gate": {"start": 0.02, "stop": 0.45, "count": 60},
                  "bias": {"start": -0.016, "stop": 0.016, "count": 17},
                  "alpha_F_per_m2": 8e-4, "dirac_point_V": 0.0},
        "analysis": {"extractions": ["bias_spacing"],
                     "min_extent_V": 0.02},
        "output": {"directory": "repro_fig4"},
    }


def _cmd_repro(args):
    document = repro_config(args.figure)
    config = wb.parse_config(document)
    out = args.out or config.output["directory"]
    os.makedirs(out, exist_ok=True)
    cfg_path = os.path.join(out, "config.json")
    with open(cfg_path, "w") as fh:
        json.dump(document, fh, indent=2)
        fh.write("\n")
    manifest = wb.run(config, out_dir=out, seed=args.seed,
                      threads=args.threads)
    report = wb.analyze([out], config.analysis)
    report.to_json(os.path.join(out, "report.json"))
    print(f"wrote {out}/ ({len(manifest.outputs)} outputs + report.json, "
          f"{manifest.wall_clock_s:.1f} s)")
    return _finish(manifest.warnings, args.strict)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "build":
            return _cmd_build(args)
        if args.command == "bands":
            return _cmd_bands(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "bias-map":
            return _cmd_sweep(args, require_kind="bias-map")
        if args.command == "analyze":
            return _cmd_analyze(args)
        if args.command == "repro":
            return _cmd_repro(args)
        raise AssertionError("unreachable")
    except (wb.ConfigError, IngestionError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (LatticeError, BandsError, TransportError, AnalysisError,
            wb.RunError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
