"""Command-line interface: ``pflid <command> [flags]``.

Exit codes: 0 success, 1 domain error (bad model, dataset or geometry),
2 usage error, 3 the undetermined region is nonempty (``check``), 4 probing
budget exhausted (``probe``). ``PFLID_SEED`` sets the default ``--seed``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from .dataset import Dataset, DatasetError, NoiseSpec, generate, sample_prices
from .demo_assets import make_demo
from .flex_model import FlexModel, ModelError, aggregate_polygon, validate
from .identifiability import (
    build_geometry, clipped_pi_vertices, default_clip, delta_omega_empty, region_report,
)
from .identification import StructureError, StructureSpec, identify
from .noise_stats import noise_cover_report, run_trace_experiment, stats_csv
from .polyhedra import GeometryError, InputError
from .probing import model_oracle, probe_until_identified
from .solver import SolverError
from .svg import render

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE, EXIT_NONEMPTY, EXIT_BUDGET = 0, 1, 2, 3, 4
SCHEMA_VERSION = 1
METHODS = {"vertex": "vertex_enum", "milp": "robust_milp", "both": "both"}


class UsageError(Exception):
    pass


def _dumps(doc) -> str:
    return json.dumps(doc, indent=1) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


def _cell(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _load_model(path: str) -> FlexModel:
    model = FlexModel.load(path)
    validate(model)
    return model


def _parse_noise(text: str, T: int) -> NoiseSpec:
    if text == "none":
        return NoiseSpec.none()
    if text == "paper-mult":
        return NoiseSpec.paper_multiplicative()
    if text.startswith("additive:"):
        try:
            sigma = float(text.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad noise level in {text!r}") from None
        if not np.isfinite(sigma) or sigma < 0:
            raise UsageError("additive noise level must be a nonnegative number")
        return NoiseSpec.additive(sigma ** 2 * np.eye(T))
    raise UsageError(f"unknown noise {text!r}; use none, paper-mult or additive:SIGMA")


def _parse_clip(text: str | None):
    if text is None:
        return None
    try:
        x0, y0, x1, y1 = (float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise UsageError('--clip expects four numbers "x0 y0 x1 y1"') from None
    if not (x1 > x0 and y1 > y0):
        raise UsageError("--clip needs x0 < x1 and y0 < y1")
    return np.array([x0, y0]), np.array([x1, y1])


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _nonnegative_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return v


def _k_list(text: str) -> list:
    return [_positive_int(v) for v in text.split(",") if v.strip()]


# ---------------------------------------------------------------------------
# commands


def cmd_gen(a) -> int:
    model = _load_model(a.model)
    noise = _parse_noise(a.noise, model.T)
    ds = generate(model, sample_prices(a.samples, model.T, a.seed), noise, seed=a.seed)
    _emit(ds.to_csv() if a.format == "csv" else ds.dumps(), a.out)
    return EXIT_OK


def _check_report(ds: Dataset, method: str, clip) -> dict:
    g = build_geometry(ds)
    report = {"schema_version": SCHEMA_VERSION}
    try:
        report.update(region_report(g, method, clip))
    except GeometryError:
        # the clip box misses pi; report the verdict without planar areas
        v = delta_omega_empty(g, method)
        report.update({"K": g.K, "T": g.T, "delta_omega_empty": v.contained,
                       "verdict": v.to_json(), "conv_vertices": g.conv.vertices.tolist()})
    return report


def cmd_check(a) -> int:
    clip = _parse_clip(a.clip)
    ds = Dataset.load(a.dataset)
    report = _check_report(ds, METHODS[a.method], clip)
    v = report["verdict"]
    if a.format == "csv":
        areas = report.get("areas", {})
        text = _csv([["K", "T", "delta_omega_empty", "pi_unbounded", "witness", "conv_area",
                      "pi_clipped_area"],
                     [report["K"], report["T"], report["delta_omega_empty"], v["unbounded"],
                      " ".join(_cell(x) for x in v["witness"] or []),
                      _cell(areas.get("conv", "")), _cell(areas.get("pi_clipped", ""))]])
    else:
        text = _dumps(report)
    _emit(text, a.out)
    state = "empty" if report["delta_omega_empty"] else "nonempty"
    extra = "; Pi unbounded" if v["unbounded"] else ""
    print(f"undetermined region {state}{extra}", file=sys.stderr)
    return EXIT_OK if report["delta_omega_empty"] else EXIT_NONEMPTY


def _load_structure(path: str) -> StructureSpec:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(doc, dict) and "batteries" in doc:
        # a model file: fit bounds for the same components
        return StructureSpec.from_model(FlexModel.from_json(doc))
    return StructureSpec.from_json(doc)


def _cert_label(cert) -> str:
    if cert is None:
        return "skipped"
    return "pass" if cert.is_optimum else cert.failure


def cmd_identify(a) -> int:
    ds = Dataset.load(a.dataset)
    spec = _load_structure(a.structure)
    warm = FlexModel.load(a.warm_start) if a.warm_start else None
    res = identify(ds, spec, a.norm, max_nodes=a.max_nodes, time_limit=a.time_limit,
                   warm_start=warm, minimize_area=a.minimize_area)
    doc = res.to_json()
    if a.format == "csv":
        text = _csv([["status", "f_l1", "f_l2", "bound", "certificate"],
                     [res.status, _cell(res.f_value), _cell(res.f_l2), _cell(res.bound),
                      _cert_label(res.certificate)]])
    else:
        text = _dumps(doc)
    _emit(text, a.out)
    print(f"status {res.status}  f_l1 {res.f_value!r}  "
          f"certificate {_cert_label(res.certificate)}", file=sys.stderr)
    return EXIT_OK


def cmd_probe(a) -> int:
    ds = Dataset.load(a.dataset)
    oracle = model_oracle(_load_model(a.oracle))
    run = probe_until_identified(ds, oracle, a.budget, a.design)
    doc = run.to_json()
    doc["dataset"] = run.dataset.to_json()
    if a.format == "csv":
        cols = ["kind", "lambda", "response", "outcome", "margin", "conv_area", "pi_area"]
        rows = [cols]
        for e in run.trace:
            rows.append([" ".join(_cell(x) for x in e[c]) if isinstance(e.get(c), list)
                         else _cell(e.get(c, "")) for c in cols])
        text = _csv(rows)
    else:
        text = _dumps(doc)
    _emit(text, a.out)
    if a.dataset_out:
        run.dataset.save(a.dataset_out)
    print(f"{run.status} after {run.probes} probes", file=sys.stderr)
    return EXIT_OK if run.status == "identified" else EXIT_BUDGET


def cmd_noise(a) -> int:
    model = _load_model(a.model)
    stats = run_trace_experiment(model, a.sigma ** 2 * np.eye(model.T), a.Ks, a.trials, a.seed)
    if a.format == "csv":
        text = stats_csv(stats)
    else:
        text = _dumps({"schema_version": SCHEMA_VERSION, "sigma": a.sigma, "seed": a.seed,
                       "stats": [s.to_json() for s in stats]})
    _emit(text, a.out)
    return EXIT_OK


def cmd_cover(a) -> int:
    model = _load_model(a.model)
    doc = noise_cover_report(model, a.samples, a.seed, _parse_noise(a.noise, model.T), a.directions)
    if a.format == "csv":
        rows = [["direction_x", "direction_y", "support_noisy", "support_clean", "covered"]]
        for r in doc["directions"]:
            rows.append([_cell(r["direction"][0]), _cell(r["direction"][-1]),
                         _cell(r["support_noisy"]), _cell(r["support_clean"]), r["covered"]])
        text = _csv(rows)
    else:
        text = _dumps(doc)
    _emit(text, a.out)
    return EXIT_OK


def cmd_plot(a) -> int:
    clip = _parse_clip(a.clip)
    ds = Dataset.load(a.dataset)
    if ds.T != 2:
        raise InputError("plotting requires T=2")
    g = build_geometry(ds)
    clip = clip or default_clip(g)
    try:
        pi = clipped_pi_vertices(g, clip)
    except GeometryError:
        pi = np.zeros((0, 2))
    ident = None
    if a.ident:
        doc = json.loads(Path(a.ident).read_text(encoding="utf-8"))
        if not isinstance(doc, dict) or "theta_hat" not in doc:
            raise InputError(f"{a.ident}: not an identification report")
        ident = aggregate_polygon(FlexModel.from_json(doc["theta_hat"])).vertices
    title = f"K = {ds.K}"
    _emit(render(clip, g.conv.vertices, pi, ds.powers, ident, title), a.out)
    return EXIT_OK


def cmd_demo(a) -> int:
    demo = make_demo(a.seed)
    outdir = Path(a.out or ".")
    outdir.mkdir(parents=True, exist_ok=True)
    demo.model.save(outdir / "demo_model.json")
    (outdir / "demo_structure.json").write_text(
        _dumps(StructureSpec.from_model(demo.model).to_json()), encoding="utf-8")
    paths = {"model": "demo_model.json", "structure": "demo_structure.json"}
    recipes = {name: [[arg.format(**paths) for arg in cmd] for cmd in cmds]
               for name, cmds in demo.recipes.items()}
    (outdir / "recipes.json").write_text(
        _dumps({"schema_version": SCHEMA_VERSION, "seed": demo.seed, "recipes": recipes}),
        encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _default_seed() -> int:
    text = os.environ.get("PFLID_SEED")
    if text is None:
        return 0
    try:
        return int(text)
    except ValueError:
        raise UsageError(f"PFLID_SEED must be an integer, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    seed = _default_seed()
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=seed,
                        help="random seed (default: PFLID_SEED or 0)")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", choices=("json", "csv"), default="json")

    p = _Parser(prog="pflid", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen", parents=[common], help="simulate a dataset from a model file")
    s.add_argument("--model", required=True)
    s.add_argument("--samples", type=_positive_int, required=True)
    s.add_argument("--noise", default="none", help="none | paper-mult | additive:SIGMA")
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("check", parents=[common], help="is the undetermined region empty?")
    s.add_argument("dataset")
    s.add_argument("--method", choices=tuple(METHODS), default="vertex")
    s.add_argument("--clip", help='plot box "x0 y0 x1 y1" for the area report')
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("identify", parents=[common], help="fit model bounds to a dataset")
    s.add_argument("dataset")
    s.add_argument("--structure", required=True,
                   help="structure JSON, or a model file whose components are reused")
    s.add_argument("--norm", choices=("l1",), default="l1")
    s.add_argument("--max-nodes", type=_nonnegative_int, default=2000)
    s.add_argument("--time-limit", type=float, default=None,
                   help="seconds; results then depend on machine speed")
    s.add_argument("--warm-start", help="model file seeding the search")
    s.add_argument("--minimize-area", action="store_true")
    s.set_defaults(func=cmd_identify)

    s = sub.add_parser("probe", parents=[common], help="probe until the data identify the region")
    s.add_argument("dataset")
    s.add_argument("--oracle", required=True, help="model file answering the probes")
    s.add_argument("--budget", type=_nonnegative_int, default=50)
    s.add_argument("--design", choices=("chord", "sum"), default="chord")
    s.add_argument("--dataset-out", help="also write the final dataset here")
    s.set_defaults(func=cmd_probe)

    s = sub.add_parser("noise", parents=[common], help="loss statistics under additive noise")
    s.add_argument("--model", required=True)
    s.add_argument("--sigma", type=float, required=True)
    s.add_argument("--Ks", type=_k_list, required=True, help="comma-separated sample counts")
    s.add_argument("--trials", type=_positive_int, default=20)
    s.set_defaults(func=cmd_noise)

    s = sub.add_parser("cover", parents=[common], help="noisy vs clean hull support report")
    s.add_argument("--model", required=True)
    s.add_argument("--samples", type=_positive_int, default=50)
    s.add_argument("--noise", default="paper-mult")
    s.add_argument("--directions", type=_positive_int, default=100)
    s.set_defaults(func=cmd_cover)

    s = sub.add_parser("plot", parents=[common], help="SVG of hull, clipped pi and fitted region")
    s.add_argument("dataset")
    s.add_argument("--ident", help="identification report to overlay")
    s.add_argument("--clip", help='plot box "x0 y0 x1 y1"')
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("demo", parents=[common],
                       help="write the demo model, its structure and recipes into --out DIR")
    s.set_defaults(func=cmd_demo, seed=seed if "PFLID_SEED" in os.environ else 7)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "noise" and (not np.isfinite(args.sigma) or args.sigma < 0):
            raise UsageError("--sigma must be a nonnegative number")
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"pflid: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, DatasetError, StructureError, InputError, GeometryError, SolverError,
            ValueError, OSError) as exc:
        print(f"pflid: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
