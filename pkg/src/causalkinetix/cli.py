"""Command-line interface.

Every subcommand writes into one run directory containing the requested
outputs, ``config.json`` (the resolved configuration, enough to repeat the
run via ``--config``) and ``manifest.json`` (file names with SHA-256
hashes).  Logs go to stderr; ``--emit json`` prints one JSON object to
stdout.  Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .evaluation import STUDIES
from .kinetic_data import DatasetError, load_dataset, validate, write_dataset
from .model_space import ModelSpaceError, all_terms, collection_from_strings, metabolic_terms
from .ode_sim import (
    HIDDEN_SPECIES,
    MAILLARD_SPECIES,
    IntegrationError,
    sample_dataset1,
    sample_dataset2,
    sample_dataset3,
)
from .regression import ConvergenceError, RegressionError, screen_terms
from .scoring import ScoreOptions, ScoringError, default_workers, rank_models
from .spline import SplineError
from .variable_ranking import build_collection, default_K, variable_scores

log = logging.getLogger("causalkinetix")

# keys that never influence results and are left out of config.json
_VOLATILE = {"out", "workers", "emit", "config", "verbose"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ----------------------------------------------------------------- output


def _dump(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _finalize(out, config, files):
    """Write config.json and manifest.json; returns the manifest."""
    _dump(os.path.join(out, "config.json"), config)
    files = ["config.json"] + [f for f in files if f != "config.json"]
    manifest = {"version": __version__, "files": [{"name": f, "sha256": _sha256(os.path.join(out, f))} for f in files]}
    _dump(os.path.join(out, "manifest.json"), manifest)
    return manifest


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _options(cfg):
    return ScoreOptions(
        fit_variant="pooled" if cfg["pooled"] else "leave_one_experiment_out",
        estimator=cfg["estimator"],
        divide_by_rss_a=not cfg["no_divide"],
        dm_smooth_response=cfg["dm_smooth_response"],
        penalty_order=cfg["penalty_order"],
    )


def _load(cfg):
    return load_dataset(cfg["input"], cfg["format"], cfg.get("target"))


# --------------------------------------------------------------- commands


def cmd_simulate(cfg, out, workers):
    kind, seed = cfg["dataset"], cfg["seed"]
    if kind == "maillard":
        target = cfg.get("target")
        if target is not None and not str(target).isdigit():
            if target not in MAILLARD_SPECIES:
                raise UsageError(f"unknown Maillard species {target!r}")
            target = MAILLARD_SPECIES.index(target)
        sim = sample_dataset1(seed, L=cfg["L"] or 11, m=cfg["m"] or 5, R=cfg["R"], target=target, c=cfg["c"],
                              noise_kind=cfg["noise"], ar=cfg["ar"])
        names = list(MAILLARD_SPECIES)
    elif kind == "sigmoid":
        sim = sample_dataset2(seed, L=cfg["L"] or 15, m=cfg["m"] or 5, R=cfg["R"], c=cfg["c"])
        names = list(sim.dataset.variable_names)
    else:
        sim = sample_dataset3(seed, k7_mode=cfg["k7_mode"], hide=not cfg["no_hide"], L=cfg["L"] or 20,
                              m=cfg["m"] or 16, R=cfg["R"], c=cfg["c"])
        names = list(HIDDEN_SPECIES)
    data_name = "data.json" if cfg["output_format"] == "json" else "data.csv"
    write_dataset(sim.dataset, os.path.join(out, data_name), cfg["output_format"])
    truth = {
        "target": sim.dataset.target,
        "parents": [names[j] for j in sim.truth],
        "hidden_mask": sim.hidden_mask,
        "seed": seed,
        "info": _jsonable(sim.info),
        "config": cfg,
    }
    _dump(os.path.join(out, "truth.json"), truth)
    return [data_name, "truth.json"], {"target": truth["target"], "parents": truth["parents"]}


def _candidates(cfg, ds):
    if cfg["model_class"] == "metabolic":
        return metabolic_terms(ds.d, ds.target_index)
    return all_terms(ds.d)


def cmd_screen(cfg, out, workers):
    ds = _load(cfg)
    terms = _candidates(cfg, ds)
    keep = len(terms) if cfg["keep"] is None else cfg["keep"]
    if not 1 <= keep <= len(terms):
        raise UsageError(f"--keep must lie in [1, {len(terms)}]")
    order = screen_terms(ds, terms, keep, method=cfg["method"], smooth_response=cfg["dm_smooth_response"])
    labels = [t.label(ds.variable_names) if cfg["names"] else t.label() for t in order]
    _dump(os.path.join(out, "screened_terms.json"), {"method": cfg["method"], "terms": labels})
    return ["screened_terms.json"], {"terms": labels}


def _collection(cfg, ds):
    if cfg.get("models"):
        with open(cfg["models"], encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
        return collection_from_strings(lines)
    return build_collection(ds, cfg["model_class"], cfg["p"], cfg["keep"], cfg["method"])


def cmd_score_models(cfg, out, workers):
    ds = _load(cfg)
    collection = _collection(cfg, ds)
    ranking = rank_models(ds, collection, _options(cfg), workers=workers)
    top = cfg["top"]
    _dump(os.path.join(out, "model_scores.json"), _jsonable(ranking.to_json(top)))
    _write_text(os.path.join(out, "model_scores.csv"), ranking.to_csv(top))
    best = ranking[0]
    return ["model_scores.json", "model_scores.csv"], {"n_models": len(ranking), "best_model": str(best.model),
                                                      "best_T": _num(best.T)}


def cmd_rank_variables(cfg, out, workers):
    ds = _load(cfg)
    collection = _collection(cfg, ds)
    ranking = rank_models(ds, collection, _options(cfg), workers=workers)
    if cfg["K"] == "auto":
        K = min(default_K(ds.d, cfg["p"]), len(ranking))
    else:
        try:
            K = int(cfg["K"])
        except ValueError:
            raise UsageError("--K must be 'auto' or an integer") from None
        if not 1 <= K <= len(ranking):
            raise UsageError(f"--K must lie in [1, {len(ranking)}]")
    vr = variable_scores(ranking, K, ds.d, ds.variable_names)
    _write_text(os.path.join(out, "variable_ranking.csv"), vr.to_csv())
    _dump(os.path.join(out, "variable_ranking.json"), _jsonable(vr.to_dict()))
    _write_text(os.path.join(out, "model_scores.csv"), ranking.to_csv(cfg["top"]))
    files = ["variable_ranking.csv", "variable_ranking.json", "model_scores.csv"]
    return files, {"K": K, "ranking": [ds.variable_names[j] for j in vr.order]}


def cmd_evaluate(cfg, out, workers):
    study = cfg["study"]
    fn = STUDIES[study]
    kwargs = {}
    if study == "scalability":
        kwargs["vary"] = cfg["vary"]
        if cfg["values"]:
            kwargs["values"] = [int(v) for v in cfg["values"].split(",")]
        kwargs["repeats"] = cfg["repeats"]
        kwargs["seed"] = cfg["seed"]
    else:
        kwargs["seed"] = cfg["seed"]
        kwargs["workers"] = workers
        if cfg["B"] is not None:
            kwargs["B"] = cfg["B"]
        if cfg["L"] is not None and study in ("maillard", "noise", "screening", "overfitting", "arnoise"):
            kwargs["L"] = cfg["L"]
    log.info("running study %s", study)
    summary = fn(**kwargs)
    files = summary.write(out)
    files = [f for f in files if f != "timings.json"]  # wall times differ between runs
    agg = _jsonable(summary.aggregates)
    return files, {"study": study, "aggregates": agg}


def cmd_validate(cfg, out, workers):
    try:
        ds = _load(cfg)
    except DatasetError as exc:
        report = getattr(exc, "report", None)
        payload = {"ok": False, "error": str(exc), "problems": report.to_dict() if report is not None else None}
        _dump(os.path.join(out, "validation.json"), _jsonable(payload))
        raise
    report = validate(ds)
    payload = {"ok": report.ok, "d": ds.d, "m": ds.m, "n": ds.n, "target": ds.target, "report": report.to_dict()}
    _dump(os.path.join(out, "validation.json"), _jsonable(payload))
    if not report.ok:
        raise DatasetError("dataset failed validation", report)
    return ["validation.json"], payload


COMMANDS = {
    "simulate": cmd_simulate,
    "screen": cmd_screen,
    "score-models": cmd_score_models,
    "rank-variables": cmd_rank_variables,
    "evaluate": cmd_evaluate,
    "validate": cmd_validate,
}


# ---------------------------------------------------------------- parsing


def _num(x):
    x = float(x)
    return x if np.isfinite(x) else None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


def _add_common(p):
    p.add_argument("--out", default="ckx_run", help="run directory (created if missing)")
    p.add_argument("--config", help="config.json of an earlier run; explicit flags override it")
    p.add_argument("--seed", type=int, default=0, help="master seed (64-bit integer)")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: CKX_WORKERS or cores)")
    p.add_argument("--emit", choices=["json"], help="print a single JSON result object to stdout")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_input(p):
    p.add_argument("--input", help="dataset file")
    p.add_argument("--format", choices=["json", "csv_long"], default="json")
    p.add_argument("--target", help="target variable (csv_long input)")


def _add_models(p):
    p.add_argument("--class", dest="model_class", choices=["exhaustive", "main_effect", "metabolic"],
                   default="exhaustive")
    p.add_argument("--p", type=int, default=4, help="maximal number of terms per model")
    p.add_argument("--keep", type=int, default=None, help="terms kept by screening (default: no screening)")
    p.add_argument("--method", choices=["dm", "gm"], default="dm", help="screening method")
    p.add_argument("--models", help="text file with one model string per line (overrides --class)")
    p.add_argument("--top", type=int, default=None, help="number of models written (default: all)")


def _add_score(p):
    p.add_argument("--no-divide", action="store_true", help="use |RSS_b - RSS_a| without dividing by RSS_a")
    p.add_argument("--pooled", action="store_true", help="fit coefficients on all experiments")
    p.add_argument("--estimator", choices=["dm", "gm"], default="dm")
    p.add_argument("--dm-smooth-response", action="store_true")
    p.add_argument("--penalty-order", type=int, choices=[2, 3], default=2)


def build_parser():
    parser = _Parser(prog="ckx", description="Invariance-based causal inference for kinetic systems.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a benchmark dataset")
    _add_common(p)
    p.add_argument("--dataset", choices=["maillard", "sigmoid", "hidden"], default="maillard")
    p.add_argument("--L", type=int, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--R", type=int, default=3)
    p.add_argument("--target", default=None, help="Maillard target (name or index); random if omitted")
    p.add_argument("--c", type=float, default=None, help="relative noise level (random if omitted)")
    p.add_argument("--noise", choices=["iid", "ar1"], default="iid")
    p.add_argument("--ar", type=float, default=0.0)
    p.add_argument("--k7-mode", choices=["narrow", "wide"], default="wide")
    p.add_argument("--no-hide", action="store_true")
    p.add_argument("--output-format", choices=["json", "csv_long"], default="json")

    p = sub.add_parser("screen", help="lasso screening of candidate terms")
    _add_common(p)
    _add_input(p)
    p.add_argument("--class", dest="model_class", choices=["exhaustive", "metabolic"], default="exhaustive")
    p.add_argument("--keep", type=int, default=None)
    p.add_argument("--method", choices=["dm", "gm"], default="dm")
    p.add_argument("--dm-smooth-response", action="store_true")
    p.add_argument("--names", action="store_true", help="label terms with variable names")

    p = sub.add_parser("score-models", help="score and rank candidate models")
    _add_common(p)
    _add_input(p)
    _add_models(p)
    _add_score(p)

    p = sub.add_parser("rank-variables", help="variable scores from the best models")
    _add_common(p)
    _add_input(p)
    _add_models(p)
    _add_score(p)
    p.add_argument("--K", default="auto", help="number of top models, or 'auto'")

    p = sub.add_parser("evaluate", help="run a simulation study")
    _add_common(p)
    p.add_argument("--study", choices=sorted(STUDIES), default="maillard")
    p.add_argument("--B", type=int, default=None, help="runs per setting")
    p.add_argument("--L", type=int, default=None)
    p.add_argument("--vary", choices=["d", "R", "m", "L"], default="R", help="scalability parameter")
    p.add_argument("--values", default=None, help="comma separated values for --vary")
    p.add_argument("--repeats", type=int, default=3)

    p = sub.add_parser("validate", help="check a dataset file")
    _add_common(p)
    _add_input(p)
    return parser


def resolve_config(argv):
    """Parse ``argv`` into ``(command, config, volatile)``.

    Values from ``--config`` fill in every flag not given explicitly.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required: " + " | ".join(COMMANDS))
    values = vars(args)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            stored = json.load(fh)
        if stored.get("command", args.command) != args.command:
            raise UsageError(f"config is for {stored.get('command')!r}, not {args.command!r}")
        defaults = vars(parser.parse_args([args.command]))
        given = {k for k, v in values.items() if v != defaults.get(k)}
        for k, v in stored.items():
            if k in values and k not in given and k not in _VOLATILE:
                values[k] = v
    config = {k: v for k, v in values.items() if k not in _VOLATILE}
    volatile = {k: values.get(k) for k in _VOLATILE}
    if args.command in ("screen", "score-models", "rank-variables", "validate") and not config.get("input"):
        raise UsageError("--input is required")
    return args.command, config, volatile


def _fail(code, kind, message):
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        command, cfg, vol = resolve_config(argv)
    except UsageError as exc:
        return _fail(1, "usage", str(exc))
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(2, "data", f"cannot read config: {exc}")
    logging.basicConfig(level=logging.INFO if vol["verbose"] else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    workers = vol["workers"] if vol["workers"] is not None else default_workers()
    if workers < 1:
        return _fail(1, "usage", "--workers must be positive")
    out = vol["out"]
    try:
        os.makedirs(out, exist_ok=True)
        files, result = COMMANDS[command](cfg, out, workers)
        manifest = _finalize(out, cfg, files)
    except UsageError as exc:
        return _fail(1, "usage", str(exc))
    except (SplineError, RegressionError, ScoringError, ConvergenceError, IntegrationError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        return _fail(3, "numerical", f"{type(exc).__name__}: {exc}")
    except (DatasetError, ModelSpaceError, OSError, ValueError, KeyError) as exc:
        return _fail(2, "data", f"{type(exc).__name__}: {exc}")
    log.info("wrote %d files to %s", len(manifest["files"]), out)
    if vol["emit"] == "json":
        sys.stdout.write(json.dumps(_jsonable({"command": command, "out": out, "result": result,
                                               "files": [f["name"] for f in manifest["files"]]})) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
