"""Command-line interface.

Every command writes its artifacts plus ``manifest.json`` into ``--out``;
``markovtilt replay OUT/manifest.json`` regenerates them byte for byte.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from markovtilt import __version__
from markovtilt.data import DataError, Dataset, pattern_summary
from markovtilt.estimation import (
    EmpiricalEstimator,
    EstimationError,
    ForestEstimator,
    build_observed_law,
    fit_diagnostic,
)
from markovtilt.forest import ForestParams
from markovtilt.graph import LEMMA1, LEMMA2, build_full_dag, d_separated, lemma_statements
from markovtilt.identification import IdentificationError, identify_all
from markovtilt.inference import (
    FunctionalSpec,
    InferenceError,
    alpha_diagnostic,
    bootstrap_arm,
    contour_grid,
    reference_analyses,
    sensitivity_grid,
)
from markovtilt.law import LawError, ObservedLaw
from markovtilt.model import ModelSpec, SpecError
from markovtilt.oracle import K_MAX_ENUM, OracleError, gen_full_law, verify_ci
from markovtilt.tables import PositivityError, TableError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
MANIFEST = "manifest.json"

COMMANDS = ("patterns", "fit", "identify", "sensitivity", "contour", "bootstrap", "diagnose",
            "simulate", "check-model")


class ConfigError(ValueError):
    pass


class NumericFailure(RuntimeError):
    pass


# --- argument parsing ---------------------------------------------------------------

def parse_alpha(text: str):
    """``0.5`` -> scalar; ``0,1,2`` -> per-assessment vector."""
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError(f"invalid --alpha {text!r}") from None
    if not all(math.isfinite(v) for v in vals):
        raise ConfigError(f"--alpha must be finite, got {text!r}")
    return vals[0] if len(vals) == 1 else vals


def parse_grid(text: str) -> list[float]:
    """``lo:hi:step`` inclusive of ``hi`` (up to rounding)."""
    try:
        lo, hi, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise ConfigError(f"--alpha-grid must be lo:hi:step, got {text!r}") from None
    if not all(math.isfinite(v) for v in (lo, hi, step)) or step <= 0 or hi < lo:
        raise ConfigError(f"invalid --alpha-grid {text!r}")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + i * step, 12) for i in range(n)]


def parse_int_list(text: str) -> list[int]:
    """Comma-separated positive integers (sample sizes)."""
    try:
        vals = [int(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None
    if any(v < 1 for v in vals):
        raise ConfigError(f"values must be positive, got {text!r}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="markovtilt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"markovtilt {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True, model=True, estimator=True):
        if data:
            sp.add_argument("--input", help="CSV with header id,visit_1,...,visit_K")
        if model:
            sp.add_argument("--k", type=int, help="number of assessments (default: from input)")
            sp.add_argument("--m", type=int, default=1, help="Markov order")
        if estimator:
            sp.add_argument("--estimator", choices=("empirical", "forest"), default="empirical")
            sp.add_argument("--smoothing", type=float, default=0.5)
            sp.add_argument("--trees", type=int, default=1000)
            sp.add_argument("--max-depth", type=int, default=12)
            sp.add_argument("--min-leaf", type=int, default=5)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")

    def inference(sp):
        sp.add_argument("--bootstrap", type=int, default=1000, metavar="B")
        sp.add_argument("--functional", default="count", help="count | marginal:K | joint:0101...")
        sp.add_argument("--anchors", default="-5,5", help="alpha_l,alpha_u for SE interpolation")
        sp.add_argument("--resample", choices=("parametric", "nonparametric"), default="parametric")

    common(sub.add_parser("patterns", help="missingness pattern summary"), model=False, estimator=False)
    common(sub.add_parser("fit", help="estimate the observed-data law and fit diagnostic"))
    sp = sub.add_parser("identify", help="identified outcome law for given alpha")
    common(sp)
    sp.add_argument("--alpha", default="0")
    sp.add_argument("--mode", choices=("tilt", "benchmark", "missing=0", "missing=1"), default="tilt")
    sp = sub.add_parser("sensitivity", help="estimates and intervals over an alpha grid")
    common(sp)
    sp.add_argument("--alpha-grid", default="-5:5:1")
    inference(sp)
    sp = sub.add_parser("contour", help="two-arm differences over an alpha grid")
    common(sp)
    sp.add_argument("--input-b", help="CSV for the second arm")
    sp.add_argument("--alpha-grid", default="-5:5:1")
    sp.add_argument("--alpha-grid-b", help="grid for the second arm (default: same)")
    inference(sp)
    sp = sub.add_parser("bootstrap", help="point estimate and interval at one alpha")
    common(sp)
    sp.add_argument("--alpha", default="0")
    inference(sp)
    sp = sub.add_parser("diagnose", help="missing vs observed outcome proportions by alpha")
    common(sp)
    sp.add_argument("--alpha-grid", default="-5:5:1")
    sp = sub.add_parser("simulate", help="repeated-sampling study")
    common(sp, data=False)
    sp.add_argument("--law", help="observed-law JSON from `fit` (default: synthetic)")
    sp.add_argument("--n", default="250,500", help="sample sizes")
    sp.add_argument("--alpha-grid", default="-2:2:2")
    sp.add_argument("--reps", type=int, default=100)
    inference(sp)
    sp = sub.add_parser("check-model", help="verify the independence statements on oracle laws")
    common(sp, data=False, estimator=False)
    sp.add_argument("--oracles", type=int, default=10, help="number of random oracle laws")
    sp.add_argument("--alpha", default="1")
    sp.add_argument("--tol", type=float, default=1e-10)
    sp = sub.add_parser("replay", help="re-run a command from its manifest")
    sp.add_argument("manifest")
    sp.add_argument("--out", help="output directory (default: the manifest's)")
    return p


# --- helpers ------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _read(path) -> Dataset:
    if not path:
        raise ConfigError("--input is required")
    return Dataset.read_csv(path)


def _spec(cfg: dict, K=None) -> ModelSpec:
    K = cfg.get("k") or K
    if K is None:
        raise ConfigError("--k is required")
    return ModelSpec(int(K), int(cfg["m"]))


def _estimator(cfg: dict):
    if cfg["smoothing"] <= 0:
        raise ConfigError("--smoothing must be positive")
    if cfg["estimator"] == "forest":
        try:
            params = ForestParams(cfg["trees"], cfg["max_depth"], cfg["min_leaf"], seed=cfg["seed"])
        except ValueError as e:
            raise ConfigError(str(e)) from None
        return ForestEstimator(params, cfg["smoothing"])
    return EmpiricalEstimator(cfg["smoothing"])


def _functional(cfg: dict, K: int) -> FunctionalSpec:
    text = cfg.get("functional", "count")
    kind, _, arg = text.partition(":")
    try:
        if kind == "count":
            return FunctionalSpec()
        if kind == "marginal":
            return FunctionalSpec("marginal", k=int(arg))
        if kind == "joint":
            return FunctionalSpec("joint", ybar=tuple(int(c) for c in arg))
    except (ValueError, InferenceError) as e:
        raise ConfigError(f"invalid --functional {text!r}: {e}") from None
    raise ConfigError(f"invalid --functional {text!r}")


def _anchors(cfg: dict) -> tuple:
    try:
        lo, hi = (float(x) for x in cfg["anchors"].split(","))
    except ValueError:
        raise ConfigError(f"--anchors must be lo,hi, got {cfg['anchors']!r}") from None
    if not lo < 0 < hi:
        raise ConfigError("--anchors need alpha_l < 0 < alpha_u")
    return lo, hi


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if x is None:
        return ""
    return str(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


class Outputs:
    def __init__(self, out: Path, fmt: str):
        self.out = out
        self.fmt = fmt
        self.files: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def text(self, name: str, content: str):
        (self.out / name).write_text(content)
        self.files.append(name)

    def json(self, name: str, obj):
        self.text(name, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")

    def table(self, stem: str, rows: list[dict]):
        """Tabular output in the configured format."""
        if self.fmt == "json":
            self.json(f"{stem}.json", rows)
            return
        buf = io.StringIO()
        if rows:
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(list(rows[0]))
            for r in rows:
                w.writerow([_fmt(v) for v in r.values()])
        self.text(f"{stem}.csv", buf.getvalue())


# --- commands -----------------------------------------------------------------------

def cmd_patterns(cfg, out: Outputs):
    d = _read(cfg["input"])
    pc = pattern_summary(d)
    out.table("patterns", [{"pattern": a, "count": c, "percent": p} for a, c, p in pc.rows()])
    return f"n={pc.n}, complete={pc.complete}, all missing={pc.all_missing}"


def cmd_fit(cfg, out: Outputs):
    d = _read(cfg["input"])
    spec = _spec(cfg, d.K)
    _check_K(d, spec)
    law = build_observed_law(d, spec, _estimator(cfg))
    out.text("law.json", json.dumps(law.to_dict()) + "\n")
    rep = fit_diagnostic(d, law)
    out.table("diagnostic", rep.rows())
    out.json("diagnostic_summary.json", {"overall_max_abs_diff": rep.overall, "worst_pair": list(rep.worst_pair)})
    return f"overall max |empirical - model| = {rep.overall:.4f} at pair {rep.worst_pair}"


def _check_K(d: Dataset, spec: ModelSpec):
    if d.K != spec.K:
        raise ConfigError(f"input has {d.K} visit columns but --k is {spec.K}")


def cmd_identify(cfg, out: Outputs):
    d = _read(cfg["input"])
    spec = _spec(cfg, d.K)
    _check_K(d, spec)
    alpha = parse_alpha(cfg["alpha"])
    try:
        spec = spec.with_alphas(alpha)
    except SpecError as e:
        raise ConfigError(str(e)) from None
    law = build_observed_law(d, spec, _estimator(cfg))
    res = identify_all(law, spec, cfg["mode"], measure_storage=False)
    doc = res.to_dict()
    doc["missing_means"] = res.missing_means
    doc["missing_probs"] = res.missing_probs
    out.json("full_law.json", doc)
    return f"E[sum Y] = {doc['expected_count']:.6f}"


def cmd_sensitivity(cfg, out: Outputs):
    d = _read(cfg["input"])
    spec = _spec(cfg, d.K)
    _check_K(d, spec)
    grid = parse_grid(cfg["alpha_grid"])
    rows = sensitivity_grid(d, spec, _estimator(cfg), grid, _functional(cfg, spec.K), cfg["bootstrap"],
                            cfg["seed"], _anchors(cfg), cfg["resample"])
    out.table("sensitivity", [r.__dict__ for r in rows])
    out.json("reference.json", reference_analyses(d, _functional(cfg, spec.K)))
    bad = [r for r in rows if r.error]
    if bad:
        raise NumericFailure(f"alpha={bad[0].alpha}: {bad[0].error}")
    return f"{len(rows)} grid points"


def cmd_contour(cfg, out: Outputs):
    dA = _read(cfg["input"])
    if not cfg.get("input_b"):
        raise ConfigError("--input-b is required for contour")
    dB = Dataset.read_csv(cfg["input_b"])
    spec = _spec(cfg, dA.K)
    _check_K(dA, spec)
    _check_K(dB, spec)
    ga = parse_grid(cfg["alpha_grid"])
    gb = parse_grid(cfg["alpha_grid_b"]) if cfg.get("alpha_grid_b") else ga
    rows = contour_grid(dA, dB, spec, _estimator(cfg), ga, gb, _functional(cfg, spec.K), cfg["bootstrap"],
                        cfg["seed"], _anchors(cfg), cfg["resample"])
    out.table("contour", [r.__dict__ for r in rows])
    return f"{len(rows)} grid cells, {sum(r.excludes_zero for r in rows)} exclude zero"


def cmd_bootstrap(cfg, out: Outputs):
    d = _read(cfg["input"])
    spec = _spec(cfg, d.K)
    _check_K(d, spec)
    alpha = parse_alpha(cfg["alpha"])
    fspec = _functional(cfg, spec.K).with_alpha(alpha)
    fspec.spec_for(spec)
    arm = bootstrap_arm(d, spec, _estimator(cfg), fspec, [alpha], cfg["bootstrap"], cfg["seed"],
                        _anchors(cfg), cfg["resample"])
    if arm.failures:
        raise NumericFailure(f"alpha={alpha}: {arm.failures[0]}")
    ci = arm.ci(0)
    s0, sl, su = arm.anchor_se()
    doc = {
        "alpha": alpha,
        "estimate": ci.estimate,
        "se": ci.se,
        "lower": ci.lower,
        "upper": ci.upper,
        "B": ci.B,
        "t_star": ci.t_star,
        "anchor_se": {"mean": s0, "missing=0": sl, "missing=1": su},
        "reference": reference_analyses(d, fspec),
    }
    out.json("bootstrap.json", doc)
    return f"estimate {ci.estimate:.4f} ({ci.lower:.4f}, {ci.upper:.4f})"


def cmd_diagnose(cfg, out: Outputs):
    d = _read(cfg["input"])
    spec = _spec(cfg, d.K)
    _check_K(d, spec)
    rows = alpha_diagnostic(d, spec, _estimator(cfg), parse_grid(cfg["alpha_grid"]))
    out.table("diagnose", [
        {"k": r.k, "alpha": r.alpha, "p_missing": r.p_missing, "p_observed": r.p_observed,
         "percent_difference": r.percent_difference, "defined": r.defined}
        for r in rows
    ])
    return f"{len(rows)} rows"


def cmd_simulate(cfg, out: Outputs):
    from markovtilt.simulation import random_observed_law, run_simulation

    if cfg.get("law"):
        law = ObservedLaw.load(cfg["law"])
        spec = ModelSpec(law.K, law.m)
    else:
        spec = _spec(cfg)
        law = random_observed_law(spec.K, spec.m, cfg["seed"])
    rows = run_simulation(law, spec, _estimator(cfg), parse_int_list(cfg["n"]), parse_grid(cfg["alpha_grid"]),
                          cfg["reps"], cfg["bootstrap"], cfg["seed"], _functional(cfg, spec.K), _anchors(cfg))
    out.table("simulation", [r.to_dict() for r in rows])
    return f"{len(rows)} summary rows"


def cmd_check_model(cfg, out: Outputs):
    spec = _spec(cfg)
    if spec.K > K_MAX_ENUM:
        raise ConfigError(f"check-model enumerates the joint; K must be at most {K_MAX_ENUM}")
    spec = spec.with_alphas(parse_alpha(cfg["alpha"]))
    dag = build_full_dag(spec)
    stmts = lemma_statements(spec, LEMMA1) + lemma_statements(spec, LEMMA2)
    worst = {i: 0.0 for i in range(len(stmts))}
    for s in range(cfg["oracles"]):
        o = gen_full_law(spec, [cfg["seed"], s])
        for i, st in enumerate(stmts):
            worst[i] = max(worst[i], verify_ci(o, st, cfg["tol"]).residual)
    rows = []
    lines = []
    for i, st in enumerate(stmts):
        dsep = d_separated(dag, st.X, st.Z, st.S)
        ok = worst[i] <= cfg["tol"]
        rows.append({"source": st.source, "k": st.k, "statement": st.describe(), "d_separated": dsep,
                     "max_residual": worst[i], "passed": ok})
        lines.append(f"{st.source} k={st.k}: {st.describe()}  residual={worst[i]:.2e}  "
                     f"d-sep={'yes' if dsep else 'no'}  {'PASS' if ok else 'FAIL'}")
    out.table("check_model", rows)
    out.text("check_model.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    if not all(r["passed"] for r in rows):
        raise NumericFailure("some independence statements failed the numeric check")
    return f"{len(rows)} statements verified on {cfg['oracles']} oracle laws"


HANDLERS = {
    "patterns": cmd_patterns,
    "fit": cmd_fit,
    "identify": cmd_identify,
    "sensitivity": cmd_sensitivity,
    "contour": cmd_contour,
    "bootstrap": cmd_bootstrap,
    "diagnose": cmd_diagnose,
    "simulate": cmd_simulate,
    "check-model": cmd_check_model,
}


def run(cfg: dict) -> int:
    """Execute one command from a resolved configuration and write its manifest."""
    out = Outputs(Path(cfg["out"]), cfg.get("format", "csv"))
    try:
        msg = HANDLERS[cfg["command"]](cfg, out)
    except (ConfigError, SpecError, InferenceError) as e:
        return _fail(EXIT_CONFIG, e)
    except (DataError, OSError, LawError) as e:
        return _fail(EXIT_IO, e)
    except (NumericFailure, PositivityError, IdentificationError, EstimationError, TableError,
            OracleError, ArithmeticError, RuntimeError) as e:
        return _fail(EXIT_NUMERIC, e)
    inputs = {}
    for key in ("input", "input_b", "law"):
        if cfg.get(key):
            inputs[key] = {"path": cfg[key], "sha256": _sha256(Path(cfg[key]))}
    manifest = {
        "tool": "markovtilt",
        "version": __version__,
        "command": cfg["command"],
        "config": {k: v for k, v in cfg.items() if k != "out"},
        "inputs": inputs,
        "outputs": sorted(out.files),
    }
    (out.out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if msg:
        print(msg)
    return EXIT_OK


def _fail(code: int, e: Exception) -> int:
    print(f"markovtilt: error: {e}", file=sys.stderr)
    return code


def replay(manifest_path: str, out=None) -> int:
    try:
        manifest = json.loads(Path(manifest_path).read_text())
    except (OSError, ValueError) as e:
        return _fail(EXIT_IO, e)
    if manifest.get("tool") != "markovtilt" or "config" not in manifest:
        return _fail(EXIT_CONFIG, ConfigError(f"{manifest_path} is not a markovtilt manifest"))
    for key, rec in manifest.get("inputs", {}).items():
        p = Path(rec["path"])
        if not p.exists():
            return _fail(EXIT_IO, ConfigError(f"input {p} is missing"))
        if _sha256(p) != rec["sha256"]:
            return _fail(EXIT_IO, ConfigError(f"input {p} changed since the manifest was written"))
    cfg = dict(manifest["config"])
    cfg["out"] = out or str(Path(manifest_path).parent)
    return run(cfg)


_SIGNED_VALUE_FLAGS = ("--alpha", "--alpha-grid", "--alpha-grid-b", "--anchors")


def _attach_signed_values(argv: list[str]) -> list[str]:
    """Let ``--alpha-grid -5:5:1`` through argparse, which reads ``-5:5:1`` as a flag."""
    out, i = [], 0
    while i < len(argv):
        a = argv[i]
        if a in _SIGNED_VALUE_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
        else:
            out.append(a)
            i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(_attach_signed_values(argv))
    if args.command == "replay":
        return replay(args.manifest, args.out)
    cfg = vars(args)
    for key in ("input", "input_b", "law"):
        if cfg.get(key):
            cfg[key] = str(Path(cfg[key]).resolve())
    cfg["out"] = str(Path(cfg["out"]))
    try:
        return run(cfg)
    except (ConfigError, SpecError) as e:
        return _fail(EXIT_CONFIG, e)


if __name__ == "__main__":
    sys.exit(main())
