"""Run orchestration: subcommand handlers, artifact writing and plot-ready tables.

Every handler writes its tables through an :class:`ArtifactWriter`, which
writes atomically (temp file + rename) and records each file in
``manifest.json``.  Class and cluster labels are 1-based in every written
artifact.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import compare as cmp
from . import diagnostics as diag
from . import kmodes as km
from . import lca
from . import selection as sel
from . import threestep as ts
from .dataset import CategoricalDataset, DataError, Schema, describe, load_csv, write_csv

logger = logging.getLogger(__name__)

BUILD_ID = f"catmix-{__version__}"
FORMATS = ("text", "csv", "json")
STOCHASTIC = {"fit-kmodes", "sweep-k", "fit-lca", "simulate", "enumerate", "diagnose", "three-step",
              "replicate"}
OUTPUT_ENV = "CATMIX_OUTPUT_DIR"

EXIT_OK, EXIT_NUMERICAL, EXIT_INPUT = 0, 1, 2


@dataclass
class RunConfig:
    subcommand: str
    input: str | None = None
    schema: Schema = field(default_factory=Schema)
    options: dict = field(default_factory=dict)
    seed: int | None = None
    output_dir: str | None = None
    formats: tuple = FORMATS

    def __post_init__(self):
        bad = set(self.formats) - set(FORMATS)
        if bad:
            raise DataError(f"unknown output formats: {sorted(bad)}")
        if self.subcommand in STOCHASTIC and self.seed is None:
            raise DataError(f"--seed is required for {self.subcommand}")
        if self.output_dir is None:
            self.output_dir = os.environ.get(OUTPUT_ENV, "catmix_out")


class ArtifactWriter:
    def __init__(self, directory, formats=FORMATS, echo=None):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.formats = set(formats)
        self.files: list[str] = []
        self.echo = echo

    def _write(self, name: str, text: str):
        path = self.dir / name
        fd, tmp = tempfile.mkstemp(dir=self.dir, prefix=f".{name}.", suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
        if name not in self.files:
            self.files.append(name)
        return path

    def json(self, name, obj, always=False):
        if always or "json" in self.formats:
            return self._write(name, json.dumps(obj, indent=2, sort_keys=False, default=_json_default) + "\n")

    def csv(self, name, header, rows, always=False):
        if always or "csv" in self.formats:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])
            return self._write(name, buf.getvalue())

    def text(self, name, text):
        if self.echo is not None:
            self.echo(text)
        if "text" in self.formats:
            return self._write(name, text.rstrip("\n") + "\n")

    def manifest(self, cfg: RunConfig, inputs=()):
        entry = {
            "build": BUILD_ID,
            "subcommand": cfg.subcommand,
            "seed": cfg.seed,
            "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in inputs if p],
            "schema": cfg.schema.to_dict(),
            "options": cfg.options,
            "files": sorted(self.files + ["manifest.json"]),
        }
        self._write("manifest.json", json.dumps(entry, indent=2, default=_json_default) + "\n")


def _sha256(path) -> str | None:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError:
        return None


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "NA"
        if math.isinf(v):
            return "Inf" if v > 0 else "-Inf"
        return f"{v:.10g}"
    return str(v)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (Schema, sel.StartPolicy)):
        return o.to_dict() if isinstance(o, Schema) else str(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


# -- plot data ----------------------------------------------------------------

def emit_profile_plot(model, ds: CategoricalDataset) -> list[tuple]:
    """Rows of (group, group_pct, indicator, value) for endorsement profile plots.

    For a latent class fit the values are the estimated item probabilities and
    group_pct the estimated class share; for k-modes they are within-cluster
    endorsement proportions and the cluster's share of observations.
    """
    if isinstance(model, km.KModesModel):
        values = km.cluster_profiles(model, ds)
        shares = 100.0 * model.sizes / ds.n
    else:
        params = model.params if hasattr(model, "params") else model
        values = params.rho
        shares = 100.0 * params.pi
    rows = []
    for g in range(values.shape[0]):
        for j, name in enumerate(ds.indicator_names):
            rows.append((g + 1, float(shares[g]), name, float(values[g, j])))
    return rows


PROFILE_HEADER = ("group", "group_pct", "indicator", "value")


# -- formatting ----------------------------------------------------------------

def format_table(header, rows) -> str:
    cells = [[str(h) for h in header]] + [[_cell(v) if not isinstance(v, str) else v for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells)


def enumeration_rows(table: sel.EnumerationTable):
    header = ("classes", "npar", "LL", "pct_converged", "pct_replicated", "BIC", "aBIC", "CAIC", "AWE",
              "VLMR", "BLRT_p", "smallest_n", "smallest_pct", "start_policy")
    rows = [(r.n_classes, r.npar, r.loglik, r.pct_converged, r.pct_replicated, r.bic, r.abic, r.caic,
             r.awe, r.vlmr_p, r.blrt_p, r.smallest_class_n, r.smallest_class_pct, r.start_policy)
            for r in table.rows]
    return header, rows


def diagnostics_rows(report: diag.DiagnosticsReport):
    header = ("class", "proportion", "ci_low", "ci_high", "mcaP", "AvePP", "OCC")
    rows = []
    for k, c in enumerate(report.classes):
        lo, hi = c.ci if c.ci else (None, None)
        rows.append((k + 1, c.proportion, lo, hi, c.mcap, c.avepp, c.occ))
    return header, rows


def format_threestep(res: ts.ThreeStepResult) -> str:
    lines = [f"Three-step: covariate {res.covariate!r}, outcome {res.outcome!r}",
             f"reference class: {res.reference_class + 1} (largest estimated share)", "",
             "Covariate effects on class membership (logit, all contrasts):"]
    rows = [(f"{c.target + 1} vs {c.reference + 1}", c.logit, c.se, c.p_value, c.odds_ratio)
            for c in res.contrasts if c.target > c.reference or c.reference == res.reference_class]
    lines.append(format_table(("contrast", "logit", "se", "p", "OR"), rows))
    lines += ["", "Class-specific outcome means:"]
    rows = [(k + 1, res.class_means[k], res.class_means_se[k], res.class_means_at_covariate_mean[k])
            for k in range(res.class_means.size)]
    lines.append(format_table(("class", "mean_at_x0", "se", f"mean_at_x={res.covariate_mean:.3f}"), rows))
    lines += ["", f"direct effect of covariate on outcome: {res.direct_effect:.4f} "
                  f"(se {_cell(res.direct_effect_se)}, p {_cell(res.direct_effect_p)})",
              f"residual variance: {res.residual_variance:.4f}",
              f"omnibus Wald chi2({res.wald[1]}) = {_cell(res.wald[0])}, p = {_cell(res.wald[2])}", "",
              "Pairwise mean differences (unadjusted):"]
    rows = [(f"{a + 1} - {b + 1}", d, p) for a, b, d, p in res.pairwise if a < b]
    lines.append(format_table(("pair", "M_diff", "p"), rows))
    flags = [name for name, on in (("hessian not positive definite", not res.hessian_ok),
                                   ("possible separation", res.separation),
                                   ("EM not converged", not res.converged)) if on]
    if flags:
        lines += ["", "warnings: " + "; ".join(flags)]
    return "\n".join(lines)


# -- model serialization ------------------------------------------------------

def lca_fit_document(report: lca.MultistartReport, ds, cfg: RunConfig, policy: sel.StartPolicy) -> dict:
    fit = report.best_fit
    labels = diag.modal_assignment(fit.posteriors)
    return {
        "kind": "lca",
        "build": BUILD_ID,
        "input": cfg.input,
        "schema": cfg.schema.to_dict(),
        "indicator_names": list(ds.indicator_names),
        "n": ds.n,
        "n_classes": fit.n_classes,
        "seed": cfg.seed,
        "start_policy": str(policy),
        "tol": policy.tol,
        "params": fit.params.to_dict(),
        "loglik": fit.loglik,
        "npar": fit.npar,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "multistart": report.to_dict(),
        "posterior_summary": {
            "mean_posterior": fit.posteriors.mean(axis=0).tolist(),
            "modal_counts": np.bincount(labels, minlength=fit.n_classes).tolist(),
        },
    }


def load_fit(path, data_path=None, schema: Schema | None = None):
    """Rebuild (dataset, LcaFit) from a fit document and its data file."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("kind") != "lca":
        raise DataError(f"{path}: not an LCA fit document")
    data_path = data_path or doc.get("input")
    if not data_path:
        raise DataError(f"{path}: no data file recorded; pass --data")
    if schema is None or schema.is_empty():
        schema = Schema.from_mapping(doc.get("schema") or {})
    ds = load_csv(data_path, schema)
    if list(ds.indicator_names) != doc["indicator_names"]:
        raise DataError("data indicators differ from those in the fit document")
    params = lca.LcaParams.from_dict(doc["params"])
    post = lca.e_step(params, ds)
    fit = lca.LcaFit(params, lca.log_likelihood(params, ds), post, doc.get("iterations", 0),
                     doc.get("converged", True), (), doc.get("seed"))
    return ds, fit, doc, data_path


def read_labels(path, column=None) -> np.ndarray:
    with open(path, newline="", encoding="utf-8-sig") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise DataError(f"{path}: no labels")
    header = [h.strip() for h in rows[0]]
    if column is None:
        idx = len(header) - 1
    elif column in header:
        idx = header.index(column)
    else:
        raise DataError(f"{path}: unknown column {column!r}")
    try:
        return np.array([int(float(r[idx])) for r in rows[1:] if r])
    except (ValueError, IndexError):
        raise DataError(f"{path}: non-integer label in column {header[idx]!r}") from None


# -- handlers -------------------------------------------------------------------

def _dataset(cfg: RunConfig) -> CategoricalDataset:
    if not cfg.input:
        raise DataError(f"{cfg.subcommand} needs an input CSV")
    return load_csv(cfg.input, cfg.schema)


def _policy(opts) -> sel.StartPolicy:
    p = sel.StartPolicy.parse(opts.get("starts", "200,100"))
    return sel.StartPolicy(p.n_initial, p.n_final, opts.get("stage1_iter", 20), opts.get("max_iter", 500),
                           opts.get("tol", 1e-6), not opts.get("plain_em", False))


def do_describe(cfg, out: ArtifactWriter, ds=None):
    ds = ds or _dataset(cfg)
    d = describe(ds)
    out.json("describe.json", d)
    out.csv("describe_proportions.csv", ("indicator", "proportion"), d["proportions"].items())
    out.csv("selection_histogram.csv", ("n_selected", "n_rows"), enumerate(d["selection_histogram"]))
    lines = [f"N = {d['n']}, J = {d['n_indicators']}",
             f"selections per row: mean {d['selection_mean']:.2f}, SD {d['selection_sd']:.2f}, "
             f"{d['pct_any_selected']:.1f}% selected at least one", "",
             format_table(("indicator", "proportion"), sorted(d["proportions"].items(), key=lambda t: -t[1]))]
    out.text("describe.txt", "\n".join(lines))
    return d


def _kmodes_artifacts(out, ds, model, tag):
    sil = km.silhouette_width(model, ds)[0] if model.k >= 2 and np.unique(model.assignment).size > 1 else None
    doc = {
        "k": model.k,
        "centroids": model.centroids.tolist(),
        "indicator_names": list(ds.indicator_names),
        "sizes": model.sizes.tolist(),
        "cost": model.cost,
        "silhouette": sil,
        "iterations": model.iterations,
        "converged": model.converged,
        "best_restart": model.restart,
    }
    out.json(f"{tag}.json", doc)
    out.csv(f"{tag}_assignments.csv", ("row", "cluster"),
            ((i + 1, c + 1) for i, c in enumerate(model.assignment)), always=True)
    out.csv(f"{tag}_profile.csv", PROFILE_HEADER, emit_profile_plot(model, ds))
    return doc


def do_fit_kmodes(cfg, out, ds=None, k=None):
    ds = ds or _dataset(cfg)
    o = cfg.options
    k = k or o["k"]
    model = km.fit_kmodes(ds, km.KModesConfig(k, o.get("max_iter_kmodes", 300), o.get("restarts", 10), cfg.seed))
    doc = _kmodes_artifacts(out, ds, model, f"kmodes_k{k}")
    sizes = ", ".join(f"{s} ({100 * s / ds.n:.1f}%)" for s in doc["sizes"])
    out.text(f"kmodes_k{k}.txt", f"k-modes, k={k}: cost {doc['cost']}, silhouette {_cell(doc['silhouette'])}, "
                                 f"sizes {sizes}")
    return model


def do_sweep_k(cfg, out, ds=None):
    ds = ds or _dataset(cfg)
    o = cfg.options
    lo, hi = o.get("k_range", (1, 10))
    rows = km.sweep_k(ds, range(lo, min(hi, ds.n) + 1),
                      km.KModesConfig(1, o.get("max_iter_kmodes", 300), o.get("restarts", 10), cfg.seed))
    table = [(r["k"], r["cost"], r["silhouette"]) for r in rows]
    out.csv("sweep_k.csv", ("k", "cost", "silhouette"), table, always=True)
    out.text("sweep_k.txt", format_table(("k", "cost", "silhouette"), table))
    return rows


def do_fit_lca(cfg, out, ds=None):
    ds = ds or _dataset(cfg)
    o = cfg.options
    k = o["classes"]
    policy = _policy(o)
    report = lca.fit_multistart(ds, k, policy.n_initial, policy.n_final, cfg.seed,
                                stage1_iter=policy.stage1_iter, max_iter=policy.max_iter, tol=policy.tol,
                                accelerate=policy.accelerate)
    _lca_artifacts(cfg, out, ds, report, policy, o.get("posteriors", False))
    return report


def _lca_artifacts(cfg, out, ds, report, policy, posteriors=False):
    fit = report.best_fit
    k = fit.n_classes
    doc = lca_fit_document(report, ds, cfg, policy)
    out.json(f"lca_K{k}.json", doc, always=True)
    labels = diag.modal_assignment(fit.posteriors)
    out.csv(f"lca_K{k}_assignments.csv", ("row", "class"),
            ((i + 1, c + 1) for i, c in enumerate(labels)), always=True)
    if posteriors:
        out.csv(f"lca_K{k}_posteriors.csv", ("row",) + tuple(f"class_{c + 1}" for c in range(k)),
                ((i + 1, *row) for i, row in enumerate(fit.posteriors)), always=True)
    out.csv(f"lca_K{k}_profile.csv", PROFILE_HEADER, emit_profile_plot(fit, ds))
    lines = [f"LCA K={k}: LL {fit.loglik:.4f}, npar {fit.npar}, converged {fit.converged}",
             f"starts {policy}: {report.pct_converged:.1f}% converged, {report.pct_replicated:.1f}% replicated",
             "", format_table(("indicator",) + tuple(f"class {c + 1} ({100 * p:.1f}%)"
                                                     for c, p in enumerate(fit.params.pi)),
                              [(name, *fit.params.rho[:, j]) for j, name in enumerate(ds.indicator_names)])]
    out.text(f"lca_K{k}.txt", "\n".join(lines))
    return doc


def do_simulate(cfg, out):
    o = cfg.options
    src = o.get("params")
    if not src:
        raise DataError("simulate needs --params (a JSON file with pi and rho, or a fit document)")
    with open(src, encoding="utf-8") as fh:
        doc = json.load(fh)
    params = lca.LcaParams.from_dict(doc.get("params", doc))
    names = doc.get("indicator_names")
    ds, labels = lca.simulate(params, o.get("n", 500), cfg.seed, names)
    tmp = out.dir / ".simulated.csv.tmp"
    write_csv(ds, tmp)
    os.replace(tmp, out.dir / "simulated.csv")
    out.files.append("simulated.csv")
    out.csv("simulated_labels.csv", ("row", "class"), ((i + 1, c + 1) for i, c in enumerate(labels)), always=True)
    out.text("simulate.txt", f"simulated N={ds.n}, J={ds.n_indicators}, K={params.n_classes}; "
                             f"class counts {np.bincount(labels, minlength=params.n_classes).tolist()}")
    return ds, labels


def do_enumerate(cfg, out, ds=None):
    ds = ds or _dataset(cfg)
    o = cfg.options
    policy = _policy(o)
    table = sel.enumerate_classes(ds, o.get("max_classes", 7), policy, cfg.seed,
                                  with_blrt=o.get("blrt", False), n_bootstrap=o.get("bootstrap", 100),
                                  blrt_policy=sel.StartPolicy.parse(o.get("blrt_starts", "20,5"),
                                                                        sel.BOOTSTRAP_STARTS))
    header, rows = enumeration_rows(table)
    out.csv("enumeration.csv", header, rows)
    out.json("enumeration.json", {"n": table.n, "start_policy": str(policy), "warnings": table.warnings,
                                  "rows": [r.to_dict() for r in table.rows],
                                  "best": {c: table.best(c) for c in sel.CRITERIA}})
    out.csv("ic_plot.csv", ("classes", "BIC", "aBIC", "CAIC", "AWE"),
            [(r.n_classes, r.bic, r.abic, r.caic, r.awe) for r in table.rows], always=True)
    text = format_table(header[:-1], [r[:-1] for r in rows])
    text += "\n\nminimized at: " + ", ".join(f"{c.upper()} K={table.best(c)}" for c in sel.CRITERIA)
    text += f"\nstart policy: {policy}; VLMR not computed"
    if table.warnings:
        text += "\n" + "\n".join("warning: " + w for w in table.warnings)
    out.text("enumeration.txt", text)
    return table


def do_diagnose(cfg, out, ds=None, fit=None):
    o = cfg.options
    if fit is None:
        ds, fit, _, _ = load_fit(o["fit"], cfg.input, cfg.schema)
    report = diag.diagnose(fit, ds, o.get("bootstrap", 0), cfg.seed, o.get("level", 0.95))
    k = fit.n_classes
    header, rows = diagnostics_rows(report)
    out.csv(f"diagnostics_K{k}.csv", header, rows)
    out.json(f"diagnostics_K{k}.json", report.to_dict())
    text = f"entropy {report.entropy:.3f}\n" + format_table(header, rows)
    out.text(f"diagnostics_K{k}.txt", text)
    return report


def do_three_step(cfg, out, ds=None, fit=None):
    o = cfg.options
    if fit is None:
        ds, fit, _, _ = load_fit(o["fit"], cfg.input, cfg.schema)
    res = ts.fit_threestep(ds, fit, o["covariate"], o["outcome"], seed=cfg.seed, n_starts=o.get("ts_starts", 1))
    out.json("threestep.json", res.to_dict())
    rows = [(c.target + 1, c.reference + 1, c.intercept, c.logit, c.se, c.p_value, c.odds_ratio)
            for c in res.contrasts]
    out.csv("threestep_logits.csv", ("class", "reference", "intercept", "logit", "se", "p", "odds_ratio"), rows)
    out.csv("threestep_means.csv", ("class", "mean_at_x0", "se", "mean_at_covariate_mean"),
            [(k + 1, res.class_means[k], res.class_means_se[k], res.class_means_at_covariate_mean[k])
             for k in range(res.class_means.size)])
    out.text("threestep.txt", format_threestep(res))
    return res


def _compare_artifacts(out, a, b, tag, orientation="column", row_name="Cluster", col_name="Class"):
    tab = cmp.crosstab(a, b)
    agr = cmp.agreement(tab, orientation)
    pct = tab.percentages(orientation)
    rows = [(r, c, tab.counts[i, j], pct[i, j]) for i, r in enumerate(tab.row_labels)
            for j, c in enumerate(tab.col_labels)]
    out.csv(f"{tag}.csv", ("a", "b", "count", "pct"), rows)
    out.json(f"{tag}.json", {**tab.to_dict(orientation), "agreement": agr})
    text = cmp.format_crosstab(tab, row_name, col_name, orientation)
    text += ("\n\ncolumn maxima: " + ", ".join(f"{v:.1f}%" for v in agr["column_max_pct"])
             + f"\nmany-to-one agreement {100 * agr['many_to_one']:.1f}%, "
               f"greedy one-to-one agreement {100 * agr['one_to_one']:.1f}%")
    out.text(f"{tag}.txt", text)
    return tab, agr


def do_compare(cfg, out):
    o = cfg.options
    a = read_labels(o["a"], o.get("a_col"))
    b = read_labels(o["b"], o.get("b_col"))
    return _compare_artifacts(out, a, b, "compare", o.get("orientation", "column"), "A", "B")


def do_replicate(cfg, out):
    """describe -> sweep-k -> k-modes -> enumerate -> diagnose -> three-step -> compare."""
    ds = _dataset(cfg)
    o = cfg.options
    do_describe(cfg, out, ds)
    do_sweep_k(cfg, out, ds)
    kmodels = {k: do_fit_kmodes(cfg, out, ds, k) for k in o.get("kmodes_k", (2, 3))}
    table = do_enumerate(cfg, out, ds)
    policy = _policy(o)
    for k, report in table.fits.items():
        _lca_artifacts(cfg, out, ds, report, policy)
    chosen = o.get("classes", 3)
    if chosen not in table.fits:
        raise lca.EstimationError(f"no usable {chosen}-class solution")
    fit = table.fits[chosen].best_fit
    do_diagnose(cfg, out, ds, fit)
    if o.get("covariate") and o.get("outcome"):
        do_three_step(cfg, out, ds, fit)
    for k, model in kmodels.items():
        for c, report in table.fits.items():
            if c in (chosen, k):
                labels = diag.modal_assignment(report.best_fit.posteriors)
                _compare_artifacts(out, model.assignment + 1, labels + 1, f"compare_k{k}_K{c}")
    return table


HANDLERS = {
    "describe": do_describe,
    "fit-kmodes": do_fit_kmodes,
    "sweep-k": do_sweep_k,
    "fit-lca": do_fit_lca,
    "simulate": do_simulate,
    "enumerate": do_enumerate,
    "diagnose": do_diagnose,
    "three-step": do_three_step,
    "compare": do_compare,
    "replicate": do_replicate,
}


def error_document(exc: BaseException, code: int) -> dict:
    return {"error": type(exc).__name__, "message": str(exc), "exit_code": code}


def classify_error(exc: BaseException) -> int:
    if isinstance(exc, (DataError, KeyError, FileNotFoundError, json.JSONDecodeError)):
        return EXIT_INPUT
    if isinstance(exc, (lca.EstimationError, ArithmeticError, np.linalg.LinAlgError)):
        return EXIT_NUMERICAL
    if isinstance(exc, ValueError):
        return EXIT_INPUT
    return EXIT_NUMERICAL


def run(cfg: RunConfig, echo=None) -> int:
    """Execute one subcommand; returns the process exit status."""
    try:
        out = ArtifactWriter(cfg.output_dir, cfg.formats, echo)
        HANDLERS[cfg.subcommand](cfg, out)
        inputs = [cfg.input] + [cfg.options.get(k) for k in ("fit", "params", "a", "b")]
        out.manifest(cfg, [p for p in inputs if p])
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - every failure becomes an exit code
        code = classify_error(exc)
        logger.debug("run failed", exc_info=True)
        sys.stderr.write(json.dumps(error_document(exc, code)) + "\n")
        return code
