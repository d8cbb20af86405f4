"""Classification diagnostics for a fitted latent class model.

All point diagnostics are functions of the posterior matrix and the class
proportions only.  Class indices are 0-based; argmax ties go to the lowest
index.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


def entropy(posteriors) -> float:
    """Relative entropy 1 - sum(-p ln p) / (N ln K); 1 is perfectly sharp."""
    p = np.asarray(posteriors, dtype=float)
    n, k = p.shape
    if k < 2:
        raise ValueError("entropy needs K >= 2")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return float(1.0 - terms.sum() / (n * math.log(k)))


def modal_assignment(posteriors) -> np.ndarray:
    return np.argmax(np.asarray(posteriors), axis=1)


def mcap(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    return np.bincount(labels, minlength=n_classes) / labels.size


def avepp(posteriors, labels) -> np.ndarray:
    """Mean own-class posterior among each class's modal members; NaN if none."""
    p = np.asarray(posteriors, dtype=float)
    labels = np.asarray(labels)
    out = np.full(p.shape[1], np.nan)
    for k in range(p.shape[1]):
        members = labels == k
        if members.any():
            out[k] = p[members, k].mean()
    return out


def occ(avepp_k: float, pi_k: float) -> float:
    """Odds of correct classification; +inf when AvePP is 1."""
    if not 0 < pi_k < 1:
        raise ValueError("class proportion must be in (0, 1)")
    if avepp_k >= 1:
        return math.inf
    return (avepp_k / (1 - avepp_k)) / (pi_k / (1 - pi_k))


@dataclass
class ClassDiagnostics:
    proportion: float
    ci: tuple[float, float] | None
    mcap: float
    avepp: float
    occ: float


@dataclass
class DiagnosticsReport:
    entropy: float
    classes: list
    labels: np.ndarray = field(repr=False)
    ci_level: float | None = None
    ci_failures: int = 0

    def to_dict(self) -> dict:
        return {
            "entropy": self.entropy,
            "ci_level": self.ci_level,
            "ci_failures": self.ci_failures,
            "classes": [
                {
                    "class": k + 1,
                    "proportion": c.proportion,
                    "ci": list(c.ci) if c.ci else None,
                    "mcap": c.mcap,
                    "avepp": _json_num(c.avepp),
                    "occ": _json_num(c.occ),
                }
                for k, c in enumerate(self.classes)
            ],
        }


def _json_num(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return None
    if math.isinf(x):
        return "Inf"
    return x


def class_proportion_ci(ds, fit, n_bootstrap: int = 200, seed: int = 0, level: float = 0.95,
                        max_iter: int = 500, tol: float = 1e-6):
    """Nonparametric bootstrap percentile intervals for class proportions.

    Rows are resampled with replacement; each replicate is refit by EM from
    the original estimates, then its classes are matched to the original
    ones by minimal summed |rho| difference.  Returns (intervals (K, 2),
    number of excluded replicates).
    """
    from . import lca

    params = fit.params
    k = params.n_classes
    if k == 1:
        return np.ones((1, 2)), 0
    rng = np.random.default_rng(seed)
    draws, failed = [], 0
    for _ in range(n_bootstrap):
        idx = rng.integers(0, ds.n, ds.n)
        try:
            f = lca.fit_em(ds.subset(idx), k, init=params, max_iter=max_iter, tol=tol)
        except lca.DegenerateClassError:
            failed += 1
            continue
        if not f.converged:
            failed += 1
            continue
        perm = lca.match_labels(params.rho, f.params.rho)
        draws.append(f.params.pi[perm])
    if failed:
        logger.warning("class-proportion bootstrap: %d of %d replicates excluded", failed, n_bootstrap)
    if not draws:
        return np.full((k, 2), np.nan), failed
    alpha = (1 - level) / 2
    q = np.quantile(np.asarray(draws), [alpha, 1 - alpha], axis=0)
    return q.T, failed


def diagnose(fit, ds=None, n_bootstrap: int = 0, seed: int = 0, level: float = 0.95) -> DiagnosticsReport:
    """Table of entropy, proportions (with bootstrap CIs), mcaP, AvePP and OCC."""
    post = fit.posteriors
    pi = fit.params.pi
    k = pi.size
    labels = modal_assignment(post)
    shares = mcap(labels, k)
    app = avepp(post, labels)
    cis, failed = (None, 0)
    if n_bootstrap and ds is not None:
        cis, failed = class_proportion_ci(ds, fit, n_bootstrap, seed, level)
    classes = []
    for c in range(k):
        o = occ(app[c], pi[c]) if (0 < pi[c] < 1 and not np.isnan(app[c])) else math.nan
        ci = (float(cis[c, 0]), float(cis[c, 1])) if cis is not None else None
        classes.append(ClassDiagnostics(float(pi[c]), ci, float(shares[c]), float(app[c]), o))
    ent = entropy(post) if k >= 2 else 1.0
    return DiagnosticsReport(ent, classes, labels, level if cis is not None else None, failed)
