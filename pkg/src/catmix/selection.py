"""Information criteria, bootstrap LR test and class enumeration."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import lca
from .dataset import collapse_patterns
from .diagnostics import modal_assignment

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StartPolicy:
    n_initial: int = 200
    n_final: int = 100
    stage1_iter: int = 20
    max_iter: int = 500
    tol: float = 1e-6
    accelerate: bool = True

    @classmethod
    def parse(cls, text: str, base: "StartPolicy | None" = None) -> "StartPolicy":
        """``"200,100"`` -> StartPolicy(200, 100), other settings taken from ``base``."""
        a, _, b = text.partition(",")
        return replace(base or cls(), n_initial=int(a), n_final=int(b or a))

    def __str__(self):
        return f"{self.n_initial},{self.n_final}"


FULL_STARTS = StartPolicy()
# overfitted replicate fits creep toward the boundary and need a longer budget
BOOTSTRAP_STARTS = StartPolicy(20, 5, max_iter=5000)


def bic(loglik: float, npar: int, n: int) -> float:
    return -2.0 * loglik + npar * math.log(n)


def abic(loglik: float, npar: int, n: int) -> float:
    """Sample-size adjusted BIC, n* = (n + 2) / 24."""
    return -2.0 * loglik + npar * math.log((n + 2) / 24)


def caic(loglik: float, npar: int, n: int) -> float:
    return -2.0 * loglik + npar * (math.log(n) + 1)


def awe(loglik: float, npar: int, n: int) -> float:
    return -2.0 * loglik + 2 * npar * (math.log(n) + 1.5)


CRITERIA = {"bic": bic, "abic": abic, "caic": caic, "awe": awe}


@dataclass
class BlrtResult:
    p_value: float
    statistic: float
    n_bootstrap: int
    n_used: int
    n_failed: int
    n_retried: int
    bootstrap_stats: list = field(repr=False, default_factory=list)


@dataclass
class FitSummary:
    n_classes: int
    npar: int
    loglik: float
    pct_converged: float
    pct_replicated: float
    bic: float
    abic: float
    caic: float
    awe: float
    smallest_class_n: int
    smallest_class_pct: float
    blrt_p: float | None = None
    vlmr_p: str = "not computed"
    start_policy: str = ""
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EnumerationTable:
    rows: list
    n: int
    start_policy: StartPolicy
    fits: dict = field(default_factory=dict, repr=False)
    warnings: list = field(default_factory=list)

    def best(self, criterion: str) -> int:
        ok = [r for r in self.rows if r.error is None]
        return min(ok, key=lambda r: getattr(r, criterion)).n_classes


def _fit(ds, k, policy: StartPolicy, seed, quiet=False) -> lca.MultistartReport:
    return lca.fit_multistart(ds, k, policy.n_initial, policy.n_final, seed, stage1_iter=policy.stage1_iter,
                              max_iter=policy.max_iter, tol=policy.tol, accelerate=policy.accelerate,
                              quiet=quiet)


_NULL, _ALT, _REPLICATE, _ENUM, _ENUM_BLRT = range(1, 6)


def _derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def blrt(ds, n_classes: int, n_bootstrap: int = 100, seed: int = 0,
         start_policy: StartPolicy = BOOTSTRAP_STARTS, observed: tuple | None = None) -> BlrtResult:
    """Parametric bootstrap test of K classes against K - 1.

    ``observed`` may carry already-fitted (K-1, K) :class:`lca.LcaFit` objects
    for the real data; otherwise both are fitted here with ``start_policy``.
    Replicate data come from the fitted K-1 model; both models are refit on
    each replicate.  p = (1 + #{T_b >= T}) / (B' + 1) where B' counts the
    replicates with usable fits.
    """
    if n_classes < 2:
        raise ValueError("BLRT needs K >= 2")
    if observed is None:
        null_fit = _fit(ds, n_classes - 1, start_policy, _derive_seed(seed, _NULL)).best_fit
        alt_fit = _fit(ds, n_classes, start_policy, _derive_seed(seed, _ALT)).best_fit
    else:
        null_fit, alt_fit = observed
    t_obs = 2.0 * (alt_fit.loglik - null_fit.loglik)
    n = ds.n
    stats = []
    failed = retried = 0
    for b in range(n_bootstrap):
        sim, _ = lca.simulate(null_fit.params, n, _derive_seed(seed, _REPLICATE, b), ds.indicator_names)
        pt = collapse_patterns(sim)
        for attempt in range(2):
            # a retry keeps the replicate data and redraws the random starts
            try:
                f0 = _fit(pt, n_classes - 1, start_policy, _derive_seed(seed, _REPLICATE, b, attempt, 0), True)
                f1 = _fit(pt, n_classes, start_policy, _derive_seed(seed, _REPLICATE, b, attempt, 1), True)
            except (lca.EstimationError, lca.DegenerateClassError):
                f0 = f1 = None
            if f0 is not None and f0.best_fit.converged and f1.best_fit.converged:
                stats.append(2.0 * (f1.best_fit.loglik - f0.best_fit.loglik))
                break
            if attempt == 0:
                retried += 1
        else:
            failed += 1
    if failed:
        logger.warning("BLRT K=%d: %d of %d replicates excluded", n_classes, failed, n_bootstrap)
    t = np.asarray(stats)
    # tiny slack so replicates equal to T up to rounding count as exceedances
    exceed = int(np.sum(t >= t_obs - 1e-9 * max(1.0, abs(t_obs))))
    p = (1 + exceed) / (len(stats) + 1)
    return BlrtResult(p, t_obs, n_bootstrap, len(stats), failed, retried, stats)


def summarize_fit(report: lca.MultistartReport, n: int, policy: StartPolicy | None = None) -> FitSummary:
    fit = report.best_fit
    k = fit.n_classes
    npar = fit.npar
    sizes = np.bincount(modal_assignment(fit.posteriors), minlength=k)
    smallest = int(sizes.min())
    return FitSummary(
        n_classes=k,
        npar=npar,
        loglik=fit.loglik,
        pct_converged=report.pct_converged,
        pct_replicated=report.pct_replicated,
        bic=bic(fit.loglik, npar, n),
        abic=abic(fit.loglik, npar, n),
        caic=caic(fit.loglik, npar, n),
        awe=awe(fit.loglik, npar, n),
        smallest_class_n=smallest,
        smallest_class_pct=100.0 * smallest / n,
        start_policy=str(policy) if policy else f"{report.n_initial},{report.n_final}",
    )


def enumerate_classes(ds, k_max: int, start_policy: StartPolicy = FULL_STARTS, seed: int = 0,
                      with_blrt: bool = False, n_bootstrap: int = 100,
                      blrt_policy: StartPolicy = BOOTSTRAP_STARTS) -> EnumerationTable:
    """Fit K = 1..k_max and tabulate fit indices.

    A hard failure for one K is recorded on its row and the sweep continues.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    pt = collapse_patterns(ds)
    n = ds.n
    rows, fits, warnings = [], {}, []
    for k in range(1, k_max + 1):
        try:
            report = _fit(pt, k, start_policy, _derive_seed(seed, _ENUM, k))
        except lca.EstimationError as exc:
            nan = float("nan")
            rows.append(FitSummary(k, lca.n_parameters(k, ds.n_indicators), nan, 0.0, 0.0,
                                   nan, nan, nan, nan, 0, nan, start_policy=str(start_policy),
                                   error=str(exc)))
            continue
        # posteriors in the original row order
        best = report.best_fit
        post = lca.e_step(best.params, ds)
        report = replace(report, best_fit=replace(best, posteriors=post))
        fits[k] = report
        row = summarize_fit(report, n, start_policy)
        if with_blrt and k >= 2 and (k - 1) in fits:
            res = blrt(ds, k, n_bootstrap, _derive_seed(seed, _ENUM_BLRT, k), blrt_policy,
                       observed=(fits[k - 1].best_fit, report.best_fit))
            row.blrt_p = res.p_value
        rows.append(row)
    lls = [(r.n_classes, r.loglik) for r in rows if r.error is None]
    for (k0, a), (k1, b) in zip(lls, lls[1:]):
        if b < a - 1e-6:
            msg = f"LL decreased from K={k0} to K={k1}: likely local optimum"
            logger.warning(msg)
            warnings.append(msg)
    return EnumerationTable(rows, n, start_policy, fits, warnings)
