"""Maximum-likelihood three-step estimation of covariate and distal-outcome effects.

Step 1 is a fitted latent class model; step 2 assigns observations to their
modal class W and summarizes the classification error P(W = s | C = k); step 3
treats W as the only indicator of the latent class, with that error matrix
held fixed, and jointly estimates

* a multinomial logit of class membership on one covariate X, and
* a normal distal outcome Y | C = k, X with mean M_k + beta * X and a common
  residual variance.

Estimation is by EM; standard errors come from a central finite-difference
Hessian of the step-3 log-likelihood.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .diagnostics import modal_assignment

logger = logging.getLogger(__name__)

Q_FLOOR = 1e-10
LOGIT_CAP = 15.0
SEPARATION_LIMIT = 10.0


@dataclass(frozen=True, eq=False)
class ClassificationErrorMatrix:
    q: np.ndarray  # q[k, s] = P(W = s | C = k), floored and renormalized
    fixed_logits: np.ndarray  # (K, K-1), log(q[k, s] / q[k, K-1]) capped to +/-15

    @property
    def log_measurement(self) -> np.ndarray:
        """(K, K) log P(W = s | C = k) implied by the capped logits."""
        full = np.hstack([self.fixed_logits, np.zeros((self.fixed_logits.shape[0], 1))])
        return full - logsumexp(full, axis=1, keepdims=True)


def classification_error_matrix(posteriors, labels=None) -> ClassificationErrorMatrix:
    p = np.asarray(posteriors, dtype=float)
    k = p.shape[1]
    labels = modal_assignment(p) if labels is None else np.asarray(labels)
    mass = p.sum(axis=0)
    if np.any(mass <= 0):
        raise ValueError(f"classes {np.flatnonzero(mass <= 0).tolist()} have zero posterior mass")
    onehot = labels[:, None] == np.arange(k)[None, :]
    q = (p.T @ onehot) / mass[:, None]
    q = np.maximum(q, Q_FLOOR)
    q /= q.sum(axis=1, keepdims=True)
    logits = np.clip(np.log(q[:, :-1] / q[:, -1:]), -LOGIT_CAP, LOGIT_CAP)
    return ClassificationErrorMatrix(q, logits)


# -- structural pieces ------------------------------------------------------

def _class_log_probs(gamma: np.ndarray, design: np.ndarray) -> np.ndarray:
    eta = design @ gamma[:, :design.shape[1]].T
    return eta - logsumexp(eta, axis=1, keepdims=True)


def _weighted_mlogit(design, h, ref, gamma0, max_iter=100, tol=1e-12):
    """Maximize sum_ik h_ik log P(C=k | x_i) by damped Newton; row ``ref`` fixed at 0."""
    n, p = design.shape
    k = h.shape[1]
    free = [c for c in range(k) if c != ref]
    gamma = gamma0.copy()

    def objective(g):
        return float(np.sum(h * _class_log_probs(g, design)))

    obj = objective(gamma)
    for _ in range(max_iter):
        prob = np.exp(_class_log_probs(gamma, design))
        grad = ((h - prob)[:, free].T @ design).ravel()
        hess = np.zeros((len(free) * p, len(free) * p))
        for a, ca in enumerate(free):
            for b, cb in enumerate(free):
                w = prob[:, ca] * ((ca == cb) - prob[:, cb])
                hess[a * p:(a + 1) * p, b * p:(b + 1) * p] = (design * w[:, None]).T @ design
        try:
            delta = np.linalg.solve(hess + 1e-12 * np.eye(hess.shape[0]), grad)
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(hess, grad, rcond=None)[0]
        step = 1.0
        while step > 1e-10:
            trial = gamma.copy()
            trial[free] += step * delta.reshape(len(free), p)
            new = objective(trial)
            if new >= obj - 1e-14:
                break
            step /= 2
        else:
            break
        gamma, gain, obj = trial, new - obj, new
        if abs(gain) < tol and np.max(np.abs(step * delta)) < 1e-9:
            break
    return gamma


def _outcome_wls(y, x, h, use_x):
    """Class means, direct effect and residual variance maximizing the weighted normal LL."""
    n, k = h.shape
    hk = h.sum(axis=0)
    if use_x:
        a = np.zeros((k + 1, k + 1))
        a[np.arange(k), np.arange(k)] = hk
        hx = h.T @ x
        a[:k, k] = a[k, :k] = hx
        a[k, k] = np.sum(h.sum(axis=1) * x * x)
        rhs = np.concatenate([h.T @ y, [np.sum(h.sum(axis=1) * x * y)]])
        sol = np.linalg.solve(a, rhs)
        means, beta = sol[:k], float(sol[k])
    else:
        means, beta = (h.T @ y) / hk, 0.0
    resid = y[:, None] - means[None, :] - beta * x[:, None]
    sigma2 = float(np.sum(h * resid ** 2) / n)
    return means, beta, sigma2


# -- parameter packing -------------------------------------------------------

@dataclass
class _Layout:
    k: int
    ref: int
    use_x: bool

    @property
    def free(self):
        return [c for c in range(self.k) if c != self.ref]

    @property
    def p(self):
        return 2 if self.use_x else 1

    def pack(self, gamma, means, beta, sigma2):
        parts = [gamma[self.free, :self.p].ravel(), means]
        if self.use_x:
            parts.append([beta])
        parts.append([math.log(sigma2)])
        return np.concatenate(parts)

    def unpack(self, theta):
        nf = len(self.free) * self.p
        gamma = np.zeros((self.k, 2))
        gamma[self.free, :self.p] = theta[:nf].reshape(len(self.free), self.p)
        means = theta[nf:nf + self.k]
        pos = nf + self.k
        beta = float(theta[pos]) if self.use_x else 0.0
        pos += int(self.use_x)
        return gamma, means, beta, math.exp(theta[pos])

    def index(self):
        nf = len(self.free) * self.p
        out = {"gamma": {}, "means": list(range(nf, nf + self.k))}
        for a, c in enumerate(self.free):
            out["gamma"][c] = list(range(a * self.p, (a + 1) * self.p))
        out["beta"] = nf + self.k if self.use_x else None
        return out


def _joint_log(theta, layout, design, y, x, log_meas_w):
    gamma, means, beta, sigma2 = layout.unpack(theta)
    lp = _class_log_probs(gamma, design)
    resid = y[:, None] - means[None, :] - beta * x[:, None]
    ly = -0.5 * (math.log(2 * math.pi * sigma2) + resid ** 2 / sigma2)
    return lp + log_meas_w + ly


def _loglik(theta, *args) -> float:
    return float(logsumexp(_joint_log(theta, *args), axis=1).sum())


def numerical_hessian(f, theta, rel_step=1e-4) -> np.ndarray:
    """Central-difference Hessian with per-coordinate step rel_step * max(|theta_j|, 1)."""
    theta = np.asarray(theta, dtype=float)
    m = theta.size
    h = rel_step * np.maximum(np.abs(theta), 1.0)
    hess = np.zeros((m, m))
    f0 = f(theta)
    for i in range(m):
        ei = np.zeros(m)
        ei[i] = h[i]
        hess[i, i] = (f(theta + ei) - 2 * f0 + f(theta - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(m)
            ej[j] = h[j]
            v = (f(theta + ei + ej) - f(theta + ei - ej) - f(theta - ei + ej) + f(theta - ei - ej))
            hess[i, j] = hess[j, i] = v / (4 * h[i] * h[j])
    return hess


# -- tests on class means -----------------------------------------------------

def wald_omnibus(class_means, covariance) -> tuple[float, int, float]:
    """Chi-square test that all K means are equal, df = K - 1."""
    m = np.asarray(class_means, dtype=float)
    v = np.asarray(covariance, dtype=float)
    k = m.size
    if k < 2:
        raise ValueError("need at least two classes")
    c = np.zeros((k - 1, k))
    c[np.arange(k - 1), np.arange(k - 1)] = 1.0
    c[np.arange(k - 1), np.arange(1, k)] = -1.0
    d = c @ m
    cv = c @ v @ c.T
    if np.linalg.matrix_rank(cv) < k - 1:
        raise np.linalg.LinAlgError("contrast covariance is singular")
    stat = float(d @ np.linalg.solve(cv, d))
    stat = max(stat, 0.0)
    return stat, k - 1, float(stats.chi2.sf(stat, k - 1))


def pairwise_differences(class_means, covariance) -> list[tuple[int, int, float, float]]:
    """(k, k', M_k - M_k', two-sided z-test p) for every ordered pair; unadjusted."""
    m = np.asarray(class_means, dtype=float)
    v = np.asarray(covariance, dtype=float)
    out = []
    for a in range(m.size):
        for b in range(m.size):
            if a == b:
                continue
            diff = float(m[a] - m[b])
            var = v[a, a] + v[b, b] - 2 * v[a, b]
            if diff == 0:
                p = 1.0
            elif var <= 0:
                p = 0.0
            else:
                p = float(2 * stats.norm.sf(abs(diff) / math.sqrt(var)))
            out.append((a, b, diff, p))
    return out


# -- result -----------------------------------------------------------------

@dataclass
class LogitContrast:
    target: int
    reference: int
    intercept: float
    logit: float
    se: float
    p_value: float

    @property
    def odds_ratio(self) -> float:
        return math.exp(self.logit)


@dataclass
class ThreeStepResult:
    covariate: str
    outcome: str
    reference_class: int
    error_matrix: ClassificationErrorMatrix = field(repr=False)
    covariate_logits: list  # LogitContrast vs the reference class
    contrasts: list  # LogitContrast for every ordered pair
    class_means: np.ndarray
    class_means_se: np.ndarray
    class_means_at_covariate_mean: np.ndarray
    covariate_mean: float
    means_covariance: np.ndarray = field(repr=False)
    direct_effect: float
    direct_effect_se: float
    direct_effect_p: float
    residual_variance: float
    wald: tuple
    pairwise: list
    loglik: float
    iterations: int
    converged: bool
    hessian_ok: bool
    separation: bool
    trace: tuple = field(default=(), repr=False)

    def to_dict(self) -> dict:
        def contrast(c: LogitContrast):
            return {"class": c.target + 1, "reference": c.reference + 1, "intercept": c.intercept,
                    "logit": c.logit, "se": _num(c.se), "p": _num(c.p_value),
                    "odds_ratio": c.odds_ratio}

        return {
            "covariate": self.covariate,
            "outcome": self.outcome,
            "reference_class": self.reference_class + 1,
            "error_matrix": self.error_matrix.q.tolist(),
            "fixed_logits": self.error_matrix.fixed_logits.tolist(),
            "covariate_logits": [contrast(c) for c in self.covariate_logits],
            "all_contrasts": [contrast(c) for c in self.contrasts],
            "class_means_at_covariate_0": self.class_means.tolist(),
            "class_means_se": [_num(s) for s in self.class_means_se],
            "class_means_at_covariate_mean": self.class_means_at_covariate_mean.tolist(),
            "covariate_mean": self.covariate_mean,
            "direct_effect": {"estimate": self.direct_effect, "se": _num(self.direct_effect_se),
                              "p": _num(self.direct_effect_p)},
            "residual_variance": self.residual_variance,
            "wald": {"statistic": _num(self.wald[0]), "df": self.wald[1], "p": _num(self.wald[2])},
            "pairwise": [{"class": a + 1, "versus": b + 1, "mean_difference": d, "p": _num(p)}
                         for a, b, d, p in self.pairwise if a < b],
            "loglik": self.loglik,
            "iterations": self.iterations,
            "converged": self.converged,
            "hessian_ok": self.hessian_ok,
            "separation_flag": self.separation,
        }


def _num(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


def fit_threestep(ds, fit, covariate: str, outcome: str, seed: int = 0, n_starts: int = 1,
                  max_iter: int = 5000, tol: float = 1e-10, posteriors=None) -> ThreeStepResult:
    """Step 2 and step 3 given a step-1 fit on ``ds``.

    The reference class of the multinomial logit is the largest class by
    estimated proportion.  The EM starts from the step-1 posteriors; extra
    starts (``n_starts`` > 1) draw random posterior rows from ``seed``.
    """
    post = np.asarray(fit.posteriors if posteriors is None else posteriors, dtype=float)
    if covariate not in ds.covariates:
        raise KeyError(f"unknown covariate {covariate!r}")
    if outcome not in ds.outcomes:
        raise KeyError(f"unknown outcome {outcome!r}")
    if post.shape[0] != ds.n:
        raise ValueError("posteriors do not match the dataset")
    x = ds.covariates[covariate].astype(float)
    y = ds.outcomes[outcome].astype(float)
    n, k = post.shape
    if k < 2:
        raise ValueError("three-step analysis needs at least two classes")
    if not getattr(fit, "converged", True):
        logger.warning("step-1 fit did not converge")

    labels = modal_assignment(post)
    cem = classification_error_matrix(post, labels)
    log_meas_w = cem.log_measurement[:, labels].T  # (N, K): log P(W_i | C = k)
    ref = int(np.argmax(fit.params.pi))
    use_x = bool(np.ptp(x) > 0)
    layout = _Layout(k, ref, use_x)
    design = np.column_stack([np.ones(n), x])[:, :layout.p]
    args = (layout, design, y, x, log_meas_w)

    rng = np.random.default_rng(seed)
    inits = [post]
    for _ in range(max(n_starts, 1) - 1):
        r = rng.random((n, k))
        inits.append(r / r.sum(axis=1, keepdims=True))

    best = None
    for h0 in inits:
        run = _em(h0, layout, design, y, x, log_meas_w, max_iter, tol)
        if best is None or run[1] > best[1]:
            best = run
    theta, ll, iterations, converged, trace = best
    gamma, means, beta, sigma2 = layout.unpack(theta)

    hess = numerical_hessian(lambda t: _loglik(t, *args), theta)
    info = -hess
    try:
        np.linalg.cholesky(info)
        cov = np.linalg.inv(info)
        hessian_ok = True
    except np.linalg.LinAlgError:
        logger.warning("observed information is not positive definite; using pseudo-inverse")
        cov = np.linalg.pinv(info)
        hessian_ok = False
    ix = layout.index()
    mi = ix["means"]
    mcov = cov[np.ix_(mi, mi)]
    mse = np.sqrt(np.clip(np.diag(mcov), 0, None))

    contrasts = []
    for a in range(k):
        for b in range(k):
            if a == b:
                continue
            contrasts.append(_contrast(a, b, gamma, cov, ix, use_x))
    covariate_logits = [c for c in contrasts if c.reference == ref]
    separation = bool(np.any(np.abs(gamma) > SEPARATION_LIMIT))
    if separation:
        logger.warning("logit coefficients exceed %g: possible separation", SEPARATION_LIMIT)

    if use_x:
        bi = ix["beta"]
        beta_se = float(math.sqrt(max(cov[bi, bi], 0.0)))
        beta_p = float(2 * stats.norm.sf(abs(beta) / beta_se)) if beta_se > 0 else math.nan
    else:
        beta_se, beta_p = math.nan, math.nan
    xbar = float(x.mean())
    try:
        wald = wald_omnibus(means, mcov)
    except np.linalg.LinAlgError:
        wald = (math.nan, k - 1, math.nan)
    return ThreeStepResult(
        covariate=covariate,
        outcome=outcome,
        reference_class=ref,
        error_matrix=cem,
        covariate_logits=covariate_logits,
        contrasts=contrasts,
        class_means=means.copy(),
        class_means_se=mse,
        class_means_at_covariate_mean=means + beta * xbar,
        covariate_mean=xbar,
        means_covariance=mcov,
        direct_effect=beta,
        direct_effect_se=beta_se,
        direct_effect_p=beta_p,
        residual_variance=sigma2,
        wald=wald,
        pairwise=pairwise_differences(means, mcov),
        loglik=ll,
        iterations=iterations,
        converged=converged,
        hessian_ok=hessian_ok,
        separation=separation,
        trace=tuple(trace),
    )


def _contrast(a, b, gamma, cov, ix, use_x) -> LogitContrast:
    intercept = float(gamma[a, 0] - gamma[b, 0])
    logit = float(gamma[a, 1] - gamma[b, 1]) if use_x else 0.0
    if not use_x:
        return LogitContrast(a, b, intercept, 0.0, math.nan, math.nan)
    grad = np.zeros(cov.shape[0])
    if a in ix["gamma"]:
        grad[ix["gamma"][a][1]] += 1.0
    if b in ix["gamma"]:
        grad[ix["gamma"][b][1]] -= 1.0
    var = float(grad @ cov @ grad)
    se = math.sqrt(var) if var > 0 else math.nan
    p = float(2 * stats.norm.sf(abs(logit) / se)) if se == se else math.nan
    return LogitContrast(a, b, intercept, logit, se, p)


def _em(h, layout, design, y, x, log_meas_w, max_iter, tol):
    k = layout.k
    gamma = np.zeros((k, 2))
    trace = []
    theta = None
    converged = False
    it = 0
    for it in range(max_iter + 1):
        g = _weighted_mlogit(design, h, layout.ref, gamma[:, :layout.p])
        gamma = np.zeros((k, 2))
        gamma[:, :layout.p] = g
        means, beta, sigma2 = _outcome_wls(y, x, h, layout.use_x)
        sigma2 = max(sigma2, 1e-12)
        theta = layout.pack(gamma, means, beta, sigma2)
        lj = _joint_log(theta, layout, design, y, x, log_meas_w)
        norm = logsumexp(lj, axis=1, keepdims=True)
        ll = float(norm.sum())
        if trace and ll - trace[-1] < tol:
            trace.append(ll)
            converged = True
            break
        trace.append(ll)
        h = np.exp(lj - norm)
    return theta, trace[-1], it, converged, trace
