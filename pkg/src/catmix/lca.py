"""Latent class analysis: a finite mixture of independent Bernoulli indicators.

Every likelihood evaluation runs over collapsed response patterns.  EM runs
are vectorized across random starts: all arrays carry a leading start axis,
and each start freezes independently once it converges, degenerates, or hits
its iteration cap.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .dataset import CategoricalDataset, PatternTable, collapse_patterns

logger = logging.getLogger(__name__)

RHO_EPS = 1e-6
MIN_CLASS_MASS = 1e-10
REPLICATION_TOL = 1e-4


class DegenerateClassError(ArithmeticError):
    """A latent class lost all posterior mass."""


class EstimationError(RuntimeError):
    """No usable solution from any start."""


@dataclass(frozen=True, eq=False)
class LcaParams:
    """Class proportions ``pi`` (K,) and endorsement probabilities ``rho`` (K, J)."""

    pi: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        pi = np.atleast_1d(np.asarray(self.pi, dtype=float))
        rho = np.asarray(self.rho, dtype=float)
        if rho.ndim == 1:
            rho = rho[:, None] if pi.size > 1 else rho[None, :]
        if pi.ndim != 1 or rho.ndim != 2 or rho.shape[0] != pi.size:
            raise ValueError(f"shape mismatch: pi {pi.shape}, rho {rho.shape}")
        if np.any(pi < 0) or np.any(pi > 1) or abs(pi.sum() - 1.0) > 1e-10:
            raise ValueError("pi must be a probability vector")
        tol = 1e-12
        if np.any(rho < RHO_EPS - tol) or np.any(rho > 1 - RHO_EPS + tol):
            raise ValueError(f"rho must lie in [{RHO_EPS}, 1 - {RHO_EPS}]")
        pi.setflags(write=False)
        rho.setflags(write=False)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def clamped(cls, pi, rho) -> "LcaParams":
        pi = np.asarray(pi, dtype=float)
        return cls(pi / pi.sum(), np.clip(rho, RHO_EPS, 1 - RHO_EPS))

    @property
    def n_classes(self) -> int:
        return self.pi.size

    @property
    def n_indicators(self) -> int:
        return self.rho.shape[1]

    def permute(self, order) -> "LcaParams":
        order = np.asarray(order)
        return LcaParams(self.pi[order], self.rho[order])

    def to_dict(self) -> dict:
        return {"pi": self.pi.tolist(), "rho": self.rho.tolist()}

    @classmethod
    def from_dict(cls, d) -> "LcaParams":
        return cls(np.asarray(d["pi"]), np.asarray(d["rho"]))


@dataclass(frozen=True, eq=False)
class LcaFit:
    params: LcaParams
    loglik: float
    posteriors: np.ndarray
    iterations: int
    converged: bool
    trace: tuple[float, ...] = field(default=(), repr=False)
    seed: int | None = None

    @property
    def n_classes(self) -> int:
        return self.params.n_classes

    @property
    def npar(self) -> int:
        return n_parameters(self.params.n_classes, self.params.n_indicators)


@dataclass(frozen=True, eq=False)
class MultistartReport:
    n_classes: int
    n_initial: int
    n_final: int
    n_converged: int
    n_replicated: int
    pct_converged: float
    pct_replicated: float
    best_fit: LcaFit
    ll_values: tuple[float, ...]
    stage1_iterations: int

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "n_initial": self.n_initial,
            "n_final": self.n_final,
            "stage1_iterations": self.stage1_iterations,
            "n_converged": self.n_converged,
            "n_replicated": self.n_replicated,
            "pct_converged": self.pct_converged,
            "pct_replicated": self.pct_replicated,
            "best_loglik": self.best_fit.loglik,
            "ll_values": list(self.ll_values),
        }


def n_parameters(n_classes: int, n_indicators: int) -> int:
    return n_classes - 1 + n_classes * n_indicators


def _patterns(ds) -> PatternTable:
    if isinstance(ds, PatternTable):
        return ds
    return collapse_patterns(ds)


def _check_dims(params: LcaParams, u: np.ndarray):
    if u.shape[1] != params.n_indicators:
        raise ValueError(f"data has {u.shape[1]} indicators, params have {params.n_indicators}")


def class_log_density(params: LcaParams, u) -> np.ndarray:
    """(N, K) matrix of log P(u_i | class k)."""
    u = np.asarray(u, dtype=float)
    return u @ np.log(params.rho).T + (1 - u) @ np.log1p(-params.rho).T


def log_likelihood(params: LcaParams, ds) -> float:
    """Exact mixture log-likelihood, summed over weighted distinct patterns."""
    pt = _patterns(ds)
    _check_dims(params, pt.patterns)
    with np.errstate(divide="ignore"):
        log_pi = np.log(params.pi)
    lj = class_log_density(params, pt.patterns) + log_pi
    return float(pt.weights @ logsumexp(lj, axis=1))


def e_step(params: LcaParams, ds) -> np.ndarray:
    """Posterior class probabilities, (N, K); normalized in log space."""
    u = ds.indicators if isinstance(ds, CategoricalDataset) else np.asarray(ds)
    _check_dims(params, u)
    with np.errstate(divide="ignore"):
        lj = class_log_density(params, u) + np.log(params.pi)
    post = np.exp(lj - logsumexp(lj, axis=1, keepdims=True))
    return post / post.sum(axis=1, keepdims=True)


def m_step(posteriors, ds, weights=None, allow_empty: bool = False) -> LcaParams:
    """Weighted-mean updates of pi and rho, rho clamped to [eps, 1 - eps].

    A class with (near) zero posterior mass raises :class:`DegenerateClassError`
    unless ``allow_empty``; then it gets pi = 0 and an uninformative rho = 0.5.
    """
    post = np.asarray(posteriors, dtype=float)
    u = ds.indicators if isinstance(ds, CategoricalDataset) else np.asarray(ds)
    u = u.astype(float)
    w = np.ones(u.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    wp = post * w[:, None]
    mass = wp.sum(axis=0)
    empty = mass <= MIN_CLASS_MASS * w.sum()
    if empty.any() and not allow_empty:
        raise DegenerateClassError(f"classes {np.flatnonzero(empty).tolist()} have no posterior mass")
    pi = np.where(empty, 0.0, mass) / mass[~empty].sum()
    rho = (wp.T @ u) / np.where(empty, 1.0, mass)[:, None]
    rho[empty] = 0.5
    return LcaParams(pi / pi.sum(), np.clip(rho, RHO_EPS, 1 - RHO_EPS))


def random_start(pt: PatternTable, n_classes: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random normalized-uniform posterior rows per observation, then one M-step."""
    n = int(pt.weights.sum())
    post = rng.random((n, n_classes))
    post /= post.sum(axis=1, keepdims=True)
    # aggregate per-observation rows onto their patterns
    inv = pt.inverse if pt.inverse.size == n else np.repeat(np.arange(pt.n_patterns), pt.weights)
    agg = np.zeros((pt.n_patterns, n_classes))
    np.add.at(agg, inv, post)
    mass = agg.sum(axis=0)
    rho = (agg.T @ pt.patterns.astype(float)) / mass[:, None]
    return mass / mass.sum(), np.clip(rho, RHO_EPS, 1 - RHO_EPS)


@dataclass
class _BatchState:
    pi: np.ndarray  # (S, K)
    rho: np.ndarray  # (S, K, J)
    loglik: np.ndarray  # (S,)
    iterations: np.ndarray  # (S,)
    converged: np.ndarray  # (S,) bool
    degenerate: np.ndarray  # (S,) bool
    traces: list


class _EmMap:
    """One batched EM update on a pattern table.

    Calling it with (S, K) and (S, K, J) parameters returns the LL at the
    input, the updated parameters, and a flag for starts whose class mass
    vanished in the E-step.
    """

    def __init__(self, pt: PatternTable):
        self.u = pt.patterns.astype(float)
        self.ut = self.u.T.copy()
        self.vt = (1.0 - self.u).T.copy()
        self.w = pt.weights.astype(float)
        self.n = self.w.sum()

    def __call__(self, pi, rho):
        with np.errstate(divide="ignore"):
            lj = np.swapaxes(np.log(rho) @ self.ut + np.log1p(-rho) @ self.vt, 1, 2) + np.log(pi)[:, None, :]
        top = lj.max(axis=2, keepdims=True)
        norm = top + np.log(np.exp(lj - top).sum(axis=2, keepdims=True))
        ll = norm[..., 0] @ self.w
        post = np.exp(lj - norm) * self.w[None, :, None]  # (S, P, K)
        mass = post.sum(axis=1)
        bad = (mass <= MIN_CLASS_MASS * self.n).any(axis=1)
        safe = np.where(mass > 0, mass, 1.0)
        rho_new = np.clip(np.einsum("spk,pj->skj", post, self.u) / safe[..., None], RHO_EPS, 1 - RHO_EPS)
        return ll, mass / self.n, rho_new, bad


_MAX_BACKTRACK = 4


def _project(pi, rho):
    pi = np.clip(pi, 1e-300, None)
    return pi / pi.sum(axis=1, keepdims=True), np.clip(rho, RHO_EPS, 1 - RHO_EPS)


def _em_batch(pt: PatternTable, pi: np.ndarray, rho: np.ndarray, max_iter: int, tol: float,
              traces: list | None = None, accelerate: bool = False) -> _BatchState:
    """Run EM from S starting points at once.

    Each start stops when the gain between recorded LL values drops below
    ``tol`` or after ``max_iter`` EM updates.  With ``accelerate`` every
    recorded step is a squared-extrapolation cycle (SQUAREM): the
    extrapolated point is kept, after one stabilizing update, only if its LL
    is at least the cycle's starting LL, with the step halved toward plain EM
    up to a few times; otherwise two plain updates are taken.  Either way the
    recorded LL sequence stays non-decreasing.  ``iterations`` counts EM
    updates evaluated.  The returned parameters are the ones whose LL is
    reported.
    """
    pi = np.array(pi, dtype=float)
    rho = np.array(rho, dtype=float)
    s = pi.shape[0]
    em = _EmMap(pt)
    resumed = traces is not None
    traces = [list(t) for t in traces] if resumed else [[] for _ in range(s)]
    active = np.ones(s, dtype=bool)
    converged = np.zeros(s, dtype=bool)
    degenerate = np.zeros(s, dtype=bool)
    iterations = np.zeros(s, dtype=int)
    loglik = np.full(s, -np.inf)
    prev = np.full(s, -np.inf)

    for step in range(max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        ll, p1, r1, bad = em(pi[idx], rho[idx])
        loglik[idx] = ll
        if not (resumed and step == 0):
            # a resumed run re-evaluates the LL its trace already ends with
            for a, v in zip(idx, ll):
                traces[a].append(float(v))
        done = (ll - prev[idx]) < tol
        converged[idx[done]] = True
        done |= iterations[idx] >= max_iter
        prev[idx] = ll
        active[idx[done]] = False
        hit = ~done & bad
        if hit.any():
            degenerate[idx[hit]] = True
            active[idx[hit]] = False
            loglik[idx[hit]] = -np.inf
        go = ~done & ~bad
        tgt = idx[go]
        if tgt.size == 0:
            continue
        p1, r1 = p1[go], r1[go]
        if not accelerate:
            pi[tgt], rho[tgt] = p1, r1
            iterations[tgt] += 1
            continue
        p0, r0 = pi[tgt], rho[tgt]
        ll1, p2, r2, bad2 = em(p1, r1)
        dp, dr = p1 - p0, r1 - r0
        vp, vr = p2 - p1 - dp, r2 - r1 - dr
        rr = (dp ** 2).sum(axis=1) + (dr ** 2).sum(axis=(1, 2))
        vv = (vp ** 2).sum(axis=1) + (vr ** 2).sum(axis=(1, 2))
        alpha = np.minimum(-np.sqrt(rr / np.where(vv > 0, vv, np.inf)), -1.0)
        ll0 = ll[go]
        new_p = np.where(bad2[:, None], p1, p2)
        new_r = np.where(bad2[:, None, None], r1, r2)
        cost = np.full(tgt.size, 2)
        pending = ~bad2 & (alpha < -1.0)
        for _ in range(_MAX_BACKTRACK):
            if not pending.any():
                break
            a1 = alpha[pending][:, None]
            a2 = a1[:, :, None]
            pe, re = _project(p0[pending] - 2 * a1 * dp[pending] + a1 ** 2 * vp[pending],
                              r0[pending] - 2 * a2 * dr[pending] + a2 ** 2 * vr[pending])
            with np.errstate(invalid="ignore"):
                lle, p3, r3, bad3 = em(pe, re)
            ok = (lle >= ll0[pending]) & ~bad3
            hit = np.flatnonzero(pending)
            cost[hit] += 1
            win = hit[ok]
            new_p[win], new_r[win] = p3[ok], r3[ok]
            pending[win] = False
            alpha[hit] = (alpha[hit] - 1.0) / 2.0
            pending &= alpha < -1.0
        pi[tgt], rho[tgt] = new_p, new_r
        iterations[tgt] += cost
    return _BatchState(pi, rho, loglik, iterations, converged & ~degenerate, degenerate, traces)


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _make_fit(ds, pt, pi, rho, loglik, iterations, converged, trace, seed) -> LcaFit:
    params = LcaParams(pi / pi.sum(), rho)
    u = ds.indicators if isinstance(ds, CategoricalDataset) else pt.expand()
    return LcaFit(params, float(loglik), e_step(params, u), int(iterations), bool(converged),
                  tuple(trace), seed)


def fit_em(ds, n_classes: int, seed: int = 0, max_iter: int = 500, tol: float = 1e-6,
           init: LcaParams | None = None, accelerate: bool = False) -> LcaFit:
    """Single EM run from a random start (or from ``init``).

    Non-convergence is flagged on the result; a class collapsing to zero mass
    raises :class:`DegenerateClassError`.
    """
    pt = _patterns(ds)
    n = int(pt.weights.sum())
    if not 1 <= n_classes <= n:
        raise ValueError(f"need 1 <= K <= N, got K={n_classes}, N={n}")
    if init is None:
        pi0, rho0 = random_start(pt, n_classes, np.random.default_rng(seed))
    else:
        _check_dims(init, pt.patterns)
        pi0, rho0 = init.pi, init.rho
    st = _em_batch(pt, pi0[None], rho0[None], max_iter, tol, accelerate=accelerate)
    if st.degenerate[0]:
        raise DegenerateClassError(f"a class emptied during EM (seed {seed})")
    return _make_fit(ds, pt, st.pi[0], st.rho[0], st.loglik[0], st.iterations[0],
                     st.converged[0], st.traces[0], seed)


def fit_multistart(ds, n_classes: int, n_initial: int = 200, n_final: int = 100, master_seed: int = 0,
                   stage1_iter: int = 20, max_iter: int = 500, tol: float = 1e-6,
                   accelerate: bool = True, quiet: bool = False) -> MultistartReport:
    """Two-stage random-start EM.

    Stage 1 runs ``n_initial`` random starts for ``stage1_iter`` iterations; the
    ``n_final`` best by LL are then iterated to convergence.  Percent converged
    is out of ``n_final``; percent replicated is out of the converged runs and
    counts those within ``REPLICATION_TOL`` of the best LL.  Stage 2 uses
    extrapolated EM steps unless ``accelerate`` is off.  ``quiet`` demotes
    the no-convergence warning to debug level (used inside bootstrap loops).
    """
    if not 1 <= n_final <= n_initial:
        raise ValueError("need 1 <= n_final <= n_initial")
    pt = _patterns(ds)
    n = int(pt.weights.sum())
    if not 1 <= n_classes <= n:
        raise ValueError(f"need 1 <= K <= N, got K={n_classes}, N={n}")
    seeds = [_seed_int(ss) for ss in np.random.SeedSequence(master_seed).spawn(n_initial)]
    starts = [random_start(pt, n_classes, np.random.default_rng(s)) for s in seeds]
    pi0 = np.stack([p for p, _ in starts])
    rho0 = np.stack([r for _, r in starts])

    st1 = _em_batch(pt, pi0, rho0, stage1_iter, tol)
    ll1 = np.where(st1.degenerate, -np.inf, st1.loglik)
    order = np.lexsort((np.arange(n_initial), -ll1))[:n_final]
    order = order[np.isfinite(ll1[order])]
    if order.size == 0:
        raise EstimationError(f"K={n_classes}: all {n_initial} starts degenerate in stage 1")
    order = np.sort(order)

    st2 = _em_batch(pt, st1.pi[order], st1.rho[order], max_iter, tol,
                    traces=[st1.traces[i] for i in order], accelerate=accelerate)
    ll2 = np.where(st2.degenerate, -np.inf, st2.loglik)
    usable = np.isfinite(ll2)
    if not usable.any():
        raise EstimationError(f"K={n_classes}: all final-stage runs degenerate")
    conv = st2.converged
    pool = conv if conv.any() else usable
    if not conv.any():
        logger.log(logging.DEBUG if quiet else logging.WARNING,
                   "K=%d: no final-stage run converged; reporting best unconverged run", n_classes)
    best = int(np.flatnonzero(pool)[np.argmax(ll2[pool])])
    n_conv = int(conv.sum())
    n_rep = int(np.sum(conv & (np.abs(ll2 - ll2[best]) <= REPLICATION_TOL)))
    fit = _make_fit(ds, pt, st2.pi[best], st2.rho[best], ll2[best],
                    st1.iterations[order[best]] + st2.iterations[best], conv[best],
                    st2.traces[best], seeds[order[best]])
    return MultistartReport(
        n_classes=n_classes,
        n_initial=n_initial,
        n_final=n_final,
        n_converged=n_conv,
        n_replicated=n_rep,
        pct_converged=100.0 * n_conv / n_final,
        pct_replicated=100.0 * n_rep / n_conv if n_conv else 0.0,
        best_fit=fit,
        ll_values=tuple(float(v) for v in ll2),
        stage1_iterations=stage1_iter,
    )


def simulate(params: LcaParams, n: int, seed: int = 0,
             names=None) -> tuple[CategoricalDataset, np.ndarray]:
    """Draw class labels from ``pi``, then indicators from the class's ``rho`` row."""
    if n < 1:
        raise ValueError("N must be >= 1")
    rng = np.random.default_rng(seed)
    labels = rng.choice(params.n_classes, size=n, p=params.pi)
    u = (rng.random((n, params.n_indicators)) < params.rho[labels]).astype(np.int8)
    return CategoricalDataset.from_array(u, names), labels


def match_labels(reference: np.ndarray, estimate: np.ndarray) -> np.ndarray:
    """Permutation ``perm`` minimizing sum_k |ref_k - est_perm[k]| over rho rows."""
    from scipy.optimize import linear_sum_assignment

    cost = np.abs(np.asarray(reference)[:, None, :] - np.asarray(estimate)[None, :, :]).sum(axis=2)
    _, perm = linear_sum_assignment(cost)
    return perm
