"""Variational EM with an MM-minorised E-step (mean-field over community labels).

Per iteration:

* E-step: the lower bound is minorised by a function that separates over
  nodes into concave quadratics ``sum_k A_ik g_k^2 + B_ik g_k``; each node's
  responsibilities solve a small QP on the probability simplex.
* M-step: ``pi`` is the column mean of the responsibilities; ``theta`` is
  updated by Newton directions with Armijo backtracking, so the lower bound
  never decreases.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .models import ModelSpec, Params, block_grad_hess, block_loglik, category_logprob, soft_block_table
from .netseries import NetworkSeries

log = logging.getLogger(__name__)

ARMIJO_SLOPE = 1e-4
GRAD_TOL = 1e-8
ASCENT_TOL = 1e-8
QP_TOL = 1e-12
ENTROPY_MODES = ("once", "per_transition")


class ConvergenceError(RuntimeError):
    pass


class AscentError(AssertionError):
    pass


@dataclass(frozen=True)
class FitConfig:
    max_iter: int = 500
    rel_tol: float = 1e-6
    restarts: int = 10
    seed: int = 0
    gamma_floor: float = 1e-10
    newton_max_inner: int = 50
    # weight of the prior/entropy term: "once" or "per_transition" (times T)
    entropy: str = "once"
    # raise AscentError whenever the lower bound drops by more than 1e-8
    check_ascent: bool = False

    def __post_init__(self):
        if self.max_iter < 1 or self.restarts < 1 or self.newton_max_inner < 1:
            raise ValueError("max_iter, restarts and newton_max_inner must be positive")
        if not 0 < self.rel_tol < 1:
            raise ValueError("rel_tol must lie in (0, 1)")
        if not 0 < self.gamma_floor < 1e-2:
            raise ValueError("gamma_floor must be a small positive number")
        if self.entropy not in ENTROPY_MODES:
            raise ValueError(f"entropy must be one of {ENTROPY_MODES}")


@dataclass
class FitResult:
    spec: ModelSpec
    params: Params
    gamma: np.ndarray
    labels: np.ndarray
    lb_trajectory: list[float]
    converged: bool
    iterations: int
    restart_index: int
    seed: int
    restart_lbs: list[float] = field(default_factory=list)
    failed_restarts: list[tuple[int, str]] = field(default_factory=list)
    entropy: str = "once"
    # over every restart: EM steps checked and steps where the bound fell by more than 1e-8
    ascent_checks: int = 0
    ascent_violations: int = 0

    @property
    def lower_bound(self) -> float:
        return self.lb_trajectory[-1]

    def to_dict(self) -> dict:
        return {
            "model": self.spec.kind,
            "K": self.spec.K,
            "pi": self.params.pi.tolist(),
            "theta": self.params.theta.tolist(),
            "gamma": self.gamma.tolist(),
            "labels": [int(v) for v in self.labels],
            "lb_trajectory": [float(v) for v in self.lb_trajectory],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "seed": int(self.seed),
            "restart_index": int(self.restart_index),
            "restart_lbs": [float(v) for v in self.restart_lbs],
            "failed_restarts": [[int(r), msg] for r, msg in self.failed_restarts],
            "entropy": self.entropy,
            "ascent_checks": int(self.ascent_checks),
            "ascent_violations": int(self.ascent_violations),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        spec = ModelSpec(d["model"], d["K"])
        return cls(
            spec=spec,
            params=Params(d["pi"], np.asarray(d["theta"], dtype=float).reshape(spec.K, spec.p)),
            gamma=np.asarray(d["gamma"], dtype=float),
            labels=np.asarray(d["labels"], dtype=int),
            lb_trajectory=list(d["lb_trajectory"]),
            converged=bool(d["converged"]),
            iterations=int(d["iterations"]),
            restart_index=int(d.get("restart_index", 0)),
            seed=int(d["seed"]),
            restart_lbs=list(d.get("restart_lbs", [])),
            failed_restarts=[tuple(x) for x in d.get("failed_restarts", [])],
            entropy=d.get("entropy", "once"),
            ascent_checks=int(d.get("ascent_checks", 0)),
            ascent_violations=int(d.get("ascent_violations", 0)),
        )


def check_gamma(gamma, n: int, K: int, floor: float = 0.0) -> np.ndarray:
    G = np.asarray(gamma, dtype=float)
    if G.shape != (n, K):
        raise ValueError(f"gamma must have shape {(n, K)}, got {G.shape}")
    if np.any(G < floor * (1 - 1e-9)):
        raise ValueError(f"gamma entries must be >= {floor}")
    if np.max(np.abs(G.sum(axis=1) - 1.0)) > 1e-10:
        raise ValueError("gamma rows must sum to 1")
    return G


def apply_floor(G: np.ndarray, floor: float) -> np.ndarray:
    """Map simplex rows to ``floor + (1 - K*floor) * row`` so every entry is >= floor."""
    K = G.shape[-1]
    if K == 1:
        return np.ones_like(G)
    G = G / G.sum(axis=-1, keepdims=True)
    return floor + (1.0 - K * floor) * G


def entropy_weight(series: NetworkSeries, entropy: str = "once") -> float:
    if entropy not in ENTROPY_MODES:
        raise ValueError(f"entropy must be one of {ENTROPY_MODES}")
    return float(series.T) if entropy == "per_transition" else 1.0


def entropy_term(weight: float, pi: np.ndarray, G: np.ndarray) -> float:
    return float(weight * np.sum(G * (np.log(pi)[None, :] - np.log(G))))


def lower_bound(series: NetworkSeries, spec: ModelSpec, params: Params, gamma, entropy: str = "once") -> float:
    """Mean-field lower bound on the log-likelihood.

    ``entropy="once"`` bounds the likelihood of a membership vector shared by
    all transitions; ``"per_transition"`` repeats the prior/entropy term for
    every transition (memberships redrawn at each step).
    """
    G = check_gamma(gamma, series.n, spec.K)
    M = soft_block_table(series, G)
    w = entropy_weight(series, entropy)
    return block_loglik(spec, params.theta, M) + entropy_term(w, params.pi, G)


def minorizer_coefficients(
    series: NetworkSeries, spec: ModelSpec, params: Params, gamma, floor: float = 1e-10, entropy: str = "once"
):
    """Coefficients ``(A, B)``, each n x K, of the separable minoriser at ``gamma``."""
    G = check_gamma(gamma, series.n, spec.K, floor)
    if np.any(G <= 0):
        raise ValueError("gamma must be strictly positive")
    L = category_logprob(spec, params.theta)
    N = series.category_counts()
    S = np.sum((N @ G) @ L, axis=0)
    w = entropy_weight(series, entropy)
    A = S / (2.0 * G) - w / G
    B = w * (np.log(params.pi)[None, :] - np.log(G) + 1.0)
    return A, B


def q_value(A, B, gamma) -> float:
    G = np.asarray(gamma)
    return float(np.sum(A * G**2 + B * G))


def _simplex_qp(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Row-wise maximiser of ``sum_k A_k g_k^2 + B_k g_k`` over the simplex (A < 0).

    KKT: ``g_k(nu) = clip((nu - B_k) / (2 A_k), 0, 1)``. The coverage
    ``s(nu) = sum_k g_k(nu)`` is nonincreasing and piecewise linear with kinks
    at ``B_k`` and ``B_k + 2 A_k``, so bisecting over the sorted kinks finds
    the segment where ``s`` crosses 1 and the multiplier follows exactly by
    linear interpolation.
    """
    A2 = 2.0 * A
    m, K = A.shape
    kinks = np.sort(np.concatenate([B, B + A2], axis=1), axis=1)  # (m, 2K)

    def coverage(nu):
        return np.clip((nu[..., None] - B[:, None, :]) / A2[:, None, :], 0.0, 1.0).sum(axis=-1)

    s = coverage(kinks)  # (m, 2K), nonincreasing along axis 1; s[:, 0] == K, s[:, -1] == 0
    lo = np.zeros(m, dtype=int)
    hi = np.full(m, 2 * K - 1)
    rows = np.arange(m)
    while np.any(hi - lo > 1):
        mid = (lo + hi) // 2
        above = s[rows, mid] >= 1.0
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    x0, x1 = kinks[rows, lo], kinks[rows, hi]
    s0, s1 = s[rows, lo], s[rows, hi]
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(s0 > s1, (s0 - 1.0) / (s0 - s1), 0.0)
    nu = x0 + frac * (x1 - x0)
    g = np.clip((nu[:, None] - B) / A2, 0.0, 1.0)
    tot = g.sum(axis=1, keepdims=True)
    bad = np.abs(tot[:, 0] - 1.0) > QP_TOL
    if np.any(bad):
        # degenerate flat segment: fall back to bisection on nu itself
        g[bad] = _bisect_qp(A[bad], B[bad])
        tot = g.sum(axis=1, keepdims=True)
    return g / tot


def _bisect_qp(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A2 = 2.0 * A
    lo = np.min(B + A2, axis=1)
    hi = np.max(B, axis=1)
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        over = np.clip((mid[:, None] - B) / A2, 0.0, 1.0).sum(axis=1) >= 1.0
        lo = np.where(over, mid, lo)
        hi = np.where(over, hi, mid)
        if np.all((hi - lo) <= QP_TOL) or np.all(mid == lo) or np.all(mid == hi):
            break
    nu = 0.5 * (lo + hi)
    return np.clip((nu[:, None] - B) / A2, 0.0, 1.0)


def estep_node_qp(A, B, floor: float = 0.0) -> np.ndarray:
    """Maximise ``sum_k A_k g_k^2 + B_k g_k`` over the probability simplex."""
    A = np.asarray(A, dtype=float).reshape(1, -1)
    B = np.asarray(B, dtype=float).reshape(1, -1)
    if A.shape != B.shape:
        raise ValueError("A and B must have equal length")
    if np.any(A >= 0):
        raise ValueError("all quadratic coefficients must be negative")
    g = _simplex_qp(A, B)
    if floor > 0:
        g = apply_floor(g, floor)
    return g[0]


def estep(
    series: NetworkSeries, spec: ModelSpec, params: Params, gamma, floor: float = 1e-10, entropy: str = "once"
) -> np.ndarray:
    """One MM step on the responsibilities; never decreases the minoriser."""
    G = np.asarray(gamma, dtype=float)
    if spec.K == 1:
        return np.ones_like(G)
    A, B = minorizer_coefficients(series, spec, params, G, floor, entropy)
    new = apply_floor(_simplex_qp(A, B), floor)
    # keep rows whose numerical solution is not an improvement
    q_new = np.sum(A * new**2 + B * new, axis=1)
    q_old = np.sum(A * G**2 + B * G, axis=1)
    keep = q_new < q_old
    if np.any(keep):
        new[keep] = G[keep]
    return new


def mstep_pi(gamma) -> np.ndarray:
    G = np.asarray(gamma, dtype=float)
    pi = G.mean(axis=0)
    return pi / pi.sum()


def lb_grad_hess_theta(series: NetworkSeries, spec: ModelSpec, theta, gamma):
    """Gradient (length K*p) and Hessian of the lower bound in theta, Gamma fixed.

    Stacking order is column-major: ``theta[:, 0]`` then ``theta[:, 1]``.
    """
    M = soft_block_table(series, np.asarray(gamma, dtype=float))
    return block_grad_hess(spec, theta, M)


def newton_direction(grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    """Solve ``(-H) h = g``; on failure retry with ridge 1e-8, 1e-7, ..., 1e-2."""
    negH = -hess
    ridge = 0.0
    while True:
        try:
            C = np.linalg.cholesky(negH + ridge * np.eye(len(grad)))
            y = np.linalg.solve(C, grad)
            h = np.linalg.solve(C.T, y)
            if np.all(np.isfinite(h)):
                return h
        except np.linalg.LinAlgError:
            pass
        ridge = 1e-8 if ridge == 0.0 else ridge * 10
        if ridge > 1e-2 * (1 + 1e-9):
            raise ConvergenceError(
                f"Hessian not negative definite even with ridge 1e-2 (eigenvalues {np.linalg.eigvalsh(hess)})"
            )


def newton_ascent(objective, grad_hess, x0, max_iter: int, grad_tol: float = GRAD_TOL, rel_tol: float = 0.0, on_step=None):
    """Maximise a concave objective by line-searched Newton steps.

    Returns ``(x, f, grad_inf_norm, iterations)``. Each accepted step satisfies
    the Armijo condition, so ``f`` is nondecreasing.
    """
    x = np.asarray(x0, dtype=float).copy()
    f = objective(x)
    if not np.isfinite(f):
        raise ConvergenceError("objective is not finite at the starting point")
    gnorm = np.inf
    it = 0
    noise_steps = 0
    for it in range(1, max_iter + 1):
        g, H = grad_hess(x)
        gnorm = float(np.max(np.abs(g)))
        if gnorm < grad_tol:
            it -= 1
            break
        h = newton_direction(g, H)
        slope = float(g @ h)
        noise = 64 * np.finfo(float).eps * (abs(f) + 1.0)
        if slope <= noise:
            # predicted gain is below the resolution of f: Armijo cannot
            # discriminate, so take the full Newton step unless f visibly drops
            noise_steps += 1
            if noise_steps > 3:
                break
            x_try = x + h
            f_try = objective(x_try)
            if not (np.isfinite(f_try) and f_try >= f - noise):
                break
        else:
            noise_steps = 0
            lam = 1.0
            while True:
                x_try = x + lam * h
                f_try = objective(x_try)
                if np.isfinite(f_try) and f_try >= f + ARMIJO_SLOPE * lam * slope:
                    break
                lam *= 0.5
                if lam < 1e-12:
                    x_try = None
                    break
            if x_try is None:
                break
        change = abs(f_try - f) / (abs(f) + 1.0)
        x, f = x_try, f_try
        if on_step is not None:
            on_step(x, f)
        if change < rel_tol:
            break
    else:
        g, _ = grad_hess(x)
        gnorm = float(np.max(np.abs(g)))
    return x, f, gnorm, it


def mstep_theta(series: NetworkSeries, spec: ModelSpec, gamma, theta_init, config: FitConfig | None = None, _M=None):
    """Newton/Armijo update of theta with the responsibilities held fixed."""
    config = config or FitConfig()
    M = soft_block_table(series, np.asarray(gamma, dtype=float)) if _M is None else _M
    K, p = spec.K, spec.p

    def unpack(x):
        return x.reshape(p, K).T

    def obj(x):
        return block_loglik(spec, unpack(x), M)

    def gh(x):
        return block_grad_hess(spec, unpack(x), M)

    x0 = np.asarray(theta_init, dtype=float).reshape(K, p).T.reshape(-1)
    x, _, _, _ = newton_ascent(obj, gh, x0, config.newton_max_inner, GRAD_TOL)
    return unpack(x).copy()


def assign_labels(gamma) -> np.ndarray:
    """1-based argmax per row; ties go to the smallest index."""
    return np.argmax(np.asarray(gamma), axis=1) + 1


def canonical_order(pi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Column order: descending pi, ties broken by ascending first theta column."""
    return np.lexsort((theta[:, 0], -np.round(pi, 12)))


def run_em(series: NetworkSeries, spec: ModelSpec, gamma0, config: FitConfig):
    """EM from a given initial Gamma; returns (params, gamma, trajectory, converged, iterations)."""
    floor = config.gamma_floor
    G = apply_floor(np.asarray(gamma0, dtype=float), floor)
    pi = mstep_pi(G)
    theta = mstep_theta(series, spec, G, np.zeros((spec.K, spec.p)), config)
    params = Params(pi, theta)
    lb = lower_bound(series, spec, params, G, config.entropy)
    traj = [lb]
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        G = estep(series, spec, params, G, floor, config.entropy)
        pi = mstep_pi(G)
        theta = mstep_theta(series, spec, G, params.theta, config)
        params = Params(pi, theta)
        lb_new = lower_bound(series, spec, params, G, config.entropy)
        if not np.isfinite(lb_new):
            raise ConvergenceError("lower bound became non-finite")
        if config.check_ascent and lb_new < lb - ASCENT_TOL:
            raise AscentError(f"lower bound decreased at iteration {it}: {lb} -> {lb_new}")
        traj.append(lb_new)
        change = abs(lb_new - lb) / (abs(lb) + 1.0)
        lb = lb_new
        if change < config.rel_tol:
            converged = True
            break
    return params, G, traj, converged, it


def restart_rng(seed: int, restart: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(restart,)))


def initial_gamma(rng: np.random.Generator, n: int, K: int) -> np.ndarray:
    G = rng.uniform(size=(n, K))
    return G / G.sum(axis=1, keepdims=True)


def fit(series: NetworkSeries, spec: ModelSpec, K: int | None = None, config: FitConfig | None = None) -> FitResult:
    """Fit a K-community mixture with random multistart; the best final bound wins."""
    config = config or FitConfig()
    if K is not None and K != spec.K:
        spec = spec.with_K(K)
    if series.n < 2:
        raise ValueError("need at least two nodes")
    best = None
    lbs: list[float] = []
    failed: list[tuple[int, str]] = []
    checks = violations = 0
    for r in range(config.restarts):
        G0 = initial_gamma(restart_rng(config.seed, r), series.n, spec.K)
        try:
            out = run_em(series, spec, G0, config)
        except (ConvergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
            log.warning("restart %d failed: %s", r, exc)
            failed.append((r, str(exc)))
            lbs.append(float("nan"))
            continue
        lbs.append(out[2][-1])
        steps = np.diff(out[2])
        checks += len(steps)
        violations += int(np.sum(steps < -ASCENT_TOL))
        if best is None or out[2][-1] > best[1][2][-1]:
            best = (r, out)
    if best is None:
        raise ConvergenceError(f"all {config.restarts} restarts failed: {failed}")
    r, (params, G, traj, converged, iters) = best
    order = canonical_order(params.pi, params.theta)
    params = Params(params.pi[order], params.theta[order])
    G = G[:, order]
    return FitResult(
        spec=spec,
        params=params,
        gamma=G,
        labels=assign_labels(G),
        lb_trajectory=traj,
        converged=converged,
        iterations=iters,
        restart_index=r,
        seed=config.seed,
        restart_lbs=lbs,
        failed_restarts=failed,
        entropy=config.entropy,
        ascent_checks=checks,
        ascent_violations=violations,
    )
