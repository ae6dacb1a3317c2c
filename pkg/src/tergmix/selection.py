"""Choosing the number of communities: CL-BIC with sandwich complexity, modified ICL."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .models import ModelSpec, block_grad_hess, block_loglik, logistic_tables, sigmoid
from .netseries import NetworkSeries, check_labels, one_hot, transition_tallies
from .varem import FitConfig, FitResult, fit, newton_ascent

log = logging.getLogger(__name__)

THETA_BOUND = 15.0
MLE_MAX_ITER = 100
# iterate well past the reported tolerance so separated problems run out to the bound
MLE_GRAD_TOL = 1e-12


def _pack(theta, K: int, p: int) -> np.ndarray:
    return np.asarray(theta, dtype=float).reshape(K, p).T.reshape(-1)


def _unpack(x, K: int, p: int) -> np.ndarray:
    return np.asarray(x).reshape(p, K).T


def hard_block_table(series: NetworkSeries, z, K: int) -> np.ndarray:
    return transition_tallies(series, z, K).as_array()


def conditional_loglik(series: NetworkSeries, spec: ModelSpec, theta, z) -> float:
    """Log-likelihood of ``y_1..y_T`` given ``y_0`` and fixed hard labels."""
    z = check_labels(z, series.n, spec.K)
    return block_loglik(spec, theta, hard_block_table(series, z, spec.K))


@dataclass
class MLEResult:
    theta: np.ndarray
    diverged: bool
    grad_norm: float
    iterations: int


class _Diverged(Exception):
    pass


def conditional_mle(series: NetworkSeries, spec: ModelSpec, z) -> MLEResult:
    """Maximise :func:`conditional_loglik` over theta for fixed labels.

    Under separation the maximiser is at infinity; iterates are then clipped
    to ``|theta| <= 15`` and ``diverged`` is set.
    """
    z = check_labels(z, series.n, spec.K)
    occupied = np.bincount(z, minlength=spec.K + 1)[1:]
    if np.any(occupied == 0):
        raise ValueError(f"communities {np.flatnonzero(occupied == 0) + 1} have no members")
    K, p = spec.K, spec.p
    M = hard_block_table(series, z, K)

    def obj(x):
        return block_loglik(spec, _unpack(x, K, p), M)

    def gh(x):
        return block_grad_hess(spec, _unpack(x, K, p), M)

    def watch(x, f):
        if np.max(np.abs(x)) > THETA_BOUND:
            raise _Diverged(x)

    diverged = False
    try:
        x, _, gnorm, iters = newton_ascent(obj, gh, np.zeros(K * p), MLE_MAX_ITER, MLE_GRAD_TOL, on_step=watch)
    except _Diverged as exc:
        x = np.clip(exc.args[0], -THETA_BOUND, THETA_BOUND)
        gnorm = float(np.max(np.abs(gh(x)[0])))
        diverged, iters = True, -1
    if not diverged and gnorm >= 1e-8:
        log.warning("conditional MLE stopped with gradient norm %.3g", gnorm)
    return MLEResult(_unpack(x, K, p).copy(), diverged, gnorm, iters)


def per_transition_scores(series: NetworkSeries, spec: ModelSpec, theta, z) -> np.ndarray:
    """Score of the conditional log-likelihood contributed by each transition, shape (T, K*p)."""
    z = check_labels(z, series.n, spec.K)
    Z = one_hot(z, spec.K)
    codes = series.transition_codes()
    off = ~np.eye(series.n, dtype=bool)
    U = np.empty((series.T, spec.K * spec.p))
    for t in range(series.T):
        C = np.stack([((codes[t] == c) & off) for c in range(4)]).astype(float)
        M_t = 0.5 * (Z.T @ C @ Z)
        U[t] = block_grad_hess(spec, theta, M_t)[0]
    return U


@dataclass
class Complexity:
    d: float
    H: np.ndarray
    V: np.ndarray
    singular: bool


def within_block_information(spec: ModelSpec, theta, M: np.ndarray) -> np.ndarray:
    """Information matrix with within-block diagonal and cross-block off-diagonal entries.

    Diagonal ``(k, k)`` sums ``4 p (1 - p)`` over dyads inside community k
    only; off-diagonal ``(k, l)`` sums ``p (1 - p)`` over dyads between k and
    l. Unlike the full observed information, the diagonal omits the
    between-community dyads touching k.
    """
    K, p = spec.K, spec.p
    th = np.asarray(theta, dtype=float).reshape(K, p)
    H = np.zeros((K * p, K * p))
    for j, (_, Ntr) in enumerate(logistic_tables(spec, M)):
        x = th[:, j][:, None] + th[:, j][None, :]
        mu = sigmoid(x)
        w = Ntr * mu * (1.0 - mu)
        blk = 2.0 * w  # off-diagonal: both orientations of the unordered block
        np.fill_diagonal(blk, 4.0 * np.diag(w))
        sl = slice(j * K, (j + 1) * K)
        H[sl, sl] = blk
    return H


def clbic_complexity(series: NetworkSeries, spec: ModelSpec, theta, z, information: str = "within_block") -> Complexity:
    """``tr(H^-1 V)`` with V the sum of outer products of per-transition scores.

    ``information="within_block"`` uses :func:`within_block_information`;
    ``"observed"`` uses the full negative Hessian of the conditional
    log-likelihood. The two coincide for K = 1. A matrix that is not
    positive definite is inverted on its positive eigenspace and flagged.
    A parameter with zero information but a nonzero score variance (a
    community with no within-community dyads) has unbounded variance, so
    ``d`` is infinite.
    """
    theta = np.asarray(theta, dtype=float).reshape(spec.K, spec.p)
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    z = check_labels(z, series.n, spec.K)
    M = hard_block_table(series, z, spec.K)
    if information == "within_block":
        H = within_block_information(spec, theta, M)
    elif information == "observed":
        H = -block_grad_hess(spec, theta, M)[1]
    else:
        raise ValueError("information must be 'within_block' or 'observed'")
    U = per_transition_scores(series, spec, theta, z)
    V = U.T @ U
    if np.any((np.diag(H) == 0.0) & (np.diag(V) > 0.0)):
        return Complexity(math.inf, H, V, True)
    Hinv, singular = _positive_pinv(H)
    return Complexity(float(np.trace(Hinv @ V)), H, V, singular)


def _positive_pinv(H: np.ndarray, rcond: float = 1e-12) -> tuple[np.ndarray, bool]:
    """Inverse of H, or its pseudo-inverse on the positive eigenspace when H is not well-conditioned PD.

    The flag is set whenever any eigen-direction was dropped.
    """
    w, Q = np.linalg.eigh(0.5 * (H + H.T))
    top = max(float(np.max(np.abs(w))), np.finfo(float).tiny)
    keep = w > rcond * top
    inv = (Q[:, keep] / w[keep]) @ Q[:, keep].T
    return inv, bool(not keep.all())


def penalty_multiplier(series: NetworkSeries) -> float:
    return math.log(series.T * series.n * (series.n - 1) / 2)


def cl_bic(series: NetworkSeries, spec: ModelSpec, z, theta_mle) -> float:
    cl = conditional_loglik(series, spec, theta_mle, z)
    d = clbic_complexity(series, spec, theta_mle, z).d
    return -2.0 * cl + d * penalty_multiplier(series)


def icl(series: NetworkSeries, spec: ModelSpec, z, theta_hat, K: int | None = None) -> float:
    """Conditional log-likelihood minus (number of parameters) x log(T n (n-1) / 2)."""
    if K is not None and K != spec.K:
        spec = spec.with_K(K)
    cl = conditional_loglik(series, spec, theta_hat, z)
    return cl - spec.K * spec.p * penalty_multiplier(series)


def identifiability_check(n: int, K: int, p: int) -> tuple[bool, bool]:
    """Sufficient conditions for generic identifiability of (pi, p_kl) and of theta."""
    if min(n, K, p) < 1:
        raise ValueError("n, K and p must be positive")
    if K % 2 == 0:
        rhs = Fraction(K - 1) + Fraction((K + 2) ** 2, 4)
    else:
        rhs = Fraction(K - 1) + Fraction((K + 1) * (K + 3), 4)
    mixture_ok = rhs <= 0 or n >= rhs * rhs
    theta_ok = p <= (K + 1) // 2
    return mixture_ok, theta_ok


def compress_labels(z) -> tuple[np.ndarray, int]:
    """Relabel occupied communities to 1..K' preserving their order."""
    z = np.asarray(z)
    used = np.unique(z)
    lookup = {int(k): i + 1 for i, k in enumerate(used)}
    return np.array([lookup[int(k)] for k in z]), len(used)


@dataclass
class SelectionRow:
    K: int
    occupied: int
    cl: float
    theta_mle: np.ndarray
    d_K: float
    cl_bic: float
    icl: float
    diverged: bool = False
    singular_H: bool = False
    lower_bound: float = float("nan")
    fit: FitResult | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "occupied": self.occupied,
            "cl": self.cl,
            "theta_mle": self.theta_mle.tolist(),
            "d_K": self.d_K,
            "cl_bic": self.cl_bic,
            "icl": self.icl,
            "diverged": self.diverged,
            "singular_H": self.singular_H,
            "lower_bound": self.lower_bound,
        }


@dataclass
class SelectionReport:
    model: str
    rows: list[SelectionRow]

    @property
    def chosen_K_clbic(self) -> int:
        return min(self.rows, key=lambda r: (r.cl_bic, r.K)).K

    @property
    def chosen_K_icl(self) -> int:
        return max(self.rows, key=lambda r: (r.icl, -r.K)).K

    def row(self, K: int) -> SelectionRow:
        return next(r for r in self.rows if r.K == K)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "rows": [r.to_dict() for r in self.rows],
            "chosen_K_clbic": self.chosen_K_clbic,
            "chosen_K_icl": self.chosen_K_icl,
        }

    def to_tsv(self) -> str:
        lines = ["K\tcl\td_K\tcl_bic\ticl"]
        for r in self.rows:
            lines.append(f"{r.K}\t{r.cl:.6f}\t{r.d_K:.6f}\t{r.cl_bic:.6f}\t{r.icl:.6f}")
        return "\n".join(lines) + "\n"


def evaluate_labels(series: NetworkSeries, spec: ModelSpec, z, information: str = "within_block") -> SelectionRow:
    """Criteria for one candidate K given hard labels (empty communities are dropped)."""
    zc, occ = compress_labels(z)
    sp = spec.with_K(occ)
    mle = conditional_mle(series, sp, zc)
    cl = conditional_loglik(series, sp, mle.theta, zc)
    cx = clbic_complexity(series, sp, mle.theta, zc, information)
    pen = penalty_multiplier(series)
    return SelectionRow(
        K=spec.K,
        occupied=occ,
        cl=cl,
        theta_mle=mle.theta,
        d_K=cx.d,
        cl_bic=-2.0 * cl + cx.d * pen,
        icl=cl - sp.K * sp.p * pen,
        diverged=mle.diverged,
        singular_H=cx.singular,
    )


def _select_one(args) -> SelectionRow:
    series, spec, config, information = args
    res = fit(series, spec, config=config)
    row = evaluate_labels(series, spec, res.labels, information)
    row.lower_bound = res.lower_bound
    row.fit = res
    return row


def select(
    series: NetworkSeries,
    kind: str,
    k_range=range(1, 7),
    config: FitConfig | None = None,
    jobs: int = 1,
    information: str = "within_block",
) -> SelectionReport:
    """Fit every K in ``k_range`` and score it by CL-BIC and modified ICL.

    ``information`` selects the matrix H in the CL-BIC complexity (see
    :func:`clbic_complexity`).
    """
    config = config or FitConfig()
    tasks = [(series, ModelSpec(kind, K), config, information) for K in k_range]
    if not tasks:
        raise ValueError("empty K range")
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as ex:
            rows = list(ex.map(_select_one, tasks))
    else:
        rows = [_select_one(t) for t in tasks]
    return SelectionReport(model=ModelSpec(kind, 1).kind, rows=rows)
