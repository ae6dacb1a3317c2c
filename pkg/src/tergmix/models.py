"""Node-additive TERGM (stability) and STERGM (formation/persistence) transition models.

Given community labels and the previous snapshot, every dyad evolves
independently with log-odds

    tergm_stability:  eta = (th_k + th_l) * (2 * y_prev - 1)
    stergm_fp:        eta = th^f_k + th^f_l   if y_prev == 0
                      eta = th^p_k + th^p_l   if y_prev == 1

so the normalising constant is a per-dyad ``log(1 + exp(eta))``.

Everything downstream (lower bound, conditional likelihood, derivatives) is
expressed through *block tables*: arrays ``M[c, k, l]`` of (possibly soft)
dyad-transition counts by category ``c = 2*y_prev + y_cur`` and ordered
community pair, symmetric in ``(k, l)``. Each parameter column then becomes a
logistic regression with success/trial tables and linear predictor
``theta_k + theta_l``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .netseries import CAT_00, CAT_01, CAT_10, CAT_11, NetworkSeries

TERGM = "tergm_stability"
STERGM = "stergm_fp"
KINDS = (TERGM, STERGM)

ALIASES = {"tergm": TERGM, "stergm": STERGM, TERGM: TERGM, STERGM: STERGM}


def log_sigmoid(x):
    """``log(1 / (1 + exp(-x)))`` without overflow."""
    return -np.logaddexp(0.0, -np.asarray(x, dtype=float))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    return np.exp(log_sigmoid(x))


@dataclass(frozen=True)
class ModelSpec:
    kind: Literal["tergm_stability", "stergm_fp"]
    K: int

    def __post_init__(self):
        kind = ALIASES.get(self.kind)
        if kind is None:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if int(self.K) != self.K or self.K < 1:
            raise ValueError("K must be a positive integer")
        object.__setattr__(self, "K", int(self.K))

    @property
    def p(self) -> int:
        return 1 if self.kind == TERGM else 2

    @property
    def param_names(self) -> tuple[str, ...]:
        return ("stability",) if self.kind == TERGM else ("formation", "persistence")

    def with_K(self, K: int) -> "ModelSpec":
        return ModelSpec(self.kind, K)


@dataclass(frozen=True)
class Params:
    """Mixing proportions ``pi`` (length K) and ``theta`` (K x p)."""

    pi: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        pi = np.array(self.pi, dtype=float).reshape(-1)
        theta = np.array(self.theta, dtype=float)
        if theta.ndim == 1:
            theta = theta[:, None]
        if theta.shape[0] != pi.shape[0]:
            raise ValueError("theta must have one row per community")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError("pi must be nonnegative and sum to 1")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta entries must be finite")
        pi.flags.writeable = False
        theta.flags.writeable = False
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "theta", theta)

    @property
    def K(self) -> int:
        return self.pi.shape[0]


@dataclass(frozen=True)
class SuffStats:
    g_d: int
    g_s: int
    g_f: int
    g_p: int


def suff_stats(y_prev, y_cur) -> SuffStats:
    """Density, stability, formation and persistence counts over dyads ``i < j``."""
    a = np.asarray(y_prev, dtype=bool)
    b = np.asarray(y_cur, dtype=bool)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("snapshots must be square adjacency matrices over the same node set")
    iu = np.triu_indices(a.shape[0], k=1)
    a, b = a[iu], b[iu]
    return SuffStats(
        g_d=int(b.sum()),
        g_s=int((a == b).sum()),
        g_f=int((b & ~a).sum()),
        g_p=int((b & a).sum()),
    )


def _row(theta_k, p: int) -> np.ndarray:
    r = np.atleast_1d(np.asarray(theta_k, dtype=float))
    if r.shape != (p,):
        raise ValueError(f"parameter row must have length {p}")
    return r


def dyad_natural_param(spec: ModelSpec, theta_k, theta_l, y_prev: int) -> float:
    """Log-odds that the dyad is present now, given its previous state."""
    a, b = _row(theta_k, spec.p), _row(theta_l, spec.p)
    if spec.kind == TERGM:
        return float((a[0] + b[0]) * (2 * int(y_prev) - 1))
    col = 1 if y_prev else 0
    return float(a[col] + b[col])


def edge_transition_logprob(spec: ModelSpec, theta_k, theta_l, y_prev: int, y_cur: int) -> float:
    eta = dyad_natural_param(spec, theta_k, theta_l, y_prev)
    return float(log_sigmoid(eta if y_cur else -eta))


def edge_probability(spec: ModelSpec, theta) -> np.ndarray:
    """``P[y_prev, k, l]`` = probability of an edge at time t for the community pair.

    This is the ``p_kl`` quantity whose identifiability is discussed with
    :func:`tergmix.selection.identifiability_check`.
    """
    th = np.asarray(theta, dtype=float).reshape(spec.K, spec.p)
    P = np.empty((2, spec.K, spec.K))
    if spec.kind == TERGM:
        s = th[:, 0][:, None] + th[:, 0][None, :]
        P[0], P[1] = sigmoid(-s), sigmoid(s)
    else:
        for y_prev in (0, 1):
            P[y_prev] = sigmoid(th[:, y_prev][:, None] + th[:, y_prev][None, :])
    return P


def category_logprob(spec: ModelSpec, theta) -> np.ndarray:
    """``L[c, k, l]`` = log-probability of a dyad transition of category c in block (k, l)."""
    th = np.asarray(theta, dtype=float).reshape(spec.K, spec.p)
    L = np.empty((4, spec.K, spec.K))
    if spec.kind == TERGM:
        s = th[:, 0][:, None] + th[:, 0][None, :]
        L[CAT_00] = L[CAT_11] = log_sigmoid(s)
        L[CAT_01] = L[CAT_10] = log_sigmoid(-s)
    else:
        f = th[:, 0][:, None] + th[:, 0][None, :]
        q = th[:, 1][:, None] + th[:, 1][None, :]
        L[CAT_00], L[CAT_01] = log_sigmoid(-f), log_sigmoid(f)
        L[CAT_10], L[CAT_11] = log_sigmoid(-q), log_sigmoid(q)
    return L


def soft_block_table(series: NetworkSeries, gamma) -> np.ndarray:
    """``M[c] = Gamma' N_c Gamma / 2``: expected dyad-transition counts per ordered block."""
    G = np.asarray(gamma, dtype=float)
    N = series.category_counts()
    return 0.5 * (G.T @ N @ G)


def logistic_tables(spec: ModelSpec, M: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per parameter column, ``(successes, trials)`` K x K tables from a block table."""
    if spec.kind == TERGM:
        return [(M[CAT_00] + M[CAT_11], M.sum(axis=0))]
    return [
        (M[CAT_01], M[CAT_00] + M[CAT_01]),
        (M[CAT_11], M[CAT_10] + M[CAT_11]),
    ]


def block_loglik(spec: ModelSpec, theta, M: np.ndarray) -> float:
    """``sum_c sum_kl M[c, k, l] * L[c, k, l]``."""
    return float(np.sum(M * category_logprob(spec, theta)))


def block_grad_hess(spec: ModelSpec, theta, M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian of :func:`block_loglik` in theta.

    Parameters are stacked column by column (all K stability values, or all
    K formation values followed by all K persistence values), so the STERGM
    Hessian is block diagonal.
    """
    K, p = spec.K, spec.p
    th = np.asarray(theta, dtype=float).reshape(K, p)
    grad = np.zeros(K * p)
    hess = np.zeros((K * p, K * p))
    for j, (S, Ntr) in enumerate(logistic_tables(spec, M)):
        x = th[:, j][:, None] + th[:, j][None, :]
        mu = sigmoid(x)
        r = S - Ntr * mu
        w = Ntr * mu * (1.0 - mu)
        sl = slice(j * K, (j + 1) * K)
        # each ordered block (k, l) touches theta_k and theta_l; tables are symmetric
        grad[sl] = 2.0 * r.sum(axis=1)
        hess[sl, sl] = -2.0 * (np.diag(w.sum(axis=1)) + w)
    return grad, hess
