"""Clustering agreement, estimation error and edge-instability summaries."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .netseries import NetworkSeries, check_labels

MAX_ALIGN_K = 8


def rand_index(z_true, z_hat) -> float:
    """Fraction of node pairs on which two labelings agree (same vs different group)."""
    a, b = np.asarray(z_true), np.asarray(z_hat)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("labelings must be 1-d and of equal length")
    n = len(a)
    if n < 2:
        raise ValueError("need at least two nodes")
    iu = np.triu_indices(n, k=1)
    same_a = (a[:, None] == a[None, :])[iu]
    same_b = (b[:, None] == b[None, :])[iu]
    return float(np.mean(same_a == same_b))


@dataclass
class RSEResult:
    rse_pi: float
    rse_theta: np.ndarray
    permutation: tuple[int, ...]


def rse(pi_hat, pi_true, theta_hat, theta_true) -> RSEResult:
    """l2 errors after aligning estimated communities to the truth.

    The alignment is the permutation minimising ``rse_pi + sum(rse_theta)``;
    ``permutation[k]`` is the estimated community matched to true community k.
    """
    ph, pt = np.asarray(pi_hat, float), np.asarray(pi_true, float)
    th, tt = np.asarray(theta_hat, float), np.asarray(theta_true, float)
    if th.ndim == 1:
        th = th[:, None]
    if tt.ndim == 1:
        tt = tt[:, None]
    if ph.shape != pt.shape or th.shape != tt.shape or th.shape[0] != ph.shape[0]:
        raise ValueError("estimates and truth must have the same K and p")
    K = len(pt)
    if K > MAX_ALIGN_K:
        raise ValueError(f"exhaustive alignment is limited to K <= {MAX_ALIGN_K}")
    best = None
    for perm in itertools.permutations(range(K)):
        idx = list(perm)
        e_pi = float(np.sqrt(np.sum((ph[idx] - pt) ** 2)))
        e_th = np.sqrt(np.sum((th[idx] - tt) ** 2, axis=0))
        score = e_pi + float(e_th.sum())
        if best is None or score < best[0] - 1e-15:
            best = (score, e_pi, e_th, perm)
    return RSEResult(best[1], best[2], tuple(best[3]))


@dataclass
class PairInstability:
    k: int
    l: int
    as_10: float
    sd_10: float
    as_01: float
    sd_01: float
    as_tot: float
    sd_tot: float
    excluded_10: int
    excluded_01: int
    excluded_tot: int


@dataclass
class InstabilityReport:
    K: int
    pairs: list[PairInstability]

    def pair(self, k: int, l: int) -> PairInstability:
        k, l = min(k, l), max(k, l)
        return next(p for p in self.pairs if (p.k, p.l) == (k, l))

    def to_dict(self) -> dict:
        def num(v):
            return None if math.isnan(v) else v

        return {
            "K": self.K,
            "pairs": [
                {key: (num(v) if isinstance(v, float) else v) for key, v in p.__dict__.items()}
                for p in self.pairs
            ],
        }

    def to_tsv(self) -> str:
        def fmt(v):
            return "NA" if math.isnan(v) else f"{v:.6f}"

        lines = ["pair\tas_10\tsd_10\tas_01\tsd_01\tas_tot\tsd_tot\texcluded_t_10\texcluded_t_01\texcluded_t_tot"]
        for p in self.pairs:
            lines.append(
                f"{p.k}{p.l}\t{fmt(p.as_10)}\t{fmt(p.sd_10)}\t{fmt(p.as_01)}\t{fmt(p.sd_01)}\t"
                f"{fmt(p.as_tot)}\t{fmt(p.sd_tot)}\t{p.excluded_10}\t{p.excluded_01}\t{p.excluded_tot}"
            )
        return "\n".join(lines) + "\n"


def _mean_sd(num: np.ndarray, den: np.ndarray) -> tuple[float, float, int]:
    ok = den > 0
    excluded = int((~ok).sum())
    if not ok.any():
        return float("nan"), float("nan"), excluded
    r = num[ok] / den[ok]
    sd = float(np.std(r, ddof=1)) if len(r) > 1 else 0.0
    return float(np.mean(r)), sd, excluded


def instability_stats(series: NetworkSeries, z) -> InstabilityReport:
    """Average dissolution (1->0), formation (0->1) and total instability ratios per community pair.

    Each ratio divides changed dyads by the matching *unchanged* dyads at the
    same step: dissolved / persisted, formed / stayed-absent, changed /
    unchanged. Steps with a zero denominator are left out of the average and
    counted.
    """
    z = check_labels(z, series.n)
    K = int(z.max())
    codes = series.transition_codes()  # (T, n, n)
    iu = np.triu_indices(series.n, k=1)
    dyad_codes = codes[:, iu[0], iu[1]]  # (T, D)
    ka, kb = np.minimum(z[iu[0]], z[iu[1]]), np.maximum(z[iu[0]], z[iu[1]])
    pairs = []
    for k in range(1, K + 1):
        for l in range(k, K + 1):
            sel = (ka == k) & (kb == l)
            c = dyad_codes[:, sel]
            n00 = (c == 0).sum(axis=1).astype(float)
            n01 = (c == 1).sum(axis=1).astype(float)
            n10 = (c == 2).sum(axis=1).astype(float)
            n11 = (c == 3).sum(axis=1).astype(float)
            m10, s10, e10 = _mean_sd(n10, n11)
            m01, s01, e01 = _mean_sd(n01, n00)
            mt, st, et = _mean_sd(n10 + n01, n11 + n00)
            pairs.append(PairInstability(k, l, m10, s10, m01, s01, mt, st, e10, e01, et))
    return InstabilityReport(K, pairs)


def mean_relational_duration(theta_p: float) -> float:
    """Expected edge lifetime when an edge survives each step with probability logistic(theta_p)."""
    return 1.0 + math.exp(float(theta_p))
