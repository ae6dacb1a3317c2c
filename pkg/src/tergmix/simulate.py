"""Synthetic time-evolving networks with planted communities."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .models import ModelSpec, edge_probability, sigmoid
from .netseries import NetworkSeries


@dataclass(frozen=True)
class MixtureSimConfig:
    n: int
    T: int
    kind: str
    pi: tuple[float, ...]
    theta: tuple[tuple[float, ...], ...]
    theta_d: tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        spec = ModelSpec(self.kind, len(self.pi))
        object.__setattr__(self, "kind", spec.kind)
        pi = tuple(float(v) for v in self.pi)
        theta = tuple(tuple(float(v) for v in np.atleast_1d(row)) for row in self.theta)
        theta_d = tuple(float(v) for v in self.theta_d)
        if self.n < 2 or self.T < 1:
            raise ValueError("need n >= 2 and T >= 1")
        if min(pi) < 0 or abs(sum(pi) - 1.0) > 1e-9:
            raise ValueError("pi must lie on the simplex")
        if len(theta) != spec.K or any(len(r) != spec.p for r in theta):
            raise ValueError(f"theta must be {spec.K} x {spec.p}")
        if len(theta_d) != spec.K:
            raise ValueError("theta_d must have one entry per community")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "theta_d", theta_d)

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec(self.kind, len(self.pi))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["generator"] = "mixture"
        d["theta"] = [list(r) for r in self.theta]
        return d


@dataclass(frozen=True)
class DurationSimConfig:
    n: int
    T: int
    pi: tuple[float, ...]
    mean_duration: tuple[float, ...]
    avg_density: tuple[float, ...]
    cross_edges: int = 10
    seed: int = 0

    def __post_init__(self):
        pi = tuple(float(v) for v in self.pi)
        dur = tuple(float(v) for v in self.mean_duration)
        dens = tuple(float(v) for v in self.avg_density)
        if self.n < 2 or self.T < 1:
            raise ValueError("need n >= 2 and T >= 1")
        if min(pi) < 0 or abs(sum(pi) - 1.0) > 1e-9:
            raise ValueError("pi must lie on the simplex")
        if not len(pi) == len(dur) == len(dens):
            raise ValueError("pi, mean_duration and avg_density must have equal length")
        if any(d <= 1 for d in dur):
            raise ValueError("mean durations must exceed 1")
        if any(not 0 < r < 1 for r in dens):
            raise ValueError("densities must lie in (0, 1)")
        if self.cross_edges < 0:
            raise ValueError("cross_edges must be nonnegative")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "mean_duration", dur)
        object.__setattr__(self, "avg_density", dens)

    @property
    def K(self) -> int:
        return len(self.pi)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["generator"] = "duration_density"
        return d


def _draw_labels(rng: np.random.Generator, n: int, pi) -> np.ndarray:
    return rng.choice(len(pi), size=n, p=np.asarray(pi) / np.sum(pi)) + 1


def _symmetric_bernoulli(rng: np.random.Generator, prob: np.ndarray) -> np.ndarray:
    n = prob.shape[0]
    iu = np.triu_indices(n, k=1)
    up = rng.random(len(iu[0])) < prob[iu]
    a = np.zeros((n, n), dtype=bool)
    a[iu] = up
    return a | a.T


def simulate_mixture(config: MixtureSimConfig) -> tuple[NetworkSeries, np.ndarray]:
    """Labels ~ Multinomial(pi); ``y_0`` from ``logistic(th^d_k + th^d_l)``; then the transition model."""
    rng = np.random.default_rng(config.seed)
    spec = config.spec
    z = _draw_labels(rng, config.n, config.pi)
    idx = z - 1
    td = np.asarray(config.theta_d)
    p0 = sigmoid(td[idx][:, None] + td[idx][None, :])
    P = edge_probability(spec, np.asarray(config.theta))  # (2, K, K)
    P_nodes = P[:, idx][:, :, idx]  # (2, n, n)
    adj = np.zeros((config.T + 1, config.n, config.n), dtype=bool)
    adj[0] = _symmetric_bernoulli(rng, p0)
    for t in range(1, config.T + 1):
        prob = np.where(adj[t - 1], P_nodes[1], P_nodes[0])
        adj[t] = _symmetric_bernoulli(rng, prob)
    return NetworkSeries(adj), z


def duration_chain_probs(mean_duration: float, density: float) -> tuple[float, float]:
    """Persistence ``p = 1 - 1/duration`` and formation ``q`` with stationary density ``density``."""
    p = 1.0 - 1.0 / mean_duration
    q = density * (1.0 - p) / (1.0 - density)
    return p, q


def plant_cross_edges(series: NetworkSeries, z, m: int, seed: int | np.random.Generator) -> NetworkSeries:
    """Set ``m`` distinct random between-community dyads to 1 in every snapshot, independently."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = np.asarray(z)
    if m == 0:
        return series
    iu, ju = np.triu_indices(series.n, k=1)
    cross = z[iu] != z[ju]
    ci, cj = iu[cross], ju[cross]
    if len(ci) < m:
        raise ValueError(f"only {len(ci)} cross-community dyads available, {m} requested")
    adj = np.array(series.adj)
    for t in range(series.T + 1):
        pick = rng.choice(len(ci), size=m, replace=False)
        adj[t, ci[pick], cj[pick]] = True
        adj[t, cj[pick], ci[pick]] = True
    return NetworkSeries(adj, node_names=series.node_names)


def simulate_duration_density(config: DurationSimConfig) -> tuple[NetworkSeries, np.ndarray]:
    """Each community evolves as an independent two-state Markov chain per dyad.

    Within community k a present edge persists with probability ``p_k`` (mean
    lifetime ``mean_duration_k``) and an absent one forms with probability
    ``q_k``, tuned so the stationary density is ``avg_density_k``. Dyads
    between communities are empty except for the planted random edges.
    """
    rng = np.random.default_rng(config.seed)
    probs = []
    for k, (dur, rho) in enumerate(zip(config.mean_duration, config.avg_density), start=1):
        p, q = duration_chain_probs(dur, rho)
        if not 0 < q < 1:
            raise ValueError(f"community {k}: formation probability {q:.4f} is infeasible")
        probs.append((p, q))
    z = _draw_labels(rng, config.n, config.pi)
    idx = z - 1
    same = idx[:, None] == idx[None, :]
    pers = np.array([p for p, _ in probs])[idx][:, None] * np.ones(config.n)[None, :]
    form = np.array([q for _, q in probs])[idx][:, None] * np.ones(config.n)[None, :]
    rho0 = np.asarray(config.avg_density)[idx][:, None] * np.ones(config.n)[None, :]
    pers, form, rho0 = (np.where(same, x, 0.0) for x in (pers, form, rho0))
    adj = np.zeros((config.T + 1, config.n, config.n), dtype=bool)
    adj[0] = _symmetric_bernoulli(rng, rho0)
    for t in range(1, config.T + 1):
        adj[t] = _symmetric_bernoulli(rng, np.where(adj[t - 1], pers, form))
    series = NetworkSeries(adj)
    return plant_cross_edges(series, z, config.cross_edges, rng), z


def _third(k):
    return tuple([1.0 / 3] * k)


# Replication settings: n=100, T=10. Model 2/4 mixing "0.33" each is taken as exactly 1/3.
PRESETS = {
    "model1": dict(generator="mixture", kind="tergm_stability", pi=(0.5, 0.5),
                   theta=((-0.5,), (0.5,)), theta_d=(-0.5, 0.5)),
    "model2": dict(generator="mixture", kind="tergm_stability", pi=_third(3),
                   theta=((-1.0,), (0.0,), (1.0,)), theta_d=(-1.0, 0.0, 1.0)),
    "model3": dict(generator="mixture", kind="stergm_fp", pi=(0.5, 0.5),
                   theta=((-1.5, -1.0), (1.5, 1.0)), theta_d=(-0.5, 0.5)),
    "model4": dict(generator="mixture", kind="stergm_fp", pi=_third(3),
                   theta=((-1.5, -1.0), (0.0, 0.0), (1.5, 1.0)), theta_d=(-1.0, 0.0, 1.0)),
    "model5": dict(generator="duration_density", pi=(0.4, 0.6),
                   mean_duration=(5.0, 2.5), avg_density=(0.15, 0.1), cross_edges=10),
    "model6": dict(generator="duration_density", pi=(0.3, 0.4, 0.3),
                   mean_duration=(7.5, 5.0, 2.5), avg_density=(0.1, 0.25, 0.3), cross_edges=10),
}


def config_from_dict(d: dict, seed: int | None = None, n: int | None = None, T: int | None = None):
    """Build a simulation config from a preset-style or serialized mapping."""
    d = dict(d)
    gen = d.pop("generator", "mixture")
    d.setdefault("n", 100)
    d.setdefault("T", 10)
    if seed is not None:
        d["seed"] = seed
    if n is not None:
        d["n"] = n
    if T is not None:
        d["T"] = T
    if gen == "mixture":
        return MixtureSimConfig(**d)
    if gen == "duration_density":
        return DurationSimConfig(**d)
    raise ValueError(f"unknown generator {gen!r}")


def preset(name: str, seed: int, n: int | None = None, T: int | None = None):
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return config_from_dict(PRESETS[name], seed=seed, n=n, T=T)


def simulate(config) -> tuple[NetworkSeries, np.ndarray]:
    if isinstance(config, MixtureSimConfig):
        return simulate_mixture(config)
    return simulate_duration_density(config)

