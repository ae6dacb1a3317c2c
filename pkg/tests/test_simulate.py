import numpy as np
import pytest
from hypothesis import given, strategies as st

from tergmix.models import sigmoid
from tergmix.netseries import NetworkSeries
from tergmix.simulate import (
    PRESETS,
    DurationSimConfig,
    MixtureSimConfig,
    config_from_dict,
    duration_chain_probs,
    plant_cross_edges,
    preset,
    simulate,
)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_shape_and_determinism(name):
    s1, z1 = simulate(preset(name, seed=5))
    s2, z2 = simulate(preset(name, seed=5))
    assert (s1.n, s1.T) == (100, 10)
    assert s1 == s2 and np.array_equal(z1, z2)
    assert set(np.unique(z1)) <= set(range(1, len(PRESETS[name]["pi"]) + 1))
    s3, _ = simulate(preset(name, seed=6))
    assert s3 != s1


def test_model3_preset_parameters():
    cfg = preset("model3", seed=0)
    assert cfg.kind == "stergm_fp"
    assert cfg.theta == ((-1.5, -1.0), (1.5, 1.0))
    assert cfg.pi == (0.5, 0.5)


def test_preset_overrides_and_unknown():
    cfg = preset("model1", seed=1, n=30, T=4)
    assert (cfg.n, cfg.T) == (30, 4)
    with pytest.raises(KeyError):
        preset("model9", seed=1)
    with pytest.raises(ValueError):
        config_from_dict({"generator": "other"})


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(pi=(0.5, 0.6)),
        dict(theta=((1.0,),)),
        dict(theta_d=(0.0,)),
        dict(n=1),
    ],
)
def test_mixture_config_validation(kwargs):
    base = dict(n=10, T=2, kind="tergm", pi=(0.5, 0.5), theta=((0.0,), (1.0,)), theta_d=(0.0, 0.0))
    base.update(kwargs)
    with pytest.raises(ValueError):
        MixtureSimConfig(**base)


def test_mixture_transition_rates_match_model():
    cfg = MixtureSimConfig(n=120, T=30, kind="stergm", pi=(1.0,), theta=((-1.2, 0.4),), theta_d=(-1.0,), seed=3)
    s, _ = simulate(cfg)
    N = s.category_counts().sum(axis=(1, 2)) / 2
    form = N[1] / (N[0] + N[1])
    pers = N[3] / (N[2] + N[3])
    assert abs(form - sigmoid(-2.4)) < 0.01
    assert abs(pers - sigmoid(0.8)) < 0.02


@given(dur=st.floats(1.05, 20), rho=st.floats(0.01, 0.3))
def test_duration_chain_stationary(dur, rho):
    p, q = duration_chain_probs(dur, rho)
    assert np.isclose(1 / (1 - p), dur)
    if 0 < q < 1:
        # stationary density of the two-state chain
        assert np.isclose(q / (q + 1 - p), rho)


def test_duration_generator_blocks_and_cross_edges():
    cfg = DurationSimConfig(n=60, T=5, pi=(0.5, 0.5), mean_duration=(4.0, 2.0), avg_density=(0.2, 0.1), cross_edges=7, seed=2)
    s, z = simulate(cfg)
    cross = z[:, None] != z[None, :]
    for t in range(s.T + 1):
        assert s.adj[t][cross].sum() == 2 * 7


def test_duration_generator_infeasible():
    with pytest.raises(ValueError, match="community 1"):
        simulate(DurationSimConfig(n=10, T=2, pi=(1.0,), mean_duration=(1.5,), avg_density=(0.9,)))
    with pytest.raises(ValueError):
        DurationSimConfig(n=10, T=2, pi=(1.0,), mean_duration=(1.0,), avg_density=(0.1,))


def test_plant_cross_edges():
    s = NetworkSeries(np.zeros((3, 6, 6), dtype=bool))
    z = np.array([1, 1, 1, 2, 2, 2])
    assert plant_cross_edges(s, z, 0, seed=0) is s
    out = plant_cross_edges(s, z, 9, seed=0)
    assert all(out.adj[t][:3, 3:].sum() == 9 for t in range(3))
    with pytest.raises(ValueError):
        plant_cross_edges(s, z, 10, seed=0)


def test_config_round_trip():
    cfg = preset("model6", seed=4)
    d = cfg.to_dict()
    assert d["generator"] == "duration_density"
    assert config_from_dict(d) == cfg
    cfg = preset("model2", seed=4)
    assert config_from_dict(cfg.to_dict()) == cfg


def test_initial_density_follows_logistic():
    cfg = MixtureSimConfig(n=160, T=1, kind="tergm", pi=(1.0,), theta=((0.0,),), theta_d=(-0.5,), seed=8)
    s, _ = simulate(cfg)
    iu = np.triu_indices(160, k=1)
    assert abs(s.adj[0][iu].mean() - sigmoid(-1.0)) <= 0.02


def test_huge_stability_freezes_series():
    cfg = MixtureSimConfig(n=30, T=5, kind="tergm", pi=(0.5, 0.5), theta=((15.0,), (15.0,)), theta_d=(0.0, -1.0), seed=1)
    s, _ = simulate(cfg)
    assert all(np.array_equal(s.adj[t], s.adj[0]) for t in range(1, 6))


@pytest.mark.parametrize("th", [-0.6, 0.2, 0.9])
def test_stable_fraction_within_three_standard_errors(th):
    cfg = MixtureSimConfig(n=80, T=8, kind="tergm", pi=(1.0,), theta=((th,),), theta_d=(-1.0,), seed=11)
    s, _ = simulate(cfg)
    N = s.category_counts().sum(axis=(1, 2)) / 2
    frac = (N[0] + N[3]) / N.sum()
    p = sigmoid(2 * th)
    assert abs(frac - p) <= 3 * np.sqrt(p * (1 - p) / N.sum())


def test_model5_chain_probabilities():
    p, q = duration_chain_probs(5.0, 0.15)
    assert np.isclose(p, 0.8) and abs(q - 0.03529) < 1e-5


def test_long_run_density_matches_target():
    cfg = DurationSimConfig(n=100, T=200, pi=(1.0,), mean_duration=(4.0,), avg_density=(0.2,), cross_edges=0, seed=5)
    s, _ = simulate(cfg)
    iu = np.triu_indices(100, k=1)
    dens = s.adj[-1][iu].mean()
    assert abs(dens - 0.2) <= 3 * np.sqrt(0.2 * 0.8 / len(iu[0]))


def test_single_community_cannot_plant():
    with pytest.raises(ValueError):
        simulate(DurationSimConfig(n=20, T=2, pi=(1.0,), mean_duration=(3.0,), avg_density=(0.1,), cross_edges=1))


def test_community_sizes_multinomial():
    counts = np.zeros(3)
    for seed in range(200):
        _, z = simulate(preset("model2", seed=seed, T=1))
        counts += np.bincount(z, minlength=4)[1:]
    expected = counts.sum() / 3
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    # chi-square with 2 degrees of freedom has survival function exp(-x/2)
    assert np.exp(-chi2 / 2) > 1e-3
