import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nomasec.model import (Allocation, ChannelRealization, SystemConfig, dbm_to_watts, draw_instance,
                           feasibility_check, link_metrics, max_secret_rate, min_power_for_rate,
                           order_matrix, outage_from_theta, round_decoding_order, sample_channels,
                           secrecy_rate, sinr_vector, total_energy)

CFG = SystemConfig()


def alloc_for(p, beta, ch, cfg, R_s=None, l=None):
    p = np.asarray(p, dtype=float)
    gamma = sinr_vector(p, beta, ch)
    R_s = secrecy_rate(gamma, p, cfg.kappa) if R_s is None else np.asarray(R_s, dtype=float)
    l = np.clip(cfg.L - cfg.BT * R_s, 0, cfg.L) if l is None else l
    return Allocation(l=l, p=p, R_t=np.log2(1 + gamma), R_s=R_s, beta=np.asarray(beta, dtype=float))


# ---- configuration

def test_defaults_and_derived_constants():
    assert CFG.K == 3 and CFG.B == 10e6 and CFG.T == 0.1 and CFG.alpha == 5
    assert dbm_to_watts(-50) == pytest.approx(1e-8, rel=1e-12)
    # -ln(0.1) / (1e-8 * 100^5)
    assert CFG.kappa == pytest.approx(np.full(3, np.log(10) / 100), rel=1e-12)
    assert CFG.BT == 1e6


@pytest.mark.parametrize("kw", [dict(K=0), dict(B=0), dict(T=-1), dict(epsilon=1.0), dict(epsilon=0.0),
                                dict(C=-1), dict(L=-5), dict(d=(1, 2)), dict(sigma2_e=0)])
def test_invalid_config_rejected(kw):
    with pytest.raises(ValueError):
        SystemConfig(**kw)


def test_per_user_broadcast_and_reorder():
    cfg = SystemConfig(L=(1, 2, 3))
    r = cfg.reordered([2, 0, 1])
    assert np.array_equal(r.L, [3, 1, 2])
    sub = cfg.reordered([1])
    assert sub.K == 1 and np.array_equal(sub.L, [2])


# ---- channels

def test_sampling_is_deterministic():
    a, b = sample_channels(CFG, 7), sample_channels(CFG, 7)
    assert np.array_equal(a.tau, b.tau) and np.array_equal(a.perm, b.perm)


def test_tau_order_matches_fading_order_for_equal_distances():
    ch = sample_channels(SystemConfig(K=6), 3)
    assert np.all(np.diff(ch.tau) < 0)
    assert np.all(np.diff(ch.g2) < 0)


def test_fading_sample_mean_is_one():
    cfg = SystemConfig(K=1)
    g = np.array([sample_channels(cfg, s).g2[0] for s in range(2000)])
    # unit-mean exponential: standard deviation 1
    assert abs(g.mean() - 1.0) <= 3.0 / np.sqrt(g.size)
    rng = np.random.default_rng(0)
    big = rng.exponential(1.0, 100_000)
    assert abs(big.mean() - 1.0) <= 3.0 / np.sqrt(big.size)


def test_draw_instance_aligns_per_user_parameters():
    cfg = SystemConfig(L=(1e5, 2e5, 3e5), d=(20, 30, 40))
    c, ch = draw_instance(cfg, 4)
    assert np.array_equal(c.L, cfg.L[ch.perm])
    np.testing.assert_allclose(ch.tau, c.d ** -c.alpha * ch.g2 / c.sigma2_b)


def test_channel_rejects_unsorted():
    with pytest.raises(ValueError):
        ChannelRealization.from_tau([1.0, 2.0], SystemConfig(K=2))


# ---- SINR

def test_sinr_examples():
    cfg2 = SystemConfig(K=2)
    ch = ChannelRealization.from_tau([2.0, 1.0], cfg2)
    beta = np.array([[0, 1], [0, 0]])
    np.testing.assert_allclose(sinr_vector([1.0, 1.0], beta, ch), [1.0, 1.0])
    assert np.all(sinr_vector([0.0, 0.0], beta, ch) == 0)
    ch1 = ChannelRealization.from_tau([3.0], SystemConfig(K=1))
    assert sinr_vector([0.5], np.zeros((1, 1)), ch1)[0] == 1.5


def test_sinr_dimension_mismatch():
    ch = ChannelRealization.from_tau([2.0, 1.0], SystemConfig(K=2))
    with pytest.raises(ValueError):
        sinr_vector([1.0], np.zeros((2, 2)), ch)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(1e-4, 1.0), min_size=3, max_size=3), st.integers(0, 2), st.integers(0, 50))
def test_sinr_monotone_in_own_and_interfering_power(p, k, seed):
    _, ch = draw_instance(CFG, seed)
    p = np.array(p)
    beta = order_matrix(np.random.default_rng(seed).permutation(3), 3)
    h = 1e-6
    up = p.copy()
    up[k] += h
    assert sinr_vector(up, beta, ch)[k] >= sinr_vector(p, beta, ch)[k]
    for j in range(3):
        if beta[j, k] == 1:
            assert sinr_vector(up, beta, ch)[j] <= sinr_vector(p, beta, ch)[j]


# ---- outage and secrecy rate

def test_outage_examples():
    assert outage_from_theta(0.0, 1e10) == 1.0
    assert outage_from_theta(np.log(10) / 1e10, 100.0 ** 5) == pytest.approx(0.1, rel=1e-12)
    assert outage_from_theta(-1.0, 1e10) == 1.0


def test_theta_single_user_formula():
    cfg = SystemConfig(K=1)
    ch = ChannelRealization.from_tau([50.0], cfg)
    p, R_s = 0.2, 1.5
    a = Allocation(l=[0.0], p=[p], R_t=[np.log2(11)], R_s=[R_s], beta=np.zeros((1, 1)))
    m = link_metrics(a, ch, cfg)
    expected = ((1 + 50 * p) / 2 ** R_s - 1) * cfg.sigma2_e / p
    assert m.theta[0] == pytest.approx(expected, rel=1e-12)
    assert m.R_e[0] == pytest.approx(np.log2(11) - R_s)


def test_zero_power_has_zero_outage():
    cfg = SystemConfig(K=1)
    ch = ChannelRealization.from_tau([50.0], cfg)
    a = Allocation(l=cfg.L, p=[0.0], R_t=[0.0], R_s=[0.0], beta=np.zeros((1, 1)))
    assert link_metrics(a, ch, cfg).P_so[0] == 0.0


def test_max_secret_rate_divisor():
    # 1 + 2.302585e-10 * 0.1 / 1e-8
    cfg = SystemConfig(K=1)
    assert 1 + cfg.kappa[0] * 0.1 == pytest.approx(1.0023026, abs=1e-7)
    ch = ChannelRealization.from_tau([50.0], cfg)
    r = max_secret_rate(np.array([0.1]), np.zeros((1, 1)), ch, cfg, 0)
    assert r == pytest.approx(np.log2(6.0 / 1.0023025851), rel=1e-9)


def test_max_secret_rate_loose_secrecy_limit():
    cfg = SystemConfig(K=1, epsilon=1 - 1e-12)
    ch = ChannelRealization.from_tau([50.0], cfg)
    r = max_secret_rate(np.array([0.1]), np.zeros((1, 1)), ch, cfg, 0)
    assert r == pytest.approx(np.log2(6.0), rel=1e-9)


def test_max_secret_rate_zero_power():
    cfg = SystemConfig(K=1)
    ch = ChannelRealization.from_tau([50.0], cfg)
    assert max_secret_rate(np.array([0.0]), np.zeros((1, 1)), ch, cfg, 0) == 0.0


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-5, 0), min_size=3, max_size=3), st.integers(0, 100),
       st.floats(0.01, 0.9))
def test_max_secret_rate_round_trip(logp, seed, eps):
    cfg, ch = draw_instance(SystemConfig(epsilon=eps), seed)
    p = 10.0 ** np.array(logp)
    beta = round_decoding_order(p, ch)
    a = alloc_for(p, beta, ch, cfg)
    P = link_metrics(a, ch, cfg).P_so
    pos = a.R_s > 0
    np.testing.assert_allclose(P[pos], eps, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-3, 5.0), st.floats(1.0, 5.0), st.floats(0.05, 100.0))
def test_min_power_inverts_secrecy_rate(rate, pi, tau):
    kappa = 0.023
    p = float(min_power_for_rate(rate, pi, tau, kappa))
    if np.isfinite(p):
        got = secrecy_rate(tau * p / pi, p, kappa)
        assert got == pytest.approx(rate, rel=1e-9)
    else:
        assert rate >= np.log2(tau / pi / kappa) - 1e-12


# ---- energy

def test_energy_examples():
    cfg = SystemConfig(K=1)
    zero = Allocation(l=[0.0], p=[0.0], R_t=[0.0], R_s=[0.0], beta=np.zeros((1, 1)))
    assert total_energy(zero, cfg).total == 0.0
    loc = Allocation(l=[1e5], p=[0.0], R_t=[0.0], R_s=[0.0], beta=np.zeros((1, 1)))
    assert total_energy(loc, cfg).total == pytest.approx(0.01, rel=1e-12)
    off = Allocation(l=[0.0], p=[0.1], R_t=[0.0], R_s=[0.0], beta=np.zeros((1, 1)))
    assert total_energy(off, cfg).total == pytest.approx(0.01, rel=1e-12)
    assert total_energy(off, cfg, active_time=cfg.T / 3).total == pytest.approx(0.01 / 3, rel=1e-12)


def test_energy_breakdown_sums_and_frequency():
    a = Allocation(l=[1e5, 2e5, 0.0], p=[0.1, 0.0, 0.3], R_t=np.zeros(3), R_s=np.zeros(3),
                   beta=np.zeros((3, 3)))
    e = total_energy(a, CFG)
    assert e.total == pytest.approx(e.E_loc.sum() + e.E_off.sum())
    np.testing.assert_allclose(e.f_cpu, CFG.C * np.array([1e5, 2e5, 0.0]) / CFG.T)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(1.0, 4e5), min_size=6, max_size=6), st.lists(st.floats(0, 1), min_size=6, max_size=6))
def test_energy_midpoint_convexity(ls, ps):
    def E(l, p):
        return total_energy(Allocation(l=l, p=p, R_t=np.zeros(3), R_s=np.zeros(3),
                                       beta=np.zeros((3, 3))), CFG).total
    l1, l2 = np.array(ls[:3]), np.array(ls[3:])
    p1, p2 = np.array(ps[:3]), np.array(ps[3:])
    mid = E((l1 + l2) / 2, (p1 + p2) / 2)
    assert mid <= (E(l1, p1) + E(l2, p2)) / 2 * (1 + 1e-12)
    if np.any(np.abs(l1 - l2) > 1.0):
        assert mid < (E(l1, p1) + E(l2, p2)) / 2


# ---- decoding order

def test_round_decoding_order_examples():
    cfg = SystemConfig(K=3)
    ch = ChannelRealization.from_tau([4.0, 2.0, 1.0], cfg)
    beta = round_decoding_order([0.1, 1.0, 0.3], ch)
    # received powers 0.4, 2.0, 0.3: user 1 first, then 0, then 2
    np.testing.assert_array_equal(beta, order_matrix([1, 0, 2], 3))
    tie = round_decoding_order([0.5, 1.0, 0.0], ch)
    assert tie[0, 1] == 1 and tie[1, 0] == 0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=4, max_size=4), st.integers(0, 30))
def test_rounded_order_is_feasible_tournament(p, seed):
    cfg, ch = draw_instance(SystemConfig(K=4), seed)
    beta = round_decoding_order(p, ch)
    rep = feasibility_check(alloc_for(p, beta, ch, cfg), ch, cfg)
    assert rep.violations["order_consistency"].max() <= 0
    assert rep.violations["order_complement"].max() == 0
    assert sorted(beta.sum(axis=1)) == [0, 1, 2, 3]


# ---- feasibility report

def test_all_local_is_feasible():
    cfg, ch = draw_instance(CFG, 0)
    a = Allocation(l=cfg.L.copy(), p=np.zeros(3), R_t=np.zeros(3), R_s=np.zeros(3),
                   beta=order_matrix(range(3), 3))
    assert feasibility_check(a, ch, cfg).ok


def test_excess_secret_rate_flags_outage():
    cfg, ch = draw_instance(CFG, 1)
    p = np.array([0.3, 0.2, 0.1])
    beta = round_decoding_order(p, ch)
    a = alloc_for(p, beta, ch, cfg)
    assert feasibility_check(a, ch, cfg).ok
    a.R_s = a.R_s + 0.01
    rep = feasibility_check(a, ch, cfg)
    assert "secrecy_outage" in rep.failed()


def test_inconsistent_order_flagged():
    cfg, ch = draw_instance(CFG, 2)
    p = np.array([0.3, 0.2, 0.1])
    beta = order_matrix([2, 1, 0], 3)
    a = alloc_for(p, beta, ch, cfg)
    assert "order_consistency" in feasibility_check(a, ch, cfg).failed()


def test_fractional_order_flagged():
    cfg, ch = draw_instance(CFG, 2)
    p = np.array([0.3, 0.2, 0.1])
    beta = round_decoding_order(p, ch) * 0.7
    failed = feasibility_check(alloc_for(p, beta, ch, cfg), ch, cfg).failed()
    assert "order_binary" in failed and "order_complement" in failed
