"""
Independent ground truth: exhaustive grid search and Monte-Carlo outage.

The grid search avoids every auxiliary variable. For a given power vector
and decoding order the best confidential rate has a closed form, and so does
the number of bits left for local computing, so the energy is an explicit
function of the powers alone.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .model import (Allocation, link_metrics, order_matrix, round_decoding_order, secrecy_rate,
                    sinr_vector)


@dataclass(frozen=True)
class GridSpec:
    p_min: float = 1e-6
    p_max: float = 1.0
    count: int = 60
    include_zero: bool = True
    max_K: int = 4
    max_evals: float = 1e8

    def __post_init__(self):
        if self.count < 2:
            raise ValueError("grid count must be >= 2")
        if not 0 < self.p_min < self.p_max:
            raise ValueError("grid bounds must satisfy 0 < p_min < p_max")

    def powers(self):
        g = np.geomspace(self.p_min, self.p_max, self.count)
        return np.concatenate([[0.0], g]) if self.include_zero else g


class GridTooLarge(ValueError):
    pass


@dataclass
class GridResult:
    energy: float
    allocation: Allocation
    order: tuple
    evaluations: int
    per_order: dict


def _energy_for_powers(P, beta, cfg, ch, secure):
    """Energy of every row of ``P`` under a fixed order; ``inf`` where the order is inconsistent."""
    tau = ch.tau
    Q = P * tau
    I = Q @ beta.T + 1.0
    gamma = Q / I
    if secure:
        R_s = secrecy_rate(gamma, P, cfg.kappa)
    else:
        R_s = np.where(P > 0, np.log2(1.0 + gamma), 0.0)
    l = np.clip(cfg.L - cfg.BT * R_s, 0.0, cfg.L)
    E = (cfg.varsigma * cfg.C ** 3 * l ** 3).sum(axis=1) / cfg.T ** 2 + P.sum(axis=1) * cfg.T
    k, m = np.nonzero(beta)
    consistent = np.all(Q[:, k] >= Q[:, m], axis=1)
    return np.where(consistent, E, np.inf)


def brute_force_grid(cfg, ch, grid=None, secure=True, chunk=200_000):
    """Minimum energy over all decoding orders and a per-user power grid.

    Only decoding orders consistent with the received powers
    (earlier-decoded users are at least as strong) are admissible. Ties in
    energy resolve to the first order in lexicographic permutation order and
    then to the first grid point in C order, so the result is reproducible.
    """
    grid = GridSpec() if grid is None else grid
    K = ch.K
    if K > grid.max_K:
        raise GridTooLarge(f"K={K} exceeds grid.max_K={grid.max_K}")
    axis = grid.powers()
    G = axis.size
    n_points = G ** K
    n_evals = n_points * math.factorial(K)
    if n_evals > grid.max_evals:
        raise GridTooLarge(f"{n_evals:.3g} evaluations requested ({G}^{K} powers x {K}! orders), "
                           f"limit {grid.max_evals:.3g}")
    best = (np.inf, None, None)
    per_order = {}
    for perm in itertools.permutations(range(K)):
        beta = order_matrix(perm, K)
        e_best, i_best = np.inf, -1
        for start in range(0, n_points, chunk):
            idx = np.arange(start, min(start + chunk, n_points))
            P = axis[np.stack(np.unravel_index(idx, (G,) * K), axis=1)]
            E = _energy_for_powers(P, beta, cfg, ch, secure)
            j = int(np.argmin(E))
            if E[j] < e_best:
                e_best, i_best = float(E[j]), int(idx[j])
        per_order[perm] = e_best
        if e_best < best[0]:
            best = (e_best, perm, i_best)
    e, perm, i = best
    if perm is None:
        raise RuntimeError("no admissible grid point")
    p = axis[np.array(np.unravel_index(i, (G,) * K))]
    beta = order_matrix(perm, K)
    gamma = ch.tau * p / ((ch.tau * p) @ beta.T + 1.0)
    R_s = secrecy_rate(gamma, p, cfg.kappa) if secure else np.where(p > 0, np.log2(1 + gamma), 0.0)
    alloc = Allocation(l=np.clip(cfg.L - cfg.BT * R_s, 0.0, cfg.L), p=p,
                       R_t=np.where(p > 0, np.log2(1.0 + gamma), 0.0), R_s=R_s, beta=beta)
    return GridResult(energy=e, allocation=alloc, order=perm, evaluations=n_evals, per_order=per_order)


def monte_carlo_sop(alloc, ch, cfg, n=1_000_000, seed=0):
    """Empirical secrecy outage probability per user.

    Eve's fading is redrawn ``n`` times; an outage is counted whenever the
    redundancy rate ``C_b - R_s`` does not exceed Eve's capacity. Returns the
    frequencies and their binomial standard errors.
    """
    if n < 1000:
        raise ValueError("need at least 1000 samples")
    rng = np.random.default_rng(seed)
    p = np.asarray(alloc.p, dtype=float)
    m = link_metrics(alloc, ch, cfg)
    R_e = m.C_b - np.asarray(alloc.R_s, dtype=float)
    est = np.zeros(ch.K)
    for k in range(ch.K):
        if p[k] <= 0:
            continue
        g_e = rng.exponential(1.0, size=n)
        h_e2 = g_e / ch.eve_rate_param[k]
        C_e = np.log2(1.0 + h_e2 * p[k] / cfg.sigma2_e)
        est[k] = np.count_nonzero(R_e[k] <= C_e) / n
    se = np.sqrt(est * (1.0 - est) / n)
    return est, se


def random_feasible_allocation(cfg, ch, rng, log_p=(-4.0, 0.0), rate_fraction=(0.3, 1.0)):
    """A random allocation meeting every constraint of the original problem.

    Powers are log-uniform, the order is rounded from the received powers and
    each confidential rate is a random fraction of its secrecy-limited
    maximum, so outage probabilities spread between well below and exactly
    ``epsilon``.
    """
    p = 10.0 ** rng.uniform(*log_p, size=ch.K)
    beta = round_decoding_order(p, ch)
    gamma = sinr_vector(p, beta, ch)
    R_max = secrecy_rate(gamma, p, cfg.kappa)
    R_s = rng.uniform(*rate_fraction, size=ch.K) * R_max
    L = np.asarray(cfg.L, dtype=float)
    return Allocation(l=np.clip(L - cfg.BT * R_s, 0.0, L), p=p, R_t=np.log2(1.0 + gamma),
                      R_s=R_s, beta=beta)
