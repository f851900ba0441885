"""
Physical system model for secure NOMA offloading.

Channel sampling, SINR under a SIC decoding order, energy accounting and the
closed-form secrecy outage probability. Rates are in bits/s/Hz, powers and
noise in watts, energies in joules.
"""

from dataclasses import dataclass, field, replace

import numpy as np


def dbm_to_watts(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def _per_user(value, K, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(K, float(arr))
    if arr.shape != (K,):
        raise ValueError(f"{name} must be a scalar or have length K={K}, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class SystemConfig:
    """Physical and task parameters of one NOMA-MEC network.

    Per-user quantities (``L``, ``C``, ``varsigma``, ``d``, ``d_e``) accept a
    scalar, which is broadcast to all ``K`` users.
    """

    K: int = 3
    B: float = 10e6
    T: float = 0.1
    alpha: float = 5.0
    sigma2_b: float = 1e-8
    sigma2_e: float = 1e-8
    L: np.ndarray = 4e5
    C: np.ndarray = 1e3
    varsigma: np.ndarray = 1e-28
    d: np.ndarray = 30.0
    d_e: np.ndarray = 100.0
    epsilon: float = 0.1

    def __post_init__(self):
        K = int(self.K)
        if K < 1:
            raise ValueError("K must be >= 1")
        object.__setattr__(self, "K", K)
        for name in ("B", "T", "alpha", "sigma2_b", "sigma2_e"):
            if not float(getattr(self, name)) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not 0.0 < float(self.epsilon) < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        for name in ("L", "C", "varsigma", "d", "d_e"):
            arr = _per_user(getattr(self, name), K, name)
            # L = 0 is tolerated: a user with nothing to compute
            if name == "L":
                if np.any(arr < 0):
                    raise ValueError("L must be nonnegative")
            elif np.any(arr <= 0):
                raise ValueError(f"{name} must be strictly positive")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def BT(self):
        return self.B * self.T

    @property
    def eve_gain_floor(self):
        """Per-user ``-ln(eps) / d_e^alpha``: the Eve gain that must be beaten."""
        return -np.log(self.epsilon) / self.d_e ** self.alpha

    @property
    def kappa(self):
        """Per-user secrecy rate-loss slope ``-ln(eps) / (sigma_e^2 d_e^alpha)`` in 1/W."""
        return self.eve_gain_floor / self.sigma2_e

    def with_(self, **changes):
        return replace(self, **changes)

    def reordered(self, perm):
        """Config with per-user parameters permuted (or subset) by ``perm``."""
        perm = np.asarray(perm)
        return replace(self, K=perm.size, **{n: np.array(getattr(self, n))[perm]
                                             for n in ("L", "C", "varsigma", "d", "d_e")})


@dataclass(frozen=True)
class ChannelRealization:
    """One fading realization, users sorted by descending normalized gain.

    ``perm[k]`` is the index, in the caller's original labelling, of the user
    now occupying position ``k``.
    """

    g2: np.ndarray
    tau: np.ndarray
    eve_rate_param: np.ndarray
    perm: np.ndarray = None

    def __post_init__(self):
        for name in ("g2", "tau", "eve_rate_param"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.perm is None:
            object.__setattr__(self, "perm", np.arange(self.tau.size))
        if np.any(self.tau <= 0) or np.any(self.eve_rate_param <= 0):
            raise ValueError("channel gains must be strictly positive")
        if np.any(np.diff(self.tau) >= 0):
            raise ValueError("tau must be strictly descending")

    @property
    def K(self):
        return self.tau.size

    @classmethod
    def from_tau(cls, tau, cfg):
        """Build a realization directly from normalized gains (for constructed instances)."""
        tau = np.asarray(tau, dtype=float)
        g2 = tau * cfg.sigma2_b * cfg.d ** cfg.alpha
        return cls(g2=g2, tau=tau, eve_rate_param=cfg.d_e ** cfg.alpha)


@dataclass
class Allocation:
    """Decision variables of one problem instance.

    ``beta[k, l] = 1`` means user k is decoded before user l and therefore
    sees user l as interference. The diagonal is unused.
    """

    l: np.ndarray
    p: np.ndarray
    R_t: np.ndarray
    R_s: np.ndarray
    beta: np.ndarray

    def copy(self):
        return Allocation(*(np.array(a, dtype=float) for a in
                            (self.l, self.p, self.R_t, self.R_s, self.beta)))


@dataclass
class LinkMetrics:
    gamma: np.ndarray
    C_b: np.ndarray
    gamma_e: np.ndarray
    C_e: np.ndarray
    R_e: np.ndarray
    theta: np.ndarray
    P_so: np.ndarray


@dataclass
class EnergyBreakdown:
    E_loc: np.ndarray
    E_off: np.ndarray
    f_cpu: np.ndarray
    total: float


def sample_channels(cfg, seed):
    """Draw i.i.d. Rayleigh gains and relabel users by descending ``tau``.

    The returned realization is aligned with ``cfg.reordered(ch.perm)``;
    use :func:`draw_instance` to get both at once.
    """
    rng = np.random.default_rng(seed)
    while True:
        g2 = rng.exponential(1.0, size=cfg.K)
        tau = cfg.d ** (-cfg.alpha) * g2 / cfg.sigma2_b
        perm = np.argsort(-tau, kind="stable")
        if np.all(np.diff(tau[perm]) < 0):
            break
    return ChannelRealization(g2=g2[perm], tau=tau[perm],
                              eve_rate_param=cfg.d_e[perm] ** cfg.alpha, perm=perm)


def draw_instance(cfg, seed):
    """Sample channels and return the user-aligned ``(cfg, ch)`` pair."""
    ch = sample_channels(cfg, seed)
    return cfg.reordered(ch.perm), ch


def interference(p, beta, tau):
    """Received interference-plus-noise (normalized) seen by each user: 1 + sum_l beta_kl tau_l p_l."""
    beta = np.array(beta, dtype=float)
    np.fill_diagonal(beta, 0.0)
    return beta @ (tau * p) + 1.0


def sinr_vector(p, beta, ch):
    p = np.asarray(p, dtype=float)
    beta = np.asarray(beta, dtype=float)
    K = ch.K
    if p.shape != (K,) or beta.shape != (K, K):
        raise ValueError(f"expected p of shape ({K},) and beta of shape ({K}, {K})")
    return ch.tau * p / interference(p, beta, ch.tau)


def _theta(p, beta, R_s, ch, cfg):
    p = np.asarray(p, dtype=float)
    pi = interference(p, beta, ch.tau)
    R_s = np.asarray(R_s, dtype=float)
    delta_s = 2.0 ** R_s
    # pi + tau p - pi delta_s, without cancellation at small powers
    num = ch.tau * p - pi * np.expm1(R_s * np.log(2.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = num / (pi * delta_s * p) * cfg.sigma2_e
    return np.where(p > 0, theta, np.inf)


def outage_from_theta(theta, eve_rate_param):
    """``exp(-theta d_e^alpha)``, with negative thresholds meaning certain outage."""
    theta = np.asarray(theta, dtype=float)
    with np.errstate(over="ignore"):
        P = np.exp(-np.maximum(theta, 0.0) * eve_rate_param)
    return np.where(theta < 0, 1.0, P)


def link_metrics(alloc, ch, cfg, h_e2=None):
    """Evaluate SINRs, rates and the secrecy outage probability.

    The codeword rate is taken at its active value ``C_b`` when forming the
    outage threshold. Users with zero power transmit nothing and get
    ``P_so = 0``. ``h_e2`` optionally fixes Eve's channel gains, which only
    affects ``gamma_e`` and ``C_e`` (default: their means ``d_e^-alpha``).
    """
    p = np.asarray(alloc.p, dtype=float)
    gamma = sinr_vector(p, alloc.beta, ch)
    C_b = np.log2(1.0 + gamma)
    if h_e2 is None:
        h_e2 = 1.0 / ch.eve_rate_param
    gamma_e = h_e2 * p / cfg.sigma2_e
    theta = _theta(p, alloc.beta, alloc.R_s, ch, cfg)
    P_so = np.where(p > 0, outage_from_theta(theta, ch.eve_rate_param), 0.0)
    return LinkMetrics(gamma=gamma, C_b=C_b, gamma_e=gamma_e, C_e=np.log2(1.0 + gamma_e),
                       R_e=np.asarray(alloc.R_t, dtype=float) - np.asarray(alloc.R_s, dtype=float),
                       theta=theta, P_so=P_so)


def total_energy(alloc, cfg, active_time=None):
    """Local (DVFS at equal frequency) plus offloading energy.

    ``active_time`` is the transmit duration per user, ``T`` for NOMA and
    ``T/K`` for the TDMA benchmark.
    """
    T = cfg.T
    if active_time is None:
        active_time = T
    l = np.asarray(alloc.l, dtype=float)
    E_loc = cfg.varsigma * cfg.C ** 3 * l ** 3 / T ** 2
    E_off = np.asarray(alloc.p, dtype=float) * active_time
    return EnergyBreakdown(E_loc=E_loc, E_off=E_off, f_cpu=cfg.C * l / T,
                           total=float(E_loc.sum() + E_off.sum()))


def secrecy_rate(gamma, p, kappa):
    """Largest confidential rate with ``P_so <= eps``, given SINR and power.

    ``kappa`` is :attr:`SystemConfig.kappa`; the result is floored at zero and
    is zero for ``p = 0``.
    """
    gamma = np.asarray(gamma, dtype=float)
    p = np.asarray(p, dtype=float)
    r = (np.log1p(gamma) - np.log1p(kappa * p)) / np.log(2.0)
    return np.where(p > 0, np.maximum(r, 0.0), 0.0)


def max_secret_rate(p, beta, ch, cfg, k=None):
    """Confidential rate at which user ``k``'s outage equals ``epsilon`` exactly.

    Returns the full vector when ``k`` is None.
    """
    r = secrecy_rate(sinr_vector(p, beta, ch), p, cfg.kappa)
    return r if k is None else float(r[k])


def min_power_for_rate(rate, interference_plus_one, tau, kappa):
    """Smallest power reaching secrecy rate ``rate`` under fixed interference.

    Inverts ``log2((1 + a p) / (1 + kappa p)) = rate`` with ``a = tau / pi``.
    Returns ``inf`` where the rate exceeds the supremum ``log2(a / kappa)``.
    """
    a = tau / interference_plus_one
    q = 2.0 ** np.asarray(rate, dtype=float)
    denom = a - q * kappa
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(denom > 0, (q - 1.0) / denom, np.inf)
    return np.where(np.asarray(rate) <= 0, 0.0, p)


def round_decoding_order(p, ch):
    """Binary decoding order from received powers ``tau_k p_k``.

    ``beta[k, l] = 1`` iff user k's received power exceeds user l's; ties go
    to the lower index.
    """
    q = ch.tau * np.asarray(p, dtype=float)
    K = q.size
    idx = np.arange(K)
    beta = (q[:, None] > q[None, :]) | ((q[:, None] == q[None, :]) & (idx[:, None] < idx[None, :]))
    beta = beta.astype(float)
    np.fill_diagonal(beta, 0.0)
    return beta


def order_matrix(sequence, K=None):
    """Binary ``beta`` for a decoding sequence (first entry decoded first)."""
    sequence = list(sequence)
    K = len(sequence) if K is None else K
    beta = np.zeros((K, K))
    for a, k in enumerate(sequence):
        for l in sequence[a + 1:]:
            beta[k, l] = 1.0
    return beta


@dataclass
class FeasibilityReport:
    """Signed, scale-normalized violations of the original constraints (positive = violated)."""

    violations: dict = field(default_factory=dict)
    tol: float = 1e-6

    @property
    def worst(self):
        vals = [np.max(v) for v in self.violations.values() if np.size(v)]
        return float(max(vals)) if vals else 0.0

    @property
    def ok(self):
        return self.worst <= self.tol

    def failed(self):
        return {k: float(np.max(v)) for k, v in self.violations.items()
                if np.size(v) and np.max(v) > self.tol}


def feasibility_check(alloc, ch, cfg, tol=1e-6, active_time=None, secrecy=True, order=True):
    """Evaluate every constraint of the original energy-minimization problem.

    ``active_time`` shortens the offloading window (TDMA benchmark);
    ``secrecy=False`` drops the outage constraint for the no-Eve benchmark and
    ``order=False`` drops the decoding-order rows (orthogonal access).
    """
    T_off = cfg.T if active_time is None else active_time
    K = ch.K
    l = np.asarray(alloc.l, dtype=float)
    p = np.asarray(alloc.p, dtype=float)
    R_t = np.asarray(alloc.R_t, dtype=float)
    R_s = np.asarray(alloc.R_s, dtype=float)
    beta = np.asarray(alloc.beta, dtype=float)
    m = link_metrics(alloc, ch, cfg)
    Lscale = np.maximum(cfg.L, 1.0)

    v = {}
    v["offload_rate"] = (cfg.L - l - cfg.B * T_off * R_s) / Lscale
    v["decodable"] = (R_t - m.C_b) / np.maximum(1.0, m.C_b)
    v["redundancy"] = (R_s - R_t) / np.maximum(1.0, np.abs(R_t))
    if secrecy:
        v["secrecy_outage"] = (m.P_so - cfg.epsilon) / cfg.epsilon
    v["power_nonneg"] = -p / max(1.0, float(np.max(np.abs(p))))
    v["local_lower"] = -l / Lscale
    v["local_upper"] = (l - cfg.L) / Lscale
    if not order:
        return FeasibilityReport(violations=v, tol=tol)
    off = ~np.eye(K, dtype=bool)
    q = ch.tau * p
    qscale = max(float(np.max(q)), 1e-300)
    # received-power consistency of the decoding order, both directions of the pair
    order = np.where(beta >= 0.5, q[None, :] - q[:, None], 0.0)
    v["order_consistency"] = order[off] / qscale
    v["order_binary"] = np.minimum(np.abs(beta), np.abs(1.0 - beta))[off]
    pair = beta + beta.T - 1.0
    v["order_complement"] = np.abs(pair[np.triu_indices(K, 1)])
    return FeasibilityReport(violations=v, tol=tol)
