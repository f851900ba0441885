"""
Reformulation of the secure offloading problem into convex SCA subproblems.

The fractional SINR and the outage constraint are split with auxiliary
variables (SINR lower bound ``b``, interference upper bound ``pi``, and the
secrecy chain ``delta_s``, ``u``, ``w``, ``phi``); every bilinear product
is replaced by its first-order expansion around the current anchor. The
binary decoding order ``beta`` is relaxed to ``[0, 1]`` and pushed back to
binary by augmented-Lagrangian penalties coupling it to ``mu``.

Inside a subproblem, local bits are measured in units of ``L_ref`` (the
largest task size) so that all variables are O(1).
"""

from dataclasses import dataclass, field

import numpy as np

from .model import Allocation, interference, min_power_for_rate, order_matrix, sinr_vector

ANCHOR_FLOOR = 1e-9
POWER_FLOOR = 1e-9

SCHEMES = ("proposed", "fixed-sic", "no-eve")


@dataclass
class AuxPoint:
    b: np.ndarray
    pi: np.ndarray
    phi: np.ndarray
    u: np.ndarray
    w: np.ndarray
    mu: np.ndarray
    delta_s: np.ndarray

    def copy(self):
        return AuxPoint(*(np.array(a, dtype=float) for a in
                          (self.b, self.pi, self.phi, self.u, self.w, self.mu, self.delta_s)))


@dataclass
class PenaltyState:
    """The parts of the PDD state a subproblem needs: penalty, duals and ``mu``."""

    rho: float
    lambda1: np.ndarray
    lambda2: np.ndarray
    lambda3: np.ndarray
    mu: np.ndarray


class Layout:
    """Variable catalog of a subproblem.

    ``secure=False`` drops the secrecy chain (the codeword rate then carries
    the offloaded data); ``order_free=False`` freezes ``beta`` so it is a
    constant rather than a variable.
    """

    def __init__(self, K, secure=True, order_free=True):
        self.K = K
        self.secure = secure
        self.order_free = order_free
        names = ["l", "p", "Rt"]
        if secure:
            names += ["Rs", "ds", "phi", "u", "w"]
        names += ["b", "pi"]
        self.index = {name: np.arange(i * K, (i + 1) * K) for i, name in enumerate(names)}
        n = len(names) * K
        self.pairs = [(k, l) for k in range(K) for l in range(K) if k != l] if order_free else []
        if order_free:
            self.index["beta"] = np.arange(n, n + len(self.pairs))
            n += len(self.pairs)
        self.n = n
        self._pair_pos = {kl: j for j, kl in enumerate(self.pairs)}

    def beta_var(self, k, l):
        return self.index["beta"][self._pair_pos[(k, l)]]

    def pack(self, alloc, aux, L_ref):
        x = np.zeros(self.n)
        ix = self.index
        x[ix["l"]] = alloc.l / L_ref
        x[ix["p"]] = alloc.p
        x[ix["Rt"]] = alloc.R_t
        if self.secure:
            x[ix["Rs"]] = alloc.R_s
            x[ix["ds"]] = aux.delta_s
            x[ix["phi"]] = aux.phi
            x[ix["u"]] = aux.u
            x[ix["w"]] = aux.w
        x[ix["b"]] = aux.b
        x[ix["pi"]] = aux.pi
        if self.order_free:
            x[ix["beta"]] = [alloc.beta[k, l] for k, l in self.pairs]
        return x

    def unpack(self, x, L_ref, beta_fixed=None, mu=None):
        ix = self.index
        K = self.K
        if self.order_free:
            beta = np.zeros((K, K))
            for j, (k, l) in enumerate(self.pairs):
                beta[k, l] = x[ix["beta"][j]]
        else:
            beta = np.array(beta_fixed, dtype=float)
        R_t = x[ix["Rt"]].copy()
        if self.secure:
            R_s = x[ix["Rs"]].copy()
            ds, phi, u, w = (x[ix[n]].copy() for n in ("ds", "phi", "u", "w"))
        else:
            R_s = R_t.copy()
            ds = 2.0 ** R_s
            phi = u = w = np.full(K, np.nan)
        alloc = Allocation(l=x[ix["l"]] * L_ref, p=x[ix["p"]].copy(), R_t=R_t, R_s=R_s, beta=beta)
        aux = AuxPoint(b=x[ix["b"]].copy(), pi=x[ix["pi"]].copy(), phi=phi, u=u, w=w,
                       mu=beta.copy() if mu is None else np.array(mu, dtype=float), delta_s=ds)
        return alloc, aux


@dataclass
class ConvexSubproblem:
    """Convex program in the form consumed by :func:`nomasec.subsolver.solve`.

    ``row_labels`` names the constraint family of each affine row; ``anchor``
    is the ``(Allocation, AuxPoint)`` the surrogates were expanded around.
    """

    layout: Layout
    L_ref: float
    const: float
    c: np.ndarray
    Q: np.ndarray
    cubic_idx: np.ndarray
    cubic_coef: np.ndarray
    G: np.ndarray
    h: np.ndarray
    row_labels: list
    log_i: np.ndarray
    log_j: np.ndarray
    log_scale: np.ndarray
    exp_i: np.ndarray
    exp_j: np.ndarray
    exp_scale: np.ndarray
    anchor: tuple = None
    beta_fixed: np.ndarray = None

    @property
    def n(self):
        return self.layout.n

    def rows(self, label):
        return np.array([i for i, r in enumerate(self.row_labels) if r == label], dtype=int)


def descending_order(K):
    return order_matrix(range(K), K)


def tighten_aux(alloc, ch, cfg, mu=None):
    """Auxiliary variables at their tightest values for a given allocation."""
    p = np.asarray(alloc.p, dtype=float)
    pi = interference(p, alloc.beta, ch.tau)
    b = sinr_vector(p, alloc.beta, ch)
    ds = 2.0 ** np.asarray(alloc.R_s, dtype=float)
    u = pi * ds
    w = np.maximum(p, POWER_FLOOR) * u
    phi = (pi + ch.tau * p - u) / w
    return AuxPoint(b=b, pi=pi, phi=phi, u=u, w=w,
                    mu=np.array(alloc.beta, dtype=float) if mu is None else mu, delta_s=ds)


def init_point(cfg, ch, scheme="proposed"):
    """Deterministic feasible starting point.

    Half of every task is computed locally and users are decoded in order of
    descending gain. Powers are the minimum that meets each user's offloading
    rate under the secrecy constraint; since a user only sees interference
    from users decoded after it, one pass in reverse decoding order yields
    the exact fixed point. Users that cannot reach their rate at any power
    compute everything locally and are moved to the end of the decoding order
    with zero power. Each earlier-decoded user is lifted, if needed,
    to keep its received power above the next one's.
    """
    K = ch.K
    kappa = cfg.kappa if scheme != "no-eve" else np.zeros(K)
    L = np.asarray(cfg.L, dtype=float)
    fallback = L <= 0
    while True:
        l = np.where(fallback, L, L / 2.0)
        rate = (L - l) / cfg.BT
        sequence = [k for k in range(K) if not fallback[k]] + [k for k in range(K) if fallback[k]]
        beta = order_matrix(sequence, K)
        p = np.zeros(K)
        q_next = 0.0
        newly = False
        for k in reversed(sequence):
            if fallback[k]:
                p[k] = 0.0
            else:
                pi_k = 1.0 + float(beta[k] @ (ch.tau * p))
                pk = float(min_power_for_rate(rate[k], pi_k, ch.tau[k], kappa[k]))
                if not np.isfinite(pk):
                    fallback[k] = True
                    newly = True
                    break
                p[k] = max(pk, POWER_FLOOR)
            p[k] = max(p[k], q_next * (1.0 + 1e-6) / ch.tau[k])
            q_next = ch.tau[k] * p[k]
        if not newly:
            break
    gamma = sinr_vector(p, beta, ch)
    C_b = np.log2(1.0 + gamma)
    R_s = np.minimum(rate, C_b)
    R_t = C_b.copy()
    if scheme == "no-eve":
        R_s = R_t.copy()
    alloc = Allocation(l=l, p=p, R_t=R_t, R_s=R_s, beta=beta)
    return alloc, tighten_aux(alloc, ch, cfg)


def phi_min(cfg):
    """Smallest admissible secrecy auxiliary: ``-ln(eps) / (sigma_e^2 d_e^alpha)``."""
    return cfg.kappa


def al_penalty(beta, mu, rho, lambda1, lambda2, lambda3):
    """Augmented-Lagrangian penalty of the three equality families, off-diagonal only."""
    K = beta.shape[0]
    off = ~np.eye(K, dtype=bool)
    r1 = (beta - mu + rho * lambda1)[off]
    r2 = (beta * (1.0 - mu) + rho * lambda2)[off]
    k, l = np.tril_indices(K, -1)
    r3 = beta[k, l] + beta[l, k] - 1.0 + rho * lambda3[k, l]
    return float((r1 @ r1 + r2 @ r2 + r3 @ r3) / (2.0 * rho))


def violation_vector(alloc, aux):
    """Residuals of ``beta = mu``, ``beta (1 - mu) = 0`` and ``beta_kl + beta_lk = 1``.

    Returns ``(g1, g2, g3), norm_inf``: the first two are K-by-K matrices with
    zero diagonal, the third lower-triangular (pairs ``l < k``).
    """
    beta = np.asarray(alloc.beta, dtype=float)
    mu = np.asarray(aux.mu, dtype=float)
    K = beta.shape[0]
    off = ~np.eye(K, dtype=bool)
    g1 = np.where(off, beta - mu, 0.0)
    g2 = np.where(off, beta * (1.0 - mu), 0.0)
    g3 = np.tril(beta + beta.T - 1.0, -1)
    norm = max(np.max(np.abs(g1), initial=0.0), np.max(np.abs(g2), initial=0.0),
               np.max(np.abs(g3), initial=0.0))
    return (g1, g2, g3), float(norm)


def linearize(anchor, cfg, ch, penalty=None, scheme="proposed", floor=ANCHOR_FLOOR):
    """Build the convex subproblem around ``anchor = (Allocation, AuxPoint)``.

    ``penalty`` (a :class:`PenaltyState`) is required when the decoding
    order is free. For the fixed-order scheme the anchor's ``beta`` is used
    as a constant and the order constraints become exact linear ones.
    """
    alloc, aux = anchor
    K = ch.K
    secure = scheme != "no-eve"
    order_free = scheme != "fixed-sic"
    lay = Layout(K, secure=secure, order_free=order_free)
    ix = lay.index
    n = lay.n
    L = np.asarray(cfg.L, dtype=float)
    L_ref = max(float(L.max()), 1.0)
    tau = ch.tau

    p_i = np.maximum(np.asarray(alloc.p, dtype=float), floor)
    beta_i = np.array(alloc.beta, dtype=float)
    b_i = np.maximum(aux.b, 0.0)
    pi_i = aux.pi

    rows, rhs, labels = [], [], []

    def add(coefs, bound, label):
        row = np.zeros(n)
        for j, v in coefs:
            row[j] += v
        rows.append(row)
        rhs.append(bound)
        labels.append(label)

    for k in range(K):
        il, ip, iRt, ib, ipi = (ix[v][k] for v in ("l", "p", "Rt", "b", "pi"))
        add([(il, -1.0)], 0.0, "local_lower")
        add([(il, 1.0)], L[k] / L_ref, "local_upper")
        add([(ip, -1.0)], 0.0, "power_nonneg")
        rate_var = ix["Rs"][k] if secure else iRt
        add([(rate_var, -cfg.BT / L_ref), (il, -1.0)], -L[k] / L_ref, "offload_rate")
        add([(ib, -1.0)], 0.0, "sinr_nonneg")
        # interference bound: exact when the order is frozen, linearized in (beta, p) otherwise
        coefs = [(ipi, -1.0)]
        bound = -1.0
        for l in range(K):
            if l == k:
                continue
            if order_free:
                jb = lay.beta_var(k, l)
                coefs += [(jb, tau[l] * p_i[l]), (ix["p"][l], tau[l] * beta_i[k, l])]
                bound += tau[l] * beta_i[k, l] * p_i[l]
            elif beta_i[k, l] > 0:
                coefs.append((ix["p"][l], tau[l] * beta_i[k, l]))
        add(coefs, bound, "interference")
        add([(ipi, b_i[k]), (ib, pi_i[k]), (ip, -tau[k])], b_i[k] * pi_i[k], "sinr_product")
        if secure:
            iRs, ids, iphi, iu, iw = (ix[v][k] for v in ("Rs", "ds", "phi", "u", "w"))
            ds_i, phi_i = aux.delta_s[k], aux.phi[k]
            w_i = max(aux.w[k], floor)
            u_i = aux.u[k]
            add([(iRs, 1.0), (iRt, -1.0)], 0.0, "redundancy")
            add([(ids, pi_i[k]), (ipi, ds_i), (iu, -1.0)], pi_i[k] * ds_i, "secrecy_u")
            add([(iw, phi_i), (iphi, w_i), (ipi, -1.0), (ip, -tau[k]), (iu, 1.0)],
                phi_i * w_i, "secrecy_phi")
            add([(iu, p_i[k]), (ip, u_i), (iw, -1.0)], p_i[k] * u_i, "secrecy_w")
            add([(iphi, -1.0)], -float(cfg.kappa[k]), "secrecy_outage")

    if order_free:
        for k, l in lay.pairs:
            jb = lay.beta_var(k, l)
            add([(jb, -1.0)], 0.0, "beta_lower")
            add([(jb, 1.0)], 1.0, "beta_upper")
            # order consistency, scaled by tau_l to compare received powers
            add([(jb, tau[l] * p_i[l]), (ix["p"][l], tau[l] * beta_i[k, l]), (ix["p"][k], -tau[k])],
                tau[l] * p_i[l] * beta_i[k, l], "order")
    else:
        for k in range(K):
            for l in range(K):
                if k != l and beta_i[k, l] > 0.5:
                    add([(ix["p"][l], tau[l]), (ix["p"][k], -tau[k])], 0.0, "order")

    c = np.zeros(n)
    c[ix["p"]] = cfg.T
    Q = np.zeros((n, n))
    const = 0.0
    if order_free:
        if penalty is None:
            raise ValueError("a PenaltyState is required when the decoding order is free")
        rho = penalty.rho
        for k, l in lay.pairs:
            j = lay.beta_var(k, l)
            mu = penalty.mu[k, l]
            r1 = -mu + rho * penalty.lambda1[k, l]
            Q[j, j] += 1.0 / rho
            c[j] += r1 / rho
            const += r1 ** 2 / (2 * rho)
            a = 1.0 - mu
            Q[j, j] += a * a / rho
            c[j] += a * penalty.lambda2[k, l]
            const += rho * penalty.lambda2[k, l] ** 2 / 2
        for k in range(K):
            for l in range(k):
                v = np.zeros(n)
                v[lay.beta_var(k, l)] = 1.0
                v[lay.beta_var(l, k)] = 1.0
                r3 = rho * penalty.lambda3[k, l] - 1.0
                Q += np.outer(v, v) / rho
                c += v * r3 / rho
                const += r3 ** 2 / (2 * rho)

    cubic_idx = ix["l"].copy()
    cubic_coef = cfg.varsigma * cfg.C ** 3 * L_ref ** 3 / cfg.T ** 2

    if secure:
        exp_i, exp_j = ix["Rs"].copy(), ix["ds"].copy()
    else:
        exp_i = exp_j = np.zeros(0, dtype=int)
    return ConvexSubproblem(
        layout=lay, L_ref=L_ref, const=const, c=c, Q=Q, cubic_idx=cubic_idx,
        cubic_coef=np.asarray(cubic_coef, dtype=float), G=np.array(rows), h=np.array(rhs),
        row_labels=labels, log_i=ix["Rt"].copy(), log_j=ix["b"].copy(), log_scale=np.ones(K),
        exp_i=exp_i, exp_j=exp_j, exp_scale=np.ones(exp_i.size), anchor=(alloc, aux),
        beta_fixed=None if order_free else beta_i)


def energy_of(sub, x):
    """Sum energy part of the subproblem objective (no penalties)."""
    ix = sub.layout.index
    xl = np.maximum(x[ix["l"]], 0.0)
    return float(sub.cubic_coef @ xl ** 3 + sub.c[ix["p"]] @ x[ix["p"]])
