"""
Penalty dual decomposition driver.

The inner loop alternates the closed-form ``mu`` update with one convex
subproblem solve per SCA step until the augmented-Lagrangian objective
stalls. The outer loop either takes a dual step (violation below the
current threshold ``eta_j = 0.3^j``) or shrinks the penalty by ``c``.
At exit the decoding order is rounded from the received powers and the
rates and local bits are re-derived exactly from the final powers.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import subsolver
from .model import (Allocation, ChannelRealization, feasibility_check, order_matrix, round_decoding_order,
                    secrecy_rate, sinr_vector, total_energy)
from .transform import (ANCHOR_FLOOR, AuxPoint, PenaltyState, al_penalty, energy_of, init_point,
                        linearize, tighten_aux, violation_vector)


class SubproblemFailure(RuntimeError):
    pass


@dataclass
class PddConfig:
    rho0: float = 10.0
    c: float = 0.6
    eta_base: float = 0.3
    delta_outer: float = 1e-4
    delta_inner: float = 1e-4
    I_max: int = 50
    outer_cap: int = 100
    rho_floor: float = 1e-8
    sub_tol: float = 1e-8
    anchor_floor: float = ANCHOR_FLOOR
    retry_floor: float = 1e-6
    max_newton: int = 200
    feas_tol: float = 1e-6


@dataclass
class PddState:
    rho: float
    lambda1: np.ndarray
    lambda2: np.ndarray
    lambda3: np.ndarray
    c: float = 0.6
    eta_base: float = 0.3
    delta: float = 1e-4
    I_max: int = 50
    i: int = 0
    j: int = 0
    trace: list = field(default_factory=list)
    outer_trace: list = field(default_factory=list)

    @classmethod
    def initial(cls, K, cfg=None):
        cfg = PddConfig() if cfg is None else cfg
        z = np.zeros((K, K))
        return cls(rho=cfg.rho0, lambda1=z.copy(), lambda2=z.copy(), lambda3=z.copy(), c=cfg.c,
                   eta_base=cfg.eta_base, delta=cfg.delta_inner, I_max=cfg.I_max)

    @property
    def eta(self):
        return self.eta_base ** self.j


@dataclass
class SolveResult:
    scheme: str
    allocation: Allocation
    aux: AuxPoint
    energy: object
    feasibility: object
    status: str
    trace: list
    outer_trace: list
    sca_energy: float = float("nan")
    repair_delta: float = 0.0
    g_inf: float = 0.0
    max_kkt: float = 0.0
    subproblems: int = 0
    wall_time: float = 0.0

    @property
    def total(self):
        return self.energy.total


def mu_update(beta, rho, lambda1, lambda2):
    """Minimizer over ``mu`` of the two ``beta``/``mu`` penalty terms."""
    beta = np.asarray(beta, dtype=float)
    mu = (beta + beta ** 2 + rho * lambda1 + rho * lambda2 * beta) / (1.0 + beta ** 2)
    if mu.ndim == 2:
        np.fill_diagonal(mu, 0.0)
    return mu


def outer_update(state, g):
    """One outer PDD step. ``g`` is the output of :func:`violation_vector`.

    Returns the branch taken, ``"dual"`` or ``"penalty"``. The penalty floor is
    enforced by the caller.
    """
    (g1, g2, g3), norm = g
    if norm <= state.eta:
        state.lambda1 = state.lambda1 + g1 / state.rho
        state.lambda2 = state.lambda2 + g2 / state.rho
        state.lambda3 = state.lambda3 + g3 / state.rho
        branch = "dual"
    else:
        branch = "penalty"
        state.rho = state.c * state.rho
    state.j += 1
    return branch


def _penalty(state, mu):
    return PenaltyState(rho=state.rho, lambda1=state.lambda1, lambda2=state.lambda2,
                        lambda3=state.lambda3, mu=mu)


def _al_objective(alloc, aux, cfg, state, order_free):
    E = total_energy(alloc, cfg).total
    if not order_free:
        return E
    return E + al_penalty(alloc.beta, aux.mu, state.rho, state.lambda1, state.lambda2, state.lambda3)


def _solve_step(anchor, cfg, ch, state, mu, scheme, pcfg, warm):
    floors = (pcfg.anchor_floor, pcfg.retry_floor)
    last = None
    for attempt, floor in enumerate(floors):
        a_alloc, a_aux = anchor
        if attempt:
            # retry from a tightened anchor
            a_aux = tighten_aux(a_alloc, ch, cfg, mu=a_aux.mu)
            warm = None
        sub = linearize((a_alloc, a_aux), cfg, ch, _penalty(state, mu), scheme=scheme, floor=floor)
        x0 = sub.layout.pack(a_alloc, a_aux, sub.L_ref)
        lam0 = warm if warm is not None and warm.size == sub.G.shape[0] + sub.log_i.size + sub.exp_i.size else None
        sol = subsolver.solve(sub, x0, tol=pcfg.sub_tol, lam0=lam0, max_iter=pcfg.max_newton)
        if sol.optimal:
            return sub, sol
        last = sol
    raise SubproblemFailure(f"subproblem {last.status} (kkt={last.kkt:.3e})")


def inner_loop(state, anchor, cfg, ch, scheme="proposed", pcfg=None):
    """Run SCA steps at fixed penalty and duals; returns ``(anchor, stats)``."""
    pcfg = PddConfig() if pcfg is None else pcfg
    order_free = scheme != "fixed-sic"
    alloc, aux = anchor
    warm = None
    stats = {"iterations": 0, "max_kkt": 0.0}
    f_prev = None
    state.i = 0
    while True:
        mu = mu_update(alloc.beta, state.rho, state.lambda1, state.lambda2) if order_free else alloc.beta
        aux = aux.copy()
        aux.mu = mu
        if f_prev is None:
            f_prev = _al_objective(alloc, aux, cfg, state, order_free)
        sub, sol = _solve_step((alloc, aux), cfg, ch, state, mu, scheme, pcfg, warm)
        warm = sol.lam
        alloc, aux = sub.layout.unpack(sol.x, sub.L_ref, beta_fixed=sub.beta_fixed, mu=mu)
        f = sol.objective
        state.i += 1
        stats["iterations"] += 1
        stats["max_kkt"] = max(stats["max_kkt"], sol.kkt)
        _, gn = violation_vector(alloc, aux) if order_free else (None, 0.0)
        state.trace.append({"outer": state.j, "inner": state.i, "energy": energy_of(sub, sol.x),
                            "objective": f, "g_inf": gn, "rho": state.rho})
        rel = abs(f - f_prev) / max(abs(f_prev), 1e-300)
        f_prev = f
        if rel <= state.delta or state.i >= state.I_max:
            break
    return (alloc, aux), stats


def _consistent_order(beta, p, ch, rtol):
    """Binary order from a relaxed ``beta`` if it matches the received powers.

    Returns ``(beta, p)`` with earlier-decoded users lifted onto the received
    power of the strongest later one, or ``None`` when the mismatch exceeds
    ``rtol``. The optimizer typically ends with two received powers equal, and
    rounding from powers alone would then pick the order from floating-point
    noise.
    """
    K = ch.K
    B = (np.asarray(beta) > 0.5).astype(float)
    np.fill_diagonal(B, 0.0)
    if not np.all(B + B.T + np.eye(K) == 1.0):
        return None
    # position in the decoding sequence = number of users decoded later
    sequence = np.argsort(-B.sum(axis=1), kind="stable")
    p = p.copy()
    q = ch.tau * p
    qmax = max(float(q.max()), 1e-300)
    q_next = 0.0
    for k in sequence[::-1]:
        if q[k] < q_next:
            if q_next - q[k] > rtol * qmax:
                return None
            p[k] = q_next / ch.tau[k]
            q[k] = q_next
        q_next = q[k]
    return B, p


def repair(p, cfg, ch, secure=True, beta=None, rtol=1e-6):
    """Exact allocation implied by transmit powers ``p``.

    The decoding order is taken from ``beta`` when it agrees with the received
    powers up to ``rtol``, otherwise rounded from the powers. Each user's
    confidential rate is then the largest value meeting the outage target and
    the remaining bits are computed locally. Users that cannot carry any
    confidential data are switched off, and the loop repeats until stable.
    """
    p = np.array(p, dtype=float)
    p[p < 0] = 0.0
    L = np.asarray(cfg.L, dtype=float)
    while True:
        hint = _consistent_order(beta, p, ch, rtol) if beta is not None else None
        if hint is None:
            B = round_decoding_order(p, ch)
        else:
            B, p = hint
        gamma = sinr_vector(p, B, ch)
        C_b = np.log2(1.0 + gamma)
        R_s = secrecy_rate(gamma, p, cfg.kappa) if secure else np.where(p > 0, C_b, 0.0)
        dead = (p > 0) & ((R_s <= 0) | (L <= 0))
        if not np.any(dead):
            break
        p[dead] = 0.0
    R_t = np.where(p > 0, C_b, 0.0)
    l = np.clip(L - cfg.BT * R_s, 0.0, L)
    return Allocation(l=l, p=p, R_t=R_t, R_s=R_s, beta=B)


def _subset(cfg, ch, idx):
    sub_cfg = cfg.reordered(idx)
    sub_ch = ChannelRealization(g2=ch.g2[idx], tau=ch.tau[idx], eve_rate_param=ch.eve_rate_param[idx])
    return sub_cfg, sub_ch


def active_users(cfg, ch, secure=True):
    """Users that can take part in offloading.

    Zero-size tasks never transmit; under the secrecy constraint a user whose
    interference-free gain does not beat ``kappa`` cannot offload any
    confidential bit at any power.
    """
    act = np.asarray(cfg.L) > 0
    if secure:
        act &= ch.tau > cfg.kappa
    return np.flatnonzero(act)


def solve(cfg, ch, pcfg=None, scheme="proposed"):
    """Minimize the sum energy with the PDD/SCA algorithm.

    ``scheme`` selects the full problem (``"proposed"``), the descending-gain
    fixed decoding order (``"fixed-sic"``), or no eavesdropper
    (``"no-eve"``).
    """
    t0 = time.perf_counter()
    pcfg = PddConfig() if pcfg is None else pcfg
    secure = scheme != "no-eve"
    order_free = scheme != "fixed-sic"
    K = ch.K
    act = active_users(cfg, ch, secure)
    p_full = np.zeros(K)
    beta_full = None
    trace, outer_trace = [], []
    status = "converged"
    gn = 0.0
    max_kkt = 0.0
    n_sub = 0
    sca_energy = 0.0

    if act.size:
        scfg, sch = _subset(cfg, ch, act)
        state = PddState.initial(act.size, pcfg)
        anchor = init_point(scfg, sch, scheme)
        try:
            for _ in range(pcfg.outer_cap if order_free else 1):
                anchor, stats = inner_loop(state, anchor, scfg, sch, scheme, pcfg)
                n_sub += stats["iterations"]
                max_kkt = max(max_kkt, stats["max_kkt"])
                g, gn = violation_vector(*anchor) if order_free else ((None,) * 3, 0.0)
                outer_trace.append({"outer": state.j, "g_inf": gn, "rho": state.rho,
                                    "energy": state.trace[-1]["energy"], "inner": state.i})
                if gn <= pcfg.delta_outer:
                    break
                if state.rho * state.c < pcfg.rho_floor and gn > state.eta:
                    status = "iteration-cap"
                    break
                outer_update(state, (g, gn))
            else:
                if order_free:
                    status = "iteration-cap"
            if not order_free and state.i >= state.I_max:
                status = "iteration-cap"
        except SubproblemFailure:
            status = "subsolver-failure"
        trace, outer_trace = state.trace, outer_trace
        p_full[act] = anchor[0].p
        # inactive users have zero power and go last
        sequence = list(act[np.argsort(-anchor[0].beta.sum(axis=1), kind="stable")])
        sequence += [k for k in range(K) if k not in set(act)]
        beta_full = order_matrix(sequence, K)
        sca_energy = total_energy(anchor[0], scfg).total
    idle = np.setdiff1d(np.arange(K), act)
    sca_energy += float(np.sum(cfg.varsigma[idle] * cfg.C[idle] ** 3 * cfg.L[idle] ** 3) / cfg.T ** 2)

    alloc = repair(p_full, cfg, ch, secure=secure, beta=beta_full)
    energy = total_energy(alloc, cfg)
    feas = feasibility_check(alloc, ch, cfg, tol=pcfg.feas_tol, secrecy=secure)
    if status == "converged" and not feas.ok:
        status = "infeasible-final"
    aux = tighten_aux(alloc, ch, cfg)
    return SolveResult(scheme=scheme, allocation=alloc, aux=aux, energy=energy, feasibility=feas,
                       status=status, trace=trace, outer_trace=outer_trace, sca_energy=sca_energy,
                       repair_delta=energy.total - sca_energy, g_inf=gn, max_kkt=max_kkt,
                       subproblems=n_sub, wall_time=time.perf_counter() - t0)
