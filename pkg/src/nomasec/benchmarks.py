"""Comparison schemes: equal-slot TDMA, fixed SIC order, and no eavesdropper."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from . import pdd
from .model import Allocation, feasibility_check, min_power_for_rate, total_energy


@dataclass
class BenchmarkResult:
    scheme: str
    allocation: Allocation
    energy: object
    feasibility: object
    status: str = "converged"
    solve: object = None

    @property
    def total(self):
        return self.energy.total


def _oma_power(l, L, slot_bits, tau, kappa):
    rate = (L - l) / slot_bits
    return float(min_power_for_rate(rate, 1.0, tau, kappa))


def oma_user(L, tau, kappa, slot_bits, T, slot, local_coef, xatol=None):
    """Best ``(l, p, R_s)`` for one user alone in a slot of length ``slot``.

    ``slot_bits`` is ``B * slot``; ``local_coef`` is ``varsigma C^3 / T^2``.
    The energy is convex in ``l`` (the minimal power is a convex increasing
    function of the rate, which is affine in ``l``), so a bounded scalar
    search over ``l`` with the power in closed form is exact up to ``xatol``.
    """
    if L <= 0:
        return 0.0, 0.0, 0.0
    if kappa > 0 and tau <= kappa:
        return L, 0.0, 0.0
    # rates at or above log2(tau/kappa) cannot be reached at any power
    r_sup = np.log2(tau / kappa) if kappa > 0 else np.inf
    lo = max(0.0, L - slot_bits * r_sup)
    lo += 1e-12 * L if lo > 0 else 0.0
    xatol = 1e-9 * L if xatol is None else xatol

    def energy(l):
        return local_coef * l ** 3 + _oma_power(l, L, slot_bits, tau, kappa) * slot

    res = minimize_scalar(energy, bounds=(lo, L), method="bounded", options={"xatol": xatol})
    l = float(res.x)
    if energy(L) <= res.fun:
        l = float(L)
    p = _oma_power(l, L, slot_bits, tau, kappa)
    return l, p, (L - l) / slot_bits


def solve_oma(cfg, ch, secure=True):
    """Equal time slots ``T/K``, one user per slot, no interference.

    Local computing still has the whole frame ``T``. Users are independent
    so each gets its own one-dimensional search.
    """
    K = ch.K
    slot = cfg.T / K
    kappa = np.broadcast_to(cfg.kappa if secure else 0.0, (K,))
    L = np.asarray(cfg.L, dtype=float)
    coef = cfg.varsigma * cfg.C ** 3 / cfg.T ** 2
    l, p, R_s = np.zeros(K), np.zeros(K), np.zeros(K)
    for k in range(K):
        l[k], p[k], R_s[k] = oma_user(L[k], ch.tau[k], kappa[k], cfg.B * slot, cfg.T, slot, coef[k])
    R_t = np.log2(1.0 + ch.tau * p)
    # no interference: an all-zero order matrix
    alloc = Allocation(l=l, p=p, R_t=R_t, R_s=np.minimum(R_s, R_t), beta=np.zeros((K, K)))
    energy = total_energy(alloc, cfg, active_time=slot)
    feas = feasibility_check(alloc, ch, cfg, active_time=slot, secrecy=secure, order=False)
    return BenchmarkResult(scheme="secure-oma" if secure else "oma", allocation=alloc,
                           energy=energy, feasibility=feas,
                           status="converged" if feas.ok else "infeasible-final")


def _wrap(res, tag):
    return BenchmarkResult(scheme=tag, allocation=res.allocation, energy=res.energy,
                           feasibility=res.feasibility, status=res.status, solve=res)


def solve_proposed(cfg, ch, pcfg=None):
    return _wrap(pdd.solve(cfg, ch, pcfg, scheme="proposed"), "proposed")


def solve_fixed_sic(cfg, ch, pcfg=None):
    """Decoding order frozen to descending channel gain."""
    return _wrap(pdd.solve(cfg, ch, pcfg, scheme="fixed-sic"), "fixed-sic")


def solve_no_eve(cfg, ch, pcfg=None):
    """No secrecy constraint; the whole decodable rate carries task bits."""
    return _wrap(pdd.solve(cfg, ch, pcfg, scheme="no-eve"), "no-eve")


SOLVERS = {
    "proposed": solve_proposed,
    "fixed-sic": solve_fixed_sic,
    "no-eve": solve_no_eve,
    "secure-oma": lambda cfg, ch, pcfg=None: solve_oma(cfg, ch),
}


def run_scheme(name, cfg, ch, pcfg=None):
    try:
        fn = SOLVERS[name]
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}; expected one of {sorted(SOLVERS)}") from None
    return fn(cfg, ch, pcfg)
