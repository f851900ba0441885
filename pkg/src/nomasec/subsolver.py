"""
Dense primal-dual interior-point solver for the convex SCA subproblems.

The solver handles programs of the form

    minimize    const + c'x + x'Qx/2 + sum_j a_j max(x_{i_j}, 0)^3
    subject to  G x <= h
                s_j (x_{i_j} - log2(1 + x_{k_j})) <= 0
                s_j (2^{x_{i_j}} - x_{k_j}) <= 0

which covers every constraint class emitted by :mod:`nomasec.transform`.
Any object exposing the attributes of :class:`nomasec.transform.ConvexSubproblem`
can be passed in.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

LN2 = np.log(2.0)


@dataclass
class SubproblemSolution:
    x: np.ndarray
    lam: np.ndarray
    objective: float
    kkt: float
    iterations: int
    status: str
    phase1_iterations: int = 0

    @property
    def optimal(self):
        return self.status == "optimal"


def objective(sub, x):
    xc = np.maximum(x[sub.cubic_idx], 0.0)
    return float(sub.const + sub.c @ x + 0.5 * x @ sub.Q @ x + sub.cubic_coef @ xc ** 3)


def objective_grad(sub, x):
    g = sub.c + sub.Q @ x
    xc = np.maximum(x[sub.cubic_idx], 0.0)
    np.add.at(g, sub.cubic_idx, 3.0 * sub.cubic_coef * xc ** 2)
    return g


def objective_hess(sub, x):
    H = np.array(sub.Q, dtype=float)
    xc = np.maximum(x[sub.cubic_idx], 0.0)
    H[sub.cubic_idx, sub.cubic_idx] += 6.0 * sub.cubic_coef * xc
    return H


def constraints(sub, x):
    """Constraint values ``f(x)`` (feasible iff all <= 0) and Jacobian.

    Values outside the domain of the log rows come back as ``+inf``.
    """
    n = x.size
    nl, ne = len(sub.log_i), len(sub.exp_i)
    f = np.empty(sub.G.shape[0] + nl + ne)
    D = np.zeros((f.size, n))
    m0 = sub.G.shape[0]
    f[:m0] = sub.G @ x - sub.h
    D[:m0] = sub.G
    if nl:
        arg = 1.0 + x[sub.log_j]
        with np.errstate(invalid="ignore", divide="ignore"):
            val = x[sub.log_i] - np.log2(arg)
        f[m0:m0 + nl] = np.where(arg > 0, sub.log_scale * val, np.inf)
        rows = np.arange(m0, m0 + nl)
        D[rows, sub.log_i] += sub.log_scale
        D[rows, sub.log_j] -= sub.log_scale / (np.maximum(arg, 1e-300) * LN2)
    if ne:
        with np.errstate(over="ignore"):
            e = 2.0 ** x[sub.exp_i]
        f[m0 + nl:] = sub.exp_scale * (e - x[sub.exp_j])
        rows = np.arange(m0 + nl, m0 + nl + ne)
        D[rows, sub.exp_i] += sub.exp_scale * LN2 * e
        D[rows, sub.exp_j] -= sub.exp_scale
    return f, D


def _constraint_hess(sub, x, lam):
    n = x.size
    H = np.zeros((n, n))
    m0 = sub.G.shape[0]
    nl = len(sub.log_i)
    if nl:
        arg = 1.0 + x[sub.log_j]
        w = lam[m0:m0 + nl] * sub.log_scale / (arg ** 2 * LN2)
        np.add.at(H, (sub.log_j, sub.log_j), w)
    if len(sub.exp_i):
        w = lam[m0 + nl:] * sub.exp_scale * LN2 ** 2 * 2.0 ** x[sub.exp_i]
        np.add.at(H, (sub.exp_i, sub.exp_i), w)
    return H


def kkt_residual(sub, x, lam):
    """Largest of stationarity (inf-norm), primal violation and complementarity."""
    f, D = constraints(sub, x)
    stat = np.max(np.abs(objective_grad(sub, x) + D.T @ lam)) if x.size else 0.0
    prim = max(float(np.max(f)), 0.0) if f.size else 0.0
    comp = float(np.max(np.abs(lam * f))) if f.size else 0.0
    return float(max(stat, prim, comp))


def _newton_step(H, D, f, lam, r_dual, r_cent):
    """Primal-dual Newton step from the symmetric augmented system.

    ``[[H, D'], [D, diag(f/lam)]] [dx; dlam] = [-r_dual; r_cent/lam]`` keeps the
    tiny ``f/lam`` entries instead of the huge ``lam/f`` weights of the reduced
    normal equations, which matters once constraints are within 1e-10 of
    activity.
    """
    n, m = H.shape[0], f.size
    K = np.empty((n + m, n + m))
    K[:n, :n] = H
    K[:n, n:] = D.T
    K[n:, :n] = D
    K[n:, n:] = np.diag(f / lam)
    rhs = np.concatenate([-r_dual, r_cent / lam])
    if not (np.all(np.isfinite(K)) and np.all(np.isfinite(rhs))):
        return None, None
    try:
        lu = linalg.lu_factor(K, check_finite=False)
    except (linalg.LinAlgError, ValueError):
        return None, None
    with np.errstate(all="ignore"):
        sol = linalg.lu_solve(lu, rhs, check_finite=False)
        sol += linalg.lu_solve(lu, rhs - K @ sol, check_finite=False)
    if not np.all(np.isfinite(sol)):
        return None, None
    return sol[:n], sol[n:]


def _pdip(fun, grad, hess, cons, chess, x, lam, tol, max_iter, sigma, alpha, backtrack, stop=None):
    """Core primal-dual iteration shared by phase I and phase II.

    Returns ``(x, lam, iterations, status)``.
    """
    m = lam.size
    f, D = cons(x)
    for it in range(max_iter + 1):
        g0 = grad(x)
        r_dual = g0 + D.T @ lam
        kkt = max(np.max(np.abs(r_dual)), max(float(np.max(f)), 0.0), float(np.max(np.abs(lam * f))))
        if kkt <= tol:
            return x, lam, it, "optimal"
        if stop is not None and stop(x, f):
            return x, lam, it, "stopped"
        if it == max_iter:
            break
        eta = float(-f @ lam)
        t = m / (sigma * max(eta, 1e-300))
        H = hess(x) + chess(x, lam)
        r_cent = -lam * f - 1.0 / t
        dx, dlam = _newton_step(H, D, f, lam, r_dual, r_cent)
        if dx is None:
            return x, lam, it, "numerically-degenerate"

        neg = dlam < 0
        s = min(1.0, 0.99 * float(np.min(-lam[neg] / dlam[neg]))) if np.any(neg) else 1.0
        res0 = np.sqrt(r_dual @ r_dual + r_cent @ r_cent)
        while True:
            xn = x + s * dx
            fn, Dn = cons(xn)
            if np.all(fn < 0):
                break
            s *= backtrack
            if s < 1e-16:
                return x, lam, it, "numerically-degenerate"
        while True:
            xn = x + s * dx
            lamn = lam + s * dlam
            fn, Dn = cons(xn)
            if np.all(fn < 0):
                rd = grad(xn) + Dn.T @ lamn
                rc = -lamn * fn - 1.0 / t
                if np.sqrt(rd @ rd + rc @ rc) <= (1.0 - alpha * s) * res0:
                    break
            s *= backtrack
            if s < 1e-16:
                break
        if s < 1e-16:
            return x, lam, it, "numerically-degenerate"
        x, lam, f, D = xn, lamn, fn, Dn
    return x, lam, max_iter, "max-iterations"


def _phase_one(sub, x0, tol, max_iter, sigma, alpha, backtrack):
    """Find a strictly feasible point by minimizing a common slack ``s``.

    Stops as soon as every constraint has slack at least ``depth``, or at the
    phase-I optimum if the feasible set is thinner than that.
    """
    n = x0.size
    f0, _ = constraints(sub, x0)
    if not np.all(np.isfinite(f0)):
        return None, 0
    s0 = float(np.max(f0)) + 1.0
    depth = 1e-3
    floor = 1.0

    def fun(z):
        return z[-1]

    def grad(z):
        g = np.zeros(n + 1)
        g[-1] = 1.0
        return g

    def hess(z):
        return np.zeros((n + 1, n + 1))

    def cons(z):
        f, D = constraints(sub, z[:n])
        m = f.size
        F = np.empty(m + 1)
        F[:m] = f - z[-1]
        F[m] = -z[-1] - floor
        J = np.zeros((m + 1, n + 1))
        J[:m, :n] = D
        J[:m, n] = -1.0
        J[m, n] = -1.0
        return F, J

    def chess(z, lam):
        H = np.zeros((n + 1, n + 1))
        H[:n, :n] = _constraint_hess(sub, z[:n], lam[:-1])
        return H

    def stop(z, F):
        return z[-1] <= -depth

    z = np.append(x0, s0)
    F, _ = cons(z)
    lam = 1.0 / -F
    z, lam, it, status = _pdip(fun, grad, hess, cons, chess, z, lam, tol, max_iter,
                               sigma, alpha, backtrack, stop=stop)
    f, _ = constraints(sub, z[:n])
    if np.all(f < 0):
        return z[:n], it
    return None, it


def solve(sub, x0, tol=1e-8, lam0=None, max_iter=200, sigma=0.2, alpha=0.01, backtrack=0.5):
    """Solve a convex subproblem to the requested KKT tolerance.

    Parameters
    ----------
    sub : ConvexSubproblem
        Problem description (see module docstring).
    x0 : ndarray
        Warm start. If it is not strictly feasible a phase-I problem is run first.
    tol : float
        Target for :func:`kkt_residual`.
    lam0 : ndarray, optional
        Warm-start multipliers; used only if positive and ``x0`` is strictly feasible.
    sigma : float
        Barrier decrease factor (centering parameter).
    alpha, backtrack : float
        Sufficient-decrease and step-shrink parameters of the line search.

    Returns
    -------
    SubproblemSolution
    """
    x = np.array(x0, dtype=float)
    f, _ = constraints(sub, x)
    p1 = 0
    if not np.all(f < 0):
        x, p1 = _phase_one(sub, x, 1e-6, max_iter, sigma, alpha, backtrack)
        if x is None:
            x = np.array(x0, dtype=float)
            lam = np.zeros(f.size)
            return SubproblemSolution(x=x, lam=lam, objective=objective(sub, x),
                                      kkt=kkt_residual(sub, x, lam), iterations=p1,
                                      status="infeasible", phase1_iterations=p1)
        f, _ = constraints(sub, x)
        lam0 = None
    if lam0 is not None and lam0.shape == f.shape and np.all(lam0 > 0):
        lam = np.array(lam0, dtype=float)
    else:
        gscale = max(1e-6, float(np.max(np.abs(objective_grad(sub, x)))))
        lam = np.minimum(gscale / -f, 1e12)

    x, lam, it, status = _pdip(
        lambda z: objective(sub, z), lambda z: objective_grad(sub, z),
        lambda z: objective_hess(sub, z), lambda z: constraints(sub, z),
        lambda z, lm: _constraint_hess(sub, z, lm), x, lam, tol, max_iter,
        sigma, alpha, backtrack)
    kkt = kkt_residual(sub, x, lam)
    if status == "numerically-degenerate" and kkt <= tol:
        status = "optimal"
    return SubproblemSolution(x=x, lam=lam, objective=objective(sub, x), kkt=kkt,
                              iterations=it + p1, status=status, phase1_iterations=p1)
