"""Fluid-scale optimization and drift analysis for packing systems.

At fluid scale the state is a nonnegative vector x over nonzero
configurations.  Feasible states live on the polytope

    X = { x >= 0 : sum_k k_i x_k = rho_i for every type i },

where rho_i is the normalized offered load of type i.  The placement
objective is the separable strictly convex function

    F(x) = sum_k x_k^(1+alpha) / (1+alpha),    alpha > 0,

whose unique minimizer over X is the target profile of the greedy
placement disciplines.  With aggregate classes the objective sums class
totals instead (Phi).  This module provides:

* exact Euclidean projection onto X (active-set quadratic subproblem),
* solvers for the F- and Phi-minima with a posteriori optimality
  certificates (multipliers eta with x_k^alpha = max(k . eta, 0)),
* per-edge weight differentials, allocations of placement rates, their
  drift D (the derivative of F along the induced fluid motion), and the
  search for simple improving reallocations whose drift is negative
  exactly when x is suboptimal.

Multiplier recovery and all tolerances assume the default objective
weights; the ``weights`` hook scales each x_k^(1+alpha) term by c_k and
is provided for experimentation only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .config_space import ConfigSpace, ConfigSpaceError

DEFAULT_SUPPORT_EPS = 1e-9


class NonconvergenceError(RuntimeError):
    """Solver failed to meet its certificate; carries the best iterate."""

    def __init__(self, message, state=None, certificate=None):
        super().__init__(message)
        self.state = state
        self.certificate = certificate


@dataclass(frozen=True, eq=False)
class Demand:
    """Per-type arrival and service rates, normalized to unit total load.

    The constructor rescales arrival rates so that sum_i lambda_i/mu_i = 1
    and records the applied factor in ``scale``.
    """

    arrival: np.ndarray
    service: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        lam = np.asarray(self.arrival, dtype=float).copy()
        mu = np.asarray(self.service, dtype=float).copy()
        if lam.ndim != 1 or mu.shape != lam.shape:
            raise ValueError("arrival and service must be 1-d arrays of equal length")
        if not np.all(lam > 0) or not np.all(mu > 0):
            raise ValueError("arrival and service rates must be positive")
        total = float(np.sum(lam / mu))
        lam /= total
        lam.flags.writeable = False
        mu.flags.writeable = False
        object.__setattr__(self, "arrival", lam)
        object.__setattr__(self, "service", mu)
        object.__setattr__(self, "scale", total)

    @property
    def num_types(self) -> int:
        return len(self.arrival)

    @property
    def rho(self) -> np.ndarray:
        return self.arrival / self.service


@dataclass(eq=False)
class StatePoint:
    """Fluid state: vector over nonzero configurations plus the exponent."""

    x: np.ndarray
    alpha: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass(eq=False)
class Allocation:
    """Placement rates per edge, aligned with ``ConfigSpace`` edge order."""

    gamma: np.ndarray

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)


@dataclass(frozen=True, eq=False)
class KktCertificate:
    """Multipliers eta and the worst-case violation of the optimality law."""

    eta: np.ndarray
    residual: float


def constraint_matrix(space: ConfigSpace) -> np.ndarray:
    """Per-type conservation matrix A with A[i, t] = (config t)_i."""
    A = np.zeros((space.num_types, space.num_configs))
    for t, k in enumerate(space.configs):
        for i, v in enumerate(k):
            A[i, t] = v
    return A


def feasibility_gap(space: ConfigSpace, state: StatePoint, demand: Demand) -> float:
    """Max violation of conservation and nonnegativity at the state."""
    A = constraint_matrix(space)
    gap = float(np.max(np.abs(A @ state.x - demand.rho)))
    neg = float(max(0.0, -np.min(state.x))) if len(state.x) else 0.0
    return max(gap, neg)


def project_to_polytope(
    A: np.ndarray,
    b: np.ndarray,
    z: np.ndarray,
    max_iter: Optional[int] = None,
) -> np.ndarray:
    """Exact Euclidean projection of z onto {x >= 0, A x = b}.

    Primal active-set iteration: solve the equality-constrained projection
    on the currently free coordinates, pin the most negative coordinate,
    release pinned coordinates with negative bound multipliers, repeat.
    """
    m, n = A.shape
    z = np.asarray(z, dtype=float)
    active = np.zeros(n, dtype=bool)
    scale = max(1.0, float(np.max(np.abs(b))), float(np.max(np.abs(z))))
    if max_iter is None:
        max_iter = 6 * n + 30

    nu = np.zeros(m)
    for _ in range(max_iter):
        free = ~active
        AF = A[:, free]
        G = AF @ AF.T
        rhs = b - AF @ z[free]
        try:
            nu = np.linalg.solve(G, rhs)
        except np.linalg.LinAlgError:
            nu = np.linalg.lstsq(G, rhs, rcond=None)[0]
        xf = z[free] + AF.T @ nu
        if np.max(np.abs(AF @ xf - b)) > 1e-8 * scale:
            # Equality system inconsistent on this face: release the pinned
            # coordinate that best helps feasibility.
            if not np.any(active):
                raise NonconvergenceError("projection target polytope looks empty")
            resid = b - AF @ xf
            scores = A[:, active].T @ resid
            idx = np.flatnonzero(active)[int(np.argmax(np.abs(scores)))]
            active[idx] = False
            continue
        jmin = int(np.argmin(xf)) if len(xf) else -1
        if jmin >= 0 and xf[jmin] < -1e-12 * scale:
            active[np.flatnonzero(free)[jmin]] = True
            continue
        if np.any(active):
            kappa = -(z[active] + A[:, active].T @ nu)
            kmin = int(np.argmin(kappa))
            if kappa[kmin] < -1e-10 * scale:
                active[np.flatnonzero(active)[kmin]] = False
                continue
        x = np.zeros(n)
        x[free] = np.maximum(xf, 0.0)
        return x
    raise NonconvergenceError("projection active-set iteration did not settle")


def _weight_vector(space: ConfigSpace, alpha: float, weights) -> np.ndarray:
    # Internal scaling w_k = (1+alpha) c_k, so grad F = w * x^alpha and the
    # default c_k = 1/(1+alpha) gives w = 1.
    if weights is None:
        return np.ones(space.num_configs)
    w = np.asarray(weights, dtype=float) * (1.0 + alpha)
    if w.shape != (space.num_configs,) or np.any(w <= 0):
        raise ValueError("weights must be positive, one per configuration")
    return w


def objective(state: StatePoint, weights=None) -> float:
    """F(x): separable placement objective (optionally c_k-weighted)."""
    x = np.maximum(state.x, 0.0)
    if weights is None:
        return float(np.sum(x ** (1.0 + state.alpha)) / (1.0 + state.alpha))
    c = np.asarray(weights, dtype=float)
    return float(np.sum(c * x ** (1.0 + state.alpha)))


def class_totals(space: ConfigSpace, x: Sequence[float]) -> np.ndarray:
    """Per-class sums of a configuration vector; entry 0 is the zero class."""
    agg = space.aggregates
    if agg is None:
        raise ConfigSpaceError("space has no aggregate classes (no resource profile)")
    x = np.asarray(x, dtype=float)
    out = np.zeros(agg.num_classes + 1)
    for q in range(1, agg.num_classes + 1):
        out[q] = float(np.sum(x[list(agg.members[q])])) if agg.members[q] else 0.0
    return out


def aggregate_objective(space: ConfigSpace, state: StatePoint, weights=None) -> float:
    """Phi(x): class-total variant of the objective."""
    if weights is not None:
        raise NotImplementedError("per-class weights are not supported")
    s = np.maximum(class_totals(space, state.x), 0.0)
    return float(np.sum(s[1:] ** (1.0 + state.alpha)) / (1.0 + state.alpha))


def _config_rows(space: ConfigSpace) -> np.ndarray:
    return constraint_matrix(space).T


def _feasible_start(space: ConfigSpace, demand: Demand) -> np.ndarray:
    x = np.zeros(space.num_configs)
    for i, t in enumerate(space.unit_index):
        x[t] += demand.rho[i]
    return x


def _pg_minimize(A, rho, x0, alpha, w, grad, value, iters=250):
    """Projected gradient with backtracking and Barzilai-Borwein steps."""
    x = project_to_polytope(A, rho, x0)
    g = grad(x)
    step = 1.0
    fx = value(x)
    for _ in range(iters):
        y = x
        for _ in range(60):
            y = project_to_polytope(A, rho, x - step * g)
            d = y - x
            dn = float(d @ d)
            if dn <= 1e-30:
                break
            if value(y) <= fx + float(g @ d) + 0.5 / step * dn + 1e-15:
                break
            step *= 0.5
        d = y - x
        dn = float(d @ d)
        if dn <= 1e-28:
            return y
        g_new = grad(y)
        dg = g_new - g
        denom = float(d @ dg)
        step = min(max(dn / denom, 1e-8), 1e8) if denom > 1e-30 else step * 2.0
        x, g, fx = y, g_new, value(y)
    return x


def _dual_newton_separable(A, rho, alpha, w, eta0, iters=80):
    """Solve A x(eta) = rho with x_k(eta) = (max(k.eta,0)/w_k)^(1/alpha).

    Damped semismooth Newton on the concave dual; returns the best eta
    found.  One exact step when alpha == 1.
    """
    K = A.T
    inv_alpha = 1.0 / alpha

    def primal(eta):
        u = np.maximum(K @ eta, 0.0)
        return (u / w) ** inv_alpha

    def h(eta):
        return A @ primal(eta) - rho

    eta = np.asarray(eta0, dtype=float).copy()
    best_eta, best_norm = eta.copy(), float(np.max(np.abs(h(eta))))
    for _ in range(iters):
        u = K @ eta
        mask = u > 0
        r = h(eta)
        norm = float(np.max(np.abs(r)))
        if norm < best_norm:
            best_eta, best_norm = eta.copy(), norm
        if norm <= 1e-14:
            break
        dxdu = np.zeros(len(u))
        um = u[mask] / w[mask]
        dxdu[mask] = inv_alpha * um ** (inv_alpha - 1.0) / w[mask]
        # Guard the exploding derivative near the kink for alpha > 1.
        np.clip(dxdu, 0.0, 1e12, out=dxdu)
        J = (K.T * dxdu) @ K
        J += np.eye(len(rho)) * (1e-12 * (1.0 + np.trace(J)))
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -r, rcond=None)[0]
        t = 1.0
        base = float(r @ r)
        improved = False
        while t > 1e-12:
            cand = eta + t * step
            rc = h(cand)
            if float(rc @ rc) <= base * (1.0 - 1e-4 * t) + 1e-300:
                eta = cand
                improved = True
                break
            t *= 0.5
        if not improved:
            break
    return best_eta


def solve_optimum(
    space: ConfigSpace,
    demand: Demand,
    alpha: float,
    tol: float = 1e-9,
    weights=None,
    max_iter: int = 250,
) -> tuple[StatePoint, KktCertificate]:
    """Minimize F over the feasible polytope.

    Projected gradient with exact projection, then a dual Newton polish;
    the returned certificate is re-derived from the final point and must
    satisfy max(optimality residual, feasibility gap) <= tol, otherwise
    ``NonconvergenceError`` carries the best candidate.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    A = constraint_matrix(space)
    rho = demand.rho
    w = _weight_vector(space, alpha, weights)

    def grad(x):
        return w * np.maximum(x, 0.0) ** alpha

    def value(x):
        return float(np.sum(w * np.maximum(x, 0.0) ** (1.0 + alpha)) / (1.0 + alpha))

    x = _pg_minimize(A, rho, _feasible_start(space, demand), alpha, w, grad, value, iters=max_iter)
    cert = _certificate_plain(space, x, alpha, w)
    feas = float(np.max(np.abs(A @ x - rho)))
    best_x, best_cert, best_score = x, cert, max(cert.residual, feas)

    if best_score > tol:
        eta = _dual_newton_separable(A, rho, alpha, w, cert.eta)
        u = np.maximum(A.T @ eta, 0.0)
        x_dual = project_to_polytope(A, rho, (u / w) ** (1.0 / alpha))
        cert_dual = _certificate_plain(space, x_dual, alpha, w)
        feas_dual = float(np.max(np.abs(A @ x_dual - rho)))
        score = max(cert_dual.residual, feas_dual)
        if score < best_score:
            best_x, best_cert, best_score = x_dual, cert_dual, score

    if best_score > tol:
        raise NonconvergenceError(
            f"optimum solver stalled at certificate score {best_score:.3e} (tol {tol:.1e})",
            state=StatePoint(best_x, alpha),
            certificate=best_cert,
        )
    return StatePoint(best_x, alpha), best_cert


def _certificate_plain(space, x, alpha, w) -> KktCertificate:
    K = _config_rows(space)
    xa = w * np.maximum(x, 0.0) ** alpha
    thr = DEFAULT_SUPPORT_EPS * max(float(np.max(x, initial=0.0)), 1.0)
    support = x > thr
    if np.any(support):
        eta, *_ = np.linalg.lstsq(K[support], xa[support], rcond=None)
    else:
        eta = np.zeros(space.num_types)
    residual = float(np.max(np.abs(xa - np.maximum(K @ eta, 0.0))))
    return KktCertificate(eta=eta, residual=residual)


def kkt_certificate(
    space: ConfigSpace,
    state: StatePoint,
    demand: Demand,
    aggregate: bool = False,
    support_eps: float = DEFAULT_SUPPORT_EPS,
) -> KktCertificate:
    """Fit multipliers at a feasible state and report the optimality residual.

    Plain mode fits eta by least squares on the support and measures the
    worst violation of x_k^alpha = max(k . eta, 0).  Aggregate mode
    recovers eta from per-type extremes of the class weight differentials
    and measures violations of the class-level law (class totals must
    match the best member score, and members below their class maximum
    must carry no mass).  Assumes default objective weights.
    """
    x = np.maximum(state.x, 0.0)
    alpha = state.alpha
    if not aggregate:
        return _certificate_plain(space, x, alpha, np.ones(space.num_configs))

    agg = space.aggregates
    if agg is None:
        raise ConfigSpaceError("space has no aggregate classes (no resource profile)")
    s = class_totals(space, x)
    sa = s ** alpha
    thr = support_eps * max(float(np.max(x, initial=0.0)), 1.0)

    # Class-level weight differential along (q, i); entry 0 is the zero class.
    def delta_qi(q, i):
        down = agg.minus_type[q][i]
        return sa[q] - (sa[down] if down else 0.0)

    eta = np.zeros(space.num_types)
    for i in range(space.num_types):
        vals = []
        for t, k in enumerate(space.configs):
            if k[i] >= 1 and x[t] > thr:
                vals.append(delta_qi(agg.class_of[t], i))
        if not vals:
            continue
        hi, lo = max(vals), min(vals)
        eta[i] = hi if hi > 0 else lo

    K = _config_rows(space)
    u = np.maximum(K @ eta, 0.0)
    residual = 0.0
    for q in range(1, agg.num_classes + 1):
        umax = max(u[t] for t in agg.members[q])
        residual = max(residual, abs(sa[q] - umax))
        for t in agg.members[q]:
            if u[t] < umax - 1e-12 * max(1.0, umax):
                residual = max(residual, x[t] ** alpha)
    return KktCertificate(eta=eta, residual=float(residual))


def solve_aggregate_optimum(
    space: ConfigSpace,
    demand: Demand,
    alpha: float,
    tol: float = 1e-7,
    max_iter: int = 400,
) -> tuple[StatePoint, float]:
    """Minimize the class-total objective Phi over the feasible polytope.

    Projected gradient phase, then ascent on the closed-form concave dual

        g(eta) = rho . eta - a/(1+a) * sum_q max(0, max_{k in q} k.eta)^((1+a)/a),

    followed by primal recovery constrained to per-class argmax supports.
    Acceptance requires duality gap and feasibility within tol.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    agg = space.aggregates
    if agg is None:
        raise ConfigSpaceError("space has no aggregate classes (no resource profile)")
    A = constraint_matrix(space)
    rho = demand.rho
    K = _config_rows(space)
    members = [list(m) for m in agg.members]
    n_classes = agg.num_classes

    def phi(x):
        return aggregate_objective(space, StatePoint(x, alpha))

    def grad(x):
        s = class_totals(space, x) ** alpha
        g = np.empty(space.num_configs)
        for t in range(space.num_configs):
            g[t] = s[agg.class_of[t]]
        return g

    x = _pg_minimize(
        A, rho, _feasible_start(space, demand), alpha, np.ones(space.num_configs),
        grad, phi, iters=max_iter,
    )

    def dual_value(eta):
        ke = K @ eta
        total = float(rho @ eta)
        for q in range(1, n_classes + 1):
            uq = max(0.0, max(ke[t] for t in members[q]))
            total -= alpha / (1.0 + alpha) * uq ** ((1.0 + alpha) / alpha)
        return total

    def dual_grad_hess(eta):
        ke = K @ eta
        g = rho.copy()
        H = np.zeros((space.num_types, space.num_types))
        for q in range(1, n_classes + 1):
            t_best = max(members[q], key=lambda t: (ke[t], [-v for v in space.configs[t]]))
            uq = ke[t_best]
            if uq <= 0:
                continue
            kvec = K[t_best]
            g -= uq ** (1.0 / alpha) * kvec
            H -= (1.0 / alpha) * min(uq ** (1.0 / alpha - 1.0), 1e12) * np.outer(kvec, kvec)
        return g, H

    eta = kkt_certificate(space, StatePoint(x, alpha), demand, aggregate=True).eta.copy()
    gval = dual_value(eta)
    for _ in range(120):
        g, H = dual_grad_hess(eta)
        if float(np.max(np.abs(g))) <= 1e-14:
            break
        M = -H + np.eye(space.num_types) * (1e-12 * (1.0 + abs(np.trace(H))))
        try:
            step = np.linalg.solve(M, g)
        except np.linalg.LinAlgError:
            step = g
        t = 1.0
        moved = False
        while t > 1e-13:
            cand = eta + t * step
            cval = dual_value(cand)
            if cval > gval + 1e-18:
                eta, gval, moved = cand, cval, True
                break
            t *= 0.5
        if not moved:
            break

    x_rec = _recover_aggregate_primal(space, A, rho, K, eta, alpha, x)
    val_rec = phi(x_rec)
    if val_rec < phi(x):
        x = x_rec
    value = phi(x)
    gap = value - gval
    feas = float(np.max(np.abs(A @ x - rho)))
    if max(gap, feas) > tol:
        raise NonconvergenceError(
            f"aggregate solver gap {gap:.3e}, feasibility {feas:.3e} exceed tol {tol:.1e}",
            state=StatePoint(x, alpha),
        )
    return StatePoint(x, alpha), value


def _recover_aggregate_primal(space, A, rho, K, eta, alpha, fallback):
    """Distribute per-class totals implied by eta over argmax members."""
    agg = space.aggregates
    ke = K @ eta
    allowed = np.zeros(space.num_configs, dtype=bool)
    rows = [A]
    rhs = [rho]
    for q in range(1, agg.num_classes + 1):
        umax = max(ke[t] for t in agg.members[q])
        if umax <= 0:
            continue
        sel = [t for t in agg.members[q] if ke[t] >= umax - 1e-10 * max(1.0, abs(umax))]
        row = np.zeros(space.num_configs)
        row[sel] = 1.0
        for t in sel:
            allowed[t] = True
        rows.append(row[None, :])
        rhs.append(np.array([umax ** (1.0 / alpha)]))
    C = np.vstack(rows)[:, allowed]
    d = np.concatenate(rhs)
    try:
        z = project_to_polytope(C, d, np.maximum(fallback[allowed], 0.0))
    except NonconvergenceError:
        return project_to_polytope(A, rho, fallback)
    x = np.zeros(space.num_configs)
    x[allowed] = z
    if float(np.max(np.abs(A @ x - rho))) > 1e-9:
        return project_to_polytope(A, rho, fallback)
    return x


def weight_diff(space: ConfigSpace, state: StatePoint, edge: int) -> float:
    """Weight differential along an edge: x_target^alpha - x_base^alpha."""
    x = state.x
    t = space.edge_target[edge]
    b = space.edge_base[edge]
    hi = max(x[t], 0.0) ** state.alpha
    lo = max(x[b], 0.0) ** state.alpha if b >= 0 else 0.0
    return float(hi - lo)


def _edge_mass_coefficients(space: ConfigSpace, demand: Demand) -> np.ndarray:
    # Edge (k, i) carries departure mass k_i * mu_i * x_k.
    coef = np.empty(space.num_edges)
    for e in range(space.num_edges):
        i = space.edge_type[e]
        coef[e] = space.configs[space.edge_target[e]][i] * demand.service[i]
    return coef


def neutral_allocation(
    space: ConfigSpace, state: StatePoint, demand: Demand, feas_tol: float = 1e-6
) -> Allocation:
    """Allocation that routes every edge's departure mass back to itself.

    Its drift is identically zero.  Raises when the state is farther than
    ``feas_tol`` from the feasible polytope.
    """
    gap = feasibility_gap(space, state, demand)
    if gap > feas_tol:
        raise ValueError(f"state is off the feasible polytope by {gap:.3e}")
    coef = _edge_mass_coefficients(space, demand)
    gamma = coef * np.maximum(state.x, 0.0)[list(space.edge_target)]
    return Allocation(gamma=gamma)


def drift(space: ConfigSpace, alloc: Allocation, state: StatePoint, demand: Demand) -> float:
    """D(gamma, x): rate of change of F under the given placement rates."""
    neutral = neutral_allocation(space, state, demand)
    deltas = np.array([weight_diff(space, state, e) for e in range(space.num_edges)])
    return float(deltas @ (alloc.gamma - neutral.gamma))


def simple_improving_allocations(
    space: ConfigSpace,
    state: StatePoint,
    demand: Demand,
    zero_tol: float = 1e-12,
) -> list[tuple[Allocation, tuple[int, int]]]:
    """All single-swap reallocations with strictly smaller weight differential.

    A donor edge with mass present moves its entire departure mass onto a
    same-type recipient edge that is available (unit target, or positive
    mass below it) and has strictly smaller weight differential.  Returns
    (allocation, (donor_edge, recipient_edge)) pairs; empty exactly at the
    optimum.
    """
    x = state.x
    neutral = neutral_allocation(space, state, demand)
    deltas = [weight_diff(space, state, e) for e in range(space.num_edges)]
    out = []
    for i in range(space.num_types):
        edges = space.edges_of_type[i]
        for e1 in edges:
            if x[space.edge_target[e1]] <= zero_tol:
                continue
            for e2 in edges:
                if e2 == e1:
                    continue
                b2 = space.edge_base[e2]
                if b2 >= 0 and x[b2] <= zero_tol:
                    continue
                if deltas[e2] < deltas[e1]:
                    gamma = neutral.gamma.copy()
                    gamma[e2] += gamma[e1]
                    gamma[e1] = 0.0
                    out.append((Allocation(gamma=gamma), (e1, e2)))
    return out


def min_drift(
    space: ConfigSpace,
    state: StatePoint,
    demand: Demand,
    zero_tol: float = 1e-12,
) -> float:
    """Smallest drift over the neutral and all simple improving allocations.

    Zero exactly when the state is the objective minimizer; strictly
    negative otherwise.
    """
    best = 0.0
    for alloc, (e1, e2) in simple_improving_allocations(space, state, demand, zero_tol):
        d = drift(space, alloc, state, demand)
        best = min(best, d)
    return best


def no_simple_improvement(
    space: ConfigSpace,
    state: StatePoint,
    zero_tol: float = 1e-9,
    delta_tol: float = 1e-9,
) -> tuple[bool, Optional[tuple[tuple[int, int], tuple[int, int]]]]:
    """Class-level check that no mass can move to a lighter same-type edge.

    True when for every pair of class edges (q, i), (q', i) with the
    second strictly lighter, either no member of q holds both mass and a
    type-i customer, or the recipient class below q' is nonzero and empty.
    Returns a witness ((q, i), (q', i)) for the first violation found.
    """
    agg = space.aggregates
    if agg is None:
        raise ConfigSpaceError("space has no aggregate classes (no resource profile)")
    x = np.maximum(state.x, 0.0)
    s = class_totals(space, x)
    sa = s ** state.alpha
    nq = agg.num_classes

    def delta_qi(q, i):
        down = agg.minus_type[q][i]
        return sa[q] - (sa[down] if down else 0.0)

    for i in range(space.num_types):
        qs = [q for q in range(1, nq + 1) if agg.minus_type[q][i] is not None]
        for q in qs:
            donors = any(
                space.configs[t][i] >= 1 and x[t] > zero_tol for t in agg.members[q]
            )
            if not donors:
                continue
            dq = delta_qi(q, i)
            for qp in qs:
                if qp == q:
                    continue
                if delta_qi(qp, i) >= dq - delta_tol:
                    continue
                down = agg.minus_type[qp][i]
                if down == 0 or s[down] > zero_tol:
                    return False, ((q, i), (qp, i))
    return True, None
