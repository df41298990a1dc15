"""Iterative KKT-based weighted max-min-fairness solver.

Outer loop: linear MMSE receive filter updates.  Inner loop: closed-form
transmit beamformers regularized by the power dual mu (found by bisection),
closed-form per-stream and common rates, projected sub-gradient step on the
stream-rate duals v, then lambda = v / eps.

The transmit beamformer for group g, stream l solves

    (sum_{k',l'} lambda_{k',l'} H_k'^H u_{k',l'} u_{k',l'}^H H_k' + mu I) w
        = sum_{k in group g} lambda_{k,l} H_k^H u_{k,l}

The left-hand matrix is shared by all streams; total transmit power is
strictly decreasing in mu, which the bisection exploits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import kernels
from .kernels import DegenerateDualError, ReceiveState, TransmitState
from .scenario import Scenario, channel_rng


class NumericalFailure(RuntimeError):
    """Non-finite value or unbracketable bisection; carries the trace so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass
class SolverConfig:
    step_size: float = 1e-2
    inner_iters: int = 50
    outer_iters: int = 100
    convergence_tol: float = 1e-5
    bisection_tol: float = 1e-8
    mu_min: float = 1e-9
    diminishing_steps: bool = False  # beta / sqrt(i) schedule, off by default
    polish_iters: int = 4000         # annealed dual steps in the final polish
    polish_refresh: int = 25         # receiver refresh cadence during polish
    polish_snapshots: int = 5        # best (v, w) snapshots kept for settling
    polish_guard: float = 0.05       # max relative objective loss accepted from polish

    def __post_init__(self):
        if min(self.step_size, self.convergence_tol, self.bisection_tol, self.mu_min) <= 0:
            raise ValueError("solver config values must be positive")
        if self.inner_iters < 1 or self.outer_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.polish_iters < 0 or self.polish_refresh < 1 or self.polish_snapshots < 1:
            raise ValueError("polish settings out of range")
        if self.polish_guard < 0:
            raise ValueError("polish_guard must be non-negative")


@dataclass
class DualState:
    """v, lambda per (user, stream); mu for the power constraint.

    zeta_g is derived, not stored: zeta_g = alpha_g^{-1} sum_{k in g} v_{k,l}.
    """

    v: list          # per user, (L_g(k),)
    lam: list        # per user, (L_g(k),)
    mu: float

    def zeta(self, scenario: Scenario) -> list:
        d = scenario.dims
        out = []
        for g in range(d.num_groups):
            users = list(d.group_users(g))
            out.append(
                np.array(
                    [
                        sum(self.v[k][l] for k in users) / scenario.weights[g]
                        for l in range(d.streams_per_group[g])
                    ]
                )
            )
        return out


@dataclass
class SolveTrace:
    r_c: list = field(default_factory=list)
    group_sum_rates: list = field(default_factory=list)  # alpha_g * sum_l r_{g,l}
    power: list = field(default_factory=list)
    mu: list = field(default_factory=list)
    stationarity: list = field(default_factory=list)
    power_violation: list = field(default_factory=list)
    outer_objective: list = field(default_factory=list)  # achieved min weighted rate

    @property
    def inner_iterations(self) -> int:
        return len(self.r_c)

    @property
    def outer_iterations(self) -> int:
        return len(self.outer_objective)


@dataclass
class WmmfResult:
    tx: TransmitState
    rx: ReceiveState
    r_c: float           # achieved objective of the returned (best-so-far) iterate
    trace: SolveTrace
    duals: DualState
    converged: bool


# --- beamformer linear system -------------------------------------------------

class _StreamBasis:
    """Columns a_{k,l} = H_k^H u_{k,l}, user-major; fixed per receiver update."""

    def __init__(self, scenario: Scenario, receivers):
        d = scenario.dims
        cols = []
        self.col_of = []  # per user, list of column indices
        for k in range(d.num_users):
            g = d.group_of_user(k)
            base = len(cols)
            hk_h = scenario.channels[k].conj().T
            for l in range(d.streams_per_group[g]):
                cols.append(hk_h @ receivers[k][:, l])
            self.col_of.append(list(range(base, base + d.streams_per_group[g])))
        self.b_mat = np.stack(cols, axis=1)  # (N_T, sum_k L_g(k))
        self.scenario = scenario

    def flat_lambda(self, lam) -> np.ndarray:
        return np.concatenate([np.asarray(x, dtype=float) for x in lam])

    def rhs(self, lam) -> np.ndarray:
        """One column per (g, l): sum_{k in group g} lambda_{k,l} a_{k,l}."""
        d = self.scenario.dims
        cols = []
        for g in range(d.num_groups):
            users = list(d.group_users(g))
            for l in range(d.streams_per_group[g]):
                col = np.zeros(self.b_mat.shape[0], dtype=complex)
                for k in users:
                    col += lam[k][l] * self.b_mat[:, self.col_of[k][l]]
                cols.append(col)
        return np.stack(cols, axis=1)


class _RegularizedSolver:
    """Eigendecomposition of sum lambda a a^H, so power(mu) is closed-form."""

    def __init__(self, basis: _StreamBasis, lam):
        lam_flat = basis.flat_lambda(lam)
        if not np.any(lam_flat > 0):
            raise DegenerateDualError("all MSE duals are zero")
        m = (basis.b_mat * lam_flat) @ basis.b_mat.conj().T
        self.evals, self.evecs = np.linalg.eigh(m)
        self.evals = np.maximum(self.evals, 0.0)  # clip eigh roundoff
        self.rhs = basis.rhs(lam)
        self.proj = self.evecs.conj().T @ self.rhs  # (N_T, num streams)
        self.scenario = basis.scenario

    def power(self, mu: float) -> float:
        scale = 1.0 / (self.evals + mu)
        return float(np.sum((np.abs(self.proj) ** 2) * (scale**2)[:, None]))

    def beamformers(self, mu: float) -> TransmitState:
        w = self.evecs @ (self.proj / (self.evals + mu)[:, None])
        d = self.scenario.dims
        mats, off = [], 0
        for g in range(d.num_groups):
            l_g = d.streams_per_group[g]
            mats.append(w[:, off:off + l_g])
            off += l_g
        return TransmitState(beamformers=mats)

    def stationarity_residual(self, mu: float) -> float:
        """max relative residual of (M + mu I) w - b over streams."""
        w = self.evecs @ (self.proj / (self.evals + mu)[:, None])
        res = self.evecs @ (self.proj * (self.evals / (self.evals + mu))[:, None]) + mu * w
        num = np.linalg.norm(res - self.rhs, axis=0)
        den = np.linalg.norm(self.rhs, axis=0)
        den = np.where(den > 0, den, 1.0)
        return float(np.max(num / den))


def transmit_beamformer(scenario: Scenario, receivers, lam, mu: float) -> TransmitState:
    """Direct Hermitian solve of the beamformer system at a given mu."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    basis = _StreamBasis(scenario, receivers)
    lam_flat = basis.flat_lambda(lam)
    if not np.any(lam_flat > 0):
        raise DegenerateDualError("all MSE duals are zero")
    n_t = scenario.dims.num_tx_antennas
    a = (basis.b_mat * lam_flat) @ basis.b_mat.conj().T + mu * np.eye(n_t)
    w = cho_solve(cho_factor(a), basis.rhs(lam))
    d = scenario.dims
    mats, off = [], 0
    for g in range(d.num_groups):
        l_g = d.streams_per_group[g]
        mats.append(w[:, off:off + l_g])
        off += l_g
    return TransmitState(beamformers=mats)


def bisect_mu(scenario: Scenario, receivers, lam, config: SolverConfig | None = None):
    """Find mu meeting the power budget; returns (mu, TransmitState).

    Power is strictly decreasing in mu.  If the unconstrained point
    (mu = mu_min) is already feasible, it is returned as-is.
    """
    cfg = config or SolverConfig()
    solver = _RegularizedSolver(_StreamBasis(scenario, receivers), lam)
    return _bisect(solver, scenario.power_budget, cfg)


def _bisect(solver, p_t: float, cfg: SolverConfig):
    lo = cfg.mu_min
    p_lo = solver.power(lo)
    if not np.isfinite(p_lo):
        raise NumericalFailure("non-finite power during bisection")
    if p_lo <= p_t:
        return lo, solver.beamformers(lo), solver
    hi = max(1.0, lo)
    for _ in range(128):
        if solver.power(hi) <= p_t:
            break
        hi *= 2.0
    else:
        raise NumericalFailure("mu bracket not found within 128 doublings")
    mu = hi
    for _ in range(200):
        mu = 0.5 * (lo + hi)
        p = solver.power(mu)
        if abs(p - p_t) <= cfg.bisection_tol * p_t:
            break
        if p > p_t:
            lo = mu
        else:
            hi = mu
    return mu, solver.beamformers(mu), solver


# --- rates and dual updates ---------------------------------------------------

def common_rate(scenario: Scenario, eps, v) -> float:
    """r_c = sum over (g, k, l) of v_{k,l} log2(1/eps_{k,l})."""
    d = scenario.dims
    total = 0.0
    for k in range(d.num_users):
        total += float(np.sum(np.asarray(v[k]) * -np.log2(np.asarray(eps[k]))))
    return total


def subgradient(scenario: Scenario, r_c: float, grp_rates, eps) -> list:
    """Lagrangian gradient w.r.t. v_{k,l} with zeta_g eliminated:

    (r_c - alpha_g sum_l r_{g,l}) / (alpha_g L_g) + r_{g,l} + log2(eps_{k,l})
    """
    d = scenario.dims
    out = []
    for k in range(d.num_users):
        g = d.group_of_user(k)
        alpha = scenario.weights[g]
        l_g = d.streams_per_group[g]
        lead = (r_c - alpha * float(np.sum(grp_rates[g]))) / (alpha * l_g)
        out.append(lead + grp_rates[g] + np.log2(np.asarray(eps[k])))
    return out


def uniform_duals(scenario: Scenario) -> list:
    """v = lambda = alpha_g / K, the zero-rate initialization fixed point."""
    d = scenario.dims
    return [
        np.full(d.streams_per_group[d.group_of_user(k)], scenario.weights[d.group_of_user(k)] / d.num_users)
        for k in range(d.num_users)
    ]


def normalize_duals(scenario: Scenario, v) -> list:
    """Scale each stream index l so sum_g alpha_g^{-1} sum_{k in g} v = 1.

    A stream whose dual mass vanished entirely, or any of whose groups lost
    all dual mass (which would make that group's weighted stream rate 0/0),
    is reset to the uniform initialization for that stream.
    """
    d = scenario.dims
    uniform = uniform_duals(scenario)
    out = [np.array(x, dtype=float) for x in v]
    for l in range(max(d.streams_per_group)):
        norm = 0.0
        degenerate = False
        for g in range(d.num_groups):
            if l >= d.streams_per_group[g]:
                continue
            mass = sum(out[k][l] for k in d.group_users(g))
            if mass <= 0.0:
                degenerate = True
            norm += mass / scenario.weights[g]
        for g in range(d.num_groups):
            if l >= d.streams_per_group[g]:
                continue
            for k in d.group_users(g):
                if degenerate or norm <= 0.0:
                    out[k][l] = uniform[k][l]
                else:
                    out[k][l] /= norm
    return out


def update_duals(scenario: Scenario, v_prev, gradient, beta: float) -> list:
    """Projected sub-gradient ascent step followed by per-stream normalization."""
    stepped = [np.maximum(0.0, np.asarray(v_prev[k]) + beta * np.asarray(gradient[k]))
               for k in range(scenario.dims.num_users)]
    return normalize_duals(scenario, stepped)


def lambda_from(v, eps) -> list:
    return [np.asarray(v[k]) / np.asarray(eps[k]) for k in range(len(v))]


def initial_beamformers(scenario: Scenario) -> TransmitState:
    """Random CN(0,1) columns scaled to meet the power budget exactly.

    Drawn from the instance's RNG family (stream 1, distinct from channels).
    """
    d = scenario.dims
    rng = channel_rng(scenario.seed, stream=1)
    mats = []
    for g in range(d.num_groups):
        shape = (d.num_tx_antennas, d.streams_per_group[g])
        mats.append((rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0))
    tx = TransmitState(beamformers=mats)
    scale = np.sqrt(scenario.power_budget / tx.total_power)
    return TransmitState(beamformers=[scale * w for w in mats])


def solve(scenario: Scenario, config: SolverConfig | None = None) -> WmmfResult:
    """Run the full iterative solver; returns the best-so-far iterate.

    Best-so-far is ranked by the true achieved objective
    min_g alpha_g sum_l min_k log2(1 + gamma_{k,l}), recomputed from the
    beamformers with fresh MMSE receivers (sub-gradient steps oscillate, the
    best-so-far sequence is the monotone one).
    """
    cfg = config or SolverConfig()
    d = scenario.dims
    v = uniform_duals(scenario)
    lam = uniform_duals(scenario)
    tx = initial_beamformers(scenario)
    trace = SolveTrace()

    best_obj = -np.inf
    best_tx = tx
    duals = DualState(v=v, lam=lam, mu=cfg.mu_min)
    prev_obj = None
    converged = False

    for _ in range(cfg.outer_iters):
        rx = kernels.mmse_receivers(scenario, tx)
        obj = kernels.achieved_objective(scenario, rx.sinr)
        trace.outer_objective.append(obj)
        if obj > best_obj:
            best_obj, best_tx = obj, tx
        if prev_obj is not None and abs(obj - prev_obj) < cfg.convergence_tol:
            converged = True
            break
        prev_obj = obj

        basis = _StreamBasis(scenario, rx.receivers)
        r_c_prev = None
        for i in range(1, cfg.inner_iters + 1):
            beta = cfg.step_size / np.sqrt(i) if cfg.diminishing_steps else cfg.step_size
            solver = _RegularizedSolver(basis, lam)
            mu, tx, solver = _bisect(solver, scenario.power_budget, cfg)
            eps = kernels.mse(scenario, tx, rx.receivers)
            grp = kernels.group_rates(scenario, eps, v)
            r_c = common_rate(scenario, eps, v)
            if not np.isfinite(r_c):
                raise NumericalFailure("non-finite common rate", trace=trace)
            grad = subgradient(scenario, r_c, grp, eps)
            v = update_duals(scenario, v, grad, beta)
            lam = lambda_from(v, eps)
            duals = DualState(v=v, lam=lam, mu=mu)

            power = tx.total_power
            trace.r_c.append(r_c)
            trace.group_sum_rates.append(
                [scenario.weights[g] * float(np.sum(grp[g])) for g in range(d.num_groups)]
            )
            trace.power.append(power)
            trace.mu.append(mu)
            trace.stationarity.append(solver.stationarity_residual(mu))
            trace.power_violation.append(max(0.0, power / scenario.power_budget - 1.0))

            if r_c_prev is not None and abs(r_c - r_c_prev) < cfg.convergence_tol:
                break
            r_c_prev = r_c

    # evaluate the last inner-loop beamformers too
    rx = kernels.mmse_receivers(scenario, tx)
    obj = kernels.achieved_objective(scenario, rx.sinr)
    if obj > best_obj:
        best_obj, best_tx = obj, tx

    # freeze v and settle the (u, w, lambda) fixed point so the returned state
    # satisfies stationarity and lambda = v / eps to tight tolerance; the
    # polished point is kept only if it preserves the best achieved objective
    # (the fixed point can wander on degenerate instances)
    tx_p, rx_p, duals_p = _polish(scenario, best_tx, v, cfg)
    obj_p = kernels.achieved_objective(
        scenario, kernels.mmse_receivers(scenario, tx_p).sinr
    )
    if obj_p >= best_obj - 1e-6 * max(1.0, abs(best_obj)):
        tx, rx, duals = tx_p, rx_p, duals_p
    else:
        tx = best_tx
        rx = kernels.mmse_receivers(scenario, tx)
        lam = lambda_from(v, rx.mse)
        mu, _, _ = _bisect(
            _RegularizedSolver(_StreamBasis(scenario, rx.receivers), lam),
            scenario.power_budget, cfg,
        )
        duals = DualState(v=v, lam=lam, mu=mu)
    final_sinr = kernels.sinr(scenario, tx, kernels.mmse_receivers(scenario, tx).receivers)
    return WmmfResult(
        tx=tx,
        rx=rx,
        r_c=kernels.achieved_objective(scenario, final_sinr),
        trace=trace,
        duals=duals,
        converged=converged,
    )


def _polish(scenario: Scenario, tx: TransmitState, v, cfg: SolverConfig,
            max_passes: int = 60, tol: float = 1e-10):
    """Alternate receiver refresh and the lambda -> w -> eps -> lambda map
    with the stream-rate duals v held fixed, until lambda stops moving."""
    rx = kernels.mmse_receivers(scenario, tx)
    mu = cfg.mu_min
    for outer in range(max_passes):
        # lambda -> w -> eps -> lambda fixed point against fixed receivers;
        # the state after this loop is consistent with `rx` by construction
        lam = lambda_from(v, kernels.mse(scenario, tx, rx.receivers))
        basis = _StreamBasis(scenario, rx.receivers)
        for _ in range(max_passes):
            mu, tx, _ = _bisect(_RegularizedSolver(basis, lam), scenario.power_budget, cfg)
            eps = kernels.mse(scenario, tx, rx.receivers)
            lam_next = lambda_from(v, eps)
            delta = max(
                float(np.max(np.abs(lam_next[k] - lam[k]) / np.maximum(np.abs(lam[k]), 1e-300)))
                for k in range(scenario.dims.num_users)
            )
            lam = lam_next
            if delta < tol:
                break
        rx_next = kernels.mmse_receivers(scenario, tx)
        drift = max(
            float(np.max(np.abs(rx_next.mse[k] - eps[k])))
            for k in range(scenario.dims.num_users)
        )
        if drift < 100 * tol or outer == max_passes - 1:
            break
        rx = rx_next
    # recompute eps/sinr against the receivers the duals are consistent with
    gam = kernels.sinr(scenario, tx, rx.receivers)
    rx = ReceiveState(receivers=rx.receivers, mse=eps, sinr=gam)
    return tx, rx, DualState(v=v, lam=lam, mu=mu)
