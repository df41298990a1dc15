"""Ground-truth machinery for desk-scale validation.

Brute-force grid search over beamformer directions and power splits (tiny
single-antenna instances only), first-order optimality residuals for the
iterative solver's output, and central-difference verification of the
closed-form dual gradient.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import TransmitState
from .scenario import Scenario
from .wmmf import DualState, _StreamBasis

MAX_GRID_EVALS = int(1e8)


class OracleSizeError(ValueError):
    """Instance or grid too large for exhaustive search."""


@dataclass
class GridSpec:
    phase_steps: int = 32
    amplitude_steps: int = 16
    power_steps: int = 32
    refinement_rounds: int = 2

    def __post_init__(self):
        if min(self.phase_steps, self.amplitude_steps, self.power_steps) < 1:
            raise ValueError("grid steps must be positive")
        if self.refinement_rounds < 0:
            raise ValueError("refinement_rounds must be >= 0")


# --- exhaustive search --------------------------------------------------------

def _check_tiny(scenario: Scenario):
    d = scenario.dims
    if d.num_tx_antennas > 2 or d.num_users > 3:
        raise OracleSizeError("grid search supports N_T <= 2 and K <= 3 only")
    if any(n != 1 for n in d.rx_antennas_per_user) or any(l != 1 for l in d.streams_per_group):
        raise OracleSizeError("grid search supports single-antenna users, one stream per group")


def _directions(n_t: int, theta_grid, phi_grid) -> np.ndarray:
    """Unit beamformer directions; first coefficient real non-negative
    (the objective is invariant to a common phase per group)."""
    if n_t == 1:
        return np.ones((1, 1), dtype=complex)
    theta, phi = np.meshgrid(theta_grid, phi_grid, indexing="ij")
    d = np.stack(
        [np.cos(theta), np.sin(theta) * np.exp(1j * phi)], axis=-1
    ).reshape(-1, 2)
    return d


def _splits(fraction_grids) -> np.ndarray:
    """Power fractions per group from grids over the first G-1 coordinates."""
    n_groups = len(fraction_grids) + 1
    if n_groups == 1:
        return np.ones((1, 1))
    combos = []
    for fs in itertools.product(*fraction_grids):
        rest = 1.0 - sum(fs)
        if rest < -1e-12:
            continue
        combos.append(list(fs) + [max(rest, 0.0)])
    return np.asarray(combos)


def _evaluate(scenario: Scenario, rows, gains, splits, alphas):
    """Best objective over the direction product grid for every power split.

    gains[g] has shape (num directions of group g, K): |h_k^H d|^2.
    Returns (objective, best split index, best direction indices).
    """
    d = scenario.dims
    n_groups = d.num_groups
    shape = tuple(g.shape[0] for g in gains)
    best = (-np.inf, None, None)
    for s_idx, split in enumerate(splits):
        p = split * scenario.power_budget
        obj = None
        for g in range(n_groups):
            users = list(d.group_users(g))
            group_rate = None
            for k in users:
                sig = p[g] * gains[g][:, k]
                sig = sig.reshape([-1 if ax == g else 1 for ax in range(n_groups)])
                denom = scenario.noise_power[k]
                for j in range(n_groups):
                    if j == g:
                        continue
                    interf = (p[j] * gains[j][:, k]).reshape(
                        [-1 if ax == j else 1 for ax in range(n_groups)]
                    )
                    denom = denom + interf
                rate_k = np.log2(1.0 + sig / denom)
                group_rate = rate_k if group_rate is None else np.minimum(group_rate, rate_k)
            weighted = alphas[g] * group_rate
            obj = weighted if obj is None else np.minimum(obj, weighted)
        flat = int(np.argmax(obj))  # ties: lexicographically smallest index
        val = float(obj.flat[flat])
        if val > best[0]:
            best = (val, s_idx, np.unravel_index(flat, shape))
    return best


def grid_search_mmf(scenario: Scenario, spec: GridSpec | None = None):
    """Exhaustive max-min search; returns (TransmitState, objective in bits/use)."""
    spec = spec or GridSpec()
    _check_tiny(scenario)
    d = scenario.dims
    rows = np.stack([h[0] for h in scenario.channels], axis=0)
    alphas = scenario.weights

    if d.num_tx_antennas == 1:
        theta_grids = [np.array([0.0])] * d.num_groups
        phi_grids = [np.array([0.0])] * d.num_groups
    else:
        theta_grids = [np.linspace(0.0, np.pi / 2, spec.amplitude_steps)] * d.num_groups
        phi_grids = [np.linspace(0.0, 2 * np.pi, spec.phase_steps, endpoint=False)] * d.num_groups
    fraction_grids = [np.linspace(0.0, 1.0, spec.power_steps)] * (d.num_groups - 1)

    result = None
    for round_idx in range(spec.refinement_rounds + 1):
        dirs = [
            _directions(d.num_tx_antennas, theta_grids[g], phi_grids[g])
            for g in range(d.num_groups)
        ]
        splits = _splits(fraction_grids)
        total = splits.shape[0] * int(np.prod([x.shape[0] for x in dirs])) * d.num_users
        if total > MAX_GRID_EVALS:
            raise OracleSizeError("grid would need %d evaluations (cap %d)" % (total, MAX_GRID_EVALS))
        # |h_k^H w|^2 with rows[k] = h_k^H, so gains[g][dir, k] = |rows[k] @ dir|^2
        gains = [np.abs(rows @ dirs[g].T).T ** 2 for g in range(d.num_groups)]
        obj, s_idx, dir_idx = _evaluate(scenario, rows, gains, splits, alphas)
        best_split = splits[s_idx]
        best_dirs = [dirs[g][dir_idx[g]] for g in range(d.num_groups)]
        result = (obj, best_split, best_dirs)

        if round_idx == spec.refinement_rounds:
            break
        # refine every parameter one coarse cell around the current best
        if d.num_tx_antennas == 2:
            new_theta, new_phi = [], []
            for g in range(d.num_groups):
                t_idx, p_idx = np.unravel_index(
                    dir_idx[g], (theta_grids[g].size, phi_grids[g].size)
                )
                t_w = _spacing(theta_grids[g])
                p_w = _spacing(phi_grids[g])
                new_theta.append(
                    np.clip(
                        np.linspace(theta_grids[g][t_idx] - t_w, theta_grids[g][t_idx] + t_w,
                                    spec.amplitude_steps),
                        0.0, np.pi / 2,
                    )
                )
                new_phi.append(
                    np.linspace(phi_grids[g][p_idx] - p_w, phi_grids[g][p_idx] + p_w,
                                spec.phase_steps)
                )
            theta_grids, phi_grids = new_theta, new_phi
        new_fracs = []
        for c in range(d.num_groups - 1):
            f_w = _spacing(fraction_grids[c])
            new_fracs.append(
                np.clip(
                    np.linspace(best_split[c] - f_w, best_split[c] + f_w, spec.power_steps),
                    0.0, 1.0,
                )
            )
        fraction_grids = new_fracs

    obj, best_split, best_dirs = result
    mats = [
        (np.sqrt(best_split[g] * scenario.power_budget) * best_dirs[g]).reshape(-1, 1)
        for g in range(d.num_groups)
    ]
    return TransmitState(beamformers=mats), obj


def _spacing(grid: np.ndarray) -> float:
    return float(grid[1] - grid[0]) if grid.size > 1 else 0.0


# --- KKT residual report ------------------------------------------------------

@dataclass
class KktReport:
    stationarity: float       # max rel residual of the beamformer linear system
    zeta_consistency: float   # spread of alpha^-1 sum_k v over stream index
    dual_normalization: float # max_l |sum_g alpha^-1 sum_k v - 1|
    lambda_consistency: float # max rel |lambda - v / eps|
    power_slackness: float    # mu |power - P_T| / P_T
    rate_slackness: float     # max |v (r_{g,l} - log2(1/eps))|

    def max_identity(self) -> float:
        return max(self.dual_normalization, self.lambda_consistency)


def kkt_residuals(scenario: Scenario, tx: TransmitState, receivers, duals: DualState) -> KktReport:
    d = scenario.dims
    basis = _StreamBasis(scenario, receivers)
    lam_flat = basis.flat_lambda(duals.lam)
    n_t = d.num_tx_antennas
    a = (basis.b_mat * lam_flat) @ basis.b_mat.conj().T + duals.mu * np.eye(n_t)
    b = basis.rhs(duals.lam)
    w = tx.stacked()
    num = np.linalg.norm(a @ w - b, axis=0)
    den = np.linalg.norm(b, axis=0)
    stationarity = float(np.max(num / np.where(den > 0, den, 1.0)))

    zeta_dev = 0.0
    norm_dev = 0.0
    for l in range(max(d.streams_per_group)):
        total = 0.0
        present = [g for g in range(d.num_groups) if l < d.streams_per_group[g]]
        vals = []
        for g in present:
            z = sum(duals.v[k][l] for k in d.group_users(g)) / scenario.weights[g]
            vals.append(z)
            total += z
        norm_dev = max(norm_dev, abs(total - 1.0))
        for g in present:
            full = [
                sum(duals.v[k][ll] for k in d.group_users(g)) / scenario.weights[g]
                for ll in range(d.streams_per_group[g])
            ]
            zeta_dev = max(zeta_dev, max(full) - min(full))

    eps = kernels.mse(scenario, tx, receivers)
    lam_dev = 0.0
    for k in range(d.num_users):
        target = np.asarray(duals.v[k]) / np.asarray(eps[k])
        scale = np.maximum(np.abs(target), 1e-300)
        lam_dev = max(lam_dev, float(np.max(np.abs(np.asarray(duals.lam[k]) - target) / scale)))

    power = tx.total_power
    power_slack = duals.mu * abs(power - scenario.power_budget) / scenario.power_budget

    grp = kernels.group_rates(scenario, eps, duals.v)
    rate_slack = 0.0
    for k in range(d.num_users):
        g = d.group_of_user(k)
        for l in range(d.streams_per_group[g]):
            rate_slack = max(
                rate_slack,
                abs(duals.v[k][l] * (grp[g][l] + float(np.log2(eps[k][l])))),
            )

    return KktReport(
        stationarity=stationarity,
        zeta_consistency=zeta_dev,
        dual_normalization=norm_dev,
        lambda_consistency=lam_dev,
        power_slackness=power_slack,
        rate_slackness=rate_slack,
    )


# --- dual gradient verification -----------------------------------------------

def lagrangian_evaluator(scenario: Scenario, r_c, grp_rates, eps, lam, mu, tx):
    """Dual function value as a function of the stream-rate duals v alone.

    The common-rate duals are eliminated through
    zeta_g = sum_{k,l} v_{k,l} / (alpha_g L_g); everything else (rates, MSE,
    beamformers, lambda, mu) is held fixed at the supplied point, and
    log2(f(t)) = t with t = -log2(eps).
    """
    d = scenario.dims
    power = tx.total_power

    def value(v) -> float:
        total = -r_c
        for g in range(d.num_groups):
            alpha = scenario.weights[g]
            l_g = d.streams_per_group[g]
            mass = sum(float(np.sum(v[k])) for k in d.group_users(g))
            zeta = mass / (alpha * l_g)
            total += zeta * (r_c - alpha * float(np.sum(grp_rates[g])))
        total += mu * (power - scenario.power_budget)
        for k in range(d.num_users):
            g = d.group_of_user(k)
            t = -np.log2(np.asarray(eps[k]))
            total += float(np.sum(np.asarray(v[k]) * (np.asarray(grp_rates[g]) - t)))
            tp = [kernels.taylor_point(float(e)) for e in eps[k]]
            tangent = np.array([p.a_bar * p.t_bar + p.b_bar for p in tp])
            total += float(np.sum(np.asarray(lam[k]) * (np.asarray(eps[k]) - tangent)))
        return total

    return value


def finite_diff_check(evaluator, gradient, point, h: float) -> float:
    """Max |central difference - closed form| over every v coordinate."""
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("h must lie in [1e-7, 1e-3]")
    err = 0.0
    for k in range(len(point)):
        for l in range(len(point[k])):
            plus = [np.array(x, dtype=float) for x in point]
            minus = [np.array(x, dtype=float) for x in point]
            plus[k][l] += h
            minus[k][l] -= h
            fd = (evaluator(plus) - evaluator(minus)) / (2.0 * h)
            err = max(err, abs(fd - float(gradient[k][l])))
    return err
