"""Max-min-SINR beamforming for single-antenna receivers, one stream per group.

Per iteration l (previous iterates marked with bars):

    w_i  = Psi_{-i}^{-1}(lambda, mu) Phi_i(lambda, w_bar_i)
    Psi_{-i} = mu I + sum_{j != i} sum_{k in K_j} lambda_{j,k} h_k h_k^H
    Phi_i    = (1/gamma_bar) sum_{k in K_i} lambda_{i,k} (h_k^H w_bar_i) h_k
    gamma    = sqrt(gamma_bar^2 / sum_{i,k} lambda_{i,k} |h_k^H w_bar_i|^2)
    lambda_{i,k} <- [lambda_{i,k} + beta (gamma - gamma_{i,k})]^+

mu is bisected each iteration so the transmit power meets the budget with
equality (the constraint is always active at a max-min optimum).  Users whose
received SINR trails the common estimate gain weight in their group's
beamformer; the best iterate by true min-user SINR is returned.

Three safeguards keep the raw fixed point from diverging:
  * the scale of lambda is a gauge freedom (scaling (lambda, mu) jointly
    leaves the beamformers unchanged once power is pinned), so lambda is
    renormalized each iteration to sum_{i,k} lambda |h_k^H w_i|^2 = 1;
    the common-SINR recursion is only consistent on that manifold
  * the common-SINR estimate is clamped into the achieved per-user SINR
    bracket [min_k gamma_{i,k}, max_k gamma_{i,k}]; outside it the additive
    lambda step loses all scale information and collapses geometrically
  * w_i = 0 is an absorbing point of the update (Phi_i is linear in w_bar_i),
    so a group whose beamformer power starves is re-seeded along its
    lambda-weighted channel direction at a small power floor
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenario import Scenario, channel_rng
from .wmmf import NumericalFailure


class SisoPreconditionError(ValueError):
    """Raised for multi-antenna receivers; use the multi-stream solver instead."""


@dataclass
class SisoConfig:
    step_size: float = 1e-3
    max_iters: int = 3000
    convergence_tol: float = 1e-9   # on the sup-norm of the lambda step
    bisection_tol: float = 1e-8
    mu_min: float = 1e-9
    revive_power_fraction: float = 1e-4  # per-group power floor, fraction of P_T/G

    def __post_init__(self):
        if min(self.step_size, self.convergence_tol, self.bisection_tol,
               self.mu_min, self.revive_power_fraction) <= 0:
            raise ValueError("config values must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class SisoTrace:
    min_sinr: list = field(default_factory=list)
    gamma_common: list = field(default_factory=list)
    power: list = field(default_factory=list)
    mu: list = field(default_factory=list)
    gamma_denominator_flags: list = field(default_factory=list)  # iters with zero denom


@dataclass
class SisoResult:
    beamformers: np.ndarray  # (N_T, G), column i serves group i
    min_sinr: float
    per_user_sinr: np.ndarray
    trace: SisoTrace
    iterations: int


def _check_scenario(scenario: Scenario):
    d = scenario.dims
    if any(n != 1 for n in d.rx_antennas_per_user):
        raise SisoPreconditionError(
            "single-antenna receivers required; use the multi-stream solver"
        )
    if any(l != 1 for l in d.streams_per_group):
        raise SisoPreconditionError("one stream per group required")


def _channel_rows(scenario: Scenario) -> np.ndarray:
    """Row k is h_k^H (so rows @ w gives h_k^H w for every user)."""
    return np.stack([h[0] for h in scenario.channels], axis=0)


def user_sinr(scenario: Scenario, rows: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Received SINR per user for beamformer columns w (one per group)."""
    d = scenario.dims
    gains = np.abs(rows @ w) ** 2  # (K, G)
    out = np.empty(d.num_users)
    for k in range(d.num_users):
        g = d.group_of_user(k)
        other = float(np.sum(gains[k])) - float(gains[k, g])
        out[k] = gains[k, g] / (scenario.noise_power[k] + other)
    return out


def siso_beamformer(scenario: Scenario, lam: np.ndarray, mu: float,
                    w_prev: np.ndarray, gamma_prev: float) -> np.ndarray:
    """One fixed-point beamformer update at a given mu (no power bisection)."""
    if mu <= 0 or gamma_prev <= 0:
        raise ValueError("mu and gamma_prev must be positive")
    rows = _channel_rows(scenario)
    return _Updater(scenario, rows, lam, w_prev, gamma_prev).beamformers(mu)


def _weighted_gain(scenario: Scenario, rows: np.ndarray, lam: np.ndarray,
                   w: np.ndarray) -> float:
    """sum_{i,k} lambda_{i,k} |h_k^H w_i|^2, the gauge normalizer."""
    d = scenario.dims
    total = 0.0
    for k in range(d.num_users):
        i = d.group_of_user(k)
        total += lam[k] * float(np.abs(rows[k] @ w[:, i]) ** 2)
    return total


class _Updater:
    """Per-group eigendecomposition of the cross-group channel load, so the
    power at any mu is closed-form during bisection."""

    def __init__(self, scenario: Scenario, rows: np.ndarray, lam, w_prev, gamma_prev):
        d = scenario.dims
        h_cols = rows.conj().T  # column k is h_k
        self.proj = []
        self.evals = []
        self.evecs = []
        for i in range(d.num_groups):
            psi_load = np.zeros((d.num_tx_antennas, d.num_tx_antennas), dtype=complex)
            for j in range(d.num_groups):
                if j == i:
                    continue
                for k in d.group_users(j):
                    hk = h_cols[:, k]
                    psi_load += lam[k] * np.outer(hk, hk.conj())
            evals, evecs = np.linalg.eigh(psi_load)
            phi = np.zeros(d.num_tx_antennas, dtype=complex)
            for k in d.group_users(i):
                hk = h_cols[:, k]
                phi += lam[k] * (rows[k] @ w_prev[:, i]) * hk
            phi /= gamma_prev
            self.evals.append(np.maximum(evals, 0.0))
            self.evecs.append(evecs)
            self.proj.append(evecs.conj().T @ phi)

    def power(self, mu: float) -> float:
        return float(
            sum(
                np.sum(np.abs(p) ** 2 / (e + mu) ** 2)
                for p, e in zip(self.proj, self.evals)
            )
        )

    def beamformers(self, mu: float) -> np.ndarray:
        cols = [
            q @ (p / (e + mu))
            for q, p, e in zip(self.evecs, self.proj, self.evals)
        ]
        return np.stack(cols, axis=1)


def _bisect_mu(updater: _Updater, p_t: float, cfg: SisoConfig) -> float:
    lo = cfg.mu_min
    p_lo = updater.power(lo)
    if not np.isfinite(p_lo):
        raise NumericalFailure("non-finite power during bisection")
    if p_lo <= p_t:
        return lo
    hi = max(1.0, lo)
    for _ in range(128):
        if updater.power(hi) <= p_t:
            break
        hi *= 2.0
    else:
        raise NumericalFailure("mu bracket not found within 128 doublings")
    mu = hi
    for _ in range(200):
        mu = 0.5 * (lo + hi)
        p = updater.power(mu)
        if abs(p - p_t) <= cfg.bisection_tol * p_t:
            break
        if p > p_t:
            lo = mu
        else:
            hi = mu
    return mu


def gamma_estimate(lam: np.ndarray, w_prev: np.ndarray, gamma_prev: float,
                   rows: np.ndarray, group_of_user) -> tuple[float, bool]:
    """gamma = sqrt(gamma_prev^2 / sum_{i,k} lambda |h_k^H w_i|^2).

    Returns (gamma, flagged); on a zero denominator the previous value is kept
    and the iteration is flagged.
    """
    denom = 0.0
    for k in range(rows.shape[0]):
        i = group_of_user(k)
        denom += lam[k] * float(np.abs(rows[k] @ w_prev[:, i]) ** 2)
    if denom <= 0.0:
        return gamma_prev, True
    return float(np.sqrt(gamma_prev**2 / denom)), False


def siso_lambda_update(lam_prev: np.ndarray, beta: float, gamma_common: float,
                       per_user: np.ndarray) -> np.ndarray:
    """Projected step: [lambda + beta (gamma - gamma_{i,k})]^+."""
    return np.maximum(0.0, lam_prev + beta * (gamma_common - per_user))


def _revive_starved_groups(scenario: Scenario, rows: np.ndarray, lam: np.ndarray,
                           w: np.ndarray, floor: float) -> np.ndarray:
    d = scenario.dims
    for i in range(d.num_groups):
        if float(np.sum(np.abs(w[:, i]) ** 2)) >= floor:
            continue
        direction = np.zeros(d.num_tx_antennas, dtype=complex)
        for k in d.group_users(i):
            direction += max(lam[k], 1e-12) * rows[k].conj()
        norm = np.linalg.norm(direction)
        if norm > 0.0:
            w[:, i] = direction / norm * np.sqrt(floor)
    return w


def siso_solve(scenario: Scenario, config: SisoConfig | None = None) -> SisoResult:
    _check_scenario(scenario)
    cfg = config or SisoConfig()
    d = scenario.dims
    rows = _channel_rows(scenario)
    p_t = scenario.power_budget

    rng = channel_rng(scenario.seed, stream=1)
    w = (rng.standard_normal((d.num_tx_antennas, d.num_groups))
         + 1j * rng.standard_normal((d.num_tx_antennas, d.num_groups))) / np.sqrt(2.0)
    # random directions, equal per-group split at the full budget
    w = w / np.sqrt(np.sum(np.abs(w) ** 2, axis=0, keepdims=True))
    w *= np.sqrt(p_t / d.num_groups)
    lam = np.full(d.num_users, 1.0 / d.num_users)
    gain = _weighted_gain(scenario, rows, lam, w)
    if gain > 0.0:
        lam /= gain
    gamma = 1.0
    floor = cfg.revive_power_fraction * p_t / d.num_groups

    trace = SisoTrace()
    best_sinr = -np.inf
    best_w = w
    iterations = 0

    for it in range(1, cfg.max_iters + 1):
        iterations = it
        updater = _Updater(scenario, rows, lam, w, gamma)
        mu = _bisect_mu(updater, p_t, cfg)
        w_new = updater.beamformers(mu)
        w_new = _revive_starved_groups(scenario, rows, lam, w_new, floor)
        power = float(np.sum(np.abs(w_new) ** 2))
        if power <= 0.0:
            raise NumericalFailure("all beamformers collapsed to zero")
        if abs(power - p_t) > cfg.bisection_tol * p_t:
            w_new *= np.sqrt(p_t / power)

        gamma_raw, flagged = gamma_estimate(lam, w, gamma, rows, d.group_of_user)
        per_user = user_sinr(scenario, rows, w_new)
        gamma_new = float(np.clip(gamma_raw, np.min(per_user), np.max(per_user)))
        lam_new = siso_lambda_update(lam, cfg.step_size, gamma_new, per_user)
        gain = _weighted_gain(scenario, rows, lam_new, w_new)
        if gain > 0.0:
            lam_new = lam_new / gain

        min_sinr = float(np.min(per_user))
        if min_sinr > best_sinr:
            best_sinr = min_sinr
            best_w = w_new

        trace.min_sinr.append(min_sinr)
        trace.gamma_common.append(gamma_new)
        trace.power.append(float(np.sum(np.abs(w_new) ** 2)))
        trace.mu.append(mu)
        if flagged:
            trace.gamma_denominator_flags.append(it)

        step = float(np.max(np.abs(lam_new - lam)))
        w, gamma, lam = w_new, gamma_new, lam_new
        if step < cfg.convergence_tol and it > 1:
            break

    return SisoResult(
        beamformers=best_w,
        min_sinr=float(np.min(user_sinr(scenario, rows, best_w))),
        per_user_sinr=user_sinr(scenario, rows, best_w),
        trace=trace,
        iterations=iterations,
    )
