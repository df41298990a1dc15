"""Pure transceiver math shared by the solvers and the oracle.

Conventions: user k in group g receives stream l through transmit beamformer
w_{g,l} (column l of W_g) and linear receive filter u_{k,l}.  Rates are in
bits per channel use (log base 2 throughout; the rate auxiliary function is
f(t) = 2^t so log2(f(t)) = t).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .scenario import Scenario

LN2 = float(np.log(2.0))


@dataclass
class TransmitState:
    """Per-group transmit beamformer matrices W_g of shape (N_T, L_g)."""

    beamformers: list  # list[np.ndarray]

    def stacked(self) -> np.ndarray:
        """All beamformer columns side by side, (N_T, sum L_g)."""
        return np.concatenate(self.beamformers, axis=1)

    def column_offset(self, g: int) -> int:
        return sum(w.shape[1] for w in self.beamformers[:g])

    @property
    def total_power(self) -> float:
        return float(sum(np.sum(np.abs(w) ** 2) for w in self.beamformers))


@dataclass
class ReceiveState:
    """Per-user receive filters and the resulting per-stream MSE / SINR."""

    receivers: list  # per user, (N_k, L_g(k)) complex
    mse: list        # per user, (L_g(k),) real
    sinr: list       # per user, (L_g(k),) real


@dataclass(frozen=True)
class TaylorPoint:
    """Tangent of the convex map t -> 2^(-t) at t_bar: a_bar * t + b_bar."""

    t_bar: float
    a_bar: float
    b_bar: float


def taylor_point(epsilon: float) -> TaylorPoint:
    """Linearization point t_bar = -log2(eps) and tangent coefficients.

    For f(t) = 2^t: a = -f'(t)/f(t)^2 = -ln2 * 2^(-t), b = (f + t f')/f^2.
    """
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must be in (0, 1], got %r" % (epsilon,))
    t_bar = -float(np.log2(epsilon))
    inv_f = float(epsilon)  # 2^(-t_bar)
    return TaylorPoint(t_bar=t_bar, a_bar=-LN2 * inv_f, b_bar=inv_f * (1.0 + t_bar * LN2))


def total_power(tx: TransmitState) -> float:
    return tx.total_power


def _effective_channels(scenario: Scenario, tx: TransmitState):
    """Per user: C_k = H_k @ [W_1 ... W_G], shape (N_k, total streams)."""
    w_all = tx.stacked()
    return [h @ w_all for h in scenario.channels]


def mmse_receivers(scenario: Scenario, tx: TransmitState) -> ReceiveState:
    """Linear MMSE filters u = (H W W^H H^H + sigma^2 I)^(-1) H w_{g,l}.

    One Hermitian factorization per user, reused across that user's streams.
    """
    d = scenario.dims
    eff = _effective_channels(scenario, tx)
    receivers = []
    for k in range(d.num_users):
        g = d.group_of_user(k)
        c = eff[k]
        n_k = c.shape[0]
        cov = c @ c.conj().T + scenario.noise_power[k] * np.eye(n_k)
        factor = cho_factor(cov)
        off = tx.column_offset(g)
        l_g = d.streams_per_group[g]
        receivers.append(cho_solve(factor, c[:, off:off + l_g]))
    eps = mse(scenario, tx, receivers)
    gam = sinr(scenario, tx, receivers)
    return ReceiveState(receivers=receivers, mse=eps, sinr=gam)


def mse(scenario: Scenario, tx: TransmitState, receivers) -> list:
    """Per-stream MSE: |1 - u^H H w|^2 + interference + sigma^2 ||u||^2.

    The own stream (g, l) is excluded from the interference sum.
    """
    d = scenario.dims
    eff = _effective_channels(scenario, tx)
    out = []
    for k in range(d.num_users):
        g = d.group_of_user(k)
        off = tx.column_offset(g)
        l_g = d.streams_per_group[g]
        c = eff[k]
        eps = np.empty(l_g)
        for l in range(l_g):
            u = receivers[k][:, l]
            s = u.conj() @ c  # u^H H_k w for every stream column
            own = off + l
            interference = float(np.sum(np.abs(s) ** 2)) - float(np.abs(s[own]) ** 2)
            eps[l] = (
                float(np.abs(1.0 - s[own]) ** 2)
                + interference
                + scenario.noise_power[k] * float(np.linalg.norm(u) ** 2)
            )
        out.append(eps)
    return out


def sinr(scenario: Scenario, tx: TransmitState, receivers) -> list:
    """Per-stream SINR; defined as 0 for a zero receiver (0/0 case)."""
    d = scenario.dims
    eff = _effective_channels(scenario, tx)
    out = []
    for k in range(d.num_users):
        g = d.group_of_user(k)
        off = tx.column_offset(g)
        l_g = d.streams_per_group[g]
        c = eff[k]
        gam = np.empty(l_g)
        for l in range(l_g):
            u = receivers[k][:, l]
            if not np.any(u):
                gam[l] = 0.0
                continue
            s = u.conj() @ c
            own = off + l
            signal = float(np.abs(s[own]) ** 2)
            noise = scenario.noise_power[k] * float(np.linalg.norm(u) ** 2)
            interference = float(np.sum(np.abs(s) ** 2)) - signal
            gam[l] = signal / (interference + noise)
        out.append(gam)
    return out


def per_stream_rate(scenario: Scenario, eps, v, g: int, l: int) -> float:
    """Dual-weighted group rate r_{g,l} = sum_k v log2(1/eps) / sum_k v."""
    users = scenario.dims.group_users(g)
    mass = float(sum(v[k][l] for k in users))
    if mass <= 0.0:
        raise DegenerateDualError("zero dual mass for group %d stream %d" % (g, l))
    num = float(sum(v[k][l] * -np.log2(eps[k][l]) for k in users))
    return num / mass


def group_rates(scenario: Scenario, eps, v) -> list:
    """r_{g,l} for every group and stream, as a list of arrays per group."""
    d = scenario.dims
    return [
        np.array([per_stream_rate(scenario, eps, v, g, l) for l in range(d.streams_per_group[g])])
        for g in range(d.num_groups)
    ]


def achieved_stream_rates(scenario: Scenario, gam) -> list:
    """True decodable rate per stream: min over group users of log2(1 + gamma)."""
    d = scenario.dims
    rates = []
    for g in range(d.num_groups):
        users = list(d.group_users(g))
        rates.append(
            np.array(
                [
                    min(float(np.log2(1.0 + gam[k][l])) for k in users)
                    for l in range(d.streams_per_group[g])
                ]
            )
        )
    return rates


def achieved_objective(scenario: Scenario, gam) -> float:
    """min_g alpha_g * sum_l min_k log2(1 + gamma_{k,l}) -- the true objective."""
    rates = achieved_stream_rates(scenario, gam)
    return min(
        scenario.weights[g] * float(np.sum(rates[g])) for g in range(scenario.dims.num_groups)
    )


class DegenerateDualError(RuntimeError):
    """All dual mass vanished where a positive normalizer is required."""
