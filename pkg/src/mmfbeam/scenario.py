"""Problem instances: dimensions, seeded Rayleigh channels, config I/O.

All solver math runs in linear units; dB -> linear conversion happens once
here, at construction time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class ScenarioError(ValueError):
    """Invalid dimensions or scenario data; message names the violated invariant."""


@dataclass(frozen=True)
class Dimensions:
    """Sizes of a multi-group multicast instance.

    num_tx_antennas: N_T
    users_per_group: K_g per group (groups are non-overlapping, K = sum K_g)
    rx_antennas_per_user: N_k per user, global user index order (group-major)
    streams_per_group: L_g per group; defaults to min N_k within the group
    """

    num_tx_antennas: int
    users_per_group: tuple[int, ...]
    rx_antennas_per_user: tuple[int, ...]
    streams_per_group: tuple[int, ...] = ()

    def __post_init__(self):
        if self.num_tx_antennas < 1:
            raise ScenarioError("num_tx_antennas must be >= 1")
        if not self.users_per_group or any(k < 1 for k in self.users_per_group):
            raise ScenarioError("users_per_group must be non-empty positive integers")
        if len(self.rx_antennas_per_user) != sum(self.users_per_group):
            raise ScenarioError(
                "rx_antennas_per_user length %d != total users %d"
                % (len(self.rx_antennas_per_user), sum(self.users_per_group))
            )
        if any(n < 1 for n in self.rx_antennas_per_user):
            raise ScenarioError("rx_antennas_per_user must be positive")
        if not self.streams_per_group:
            default = tuple(
                min(self.rx_antennas_per_user[k] for k in self.group_users(g))
                for g in range(self.num_groups)
            )
            object.__setattr__(self, "streams_per_group", default)
        if len(self.streams_per_group) != self.num_groups:
            raise ScenarioError("streams_per_group length != num_groups")
        for g, l_g in enumerate(self.streams_per_group):
            n_min = min(self.rx_antennas_per_user[k] for k in self.group_users(g))
            if not 1 <= l_g <= n_min:
                raise ScenarioError(
                    "streams_per_group[%d]=%d outside [1, min N_k=%d]" % (g, l_g, n_min)
                )

    @property
    def num_groups(self) -> int:
        return len(self.users_per_group)

    @property
    def num_users(self) -> int:
        return sum(self.users_per_group)

    def group_users(self, g: int) -> range:
        """Global user indices belonging to group g."""
        start = sum(self.users_per_group[:g])
        return range(start, start + self.users_per_group[g])

    def group_of_user(self, k: int) -> int:
        acc = 0
        for g, kg in enumerate(self.users_per_group):
            acc += kg
            if k < acc:
                return g
        raise ScenarioError("user index %d out of range" % k)

    @property
    def total_streams(self) -> int:
        return sum(self.streams_per_group)

    @property
    def interference_limited(self) -> bool:
        """True when requested streams exceed transmit spatial degrees of freedom."""
        return self.total_streams > self.num_tx_antennas


@dataclass(frozen=True)
class Scenario:
    """One immutable problem instance; safe to share across solver calls."""

    dims: Dimensions
    channels: tuple[np.ndarray, ...]  # H_k, shape (N_k, N_T)
    noise_power: tuple[float, ...]    # sigma_k^2, linear
    weights: tuple[float, ...]        # alpha_g
    power_budget: float               # P_T, linear
    seed: int = 0

    def __post_init__(self):
        d = self.dims
        if len(self.channels) != d.num_users:
            raise ScenarioError("channels: expected %d matrices" % d.num_users)
        for k, h in enumerate(self.channels):
            if h.shape != (d.rx_antennas_per_user[k], d.num_tx_antennas):
                raise ScenarioError(
                    "channels[%d] shape %s != (%d, %d)"
                    % (k, h.shape, d.rx_antennas_per_user[k], d.num_tx_antennas)
                )
            if not np.all(np.isfinite(h)):
                raise ScenarioError("channels[%d] has non-finite entries" % k)
        if len(self.noise_power) != d.num_users or any(s <= 0 for s in self.noise_power):
            raise ScenarioError("noise_power must be positive per user")
        if len(self.weights) != d.num_groups or any(a <= 0 for a in self.weights):
            raise ScenarioError("weights must be positive per group")
        if not self.power_budget > 0:
            raise ScenarioError("power_budget must be positive")


def channel_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Deterministic counter-based generator (Philox4x64), keyed by (seed, stream).

    Stream 0 draws channels; stream 1 seeds solver beamformer initialization.
    """
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), stream]))


def generate_scenario(
    dims: Dimensions,
    p_t_db: float,
    sigma2: float = 1.0,
    weights=None,
    seed: int = 0,
) -> Scenario:
    """Draw i.i.d. CN(0,1) channels from the stream keyed by `seed`.

    Identical arguments yield bit-identical scenarios.
    """
    if weights is None:
        weights = (1.0,) * dims.num_groups
    rng = channel_rng(seed, stream=0)
    channels = []
    for k in range(dims.num_users):
        shape = (dims.rx_antennas_per_user[k], dims.num_tx_antennas)
        h = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
        h.setflags(write=False)
        channels.append(h)
    return Scenario(
        dims=dims,
        channels=tuple(channels),
        noise_power=(float(sigma2),) * dims.num_users,
        weights=tuple(float(a) for a in weights),
        power_budget=float(10.0 ** (p_t_db / 10.0)),
        seed=int(seed),
    )


def scenario_from_config(cfg: dict) -> Scenario:
    """Build a Scenario from the JSON config schema.

    Schema: {seed, n_tx, groups: [{users: [{n_rx}], weight}],
             streams_per_group (optional), p_t_db, sigma2_db or sigma2,
             channels (optional, [[ [re,im], ... ]] per user)}.
    """
    try:
        groups = cfg["groups"]
        users_per_group = tuple(len(g["users"]) for g in groups)
        rx = tuple(u["n_rx"] for g in groups for u in g["users"])
        weights = tuple(float(g.get("weight", 1.0)) for g in groups)
        dims = Dimensions(
            num_tx_antennas=int(cfg["n_tx"]),
            users_per_group=users_per_group,
            rx_antennas_per_user=rx,
            streams_per_group=tuple(cfg.get("streams_per_group", ())),
        )
        seed = int(cfg.get("seed", 0))
        p_t_db = float(cfg["p_t_db"])
        if "sigma2_db" in cfg:
            sigma2 = 10.0 ** (float(cfg["sigma2_db"]) / 10.0)
        else:
            sigma2 = float(cfg.get("sigma2", 1.0))
        # exact linear value wins over the dB field when present (round-trip)
        power_budget = float(cfg.get("power_budget", 10.0 ** (p_t_db / 10.0)))
    except (KeyError, TypeError) as exc:
        raise ScenarioError("config missing or malformed field: %s" % exc) from exc

    if "channels" in cfg:
        channels = tuple(_complex_from_pairs(m) for m in cfg["channels"])
        return Scenario(
            dims=dims,
            channels=channels,
            noise_power=(sigma2,) * dims.num_users,
            weights=weights,
            power_budget=power_budget,
            seed=seed,
        )
    s = generate_scenario(dims, p_t_db, sigma2, weights, seed)
    if "power_budget" in cfg:
        object.__setattr__(s, "power_budget", power_budget)
    return s


def _complex_from_pairs(mat) -> np.ndarray:
    arr = np.asarray(mat, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ScenarioError("channel matrix must be nested [re, im] pairs")
    out = arr[..., 0] + 1j * arr[..., 1]
    out.setflags(write=False)
    return out


def _pairs_from_complex(h: np.ndarray):
    return [[[float(v.real), float(v.imag)] for v in row] for row in h]


def scenario_to_config(s: Scenario) -> dict:
    """Full round-trippable form: explicit channels as [re, im] pairs."""
    d = s.dims
    groups = []
    for g in range(d.num_groups):
        groups.append(
            {
                "users": [{"n_rx": d.rx_antennas_per_user[k]} for k in d.group_users(g)],
                "weight": s.weights[g],
            }
        )
    return {
        "seed": s.seed,
        "n_tx": d.num_tx_antennas,
        "groups": groups,
        "streams_per_group": list(d.streams_per_group),
        "p_t_db": 10.0 * float(np.log10(s.power_budget)),
        "power_budget": s.power_budget,
        "sigma2": s.noise_power[0],
        "channels": [_pairs_from_complex(h) for h in s.channels],
    }


def save_scenario(s: Scenario, path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_config(s), fh, indent=1)
        fh.write("\n")


def load_scenario(path) -> Scenario:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioError(
            "parse failure in %s at line %d col %d: %s"
            % (path, exc.lineno, exc.colno, exc.msg)
        ) from exc
    return scenario_from_config(cfg)
