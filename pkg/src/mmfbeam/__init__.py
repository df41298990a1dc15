"""Low-complexity max-min-fairness multicast beamforming for MIMO downlink."""

from .kernels import (
    ReceiveState,
    TaylorPoint,
    TransmitState,
    achieved_objective,
    mmse_receivers,
    mse,
    sinr,
    taylor_point,
)
from .scenario import (
    Dimensions,
    Scenario,
    ScenarioError,
    generate_scenario,
    load_scenario,
    save_scenario,
)
from .siso import SisoConfig, SisoResult, siso_solve
from .wmmf import DualState, SolverConfig, SolveTrace, WmmfResult, solve

__all__ = [
    "Dimensions",
    "DualState",
    "ReceiveState",
    "Scenario",
    "ScenarioError",
    "SisoConfig",
    "SisoResult",
    "SolveTrace",
    "SolverConfig",
    "TaylorPoint",
    "TransmitState",
    "WmmfResult",
    "achieved_objective",
    "generate_scenario",
    "load_scenario",
    "mmse_receivers",
    "mse",
    "save_scenario",
    "sinr",
    "siso_solve",
    "solve",
    "taylor_point",
]
