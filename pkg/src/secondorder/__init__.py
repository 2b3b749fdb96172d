"""Second-order models, allocation and scheduling for wireless access points.

Mean / temporal-variance models of Gilbert-Elliott channels, capacity-region
checks, the allocation solver, the VWD scheduler with six baselines, and a
seeded slot-level simulator.
"""

from .gilbert_elliott import ChannelState, GeChannelParams
from .models import SecondOrderModel
from .optimizer import (
    AllocationProblem,
    AllocationSolution,
    ClientSpec,
    InfeasibleProblem,
    objective_value,
    optimal_delay,
    separation_oracle,
    solve,
)
from .policies import POLICY_IDS
from .second_order import (
    ChannelModelTable,
    DeliveryTargets,
    aoi_approx,
    check_inner_bound,
    check_outer_bound,
    outage_approx,
    timely_throughput,
)

__version__ = "0.1.0"

__all__ = [
    "AllocationProblem",
    "AllocationSolution",
    "ChannelModelTable",
    "ChannelState",
    "ClientSpec",
    "DeliveryTargets",
    "GeChannelParams",
    "InfeasibleProblem",
    "POLICY_IDS",
    "SecondOrderModel",
    "aoi_approx",
    "check_inner_bound",
    "check_outer_bound",
    "objective_value",
    "optimal_delay",
    "outage_approx",
    "separation_oracle",
    "solve",
    "timely_throughput",
]
