"""Live reconfiguration of component-based applications on a simulated container."""

from .errors import ReconfigError
from .model import (
    BeanKind,
    BeanType,
    EnvEntry,
    InterfaceId,
    LifecycleState,
    ModuleDeployment,
    ModuleType,
    ReferenceDecl,
    Registry,
    SELF,
    StateField,
    WiringTarget,
)
from .runtime import CallSpec, CallStatus, Container, PoolRef, RefMap, StateOp
from .compat import CompatReport, check_compat, counterpart
from .strategy import (
    ExecutionReport,
    ReconfigurationPlan,
    Strategy,
    StrategyKind,
    builtin,
    execute,
    instantiate,
    validate,
)
from .scenario import Metrics, RunResult, Scenario, load_scenario, parse_scenario, run_scenario

__all__ = [
    "BeanKind", "BeanType", "CallSpec", "CallStatus", "CompatReport", "Container", "EnvEntry",
    "ExecutionReport", "InterfaceId", "LifecycleState", "ModuleDeployment", "ModuleType", "PoolRef",
    "ReconfigError", "ReconfigurationPlan", "RefMap", "ReferenceDecl", "Registry", "SELF", "StateField",
    "StateOp", "Strategy", "StrategyKind", "WiringTarget", "builtin", "check_compat", "counterpart",
    "execute", "instantiate", "validate", "Metrics", "RunResult", "Scenario", "load_scenario",
    "parse_scenario", "run_scenario",
]
