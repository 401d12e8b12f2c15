"""Strategies: arrangements of step executors wired by parameter mappings.

A strategy is valid when the dependency edges (the step dependency table
restricted to the steps present, plus one edge per step-to-step mapping)
are acyclic, the declared step order respects every edge, and every
required executor input is fed by a strategy input or an earlier output.

Mapping endpoints are strings: ``"a.deployment"`` names a step port,
``"$replacedDeploymentId"`` a strategy input (as source) or strategy output
(as target).
"""

from __future__ import annotations

import graphlib
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping

from .compat import CompatReport, check_compat
from .errors import InvalidStrategy, KindMismatch, MissingInput, ReconfigError, ValidationError
from .runtime import Container, RefMap
from .steps import (
    DEPENDENCIES,
    DatastoreSnapshot,
    StateBundle,
    STEP_IDS,
    PortKind,
    PortSpec,
    StepContext,
    StepExecutor,
    get_executor,
    kind_accepts,
    run_l,
)

log = logging.getLogger(__name__)

REPLACED = "replacedDeploymentId"
REPLACING = "replacingModuleTypeId"


class StrategyKind(str, Enum):
    F = "F"
    NI = "NI"
    I = "I"  # noqa: E741
    INI = "INI"
    CUSTOM = "Custom"
    ADHOC = "AdHoc"


BUILTIN_ORDERS: dict[StrategyKind, str] = {
    StrategyKind.F: "ailo",
    StrategyKind.NI: "ailmo",
    StrategyKind.I: "abcdefghijklmno",
    StrategyKind.INI: "abcildefjkmno",
}


@dataclass(frozen=True)
class ExecutorBinding:
    step: str
    implementation: str = ""
    options: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.step not in STEP_IDS:
            raise ValidationError(f"unknown step {self.step!r}")
        if not self.implementation:
            object.__setattr__(self, "implementation", f"default.{self.step}")

    @property
    def executor(self) -> StepExecutor:
        return get_executor(self.implementation)

    @property
    def ports(self) -> tuple[PortSpec, ...]:
        return self.executor.ports


@dataclass(frozen=True)
class ParamMapping:
    source: str
    target: str

    def __str__(self) -> str:
        return f"{self.source} -> {self.target}"


def _split(endpoint: str) -> tuple[str | None, str]:
    """``"$x"`` -> (None, "x"); ``"a.port"`` -> ("a", "port")."""
    if endpoint.startswith("$"):
        return None, endpoint[1:]
    step, _, port = endpoint.partition(".")
    if not port:
        raise ValidationError(f"bad mapping endpoint {endpoint!r}")
    return step, port


@dataclass(frozen=True)
class Strategy:
    name: str
    kind: StrategyKind
    steps: tuple[ExecutorBinding, ...]
    mappings: tuple[ParamMapping, ...] = ()
    inputs: tuple[PortSpec, ...] = ()
    outputs: tuple[PortSpec, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", StrategyKind(self.kind))
        for attr in ("steps", "mappings", "inputs", "outputs"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))

    @property
    def order(self) -> list[str]:
        return [b.step for b in self.steps]

    def binding(self, step: str) -> ExecutorBinding | None:
        return next((b for b in self.steps if b.step == step), None)

    def input(self, name: str) -> PortSpec | None:
        return next((p for p in self.inputs if p.name == name), None)

    def output(self, name: str) -> PortSpec | None:
        return next((p for p in self.outputs if p.name == name), None)


@dataclass
class ValidationResult:
    cycle: list[str] = field(default_factory=list)
    unconnected: list[str] = field(default_factory=list)
    order_conflicts: list[tuple[str, str]] = field(default_factory=list)
    problems: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not (self.cycle or self.unconnected or self.order_conflicts or self.problems)

    def __bool__(self) -> bool:
        return self.valid

    def render(self) -> str:
        if self.valid:
            return "Valid"
        parts = []
        if self.cycle:
            parts.append("cycle " + " -> ".join(self.cycle))
        if self.unconnected:
            parts.append("unconnected " + ", ".join(self.unconnected))
        if self.order_conflicts:
            parts.append("order " + ", ".join(f"{a} before {b}" for a, b in self.order_conflicts))
        parts.extend(self.problems)
        return "Invalid: " + "; ".join(parts)


def strategy_edges(strategy: Strategy) -> set[tuple[str, str]]:
    """Dependency edges ``(before, after)`` among the strategy's steps."""
    present = set(strategy.order)
    edges = {(dep, step) for step in present for dep in DEPENDENCIES[step] if dep in present}
    for m in strategy.mappings:
        src, _ = _split(m.source)
        dst, _ = _split(m.target)
        if src is not None and dst is not None and src in present and dst in present:
            edges.add((src, dst))
    return edges


def validate(strategy: Strategy) -> ValidationResult:
    result = ValidationResult()
    order = strategy.order
    if len(order) != len(set(order)):
        result.problems.append("a step appears twice")
    bindings: dict[str, ExecutorBinding] = {}
    for b in strategy.steps:
        try:
            ex = b.executor
        except ReconfigError as exc:
            result.problems.append(f"step {b.step}: unknown executor {exc}")
            continue
        if ex.step != b.step:
            result.problems.append(f"step {b.step}: executor {ex.name} implements step {ex.step}")
            continue
        bindings[b.step] = b

    def port_of(endpoint: str, direction: str) -> PortSpec | None:
        step, port = _split(endpoint)
        if step is None:
            return (strategy.input if direction == "out" else strategy.output)(port)
        b = bindings.get(step)
        if b is None:
            return None
        spec = b.executor.port(port)
        return spec if spec is not None and spec.direction == direction else None

    fed: dict[str, str] = {}
    for m in strategy.mappings:
        src = port_of(m.source, "out")
        dst = port_of(m.target, "in")
        if src is None:
            result.problems.append(f"mapping {m}: no source {m.source}")
            continue
        if dst is None:
            result.problems.append(f"mapping {m}: no target {m.target}")
            continue
        if src.kind is not dst.kind:
            result.problems.append(f"mapping {m}: {src.kind.value} does not fit {dst.kind.value}")
            continue
        if m.target in fed:
            result.problems.append(f"{m.target} fed twice")
        fed[m.target] = m.source

    for step, b in bindings.items():
        for port in b.executor.inputs:
            if not port.optional and f"{step}.{port.name}" not in fed:
                result.unconnected.append(f"{step}.{port.name}")
    for port in strategy.outputs:
        if f"${port.name}" not in fed:
            result.unconnected.append(f"${port.name}")

    edges = strategy_edges(strategy)
    sorter = graphlib.TopologicalSorter({s: set() for s in order})
    for before, after in edges:
        sorter.add(after, before)
    try:
        sorter.prepare()
    except graphlib.CycleError as exc:
        result.cycle = list(exc.args[1])
        return result
    position = {s: i for i, s in enumerate(order)}
    for before, after in sorted(edges):
        if position[before] >= position[after]:
            result.order_conflicts.append((before, after))
    return result


# -- built-in strategies ---------------------------------------------------

def builtin(kind: StrategyKind | str) -> Strategy:
    """One of the four shipped strategies: F, NI, I or INI."""
    kind = StrategyKind(kind)
    if kind not in BUILTIN_ORDERS:
        raise ValidationError(f"no built-in strategy {kind.value}")
    order = BUILTIN_ORDERS[kind]
    present = set(order)
    options: dict[str, dict[str, Any]] = {
        "m": {"mode": "NonInterrupt" if kind is StrategyKind.NI else "Interrupt"},
        "o": {"undeploy": True, "flash": kind is StrategyKind.F},
    }
    steps = [ExecutorBinding(s, f"default.{s}", options.get(s, {})) for s in order]
    maps = [
        (f"${REPLACING}", "a.module_type"),
        (f"${REPLACED}", "a.replaced"),
        ("a.deployment", "i.deployment"),
        (f"${REPLACED}", "l.old"),
        ("a.deployment", "l.new"),
        (f"${REPLACED}", "m.old"),
        ("a.deployment", "m.new"),
        (f"${REPLACED}", "o.old"),
        (f"${REPLACED}", "b.members"),
        ("b.region", "c.region"),
        ("b.region", "d.region"),
        ("b.region", "e.region"),
        ("b.region", "f.region"),
        ("b.region", "g.region"),
        ("b.region", "n.region"),
        ("g.snapshot", "h.source"),
        ("a.deployment", "h.target"),
        ("f.bundle", "j.bundle"),
        ("a.deployment", "j.target"),
        ("j.instances", "k.instances"),
        ("k.refs", "m.exclude"),
        ("k.refs", "n.refs_k"),
        ("m.refs", "n.refs_m"),
        ("a.deployment", "$newDeploymentId"),
        ("e.quiescent_at", "$quiescentAt"),
    ]
    mappings = []
    for source, target in maps:
        src, _ = _split(source)
        dst, _ = _split(target)
        if (src is None or src in present) and (dst is None or dst in present):
            mappings.append(ParamMapping(source, target))
    outputs = [PortSpec("newDeploymentId", "out", PortKind.DEPLOYMENT_ID)]
    if "e" in present:
        outputs.append(PortSpec("quiescentAt", "out", PortKind.TICK))
    return Strategy(
        name=kind.value,
        kind=kind,
        steps=tuple(steps),
        mappings=tuple(mappings),
        inputs=(PortSpec(REPLACED, "in", PortKind.DEPLOYMENT_ID), PortSpec(REPLACING, "in", PortKind.MODULE_TYPE_ID)),
        outputs=tuple(outputs),
    )


BUILTIN_KINDS = (StrategyKind.F, StrategyKind.NI, StrategyKind.I, StrategyKind.INI)


def builtin_catalog() -> dict[str, Strategy]:
    return {k.value: builtin(k) for k in BUILTIN_KINDS}


# -- plans -----------------------------------------------------------------

@dataclass(frozen=True)
class ReconfigurationPlan:
    strategy: str | Strategy
    input_values: Mapping[str, Any]


@dataclass(frozen=True)
class ExecutablePlan:
    strategy: Strategy
    values: Mapping[str, Any]


def instantiate(plan: ReconfigurationPlan, catalog: Mapping[str, Strategy] | None = None) -> ExecutablePlan:
    """Bind input values to a validated strategy."""
    strategy = plan.strategy
    if not isinstance(strategy, Strategy):
        strategies = {**builtin_catalog(), **(catalog or {})}
        if strategy == "I/NI":
            strategy = "INI"
        if strategy not in strategies:
            raise InvalidStrategy(f"unknown strategy {strategy!r}")
        strategy = strategies[strategy]
    result = validate(strategy)
    if not result.valid:
        raise InvalidStrategy(f"{strategy.name}: {result.render()}")
    for port in strategy.inputs:
        if port.name not in plan.input_values:
            raise MissingInput(port.name)
        if not kind_accepts(port.kind, plan.input_values[port.name]):
            raise KindMismatch(f"{port.name} expects {port.kind.value}, got {plan.input_values[port.name]!r}")
    extra = set(plan.input_values) - {p.name for p in strategy.inputs}
    if extra:
        raise KindMismatch(f"{strategy.name} has no inputs {sorted(extra)}")
    return ExecutablePlan(strategy, dict(plan.input_values))


# -- execution -------------------------------------------------------------

@dataclass
class StepRecord:
    step: str
    executor: str
    start_tick: int
    end_tick: int
    outputs: dict[str, Any]


@dataclass
class ExecutionReport:
    strategy: str
    per_step: list[StepRecord] = field(default_factory=list)
    strategy_outputs: dict[str, Any] = field(default_factory=dict)
    outcome: str = "Completed"
    failed_step: str | None = None
    error: str | None = None
    compat: CompatReport | None = None

    @property
    def completed(self) -> bool:
        return self.outcome == "Completed"

    @property
    def executed_order(self) -> list[str]:
        return [r.step for r in self.per_step]

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": self.strategy,
            "outcome": self.outcome,
            "failed_step": self.failed_step,
            "error": self.error,
            "steps": [
                {"step": r.step, "executor": r.executor, "start": r.start_tick, "end": r.end_tick,
                 "outputs": {k: describe_value(v) for k, v in sorted(r.outputs.items())}}
                for r in self.per_step
            ],
            "outputs": {k: describe_value(v) for k, v in sorted(self.strategy_outputs.items())},
        }

    def render(self) -> str:
        lines = [f"strategy {self.strategy}: {self.outcome}"
                 + (f" at step {self.failed_step}: {self.error}" if self.failed_step else "")]
        for r in self.per_step:
            outs = " ".join(f"{k}={describe_value(v)}" for k, v in sorted(r.outputs.items()))
            lines.append(f"  {r.step} [{r.start_tick}..{r.end_tick}] {r.executor} {outs}".rstrip())
        for k, v in sorted(self.strategy_outputs.items()):
            lines.append(f"  output {k}={describe_value(v)}")
        return "\n".join(lines) + "\n"


def describe_value(value: Any) -> str:
    if isinstance(value, StateBundle):
        return f"bundle({len(value.entries)})"
    if isinstance(value, DatastoreSnapshot):
        return f"snapshot({value.owner},{len(value.entries)})"
    if isinstance(value, RefMap):
        return f"refmap({len(value.pairs)},skipped={len(value.skipped)})"
    if isinstance(value, dict):
        return "{" + ",".join(f"{k}:{v}" for k, v in sorted(value.items())) + "}"
    return str(value)


def route_for_ini(container: Container, old: str, new: str) -> None:
    """Send new sessions to ``new`` right away and let both modules share one datastore.

    Called between steps l and d of the I/NI strategy.  Sessions opened from
    here on are bound to ``new`` and never enter the quiescence region.
    """
    registry = container.registry
    if not any(k[0] == old for k in registry.forwarding):
        run_l(container, old, new)
    container.alias_datastore(new, old)
    container.emit("ROUTE", detail=f"new sessions {old}->{new}")


def execute(plan: ExecutablePlan, container: Container, check: bool = True) -> ExecutionReport:
    """Run every step of the plan in order; failures end up in the report.

    With ``check`` the replacement restrictions are evaluated first and a
    violation stops the run before any step executes.  There is no rollback.
    """
    strategy = plan.strategy
    report = ExecutionReport(strategy.name)
    values: dict[str, Any] = {f"${k}": v for k, v in plan.values.items()}
    if check and REPLACED in plan.values and REPLACING in plan.values:
        try:
            report.compat = check_compat(container, plan.values[REPLACED], plan.values[REPLACING])
        except ReconfigError as exc:
            report.outcome, report.failed_step, report.error = "Failed", "compat", str(exc)
            return report
        if not report.compat.passed:
            report.outcome, report.failed_step = "Failed", "compat"
            report.error = "; ".join(str(v) for v in report.compat.violations)
            return report
    feeds: dict[str, str] = {m.target: m.source for m in strategy.mappings}
    container.emit("STRATEGY", detail=f"begin {strategy.name}")
    for binding in strategy.steps:
        ex = binding.executor
        inputs = {}
        for port in ex.inputs:
            source = feeds.get(f"{binding.step}.{port.name}")
            if source is not None and source in values:
                inputs[port.name] = values[source]
        start = container.now
        container.emit("STEP", detail=f"step={binding.step} status=begin executor={ex.name}")
        ctx = StepContext(container, strategy.kind.value, dict(binding.options))
        try:
            outputs = ex.fn(ctx, inputs) or {}
            if strategy.kind is StrategyKind.INI and binding.step == "l":
                route_for_ini(container, plan.values[REPLACED], values["a.deployment"])
        except ReconfigError as exc:
            report.per_step.append(StepRecord(binding.step, ex.name, start, container.now, {}))
            report.outcome, report.failed_step, report.error = "Failed", binding.step, f"{type(exc).__name__}: {exc}"
            container.emit("STEP", detail=f"step={binding.step} status=failed error={type(exc).__name__}")
            log.info("strategy %s failed at %s: %s", strategy.name, binding.step, exc)
            break
        for name, value in outputs.items():
            values[f"{binding.step}.{name}"] = value
        report.per_step.append(StepRecord(binding.step, ex.name, start, container.now, dict(outputs)))
        container.emit("STEP", detail=f"step={binding.step} status=end")
    for m in strategy.mappings:
        step, name = _split(m.target)
        if step is None and m.source in values:
            report.strategy_outputs[name] = values[m.source]
    container.emit("REPORT", detail=f"strategy={strategy.name} outcome={report.outcome}"
                   + (f" failed_step={report.failed_step}" if report.failed_step else "")
                   + f" steps={''.join(report.executed_order)}")
    return report
