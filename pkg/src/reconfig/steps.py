"""Default executors for the fifteen reconfiguration steps ``a`` .. ``o``.

Every step is available twice: as a plain function (``run_a`` ...) taking
the container and ordinary arguments, and as a registered
:class:`StepExecutor` with typed ports that the strategy engine wires
together.  Custom executors are added with :func:`register_executor`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Mapping

from . import quiescence as q
from .compat import counterpart_in, match_fields
from .errors import (
    DeploymentNotStarted,
    NoCounterpartBean,
    AmbiguousCounterpart,
    NotQuiescent,
    StatefulRebindWithoutTransfer,
    TrackingNotStarted,
    TransformFailed,
    TypeMismatchOnDeclaredMatch,
    UnknownExecutor,
    UnknownMember,
    ValidationError,
)
from .model import SELF, LifecycleState, ModuleType, WiringTarget, value_matches
from .runtime import Container, Holder, PoolRef, RefMap, RefPair

log = logging.getLogger(__name__)

STEP_IDS: tuple[str, ...] = tuple("abcdefghijklmno")

# direct edges of the dependency column; closures are computed on demand
DEPENDENCIES: dict[str, frozenset[str]] = {
    "a": frozenset(),
    "b": frozenset(),
    "c": frozenset("b"),
    "d": frozenset("b"),
    "e": frozenset("d"),
    "f": frozenset("ce"),
    "g": frozenset("ef"),
    "h": frozenset("g"),
    "i": frozenset("a"),
    "j": frozenset("fhi"),
    "k": frozenset("j"),
    "l": frozenset("hi"),
    "m": frozenset("hi"),
    "n": frozenset("dhklm"),
    "o": frozenset("gklm"),
}

# steps that only exist to transfer conversational state
STATE_TRANSFER_STEPS = frozenset("cfjk")

STEP_TITLES = {
    "a": "deploy new module",
    "b": "declare quiescence region",
    "c": "start tracking instances",
    "d": "initiate quiescence",
    "e": "await quiescence",
    "f": "extract conversational state",
    "g": "extract datastore",
    "h": "transfer datastore",
    "i": "start new module",
    "j": "inject state",
    "k": "publish new instance references",
    "l": "re-route new connections",
    "m": "re-route existing connections",
    "n": "release quiescence region",
    "o": "stop old module",
}


def dependency_table() -> dict[str, frozenset[str]]:
    return dict(DEPENDENCIES)


def dependency_closure(step: str, table: Mapping[str, Iterable[str]] | None = None) -> frozenset[str]:
    table = DEPENDENCIES if table is None else table
    seen: set[str] = set()
    stack = list(table[step])
    while stack:
        dep = stack.pop()
        if dep not in seen:
            seen.add(dep)
            stack.extend(table.get(dep, ()))
    return frozenset(seen)


# -- ports -----------------------------------------------------------------

class PortKind(str, Enum):
    MODULE_TYPE_ID = "ModuleTypeId"
    DEPLOYMENT_ID = "DeploymentId"
    REGION_ID = "RegionId"
    STATE_BUNDLE = "StateBundle"
    DATASTORE_SNAPSHOT = "DatastoreSnapshot"
    REF_MAP = "RefMap"
    INSTANCE_MAP = "InstanceMap"
    TICK = "Tick"
    FLAG = "Flag"


@dataclass(frozen=True)
class PortSpec:
    name: str
    direction: str  # "in" | "out"
    kind: PortKind
    optional: bool = False

    def __post_init__(self) -> None:
        if self.direction not in ("in", "out"):
            raise ValidationError(f"port {self.name}: direction must be in/out")
        object.__setattr__(self, "kind", PortKind(self.kind))


def In(name: str, kind: PortKind, optional: bool = False) -> PortSpec:
    return PortSpec(name, "in", kind, optional)


def Out(name: str, kind: PortKind) -> PortSpec:
    return PortSpec(name, "out", kind)


@dataclass(frozen=True)
class BundleEntry:
    old_instance_id: str
    bean: str
    fields: Mapping[str, Any]


@dataclass(frozen=True)
class StateBundle:
    entries: tuple[BundleEntry, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class DatastoreSnapshot:
    owner: str
    entries: Mapping[str, Any] = field(default_factory=dict)


def kind_accepts(kind: PortKind, value: Any) -> bool:
    """Check a value handed to a port against the port's kind."""
    if kind in (PortKind.MODULE_TYPE_ID, PortKind.DEPLOYMENT_ID, PortKind.REGION_ID):
        return isinstance(value, str) and bool(value)
    if kind is PortKind.STATE_BUNDLE:
        return isinstance(value, StateBundle)
    if kind is PortKind.DATASTORE_SNAPSHOT:
        return isinstance(value, DatastoreSnapshot)
    if kind is PortKind.REF_MAP:
        return isinstance(value, RefMap)
    if kind is PortKind.INSTANCE_MAP:
        return isinstance(value, dict)
    if kind is PortKind.TICK:
        return isinstance(value, int) and not isinstance(value, bool)
    if kind is PortKind.FLAG:
        return isinstance(value, bool)
    return False


@dataclass
class StepContext:
    container: Container
    strategy_kind: str = "Custom"
    options: dict[str, Any] = field(default_factory=dict)


ExecutorFn = Callable[[StepContext, dict[str, Any]], dict[str, Any]]


@dataclass(frozen=True)
class StepExecutor:
    name: str
    step: str
    ports: tuple[PortSpec, ...]
    fn: ExecutorFn = field(compare=False)

    def __post_init__(self) -> None:
        if self.step not in STEP_IDS:
            raise ValidationError(f"unknown step {self.step!r}")
        object.__setattr__(self, "ports", tuple(self.ports))
        names = [p.name for p in self.ports]
        if len(names) != len(set(names)):
            raise ValidationError(f"executor {self.name}: duplicate port names")

    @property
    def inputs(self) -> tuple[PortSpec, ...]:
        return tuple(p for p in self.ports if p.direction == "in")

    @property
    def outputs(self) -> tuple[PortSpec, ...]:
        return tuple(p for p in self.ports if p.direction == "out")

    def port(self, name: str) -> PortSpec | None:
        return next((p for p in self.ports if p.name == name), None)


EXECUTORS: dict[str, StepExecutor] = {}


def register_executor(name: str, step: str, ports: Iterable[PortSpec], fn: ExecutorFn | None = None):
    """Register an executor; usable directly or as a decorator."""
    def wrap(func: ExecutorFn) -> ExecutorFn:
        EXECUTORS[name] = StepExecutor(name, step, tuple(ports), func)
        return func
    if fn is not None:
        return wrap(fn)
    return wrap


def get_executor(name: str) -> StepExecutor:
    try:
        return EXECUTORS[name]
    except KeyError:
        raise UnknownExecutor(name) from None


def default_executor(step: str) -> StepExecutor:
    return get_executor(f"default.{step}")


# -- plain step functions --------------------------------------------------

def _region(container: Container, region: q.QuiescenceRegion | str) -> q.QuiescenceRegion:
    if isinstance(region, q.QuiescenceRegion):
        return region
    for r in container.regions:
        if r.id == region:
            return r
    raise UnknownMember(f"no region {region}")


def _require_started(container: Container, deployment_id: str) -> None:
    dep = container.registry.deployment(deployment_id)
    if dep.state is not LifecycleState.STARTED:
        raise DeploymentNotStarted(f"{deployment_id} is {dep.state.value}")


def derive_configuration(
    container: Container, module: ModuleType, replaced: str
) -> tuple[dict[str, dict[str, Any]], dict[tuple[str, str], WiringTarget]]:
    """Environment values and wirings for ``module`` taking over from ``replaced``.

    Env values are copied from the replaced counterpart where name and type
    match.  A reference is wired to a provider inside the new module if there
    is exactly one, else to where the replaced bean's same reference pointed
    (unless that is inside the replaced deployment), else to the first
    started external provider.
    """
    registry = container.registry
    old_dep = registry.deployment(replaced)
    partner: dict[str, str] = {}
    for old_bean in old_dep.module_type.beans:
        try:
            partner.setdefault(counterpart_in(container, replaced, old_bean.name, module).name, old_bean.name)
        except (NoCounterpartBean, AmbiguousCounterpart):
            continue
    env: dict[str, dict[str, Any]] = {}
    wirings: dict[tuple[str, str], WiringTarget] = {}
    for bean in module.beans:
        old_name = partner.get(bean.name)
        old_bean = old_dep.module_type.bean(old_name) if old_name else None
        values: dict[str, Any] = {}
        for entry in bean.env_entries:
            old_entry = old_bean.env_entry(entry.name) if old_bean else None
            if old_entry is not None and old_entry.value_type == entry.value_type:
                values[entry.name] = old_dep.env_values[old_name][entry.name]
        if values:
            env[bean.name] = values
        for ref in bean.references:
            inside = [b for b in module.beans if b.provides_interface(ref.target)]
            if len(inside) == 1:
                wirings[(bean.name, ref.name)] = WiringTarget(SELF, inside[0].name, ref.target)
                continue
            previous = old_dep.wirings.get((old_name, ref.name)) if old_name else None
            if (
                previous is not None
                and previous.deployment_id != replaced
                and previous.interface == ref.target
                and registry.deployment(previous.deployment_id).state is LifecycleState.STARTED
            ):
                wirings[(bean.name, ref.name)] = previous
                continue
            providers = registry.providers(ref.target, exclude=[replaced])
            if providers:
                dep_id, provider = providers[0]
                wirings[(bean.name, ref.name)] = WiringTarget(dep_id, provider, ref.target)
    return env, wirings


def run_a(
    container: Container,
    module_type: str,
    env: Mapping[str, Mapping[str, Any]] | None = None,
    wirings: Mapping[tuple[str, str], WiringTarget] | None = None,
    replaced: str | None = None,
) -> str:
    """Deploy the new module; returns its deployment id."""
    module = container.registry.module_type(module_type)
    if replaced is not None:
        derived_env, derived_wirings = derive_configuration(container, module, replaced)
        env = {**derived_env, **(env or {})}
        wirings = {**derived_wirings, **(wirings or {})}
    dep = container.registry.deploy(module, env, wirings)
    container.emit("LIFECYCLE", detail=f"{dep.id} Deployed type={module.name}")
    return dep.id


def run_b(container: Container, members: Iterable[q.Member]) -> q.QuiescenceRegion:
    return q.declare_region(container, members)


def run_c(container: Container, region: q.QuiescenceRegion | str) -> None:
    q.start_tracking(container, _region(container, region))


def run_d(container: Container, region: q.QuiescenceRegion | str, admission: bool = True) -> None:
    q.initiate_quiescence(container, _region(container, region), admission)


def run_e(container: Container, region: q.QuiescenceRegion | str, max_ticks: int = 10_000) -> int:
    return q.await_quiescence(container, _region(container, region), max_ticks)


def _require_quiescent(container: Container, region: q.QuiescenceRegion) -> None:
    if region.phase is not q.Phase.QUIESCENT or not region.is_quiescent(container):
        raise NotQuiescent(f"region {region.id} is {region.phase.value}")


def run_f(container: Container, region: q.QuiescenceRegion | str) -> StateBundle:
    """Copy the conversational state of every tracked, live stateful instance."""
    region = _region(container, region)
    _require_quiescent(container, region)
    if not region.tracking:
        raise TrackingNotStarted(region.id)
    entries = []
    for iid in sorted(region.tracked, key=lambda i: int(i[1:])):
        inst = container.instances[iid]
        if inst.alive:
            entries.append(BundleEntry(iid, inst.bean, dict(inst.state)))
    container.emit("STATE", detail=f"extracted {len(entries)} from {region.id}")
    return StateBundle(tuple(entries))


def run_g(container: Container, region: q.QuiescenceRegion | str) -> DatastoreSnapshot:
    """Snapshot and lock the datastore underlying the region."""
    region = _region(container, region)
    _require_quiescent(container, region)
    deps = sorted(region.deployments | {d for d, _ in region.beans})
    store = container.datastore(deps[0])
    store.locked = True
    region.locked_stores.append(store.owner)
    container.emit("DATASTORE", detail=f"snapshot {store.owner} entries={len(store.entries)} locked")
    return DatastoreSnapshot(store.owner, dict(store.entries))


def run_h(
    container: Container,
    snapshot: DatastoreSnapshot,
    target: str,
    transform: Callable[[dict[str, Any]], dict[str, Any]] | None = None,
) -> DatastoreSnapshot:
    """Write the (optionally transformed) snapshot into ``target``'s datastore.

    Without a transform this is an identity copy.
    """
    entries = dict(snapshot.entries)
    if transform is not None:
        try:
            entries = transform(entries)
        except Exception as exc:
            raise TransformFailed(str(exc)) from exc
        if not isinstance(entries, dict):
            raise TransformFailed(f"transform returned {type(entries).__name__}, expected dict")
    store = container.datastore(target)
    store.entries = dict(entries)
    container.emit("DATASTORE", detail=f"transfer {snapshot.owner}->{store.owner} entries={len(entries)}")
    return DatastoreSnapshot(store.owner, dict(entries))


def run_i(container: Container, deployment: str) -> None:
    container.start_deployment(deployment)


StateTransform = Callable[[str, dict[str, Any]], dict[str, Any]]


def run_j(
    container: Container,
    bundle: StateBundle,
    target: str,
    state_transform: StateTransform | None = None,
) -> dict[str, str]:
    """Create one new stateful instance per bundle entry and inject its state.

    Only fields with equal name and type in both beans are copied; the rest
    keep their type defaults.  ``state_transform(bean, fields)`` may rewrite
    the copied values first.  Returns old instance id -> new instance id.
    """
    _require_started(container, target)
    module = container.registry.deployment(target).module_type
    mapping: dict[str, str] = {}
    for entry in bundle.entries:
        old = container.instances[entry.old_instance_id]
        new_bean = counterpart_in(container, old.deployment_id, old.bean, module)
        if not new_bean.stateful:
            raise NoCounterpartBean(f"counterpart {new_bean.name} of {old.bean} is stateless")
        matched = match_fields(old.bean_type, new_bean)
        values = {name: entry.fields[name] for name, _ in matched}
        if state_transform is not None:
            values = state_transform(old.bean, dict(values))
        declared = {f.name: f.value_type for f in new_bean.state_fields}
        for name, value in values.items():
            if name not in declared or not value_matches(declared[name], value):
                raise TypeMismatchOnDeclaredMatch(f"{new_bean.name}.{name} cannot take {value!r}")
        inst = container.create_stateful_instance(target, new_bean.name, values)
        mapping[entry.old_instance_id] = inst.id
        container.emit("STATE", detail=f"inject {entry.old_instance_id}->{inst.id} fields={','.join(sorted(values))}")
    return mapping


def run_k(container: Container, instances: Mapping[str, str]) -> RefMap:
    """Point sessions holding a replaced stateful instance at its replacement."""
    refs = RefMap()
    for old_id, new_id in sorted(instances.items(), key=lambda kv: int(kv[0][1:])):
        holders = [
            (s.id, h) for s in container.sessions.values() if s.is_open
            for h, t in sorted(s.bound.items()) if t == old_id
        ]
        if not holders:
            refs.skipped.append(old_id)
            container.discard_instance(new_id)
            continue
        for sid, handle in holders:
            container.rebind_reference(sid, handle, new_id)
            refs.pairs.append(RefPair(("session", sid, handle), old_id, new_id))
    return refs


def run_l(container: Container, old: str, new: str) -> list[str]:
    """Re-route connections established from now on from ``old`` to ``new``.

    Container wirings of other deployments that target ``old`` are rewired
    to the counterpart beans, and client lookups of ``old`` beans are
    forwarded.  Existing references are left alone.
    """
    registry = container.registry
    _require_started(container, new)
    module = registry.deployment(new).module_type
    changed = []
    for dep in sorted(registry.deployments.values(), key=lambda d: d.id):
        if dep.id in (old, new) or dep.state is LifecycleState.UNDEPLOYED:
            continue
        for (bean, ref), target in sorted(dep.wirings.items()):
            if target is None or target.deployment_id != old:
                continue
            partner = counterpart_in(container, old, target.bean, module)
            registry.rewire(dep.id, bean, ref, WiringTarget(new, partner.name, target.interface))
            changed.append(f"{dep.id}.{bean}.{ref}")
            container.emit("REWIRE", detail=f"{dep.id}.{bean}.{ref} {old}.{target.bean}->{new}.{partner.name}")
    for bean in registry.deployment(old).module_type.beans:
        try:
            partner = counterpart_in(container, old, bean.name, module)
        except (NoCounterpartBean, AmbiguousCounterpart):
            continue
        registry.forward((old, bean.name), (new, partner.name))
        container.emit("REWIRE", detail=f"lookup {old}.{bean.name}->{new}.{partner.name}")
    return changed


def run_m(
    container: Container,
    old: str,
    new: str,
    mode: str = "Interrupt",
    exclude: RefMap | None = None,
    only: Iterable[Holder] | None = None,
) -> RefMap:
    """Re-route existing references held by clients of ``old``.

    Stateless pool references move to the counterpart pool.  Stateful
    references are skipped in NonInterrupt mode (moving them would lose
    conversational state) and are an error in Interrupt mode, where step k
    must already have moved them.  Selecting a stateful reference through
    ``only`` is always an error.
    """
    if mode not in ("Interrupt", "NonInterrupt"):
        raise ValidationError(f"unknown mode {mode!r}")
    _require_started(container, new)
    module = container.registry.deployment(new).module_type
    excluded = {p.holder for p in exclude} if exclude is not None else set()
    chosen = set(only) if only is not None else None
    refs = RefMap()
    for session in sorted(container.sessions.values(), key=lambda s: s.id):
        if not session.is_open:
            continue
        for handle, target in sorted(session.bound.items()):
            holder: Holder = ("session", session.id, handle)
            dep_id, bean = container.target_key(target)
            if dep_id != old or holder in excluded or (chosen is not None and holder not in chosen):
                continue
            if not isinstance(target, PoolRef):
                if mode == "NonInterrupt" and chosen is None:
                    refs.skipped.append(f"{session.id}.{handle}")
                    continue
                raise StatefulRebindWithoutTransfer(f"{session.id}.{handle} -> stateful {target}")
            partner = counterpart_in(container, old, bean, module)
            new_target = PoolRef(new, partner.name)
            container.rebind_reference(session.id, handle, new_target)
            refs.pairs.append(RefPair(holder, target, new_target))
    for inst in sorted(container.instances.values(), key=lambda i: int(i.id[1:])):
        if not inst.alive or inst.deployment_id in (old, new):
            continue
        for ref, target in sorted(inst.refs.items()):
            holder = ("instance", inst.id, ref)
            if not isinstance(target, PoolRef) or target.deployment_id != old or holder in excluded:
                continue
            if chosen is not None and holder not in chosen:
                continue
            partner = counterpart_in(container, old, target.bean, module)
            new_target = PoolRef(new, partner.name)
            container.rebind_instance_ref(inst.id, ref, new_target)
            refs.pairs.append(RefPair(holder, target, new_target))
    return refs


def run_n(container: Container, region: q.QuiescenceRegion | str, refmaps: Iterable[RefMap] = ()) -> None:
    q.release_region(container, _region(container, region), list(refmaps))


def run_o(
    container: Container,
    old: str,
    undeploy: bool = True,
    flash: bool = False,
    drain: bool = True,
    max_ticks: int = 10_000,
) -> int:
    """Stop (and by default undeploy) the old module; returns the stop tick.

    Unless ``flash`` is set, waits for the old deployment to lose its last
    session and call first.
    """
    if not flash and drain:
        container.wait_until(lambda: not container.obligations(old), max_ticks, f"drain of {old}")
    container.stop_deployment(old, undeploy, flash)
    return container.now


# -- registered default executors -----------------------------------------

K = PortKind


def _opt(ctx: StepContext, name: str, default: Any) -> Any:
    return ctx.options.get(name, default)


register_executor(
    "default.a", "a",
    [In("module_type", K.MODULE_TYPE_ID), In("replaced", K.DEPLOYMENT_ID, optional=True), Out("deployment", K.DEPLOYMENT_ID)],
    lambda ctx, i: {"deployment": run_a(ctx.container, i["module_type"], _opt(ctx, "env", None),
                                        _opt(ctx, "wirings", None), i.get("replaced"))},
)
register_executor(
    "default.b", "b",
    [In("members", K.DEPLOYMENT_ID), Out("region", K.REGION_ID)],
    lambda ctx, i: {"region": run_b(ctx.container, [i["members"]]).id},
)


@register_executor("default.c", "c", [In("region", K.REGION_ID)])
def _exec_c(ctx: StepContext, i: dict[str, Any]) -> dict[str, Any]:
    run_c(ctx.container, i["region"])
    return {}


@register_executor("default.d", "d", [In("region", K.REGION_ID)])
def _exec_d(ctx: StepContext, i: dict[str, Any]) -> dict[str, Any]:
    run_d(ctx.container, i["region"], _opt(ctx, "admission", True))
    return {}


register_executor(
    "default.e", "e",
    [In("region", K.REGION_ID), Out("quiescent_at", K.TICK)],
    lambda ctx, i: {"quiescent_at": run_e(ctx.container, i["region"], _opt(ctx, "max_ticks", 10_000))},
)
register_executor("default.f", "f", [In("region", K.REGION_ID), Out("bundle", K.STATE_BUNDLE)],
                  lambda ctx, i: {"bundle": run_f(ctx.container, i["region"])})
register_executor("default.g", "g", [In("region", K.REGION_ID), Out("snapshot", K.DATASTORE_SNAPSHOT)],
                  lambda ctx, i: {"snapshot": run_g(ctx.container, i["region"])})
register_executor(
    "default.h", "h",
    [In("source", K.DATASTORE_SNAPSHOT), In("target", K.DEPLOYMENT_ID), Out("snapshot", K.DATASTORE_SNAPSHOT)],
    lambda ctx, i: {"snapshot": run_h(ctx.container, i["source"], i["target"], _opt(ctx, "transform", None))},
)


@register_executor("default.i", "i", [In("deployment", K.DEPLOYMENT_ID)])
def _exec_i(ctx: StepContext, i: dict[str, Any]) -> dict[str, Any]:
    run_i(ctx.container, i["deployment"])
    return {}


register_executor(
    "default.j", "j",
    [In("bundle", K.STATE_BUNDLE), In("target", K.DEPLOYMENT_ID), Out("instances", K.INSTANCE_MAP)],
    lambda ctx, i: {"instances": run_j(ctx.container, i["bundle"], i["target"], _opt(ctx, "state_transform", None))},
)
register_executor("default.k", "k", [In("instances", K.INSTANCE_MAP), Out("refs", K.REF_MAP)],
                  lambda ctx, i: {"refs": run_k(ctx.container, i["instances"])})


@register_executor("default.l", "l", [In("old", K.DEPLOYMENT_ID), In("new", K.DEPLOYMENT_ID)])
def _exec_l(ctx: StepContext, i: dict[str, Any]) -> dict[str, Any]:
    run_l(ctx.container, i["old"], i["new"])
    return {}


register_executor(
    "default.m", "m",
    [In("old", K.DEPLOYMENT_ID), In("new", K.DEPLOYMENT_ID), In("exclude", K.REF_MAP, optional=True), Out("refs", K.REF_MAP)],
    lambda ctx, i: {"refs": run_m(ctx.container, i["old"], i["new"], _opt(ctx, "mode", "Interrupt"), i.get("exclude"))},
)


@register_executor(
    "default.n", "n",
    [In("region", K.REGION_ID), In("refs_k", K.REF_MAP, optional=True), In("refs_m", K.REF_MAP, optional=True)],
)
def _exec_n(ctx: StepContext, i: dict[str, Any]) -> dict[str, Any]:
    run_n(ctx.container, i["region"], [r for r in (i.get("refs_k"), i.get("refs_m")) if r is not None])
    return {}


@register_executor("default.o", "o", [In("old", K.DEPLOYMENT_ID)])
def _exec_o(ctx: StepContext, i: dict[str, Any]) -> dict[str, Any]:
    run_o(ctx.container, i["old"], _opt(ctx, "undeploy", True), _opt(ctx, "flash", False),
          _opt(ctx, "drain", True), _opt(ctx, "max_ticks", 10_000))
    return {}
