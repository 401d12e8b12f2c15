"""Module replacement restrictions checked before a reconfiguration runs.

R1  the replacing module provides (same contract) every interface of the
    replaced module that clients reference
R2  each such interface is provided by exactly one bean in both modules
R3  references of the replacing beans have providers outside the replaced
    module, recursively through the replacing module
R4  every replaced bean has a counterpart covering its referenced interfaces
R5  state moves only between fields with the same name and type; a stateful
    bean's counterpart has to be stateful to receive it
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import AmbiguousCounterpart, NoCounterpartBean
from .model import BeanType, InterfaceId, LifecycleState, ModuleType
from .runtime import Container, PoolRef


def match_fields(old: BeanType, new: BeanType) -> list[tuple[str, str]]:
    """Fields present with the same name and type in both beans, in old declaration order."""
    new_fields = {(f.name, f.value_type) for f in new.state_fields}
    return [(f.name, f.value_type) for f in old.state_fields if (f.name, f.value_type) in new_fields]


def client_referenced(container: Container, deployment_id: str) -> dict[str, set[InterfaceId]]:
    """Interfaces of ``deployment_id`` referenced from outside it, per bean.

    Sources: wirings of other live deployments, session bindings, queued
    lookups and references held by live instances of other deployments.
    """
    registry = container.registry
    dep = registry.deployment(deployment_id)
    found: dict[str, set[InterfaceId]] = {}

    def add(bean: str, iface_name: str) -> None:
        if not dep.module_type.has_bean(bean):
            return
        iface = dep.bean(bean).interface(iface_name)
        if iface is not None:
            found.setdefault(bean, set()).add(iface)

    for other in registry.deployments.values():
        if other.id == deployment_id or other.state is LifecycleState.UNDEPLOYED:
            continue
        for (bean, ref), target in other.wirings.items():
            if target is not None and target.deployment_id == deployment_id:
                add(target.bean, target.interface.name)
    for session in container.sessions.values():
        if not session.is_open:
            continue
        for handle, target in session.bound.items():
            dep_id, bean = container.target_key(target)
            if dep_id == deployment_id:
                add(bean, session.interfaces[handle])
    for region in container.regions:
        for request in region.queued_lookups:
            dep_id, bean = registry.resolve_lookup(request.deployment_id, request.bean)
            if dep_id == deployment_id:
                add(bean, request.interface)
    for inst in container.instances.values():
        if not inst.alive or inst.deployment_id == deployment_id:
            continue
        for ref_name, target in inst.refs.items():
            if isinstance(target, PoolRef) and target.deployment_id == deployment_id:
                decl = inst.bean_type.reference(ref_name)
                if decl is not None:
                    add(target.bean, decl.target.name)
    return found


def counterpart(old: BeanType, new: ModuleType, referenced: set[str] | None = None) -> BeanType:
    """The bean of ``new`` that replaces ``old``.

    Candidates provide every interface name in ``referenced`` (all of
    ``old``'s interfaces when None).  Ties are broken by covering all of
    ``old``'s interfaces, then by equal bean name.
    """
    required = set(referenced) if referenced is not None else {i.name for i in old.provides}
    candidates = [b for b in new.beans if all(b.provides_name(n) for n in required)]
    if not candidates:
        raise NoCounterpartBean(f"{new.name} has no bean providing {sorted(required)} for {old.name}")
    if len(candidates) == 1:
        return candidates[0]
    full = [b for b in candidates if all(b.provides_name(i.name) for i in old.provides)]
    if len(full) == 1:
        return full[0]
    pool = full or candidates
    same_name = [b for b in pool if b.name == old.name]
    if len(same_name) == 1:
        return same_name[0]
    raise AmbiguousCounterpart(f"{old.name}: candidates {[b.name for b in pool]} in {new.name}")


def referenced_names(container: Container, deployment_id: str) -> dict[str, set[str]]:
    return {bean: {i.name for i in ifaces} for bean, ifaces in client_referenced(container, deployment_id).items()}


def counterpart_in(container: Container, old_deployment: str, bean: str, new: ModuleType) -> BeanType:
    old_type = container.registry.deployment(old_deployment).bean(bean)
    return counterpart(old_type, new, referenced_names(container, old_deployment).get(bean) or None)


@dataclass(frozen=True)
class Violation:
    restriction: int
    subject: str
    detail: str

    def __str__(self) -> str:
        return f"R{self.restriction} {self.subject}: {self.detail}"


@dataclass
class CompatReport:
    old_deployment: str
    new_module: str
    violations: list[Violation] = field(default_factory=list)
    field_match_plan: dict[str, list[tuple[str, str]]] = field(default_factory=dict)
    referenced: dict[str, list[str]] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    @property
    def violated(self) -> set[int]:
        return {v.restriction for v in self.violations}

    def render(self) -> str:
        lines = [f"compat {self.old_deployment} -> {self.new_module}: {'PASS' if self.passed else 'FAIL'}"]
        for bean, ifaces in sorted(self.referenced.items()):
            lines.append(f"  referenced {bean}: {', '.join(ifaces)}")
        for v in self.violations:
            lines.append(f"  violation {v}")
        for bean, fields in sorted(self.field_match_plan.items()):
            lines.append(f"  fields {bean}: {', '.join(f'{n}:{t}' for n, t in fields) or '(none)'}")
        for note in self.notes:
            lines.append(f"  note {note}")
        return "\n".join(lines) + "\n"


def check_compat(container: Container, old_deployment: str, new_module: str | ModuleType) -> CompatReport:
    """Evaluate R1..R5 for replacing ``old_deployment`` by ``new_module``. Read-only."""
    registry = container.registry
    old_dep = registry.deployment(old_deployment)
    new = registry.module_type(new_module)
    old = old_dep.module_type
    report = CompatReport(old_deployment, new.name)
    referenced = client_referenced(container, old_deployment)
    report.referenced = {b: sorted(str(i) for i in ifaces) for b, ifaces in referenced.items()}
    r1_ifaces: dict[str, InterfaceId] = {}
    for ifaces in referenced.values():
        for iface in ifaces:
            r1_ifaces[iface.name] = iface

    for name, iface in sorted(r1_ifaces.items()):
        if not any(b.provides_interface(iface) for b in new.beans):
            offered = [str(b.interface(name)) for b in new.beans if b.provides_name(name)]
            detail = f"contract differs ({', '.join(offered)})" if offered else "not provided"
            report.violations.append(Violation(1, name, f"{iface} {detail}"))

    for name in sorted(r1_ifaces):
        in_old = [b.name for b in old.beans if b.provides_name(name)]
        in_new = [b.name for b in new.beans if b.provides_name(name)]
        if len(in_old) != 1:
            report.violations.append(Violation(2, name, f"provided by {in_old} in {old.name}"))
        if len(in_new) > 1:
            report.violations.append(Violation(2, name, f"provided by {in_new} in {new.name}"))

    external = [d for d in registry.started() if d.id != old_deployment]

    def has_provider(iface: InterfaceId, visiting: frozenset[str]) -> bool:
        if any(b.provides_interface(iface) for d in external for b in d.module_type.beans):
            return True
        for bean in new.beans:
            if bean.provides_interface(iface) and bean.name not in visiting:
                if refs_satisfied(bean, visiting | {bean.name}):
                    return True
        return False

    def refs_satisfied(bean: BeanType, visiting: frozenset[str]) -> bool:
        return all(has_provider(ref.target, visiting) for ref in bean.references)

    for bean in new.beans:
        if not any(bean.provides_name(n) for n in r1_ifaces):
            continue
        for ref in bean.references:
            if not has_provider(ref.target, frozenset({bean.name})):
                report.violations.append(Violation(3, f"{bean.name}.{ref.name}", f"no provider for {ref.target} outside {old_deployment}"))

    for bean in old.beans:
        names = {i.name for i in referenced.get(bean.name, ())}
        if names and not any(all(nb.provides_name(n) for n in names) for nb in new.beans):
            report.violations.append(Violation(4, bean.name, f"no bean of {new.name} provides {sorted(names)}"))

    for bean in old.beans:
        if not bean.stateful:
            continue
        names = {i.name for i in referenced.get(bean.name, ())}
        try:
            target = counterpart(bean, new, names or None)
        except (NoCounterpartBean, AmbiguousCounterpart) as exc:
            report.notes.append(f"no field plan for {bean.name}: {exc}")
            continue
        report.field_match_plan[bean.name] = match_fields(bean, target)
        if not target.stateful:
            report.violations.append(Violation(5, bean.name, f"counterpart {target.name} is stateless; state cannot be injected"))
            continue
        new_types = {f.name: f.value_type for f in target.state_fields}
        for f in bean.state_fields:
            if f.name in new_types and new_types[f.name] != f.value_type:
                report.notes.append(f"{bean.name}.{f.name}: {f.value_type} vs {new_types[f.name]}, not transferred")
    return report
