"""Static component model: module types, bean types and deployments.

Types are immutable once built.  A :class:`Registry` owns the registered
module types and the deployments made from them, and enforces the
deployment lifecycle::

    Deployed -> Started -> Stopped -> {Started, Undeployed}
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping

from .errors import (
    DuplicateDeployment,
    EnvTypeMismatch,
    IllegalLifecycleTransition,
    InterfaceMismatch,
    UnknownDeployment,
    UnknownModuleType,
    UnsatisfiedReference,
    ValidationError,
    WiringTargetMissing,
)

VALUE_TYPES = ("int", "string", "bool")
TYPE_DEFAULTS: dict[str, Any] = {"int": 0, "string": "", "bool": False}

# Placeholder deployment id in wirings that point into the module being deployed.
SELF = "@self"


def type_default(value_type: str) -> Any:
    return TYPE_DEFAULTS[value_type]


def value_matches(value_type: str, value: Any) -> bool:
    if value_type == "bool":
        return isinstance(value, bool)
    if value_type == "int":
        return isinstance(value, int) and not isinstance(value, bool)
    if value_type == "string":
        return isinstance(value, str)
    return False


class BeanKind(str, Enum):
    STATELESS = "Stateless"
    STATEFUL = "Stateful"


class LifecycleState(str, Enum):
    DEPLOYED = "Deployed"
    STARTED = "Started"
    STOPPED = "Stopped"
    UNDEPLOYED = "Undeployed"


ALLOWED_TRANSITIONS: frozenset[tuple[LifecycleState, LifecycleState]] = frozenset({
    (LifecycleState.DEPLOYED, LifecycleState.STARTED),
    (LifecycleState.STARTED, LifecycleState.STOPPED),
    (LifecycleState.STOPPED, LifecycleState.STARTED),
    (LifecycleState.STOPPED, LifecycleState.UNDEPLOYED),
})


@dataclass(frozen=True)
class InterfaceId:
    """An interface name plus the opaque contract tag compared by compatibility checks."""

    name: str
    contract: str = ""

    def __post_init__(self) -> None:
        if not self.contract:
            object.__setattr__(self, "contract", self.name)

    def __str__(self) -> str:
        if self.contract == self.name:
            return self.name
        return f"{self.name}@{self.contract}"


@dataclass(frozen=True)
class ReferenceDecl:
    name: str
    target: InterfaceId


@dataclass(frozen=True)
class EnvEntry:
    name: str
    value_type: str
    default: Any = None

    def __post_init__(self) -> None:
        if self.value_type not in VALUE_TYPES:
            raise ValidationError(f"env entry {self.name}: unsupported type {self.value_type!r}")
        if self.default is None:
            object.__setattr__(self, "default", type_default(self.value_type))
        elif not value_matches(self.value_type, self.default):
            raise EnvTypeMismatch(self.name, f"default {self.default!r} is not {self.value_type}")


@dataclass(frozen=True)
class StateField:
    name: str
    value_type: str

    def __post_init__(self) -> None:
        if self.value_type not in VALUE_TYPES:
            raise ValidationError(f"state field {self.name}: unsupported type {self.value_type!r}")


@dataclass(frozen=True)
class BeanType:
    name: str
    kind: BeanKind
    provides: tuple[InterfaceId, ...] = ()
    references: tuple[ReferenceDecl, ...] = ()
    env_entries: tuple[EnvEntry, ...] = ()
    state_fields: tuple[StateField, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", BeanKind(self.kind))
        for attr in ("provides", "references", "env_entries", "state_fields"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        if self.kind is BeanKind.STATELESS and self.state_fields:
            raise ValidationError(f"stateless bean {self.name} cannot declare state fields")
        for attr in ("references", "env_entries", "state_fields"):
            names = [item.name for item in getattr(self, attr)]
            if len(names) != len(set(names)):
                raise ValidationError(f"bean {self.name}: duplicate names in {attr}")
        iface_names = [i.name for i in self.provides]
        if len(iface_names) != len(set(iface_names)):
            raise ValidationError(f"bean {self.name}: interface provided twice")

    @property
    def stateful(self) -> bool:
        return self.kind is BeanKind.STATEFUL

    def provides_interface(self, iface: InterfaceId) -> bool:
        return iface in self.provides

    def provides_name(self, name: str) -> bool:
        return any(i.name == name for i in self.provides)

    def interface(self, name: str) -> InterfaceId | None:
        for iface in self.provides:
            if iface.name == name:
                return iface
        return None

    def reference(self, name: str) -> ReferenceDecl | None:
        for ref in self.references:
            if ref.name == name:
                return ref
        return None

    def env_entry(self, name: str) -> EnvEntry | None:
        for entry in self.env_entries:
            if entry.name == name:
                return entry
        return None

    def initial_state(self) -> dict[str, Any]:
        return {f.name: type_default(f.value_type) for f in self.state_fields}


@dataclass(frozen=True)
class ModuleType:
    name: str
    version: str
    beans: tuple[BeanType, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "beans", tuple(self.beans))
        if not self.beans:
            raise ValidationError(f"module {self.name} must contain at least one bean")
        names = [b.name for b in self.beans]
        if len(names) != len(set(names)):
            raise ValidationError(f"module {self.name}: duplicate bean names")

    def bean(self, name: str) -> BeanType:
        for bean in self.beans:
            if bean.name == name:
                return bean
        raise KeyError(f"module {self.name} has no bean {name!r}")

    def has_bean(self, name: str) -> bool:
        return any(b.name == name for b in self.beans)


@dataclass(frozen=True)
class WiringTarget:
    deployment_id: str
    bean: str
    interface: InterfaceId

    def __str__(self) -> str:
        return f"{self.deployment_id}.{self.bean}.{self.interface}"


@dataclass
class ModuleDeployment:
    id: str
    module_type: ModuleType
    state: LifecycleState = LifecycleState.DEPLOYED
    env_values: dict[str, dict[str, Any]] = field(default_factory=dict)
    # (bean, reference) -> target; None marks an explicitly unsatisfied reference
    wirings: dict[tuple[str, str], WiringTarget | None] = field(default_factory=dict)

    def unsatisfied(self) -> list[tuple[str, str]]:
        return sorted(key for key, target in self.wirings.items() if target is None)

    def bean(self, name: str) -> BeanType:
        return self.module_type.bean(name)

    def snapshot(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "type": self.module_type.name,
            "state": self.state.value,
            "env": copy.deepcopy(self.env_values),
            "wirings": {f"{b}.{r}": (str(t) if t else None) for (b, r), t in sorted(self.wirings.items())},
        }


class Registry:
    """Module types, deployments, and the lookup forwarding table."""

    def __init__(self) -> None:
        self.module_types: dict[str, ModuleType] = {}
        self.deployments: dict[str, ModuleDeployment] = {}
        # (deployment, bean) -> (deployment, bean) applied to client lookups
        self.forwarding: dict[tuple[str, str], tuple[str, str]] = {}
        self._next_id = 1

    # -- types -----------------------------------------------------------

    def register(self, module_type: ModuleType) -> ModuleType:
        existing = self.module_types.get(module_type.name)
        if existing is not None and existing != module_type:
            raise ValidationError(f"module type {module_type.name} already registered with different content")
        self.module_types[module_type.name] = module_type
        return module_type

    def module_type(self, name: str | ModuleType) -> ModuleType:
        if isinstance(name, ModuleType):
            name = name.name
        try:
            return self.module_types[name]
        except KeyError:
            raise UnknownModuleType(name) from None

    def deployment(self, deployment_id: str) -> ModuleDeployment:
        try:
            return self.deployments[deployment_id]
        except KeyError:
            raise UnknownDeployment(deployment_id) from None

    # -- lifecycle -------------------------------------------------------

    def _fresh_id(self) -> str:
        while f"dep{self._next_id}" in self.deployments:
            self._next_id += 1
        dep_id = f"dep{self._next_id}"
        self._next_id += 1
        return dep_id

    def deploy(
        self,
        module: str | ModuleType,
        env: Mapping[str, Mapping[str, Any]] | None = None,
        wirings: Mapping[tuple[str, str], WiringTarget | None] | None = None,
        deployment_id: str | None = None,
    ) -> ModuleDeployment:
        """Configure and deploy a registered module type.

        ``env`` maps bean name to entry values; missing entries take their
        declared defaults.  ``wirings`` maps ``(bean, reference)`` to a target;
        a target whose deployment id is :data:`SELF` points into the new
        deployment.  References left out are recorded as unsatisfied, which
        blocks :meth:`start`.
        """
        mtype = self.module_type(module)
        if isinstance(module, ModuleType) and module != mtype:
            raise UnknownModuleType(f"{module.name} (differs from the registered type)")
        env = env or {}
        wirings = dict(wirings or {})
        if deployment_id is None:
            deployment_id = self._fresh_id()
        elif deployment_id in self.deployments or deployment_id == SELF:
            raise DuplicateDeployment(deployment_id)

        env_values: dict[str, dict[str, Any]] = {}
        for bean_name, values in env.items():
            if not mtype.has_bean(bean_name):
                raise EnvTypeMismatch(f"{bean_name}.*", "no such bean")
            bean = mtype.bean(bean_name)
            for entry_name, value in values.items():
                entry = bean.env_entry(entry_name)
                if entry is None:
                    raise EnvTypeMismatch(f"{bean_name}.{entry_name}", "undeclared entry")
                if not value_matches(entry.value_type, value):
                    raise EnvTypeMismatch(f"{bean_name}.{entry_name}", f"{value!r} is not {entry.value_type}")
        for bean in mtype.beans:
            supplied = env.get(bean.name, {})
            env_values[bean.name] = {e.name: supplied.get(e.name, e.default) for e in bean.env_entries}

        resolved: dict[tuple[str, str], WiringTarget | None] = {}
        for (bean_name, ref_name), target in wirings.items():
            if not mtype.has_bean(bean_name) or mtype.bean(bean_name).reference(ref_name) is None:
                raise WiringTargetMissing(bean_name, ref_name, "no such reference")
        for bean in mtype.beans:
            for ref in bean.references:
                target = wirings.get((bean.name, ref.name))
                if target is None:
                    resolved[(bean.name, ref.name)] = None
                    continue
                if target.deployment_id == SELF:
                    target = WiringTarget(deployment_id, target.bean, target.interface)
                    if not mtype.has_bean(target.bean):
                        raise WiringTargetMissing(bean.name, ref.name, f"no bean {target.bean} in {mtype.name}")
                    provider = mtype.bean(target.bean)
                else:
                    provider = self._provider(target, bean.name, ref.name)
                self._check_provider(provider, ref, target)
                resolved[(bean.name, ref.name)] = target

        dep = ModuleDeployment(deployment_id, mtype, LifecycleState.DEPLOYED, env_values, resolved)
        self.deployments[deployment_id] = dep
        return dep

    def _provider(self, target: WiringTarget, bean: str, reference: str) -> BeanType:
        dep = self.deployments.get(target.deployment_id)
        if dep is None or dep.state is LifecycleState.UNDEPLOYED:
            raise WiringTargetMissing(bean, reference, f"deployment {target.deployment_id} not present")
        if not dep.module_type.has_bean(target.bean):
            raise WiringTargetMissing(bean, reference, f"no bean {target.bean} in {target.deployment_id}")
        return dep.module_type.bean(target.bean)

    @staticmethod
    def _check_provider(provider: BeanType, ref: ReferenceDecl, target: WiringTarget) -> None:
        if target.interface != ref.target:
            raise InterfaceMismatch(f"reference {ref.name} needs {ref.target}, wiring names {target.interface}")
        if not provider.provides_interface(ref.target):
            raise InterfaceMismatch(f"{target.deployment_id}.{provider.name} does not provide {ref.target}")

    def _transition(self, dep: ModuleDeployment, new: LifecycleState) -> None:
        if (dep.state, new) not in ALLOWED_TRANSITIONS:
            raise IllegalLifecycleTransition(dep.id, dep.state.value, new.value)
        dep.state = new

    def start(self, deployment_id: str) -> ModuleDeployment:
        dep = self.deployment(deployment_id)
        if (dep.state, LifecycleState.STARTED) not in ALLOWED_TRANSITIONS:
            raise IllegalLifecycleTransition(dep.id, dep.state.value, LifecycleState.STARTED.value)
        unsatisfied = dep.unsatisfied()
        if unsatisfied:
            raise UnsatisfiedReference(*unsatisfied[0])
        for (bean_name, ref_name), target in dep.wirings.items():
            if target.deployment_id == dep.id:
                continue
            other = self.deployments.get(target.deployment_id)
            if other is None or other.state is LifecycleState.UNDEPLOYED:
                raise UnsatisfiedReference(bean_name, ref_name)
        self._transition(dep, LifecycleState.STARTED)
        return dep

    def stop(self, deployment_id: str, also_undeploy: bool = False) -> ModuleDeployment:
        dep = self.deployment(deployment_id)
        if dep.state is not LifecycleState.STARTED:
            raise IllegalLifecycleTransition(dep.id, dep.state.value, LifecycleState.STOPPED.value)
        self._transition(dep, LifecycleState.STOPPED)
        if also_undeploy:
            self._transition(dep, LifecycleState.UNDEPLOYED)
        return dep

    def undeploy(self, deployment_id: str) -> ModuleDeployment:
        dep = self.deployment(deployment_id)
        self._transition(dep, LifecycleState.UNDEPLOYED)
        return dep

    # -- wiring ----------------------------------------------------------

    def rewire(self, deployment_id: str, bean: str, reference: str, target: WiringTarget) -> None:
        """Point ``bean.reference`` of a deployment at a new provider.

        Only future lookups and instantiations see the change.
        """
        dep = self.deployment(deployment_id)
        if not dep.module_type.has_bean(bean) or dep.bean(bean).reference(reference) is None:
            raise WiringTargetMissing(bean, reference, "no such reference")
        ref = dep.bean(bean).reference(reference)
        target_dep = self.deployments.get(target.deployment_id)
        if target_dep is None or not target_dep.module_type.has_bean(target.bean):
            raise WiringTargetMissing(bean, reference, f"{target} not found")
        if target_dep.state is not LifecycleState.STARTED:
            raise WiringTargetMissing(bean, reference, f"{target.deployment_id} is {target_dep.state.value}")
        self._check_provider(target_dep.bean(target.bean), ref, target)
        dep.wirings[(bean, reference)] = target

    def wire(self, deployment_id: str, bean: str, reference: str, target: WiringTarget) -> None:
        """Fill in a wiring of a deployment that has not been started yet.

        Allows cyclic wiring between deployments, which ``deploy`` cannot
        express because targets must already exist.
        """
        dep = self.deployment(deployment_id)
        if dep.state is not LifecycleState.DEPLOYED:
            raise IllegalLifecycleTransition(dep.id, dep.state.value, "rewired before start")
        if not dep.module_type.has_bean(bean) or dep.bean(bean).reference(reference) is None:
            raise WiringTargetMissing(bean, reference, "no such reference")
        provider = self._provider(target, bean, reference)
        self._check_provider(provider, dep.bean(bean).reference(reference), target)
        dep.wirings[(bean, reference)] = target

    def forward(self, old: tuple[str, str], new: tuple[str, str]) -> None:
        self.forwarding[old] = new

    def resolve_lookup(self, deployment_id: str, bean: str) -> tuple[str, str]:
        key = (deployment_id, bean)
        seen = {key}
        while key in self.forwarding:
            key = self.forwarding[key]
            if key in seen:
                raise ValidationError(f"forwarding loop at {key}")
            seen.add(key)
        return key

    # -- queries ---------------------------------------------------------

    def started(self) -> list[ModuleDeployment]:
        return [d for d in self.deployments.values() if d.state is LifecycleState.STARTED]

    def providers(self, iface: InterfaceId, exclude: Iterable[str] = ()) -> list[tuple[str, str]]:
        """``(deployment, bean)`` pairs of started deployments providing ``iface``."""
        skip = set(exclude)
        found = []
        for dep in self.started():
            if dep.id in skip:
                continue
            for bean in dep.module_type.beans:
                if bean.provides_interface(iface):
                    found.append((dep.id, bean.name))
        return found

    def snapshot(self) -> dict[str, Any]:
        return {
            "deployments": {k: d.snapshot() for k, d in sorted(self.deployments.items())},
            "forwarding": {f"{a}.{b}": f"{c}.{d}" for (a, b), (c, d) in sorted(self.forwarding.items())},
        }
