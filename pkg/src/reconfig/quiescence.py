"""Quiescence regions: declaration, instance tracking, call blocking and release.

A region moves strictly forward through its phases::

    Declared -> [Tracking] -> Initiated -> Quiescent -> Released

Once initiated, a new call aimed at a member instance is blocked unless it
is needed to finish work already in progress: some call in its parent chain
was in progress at initiation, or its session had a call in progress inside
the region at initiation.  Blocking happens on the callee (region) side.
"""

from __future__ import annotations

from collections import deque
from enum import Enum
from typing import Iterable, Union

from .errors import UnknownMember, UnmappedBlockedCall, WrongPhase
from .model import LifecycleState
from .runtime import IN_PROGRESS, BeanInstance, Call, Container, LookupRequest, RefMap, Target

Member = Union[str, tuple[str, str]]


class Phase(str, Enum):
    DECLARED = "Declared"
    TRACKING = "Tracking"
    INITIATED = "Initiated"
    QUIESCENT = "Quiescent"
    RELEASED = "Released"


class QuiescenceRegion:
    def __init__(self, region_id: str, deployments: frozenset[str], beans: frozenset[tuple[str, str]]):
        self.id = region_id
        self.deployments = deployments
        self.beans = beans
        self.phase = Phase.DECLARED
        self.phases: list[tuple[int, Phase]] = []
        self.tracking = False
        self.tracked: set[str] = set()
        self.blocked: deque[str] = deque()
        self.queued_lookups: list[LookupRequest] = []
        self.admission = True
        self.initiated_at: int | None = None
        self.quiescent_at: int | None = None
        self.released_at: int | None = None
        self.active_at_init: frozenset[str] = frozenset()
        self.root_sessions: frozenset[str] = frozenset()
        self.locked_stores: list[str] = []

    def __repr__(self) -> str:
        return f"QuiescenceRegion({self.id}, {self.phase.value})"

    @property
    def members(self) -> list[str]:
        return sorted(self.deployments) + sorted(f"{d}.{b}" for d, b in self.beans)

    def covers(self, deployment_id: str, bean: str) -> bool:
        return deployment_id in self.deployments or (deployment_id, bean) in self.beans

    @property
    def blocking(self) -> bool:
        return self.phase in (Phase.INITIATED, Phase.QUIESCENT)

    # -- container hooks ---------------------------------------------------

    def on_instance_created(self, inst: BeanInstance) -> None:
        if self.tracking and inst.bean_type.stateful and self.covers(*inst.key):
            self.tracked.add(inst.id)

    def queues_lookup(self, deployment_id: str, bean: str) -> bool:
        return self.blocking and self.covers(deployment_id, bean)

    def queue_lookup(self, request: LookupRequest) -> None:
        self.queued_lookups.append(request)

    def intercept_call(self, container: Container, call: Call) -> bool:
        """Return True (and keep the call) if it must wait for release."""
        if not self.blocking or not self.covers(*container.target_key(call.target)):
            return False
        if self.phase is Phase.INITIATED and self.admission and self.admissible(container, call):
            return False
        self.blocked.append(call.id)
        return True

    def admissible(self, container: Container, call: Call) -> bool:
        if call.session_id in self.root_sessions:
            return True
        parent = call.parent_id
        while parent is not None:
            if parent in self.active_at_init:
                return True
            parent = container.calls[parent].parent_id
        return False

    def busy_calls(self, container: Container) -> list[Call]:
        """In-progress (not blocked) calls on member instances."""
        return [
            c for c in container.calls.values()
            if c.status in IN_PROGRESS and c.target is not None and self.covers(*container.target_key(c.target))
        ]

    def is_quiescent(self, container: Container) -> bool:
        return not self.busy_calls(container)

    def _enter(self, container: Container, phase: Phase) -> None:
        self.phase = phase
        self.phases.append((container.now, phase))
        container.emit("QUIESCENCE", detail=f"phase={phase.value} region={self.id}")


def _parse_member(member: Member) -> tuple[str, str | None]:
    if isinstance(member, tuple):
        return member
    if "." in member:
        dep, bean = member.split(".", 1)
        return dep, bean
    return member, None


def declare_region(container: Container, members: Iterable[Member]) -> QuiescenceRegion:
    """Declare the beans or whole deployments that must later be quiescent."""
    deployments: set[str] = set()
    beans: set[tuple[str, str]] = set()
    members = [members] if isinstance(members, (str, tuple)) else list(members)
    if not members:
        raise UnknownMember("a region needs at least one member")
    for member in members:
        dep_id, bean = _parse_member(member)
        dep = container.registry.deployments.get(dep_id)
        if dep is None or dep.state is not LifecycleState.STARTED:
            raise UnknownMember(f"{dep_id} is not a started deployment")
        if bean is None:
            deployments.add(dep_id)
        elif not dep.module_type.has_bean(bean):
            raise UnknownMember(f"{dep_id} has no bean {bean}")
        else:
            beans.add((dep_id, bean))
    region = QuiescenceRegion(f"r{len(container.regions) + 1}", frozenset(deployments), frozenset(beans))
    container.regions.append(region)
    region._enter(container, Phase.DECLARED)
    return region


def start_tracking(container: Container, region: QuiescenceRegion) -> None:
    """Collect existing and future member instances.

    Tracking may also start after initiation; the phase then stays where it
    is and the live instances are collected the same way.
    """
    if region.tracking or region.phase is Phase.RELEASED:
        raise WrongPhase(region.id, region.phase.value, "startTracking")
    region.tracking = True
    for inst in container.instances.values():
        if inst.alive:
            region.on_instance_created(inst)
    if region.phase is Phase.DECLARED:
        region._enter(container, Phase.TRACKING)


def initiate_quiescence(container: Container, region: QuiescenceRegion, admission: bool = True) -> None:
    """Start blocking new calls into the region.

    ``admission=False`` blocks every new call, including those needed to
    finish in-flight work; it exists to demonstrate the resulting deadlock.
    """
    if region.phase not in (Phase.DECLARED, Phase.TRACKING):
        raise WrongPhase(region.id, region.phase.value, "initiateQuiescence")
    in_flight = container.in_progress_calls()
    region.active_at_init = frozenset(c.id for c in in_flight)
    region.root_sessions = frozenset(
        c.session_id for c in in_flight
        if c.target is not None and region.covers(*container.target_key(c.target))
    )
    region.admission = admission
    region.initiated_at = container.now
    region._enter(container, Phase.INITIATED)


def await_quiescence(container: Container, region: QuiescenceRegion, max_ticks: int = 10_000) -> int:
    """Advance the simulation until no member instance is servicing a call."""
    if region.phase is not Phase.INITIATED:
        raise WrongPhase(region.id, region.phase.value, "awaitQuiescence")
    tick = container.wait_until(lambda: region.is_quiescent(container), max_ticks, f"quiescence of {region.id}")
    region.quiescent_at = tick
    region._enter(container, Phase.QUIESCENT)
    return tick


def release_region(container: Container, region: QuiescenceRegion, rebind_plan: Iterable[RefMap] = ()) -> None:
    """Release blocked calls (FIFO) and queued lookups.

    A blocked call resumes on the target the rebind plan gives its holder,
    else on whatever its holder references now.  Calls whose target is gone
    fail with ``UnmappedBlockedCall``; the error is raised after everything
    else was released.
    """
    if region.phase is not Phase.QUIESCENT:
        raise WrongPhase(region.id, region.phase.value, "releaseRegion")
    plan: dict[tuple, Target] = {}
    for refmap in rebind_plan:
        for pair in refmap:
            plan[(pair.holder, pair.old)] = pair.new
    region._enter(container, Phase.RELEASED)
    region.released_at = container.now
    for owner in region.locked_stores:
        container.datastores[owner].locked = False
    region.locked_stores.clear()

    unmapped: list[str] = []
    while region.blocked:
        call = container.calls[region.blocked.popleft()]
        target = plan.get((call.holder, call.target))
        if target is None:
            target = container.holder_target(call.holder)
        if not container.target_live(target):
            unmapped.append(call.id)
            container.fail_blocked(call, "UnmappedBlockedCall")
            continue
        container.resume_call(call, target)
    lookups, region.queued_lookups = region.queued_lookups, []
    for request in lookups:
        container.complete_lookup(request)
    if unmapped:
        raise UnmappedBlockedCall(unmapped)
