"""Deterministic discrete-event simulation of a running container.

Time is an integer tick.  The container owns sessions, bean instances,
calls and per-deployment datastores; everything that happens is appended
to :attr:`Container.trace` as a :class:`TraceEvent`.

Event ordering inside a tick is fixed: call completions first (lower call
id first), then externally scheduled actions in scheduling order.
"""

from __future__ import annotations

import heapq
import itertools
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Union

from .errors import (
    ActiveSessionsRemain,
    DeploymentNotStarted,
    InterfaceMismatch,
    SessionClosed,
    SimulationExhausted,
    UnknownInstance,
    UnknownReference,
    UnknownSession,
    ValidationError,
)
from .model import BeanType, InterfaceId, LifecycleState, Registry, value_matches

log = logging.getLogger(__name__)


class CallStatus(str, Enum):
    PENDING = "Pending"
    BLOCKED = "Blocked"
    ACTIVE = "Active"
    DONE = "Done"
    FAILED = "Failed"


TERMINAL = (CallStatus.DONE, CallStatus.FAILED)
IN_PROGRESS = (CallStatus.PENDING, CallStatus.ACTIVE)


@dataclass(frozen=True)
class PoolRef:
    """A reference to the stateless instance pool of one bean in one deployment."""

    deployment_id: str
    bean: str

    def __str__(self) -> str:
        return f"{self.deployment_id}.{self.bean}[pool]"


Target = Union[str, PoolRef]


def target_str(target: Target | None) -> str:
    return "-" if target is None else str(target)


@dataclass(frozen=True)
class StateOp:
    """``field = value`` or ``field += value`` applied when a call completes."""

    field: str
    op: str
    value: Any

    def __post_init__(self) -> None:
        if self.op not in ("=", "+="):
            raise ValidationError(f"unsupported state operator {self.op!r}")

    def apply(self, state: dict[str, Any]) -> None:
        if self.field not in state:
            raise ValidationError(f"no state field {self.field!r}")
        if self.op == "=":
            state[self.field] = self.value
        else:
            state[self.field] = state[self.field] + self.value

    def __str__(self) -> str:
        value = self.value
        if isinstance(value, bool):
            value = "true" if value else "false"
        return f"{self.field}{self.op}{value}"


@dataclass(frozen=True)
class CallSpec:
    """What a call does: own work for ``duration`` ticks, then nested calls in order.

    Nested calls go out through reference ``via`` of the serving instance.
    """

    operation: str
    duration: int
    effects: tuple[StateOp, ...] = ()
    reads: tuple[str, ...] = ()
    writes: tuple[tuple[str, Any], ...] = ()
    calls: tuple["CallSpec", ...] = ()
    via: str | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.duration, int) or self.duration < 1:
            raise ValidationError(f"call duration must be a positive integer, got {self.duration!r}")
        for attr in ("effects", "reads", "writes", "calls"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        for child in self.calls:
            if child.via is None:
                raise ValidationError("nested calls need a reference name (via)")

    def depth(self) -> int:
        return 1 + max((c.depth() for c in self.calls), default=0)

    def count(self) -> int:
        return 1 + sum(c.count() for c in self.calls)


@dataclass
class Datastore:
    owner: str
    entries: dict[str, Any] = field(default_factory=dict)
    locked: bool = False


@dataclass
class BeanInstance:
    id: str
    bean_type: BeanType
    deployment_id: str
    state: dict[str, Any] = field(default_factory=dict)
    refs: dict[str, PoolRef | None] = field(default_factory=dict)
    busy: str | None = None
    alive: bool = True
    detached: bool = False
    waiting: deque = field(default_factory=deque)

    @property
    def bean(self) -> str:
        return self.bean_type.name

    @property
    def key(self) -> tuple[str, str]:
        return (self.deployment_id, self.bean_type.name)


@dataclass
class Session:
    id: str
    client_id: str
    opened_at: int
    bound: dict[str, Target] = field(default_factory=dict)
    interfaces: dict[str, str] = field(default_factory=dict)
    status: str = "Open"
    closing: bool = False
    pending: set[str] = field(default_factory=set)
    deferred: dict[str, list[str]] = field(default_factory=dict)
    open_calls: set[str] = field(default_factory=set)
    lookup_wait: int = 0
    home_deployment: str | None = None
    home_at: int | None = None

    @property
    def is_open(self) -> bool:
        return self.status == "Open"


# ("session", session_id, handle) or ("instance", instance_id, reference)
Holder = tuple[str, str, str]


@dataclass
class Call:
    id: str
    session_id: str
    root_opened_at: int
    spec: CallSpec
    holder: Holder
    parent_id: str | None = None
    target: Target | None = None
    instance_id: str | None = None
    status: CallStatus = CallStatus.PENDING
    reason: str | None = None
    issued_at: int = 0
    started_at: int | None = None
    ended_at: int | None = None
    blocked_since: int | None = None
    blocked_ticks: int = 0
    was_blocked: bool = False
    next_child: int = 0

    @property
    def num(self) -> int:
        return int(self.id[1:])

    @property
    def interface(self) -> str:
        return self.holder[2]


@dataclass
class LookupRequest:
    session_id: str
    handle: str
    deployment_id: str
    bean: str
    interface: str
    requested_at: int


@dataclass(frozen=True)
class RefPair:
    holder: Holder
    old: Target | None
    new: Target

    @property
    def session_id(self) -> str:
        return self.holder[1] if self.holder[0] == "session" else "-"

    def __str__(self) -> str:
        kind, owner, name = self.holder
        return f"{owner}.{name}:{target_str(self.old)}->{target_str(self.new)}"


@dataclass
class RefMap:
    """Reference rebinds applied by one step, plus holders it skipped."""

    pairs: list[RefPair] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def merged(self, *others: "RefMap") -> "RefMap":
        out = RefMap(list(self.pairs), list(self.skipped))
        for other in others:
            out.pairs.extend(other.pairs)
            out.skipped.extend(other.skipped)
        return out


@dataclass(frozen=True)
class TraceEvent:
    tick: int
    kind: str
    session: str = "-"
    call: str = "-"
    detail: str = ""

    def render(self) -> str:
        return f"tick={self.tick} kind={self.kind} session={self.session} call={self.call} detail={self.detail}"


def render_trace(events: Iterable[TraceEvent]) -> str:
    return "".join(e.render() + "\n" for e in events)


class Container:
    """Single-threaded owner of all mutable runtime state."""

    def __init__(self, registry: Registry | None = None) -> None:
        self.registry = registry if registry is not None else Registry()
        self.now = 0
        self.sessions: dict[str, Session] = {}
        self.instances: dict[str, BeanInstance] = {}
        self.calls: dict[str, Call] = {}
        self.datastores: dict[str, Datastore] = {}
        self.store_alias: dict[str, str] = {}
        self.store_accesses: list[tuple[int, str, str]] = []
        self.regions: list[Any] = []
        self.trace: list[TraceEvent] = []
        self._queue: list[tuple[int, int, int, int, Callable[[], None]]] = []
        self._seq = itertools.count()
        self._next_call = 1
        self._next_instance = 1
        self._next_session = 1

    # -- trace & scheduling ---------------------------------------------

    def emit(self, kind: str, session: str = "-", call: str = "-", detail: str = "") -> TraceEvent:
        event = TraceEvent(self.now, kind, session or "-", call or "-", detail)
        self.trace.append(event)
        return event

    def schedule(self, tick: int, action: Callable[[], None]) -> None:
        """Run ``action`` at ``tick`` after that tick's call completions."""
        if tick < self.now:
            raise ValidationError(f"cannot schedule at {tick}, clock is at {self.now}")
        heapq.heappush(self._queue, (tick, 1, 0, next(self._seq), action))

    def _schedule_work_done(self, call: Call) -> None:
        tick = self.now + call.spec.duration
        heapq.heappush(self._queue, (tick, 0, call.num, next(self._seq), lambda: self._on_work_done(call.id)))

    @property
    def idle(self) -> bool:
        return not self._queue

    def next_event_tick(self) -> int | None:
        return self._queue[0][0] if self._queue else None

    def advance(self, until: int) -> list[TraceEvent]:
        """Process every event scheduled at or before ``until``; return what was emitted."""
        if until < self.now:
            raise ValidationError(f"cannot advance backwards to {until} from {self.now}")
        start = len(self.trace)
        while self._queue and self._queue[0][0] <= until:
            tick, *_, action = heapq.heappop(self._queue)
            self.now = tick
            action()
        self.now = until
        return self.trace[start:]

    def wait_until(self, predicate: Callable[[], bool], max_ticks: int = 10_000, what: str = "condition") -> int:
        """Advance event by event until ``predicate`` holds; return that tick."""
        deadline = self.now + max_ticks
        while not predicate():
            nxt = self.next_event_tick()
            if nxt is None:
                raise SimulationExhausted(f"{what} not reached: no more events at tick {self.now}")
            if nxt > deadline:
                raise SimulationExhausted(f"{what} not reached within {max_ticks} ticks")
            self.advance(nxt)
        return self.now

    def run_until_idle(self, max_tick: int = 1_000_000) -> None:
        while self._queue:
            nxt = self._queue[0][0]
            if nxt > max_tick:
                raise SimulationExhausted(f"events remain beyond tick {max_tick}")
            self.advance(nxt)

    # -- datastores ------------------------------------------------------

    def store_owner(self, deployment_id: str) -> str:
        while deployment_id in self.store_alias:
            deployment_id = self.store_alias[deployment_id]
        return deployment_id

    def datastore(self, deployment_id: str) -> Datastore:
        owner = self.store_owner(deployment_id)
        store = self.datastores.get(owner)
        if store is None:
            store = self.datastores[owner] = Datastore(owner)
        return store

    def alias_datastore(self, deployment_id: str, shared_with: str) -> None:
        """Make ``deployment_id`` use the datastore of ``shared_with``."""
        if self.store_owner(shared_with) == deployment_id:
            raise ValidationError("datastore alias would form a loop")
        self.store_alias[deployment_id] = shared_with
        self.emit("DATASTORE", detail=f"alias {deployment_id}->{self.store_owner(shared_with)}")

    # -- instances -------------------------------------------------------

    def _create_instance(self, deployment_id: str, bean_name: str) -> BeanInstance:
        dep = self.registry.deployment(deployment_id)
        bean = dep.bean(bean_name)
        refs: dict[str, PoolRef | None] = {}
        for (b, r), target in dep.wirings.items():
            if b == bean_name:
                refs[r] = PoolRef(target.deployment_id, target.bean) if target else None
        inst = BeanInstance(f"i{self._next_instance}", bean, deployment_id, bean.initial_state(), refs)
        self._next_instance += 1
        self.instances[inst.id] = inst
        self.emit("INSTANCE", detail=f"create {inst.id} {deployment_id}.{bean_name}")
        for region in self.regions:
            region.on_instance_created(inst)
        return inst

    def create_stateful_instance(self, deployment_id: str, bean_name: str, state: dict[str, Any] | None = None) -> BeanInstance:
        dep = self.registry.deployment(deployment_id)
        if dep.state is not LifecycleState.STARTED:
            raise DeploymentNotStarted(deployment_id)
        if not dep.bean(bean_name).stateful:
            raise ValidationError(f"{deployment_id}.{bean_name} is not stateful")
        inst = self._create_instance(deployment_id, bean_name)
        if state:
            for name, value in state.items():
                inst.state[name] = value
        return inst

    def instance(self, instance_id: str) -> BeanInstance:
        try:
            return self.instances[instance_id]
        except KeyError:
            raise UnknownInstance(instance_id) from None

    def instances_of(self, deployment_id: str, bean: str | None = None, alive: bool = True) -> list[BeanInstance]:
        return [
            i for i in self.instances.values()
            if i.deployment_id == deployment_id and (bean is None or i.bean == bean) and (i.alive or not alive)
        ]

    def _destroy(self, inst: BeanInstance) -> None:
        if inst.alive:
            inst.alive = False
            self.emit("INSTANCE", detail=f"destroy {inst.id}")

    def discard_instance(self, instance_id: str) -> None:
        """Destroy an instance no session or call refers to."""
        inst = self.instance(instance_id)
        if inst.busy is not None or inst.waiting:
            raise ValidationError(f"{instance_id} is servicing a call")
        self._destroy(inst)

    def _pool_instance(self, ref: PoolRef) -> BeanInstance:
        for inst in self.instances.values():
            if inst.key == (ref.deployment_id, ref.bean) and inst.alive and inst.busy is None and not inst.waiting:
                return inst
        return self._create_instance(ref.deployment_id, ref.bean)

    def target_key(self, target: Target) -> tuple[str, str]:
        if isinstance(target, PoolRef):
            return (target.deployment_id, target.bean)
        return self.instances[target].key

    def target_live(self, target: Target | None) -> bool:
        if target is None:
            return False
        if isinstance(target, PoolRef):
            dep = self.registry.deployments.get(target.deployment_id)
        else:
            inst = self.instances.get(target)
            if inst is None or not inst.alive:
                return False
            dep = self.registry.deployments.get(inst.deployment_id)
        return dep is not None and dep.state is LifecycleState.STARTED

    # -- sessions --------------------------------------------------------

    def session(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise UnknownSession(session_id) from None

    def open_session(
        self,
        client_id: str,
        deployment_id: str,
        bean: str,
        interface: str | InterfaceId,
        handle: str | None = None,
        session_id: str | None = None,
    ) -> Session:
        """Look up ``bean`` for a new client session.

        The returned session is Open.  If the lookup falls into a blocking
        quiescence region it is queued: ``handle in session.pending`` until
        the region is released.
        """
        if session_id is None:
            while f"s{self._next_session}" in self.sessions:
                self._next_session += 1
            session_id = f"s{self._next_session}"
            self._next_session += 1
        elif session_id in self.sessions:
            raise ValidationError(f"session {session_id} already exists")
        handle = handle or bean[:1].lower() + bean[1:]
        request = self._check_lookup(session_id, handle, deployment_id, bean, interface)
        session = Session(session_id, client_id, self.now)
        self.sessions[session_id] = session
        self._lookup(session, request)
        return session

    def lookup(self, session_id: str, deployment_id: str, bean: str, interface: str | InterfaceId, handle: str) -> None:
        """Bind one more reference into an existing session."""
        session = self.session(session_id)
        if not session.is_open or session.closing:
            raise SessionClosed(session_id)
        if handle in session.bound or handle in session.pending:
            raise ValidationError(f"session {session_id} already has handle {handle}")
        self._lookup(session, self._check_lookup(session_id, handle, deployment_id, bean, interface))

    def _check_lookup(self, session_id: str, handle: str, deployment_id: str, bean: str, interface: str | InterfaceId) -> LookupRequest:
        iface = interface.name if isinstance(interface, InterfaceId) else interface
        request = LookupRequest(session_id, handle, deployment_id, bean, iface, self.now)
        self._resolve_lookup(request, queue_ok=True)
        return request

    def _resolve_lookup(self, request: LookupRequest, queue_ok: bool) -> tuple[str, str] | None:
        dep_id, bean_name = self.registry.resolve_lookup(request.deployment_id, request.bean)
        dep = self.registry.deployment(dep_id)
        if not dep.module_type.has_bean(bean_name):
            raise UnknownReference(f"{dep_id} has no bean {bean_name}")
        if not dep.bean(bean_name).provides_name(request.interface):
            raise InterfaceMismatch(f"{dep_id}.{bean_name} does not provide {request.interface}")
        if queue_ok and any(r.queues_lookup(dep_id, bean_name) for r in self.regions):
            return None
        if dep.state is not LifecycleState.STARTED:
            raise DeploymentNotStarted(f"{dep_id} is {dep.state.value}")
        return dep_id, bean_name

    def _lookup(self, session: Session, request: LookupRequest) -> None:
        resolved = self._resolve_lookup(request, queue_ok=True)
        if resolved is None:
            for region in self.regions:
                dep_id, bean_name = self.registry.resolve_lookup(request.deployment_id, request.bean)
                if region.queues_lookup(dep_id, bean_name):
                    region.queue_lookup(request)
                    break
            session.pending.add(request.handle)
            session.deferred.setdefault(request.handle, [])
            self.emit("LOOKUP_QUEUED", session.id, detail=f"handle={request.handle} target={request.deployment_id}.{request.bean}")
            return
        self._bind(session, request, *resolved)

    def _bind(self, session: Session, request: LookupRequest, dep_id: str, bean_name: str) -> None:
        bean = self.registry.deployment(dep_id).bean(bean_name)
        if bean.stateful:
            target: Target = self._create_instance(dep_id, bean_name).id
        else:
            target = PoolRef(dep_id, bean_name)
        session.bound[request.handle] = target
        session.interfaces[request.handle] = request.interface
        if session.home_deployment is None:
            session.home_deployment = dep_id
            session.home_at = self.now
        self.emit("LOOKUP", session.id, detail=f"handle={request.handle} target={target_str(target)} dep={dep_id}")

    def complete_lookup(self, request: LookupRequest) -> None:
        """Finish a queued lookup after its region was released."""
        session = self.sessions[request.session_id]
        session.pending.discard(request.handle)
        waited = self.now - request.requested_at
        session.lookup_wait += waited
        deferred = session.deferred.pop(request.handle, [])
        try:
            resolved = self._resolve_lookup(request, queue_ok=False)
        except Exception as exc:  # the queued lookup can no longer be satisfied
            self.emit("ERROR", session.id, detail=f"queued lookup failed: {exc}")
            for cid in deferred:
                self._unblock(self.calls[cid])
                self._fail(self.calls[cid], "InvalidReference")
            self._maybe_close(session)
            return
        self._bind(session, request, *resolved)
        for cid in deferred:
            call = self.calls[cid]
            self._unblock(call)
            self.emit("CALL_RESUME", session.id, call.id, f"after lookup handle={request.handle}")
            self._issue(call)
        self._maybe_close(session)

    def close_session(self, session_id: str) -> None:
        session = self.session(session_id)
        if not session.is_open or session.closing:
            raise SessionClosed(session_id)
        session.closing = True
        self.emit("SESSION_CLOSING", session.id)
        self._maybe_close(session)

    def _maybe_close(self, session: Session) -> None:
        if not session.closing or not session.is_open:
            return
        if session.open_calls or session.pending:
            return
        for target in session.bound.values():
            if isinstance(target, str):
                self._destroy(self.instances[target])
        session.status = "Closed"
        self.emit("SESSION_CLOSE", session.id)

    def rebind_reference(self, session_id: str, handle: str, new_target: Target) -> Target:
        """Point a session handle at a new instance or pool; return the old target."""
        session = self.session(session_id)
        if handle not in session.bound:
            raise UnknownReference(f"{session_id}.{handle}")
        iface = session.interfaces[handle]
        if isinstance(new_target, PoolRef):
            dep = self.registry.deployment(new_target.deployment_id)
            if not dep.module_type.has_bean(new_target.bean):
                raise UnknownReference(str(new_target))
            bean = dep.bean(new_target.bean)
            if bean.stateful:
                raise InterfaceMismatch(f"{new_target} is stateful; rebind to an instance")
        else:
            bean = self.instance(new_target).bean_type
        if not bean.provides_name(iface):
            raise InterfaceMismatch(f"{target_str(new_target)} does not provide {iface}")
        old = session.bound[handle]
        session.bound[handle] = new_target
        if isinstance(old, str) and old != new_target:
            self.instances[old].detached = True
        self.emit("REBIND", session.id, detail=f"handle={handle} {target_str(old)}->{target_str(new_target)}")
        return old

    def rebind_instance_ref(self, instance_id: str, reference: str, new_target: PoolRef) -> PoolRef | None:
        inst = self.instance(instance_id)
        if reference not in inst.refs:
            raise UnknownReference(f"{instance_id}.{reference}")
        old = inst.refs[reference]
        inst.refs[reference] = new_target
        self.emit("REBIND", detail=f"instance={instance_id} ref={reference} {target_str(old)}->{new_target}")
        return old

    # -- calls -----------------------------------------------------------

    def invoke(self, session_id: str, handle: str, spec: CallSpec) -> Call:
        """Issue a client call through a session handle.

        The outcome is known only after the simulation advances; the returned
        :class:`Call` is updated in place.
        """
        session = self.session(session_id)
        if not session.is_open or session.closing:
            raise SessionClosed(session_id)
        if handle not in session.bound and handle not in session.pending:
            raise UnknownReference(f"{session_id}.{handle}")
        call = self._new_call(session, spec, ("session", session_id, handle), None)
        if handle in session.pending:
            self._block(call, "lookup-pending")
            session.deferred[handle].append(call.id)
            return call
        self._issue(call)
        return call

    def _new_call(self, session: Session, spec: CallSpec, holder: Holder, parent: str | None) -> Call:
        call = Call(f"c{self._next_call}", session.id, session.opened_at, spec, holder, parent, issued_at=self.now)
        self._next_call += 1
        self.calls[call.id] = call
        session.open_calls.add(call.id)
        self.emit("CALL_ISSUE", session.id, call.id,
                  f"op={spec.operation} via={holder[2]}" + (f" parent={parent}" if parent else ""))
        return call

    def holder_target(self, holder: Holder) -> Target | None:
        kind, owner, name = holder
        if kind == "session":
            return self.sessions[owner].bound.get(name)
        return self.instances[owner].refs.get(name)

    def _block(self, call: Call, why: str) -> None:
        call.status = CallStatus.BLOCKED
        call.blocked_since = self.now
        call.was_blocked = True
        self.emit("CALL_BLOCK", call.session_id, call.id, why)

    def _unblock(self, call: Call) -> None:
        if call.blocked_since is not None:
            call.blocked_ticks += self.now - call.blocked_since
            call.blocked_since = None
        call.status = CallStatus.PENDING

    def _issue(self, call: Call, target: Target | None = None) -> None:
        if target is None:
            target = self.holder_target(call.holder)
        call.target = target
        if target is None:
            self._fail(call, "UnknownReference")
            return
        if not self.target_live(target):
            self._fail(call, "InvalidReference")
            return
        if isinstance(target, PoolRef):
            bean = self.registry.deployment(target.deployment_id).bean(target.bean)
            if bean.stateful:
                self._fail(call, "StatefulPoolTarget")
                return
        for region in self.regions:
            if region.intercept_call(self, call):
                self._block(call, f"region={region.id}")
                return
        self._dispatch(call)

    def resume_call(self, call: Call, target: Target | None) -> None:
        """Re-issue a call that a released region had blocked."""
        self._unblock(call)
        self.emit("CALL_RESUME", call.session_id, call.id, f"target={target_str(target)}")
        self._issue(call, target)

    def fail_blocked(self, call: Call, reason: str) -> None:
        self._unblock(call)
        self._fail(call, reason)

    def _dispatch(self, call: Call) -> None:
        target = call.target
        inst = self._pool_instance(target) if isinstance(target, PoolRef) else self.instances[target]
        call.instance_id = inst.id
        if inst.busy is not None:
            inst.waiting.append(call.id)
            self.emit("CALL_WAIT", call.session_id, call.id, f"instance={inst.id} busy={inst.busy}")
            return
        self._start(call, inst)

    def _start(self, call: Call, inst: BeanInstance) -> None:
        inst.busy = call.id
        call.status = CallStatus.ACTIVE
        call.started_at = self.now
        self.emit("CALL_START", call.session_id, call.id, f"instance={inst.id} dep={inst.deployment_id} bean={inst.bean}")
        spec = call.spec
        if spec.reads or spec.writes:
            store = self.datastore(inst.deployment_id)
            if store.locked:
                self._fail(call, "DatastoreLocked")
                return
            self.store_accesses.append((self.now, store.owner, inst.id))
            for key, value in spec.writes:
                store.entries[key] = value
        self._schedule_work_done(call)

    def _on_work_done(self, call_id: str) -> None:
        call = self.calls[call_id]
        if call.status is CallStatus.ACTIVE:
            self._next_child(call)

    def _next_child(self, call: Call) -> None:
        if call.next_child < len(call.spec.calls):
            child_spec = call.spec.calls[call.next_child]
            call.next_child += 1
            session = self.sessions[call.session_id]
            child = self._new_call(session, child_spec, ("instance", call.instance_id, child_spec.via), call.id)
            self._issue(child)
            return
        self._complete(call)

    def _complete(self, call: Call) -> None:
        inst = self.instances[call.instance_id]
        if inst.bean_type.stateful:
            for effect in call.spec.effects:
                entry = next((f for f in inst.bean_type.state_fields if f.name == effect.field), None)
                if entry is None:
                    raise ValidationError(f"{inst.bean} has no state field {effect.field!r}")
                effect.apply(inst.state)
                if not value_matches(entry.value_type, inst.state[effect.field]):
                    raise ValidationError(f"effect {effect} breaks type {entry.value_type}")
        call.status = CallStatus.DONE
        call.ended_at = self.now
        self.emit("CALL_DONE", call.session_id, call.id, f"instance={inst.id}")
        self._release_instance(inst, call)
        self._after_terminal(call)

    def _fail(self, call: Call, reason: str) -> None:
        call.status = CallStatus.FAILED
        call.reason = reason
        call.ended_at = self.now
        self.emit("CALL_FAIL", call.session_id, call.id, f"reason={reason} target={target_str(call.target)}")
        if call.instance_id is not None:
            inst = self.instances[call.instance_id]
            if call.id in inst.waiting:
                inst.waiting.remove(call.id)
            if inst.busy == call.id:
                self._release_instance(inst, call)
        self._after_terminal(call)

    def _release_instance(self, inst: BeanInstance, call: Call) -> None:
        inst.busy = None
        if inst.waiting and inst.alive:
            nxt = self.calls[inst.waiting.popleft()]
            self._start(nxt, inst)

    def _after_terminal(self, call: Call) -> None:
        session = self.sessions[call.session_id]
        session.open_calls.discard(call.id)
        if call.parent_id is not None:
            parent = self.calls[call.parent_id]
            if parent.status is CallStatus.ACTIVE:
                self._next_child(parent)
        self._maybe_close(session)

    def in_progress_calls(self) -> list[Call]:
        return [c for c in self.calls.values() if c.status in IN_PROGRESS]

    # -- lifecycle -------------------------------------------------------

    def start_deployment(self, deployment_id: str) -> None:
        self.registry.start(deployment_id)
        self.emit("LIFECYCLE", detail=f"{deployment_id} Started")

    def obligations(self, deployment_id: str) -> list[str]:
        """Everything that still ties clients to ``deployment_id``."""
        found = []
        for session in self.sessions.values():
            if not session.is_open:
                continue
            for handle, target in sorted(session.bound.items()):
                if self.target_key(target)[0] == deployment_id:
                    found.append(f"session {session.id}.{handle}")
        for call in self.calls.values():
            if call.status in (CallStatus.PENDING, CallStatus.ACTIVE, CallStatus.BLOCKED) and call.target is not None:
                if self.target_key(call.target)[0] == deployment_id:
                    found.append(f"call {call.id}")
        for region in self.regions:
            for request in region.queued_lookups:
                if self.registry.resolve_lookup(request.deployment_id, request.bean)[0] == deployment_id:
                    found.append(f"lookup {request.session_id}.{request.handle}")
        return found

    def stop_deployment(self, deployment_id: str, also_undeploy: bool = False, flash: bool = False) -> None:
        """Stop (and optionally undeploy) a deployment, destroying its instances.

        Without ``flash`` the deployment must be free of obligations.  With
        ``flash`` in-flight calls on its instances fail immediately and
        existing references are left dangling.
        """
        dep = self.registry.deployment(deployment_id)
        if dep.state is LifecycleState.STARTED and not flash:
            pending = self.obligations(deployment_id)
            if pending:
                raise ActiveSessionsRemain(deployment_id, pending)
        self.registry.stop(deployment_id, also_undeploy)
        doomed = [
            c for c in sorted(self.calls.values(), key=lambda c: c.num)
            if c.status in IN_PROGRESS and c.instance_id is not None
            and self.instances[c.instance_id].deployment_id == deployment_id
        ]
        for inst in self.instances_of(deployment_id):
            self._destroy(inst)
        # ascending ids fail parents before their children
        for call in doomed:
            if call.status in IN_PROGRESS:
                self._fail(call, "InvalidReference")
        if self.store_owner(deployment_id) == deployment_id and deployment_id in self.datastores:
            self.datastores[deployment_id].locked = False
        self.emit("LIFECYCLE", detail=f"{deployment_id} {dep.state.value}")

    # -- snapshots -------------------------------------------------------

    def snapshot(self) -> dict[str, Any]:
        """Immutable-by-copy view of the runtime state (trace excluded)."""
        return {
            "now": self.now,
            "registry": self.registry.snapshot(),
            "sessions": {
                s.id: {
                    "status": s.status,
                    "bound": {h: target_str(t) for h, t in sorted(s.bound.items())},
                    "pending": sorted(s.pending),
                }
                for s in self.sessions.values()
            },
            "instances": {
                i.id: {
                    "key": f"{i.deployment_id}.{i.bean}",
                    "alive": i.alive,
                    "state": dict(i.state),
                    "refs": {r: target_str(t) for r, t in sorted(i.refs.items())},
                }
                for i in self.instances.values()
            },
            "calls": {c.id: (c.status.value, c.reason, target_str(c.target)) for c in self.calls.values()},
            "datastores": {
                k: {"entries": dict(v.entries), "locked": v.locked} for k, v in sorted(self.datastores.items())
            },
            "aliases": dict(sorted(self.store_alias.items())),
        }
