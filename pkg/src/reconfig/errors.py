"""Exception hierarchy shared by all reconfig modules."""

from __future__ import annotations


class ReconfigError(Exception):
    """Base class for every error raised by this package."""


# component model

class UnknownModuleType(ReconfigError):
    pass


class UnknownDeployment(ReconfigError):
    pass


class DuplicateDeployment(ReconfigError):
    pass


class WiringTargetMissing(ReconfigError):
    def __init__(self, bean: str, reference: str, detail: str = ""):
        self.bean = bean
        self.reference = reference
        super().__init__(f"wiring target missing for {bean}.{reference}" + (f": {detail}" if detail else ""))


class EnvTypeMismatch(ReconfigError):
    def __init__(self, entry: str, detail: str = ""):
        self.entry = entry
        super().__init__(f"environment entry {entry!r} type mismatch" + (f": {detail}" if detail else ""))


class IllegalLifecycleTransition(ReconfigError):
    def __init__(self, deployment_id: str, current: str, requested: str):
        self.deployment_id = deployment_id
        self.current = current
        self.requested = requested
        super().__init__(f"{deployment_id}: cannot go from {current} to {requested}")


class UnsatisfiedReference(ReconfigError):
    def __init__(self, bean: str, reference: str):
        self.bean = bean
        self.reference = reference
        super().__init__(f"reference {bean}.{reference} is not wired")


class InterfaceMismatch(ReconfigError):
    pass


# runtime

class ActiveSessionsRemain(ReconfigError):
    def __init__(self, deployment_id: str, obligations: list[str]):
        self.deployment_id = deployment_id
        self.obligations = obligations
        super().__init__(f"{deployment_id} still has active obligations: {', '.join(obligations)}")


class DeploymentNotStarted(ReconfigError):
    pass


class SessionClosed(ReconfigError):
    pass


class UnknownSession(ReconfigError):
    pass


class UnknownReference(ReconfigError):
    pass


class UnknownInstance(ReconfigError):
    pass


class SimulationExhausted(ReconfigError):
    """The event queue ran dry (or the tick bound was hit) before a wait condition held."""


# quiescence

class UnknownMember(ReconfigError):
    pass


class WrongPhase(ReconfigError):
    def __init__(self, region_id: str, phase: str, operation: str):
        self.region_id = region_id
        self.phase = phase
        super().__init__(f"region {region_id} is {phase}; {operation} not allowed")


class UnmappedBlockedCall(ReconfigError):
    def __init__(self, call_ids: list[str]):
        self.call_ids = call_ids
        super().__init__(f"blocked calls without a live target: {', '.join(call_ids)}")


# step executors

class NotQuiescent(ReconfigError):
    pass


class TrackingNotStarted(ReconfigError):
    pass


class TransformFailed(ReconfigError):
    pass


class NoCounterpartBean(ReconfigError):
    pass


class AmbiguousCounterpart(ReconfigError):
    pass


class TypeMismatchOnDeclaredMatch(ReconfigError):
    pass


class StatefulRebindWithoutTransfer(ReconfigError):
    pass


class UnknownExecutor(ReconfigError):
    pass


# strategy engine

class MissingInput(ReconfigError):
    pass


class KindMismatch(ReconfigError):
    pass


class InvalidStrategy(ReconfigError):
    pass


# scenario files

class ParseError(ReconfigError):
    def __init__(self, line: int, detail: str):
        self.line = line
        self.detail = detail
        super().__init__(f"line {line}: {detail}")


class ValidationError(ReconfigError):
    pass
