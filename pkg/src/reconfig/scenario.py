"""Scenario files: parsing, serialization, and simulated runs with metrics.

The grammar is documented in ``docs/scenario-format.md``.  A scenario
declares module types, initial deployments, a timed client workload and
optionally a reconfiguration plan that fires at a trigger tick.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Union

from .errors import ParseError, ReconfigError, ValidationError
from .model import (
    SELF,
    VALUE_TYPES,
    BeanKind,
    BeanType,
    EnvEntry,
    InterfaceId,
    ModuleType,
    ReferenceDecl,
    StateField,
    WiringTarget,
    value_matches,
)
from .runtime import CallSpec, CallStatus, Container, StateOp, render_trace
from .strategy import (
    REPLACED,
    REPLACING,
    ExecutionReport,
    ExecutorBinding,
    ParamMapping,
    ReconfigurationPlan,
    Strategy,
    StrategyKind,
    execute,
    instantiate,
)
from .steps import PortKind, PortSpec

# -- scenario data ---------------------------------------------------------


@dataclass(frozen=True)
class Duration:
    low: int
    high: int

    def __str__(self) -> str:
        return str(self.low) if self.low == self.high else f"{self.low}..{self.high}"

    def sample(self, rng: random.Random) -> int:
        return self.low if self.low == self.high else rng.randint(self.low, self.high)


@dataclass(frozen=True)
class NestedCallDecl:
    via: str
    duration: Duration
    calls: tuple["NestedCallDecl", ...] = ()

    def __str__(self) -> str:
        inner = f"({','.join(str(c) for c in self.calls)})" if self.calls else ""
        return f"{self.via}:{self.duration}{inner}"

    def build(self, rng: random.Random) -> CallSpec:
        return CallSpec(self.via, self.duration.sample(rng), calls=tuple(c.build(rng) for c in self.calls), via=self.via)


@dataclass(frozen=True)
class OpenAction:
    tick: int
    session: str
    client: str
    deployment: str
    bean: str
    interface: str
    handle: str


@dataclass(frozen=True)
class LookupAction:
    tick: int
    session: str
    deployment: str
    bean: str
    interface: str
    handle: str


@dataclass(frozen=True)
class InvokeAction:
    tick: int
    session: str
    handle: str
    operation: str
    duration: Duration
    effects: tuple[StateOp, ...] = ()
    reads: tuple[str, ...] = ()
    writes: tuple[tuple[str, Any], ...] = ()
    calls: tuple[NestedCallDecl, ...] = ()

    def build(self, rng: random.Random) -> CallSpec:
        return CallSpec(
            self.operation, self.duration.sample(rng), self.effects, self.reads, self.writes,
            tuple(c.build(rng) for c in self.calls),
        )


@dataclass(frozen=True)
class CloseAction:
    tick: int
    session: str


Action = Union[OpenAction, LookupAction, InvokeAction, CloseAction]


@dataclass
class DeploymentDecl:
    id: str
    module_type: str
    env: dict[str, dict[str, Any]] = field(default_factory=dict)
    wirings: dict[tuple[str, str], tuple[str, str]] = field(default_factory=dict)
    start: bool = True


@dataclass
class PlanDecl:
    strategy: str
    trigger: int
    inputs: dict[str, Any] = field(default_factory=dict)


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 0
    horizon: int = 100_000
    interfaces: dict[str, str] = field(default_factory=dict)
    module_types: list[ModuleType] = field(default_factory=list)
    deployments: list[DeploymentDecl] = field(default_factory=list)
    workload: list[Action] = field(default_factory=list)
    plan: PlanDecl | None = None
    strategies: list[Strategy] = field(default_factory=list)

    def module_type(self, name: str) -> ModuleType:
        for mt in self.module_types:
            if mt.name == name:
                return mt
        raise ValidationError(f"unknown module type {name}")

    def strategy_catalog(self) -> dict[str, Strategy]:
        return {s.name: s for s in self.strategies}


# -- parsing ---------------------------------------------------------------

SECTION_RE = re.compile(r"^\[(\w+)(?:\s+([^\]\s]+))?\]$")
INT_RE = re.compile(r"^-?\d+$")


def parse_literal(text: str) -> Any:
    if text == "true":
        return True
    if text == "false":
        return False
    if INT_RE.match(text):
        return int(text)
    if len(text) >= 2 and text[0] == text[-1] == '"':
        return text[1:-1]
    return text


def format_literal(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    text = str(value)
    if text in ("true", "false") or INT_RE.match(text) or not text or any(c in text for c in ' ,()"='):
        return f'"{text}"'
    return text


def _content_lines(text: str) -> list[tuple[int, str]]:
    """Non-blank, non-comment lines with their 1-based numbers."""
    out = []
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line and not line.startswith("#"):
            out.append((n, line))
    return out


def split_outside(text: str, sep: str | None, line: int) -> list[str]:
    """Split on ``sep`` (whitespace when None) outside double quotes and parentheses."""
    parts, current, quoted, depth = [], [], False, 0
    for ch in text:
        if ch == '"':
            quoted = not quoted
        elif not quoted and ch == "(":
            depth += 1
        elif not quoted and ch == ")":
            depth -= 1
        at_sep = ch.isspace() if sep is None else ch == sep
        if at_sep and not quoted and depth == 0:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
    if quoted:
        raise ParseError(line, "unterminated string")
    parts.append("".join(current))
    return [p for p in parts if p] if sep is None else parts


def _kv(tokens: list[str], line: int) -> dict[str, str]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ParseError(line, f"expected key=value, got {tok!r}")
        key, _, value = tok.partition("=")
        out[key] = value
    return out


def _split_words(text: str, line: int) -> list[str]:
    return split_outside(text, None, line)


def _duration(text: str, line: int) -> Duration:
    m = re.fullmatch(r"(\d+)(?:\.\.(\d+))?", text)
    if not m:
        raise ParseError(line, f"bad duration {text!r}")
    low = int(m.group(1))
    high = int(m.group(2)) if m.group(2) else low
    if low < 1 or high < low:
        raise ParseError(line, f"bad duration range {text!r}")
    return Duration(low, high)


def parse_calls(text: str, line: int) -> tuple[NestedCallDecl, ...]:
    """``ref:dur(ref:dur,...),ref:dur`` -> nested call declarations."""
    pos = 0

    def items() -> list[NestedCallDecl]:
        nonlocal pos
        out = [item()]
        while pos < len(text) and text[pos] == ",":
            pos += 1
            out.append(item())
        return out

    def item() -> NestedCallDecl:
        nonlocal pos
        m = re.compile(r"(\w+):(\d+(?:\.\.\d+)?)").match(text, pos)
        if not m:
            raise ParseError(line, f"bad nested call at {text[pos:]!r}")
        pos = m.end()
        children: list[NestedCallDecl] = []
        if pos < len(text) and text[pos] == "(":
            pos += 1
            children = items()
            if pos >= len(text) or text[pos] != ")":
                raise ParseError(line, "unbalanced parentheses in calls")
            pos += 1
        return NestedCallDecl(m.group(1), _duration(m.group(2), line), tuple(children))

    result = items()
    if pos != len(text):
        raise ParseError(line, f"trailing text in calls: {text[pos:]!r}")
    return tuple(result)


def parse_effects(text: str, line: int) -> tuple[StateOp, ...]:
    ops = []
    for part in split_outside(text, ",", line):
        m = re.fullmatch(r"(\w+)(\+=|=)(.+)", part)
        if not m:
            raise ParseError(line, f"bad effect {part!r}")
        ops.append(StateOp(m.group(1), m.group(2), parse_literal(m.group(3))))
    return tuple(ops)


def _target(text: str, line: int) -> tuple[str, str]:
    dep, dot, bean = text.rpartition(".")
    if not dot or not dep or not bean:
        raise ParseError(line, f"expected deployment.Bean, got {text!r}")
    return dep, bean


def _iface(text: str, interfaces: dict[str, str]) -> InterfaceId:
    name, _, contract = text.partition("@")
    return InterfaceId(name, contract or interfaces.get(name, name))


@dataclass
class _BeanDraft:
    name: str
    kind: BeanKind
    provides: list[str]
    references: list[tuple[str, str]] = field(default_factory=list)
    env: list[tuple[str, str, Any]] = field(default_factory=list)
    fields: list[tuple[str, str]] = field(default_factory=list)


def _parse_module(name: str, body: list[tuple[int, str]], interfaces: dict[str, str]) -> ModuleType:
    version = "1"
    drafts: dict[str, _BeanDraft] = {}

    def bean(line: int, bean_name: str) -> _BeanDraft:
        if bean_name not in drafts:
            raise ParseError(line, f"bean {bean_name} not declared in module {name}")
        return drafts[bean_name]

    for line, text in body:
        words = _split_words(text, line)
        head = words[0]
        if head == "version" and len(words) == 3 and words[1] == "=":
            version = words[2]
        elif head == "bean":
            if len(words) < 3:
                raise ParseError(line, "bean <Name> stateful|stateless provides=I1,I2")
            try:
                kind = BeanKind(words[2].capitalize())
            except ValueError:
                raise ParseError(line, f"bad bean kind {words[2]!r}") from None
            opts = _kv(words[3:], line)
            provides = [p for p in opts.get("provides", "").split(",") if p]
            if words[1] in drafts:
                raise ParseError(line, f"bean {words[1]} declared twice")
            drafts[words[1]] = _BeanDraft(words[1], kind, provides)
        elif head == "ref":
            if len(words) != 4 or words[2] != "->":
                raise ParseError(line, "ref <Bean>.<name> -> <Interface>")
            b, r = _target(words[1], line)
            bean(line, b).references.append((r, words[3]))
        elif head == "field":
            b, spec = _target(words[1], line) if len(words) == 2 else ("", "")
            fname, _, ftype = spec.partition(":")
            if not fname or ftype not in VALUE_TYPES:
                raise ParseError(line, "field <Bean>.<name>:<int|string|bool>")
            bean(line, b).fields.append((fname, ftype))
        elif head == "env":
            if len(words) not in (2, 4):
                raise ParseError(line, "env <Bean>.<name>:<type> [= default]")
            b, spec = _target(words[1], line)
            ename, _, etype = spec.partition(":")
            if etype not in VALUE_TYPES:
                raise ParseError(line, f"bad env type {etype!r}")
            default = parse_literal(words[3]) if len(words) == 4 else None
            bean(line, b).env.append((ename, etype, default))
        else:
            raise ParseError(line, f"unexpected line in module {name}: {text!r}")

    try:
        beans = [
            BeanType(
                d.name,
                d.kind,
                tuple(_iface(p, interfaces) for p in d.provides),
                tuple(ReferenceDecl(r, _iface(t, interfaces)) for r, t in d.references),
                tuple(EnvEntry(n, t, v) for n, t, v in d.env),
                tuple(StateField(n, t) for n, t in d.fields),
            )
            for d in drafts.values()
        ]
        return ModuleType(name, version, tuple(beans))
    except ReconfigError as exc:
        raise ParseError(body[0][0] if body else 0, f"module {name}: {exc}") from None


def _parse_deployment(dep_id: str, body: list[tuple[int, str]]) -> DeploymentDecl:
    decl = DeploymentDecl(dep_id, "")
    for line, text in body:
        words = _split_words(text, line)
        if len(words) == 3 and words[1] == "=" and words[0] in ("type", "start"):
            if words[0] == "type":
                decl.module_type = words[2]
            else:
                decl.start = parse_literal(words[2]) is True
        elif words[0] == "wire" and len(words) == 4 and words[2] == "->":
            decl.wirings[_target(words[1], line)] = _target(words[3], line)
        elif words[0] == "env" and len(words) == 4 and words[2] == "=":
            b, e = _target(words[1], line)
            decl.env.setdefault(b, {})[e] = parse_literal(words[3])
        else:
            raise ParseError(line, f"unexpected line in deployment {dep_id}: {text!r}")
    if not decl.module_type:
        raise ParseError(body[0][0] if body else 0, f"deployment {dep_id} needs type = <ModuleType>")
    return decl


def _parse_action(line: int, text: str) -> Action:
    words = _split_words(text, line)
    if len(words) < 4 or words[0] != "at" or not INT_RE.match(words[1]):
        raise ParseError(line, "workload lines look like: at <tick> <action> ...")
    tick = int(words[1])
    if tick < 0:
        raise ParseError(line, "ticks are non-negative")
    action, subject, opts = words[2], words[3], _kv(words[4:], line)
    try:
        if action == "open":
            dep, bean = _target(opts["target"], line)
            return OpenAction(tick, subject, opts.get("client", subject), dep, bean, opts["iface"],
                              opts.get("handle", bean[:1].lower() + bean[1:]))
        if action == "lookup":
            dep, bean = _target(opts["target"], line)
            return LookupAction(tick, subject, dep, bean, opts["iface"], opts["handle"])
        if action == "invoke":
            session, handle = _target(subject, line)
            writes = []
            for item in filter(None, split_outside(opts.get("write", ""), ",", line)):
                key, sep, value = item.partition(":")
                if not sep:
                    raise ParseError(line, f"write needs key:value, got {item!r}")
                writes.append((key, parse_literal(value)))
            return InvokeAction(
                tick, session, handle, opts.get("op", "call"), _duration(opts.get("duration", "1"), line),
                parse_effects(opts["effect"], line) if "effect" in opts else (),
                tuple(filter(None, opts.get("read", "").split(","))),
                tuple(writes),
                parse_calls(opts["calls"], line) if "calls" in opts else (),
            )
        if action == "close":
            return CloseAction(tick, subject)
    except KeyError as exc:
        raise ParseError(line, f"{action} needs {exc.args[0]}=") from None
    except ValidationError as exc:
        raise ParseError(line, str(exc)) from None
    raise ParseError(line, f"unknown action {action!r}")


def _parse_plan(body: list[tuple[int, str]]) -> PlanDecl:
    values: dict[str, str] = {}
    for line, text in body:
        key, sep, value = text.partition("=")
        if not sep:
            raise ParseError(line, f"expected key = value, got {text!r}")
        values[key.strip()] = value.strip()
    line = body[0][0] if body else 0
    if "strategy" not in values or "trigger" not in values:
        raise ParseError(line, "plan needs strategy and trigger")
    if not INT_RE.match(values["trigger"]):
        raise ParseError(line, "trigger must be an integer tick")
    inputs = {k: parse_literal(v) for k, v in values.items() if k not in ("strategy", "trigger")}
    return PlanDecl(values["strategy"], int(values["trigger"]), inputs)


def _parse_port(text: str, direction: str, line: int) -> PortSpec:
    name, _, kind = text.partition(":")
    try:
        return PortSpec(name, direction, PortKind(kind))
    except ValueError:
        raise ParseError(line, f"bad port kind {kind!r}") from None


def _parse_strategy(name: str, body: list[tuple[int, str]]) -> Strategy:
    kind = StrategyKind.CUSTOM
    steps: list[ExecutorBinding] = []
    mappings: list[ParamMapping] = []
    inputs: list[PortSpec] = []
    outputs: list[PortSpec] = []
    for line, text in body:
        words = _split_words(text, line)
        head = words[0]
        try:
            if head == "kind" and len(words) == 3 and words[1] == "=":
                kind = StrategyKind(words[2])
            elif head == "step" and len(words) >= 2:
                impl = words[2] if len(words) > 2 and "=" not in words[2] else ""
                opts = {k: parse_literal(v) for k, v in _kv(words[3 if impl else 2:], line).items()}
                steps.append(ExecutorBinding(words[1], impl, opts))
            elif head == "map" and len(words) == 4 and words[2] == "->":
                mappings.append(ParamMapping(words[1], words[3]))
            elif head == "input" and len(words) == 2:
                inputs.append(_parse_port(words[1], "in", line))
            elif head == "output" and len(words) == 2:
                outputs.append(_parse_port(words[1], "out", line))
            else:
                raise ParseError(line, f"unexpected line in strategy {name}: {text!r}")
        except (ValueError, ValidationError) as exc:
            raise ParseError(line, str(exc)) from None
    return Strategy(name, kind, tuple(steps), tuple(mappings), tuple(inputs), tuple(outputs))


def parse_scenario(text: str) -> Scenario:
    lines = _content_lines(text)
    sections: list[tuple[int, str, str | None, list[tuple[int, str]]]] = []
    for line, content in lines:
        m = SECTION_RE.match(content)
        if m:
            sections.append((line, m.group(1), m.group(2), []))
        elif not sections:
            raise ParseError(line, "content before the first [section]")
        else:
            sections[-1][3].append((line, content))

    scenario = Scenario()
    # interface contracts first: module sections depend on them
    for line, kind, name, body in sections:
        if kind == "interface":
            if not name:
                raise ParseError(line, "[interface <Name>]")
            contract = name
            for l2, text in body:
                key, sep, value = text.partition("=")
                if not sep or key.strip() != "contract":
                    raise ParseError(l2, "interface sections only take contract = <tag>")
                contract = value.strip()
            scenario.interfaces[name] = contract
    for line, kind, name, body in sections:
        if kind == "scenario":
            for l2, text in body:
                key, sep, value = (p.strip() for p in text.partition("="))
                if not sep or key not in ("name", "seed", "horizon"):
                    raise ParseError(l2, f"unexpected line in [scenario]: {text!r}")
                if key == "name":
                    scenario.name = value
                elif not INT_RE.match(value):
                    raise ParseError(l2, f"{key} must be an integer")
                else:
                    setattr(scenario, key, int(value))
        elif kind == "interface":
            continue
        elif kind == "module":
            if not name:
                raise ParseError(line, "[module <Name>]")
            scenario.module_types.append(_parse_module(name, body, scenario.interfaces))
        elif kind == "deployment":
            if not name:
                raise ParseError(line, "[deployment <id>]")
            scenario.deployments.append(_parse_deployment(name, body))
        elif kind == "workload":
            scenario.workload.extend(_parse_action(l2, text) for l2, text in body)
        elif kind == "plan":
            if scenario.plan is not None:
                raise ParseError(line, "only one [plan] section allowed")
            scenario.plan = _parse_plan(body)
        elif kind == "strategy":
            if not name:
                raise ParseError(line, "[strategy <Name>]")
            scenario.strategies.append(_parse_strategy(name, body))
        else:
            raise ParseError(line, f"unknown section [{kind}]")
    validate_scenario(scenario)
    return scenario


def validate_scenario(scenario: Scenario) -> None:
    """Check that names resolve; raises :class:`ValidationError`."""
    types = {mt.name: mt for mt in scenario.module_types}
    if len(types) != len(scenario.module_types):
        raise ValidationError("duplicate module type names")
    deployed: dict[str, ModuleType] = {}
    for decl in scenario.deployments:
        if decl.module_type not in types:
            raise ValidationError(f"deployment {decl.id}: unknown type {decl.module_type}")
        if decl.id in deployed:
            raise ValidationError(f"deployment {decl.id} declared twice")
        deployed[decl.id] = types[decl.module_type]
    for decl in scenario.deployments:
        for (bean, ref), (tdep, tbean) in decl.wirings.items():
            if tdep != SELF and tdep not in deployed:
                raise ValidationError(f"deployment {decl.id}: wiring {bean}.{ref} targets undeclared {tdep}")
    sessions: set[str] = set()
    for action in scenario.workload:
        if isinstance(action, OpenAction):
            if action.deployment not in deployed:
                raise ValidationError(f"open {action.session}: unknown deployment {action.deployment}")
            sessions.add(action.session)
        elif action.session not in sessions:
            raise ValidationError(f"workload references session {action.session} before it is opened")
    if scenario.plan is not None:
        plan = scenario.plan
        if plan.trigger < 0:
            raise ValidationError("trigger must be non-negative")
        replaced = plan.inputs.get(REPLACED)
        if replaced is not None and replaced not in deployed:
            raise ValidationError(f"plan replaces unknown deployment {replaced}")
        replacing = plan.inputs.get(REPLACING)
        if replacing is not None and replacing not in types:
            raise ValidationError(f"plan uses unknown module type {replacing}")


def load_scenario(path: str | Path) -> Scenario:
    """Parse a scenario file; a bare name selects a bundled scenario."""
    path = Path(path)
    if not path.exists() and not path.suffix:
        bundled = resources.files("reconfig") / "scenarios" / f"{path.name}.scn"
        if bundled.is_file():
            return parse_scenario(bundled.read_text(encoding="utf-8"))
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(0, f"cannot read {path}: {exc}") from None
    return parse_scenario(text)


def bundled_scenarios() -> list[str]:
    folder = resources.files("reconfig") / "scenarios"
    return sorted(p.name[:-4] for p in folder.iterdir() if p.name.endswith(".scn"))


# -- serialization ---------------------------------------------------------

def _iface_text(iface: InterfaceId, interfaces: dict[str, str]) -> str:
    default = interfaces.get(iface.name, iface.name)
    return iface.name if iface.contract == default else f"{iface.name}@{iface.contract}"


def serialize_scenario(scenario: Scenario) -> str:
    out = ["[scenario]", f"name = {scenario.name}", f"seed = {scenario.seed}", f"horizon = {scenario.horizon}", ""]
    for name, contract in scenario.interfaces.items():
        out += [f"[interface {name}]", f"contract = {contract}", ""]
    for mt in scenario.module_types:
        out += [f"[module {mt.name}]", f"version = {mt.version}"]
        for bean in mt.beans:
            provides = ",".join(_iface_text(i, scenario.interfaces) for i in bean.provides)
            out.append(f"bean {bean.name} {bean.kind.value.lower()} provides={provides}")
            for ref in bean.references:
                out.append(f"ref {bean.name}.{ref.name} -> {_iface_text(ref.target, scenario.interfaces)}")
            for f in bean.state_fields:
                out.append(f"field {bean.name}.{f.name}:{f.value_type}")
            for e in bean.env_entries:
                out.append(f"env {bean.name}.{e.name}:{e.value_type} = {format_literal(e.default)}")
        out.append("")
    for decl in scenario.deployments:
        out += [f"[deployment {decl.id}]", f"type = {decl.module_type}"]
        if not decl.start:
            out.append("start = false")
        for (bean, ref), (tdep, tbean) in decl.wirings.items():
            out.append(f"wire {bean}.{ref} -> {tdep}.{tbean}")
        for bean, values in decl.env.items():
            for key, value in values.items():
                out.append(f"env {bean}.{key} = {format_literal(value)}")
        out.append("")
    if scenario.workload:
        out.append("[workload]")
        for a in scenario.workload:
            out.append(_action_text(a))
        out.append("")
    if scenario.plan is not None:
        out += ["[plan]", f"strategy = {scenario.plan.strategy}", f"trigger = {scenario.plan.trigger}"]
        for key, value in scenario.plan.inputs.items():
            out.append(f"{key} = {format_literal(value)}")
        out.append("")
    for s in scenario.strategies:
        out.append(serialize_strategy(s))
    return "\n".join(out).rstrip() + "\n"


def serialize_strategy(strategy: Strategy) -> str:
    out = [f"[strategy {strategy.name}]", f"kind = {strategy.kind.value}"]
    for p in strategy.inputs:
        out.append(f"input {p.name}:{p.kind.value}")
    for p in strategy.outputs:
        out.append(f"output {p.name}:{p.kind.value}")
    for b in strategy.steps:
        opts = "".join(f" {k}={format_literal(v)}" for k, v in b.options.items())
        out.append(f"step {b.step} {b.implementation}{opts}")
    for m in strategy.mappings:
        out.append(f"map {m.source} -> {m.target}")
    return "\n".join(out) + "\n"


def _action_text(a: Action) -> str:
    if isinstance(a, OpenAction):
        return (f"at {a.tick} open {a.session} client={a.client} target={a.deployment}.{a.bean} "
                f"iface={a.interface} handle={a.handle}")
    if isinstance(a, LookupAction):
        return f"at {a.tick} lookup {a.session} target={a.deployment}.{a.bean} iface={a.interface} handle={a.handle}"
    if isinstance(a, CloseAction):
        return f"at {a.tick} close {a.session}"
    parts = [f"at {a.tick} invoke {a.session}.{a.handle} op={a.operation} duration={a.duration}"]
    if a.effects:
        parts.append("effect=" + ",".join(f"{e.field}{e.op}{format_literal(e.value)}" for e in a.effects))
    if a.reads:
        parts.append("read=" + ",".join(a.reads))
    if a.writes:
        parts.append("write=" + ",".join(f"{k}:{format_literal(v)}" for k, v in a.writes))
    if a.calls:
        parts.append("calls=" + ",".join(str(c) for c in a.calls))
    return " ".join(parts)


# -- running ---------------------------------------------------------------

@dataclass
class Metrics:
    totalCalls: int = 0
    doneCalls: int = 0
    failedCalls: int = 0
    blockedCalls: int = 0
    totalBlockedTicks: int = 0
    quiescenceDurationTicks: int = 0
    sessionsOnOldModule: int = 0
    sessionsOnNewModule: int = 0
    sessionsOnNewBeforeRelease: int = 0
    failureReasons: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)

    def render(self) -> str:
        return "\n".join(f"{k} = {v}" for k, v in self.to_dict().items()) + "\n"


@dataclass
class RunResult:
    scenario: Scenario
    container: Container
    report: ExecutionReport | None
    metrics: Metrics
    errors: list[str]

    @property
    def trace(self) -> str:
        return render_trace(self.container.trace)

    @property
    def new_deployment(self) -> str | None:
        if self.report is None:
            return None
        return self.report.strategy_outputs.get("newDeploymentId")


def build_container(scenario: Scenario) -> Container:
    """Register types, deploy and start the initial deployments."""
    container = Container()
    registry = container.registry
    for mt in scenario.module_types:
        registry.register(mt)
    later: list[tuple[str, str, str, WiringTarget]] = []
    for decl in scenario.deployments:
        mtype = registry.module_type(decl.module_type)
        wirings = {}
        for (bean, ref), (tdep, tbean) in decl.wirings.items():
            if not mtype.has_bean(bean) or mtype.bean(bean).reference(ref) is None:
                raise ValidationError(f"deployment {decl.id}: {bean} has no reference {ref}")
            target = WiringTarget(tdep, tbean, mtype.bean(bean).reference(ref).target)
            if tdep == SELF or tdep in registry.deployments:
                wirings[(bean, ref)] = target
            else:
                later.append((decl.id, bean, ref, target))
        registry.deploy(mtype, decl.env, wirings, deployment_id=decl.id)
        container.emit("LIFECYCLE", detail=f"{decl.id} Deployed type={mtype.name}")
    # forward references close wiring cycles once every deployment exists
    for dep_id, bean, ref, target in later:
        registry.wire(dep_id, bean, ref, target)
    for decl in scenario.deployments:
        if decl.start:
            container.start_deployment(decl.id)
    return container


def schedule_workload(container: Container, scenario: Scenario, rng: random.Random, errors: list[str]) -> None:
    def guarded(action: Action, spec: CallSpec | None):
        def run() -> None:
            try:
                if isinstance(action, OpenAction):
                    container.open_session(action.client, action.deployment, action.bean, action.interface,
                                           action.handle, action.session)
                elif isinstance(action, LookupAction):
                    container.lookup(action.session, action.deployment, action.bean, action.interface, action.handle)
                elif isinstance(action, InvokeAction):
                    container.invoke(action.session, action.handle, spec)
                else:
                    container.close_session(action.session)
            except ReconfigError as exc:
                session = getattr(action, "session", "-")
                container.emit("ERROR", session, detail=f"{type(exc).__name__}: {exc}")
                errors.append(f"tick {container.now} {session}: {type(exc).__name__}: {exc}")
        return run

    for action in sorted(scenario.workload, key=lambda a: a.tick):
        spec = action.build(rng) if isinstance(action, InvokeAction) else None
        container.schedule(action.tick, guarded(action, spec))


def run_scenario(
    scenario: Scenario,
    strategy: str | None = None,
    seed: int | None = None,
    check: bool = True,
    strategy_override: Strategy | None = None,
) -> RunResult:
    """Simulate ``scenario`` end to end, applying its plan at the trigger tick."""
    rng = random.Random(scenario.seed if seed is None else seed)
    container = build_container(scenario)
    errors: list[str] = []
    schedule_workload(container, scenario, rng, errors)
    report = None
    plan = scenario.plan
    if plan is not None:
        container.advance(plan.trigger)
        chosen: str | Strategy = strategy_override or strategy or plan.strategy
        try:
            executable = instantiate(ReconfigurationPlan(chosen, plan.inputs), scenario.strategy_catalog())
        except ReconfigError as exc:
            report = ExecutionReport(str(chosen), outcome="Failed", failed_step="instantiate", error=str(exc))
        else:
            report = execute(executable, container, check=check)
    container.run_until_idle(scenario.horizon)
    for call in sorted(container.calls.values(), key=lambda c: c.num):
        if call.status is CallStatus.BLOCKED:
            container.fail_blocked(call, "UnmappedBlockedCall")
    metrics = compute_metrics(container, plan.inputs.get(REPLACED) if plan else None,
                              report.strategy_outputs.get("newDeploymentId") if report else None)
    return RunResult(scenario, container, report, metrics, errors)


def compute_metrics(container: Container, old: str | None, new: str | None) -> Metrics:
    m = Metrics()
    for call in container.calls.values():
        m.totalCalls += 1
        if call.status is CallStatus.DONE:
            m.doneCalls += 1
        elif call.status is CallStatus.FAILED:
            m.failedCalls += 1
            m.failureReasons[call.reason] = m.failureReasons.get(call.reason, 0) + 1
        if call.was_blocked:
            m.blockedCalls += 1
        m.totalBlockedTicks += call.blocked_ticks
    released = [r.released_at for r in container.regions if r.released_at is not None]
    for session in container.sessions.values():
        m.totalBlockedTicks += session.lookup_wait
        if old is not None and session.home_deployment == old:
            m.sessionsOnOldModule += 1
        if new is not None and session.home_deployment == new:
            m.sessionsOnNewModule += 1
            if released and session.home_at is not None and session.home_at < min(released):
                m.sessionsOnNewBeforeRelease += 1
    for region in container.regions:
        if region.initiated_at is not None and region.quiescent_at is not None:
            m.quiescenceDurationTicks += region.quiescent_at - region.initiated_at
    m.failureReasons = dict(sorted(m.failureReasons.items()))
    return m


def session_blocked_ticks(container: Container, session_id: str) -> int:
    """Ticks the session spent waiting: blocked calls plus queued lookups."""
    session = container.session(session_id)
    return session.lookup_wait + sum(c.blocked_ticks for c in container.calls.values() if c.session_id == session_id)


def write_artifacts(result: RunResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.log").write_text(result.trace, encoding="utf-8")
    (out / "metrics.json").write_text(json.dumps(result.metrics.to_dict(), indent=2) + "\n", encoding="utf-8")
    if result.report is not None:
        (out / "report.json").write_text(json.dumps(result.report.to_dict(), indent=2) + "\n", encoding="utf-8")
        (out / "report.txt").write_text(result.report.render(), encoding="utf-8")


def compare_strategies(scenario: Scenario, strategies: Iterable[str], seed: int | None = None) -> list[tuple[str, str, Metrics]]:
    """One independent run per strategy; rows of (strategy, outcome, metrics)."""
    rows = []
    for name in strategies:
        result = run_scenario(scenario, strategy=name, seed=seed)
        outcome = result.report.outcome if result.report else "NoPlan"
        rows.append((name, outcome, result.metrics))
    return rows


COMPARE_COLUMNS = ("totalCalls", "failedCalls", "blockedCalls", "totalBlockedTicks", "quiescenceDurationTicks",
                   "sessionsOnOldModule", "sessionsOnNewModule", "sessionsOnNewBeforeRelease")


def render_comparison(rows: list[tuple[str, str, Metrics]]) -> str:
    header = ["strategy", "outcome", *COMPARE_COLUMNS]
    table = [header] + [[name, outcome, *(str(getattr(m, c)) for c in COMPARE_COLUMNS)] for name, outcome, m in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in table) + "\n"
