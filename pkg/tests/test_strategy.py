import itertools
import random
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from reconfig import CallSpec, ReconfigurationPlan, StrategyKind, builtin, execute, instantiate, validate
from reconfig.errors import InvalidStrategy, KindMismatch, MissingInput
from reconfig.strategy import REPLACED, REPLACING, ExecutorBinding, ParamMapping, Strategy, strategy_edges
from reconfig.steps import PortKind, PortSpec

from builders import shop
from mutations import disconnect_input, feed_backwards, mutated_strategies, swap_dependent
from oracles import strategy_is_valid, topological_orders

ORDERS = {"F": "ailo", "NI": "ailmo", "I": "abcdefghijklmno", "INI": "abcildefjkmno"}
PLAN = {REPLACED: "order1", REPLACING: "OrderV2"}


@pytest.mark.parametrize("kind", ORDERS)
def test_builtins_are_valid_with_published_orders(kind):
    s = builtin(kind)
    assert "".join(s.order) == ORDERS[kind]
    assert validate(s).valid and strategy_is_valid(s)


def test_swapped_dependency_is_an_order_conflict():
    s = builtin("I")
    steps = list(s.steps)
    steps[0], steps[8] = steps[8], steps[0]  # i before a
    result = validate(replace(s, steps=tuple(steps)))
    assert ("a", "i") in result.order_conflicts and not result.valid


def test_dropped_mapping_reports_unconnected_port():
    s = builtin("F")
    mappings = tuple(m for m in s.mappings if m.target != "i.deployment")
    result = validate(replace(s, mappings=mappings))
    assert result.unconnected == ["i.deployment"]


def test_backwards_feed_is_a_cycle():
    result = validate(feed_backwards(builtin("I"), random.Random(0)))
    assert result.cycle and not result.valid


def test_kind_mismatch_and_unknown_ports():
    s = builtin("NI")
    bad = replace(s, mappings=s.mappings + (ParamMapping("$replacedDeploymentId", "m.exclude"),))
    assert "does not fit" in validate(bad).render()
    ghost = replace(s, mappings=s.mappings + (ParamMapping("a.nothing", "l.new"),))
    assert not validate(ghost).valid
    wrong = replace(s, steps=s.steps + (ExecutorBinding("c", "default.d"),))
    assert "implements step d" in validate(wrong).render()


@pytest.mark.parametrize("mutate", [swap_dependent, disconnect_input])
@pytest.mark.parametrize("kind", ORDERS)
def test_mutations_agree_with_oracle(kind, mutate):
    for seed in range(5):
        mutant = mutate(builtin(kind), random.Random(seed))
        assert not validate(mutant).valid
        assert not strategy_is_valid(mutant)


@settings(max_examples=60, deadline=None)
@given(st.permutations(list("abcildefjkmno")))
def test_validator_matches_enumeration_on_any_order(order):
    base = builtin("INI")
    steps = tuple(base.binding(s) for s in order)
    candidate = replace(base, steps=steps)
    assert validate(candidate).valid == strategy_is_valid(candidate)


def test_enumeration_oracle_counts():
    assert list(topological_orders(["x", "y"], {("x", "y")})) == [("x", "y")]
    assert len(list(topological_orders(list("abc"), set()))) == 6
    assert list(topological_orders(["x", "y"], {("x", "y"), ("y", "x")})) == []


def test_mutated_strategies_are_distinct_and_invalid():
    mutants = mutated_strategies(20, seed=1)
    assert len({m.name for m in mutants}) == 20
    assert all(not validate(m).valid for m in mutants)


def test_instantiate_checks_inputs():
    with pytest.raises(InvalidStrategy):
        instantiate(ReconfigurationPlan("Nope", PLAN))
    with pytest.raises(MissingInput):
        instantiate(ReconfigurationPlan("I", {REPLACED: "order1"}))
    with pytest.raises(KindMismatch):
        instantiate(ReconfigurationPlan("I", {REPLACED: 7, REPLACING: "OrderV2"}))
    with pytest.raises(KindMismatch):
        instantiate(ReconfigurationPlan("I", {**PLAN, "extra": 1}))
    assert instantiate(ReconfigurationPlan("I/NI", PLAN)).strategy.kind is StrategyKind.INI
    broken = disconnect_input(builtin("F"), random.Random(0))
    with pytest.raises(InvalidStrategy):
        instantiate(ReconfigurationPlan(broken, PLAN))


def step_begins(container):
    return [e.detail.split()[0][5:] for e in container.trace if e.kind == "STEP" and "status=begin" in e.detail]


@pytest.mark.parametrize("kind", ORDERS)
def test_execute_runs_steps_in_declared_order(kind):
    c = shop()
    s = c.open_session("alice", "order1", "Cart", "ICart", "cart")
    c.invoke(s.id, "cart", CallSpec("add", 3))
    c.schedule(6, lambda: c.close_session(s.id))
    report = execute(instantiate(ReconfigurationPlan(kind, PLAN)), c)
    assert report.completed, report.render()
    assert "".join(step_begins(c)) == ORDERS[kind] == "".join(report.executed_order)
    new = report.strategy_outputs["newDeploymentId"]
    assert c.registry.deployment(new).state.value == "Started"
    assert c.registry.deployment("order1").state.value == "Undeployed"


def test_failure_is_reported_with_step():
    c = shop()
    s = c.open_session("alice", "order1", "Cart", "ICart", "cart")
    report = execute(instantiate(ReconfigurationPlan("NI", PLAN)), c)
    # the stateful session stays on the old module and never closes, so draining the old module cannot finish
    assert report.outcome == "Failed" and report.failed_step == "o"
    assert "SimulationExhausted" in report.error
    assert report.executed_order[-1] == "o"
    assert s.is_open


def test_compat_violation_stops_before_first_step():
    c = shop()
    c.registry.register(builtin_free_module())
    c.open_session("alice", "order1", "Cart", "ICart", "cart")
    report = execute(instantiate(ReconfigurationPlan("I", {REPLACED: "order1", REPLACING: "Empty"})), c)
    assert report.failed_step == "compat" and report.per_step == []


def builtin_free_module():
    from reconfig import BeanKind, BeanType, ModuleType
    return ModuleType("Empty", "1", (BeanType("Nothing", BeanKind.STATELESS),))


def test_custom_strategy_with_options_runs():
    custom = Strategy(
        "Swap",
        StrategyKind.CUSTOM,
        steps=(ExecutorBinding("a"), ExecutorBinding("i"), ExecutorBinding("l"),
               ExecutorBinding("m", options={"mode": "NonInterrupt"})),
        mappings=(ParamMapping("$target", "a.module_type"), ParamMapping("$old", "a.replaced"),
                  ParamMapping("a.deployment", "i.deployment"), ParamMapping("$old", "l.old"),
                  ParamMapping("a.deployment", "l.new"), ParamMapping("$old", "m.old"),
                  ParamMapping("a.deployment", "m.new"), ParamMapping("m.refs", "$moved")),
        inputs=(PortSpec("old", "in", PortKind.DEPLOYMENT_ID), PortSpec("target", "in", PortKind.MODULE_TYPE_ID)),
        outputs=(PortSpec("moved", "out", PortKind.REF_MAP),),
    )
    assert validate(custom).valid and strategy_is_valid(custom)
    c = shop()
    c.open_session("bob", "order1", "Pricing", "IPricing", "price")
    report = execute(instantiate(ReconfigurationPlan(custom, {"old": "order1", "target": "OrderV2"})), c)
    assert report.completed and len(report.strategy_outputs["moved"]) == 1
    # the old module stays up: o is not part of this strategy
    assert c.registry.deployment("order1").state.value == "Started"


def test_strategy_edges_include_mapping_edges():
    s = builtin("NI")
    assert ("a", "l") in strategy_edges(s) and ("i", "l") in strategy_edges(s)
    assert not any(itertools.filterfalse(lambda e: e[0] in s.order and e[1] in s.order, strategy_edges(s)))
