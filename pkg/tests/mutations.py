"""Seeded mutations that break a built-in strategy in one specific way."""

from __future__ import annotations

import random
from dataclasses import replace

from reconfig.steps import EXECUTORS, In, Out, PortKind, get_executor, register_executor
from reconfig.strategy import ExecutorBinding, ParamMapping, Strategy, builtin, strategy_edges

CYCLIC_B = "mutation.b"

if CYCLIC_B not in EXECUTORS:
    # step b that additionally waits for a tick produced later in the run
    register_executor(
        CYCLIC_B, "b",
        [In("members", PortKind.DEPLOYMENT_ID), In("after", PortKind.TICK), Out("region", PortKind.REGION_ID)],
        lambda ctx, i: get_executor("default.b").fn(ctx, i),
    )


def swap_dependent(strategy: Strategy, rng: random.Random) -> Strategy:
    """Reverse one dependency edge by swapping the two steps in the order."""
    u, v = rng.choice(sorted(strategy_edges(strategy)))
    steps = list(strategy.steps)
    iu, iv = strategy.order.index(u), strategy.order.index(v)
    steps[iu], steps[iv] = steps[iv], steps[iu]
    return replace(strategy, steps=tuple(steps), name=f"{strategy.name}-swap-{u}{v}")


def disconnect_input(strategy: Strategy, rng: random.Random) -> Strategy:
    """Drop the mapping that feeds one required step input."""
    required = [
        m for m in strategy.mappings
        if not m.target.startswith("$")
        and not get_executor(strategy.binding(m.target.split(".")[0]).implementation).port(m.target.split(".")[1]).optional
    ]
    victim = rng.choice(required)
    return replace(strategy, mappings=tuple(m for m in strategy.mappings if m != victim),
                   name=f"{strategy.name}-drop-{victim.target}")


def feed_backwards(strategy: Strategy, rng: random.Random) -> Strategy:
    """Make step b consume e's output: a data edge against the dependency edges."""
    steps = tuple(ExecutorBinding("b", CYCLIC_B) if b.step == "b" else b for b in strategy.steps)
    return replace(strategy, steps=steps, mappings=strategy.mappings + (ParamMapping("e.quiescent_at", "b.after"),),
                   name=f"{strategy.name}-cycle")


def mutated_strategies(count: int, seed: int = 0) -> list[Strategy]:
    """``count`` distinct mutants of the built-ins, reproducible from ``seed``."""
    rng = random.Random(seed)
    out: dict[str, Strategy] = {}
    while len(out) < count:
        base = builtin(rng.choice(["F", "NI", "I", "INI"]))
        kinds = [swap_dependent, disconnect_input]
        if {"b", "e"} <= set(base.order):
            kinds.append(feed_backwards)
        mutant = rng.choice(kinds)(base, rng)
        out.setdefault(mutant.name, mutant)
    return list(out.values())
