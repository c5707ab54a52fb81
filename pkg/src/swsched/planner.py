"""Scratchpad buffer planning.

Assigns every loop variable a tile extent Buffer(var) such that the per-PE
scratchpad footprint of all buffered tensors stays within the machine budget:

1. classify vars, order sizevars by marginal byte cost and compvars by the
   number of affected tensors;
2. initialize each sizevar/compvar to min(range, init_chunk), absorbing fully
   ranged vars into the buffered frontier; on overflow halve the current var,
   backtracking to previously initialized vars when one bottoms out at 1;
3. greedily double vars cyclically in sorted order until the first overflow,
   which is reverted and ends the search.

The search is approximate by design: it never revisits a rejected doubling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .analysis import (
    DOWN,
    SizingState,
    TensorView,
    UP,
    affected_tensors,
    classify,
    ldm_usage,
    marginal_cost,
    update,
)
from .ir import IterVar
from .machine import MachineConfig

log = logging.getLogger("swsched.planner")


class InfeasiblePlanError(Exception):
    """Minimal tile footprint already exceeds the scratchpad budget."""


@dataclass
class BufferPlan:
    buffer: dict[IterVar, int]
    frontiers: dict[str, int]
    usage_bytes: int
    capacity_bytes: int
    trace: list[dict] = field(default_factory=list)

    def by_name(self) -> dict[str, int]:
        return {v.name: b for v, b in self.buffer.items()}

    def __getitem__(self, var: IterVar) -> int:
        return self.buffer.get(var, 1)


def plan_ldm(itervars: Sequence[IterVar], views: Mapping[str, TensorView],
             machine: MachineConfig,
             extent_limits: Optional[Mapping[IterVar, int]] = None) -> BufferPlan:
    """Compute per-variable buffer extents for one kernel.

    ``extent_limits`` caps the usable range of individual vars (a partitioned
    var plans against its per-PE chunk, not its full extent).
    """
    limits = dict(extent_limits or {})

    def rng(v: IterVar) -> int:
        return min(limits.get(v, v.extent), v.extent)

    buffer: dict[IterVar, int] = {v: 1 for v in itervars}

    def usage() -> int:
        return ldm_usage(views, buffer)

    budget = machine.budget_bytes
    trace: list[dict] = []

    def emit(step: str, var: Optional[IterVar], usage_bytes: int, decision: str) -> None:
        trace.append({
            "step": step,
            "var": var.name if var is not None else None,
            "buffer": {v.name: b for v, b in buffer.items()},
            "usage_bytes": usage_bytes,
            "decision": decision,
        })

    if usage() > budget:
        raise InfeasiblePlanError(
            f"minimal tile footprint {usage()}B exceeds scratchpad budget {budget}B")

    # sizing universe: vars correlated with at least one buffered tensor whose
    # every occurrence is affine (non-affine fused vars stay at Buffer=1)
    universe = []
    for v in itervars:
        occurs = False
        sizable = True
        for view in views.values():
            for e in view.exps:
                if v in e.coeffs:
                    occurs = True
                if v in e.nonlinear:
                    occurs = True
                    sizable = False
        if occurs and sizable:
            universe.append(v)
        elif occurs:
            log.debug("planner: %s feeds a non-affine index; kept at Buffer=1", v.name)
        else:
            log.debug("planner: %s uncorrelated with buffered tensors; ordering-only", v.name)

    state = SizingState.fresh(universe, views)

    def queue_order(cls) -> list[IterVar]:
        sizeq = sorted(cls.sizevars, key=lambda v: marginal_cost(v, views, buffer))
        compq = sorted(cls.compvars, key=lambda v: affected_tensors(v, views))
        return sizeq + compq

    # ---- phase 1: initialize buffer sizes ---------------------------------- #
    history: list[IterVar] = []
    done: set[int] = set()

    def shrink_to_fit() -> None:
        k = len(history) - 1
        while usage() > budget:
            if k < 0:
                raise InfeasiblePlanError(
                    f"cannot fit kernel below scratchpad budget {budget}B "
                    f"(stuck at {usage()}B with all initialized vars at Buffer=1)")
            w = history[k]
            if buffer[w] == rng(w) and not state.contains(w):
                update(state, views, w, DOWN)
            if buffer[w] <= 1:
                k -= 1
                continue
            buffer[w] //= 2
            emit("shrink", w, usage(), f"halved Buffer({w.name}) to {buffer[w]}")

    while True:
        cls = classify(state, views)
        queue = [v for v in queue_order(cls) if id(v) not in done]
        if not queue:
            break
        for var in queue:
            r = rng(var)
            buffer[var] = min(machine.init_chunk, r)
            if buffer[var] == r:
                update(state, views, var, UP)
            emit("init", var, usage(), f"Buffer({var.name})={buffer[var]}")
            history.append(var)
            done.add(id(var))
            shrink_to_fit()

    # ---- phase 2: greedy expansion ----------------------------------------- #
    expanding = True
    while expanding:
        cls = classify(state, views)
        cands = [v for v in queue_order(cls) if buffer[v] < rng(v)]
        if not cands:
            break
        progressed = False
        for var in cands:
            old = buffer[var]
            buffer[var] = min(old * 2, rng(var))
            if usage() > budget:
                over = usage()
                buffer[var] = old
                emit("reject", var, over,
                     f"doubling Buffer({var.name}) would need {over}B > {budget}B")
                expanding = False
                break
            emit("expand", var, usage(), f"Buffer({var.name})={buffer[var]}")
            progressed = True
            if buffer[var] == rng(var):
                update(state, views, var, UP)
                break  # re-classify: frontier moved
        else:
            if not progressed:
                break
    plan = BufferPlan(
        buffer=buffer,
        frontiers=dict(state.frontiers),
        usage_bytes=usage(),
        capacity_bytes=budget,
        trace=trace,
    )
    log.info("planner: usage %dB / %dB, buffer %s", plan.usage_bytes, budget, plan.by_name())
    return plan
