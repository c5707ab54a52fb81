"""Loop re-ordering.

Buffered (tile) vars always move innermost; the remaining outer loops are
ordered greedily, choosing at each step the candidate whose best completion
minimizes total DMA transfer executions.

Cost model (single compute element, full trip counts): a tensor's transfer is
inserted at the shallowest level at which every outer var it depends on is
fixed, and executes once per iteration of every loop enclosing that level.  A
pure-output tensor costs one write per insertion-point iteration, doubled
(read + write) when a reduction loop encloses the insertion point, since the
tile then holds partial sums that must round-trip through memory.  The unit is
transfer executions, not bytes: it mirrors an instruction-count objective, so
wide and narrow descriptors weigh the same.

Because each greedy step evaluates candidates by exhaustive completion (up to
8 undecided loops), the chosen order attains the exhaustive minimum.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

log = logging.getLogger("swsched.orderer")

EXHAUSTIVE_LIMIT = 8


@dataclass(frozen=True)
class OuterVar:
    """One undecided outer loop: its tile trip count and reduction flag."""
    name: str
    trips: int
    reduction: bool = False


@dataclass(frozen=True)
class TensorTraffic:
    """Ordering-relevant view of one tensor's transfers."""
    name: str
    deps: frozenset[str]  # outer vars that must be fixed before the transfer
    written: bool = False


@dataclass
class OrderCost:
    order: list[str]
    per_tensor: dict[str, dict] = field(default_factory=dict)
    total_dma_execs: int = 0


@dataclass
class OrderReport:
    """Greedy trace plus the final cost breakdown (for --explain-order)."""
    steps: list[dict] = field(default_factory=list)
    final: Optional[OrderCost] = None
    exhaustive: Optional[list[tuple[tuple[str, ...], int]]] = None


def insertion_level(order: Sequence[OuterVar], deps: frozenset[str]) -> int:
    """Loop depth at which all deps are fixed: 0 = preamble, i = inside loop i."""
    if not deps:
        return 0
    level = 0
    seen = set()
    for i, v in enumerate(order):
        seen.add(v.name)
        if deps <= seen:
            level = i + 1
            break
    else:
        missing = deps - seen
        raise ValueError(f"order is missing deps {sorted(missing)}")
    return level


def order_cost(order: Sequence[OuterVar], tensors: Iterable[TensorTraffic]) -> OrderCost:
    cost = OrderCost(order=[v.name for v in order])
    total = 0
    for t in tensors:
        level = insertion_level(order, t.deps)
        visits = 1
        for v in order[:level]:
            visits *= v.trips
        if t.written:
            accumulate = any(v.reduction for v in order[:level])
            execs = visits * (2 if accumulate else 1)
        else:
            accumulate = False
            execs = visits
        cost.per_tensor[t.name] = {
            "level": level, "visits": visits, "execs": execs,
            "written": t.written, "accumulate": accumulate,
        }
        total += execs
    cost.total_dma_execs = total
    return cost


def count_dma(prefix: Sequence[OuterVar], candidate: OuterVar,
              remaining: Sequence[OuterVar],
              tensors: Sequence[TensorTraffic]) -> int:
    """Minimum total DMA executions over all completions of prefix+candidate.

    With more than EXHAUSTIVE_LIMIT undecided loops the exhaustive completion
    is refused and a single program-order completion estimates the cost.
    """
    rest = [v for v in remaining if v.name != candidate.name]
    if len(rest) > EXHAUSTIVE_LIMIT:
        log.warning(
            "count_dma: %d undecided outer loops exceed the exhaustive limit (%d); "
            "falling back to a greedy-only estimate", len(rest), EXHAUSTIVE_LIMIT)
        return order_cost(list(prefix) + [candidate] + rest, tensors).total_dma_execs
    best = None
    base = list(prefix) + [candidate]
    for perm in itertools.permutations(rest):
        total = order_cost(base + list(perm), tensors).total_dma_execs
        if best is None or total < best:
            best = total
    return best if best is not None else order_cost(base, tensors).total_dma_execs


def reorder_loops(outer: Sequence[OuterVar], tensors: Sequence[TensorTraffic],
                  buffervars: Sequence[str] = (),
                  explain: bool = False) -> tuple[list[str], OrderReport]:
    """Choose the outer loop order greedily by minimal count_dma, ties broken
    by original program order; buffered vars follow innermost in their original
    relative order.  Returns (full order names, report)."""
    report = OrderReport()
    original_pos = {v.name: i for i, v in enumerate(outer)}
    chosen: list[OuterVar] = []
    remaining = list(outer)
    while remaining:
        costs = {v.name: count_dma(chosen, v, remaining, tensors) for v in remaining}
        best = min(remaining, key=lambda v: (costs[v.name], original_pos[v.name]))
        report.steps.append({
            "prefix": [v.name for v in chosen],
            "candidates": costs,
            "chosen": best.name,
        })
        chosen.append(best)
        remaining = [v for v in remaining if v.name != best.name]
    report.final = order_cost(chosen, tensors)
    if explain and len(outer) <= 6:
        report.exhaustive = all_permutation_costs(outer, tensors)
    return [v.name for v in chosen] + list(buffervars), report


def all_permutation_costs(outer: Sequence[OuterVar],
                          tensors: Sequence[TensorTraffic]) -> list[tuple[tuple[str, ...], int]]:
    out = []
    for perm in itertools.permutations(outer):
        out.append((tuple(v.name for v in perm),
                    order_cost(list(perm), tensors).total_dma_execs))
    out.sort(key=lambda item: (item[1], item[0]))
    return out
