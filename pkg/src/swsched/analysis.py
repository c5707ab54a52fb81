"""Correlation analysis between tensors and loop variables, loop-variable
classification (size/num/comp), buffered-dimension frontier maintenance, and
the buffer-footprint arithmetic shared by the planner, orderer and inserter.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

from .ir import (
    AffineIndex,
    IndexExpansion,
    IterVar,
    LoopNest,
    SchedError,
    TensorDecl,
    expand_index,
)

log = logging.getLogger("swsched.analysis")

UP = "UP"
DOWN = "DOWN"

SIZE_TYPE = "size"
NUM_TYPE = "num"
COMP_TYPE = "comp"


class AnalysisError(SchedError):
    pass


# --------------------------------------------------------------------------- #
# tensor views
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class TensorView:
    """One tensor's access pattern seen through the current nest variables:
    the original per-dimension indices plus their affine expansions."""

    decl: TensorDecl
    indices: tuple[AffineIndex, ...]
    exps: tuple[IndexExpansion, ...]

    @property
    def name(self) -> str:
        return self.decl.name

    @property
    def rank(self) -> int:
        return self.decl.rank

    def dim_vars(self, d: int) -> set[IterVar]:
        return self.exps[d].vars()

    def all_vars(self) -> set[IterVar]:
        out: set[IterVar] = set()
        for e in self.exps:
            out |= e.vars()
        return out


def build_views(nest: LoopNest, names: Optional[Iterable[str]] = None) -> dict[str, TensorView]:
    """Build per-tensor views for every access of the nest body.

    A tensor accessed several times must use identical indices everywhere
    (alias analysis between differing access patterns is out of scope).
    """
    wanted = set(names) if names is not None else None
    views: dict[str, TensorView] = {}
    for acc in nest.body.all_accesses():
        if wanted is not None and acc.tensor.name not in wanted:
            continue
        prev = views.get(acc.tensor.name)
        if prev is not None:
            if prev.indices != acc.indices:
                raise AnalysisError(
                    f"tensor {acc.tensor.name} accessed with differing index patterns")
            continue
        exps = tuple(expand_index(index, nest) for index in acc.indices)
        views[acc.tensor.name] = TensorView(acc.tensor, acc.indices, exps)
    return views


def analyze_correlation(universe: Iterable[IterVar],
                        views: Mapping[str, TensorView]) -> dict[str, set[IterVar]]:
    """Per tensor, the subset of ``universe`` occurring in any of its indices."""
    uni = {id(v): v for v in universe}
    out: dict[str, set[IterVar]] = {}
    for name, view in views.items():
        out[name] = {uni[id(v)] for v in view.all_vars() if id(v) in uni}
    return out


# --------------------------------------------------------------------------- #
# footprints
# --------------------------------------------------------------------------- #

def buffered_extent(index: Union[AffineIndex, IndexExpansion],
                    buffer: Mapping[IterVar, int]) -> int:
    """Contiguous span (in elements) covered by one tile along this index:
    ``sum(coeff * (Buffer(v) - 1)) + 1``.  Vars absent from the map count as
    Buffer = 1; the constant offset shifts the tile but not its span.
    """
    if isinstance(index, IndexExpansion):
        for v in index.nonlinear:
            if buffer.get(v, 1) != 1:
                raise AnalysisError(
                    f"var {v.name} feeds a non-affine index and cannot be tiled")
        items = index.coeffs.items()
    else:
        items = index.terms
    return sum(c * (buffer.get(v, 1) - 1) for v, c in items) + 1


def tile_spans(view: TensorView, buffer: Mapping[IterVar, int]) -> tuple[int, ...]:
    return tuple(buffered_extent(e, buffer) for e in view.exps)


def ldm_usage(views: Mapping[str, TensorView], buffer: Mapping[IterVar, int],
              frontiers: Optional[Mapping[str, int]] = None) -> int:
    """Total scratchpad bytes implied by a buffer assignment: per tensor, the
    element size times the product of per-dimension tile spans.  (Frontiers are
    accepted for interface parity but the spans already encode them: any
    dimension whose vars all sit at Buffer=1 contributes its unit span.)"""
    total = 0
    for view in views.values():
        elems = 1
        for e in view.exps:
            elems *= buffered_extent(e, buffer)
        total += elems * view.decl.elem.bytes
    return total


def affected_tensors(var: IterVar, views: Mapping[str, TensorView]) -> int:
    return sum(1 for view in views.values() if var in view.all_vars())


def marginal_cost(var: IterVar, views: Mapping[str, TensorView],
                  buffer: Mapping[IterVar, int]) -> int:
    """Bytes added per unit growth of Buffer(var) at the current assignment:
    for every dimension the var appears in, its coefficient times the product
    of the other dimensions' current spans."""
    cost = 0
    for view in views.values():
        spans = tile_spans(view, buffer)
        for d, e in enumerate(view.exps):
            coeff = e.coeffs.get(var, 0)
            if coeff == 0:
                continue
            others = 1
            for d2, s in enumerate(spans):
                if d2 != d:
                    others *= s
            cost += view.decl.elem.bytes * coeff * others
    return cost


# --------------------------------------------------------------------------- #
# classification state
# --------------------------------------------------------------------------- #

@dataclass
class VarClass:
    sizevars: list[IterVar] = field(default_factory=list)
    numvars: list[IterVar] = field(default_factory=list)
    compvars: list[IterVar] = field(default_factory=list)

    def all(self) -> list[IterVar]:
        return self.sizevars + self.numvars + self.compvars


@dataclass
class SizingState:
    """Mutable companion of the planner: the ordered sizing universe plus each
    tensor's buffered-dimension frontier (curBufDim)."""

    order: tuple[IterVar, ...]
    removed: set[int] = field(default_factory=set)
    frontiers: dict[str, int] = field(default_factory=dict)

    @classmethod
    def fresh(cls, universe: Sequence[IterVar], views: Mapping[str, TensorView]) -> "SizingState":
        return cls(order=tuple(universe), frontiers={name: 0 for name in views})

    def universe(self) -> list[IterVar]:
        return [v for v in self.order if id(v) not in self.removed]

    def contains(self, var: IterVar) -> bool:
        return any(v is var for v in self.order) and id(var) not in self.removed

    def copy(self) -> "SizingState":
        return SizingState(self.order, set(self.removed), dict(self.frontiers))


def _status(var: IterVar, views: Mapping[str, TensorView],
            frontiers: Mapping[str, int]) -> str:
    size_flag = False
    num_flag = False
    below_flag = False
    for name, view in views.items():
        cur = frontiers.get(name, 0)
        for d in range(view.rank):
            if var not in view.dim_vars(d):
                continue
            if d == cur:
                size_flag = True
            elif d > cur:
                num_flag = True
            else:
                below_flag = True
    if size_flag and num_flag:
        return COMP_TYPE
    if size_flag:
        return SIZE_TYPE
    if num_flag:
        return NUM_TYPE
    if below_flag:
        return "absorbed"
    return "uncorrelated"


def var_type(var: IterVar, views: Mapping[str, TensorView],
             frontiers: Mapping[str, int]) -> str:
    """Classify one var against the buffered-dimension frontiers.

    Raises AnalysisError when the var is correlated with no tensor (a
    classification-input bug) or indexes only already-buffered dimensions
    (which classify() absorbs before ever calling here).
    """
    status = _status(var, views, frontiers)
    if status == "uncorrelated":
        raise AnalysisError(f"var {var.name} is correlated with no tensor in the set")
    if status == "absorbed":
        raise AnalysisError(
            f"var {var.name} indexes only dimensions inside the buffered frontier")
    return status


def classify(state: SizingState, views: Mapping[str, TensorView]) -> VarClass:
    """Partition the live sizing universe into size/num/comp vars.

    Vars whose every occurrence lies inside some tensor's buffered frontier are
    fully absorbed: they are removed from the universe (UPDATE-UP semantics)
    and do not appear in the result.
    """
    while True:
        absorbed = None
        for var in state.universe():
            if _status(var, views, state.frontiers) == "absorbed":
                absorbed = var
                break
        if absorbed is None:
            break
        log.debug("classify: var %s fully absorbed by buffered frontiers", absorbed.name)
        update(state, views, absorbed, UP)

    out = VarClass()
    for var in state.universe():
        kind = var_type(var, views, state.frontiers)
        if kind == SIZE_TYPE:
            out.sizevars.append(var)
        elif kind == NUM_TYPE:
            out.numvars.append(var)
        else:
            out.compvars.append(var)
    return out


def update(state: SizingState, views: Mapping[str, TensorView], var: IterVar,
           direction: str) -> None:
    """Move one var out of (UP) or back into (DOWN) the sizing universe and
    adjust every tensor's buffered-dimension frontier accordingly."""
    if direction == UP:
        state.removed.add(id(var))
        live = set(map(id, state.universe()))
        for name, view in views.items():
            cur = state.frontiers.get(name, 0)
            while cur < view.rank and not any(
                    id(v) in live for v in view.dim_vars(cur)):
                cur += 1
            state.frontiers[name] = cur
    elif direction == DOWN:
        state.removed.discard(id(var))
        for name, view in views.items():
            cur = state.frontiers.get(name, 0)
            for d in range(min(cur, view.rank)):
                if var in view.dim_vars(d):
                    state.frontiers[name] = d
                    break
    else:
        raise AnalysisError(f"bad update direction {direction!r}")
