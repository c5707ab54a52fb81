"""Automatic DMA insertion and strided-descriptor generation.

Each buffered tensor's transfer is placed at the shallowest loop level where
every outer var its indices depend on is fixed.  The tile region moved per
visit is described by per-dimension (base, span) pairs; descriptor generation
first emits one strided descriptor per 2-D slice of the tile, then a coalescing
pass merges descriptors whose memory and scratchpad footprints are contiguous.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .analysis import TensorView, build_views
from .ir import IterVar, LoopNest, REDUCTION, SchedError, EPILOGUE_NONE
from .plan import DmaOp, KernelPlan

log = logging.getLogger("swsched.dma")


class ScheduleInconsistency(SchedError):
    """A buffered (tile) var appeared as an outer loop var."""


class EpilogueUnderReduction(SchedError):
    """The chosen order leaves a reduction loop enclosing the epilogue'd
    output transfer; the caller must sink the reduction loops and retry."""


# --------------------------------------------------------------------------- #
# tile geometry
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class DimGeom:
    span_full: int
    extent: int
    pitch: int


@dataclass
class TensorGeometry:
    """Per-dimension geometry of one tensor's tile plus the hooks needed to
    resolve concrete bases and spans at a visit."""

    tensor: str
    elem_bytes: int
    dims: tuple[DimGeom, ...]
    view: TensorView

    def bases(self, root_env: Mapping[IterVar, int]) -> tuple[int, ...]:
        """Per-dim element offset of the tile: indices evaluated at the visit's
        base values (tile offsets zero)."""
        return tuple(index.evaluate(root_env) for index in self.view.indices)

    def spans(self, tile_len: Mapping[IterVar, int]) -> tuple[int, ...]:
        """Per-dim runtime spans given each var's in-visit tile length."""
        out = []
        for e in self.view.exps:
            span = 1
            for v, c in e.coeffs.items():
                span += c * (tile_len.get(v, 1) - 1)
            out.append(span)
        return tuple(out)


def tile_geometry(view: TensorView, buffer: Mapping[IterVar, int]) -> TensorGeometry:
    """Full-size tile geometry of one tensor under a buffer assignment."""
    decl = view.decl
    pitches = decl.pitches()
    dims = []
    for d, e in enumerate(view.exps):
        span = 1
        for v, c in e.coeffs.items():
            span += c * (buffer.get(v, 1) - 1)
        for v in e.nonlinear:
            if buffer.get(v, 1) != 1:
                raise SchedError(
                    f"{decl.name} dim {d}: var {v.name} feeds a non-affine index "
                    "and cannot be tiled")
        dims.append(DimGeom(span_full=span, extent=decl.shape[d], pitch=pitches[d]))
    return TensorGeometry(decl.name, decl.elem.bytes, tuple(dims), view)


# --------------------------------------------------------------------------- #
# strided transfers
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class Xfer:
    """One strided descriptor execution, in elements.  The scratchpad side is
    contiguous: block i lands at scr_off + i*block."""
    mem_off: int
    scr_off: int
    block: int
    stride: int
    count: int

    @property
    def elems(self) -> int:
        return self.block * self.count


def naive_xfers(geom: TensorGeometry, bases: Sequence[int],
                spans: Sequence[int]) -> list[Xfer]:
    """One strided descriptor per 2-D slice of the tile, no merging."""
    dims = geom.dims
    mem_base = sum(b * d.pitch for b, d in zip(bases, dims))
    # scratch pitches follow the runtime spans so remainder tiles stay dense
    scr_pitch = []
    p = 1
    for s in spans:
        scr_pitch.append(p)
        p *= s
    block = spans[0]
    count = spans[1] if len(dims) > 1 else 1
    stride = dims[1].pitch if len(dims) > 1 else block
    out = []
    upper = [range(s) for s in spans[2:]]
    for combo in itertools.product(*upper):
        mem = mem_base + sum(l * dims[2 + i].pitch for i, l in enumerate(combo))
        scr = sum(l * scr_pitch[2 + i] for i, l in enumerate(combo))
        out.append(Xfer(mem, scr, block, stride, count))
    return out


def coalesce(xfers: Sequence[Xfer]) -> list[Xfer]:
    """Merge descriptors whose memory footprint and scratchpad layout are both
    contiguous; idempotent."""
    cur = list(xfers)
    while True:
        # rule 1: contiguous rows inside one descriptor fold into the block
        folded = []
        for x in cur:
            if x.count > 1 and x.stride == x.block:
                folded.append(Xfer(x.mem_off, x.scr_off, x.block * x.count,
                                   x.block * x.count, 1))
            else:
                folded.append(x)
        # rule 2: single-block descriptors at a uniform memory stride and
        # adjacent scratch offsets merge into one strided descriptor
        folded.sort(key=lambda x: x.scr_off)
        merged: list[Xfer] = []
        for x in folded:
            prev = merged[-1] if merged else None
            if (prev is not None and prev.block == x.block and x.count == 1
                    and x.scr_off == prev.scr_off + prev.count * prev.block):
                if prev.count == 1 and x.mem_off > prev.mem_off:
                    merged[-1] = Xfer(prev.mem_off, prev.scr_off, prev.block,
                                      x.mem_off - prev.mem_off, 2)
                    continue
                if prev.count > 1 and x.mem_off == prev.mem_off + prev.count * prev.stride:
                    merged[-1] = Xfer(prev.mem_off, prev.scr_off, prev.block,
                                      prev.stride, prev.count + 1)
                    continue
            merged.append(x)
        if merged == cur:
            return merged
        cur = merged


def build_xfers(geom: TensorGeometry, bases: Sequence[int],
                spans: Sequence[int]) -> list[Xfer]:
    return coalesce(naive_xfers(geom, bases, spans))


# --------------------------------------------------------------------------- #
# insertion
# --------------------------------------------------------------------------- #

def insert_dma(nest: LoopNest, order: Sequence[IterVar], pure_tile_vars: Sequence[IterVar],
               views: Mapping[str, TensorView], output: str,
               unbuffered: frozenset = frozenset()) -> list[DmaOp]:
    """Place every buffered tensor's transfers at the shallowest legal level.

    ``order`` is the final outer loop order; ``pure_tile_vars`` are buffered
    vars with no tile-count loop (they live entirely inside a visit, so seeing
    one as an outer loop is a schedule inconsistency).  Read tensors receive a
    get; the output receives either init+put (the whole reduction completes
    while the tile is resident) or get+put with accumulate semantics when a
    reduction loop encloses the insertion level.
    """
    tile_ids = set(map(id, pure_tile_vars))
    for v in order:
        if id(v) in tile_ids:
            raise ScheduleInconsistency(
                f"buffered var {v.name} appears as an outer loop var")

    body = nest.body
    ops: list[DmaOp] = []
    for name, view in views.items():
        if name in unbuffered:
            continue
        deps = [v for v in order if v in view.all_vars()]
        level = 0
        if deps:
            level = max(i for i, v in enumerate(order) if v in deps) + 1
        if name == output:
            accumulate = any(v.kind == REDUCTION for v in order[:level])
            wants_epilogue = body.epilogue != EPILOGUE_NONE
            if accumulate and wants_epilogue:
                raise EpilogueUnderReduction(
                    f"output {name}: reduction loop encloses the put at level {level}")
            if accumulate:
                ops.append(DmaOp(name, "get", level, accumulate=True))
                ops.append(DmaOp(name, "put", level, accumulate=True))
            else:
                ops.append(DmaOp(name, "init", level))
                ops.append(DmaOp(name, "put", level, apply_epilogue=wants_epilogue))
        else:
            ops.append(DmaOp(name, "get", level))
    ops.sort(key=lambda op: (op.level, op.kind != "get", op.tensor))
    return ops


# --------------------------------------------------------------------------- #
# runtime helpers shared by the simulator, static counter and code generator
# --------------------------------------------------------------------------- #

def kernel_geometries(kernel: KernelPlan) -> dict[str, TensorGeometry]:
    views = build_views(kernel.nest)
    buffer = {kernel.var(n): b for n, b in kernel.buffer.items()}
    return {
        name: tile_geometry(view, buffer)
        for name, view in views.items() if name not in kernel.unbuffered
    }


def pe_limit(kernel: KernelPlan, var: IterVar, pe: int) -> int:
    if kernel.is_partition_var(var.name):
        return kernel.partition.pe_bounds(pe)[1]
    return kernel.eff_extent.get(var.name, var.extent)


def pe_begin(kernel: KernelPlan, var: IterVar, pe: int) -> int:
    if kernel.is_partition_var(var.name):
        return kernel.partition.pe_bounds(pe)[0]
    return 0


def visit_tile_lengths(kernel: KernelPlan, pe: int,
                       base_env: Mapping[IterVar, int]) -> dict[IterVar, int]:
    """In-visit iteration count of every nest var: min(tile, limit - base)."""
    out = {}
    for v in kernel.nest.vars:
        tile = kernel.buffer.get(v.name, 1)
        base = base_env.get(v, pe_begin(kernel, v, pe))
        out[v] = max(0, min(tile, pe_limit(kernel, v, pe) - base))
    return out


def iter_outer_bases(kernel: KernelPlan, pe: int, upto: Optional[int] = None):
    """Yield base environments for the outer loops (all of them, or the first
    ``upto``).  Bases of loops not yet entered stay at their begin value."""
    outer = kernel.outer if upto is None else kernel.outer[:upto]
    loops = []
    for spec in outer:
        var = kernel.var(spec.var_name)
        begin = pe_begin(kernel, var, pe)
        end = pe_limit(kernel, var, pe)
        loops.append((var, list(range(begin, max(begin, end), spec.tile))))
    names = [v for v, _ in loops]
    for combo in itertools.product(*(r for _, r in loops)):
        yield dict(zip(names, combo))


def pe_is_idle(kernel: KernelPlan, pe: int) -> bool:
    """A PE with an empty partition chunk skips the whole kernel; without a
    partition only PE 0 executes."""
    if kernel.partition.var_name is None:
        return pe > 0
    begin, end = kernel.partition.pe_bounds(pe)
    return begin >= end


def op_static_counts(kernel: KernelPlan, geoms: Mapping[str, TensorGeometry],
                     op: DmaOp) -> tuple[int, int]:
    """(executions, bytes) of one DMA op over the whole core group."""
    if op.kind == "init":
        return 0, 0
    geom = geoms[op.tensor]
    execs = 0
    nbytes = 0
    for pe in range(kernel.partition.num_pes):
        if pe_is_idle(kernel, pe):
            continue
        for base_env in iter_outer_bases(kernel, pe, upto=op.level):
            full_base = {v: base_env.get(v, pe_begin(kernel, v, pe))
                         for v in kernel.nest.vars}
            tl = visit_tile_lengths(kernel, pe, full_base)
            root_env = kernel.nest.resolve_env(full_base)
            xfers = build_xfers(geom, geom.bases(root_env), geom.spans(tl))
            execs += len(xfers)
            nbytes += sum(x.elems for x in xfers) * geom.elem_bytes
    return execs, nbytes


def static_dma_counts(kernel: KernelPlan) -> dict:
    """Exact transfer counts and bytes implied by the plan, per tensor and
    total, accounting for the partition, remainder tiles and coalescing."""
    geoms = kernel_geometries(kernel)
    out = {"dma_get_count": 0, "dma_put_count": 0, "dma_bytes": 0, "per_tensor": {}}
    for op in kernel.dmas:
        execs, nbytes = op_static_counts(kernel, geoms, op)
        if op.kind == "get":
            out["dma_get_count"] += execs
        elif op.kind == "put":
            out["dma_put_count"] += execs
        out["dma_bytes"] += nbytes
        if op.kind in ("get", "put"):
            key = f"{op.tensor}.{op.kind}"
            ent = out["per_tensor"].setdefault(key, {"execs": 0, "bytes": 0, "level": op.level})
            ent["execs"] += execs
            ent["bytes"] += nbytes
    return out


def describe_descriptors(kernel: KernelPlan) -> list[dict]:
    """JSON view of the planned transfers (full-tile shape, level, direction)."""
    geoms = kernel_geometries(kernel)
    out = []
    for op in kernel.dmas:
        if op.kind == "init":
            continue
        geom = geoms[op.tensor]
        spans = tuple(d.span_full for d in geom.dims)
        xfers = build_xfers(geom, (0,) * len(geom.dims), spans)
        base_terms = []
        for d, index in enumerate(geom.view.indices):
            base_terms.append({
                "dim": d,
                "index": repr(index),
                "pitch": geom.dims[d].pitch,
            })
        out.append({
            "tensor": op.tensor,
            "direction": op.kind,
            "level": op.level,
            "accumulate": op.accumulate,
            "tile_spans": list(spans),
            "descriptors_per_visit": len(xfers),
            "block_elems": xfers[0].block if xfers else 0,
            "stride_elems": xfers[0].stride if xfers else 0,
            "count": xfers[0].count if xfers else 0,
            "base": base_terms,
        })
    return out
