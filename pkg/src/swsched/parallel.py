"""Core-group parallelization: partition the outermost spatial var that indexes
the output across the compute elements, fusing adjacent output dims when the
extent is too small, and refusing to partition pure reductions."""

from __future__ import annotations

import logging

from .analysis import build_views
from .ir import LoopNest, SPATIAL, SchedError, fuse
from .machine import MachineConfig
from .plan import Partition

log = logging.getLogger("swsched.parallel")


def _output_vars(nest: LoopNest) -> set:
    views = build_views(nest, names=[nest.body.output.tensor.name])
    view = views[nest.body.output.tensor.name]
    return view.all_vars()


def parallelize(nest: LoopNest, machine: MachineConfig) -> tuple[LoopNest, Partition]:
    """Pick the partition var, fusing forward while its extent is below the PE
    count; returns the (possibly fused) nest and the per-PE bounds."""
    out_vars = _output_vars(nest)
    cand = None
    for v in nest.vars:
        if v.kind == SPATIAL and v in out_vars:
            cand = v
            break
    if cand is None:
        log.warning("parallelize: no spatial var indexes the output; "
                    "falling back to a single compute element")
        return nest, Partition(var_name=None, num_pes=machine.num_pes, chunk=0)

    while cand.extent < machine.num_pes:
        pos = next(i for i, v in enumerate(nest.vars) if v is cand)
        if pos + 1 >= len(nest.vars):
            break
        nxt = nest.vars[pos + 1]
        if nxt.kind != SPATIAL or nxt not in out_vars:
            break
        nest, cand = fuse(nest, cand, nxt)
        out_vars = _output_vars(nest)
        log.info("parallelize: fused to %s (extent %d)", cand.name, cand.extent)

    if cand.extent < machine.num_pes:
        log.info("parallelize: extent %d < %d PEs; trailing PEs stay idle",
                 cand.extent, machine.num_pes)

    chunk = -(-cand.extent // machine.num_pes)
    bounds = tuple(
        (min(p * chunk, cand.extent), min((p + 1) * chunk, cand.extent))
        for p in range(machine.num_pes))
    part = Partition(var_name=cand.name, num_pes=machine.num_pes, chunk=chunk,
                     bounds=bounds)
    validate_partition(nest, part)
    return nest, part


def validate_partition(nest: LoopNest, part: Partition) -> None:
    """Static write-conflict check: the partition var must index the output,
    and the per-PE bounds must tile [0, extent) exactly and disjointly."""
    if part.var_name is None:
        return
    var = nest.var_named(part.var_name)
    if var not in _output_vars(nest):
        raise SchedError(
            f"partition var {var.name} does not index the output: "
            "distinct PEs would write the same elements")
    covered = 0
    prev_end = 0
    for begin, end in part.bounds:
        if begin != min(prev_end, var.extent):
            raise SchedError("partition bounds do not tile the range")
        covered += max(0, end - begin)
        prev_end = end if end > begin else prev_end
        if end - begin > part.chunk:
            raise SchedError("partition chunk bound exceeded")
    if covered != var.extent:
        raise SchedError("partition bounds do not cover the full extent")
