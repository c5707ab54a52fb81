"""swsched: ahead-of-time tensor compiler for a scratchpad-based core-group accelerator.

The pipeline lowers dense tensor loop nests through four passes -- core-group
partitioning, scratchpad (LDM) buffer planning, loop re-ordering, and automatic
DMA insertion -- then either emits a C source tree or executes the plan on a
deterministic machine simulator with a naive reference oracle.
"""

from .ir import (
    ElemKind,
    F32,
    I32,
    TensorDecl,
    IterVar,
    AffineIndex,
    TensorAccess,
    ComputeDef,
    LoopNest,
    TensorScope,
    declare_tensor,
    split,
    fuse,
    reorder,
    buffer_read,
    buffer_write,
)
from .machine import MachineConfig
from .planner import BufferPlan, plan_ldm, InfeasiblePlanError
from .orderer import reorder_loops, count_dma
from .parallel import parallelize
from .graph import LayerGraph, LayerSpec, topo_schedule, plan_memory, lower_graph, init_arrays
from .plan import MemoryPlan, ProgramPlan
from .sim import simulate, run_reference, SimStats
from .codegen import emit_program, write_tree
from .workload import graph_from_workload, load_bundled_workload, resolve_workload

__all__ = [
    "ElemKind", "F32", "I32", "TensorDecl", "IterVar", "AffineIndex",
    "TensorAccess", "ComputeDef", "LoopNest", "TensorScope", "declare_tensor",
    "split", "fuse", "reorder", "buffer_read", "buffer_write",
    "MachineConfig", "BufferPlan", "plan_ldm", "InfeasiblePlanError",
    "reorder_loops", "count_dma", "parallelize",
    "LayerGraph", "LayerSpec", "topo_schedule", "plan_memory", "lower_graph",
    "init_arrays", "MemoryPlan", "ProgramPlan",
    "simulate", "run_reference", "SimStats",
    "emit_program", "write_tree",
    "graph_from_workload", "load_bundled_workload", "resolve_workload",
]
