"""Scheduled-plan containers shared by the lowering passes, the simulator and
the code generator.

A KernelPlan is one fully scheduled loop nest: the per-PE partition, the tile
extent chosen for every variable, the final outer loop order, the innermost
tile loops, scratchpad buffer layouts, and the DMA operations placed at their
loop levels.  Layers may lower to several kernels (sub-operations) executed
back-to-back with an implicit barrier between them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .ir import IterVar, LoopNest, TensorDecl
from .machine import MachineConfig


@dataclass(frozen=True)
class Partition:
    """Work split of one spatial output var across the compute elements."""
    var_name: Optional[str]
    num_pes: int
    chunk: int
    bounds: tuple[tuple[int, int], ...] = ()

    def pe_bounds(self, pe: int) -> tuple[int, int]:
        if self.var_name is None:
            return (0, 0)
        return self.bounds[pe]


@dataclass(frozen=True)
class LoopSpec:
    """One outer (tile-count) loop over bases of ``var``: base += tile."""
    var_name: str
    tile: int
    trips_full: int  # trip count over the full extent (single-PE view)


@dataclass(frozen=True)
class TileLoopSpec:
    """One innermost tile loop: local offsets 0..min(size, limit-base)."""
    var_name: str
    size: int


@dataclass(frozen=True)
class BufferSpec:
    """Scratchpad residence of one tensor tile (full-size spans)."""
    tensor: str
    spans: tuple[int, ...]
    offset_bytes: int
    nbytes: int


@dataclass(frozen=True)
class DmaOp:
    """One logical transfer site: direction, loop level (0 = preamble, i =
    inside the i-th outer loop) and reduction semantics."""
    tensor: str
    kind: str  # get | put | init
    level: int
    accumulate: bool = False
    apply_epilogue: bool = False


@dataclass
class KernelPlan:
    name: str
    nest: LoopNest
    partition: Partition
    buffer: dict[str, int]
    eff_extent: dict[str, int]
    outer: list[LoopSpec]
    tiles: list[TileLoopSpec]
    dmas: list[DmaOp]
    buffers: dict[str, BufferSpec]
    unbuffered: set[str]
    bindings: dict[str, tuple[str, int]]  # local tensor -> (allocation, byte offset)
    footprint_bytes: int = 0
    static: dict = field(default_factory=dict)
    order_info: dict = field(default_factory=dict)
    plan_trace: list = field(default_factory=list)

    def decl(self, tensor: str) -> TensorDecl:
        for acc in self.nest.body.all_accesses():
            if acc.tensor.name == tensor:
                return acc.tensor
        raise KeyError(tensor)

    def var(self, name: str) -> IterVar:
        return self.nest.var_named(name)

    def outer_vars(self) -> list[IterVar]:
        return [self.var(spec.var_name) for spec in self.outer]

    def tile_vars(self) -> list[IterVar]:
        return [self.var(spec.var_name) for spec in self.tiles]

    def is_partition_var(self, name: str) -> bool:
        return self.partition.var_name == name


@dataclass
class LayerPlan:
    name: str
    kind: str
    kernels: list[KernelPlan]
    workspace_bytes: int = 0
    output: str = ""  # arena allocation written by this layer


@dataclass
class MemoryPlan:
    """Persistent, never-reused allocations plus one shared workspace."""
    allocations: dict[str, tuple[int, int]]  # name -> (byte offset, bytes)
    workspace: tuple[int, int]
    arena_bytes: int

    def offset_of(self, name: str, extra: int = 0) -> int:
        if name == "workspace":
            return self.workspace[0] + extra
        off, _ = self.allocations[name]
        return off + extra


@dataclass
class ProgramPlan:
    machine: MachineConfig
    elem_name: str
    memory: MemoryPlan
    layers: list[LayerPlan]
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def total_static(self) -> dict:
        tot = {"dma_get_count": 0, "dma_put_count": 0, "dma_bytes": 0}
        for layer in self.layers:
            for k in layer.kernels:
                for key in tot:
                    tot[key] += k.static.get(key, 0)
        return tot
