"""Deterministic core-group simulator and the naive reference oracle.

The simulator executes a ProgramPlan exactly as planned: compute elements run
sequentially (pe 0..N-1, barrier between kernels and layers), DMA transfers
move bytes between the arena and per-PE scratchpad buffers while marking a
validity shadow, and statistics count every descriptor execution.  Correctness
must never depend on the PE interleaving; a permuted order is a test hook.

``run_reference`` evaluates the same network with plain per-layer numpy code,
sharing nothing with the scheduled path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .dma import (
    TensorGeometry,
    Xfer,
    build_xfers,
    kernel_geometries,
    pe_begin,
    pe_is_idle,
    pe_limit,
    visit_tile_lengths,
)
from .graph import LayerGraph, infer_shapes, topo_schedule
from .interp import eval_expr
from .ir import ELEM_KINDS, EPILOGUE_BIAS_RELU, EPILOGUE_NONE
from .plan import KernelPlan, ProgramPlan

log = logging.getLogger("swsched.sim")


class SimError(RuntimeError):
    pass


class ScratchpadOverflow(SimError):
    pass


class InvalidRead(SimError):
    pass


class WriteConflict(SimError):
    pass


@dataclass
class SimStats:
    layers: dict[str, dict] = field(default_factory=dict)
    total: dict = field(default_factory=dict)
    ldm_high_water: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"layers": self.layers, "total": self.total,
                "ldm_high_water_bytes": self.ldm_high_water}


_COUNTER_KEYS = ("dma_get_count", "dma_put_count", "dma_bytes",
                 "scalar_mem_ops", "steps")


def _strided_view(flat: np.ndarray, x: Xfer, side: str) -> np.ndarray:
    off = x.mem_off if side == "mem" else x.scr_off
    if x.count == 1:
        return flat[off:off + x.block].reshape(1, x.block)
    itemsize = flat.itemsize
    stride = x.stride if side == "mem" else x.block
    return np.lib.stride_tricks.as_strided(
        flat[off:], shape=(x.count, x.block),
        strides=(stride * itemsize, itemsize))


def _xfer_mem_indices(x: Xfer) -> np.ndarray:
    return (x.mem_off + np.arange(x.count)[:, None] * x.stride
            + np.arange(x.block)[None, :]).reshape(-1)


class _KernelRun:
    """One kernel on one compute element."""

    def __init__(self, sim: "_Simulation", kernel: KernelPlan, pe: int,
                 geoms: Mapping[str, TensorGeometry], owner: Optional[np.ndarray]):
        self.sim = sim
        self.kernel = kernel
        self.pe = pe
        self.geoms = geoms
        self.owner = owner
        dtype = sim.dtype
        self.buf = {name: np.zeros(spec.nbytes // dtype.itemsize, dtype)
                    for name, spec in kernel.buffers.items()}
        self.valid = {name: np.zeros(spec.nbytes // dtype.itemsize, bool)
                      for name, spec in kernel.buffers.items()}
        self.base_off = {
            name: sim.plan.memory.offset_of(alloc, extra) // dtype.itemsize
            for name, (alloc, extra) in kernel.bindings.items()}
        self.entries: dict[int, list] = {}
        self.exits: dict[int, list] = {}
        for op in kernel.dmas:
            (self.exits if op.kind == "put" else self.entries).setdefault(
                op.level, []).append(op)
        self.outer = [(kernel.var(s.var_name), s.tile) for s in kernel.outer]
        self.tile_vars = kernel.tile_vars()
        self.reduce_ids = set(map(id, kernel.nest.body.reduce_vars))
        self.env: dict = {}

    # -- environment --------------------------------------------------------- #

    def _base_env(self) -> dict:
        k = self.kernel
        return {v: self.env.get(v, pe_begin(k, v, self.pe)) for v in k.nest.vars}

    def _visit(self) -> tuple[dict, dict, dict]:
        base = self._base_env()
        roots = self.kernel.nest.resolve_env(base)
        tl = visit_tile_lengths(self.kernel, self.pe, base)
        return base, roots, tl

    # -- transfers ------------------------------------------------------------ #

    def _resolved_xfers(self, op) -> list[Xfer]:
        geom = self.geoms[op.tensor]
        _, roots, tl = self._visit()
        return build_xfers(geom, geom.bases(roots), geom.spans(tl))

    def exec_get(self, op) -> None:
        geom = self.geoms[op.tensor]
        flat = self.buf[op.tensor]
        valid = self.valid[op.tensor]
        base = self.base_off[op.tensor]
        moved = 0
        xfers = self._resolved_xfers(op)
        for x in xfers:
            src = _strided_view(self.sim.arena[base:], x, "mem")
            flat[x.scr_off:x.scr_off + x.elems] = src.reshape(-1)
            valid[x.scr_off:x.scr_off + x.elems] = True
            moved += x.elems
        self.sim.count("dma_get_count", len(xfers))
        self.sim.count("dma_bytes", moved * geom.elem_bytes)

    def exec_init(self, op) -> None:
        init = self.kernel.nest.body.init
        self.buf[op.tensor].fill(init)
        self.valid[op.tensor].fill(True)

    def exec_put(self, op) -> None:
        if op.apply_epilogue:
            self._apply_epilogue(op)
        geom = self.geoms[op.tensor]
        flat = self.buf[op.tensor]
        base = self.base_off[op.tensor]
        moved = 0
        xfers = self._resolved_xfers(op)
        for x in xfers:
            dst = _strided_view(self.sim.arena[base:], x, "mem")
            dst[:] = flat[x.scr_off:x.scr_off + x.elems].reshape(x.count, x.block)
            moved += x.elems
            if self.owner is not None:
                idx = _xfer_mem_indices(x)
                owners = self.owner[idx]
                clash = (owners >= 0) & (owners != self.pe)
                if clash.any():
                    raise WriteConflict(
                        f"{self.kernel.name}: PEs {int(owners[clash][0])} and "
                        f"{self.pe} both write {op.tensor} element "
                        f"{int(idx[clash][0])}")
                self.owner[idx] = self.pe
        self.sim.count("dma_put_count", len(xfers))
        self.sim.count("dma_bytes", moved * geom.elem_bytes)

    # -- compute -------------------------------------------------------------- #

    def _scr_pitches(self, spans: Sequence[int]) -> list[int]:
        out, p = [], 1
        for s in spans:
            out.append(p)
            p *= s
        return out

    def _gather(self, access, roots: dict, roots_scalar: dict, tl: dict,
                grid_size: int) -> np.ndarray:
        name = access.tensor.name
        geom = self.geoms.get(name)
        idx_per_dim = [index.evaluate(roots) for index in access.indices]
        if geom is None:
            # unbuffered: scalar global loads straight from the arena
            pitches = access.tensor.pitches()
            flat = self.base_off[name] + sum(
                np.asarray(i) * p for i, p in zip(idx_per_dim, pitches))
            self.sim.count("scalar_mem_ops", grid_size)
            return self.sim.arena[np.asarray(flat)]
        bases = geom.bases(roots_scalar)
        spans = geom.spans(tl)
        pitch = self._scr_pitches(spans)
        flat = 0
        for d, idx in enumerate(idx_per_dim):
            flat = flat + (np.asarray(idx) - bases[d]) * pitch[d]
        flat = np.asarray(flat)
        if not self.valid[name][flat].all():
            raise InvalidRead(
                f"{self.kernel.name}: compute reads un-transferred scratchpad "
                f"cells of {name} (pe {self.pe})")
        return self.buf[name][flat]

    def compute(self) -> None:
        k = self.kernel
        base, roots_scalar, tl = self._visit()
        axes = [tl[v] for v in self.tile_vars]
        if any(n <= 0 for n in axes):
            return
        grid_shape = tuple(axes)
        grid_size = int(np.prod(grid_shape)) if axes else 1
        # broadcastable local offsets per tile var
        env = dict(base)
        for i, v in enumerate(self.tile_vars):
            shape = [1] * len(self.tile_vars)
            shape[i] = axes[i]
            env[v] = base[v] + np.arange(axes[i]).reshape(shape)
        roots = k.nest.resolve_env(env)

        body = k.nest.body
        vals = [self._gather(a, roots, roots_scalar, tl, grid_size)
                for a in body.inputs]
        result = eval_expr(body.expr, vals)
        result = np.broadcast_to(np.asarray(result, self.sim.dtype), grid_shape)

        red_axes = tuple(i for i, v in enumerate(self.tile_vars)
                         if id(v) in self.reduce_ids)
        if red_axes:
            if body.reduce_op == "add":
                result = np.add.reduce(result, axis=red_axes)
            else:
                result = np.maximum.reduce(result, axis=red_axes)

        def _drop_reduced(idx):
            if isinstance(idx, np.ndarray) and red_axes:
                return np.squeeze(idx, axis=red_axes)
            return idx

        out_name = body.output.tensor.name
        out_idx = [_drop_reduced(index.evaluate(roots))
                   for index in body.output.indices]
        geom = self.geoms.get(out_name)
        if geom is None:
            pitches = body.output.tensor.pitches()
            flat = self.base_off[out_name] + sum(
                np.asarray(i) * p for i, p in zip(out_idx, pitches))
            self.sim.count("scalar_mem_ops", grid_size)
            target = self.sim.arena
        else:
            bases = geom.bases(roots_scalar)
            spans = geom.spans(tl)
            pitch = self._scr_pitches(spans)
            flat = 0
            for d, idx in enumerate(out_idx):
                flat = flat + (np.asarray(idx) - bases[d]) * pitch[d]
            target = self.buf[out_name]
        flat = np.asarray(flat)
        if body.reduce_vars:
            if body.reduce_op == "add":
                target[flat] = target[flat] + result
            else:
                target[flat] = np.maximum(target[flat], result)
        else:
            target[flat] = result
        self.sim.count("steps", grid_size)

    def _apply_epilogue(self, op) -> None:
        body = self.kernel.nest.body
        geom = self.geoms[op.tensor]
        _, roots_scalar, tl = self._visit()
        bases = geom.bases(roots_scalar)
        spans = geom.spans(tl)
        pitch = self._scr_pitches(spans)
        grids = []
        for d, s in enumerate(spans):
            shape = [1] * len(spans)
            shape[d] = s
            grids.append(np.arange(s).reshape(shape))
        flat = sum(g * p for g, p in zip(grids, pitch))
        tile = self.buf[op.tensor][flat]
        if body.epilogue == EPILOGUE_BIAS_RELU:
            env = {}
            for d, index in enumerate(body.output.indices):
                for var, coeff in index.terms:
                    env[var] = bases[d] + grids[d] - index.const
            bgeom = self.geoms[body.bias.tensor.name]
            b_bases = bgeom.bases(roots_scalar)
            b_spans = bgeom.spans(tl)
            b_pitch = self._scr_pitches(b_spans)
            b_flat = 0
            for d, index in enumerate(body.bias.indices):
                b_flat = b_flat + (np.asarray(index.evaluate(env)) - b_bases[d]) * b_pitch[d]
            b_flat = np.asarray(b_flat)
            if not self.valid[body.bias.tensor.name][b_flat].all():
                raise InvalidRead(f"{self.kernel.name}: bias tile not resident")
            tile = tile + self.buf[body.bias.tensor.name][b_flat]
        tile = np.maximum(tile, 0)
        self.buf[op.tensor][flat] = tile

    # -- loop walker ----------------------------------------------------------- #

    def run(self, level: int = 0) -> None:
        for op in self.entries.get(level, ()):
            if op.kind == "get":
                self.exec_get(op)
            else:
                self.exec_init(op)
        if level == len(self.outer):
            self.compute()
        else:
            var, tile = self.outer[level]
            begin = pe_begin(self.kernel, var, self.pe)
            end = pe_limit(self.kernel, var, self.pe)
            for base in range(begin, end, tile):
                self.env[var] = base
                self.run(level + 1)
            self.env.pop(var, None)
        for op in self.exits.get(level, ()):
            self.exec_put(op)


class _Simulation:
    def __init__(self, plan: ProgramPlan):
        self.plan = plan
        self.dtype = np.dtype(ELEM_KINDS[plan.elem_name].np_name)
        if plan.memory.arena_bytes % self.dtype.itemsize:
            raise SimError("arena size not element-aligned")
        self.arena = np.zeros(plan.memory.arena_bytes // self.dtype.itemsize,
                              self.dtype)
        self.counters = {k: 0 for k in _COUNTER_KEYS}

    def count(self, key: str, n: int) -> None:
        self.counters[key] += n

    def place(self, arrays: Mapping[str, np.ndarray]) -> None:
        isz = self.dtype.itemsize
        for name, arr in arrays.items():
            if name not in self.plan.memory.allocations:
                raise SimError(f"no allocation named {name!r}")
            off, nbytes = self.plan.memory.allocations[name]
            flat = np.asarray(arr, self.dtype).reshape(-1)
            if flat.size * isz != nbytes:
                raise SimError(
                    f"{name}: got {flat.size * isz} bytes, allocation holds {nbytes}")
            self.arena[off // isz: off // isz + flat.size] = flat


def simulate(plan: ProgramPlan, arrays: Mapping[str, np.ndarray],
             pe_order: Optional[Sequence[int]] = None) -> tuple[dict, SimStats]:
    """Execute a plan; returns ({output allocation: flat array}, SimStats).

    Raises ScratchpadOverflow / InvalidRead / WriteConflict on the
    corresponding machine faults.
    """
    sim = _Simulation(plan)
    sim.place(arrays)
    stats = SimStats(ldm_high_water=[0] * plan.machine.num_pes)
    order = list(pe_order) if pe_order is not None else list(range(plan.machine.num_pes))

    for layer in plan.layers:
        before = dict(sim.counters)
        for kernel in layer.kernels:
            if kernel.footprint_bytes > plan.machine.ldm_bytes:
                raise ScratchpadOverflow(
                    f"{kernel.name}: scratchpad footprint {kernel.footprint_bytes}B "
                    f"exceeds capacity {plan.machine.ldm_bytes}B")
            geoms = kernel_geometries(kernel)
            out_name = kernel.nest.body.output.tensor.name
            owner = None
            if out_name in kernel.buffers:
                owner = np.full(kernel.decl(out_name).elems, -1, np.int16)
            for pe in order:
                if pe_is_idle(kernel, pe):
                    continue
                stats.ldm_high_water[pe] = max(stats.ldm_high_water[pe],
                                               kernel.footprint_bytes)
                _KernelRun(sim, kernel, pe, geoms, owner).run()
        stats.layers[layer.name] = {
            k: sim.counters[k] - before[k] for k in _COUNTER_KEYS}
    stats.total = dict(sim.counters)

    isz = sim.dtype.itemsize
    outputs = {}
    for name in plan.outputs:
        off, nbytes = plan.memory.allocations[name]
        outputs[name] = sim.arena[off // isz: off // isz + nbytes // isz].copy()
    return outputs, stats


def dump_arena(plan: ProgramPlan, arrays: Mapping[str, np.ndarray]) -> dict:
    """Run a simulation and return every allocation's bytes (for blob dumps)."""
    sim = _Simulation(plan)
    sim.place(arrays)
    out = {}
    isz = sim.dtype.itemsize
    for name, (off, nbytes) in plan.memory.allocations.items():
        out[name] = sim.arena[off // isz: off // isz + nbytes // isz].copy()
    return out


# --------------------------------------------------------------------------- #
# naive reference oracle
# --------------------------------------------------------------------------- #

def run_reference(graph: LayerGraph, arrays: Mapping[str, np.ndarray]) -> dict:
    """Direct per-layer numpy evaluation in topological order; shares nothing
    with the scheduled pipeline.  Returns every layer's output, numpy-shaped,
    keyed by allocation name."""
    shapes = infer_shapes(graph)
    integer = graph.elem.np_name.startswith("int")
    work_dtype = np.int64 if integer else np.float64

    acts: dict[str, np.ndarray] = {}
    for name, shape in graph.inputs:
        acts[name] = np.asarray(arrays[name], work_dtype).reshape(shape)

    def param(name):
        return np.asarray(arrays[name], work_dtype)

    out: dict[str, np.ndarray] = {}
    for layer in topo_schedule(graph):
        ins = [acts[s] for s in layer.inputs]
        a = layer.attrs
        epi = a.get("epilogue", EPILOGUE_NONE)
        if layer.kind == "conv2d":
            x = ins[0]
            k, s, p = a["kernel"], a.get("stride", 1), a.get("pad", 0)
            f = a["channels"]
            w = param(f"{layer.name}.w").reshape(f, x.shape[0], k, k)
            xp = np.pad(x, ((0, 0), (p, p), (p, p)))
            _, oh, ow = shapes[layer.name]
            y = np.zeros((f, oh, ow), work_dtype)
            for ry in range(k):
                for rx in range(k):
                    xs = xp[:, ry: ry + (oh - 1) * s + 1: s, rx: rx + (ow - 1) * s + 1: s]
                    y += np.einsum("chw,fc->fhw", xs, w[:, :, ry, rx])
        elif layer.kind == "dense":
            w = param(f"{layer.name}.w").reshape(ins[0].shape[0], a["units"])
            y = ins[0] @ w
        elif layer.kind == "matmul":
            y = ins[0] @ ins[1]
        elif layer.kind == "maxpool":
            x = ins[0]
            k = a["kernel"]
            s = a.get("stride", k)
            _, oh, ow = shapes[layer.name]
            y = None
            for ry in range(k):
                for rx in range(k):
                    xs = x[:, ry: ry + (oh - 1) * s + 1: s, rx: rx + (ow - 1) * s + 1: s]
                    y = xs.copy() if y is None else np.maximum(y, xs)
        elif layer.kind == "flatten":
            y = ins[0].reshape(-1)
        elif layer.kind == "relu":
            y = np.maximum(ins[0], 0)
        elif layer.kind == "add":
            y = ins[0] + ins[1]
        elif layer.kind == "mul":
            y = ins[0] * ins[1]
        else:
            raise SimError(f"unsupported layer kind {layer.kind}")
        if layer.kind in ("conv2d", "dense"):
            if epi == EPILOGUE_BIAS_RELU:
                b = param(f"{layer.name}.b").reshape(shapes[layer.name][0] if
                                                     layer.kind == "dense" else a["channels"])
                if layer.kind == "conv2d":
                    y = y + b[:, None, None]
                else:
                    y = y + b
                y = np.maximum(y, 0)
            elif epi == "relu":
                y = np.maximum(y, 0)
        acts[layer.name] = y
        out[f"{layer.name}.out"] = y
    return out
