"""Network-level planning: layer graph validation and shape propagation,
topological scheduling, persistent-memory/workspace planning, and per-layer
lowering through the operator pipeline (parallelize -> plan buffers -> order
loops -> insert DMA).

Conventions: workload shapes are written outermost-first (numpy style) and
reversed into the IR's innermost-first dimension order.  Activations of
convolutional layers are (C, H, W) in numpy order; weights are (F, C, k, k);
dense weights are (K, N).  A padded convolution lowers to three kernels --
zero-fill of a workspace temporary, interior copy, then the convolution proper
-- sharing the single network-wide workspace.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .analysis import build_views
from .dma import EpilogueUnderReduction, insert_dma, kernel_geometries, static_dma_counts
from .ir import (
    BinOp,
    ComputeDef,
    Const,
    EPILOGUE_BIAS_RELU,
    EPILOGUE_NONE,
    ElemKind,
    F32,
    In,
    IterVar,
    LoopNest,
    REDUCTION,
    SchedError,
    TensorAccess,
    TensorScope,
    WRITE,
    ix,
)
from .interp import max_reduce_init
from .machine import MachineConfig
from .orderer import OuterVar, TensorTraffic, reorder_loops
from .parallel import parallelize
from .plan import (
    BufferSpec,
    KernelPlan,
    LayerPlan,
    LoopSpec,
    MemoryPlan,
    ProgramPlan,
    TileLoopSpec,
)
from .planner import plan_ldm

log = logging.getLogger("swsched.graph")

LAYER_KINDS = ("conv2d", "dense", "maxpool", "flatten", "relu", "add", "mul", "matmul")


class GraphError(ValueError):
    pass


@dataclass
class LayerSpec:
    name: str
    kind: str
    inputs: list[str]
    attrs: dict = field(default_factory=dict)


@dataclass
class LayerGraph:
    """DAG of layer invocations over named graph inputs."""
    inputs: list[tuple[str, tuple[int, ...]]]  # (name, numpy-style shape)
    layers: list[LayerSpec]
    elem: ElemKind = F32

    def __post_init__(self):
        names = [n for n, _ in self.inputs] + [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise GraphError("duplicate layer/input names")
        for layer in self.layers:
            if layer.kind not in LAYER_KINDS:
                raise GraphError(f"layer {layer.name}: unsupported kind {layer.kind!r}")

    def producers(self) -> set[str]:
        return {n for n, _ in self.inputs} | {l.name for l in self.layers}


# --------------------------------------------------------------------------- #
# shapes
# --------------------------------------------------------------------------- #

def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    out = (size + 2 * pad - k) // stride + 1
    if out < 1:
        raise GraphError(f"convolution/pool output collapses: size {size}, kernel {k}")
    return out


def infer_shapes(graph: LayerGraph) -> dict[str, tuple[int, ...]]:
    """Numpy-style shape of every producer (graph inputs and layer outputs)."""
    shapes: dict[str, tuple[int, ...]] = {n: tuple(s) for n, s in graph.inputs}
    for layer in graph.layers:
        ins = []
        for src in layer.inputs:
            if src not in shapes:
                raise GraphError(f"layer {layer.name}: unknown input {src!r}")
            ins.append(shapes[src])
        a = layer.attrs
        if layer.kind == "conv2d":
            (c, h, w), = ins
            k, s, p = a["kernel"], a.get("stride", 1), a.get("pad", 0)
            shapes[layer.name] = (a["channels"], _conv_out(h, k, s, p), _conv_out(w, k, s, p))
        elif layer.kind == "maxpool":
            (c, h, w), = ins
            k = a["kernel"]
            s = a.get("stride", k)
            shapes[layer.name] = (c, _conv_out(h, k, s, 0), _conv_out(w, k, s, 0))
        elif layer.kind == "dense":
            (n_in,), = ins
            shapes[layer.name] = (a["units"],)
        elif layer.kind == "flatten":
            shape, = ins
            shapes[layer.name] = (int(math.prod(shape)),)
        elif layer.kind == "relu":
            shape, = ins
            shapes[layer.name] = shape
        elif layer.kind in ("add", "mul"):
            sa, sb = ins
            if sa != sb:
                raise GraphError(f"layer {layer.name}: shape mismatch {sa} vs {sb}")
            shapes[layer.name] = sa
        elif layer.kind == "matmul":
            (m, k1), (k2, n) = ins
            if k1 != k2:
                raise GraphError(f"layer {layer.name}: inner dims differ {k1} vs {k2}")
            shapes[layer.name] = (m, n)
    return shapes


# --------------------------------------------------------------------------- #
# scheduling and memory
# --------------------------------------------------------------------------- #

def topo_schedule(graph: LayerGraph) -> list[LayerSpec]:
    """Topological order of the layers, stable among independents."""
    ready = {n for n, _ in graph.inputs}
    pending = list(graph.layers)
    order: list[LayerSpec] = []
    while pending:
        progressed = False
        rest = []
        for layer in pending:
            if all(src in ready for src in layer.inputs):
                order.append(layer)
                ready.add(layer.name)
                progressed = True
            else:
                rest.append(layer)
        if not progressed:
            names = [l.name for l in rest]
            raise GraphError(f"dependency cycle or missing producer among {names}")
        pending = rest
    return order


def _param_shapes(layer: LayerSpec, in_shapes: Sequence[tuple[int, ...]]) -> dict[str, tuple[int, ...]]:
    a = layer.attrs
    if layer.kind == "conv2d":
        c = in_shapes[0][0]
        k = a["kernel"]
        out = {"w": (a["channels"], c, k, k)}
        if a.get("epilogue", "none") == EPILOGUE_BIAS_RELU:
            out["b"] = (a["channels"],)
        return out
    if layer.kind == "dense":
        out = {"w": (in_shapes[0][0], a["units"])}
        if a.get("epilogue", "none") == EPILOGUE_BIAS_RELU:
            out["b"] = (a["units"],)
        return out
    return {}


def _temp_bytes(layer: LayerSpec, in_shapes, elem: ElemKind) -> int:
    if layer.kind == "conv2d" and layer.attrs.get("pad", 0) > 0:
        c, h, w = in_shapes[0]
        p = layer.attrs["pad"]
        return c * (h + 2 * p) * (w + 2 * p) * elem.bytes
    return 0


def plan_memory(graph: LayerGraph) -> MemoryPlan:
    """Persistent allocations (never reused) laid out sequentially, then one
    workspace sized to the largest per-layer temporary requirement."""
    shapes = infer_shapes(graph)
    elem = graph.elem
    offset = 0
    allocations: dict[str, tuple[int, int]] = {}

    def alloc(name: str, shape: tuple[int, ...]) -> None:
        nonlocal offset
        nbytes = int(math.prod(shape)) * elem.bytes
        allocations[name] = (offset, nbytes)
        offset += nbytes

    for name, shape in graph.inputs:
        alloc(name, shape)
    workspace_bytes = 0
    for layer in topo_schedule(graph):
        in_shapes = [shapes[s] for s in layer.inputs]
        for pname, pshape in _param_shapes(layer, in_shapes).items():
            alloc(f"{layer.name}.{pname}", pshape)
        alloc(f"{layer.name}.out", shapes[layer.name])
        workspace_bytes = max(workspace_bytes, _temp_bytes(layer, in_shapes, elem))
    workspace = (offset, workspace_bytes)
    return MemoryPlan(allocations=allocations, workspace=workspace,
                      arena_bytes=offset + workspace_bytes)


# --------------------------------------------------------------------------- #
# kernel construction per layer kind
# --------------------------------------------------------------------------- #

@dataclass
class KernelDraft:
    name: str
    nest: LoopNest
    bindings: dict[str, tuple[str, int]]


def _rdims(np_shape: Sequence[int]) -> tuple[int, ...]:
    return tuple(reversed(tuple(np_shape)))


def _identity_nest(scope: TensorScope, src: str, dst: str, dims: tuple[int, ...],
                   expr_of=None, second: Optional[str] = None) -> LoopNest:
    """Elementwise nest over ``dims`` (innermost-first): dst[...] = f(src[...])."""
    letters = ["i", "j", "l", "m"]
    vars_ = tuple(IterVar(letters[d], e) for d, e in enumerate(dims))
    idx = tuple(ix(v) for v in vars_)
    t_src = scope[src]
    t_dst = scope[dst]
    inputs = [TensorAccess(t_src, idx)]
    if second is not None:
        inputs.append(TensorAccess(scope[second], idx))
    expr = expr_of(len(inputs)) if expr_of else In(0)
    body = ComputeDef(TensorAccess(t_dst, idx, WRITE), tuple(inputs), expr)
    return LoopNest(tuple(reversed(vars_)), body)


def build_layer_kernels(layer: LayerSpec, in_shapes: Sequence[tuple[int, ...]],
                        out_shape: tuple[int, ...], elem: ElemKind,
                        input_names: Sequence[str]) -> list[KernelDraft]:
    """Lower one layer to kernel drafts with local tensor decls and bindings
    into the arena (allocation name, byte offset)."""
    a = layer.attrs
    epilogue = a.get("epilogue", EPILOGUE_NONE)
    drafts: list[KernelDraft] = []
    lname = layer.name

    if layer.kind == "conv2d":
        c, h, w = in_shapes[0]
        f = a["channels"]
        k, s, p = a["kernel"], a.get("stride", 1), a.get("pad", 0)
        oh, ow = out_shape[1], out_shape[2]
        hp, wp = h + 2 * p, w + 2 * p
        src_name = "t" if p > 0 else "x"
        if p > 0:
            zscope = TensorScope()
            zscope.declare("t", (wp * hp * c,), elem)
            zv = IterVar("i", wp * hp * c)
            zbody = ComputeDef(
                TensorAccess(zscope["t"], (ix(zv),), WRITE), (), Const(0))
            drafts.append(KernelDraft(
                f"{lname}.pad_zero", LoopNest((zv,), zbody),
                {"t": ("workspace", 0)}))
            cscope = TensorScope()
            cscope.declare("x", _rdims((c, h, w)), elem)
            cscope.declare("t", _rdims((c, hp, wp)), elem)
            cc = IterVar("c", c)
            cy = IterVar("y", h)
            cx = IterVar("x", w)
            cbody = ComputeDef(
                TensorAccess(cscope["t"], (ix(cx, const=p), ix(cy, const=p), ix(cc)), WRITE),
                (TensorAccess(cscope["x"], (ix(cx), ix(cy), ix(cc))),),
                In(0))
            drafts.append(KernelDraft(
                f"{lname}.pad_copy", LoopNest((cc, cy, cx), cbody),
                {"x": (input_names[0], 0), "t": ("workspace", 0)}))
        scope = TensorScope()
        scope.declare(src_name, _rdims((c, hp, wp)), elem)
        scope.declare("w", _rdims((f, c, k, k)), elem)
        scope.declare("y", _rdims((f, oh, ow)), elem)
        if epilogue == EPILOGUE_BIAS_RELU:
            scope.declare("b", (f,), elem)
        ff = IterVar("ff", f)
        yy = IterVar("yy", oh)
        xx = IterVar("xx", ow)
        rc = IterVar("rc", c, REDUCTION)
        ry = IterVar("ry", k, REDUCTION)
        rx = IterVar("rx", k, REDUCTION)
        bias = (TensorAccess(scope["b"], (ix(ff),))
                if epilogue == EPILOGUE_BIAS_RELU else None)
        body = ComputeDef(
            output=TensorAccess(scope["y"], (ix(xx), ix(yy), ix(ff)), WRITE),
            inputs=(
                TensorAccess(scope[src_name],
                             (ix((xx, s), rx), ix((yy, s), ry), ix(rc))),
                TensorAccess(scope["w"], (ix(rx), ix(ry), ix(rc), ix(ff))),
            ),
            expr=BinOp("mul", In(0), In(1)),
            reduce_vars=(rc, ry, rx),
            init=0,
            epilogue=epilogue,
            bias=bias,
        )
        bindings = {
            src_name: ("workspace", 0) if p > 0 else (input_names[0], 0),
            "w": (f"{lname}.w", 0),
            "y": (f"{lname}.out", 0),
        }
        if bias is not None:
            bindings["b"] = (f"{lname}.b", 0)
        drafts.append(KernelDraft(
            f"{lname}.conv", LoopNest((ff, yy, xx, rc, ry, rx), body), bindings))
        return drafts

    if layer.kind == "dense":
        n_in = in_shapes[0][0]
        units = a["units"]
        scope = TensorScope()
        scope.declare("x", (n_in,), elem)
        scope.declare("w", _rdims((n_in, units)), elem)
        scope.declare("y", (units,), elem)
        if epilogue == EPILOGUE_BIAS_RELU:
            scope.declare("b", (units,), elem)
        vy = IterVar("y", units)
        vk = IterVar("k", n_in, REDUCTION)
        bias = (TensorAccess(scope["b"], (ix(vy),))
                if epilogue == EPILOGUE_BIAS_RELU else None)
        body = ComputeDef(
            output=TensorAccess(scope["y"], (ix(vy),), WRITE),
            inputs=(TensorAccess(scope["x"], (ix(vk),)),
                    TensorAccess(scope["w"], (ix(vy), ix(vk)))),
            expr=BinOp("mul", In(0), In(1)),
            reduce_vars=(vk,),
            init=0,
            epilogue=epilogue,
            bias=bias,
        )
        bindings = {"x": (input_names[0], 0), "w": (f"{lname}.w", 0),
                    "y": (f"{lname}.out", 0)}
        if bias is not None:
            bindings["b"] = (f"{lname}.b", 0)
        return [KernelDraft(f"{lname}.dense", LoopNest((vy, vk), body), bindings)]

    if layer.kind == "matmul":
        (m, kdim), (_, n) = in_shapes
        scope = TensorScope()
        scope.declare("x", _rdims((m, kdim)), elem)
        scope.declare("x2", _rdims((kdim, n)), elem)
        scope.declare("y", _rdims((m, n)), elem)
        vx = IterVar("x", m)
        vy = IterVar("y", n)
        vk = IterVar("k", kdim, REDUCTION)
        body = ComputeDef(
            output=TensorAccess(scope["y"], (ix(vy), ix(vx)), WRITE),
            inputs=(TensorAccess(scope["x"], (ix(vk), ix(vx))),
                    TensorAccess(scope["x2"], (ix(vy), ix(vk)))),
            expr=BinOp("mul", In(0), In(1)),
            reduce_vars=(vk,),
            init=0,
        )
        bindings = {"x": (input_names[0], 0), "x2": (input_names[1], 0),
                    "y": (f"{lname}.out", 0)}
        return [KernelDraft(f"{lname}.matmul", LoopNest((vx, vy, vk), body), bindings)]

    if layer.kind == "maxpool":
        c, h, w = in_shapes[0]
        k = a["kernel"]
        s = a.get("stride", k)
        oh, ow = out_shape[1], out_shape[2]
        scope = TensorScope()
        scope.declare("x", _rdims((c, h, w)), elem)
        scope.declare("y", _rdims((c, oh, ow)), elem)
        vc = IterVar("c", c)
        yy = IterVar("yy", oh)
        xx = IterVar("xx", ow)
        ry = IterVar("ry", k, REDUCTION)
        rx = IterVar("rx", k, REDUCTION)
        body = ComputeDef(
            output=TensorAccess(scope["y"], (ix(xx), ix(yy), ix(vc)), WRITE),
            inputs=(TensorAccess(scope["x"], (ix((xx, s), rx), ix((yy, s), ry), ix(vc))),),
            expr=In(0),
            reduce_vars=(ry, rx),
            init=max_reduce_init(elem.np_name),
            reduce_op="max",
        )
        bindings = {"x": (input_names[0], 0), "y": (f"{lname}.out", 0)}
        return [KernelDraft(f"{lname}.pool", LoopNest((vc, yy, xx, ry, rx), body), bindings)]

    if layer.kind in ("flatten", "relu", "add", "mul"):
        dims = _rdims(in_shapes[0])
        scope = TensorScope()
        scope.declare("x", dims, elem)
        scope.declare("y", dims, elem)
        second = None
        expr_of = None
        if layer.kind == "relu":
            expr_of = lambda n: BinOp("max", In(0), Const(0))
        elif layer.kind == "add":
            scope.declare("x2", dims, elem)
            second = "x2"
            expr_of = lambda n: BinOp("add", In(0), In(1))
        elif layer.kind == "mul":
            scope.declare("x2", dims, elem)
            second = "x2"
            expr_of = lambda n: BinOp("mul", In(0), In(1))
        nest = _identity_nest(scope, "x", "y", dims, expr_of=expr_of, second=second)
        bindings = {"x": (input_names[0], 0), "y": (f"{lname}.out", 0)}
        if second:
            bindings["x2"] = (input_names[1], 0)
        return [KernelDraft(f"{lname}.{layer.kind}", nest, bindings)]

    raise GraphError(f"unsupported layer kind {layer.kind!r}")


# --------------------------------------------------------------------------- #
# kernel lowering
# --------------------------------------------------------------------------- #

def _ceil(a: int, b: int) -> int:
    return -(-a // b)


def lower_kernel(draft: KernelDraft, machine: MachineConfig,
                 overrides: Optional[Mapping] = None) -> KernelPlan:
    """Run one nest through the operator pipeline and assemble a KernelPlan."""
    overrides = dict(overrides or {})
    nest, partition = parallelize(draft.nest, machine)
    pvar = nest.var_named(partition.var_name) if partition.var_name else None

    eff = {v.name: v.extent for v in nest.vars}
    limits = {}
    if pvar is not None:
        eff[pvar.name] = partition.chunk
        limits[pvar] = partition.chunk

    unbuffered = frozenset(overrides.get("no_buffer", ()))
    views = {name: view for name, view in build_views(nest).items()
             if name not in unbuffered}

    bplan = plan_ldm(nest.vars, views, machine, extent_limits=limits)
    buffer = {v.name: bplan[v] for v in nest.vars}
    for vname, b in overrides.get("buffer", {}).items():
        var = nest.var_named(vname)
        if not 1 <= int(b) <= eff[vname]:
            raise SchedError(f"buffer override {vname}={b} outside [1, {eff[vname]}]")
        if b != buffer[vname]:
            log.warning("manual buffer override %s: %d -> %d", vname, buffer[vname], b)
        buffer[vname] = int(b)

    outer_vars = [v for v in nest.vars if _ceil(eff[v.name], buffer[v.name]) > 1]
    tile_vars = [v for v in nest.vars if buffer[v.name] > 1]

    output = nest.body.output.tensor.name
    decls = [OuterVar(v.name, _ceil(v.extent, buffer[v.name]), v.kind == REDUCTION)
             for v in outer_vars]
    traffic = []
    for name, view in views.items():
        deps = frozenset(v.name for v in outer_vars if v in view.all_vars())
        traffic.append(TensorTraffic(name, deps, written=(name == output)))

    if "order" in overrides:
        wanted = list(overrides["order"])
        if sorted(wanted) != sorted(v.name for v in outer_vars):
            raise SchedError(
                f"order override {wanted} is not a permutation of outer vars "
                f"{[v.name for v in outer_vars]}")
        order_names = wanted
        report = None
    else:
        full_order, report = reorder_loops(decls, traffic, explain=True)
        order_names = full_order[: len(outer_vars)]

    order_vars = [nest.var_named(n) for n in order_names]
    pure_tile = [v for v in tile_vars if v not in outer_vars]
    try:
        dmas = insert_dma(nest, order_vars, pure_tile, views, output,
                          unbuffered=unbuffered)
    except EpilogueUnderReduction:
        # sink reduction loops below every spatial loop so the epilogue'd
        # output tile completes its reduction while resident
        order_vars = ([v for v in order_vars if v.kind != REDUCTION]
                      + [v for v in order_vars if v.kind == REDUCTION])
        log.info("%s: sank reduction loops to keep the fused epilogue legal",
                 draft.name)
        dmas = insert_dma(nest, order_vars, pure_tile, views, output,
                          unbuffered=unbuffered)

    outer_specs = [LoopSpec(v.name, buffer[v.name], _ceil(v.extent, buffer[v.name]))
                   for v in order_vars]
    tile_specs = [TileLoopSpec(v.name, buffer[v.name]) for v in nest.vars
                  if v in tile_vars]

    kernel = KernelPlan(
        name=draft.name,
        nest=nest,
        partition=partition,
        buffer=buffer,
        eff_extent=eff,
        outer=outer_specs,
        tiles=tile_specs,
        dmas=dmas,
        buffers={},
        unbuffered=set(unbuffered),
        bindings=dict(draft.bindings),
        plan_trace=bplan.trace,
    )

    geoms = kernel_geometries(kernel)
    offset = 0
    buffers = {}
    for name in views:
        geom = geoms[name]
        spans = tuple(d.span_full for d in geom.dims)
        nbytes = int(math.prod(spans)) * geom.elem_bytes
        buffers[name] = BufferSpec(name, spans, offset, nbytes)
        offset += nbytes
    kernel.buffers = buffers
    kernel.footprint_bytes = offset
    kernel.static = static_dma_counts(kernel)
    if report is not None:
        kernel.order_info = {
            "order": order_names,
            "total_dma_execs": report.final.total_dma_execs,
            "per_tensor": report.final.per_tensor,
            "steps": report.steps,
        }
        if report.exhaustive is not None:
            kernel.order_info["exhaustive"] = [
                {"order": list(names), "total_dma_execs": cost}
                for names, cost in report.exhaustive]
    return kernel


def lower_graph(graph: LayerGraph, machine: MachineConfig,
                schedule_overrides: Optional[Mapping[str, Mapping]] = None) -> ProgramPlan:
    """Lower a whole network: every layer scheduled kernel by kernel, plus the
    memory plan; the result is self-contained for simulation and codegen."""
    overrides = dict(schedule_overrides or {})
    shapes = infer_shapes(graph)
    memory = plan_memory(graph)
    order = topo_schedule(graph)
    consumed = {src for l in graph.layers for src in l.inputs}

    layers = []
    for layer in order:
        in_shapes = [shapes[s] for s in layer.inputs]
        input_allocs = [s if s in dict(graph.inputs) else f"{s}.out"
                        for s in layer.inputs]
        drafts = build_layer_kernels(layer, in_shapes, shapes[layer.name],
                                     graph.elem, input_allocs)
        kernels = [lower_kernel(d, machine, overrides.get(layer.name)) for d in drafts]
        layers.append(LayerPlan(
            name=layer.name,
            kind=layer.kind,
            kernels=kernels,
            workspace_bytes=_temp_bytes(layer, in_shapes, graph.elem),
            output=f"{layer.name}.out",
        ))

    outputs = [f"{l.name}.out" for l in graph.layers if l.name not in consumed]
    return ProgramPlan(
        machine=machine,
        elem_name=graph.elem.name,
        memory=memory,
        layers=layers,
        inputs=[n for n, _ in graph.inputs],
        outputs=outputs,
        meta={"shapes": {k: list(v) for k, v in shapes.items()}},
    )


# --------------------------------------------------------------------------- #
# parameter / input initialization
# --------------------------------------------------------------------------- #

def init_arrays(graph: LayerGraph, seed: Optional[int] = None,
                zero: bool = False) -> dict[str, "object"]:
    """Deterministic parameter and input arrays (numpy-style shapes), keyed by
    allocation name.  Weights are variance-scaled so deep stacks of relu layers
    keep activations O(1)."""
    import numpy as np

    shapes = infer_shapes(graph)
    rng = np.random.default_rng(seed if seed is not None else 0)
    out: dict[str, np.ndarray] = {}
    integer = graph.elem.np_name.startswith("int")

    def make(shape, scale=1.0):
        if zero:
            return np.zeros(shape, dtype=graph.elem.np_name)
        if integer:
            return rng.integers(-2, 3, size=shape).astype(graph.elem.np_name)
        return (rng.standard_normal(shape) * scale).astype(graph.elem.np_name)

    for name, shape in graph.inputs:
        out[name] = make(shape)
    for layer in topo_schedule(graph):
        in_shapes = [shapes[s] for s in layer.inputs]
        for pname, pshape in _param_shapes(layer, in_shapes).items():
            if pname == "w":
                fan_in = int(math.prod(pshape)) // pshape[0] if layer.kind == "conv2d" \
                    else pshape[0]
                out[f"{layer.name}.w"] = make(pshape, scale=math.sqrt(2.0 / max(1, fan_in)))
            else:
                out[f"{layer.name}.{pname}"] = make(pshape, scale=0.1)
    return out
