"""AOT C source emission.

Per layer the emitted tree holds four files: ``<layer>.h`` (host-callable
declaration), ``<layer>.c`` (wrapper: fills the parameter record and launches
the kernels), ``<layer>.slave.c`` (per-kernel compute functions with static
scratchpad arrays and DMA calls at the planned loop levels) and
``<layer>_para.h`` (the parameter record, visible only to the wrapper and the
kernels).  ``main.c`` runs four stages: arena allocation, parameter/input
loading from a CGW1 blob, computation calls in topological order, output dump.

The emitted code targets the neutral runtime API in ``cg_runtime.h``
(cg_dma_get/cg_dma_put/cg_spawn/cg_pe_id/cg_num_pes/cg_sync), so the tree
compiles with any host C compiler.  Emission is deterministic and byte-stable.

Remainder handling matches the simulator: every transfer size is clamped at
runtime; dimensions folded into a contiguous block at compile time are exactly
those that can never clamp (full span, no outer or partitioned dependence).
"""

from __future__ import annotations

import math
from typing import Mapping

from .dma import TensorGeometry, kernel_geometries
from .ir import (
    BinOp,
    Const,
    ELEM_KINDS,
    EPILOGUE_BIAS_RELU,
    EPILOGUE_NONE,
    Expr,
    In,
    IterVar,
    Select,
    SplitSub,
)
from .plan import DmaOp, KernelPlan, LayerPlan, ProgramPlan


class Emitter:
    def __init__(self):
        self.lines: list[str] = []
        self.depth = 0

    def w(self, text: str = "") -> None:
        self.lines.append(("    " * self.depth + text) if text else "")

    def open(self, text: str = "") -> None:
        self.w((text + " {") if text else "{")
        self.depth += 1

    def close(self, suffix: str = "") -> None:
        self.depth -= 1
        self.w("}" + suffix)

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


def _cname(name: str) -> str:
    return "".join(ch if (ch.isalnum() or ch == "_") else "_" for ch in name)


def _const_literal(value, ctype: str) -> str:
    if ctype == "float":
        if float(value) == -3.402823466e38:
            return "-3.402823466e+38f"
        if float(value) == int(value) and abs(value) < 1e9:
            return f"{float(value):.1f}f"
        return f"{float(value)!r}f"
    v = int(value)
    if v == -2147483648:
        return "(-2147483647 - 1)"
    return str(v)


def _expr_c(expr: Expr, operands: list[str], ctype: str) -> str:
    if isinstance(expr, In):
        return operands[expr.slot]
    if isinstance(expr, Const):
        return _const_literal(expr.value, ctype)
    if isinstance(expr, BinOp):
        a = _expr_c(expr.lhs, operands, ctype)
        b = _expr_c(expr.rhs, operands, ctype)
        if expr.op == "add":
            return f"({a} + {b})"
        if expr.op == "mul":
            return f"({a} * {b})"
        return f"cg_max({a}, {b})"
    if isinstance(expr, Select):
        c = _expr_c(expr.cond, operands, ctype)
        t = _expr_c(expr.then, operands, ctype)
        o = _expr_c(expr.other, operands, ctype)
        return f"(({c}) != 0 ? ({t}) : ({o}))"
    raise TypeError(f"unknown expr {expr!r}")


class KernelEmitter:
    """Emits one kernel's slave function."""

    def __init__(self, kernel: KernelPlan, fn_name: str, para: str, ctype: str):
        self.k = kernel
        self.fn = fn_name
        self.para = para
        self.ctype = ctype
        self.geoms: Mapping[str, TensorGeometry] = kernel_geometries(kernel)
        self.buffer = kernel.buffer
        self.outer_names = [s.var_name for s in kernel.outer]
        self.tile_names = [s.var_name for s in kernel.tiles]
        self.e = Emitter()

    def buf(self, tensor: str) -> str:
        return f"buf_{self.fn}_{_cname(tensor)}"

    # -- var helpers ----------------------------------------------------------- #

    def _is_partition(self, name: str) -> bool:
        return self.k.partition.var_name == name

    def _limit(self, var: IterVar) -> str:
        return f"{var.name}_end" if self._is_partition(var.name) else str(var.extent)

    def _base(self, var: IterVar) -> str:
        if var.name in self.outer_names:
            return f"{var.name}_b"
        if self._is_partition(var.name):
            return f"{var.name}_begin"
        return "0"

    def _nvar(self, var: IterVar) -> str:
        tile = self.buffer.get(var.name, 1)
        if tile == 1:
            return "1"
        if (tile == var.extent and not self._is_partition(var.name)
                and var.name not in self.outer_names):
            return str(tile)
        return f"{var.name}_n"

    # -- lineage ---------------------------------------------------------------- #

    def _root_base_expr(self, var: IterVar) -> str:
        """Inline C expression for a var's tile base.  Ancestor vars expand
        through their split/fuse derivation; a derivation can only reference
        outer loop counters whose loops enclose every transfer that uses it
        (the insertion level already waits for all correlated outer vars)."""
        if any(v is var for v in self.k.nest.vars):
            return self._base(var)
        for sub in self.k.nest.subs:
            if isinstance(sub, SplitSub) and sub.parent is var:
                o = self._root_base_expr(sub.outer)
                i = self._root_base_expr(sub.inner)
                return f"({o} * {sub.factor} + {i})"
            if not isinstance(sub, SplitSub):
                if sub.hi is var:
                    return f"({self._root_base_expr(sub.fused)} / {sub.lo_extent})"
                if sub.lo is var:
                    return f"({self._root_base_expr(sub.fused)} % {sub.lo_extent})"
        raise ValueError(f"var {var.name} is not derivable from the nest")

    # -- geometry expressions ----------------------------------------------------- #

    def _dim_base_expr(self, geom: TensorGeometry, d: int) -> str:
        index = geom.view.indices[d]
        parts = [str(index.const)] if index.const else []
        for var, coeff in index.terms:
            base = self._root_base_expr(var)
            if base == "0":
                continue
            parts.append(base if coeff == 1 else f"{coeff} * {base}")
        return " + ".join(parts) if parts else "0"

    def _dim_span_expr(self, geom: TensorGeometry, d: int) -> str:
        exp = geom.view.exps[d]
        const = 1
        parts = []
        for var, coeff in sorted(exp.coeffs.items(), key=lambda it: it[0].name):
            n = self._nvar(var)
            if n == "1":
                continue
            if n.isdigit():
                const += coeff * (int(n) - 1)
            else:
                parts.append(f"{coeff} * ({n} - 1)" if coeff != 1 else f"({n} - 1)")
        parts.insert(0, str(const))
        return " + ".join(parts)

    def _stable_full(self, geom: TensorGeometry, d: int) -> bool:
        dim = geom.dims[d]
        if dim.span_full != dim.extent:
            return False
        if geom.view.exps[d].nonlinear:
            return False
        if self._dim_base_expr(geom, d) != "0":
            return False
        return self._dim_span_expr(geom, d).isdigit()

    # -- DMA emission ---------------------------------------------------------------- #

    def _emit_transfer(self, op: DmaOp) -> None:
        geom = self.geoms[op.tensor]
        t = _cname(op.tensor)
        rank = len(geom.dims)
        fn = "cg_dma_get" if op.kind == "get" else "cg_dma_put"
        j = 0
        while j < rank and self._stable_full(geom, j):
            j += 1
        lead = math.prod(g.extent for g in geom.dims[:j])
        self.e.open(f"/* {op.kind} {op.tensor} */")
        mem_base_terms = []
        for d in range(rank):
            base = self._dim_base_expr(geom, d)
            if base != "0":
                self.e.w(f"long {t}_o{d} = {base};")
                mem_base_terms.append(f"{t}_o{d} * {geom.dims[d].pitch}L")
        for d in range(j, rank):
            self.e.w(f"long {t}_s{d} = {self._dim_span_expr(geom, d)};")
        mem = " + ".join(mem_base_terms) if mem_base_terms else "0"
        if j >= rank:
            self.e.w(f"unsigned long {t}_blk = {lead}UL * sizeof({self.ctype});")
            self._emit_call(fn, op, t, mem, "0", f"{t}_blk", f"{t}_blk", "1UL")
        else:
            self.e.w(f"unsigned long {t}_blk = (unsigned long)({t}_s{j}) * "
                     f"{lead}UL * sizeof({self.ctype});")
            strided = j + 1
            # scratchpad pitches of the looped dims follow the runtime spans
            if strided + 1 < rank:
                self.e.w(f"long {t}_q = {t}_s{j} * {lead}L * {t}_s{strided};")
                for d in range(strided + 1, rank):
                    self.e.w(f"long {t}_q{d} = {t}_q;")
                    if d + 1 < rank:
                        self.e.w(f"{t}_q = {t}_q * {t}_s{d};")
            for d in range(rank - 1, strided, -1):
                self.e.open(f"for (long {t}_l{d} = 0; {t}_l{d} < {t}_s{d}; "
                            f"++{t}_l{d})")
            mem_terms = [mem] if mem != "0" else []
            scr_terms = []
            for d in range(strided + 1, rank):
                mem_terms.append(f"{t}_l{d} * {geom.dims[d].pitch}L")
                scr_terms.append(f"{t}_l{d} * {t}_q{d}")
            mem_e = " + ".join(mem_terms) if mem_terms else "0"
            scr_e = " + ".join(scr_terms) if scr_terms else "0"
            if strided < rank:
                count = f"(unsigned long)({t}_s{strided})"
                stride = f"{geom.dims[strided].pitch}UL * sizeof({self.ctype})"
            else:
                count = "1UL"
                stride = f"{t}_blk"
            self._emit_call(fn, op, t, mem_e, scr_e, f"{t}_blk", stride, count)
            for d in range(rank - 1, strided, -1):
                self.e.close()
        self.e.close()

    def _emit_call(self, fn: str, op: DmaOp, t: str, mem: str, scr: str,
                   block: str, stride: str, count: str) -> None:
        buf = f"{self.buf(op.tensor)} + ({scr})"
        tsr = f"{t} + ({mem})"
        if op.kind == "get":
            self.e.w(f"{fn}({buf}, {tsr}, {block}, {stride}, {count});")
        else:
            self.e.w(f"{fn}({tsr}, {buf}, {block}, {stride}, {count});")

    def _emit_init(self, op: DmaOp) -> None:
        spec = self.k.buffers[op.tensor]
        elems = spec.nbytes // ELEM_KINDS[
            self.k.nest.body.output.tensor.elem.name].bytes
        init = _const_literal(self.k.nest.body.init, self.ctype)
        self.e.open(f"for (long i_ = 0; i_ < {elems}; ++i_)")
        self.e.w(f"{self.buf(op.tensor)}[i_] = {init};")
        self.e.close()

    def _emit_epilogue(self, op: DmaOp) -> None:
        body = self.k.nest.body
        geom = self.geoms[op.tensor]
        t = _cname(op.tensor)
        rank = len(geom.dims)
        bias_dims: set[int] = set()
        if body.epilogue == EPILOGUE_BIAS_RELU:
            for bindex in body.bias.indices:
                for var, _ in bindex.terms:
                    bias_dims.add(self._output_dim_of(var))
        self.e.open(f"/* fused epilogue for {op.tensor} */")
        for d in range(rank):
            self.e.w(f"long {t}_es{d} = {self._dim_span_expr(geom, d)};")
            if d in bias_dims:
                self.e.w(f"long {t}_eo{d} = {self._dim_base_expr(geom, d)};")
        for d in range(rank - 1, -1, -1):
            self.e.open(f"for (long e{d} = 0; e{d} < {t}_es{d}; ++e{d})")
        terms = []
        pitch = "1"
        for d in range(rank):
            terms.append(f"e{d}" if pitch == "1" else f"e{d} * {pitch}")
            pitch = f"{t}_es0" if d == 0 else f"{pitch} * {t}_es{d}"
        self.e.w(f"long eo_ = {' + '.join(terms)};")
        val = f"{self.buf(op.tensor)}[eo_]"
        if body.epilogue == EPILOGUE_BIAS_RELU:
            bias = body.bias
            bgeom = self.geoms[bias.tensor.name]
            bias_terms = []
            bq = 1
            for bd, bindex in enumerate(bias.indices):
                coord = str(bindex.const) if bindex.const else "0"
                for var, coeff in bindex.terms:
                    od = self._output_dim_of(var)
                    vexpr = f"({t}_eo{od} + e{od} - {body.output.indices[od].const})"
                    coord = vexpr if coeff == 1 else f"{coeff} * {vexpr}"
                    if bindex.const:
                        coord = f"{coord} + {bindex.const}"
                base_b = self._dim_base_expr(bgeom, bd)
                local = f"(({coord}) - ({base_b}))" if base_b != "0" else f"({coord})"
                bias_terms.append(local if bq == 1 else f"{local} * {bq}")
                bq *= bgeom.dims[bd].span_full
            self.e.w(f"long ebo_ = {' + '.join(bias_terms)};")
            val = f"({val} + {self.buf(bias.tensor.name)}[ebo_])"
        zero = _const_literal(0, self.ctype)
        self.e.w(f"{self.buf(op.tensor)}[eo_] = cg_max({val}, {zero});")
        for _ in range(rank):
            self.e.close()
        self.e.close()

    def _output_dim_of(self, var: IterVar) -> int:
        for od, oindex in enumerate(self.k.nest.body.output.indices):
            if any(v is var for v in oindex.vars()):
                return od
        raise ValueError(f"bias var {var.name} does not index the output")

    # -- compute ------------------------------------------------------------------ #

    def _emit_compute(self) -> None:
        k = self.k
        body = k.nest.body
        opened = 0
        for spec in k.tiles:
            var = k.var(spec.var_name)
            self.e.open(f"for (long {var.name}_l = 0; {var.name}_l < "
                        f"{self._nvar(var)}; ++{var.name}_l)")
            opened += 1
        for v in k.nest.vars:
            if v.name in self.tile_names:
                self.e.w(f"long {v.name}_v = {self._base(v)} + {v.name}_l;")
            else:
                self.e.w(f"long {v.name}_v = {self._base(v)};")
        for sub in reversed(k.nest.subs):
            if isinstance(sub, SplitSub):
                self.e.w(f"long {sub.parent.name}_v = {sub.outer.name}_v * "
                         f"{sub.factor} + {sub.inner.name}_v;")
            else:
                self.e.w(f"long {sub.hi.name}_v = {sub.fused.name}_v / {sub.lo_extent};")
                self.e.w(f"long {sub.lo.name}_v = {sub.fused.name}_v % {sub.lo_extent};")

        operands = [self._emit_operand(acc, f"in{slot}_")
                    for slot, acc in enumerate(body.inputs)]
        out_ref = self._emit_operand(body.output, "out_")
        expr = _expr_c(body.expr, operands, self.ctype)
        if body.reduce_vars:
            if body.reduce_op == "add":
                self.e.w(f"{out_ref} = {out_ref} + {expr};")
            else:
                self.e.w(f"{out_ref} = cg_max({out_ref}, {expr});")
        else:
            self.e.w(f"{out_ref} = {expr};")
        for _ in range(opened):
            self.e.close()

    def _emit_operand(self, acc, tag: str) -> str:
        t = _cname(acc.tensor.name)
        geom = self.geoms.get(acc.tensor.name)
        terms = []
        if geom is None:
            pitches = acc.tensor.pitches()
            for d, index in enumerate(acc.indices):
                dim_e = self._index_value_expr(index)
                terms.append(f"({dim_e}) * {pitches[d]}L")
            self.e.w(f"long {tag}{t} = {' + '.join(terms) if terms else '0'};")
            return f"{t}[{tag}{t}]"
        q = "1"
        for d, index in enumerate(acc.indices):
            dim_e = self._index_value_expr(index)
            base = self._dim_base_expr(geom, d)
            local = f"({dim_e} - ({base}))" if base != "0" else f"({dim_e})"
            terms.append(local if q == "1" else f"{local} * {q}")
            if d + 1 < len(acc.indices):
                span = self._dim_span_expr(geom, d)
                nxt = span if q == "1" else f"{q} * ({span})"
                self.e.w(f"long {tag}{t}_q{d + 1} = {nxt};")
                q = f"{tag}{t}_q{d + 1}"
        self.e.w(f"long {tag}{t} = {' + '.join(terms)};")
        return f"{self.buf(acc.tensor.name)}[{tag}{t}]"

    def _index_value_expr(self, index) -> str:
        parts = [str(index.const)] if index.const else []
        for var, coeff in index.terms:
            v = f"{var.name}_v"
            parts.append(v if coeff == 1 else f"{coeff} * {v}")
        return " + ".join(parts) if parts else "0"

    # -- the function ---------------------------------------------------------------- #

    def emit(self) -> str:
        k = self.k
        e = self.e
        entries: dict[int, list[DmaOp]] = {}
        exits: dict[int, list[DmaOp]] = {}
        for op in k.dmas:
            (exits if op.kind == "put" else entries).setdefault(op.level, []).append(op)

        e.open(f"void {self.fn}(void* para_)")
        e.w(f"const {self.para}* p = (const {self.para}*)para_;")
        e.w(f"{self.ctype}* arena = ({self.ctype}*)p->arena;")
        for name in k.bindings:
            t = _cname(name)
            e.w(f"{self.ctype}* {t} = arena + p->{t}_off;")
        e.w("int pe = cg_pe_id();")
        pvar = k.partition.var_name
        if pvar is None:
            e.w("if (pe != 0) return; /* single-PE fallback */")
        else:
            var = k.var(pvar)
            e.w(f"long {pvar}_begin = (long)pe * {k.partition.chunk};")
            e.w(f"long {pvar}_end = {pvar}_begin + {k.partition.chunk};")
            e.w(f"if ({pvar}_begin > {var.extent}) {pvar}_begin = {var.extent};")
            e.w(f"if ({pvar}_end > {var.extent}) {pvar}_end = {var.extent};")
            e.w(f"if ({pvar}_begin >= {pvar}_end) return; /* idle PE */")
        for spec in k.tiles:
            if spec.var_name in self.outer_names:
                continue
            var = k.var(spec.var_name)
            if self._is_partition(var.name):
                e.w(f"long {var.name}_n = {var.name}_end - {var.name}_begin;")
                e.w(f"if ({var.name}_n > {spec.size}) {var.name}_n = {spec.size};")
            elif spec.size != var.extent:
                e.w(f"long {var.name}_n = {spec.size};")
        def walk(level: int) -> None:
            for op in entries.get(level, ()):
                if op.kind == "init":
                    self._emit_init(op)
                else:
                    self._emit_transfer(op)
            if level == len(k.outer):
                self._emit_compute()
            else:
                spec = k.outer[level]
                var = k.var(spec.var_name)
                begin = (f"{var.name}_begin" if self._is_partition(var.name)
                         else "0")
                e.open(f"for (long {var.name}_b = {begin}; {var.name}_b < "
                       f"{self._limit(var)}; {var.name}_b += {spec.tile})")
                if spec.tile > 1:
                    e.w(f"long {var.name}_n = {self._limit(var)} - {var.name}_b;")
                    e.w(f"if ({var.name}_n > {spec.tile}) {var.name}_n = {spec.tile};")
                walk(level + 1)
                e.close()
            for op in exits.get(level, ()):
                if op.apply_epilogue and self.k.nest.body.epilogue != EPILOGUE_NONE:
                    self._emit_epilogue(op)
                self._emit_transfer(op)

        walk(0)
        e.close()
        return e.text()


# --------------------------------------------------------------------------- #
# layer and program emission
# --------------------------------------------------------------------------- #

def _expr_uses_max(expr: Expr) -> bool:
    if isinstance(expr, BinOp):
        return expr.op == "max" or _expr_uses_max(expr.lhs) or _expr_uses_max(expr.rhs)
    if isinstance(expr, Select):
        return any(_expr_uses_max(e) for e in (expr.cond, expr.then, expr.other))
    return False


def _needs_max(kernel: KernelPlan) -> bool:
    body = kernel.nest.body
    return (body.reduce_op == "max" or body.epilogue != EPILOGUE_NONE
            or _expr_uses_max(body.expr))


def _layer_locals(layer: LayerPlan) -> dict[str, tuple[str, int]]:
    out: dict[str, tuple[str, int]] = {}
    for k in layer.kernels:
        for local, binding in k.bindings.items():
            if local in out and out[local] != binding:
                raise ValueError(
                    f"layer {layer.name}: local {local!r} bound inconsistently")
            out[local] = binding
    return out


def _slave_fn(layer: LayerPlan, kernel: KernelPlan) -> str:
    suffix = _cname(kernel.name.split(".", 1)[1]) if "." in kernel.name else "main"
    return f"{_cname(layer.name)}_slave_{suffix}"


def emit_layer(layer: LayerPlan, plan: ProgramPlan) -> dict[str, str]:
    """Emit the four per-layer files."""
    elem = ELEM_KINDS[plan.elem_name]
    ctype = elem.c_type
    lname = _cname(layer.name)
    para = f"Para_{lname}"
    guard = f"CG_{lname.upper()}"
    locals_ = _layer_locals(layer)

    para_h = Emitter()
    para_h.w(f"#ifndef {guard}_PARA_H")
    para_h.w(f"#define {guard}_PARA_H")
    para_h.w()
    para_h.open("typedef struct")
    para_h.w("void* arena;")
    for local in locals_:
        para_h.w(f"unsigned long {_cname(local)}_off;")
    para_h.close(f" {para};")
    para_h.w()
    for kernel in layer.kernels:
        para_h.w(f"void {_slave_fn(layer, kernel)}(void* para_);")
    para_h.w()
    para_h.w(f"#endif /* {guard}_PARA_H */")

    header = Emitter()
    header.w(f"#ifndef {guard}_H")
    header.w(f"#define {guard}_H")
    header.w()
    header.w(f"void run_{lname}(void* arena);")
    header.w()
    header.w(f"#endif /* {guard}_H */")

    wrapper = Emitter()
    wrapper.w('#include "cg_runtime.h"')
    wrapper.w(f'#include "{layer.name}_para.h"')
    wrapper.w(f'#include "{layer.name}.h"')
    wrapper.w()
    wrapper.open(f"void run_{lname}(void* arena)")
    wrapper.w(f"{para} para;")
    wrapper.w("para.arena = arena;")
    isz = elem.bytes
    for local, (alloc, extra) in locals_.items():
        off = plan.memory.offset_of(alloc, extra)
        wrapper.w(f"para.{_cname(local)}_off = {off // isz}UL; /* {alloc} */")
    for kernel in layer.kernels:
        wrapper.w(f"cg_spawn({_slave_fn(layer, kernel)}, &para);")
    wrapper.close()

    slave = Emitter()
    slave.w('#include "cg_runtime.h"')
    slave.w(f'#include "{layer.name}_para.h"')
    slave.w()
    if any(_needs_max(k) for k in layer.kernels):
        if ctype == "float":
            slave.w("static float cg_max(float a, float b) { return a > b ? a : b; }")
        else:
            slave.w("static int cg_max(int a, int b) { return a > b ? a : b; }")
        slave.w()
    for kernel in layer.kernels:
        fn = _slave_fn(layer, kernel)
        for name, spec in kernel.buffers.items():
            slave.w(f"static {ctype} buf_{fn}_{_cname(name)}"
                    f"[{spec.nbytes // elem.bytes}];")
    slave.w()
    for kernel in layer.kernels:
        fn = _slave_fn(layer, kernel)
        slave.w(KernelEmitter(kernel, fn, para, ctype).emit().rstrip())
        slave.w()

    return {
        f"{layer.name}.h": header.text(),
        f"{layer.name}.c": wrapper.text(),
        f"{layer.name}.slave.c": slave.text(),
        f"{layer.name}_para.h": para_h.text(),
    }


def emit_main(plan: ProgramPlan) -> str:
    e = Emitter()
    e.w("#include <stdio.h>")
    e.w("#include <stdlib.h>")
    e.w("#include <string.h>")
    e.w('#include "cg_runtime.h"')
    for layer in plan.layers:
        e.w(f'#include "{layer.name}.h"')
    e.w()
    e.open("typedef struct")
    e.w("const char* name;")
    e.w("unsigned long offset_bytes;")
    e.w("unsigned long nbytes;")
    e.close(" CgAlloc;")
    e.w()
    allocs = list(plan.memory.allocations.items())
    e.open(f"static const CgAlloc cg_allocs[{max(1, len(allocs))}] =")
    for name, (off, nbytes) in allocs:
        e.w(f'{{ "{name}", {off}UL, {nbytes}UL }},')
    if not allocs:
        e.w('{ "", 0UL, 0UL },')
    e.close(";")
    e.w(f"static const unsigned long cg_num_allocs = {len(allocs)}UL;")
    e.w(f"static const unsigned long cg_arena_bytes = {plan.memory.arena_bytes}UL;")
    e.w()
    e.w("""\
static int cg_load_blob(const char* path, char* arena) {
    if (!path || strcmp(path, "-") == 0) return 0; /* zero-fill */
    FILE* fh = fopen(path, "rb");
    if (!fh) { fprintf(stderr, "cannot open %s\\n", path); return 1; }
    char magic[4];
    if (fread(magic, 1, 4, fh) != 4 || memcmp(magic, "CGW1", 4) != 0) {
        fprintf(stderr, "%s: bad magic\\n", path);
        fclose(fh);
        return 1;
    }
    for (;;) {
        unsigned int nlen = 0;
        if (fread(&nlen, 4, 1, fh) != 1) break;
        char name[256];
        if (nlen >= sizeof(name)) { fclose(fh); return 1; }
        if (fread(name, 1, nlen, fh) != nlen) { fclose(fh); return 1; }
        name[nlen] = 0;
        unsigned long plen = 0;
        if (fread(&plen, 8, 1, fh) != 1) { fclose(fh); return 1; }
        unsigned long i;
        for (i = 0; i < cg_num_allocs; ++i) {
            if (strcmp(cg_allocs[i].name, name) == 0) break;
        }
        if (i == cg_num_allocs) {
            fseek(fh, (long)plen, SEEK_CUR); /* unknown record: skip */
            continue;
        }
        if (plen != cg_allocs[i].nbytes) {
            fprintf(stderr, "%s: %s holds %lu bytes, expected %lu\\n",
                    path, name, plen, cg_allocs[i].nbytes);
            fclose(fh);
            return 1;
        }
        if (fread(arena + cg_allocs[i].offset_bytes, 1, plen, fh) != plen) {
            fclose(fh);
            return 1;
        }
    }
    fclose(fh);
    return 0;
}

static int cg_dump_record(FILE* fh, const char* name, const char* arena) {
    unsigned long i;
    for (i = 0; i < cg_num_allocs; ++i) {
        if (strcmp(cg_allocs[i].name, name) == 0) break;
    }
    if (i == cg_num_allocs) return 1;
    unsigned int nlen = (unsigned int)strlen(name);
    unsigned long plen = cg_allocs[i].nbytes;
    fwrite(&nlen, 4, 1, fh);
    fwrite(name, 1, nlen, fh);
    fwrite(&plen, 8, 1, fh);
    fwrite(arena + cg_allocs[i].offset_bytes, 1, plen, fh);
    return 0;
}""")
    e.w()
    e.open("int main(int argc, char** argv)")
    e.w('const char* params_path = argc > 1 ? argv[1] : "-";')
    e.w('const char* input_path = argc > 2 ? argv[2] : "-";')
    e.w('const char* output_path = argc > 3 ? argv[3] : "output.bin";')
    e.w()
    e.w("/* stage 1: memory allocation */")
    e.w("char* arena = (char*)calloc(1, cg_arena_bytes);")
    e.w('if (!arena) { fprintf(stderr, "arena allocation failed\\n"); return 1; }')
    e.w()
    e.w("/* stage 2: parameter and input initialization */")
    e.w("if (cg_load_blob(params_path, arena)) return 1;")
    e.w("if (cg_load_blob(input_path, arena)) return 1;")
    e.w()
    e.w("/* stage 3: computation */")
    for layer in plan.layers:
        e.w(f"run_{_cname(layer.name)}(arena);")
    e.w()
    e.w("/* stage 4: output dump */")
    e.w('FILE* out = fopen(output_path, "wb");')
    e.w('if (!out) { fprintf(stderr, "cannot open %s\\n", output_path); return 1; }')
    e.w('fwrite("CGW1", 1, 4, out);')
    for name in plan.outputs:
        e.w(f'if (cg_dump_record(out, "{name}", arena)) return 1;')
    e.w("fclose(out);")
    e.w("free(arena);")
    e.w("return 0;")
    e.close()
    return e.text()


def emit_program(plan: ProgramPlan) -> dict[str, str]:
    """Full source tree: main.c plus four files per layer (manifest 1 + 4L)."""
    tree = {"main.c": emit_main(plan)}
    for layer in plan.layers:
        tree.update(emit_layer(layer, plan))
    return tree


def write_tree(tree: Mapping[str, str], out_dir) -> list[str]:
    import os
    os.makedirs(out_dir, exist_ok=True)
    names = sorted(tree)
    for name in names:
        with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
            fh.write(tree[name])
    return names
