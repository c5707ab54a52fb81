"""Plan (de)serialization: a ProgramPlan round-trips through plan.json so that
compile-then-simulate reproduces direct simulation exactly."""

from __future__ import annotations

from .ir import (
    AffineIndex,
    BinOp,
    ComputeDef,
    Const,
    ELEM_KINDS,
    Expr,
    FuseSub,
    In,
    IterVar,
    LoopNest,
    Select,
    SplitSub,
    TensorAccess,
    TensorDecl,
)
from .machine import MachineConfig
from .plan import (
    BufferSpec,
    DmaOp,
    KernelPlan,
    LayerPlan,
    LoopSpec,
    MemoryPlan,
    Partition,
    ProgramPlan,
    TileLoopSpec,
)

PLAN_FORMAT = "swsched-plan-v1"


# --------------------------------------------------------------------------- #
# expressions
# --------------------------------------------------------------------------- #

def expr_to_json(expr: Expr):
    if isinstance(expr, In):
        return {"in": expr.slot}
    if isinstance(expr, Const):
        return {"const": expr.value}
    if isinstance(expr, BinOp):
        return {"op": expr.op, "lhs": expr_to_json(expr.lhs),
                "rhs": expr_to_json(expr.rhs)}
    if isinstance(expr, Select):
        return {"select": [expr_to_json(expr.cond), expr_to_json(expr.then),
                           expr_to_json(expr.other)]}
    raise TypeError(f"unknown expr {expr!r}")


def expr_from_json(doc) -> Expr:
    if "in" in doc:
        return In(doc["in"])
    if "const" in doc:
        return Const(doc["const"])
    if "op" in doc:
        return BinOp(doc["op"], expr_from_json(doc["lhs"]), expr_from_json(doc["rhs"]))
    if "select" in doc:
        c, t, o = doc["select"]
        return Select(expr_from_json(c), expr_from_json(t), expr_from_json(o))
    raise ValueError(f"bad expr document {doc}")


# --------------------------------------------------------------------------- #
# nests
# --------------------------------------------------------------------------- #

def _collect_vars(nest: LoopNest) -> dict[str, IterVar]:
    out = {v.name: v for v in nest.vars}
    for sub in nest.subs:
        if isinstance(sub, SplitSub):
            for v in (sub.parent, sub.outer, sub.inner):
                out[v.name] = v
        else:
            for v in (sub.fused, sub.hi, sub.lo):
                out[v.name] = v
    for v in nest.body.all_vars():
        out[v.name] = v
    return out


def _index_to_json(index: AffineIndex):
    return {"terms": [[v.name, c] for v, c in index.terms], "const": index.const}


def _access_to_json(acc: TensorAccess):
    return {
        "tensor": {"name": acc.tensor.name, "shape": list(acc.tensor.shape),
                   "elem": acc.tensor.elem.name},
        "indices": [_index_to_json(i) for i in acc.indices],
        "mode": acc.mode,
    }


def nest_to_json(nest: LoopNest) -> dict:
    all_vars = _collect_vars(nest)
    body = nest.body
    doc = {
        "all_vars": [{"name": v.name, "extent": v.extent, "kind": v.kind}
                     for v in all_vars.values()],
        "vars": [v.name for v in nest.vars],
        "subs": [],
        "body": {
            "output": _access_to_json(body.output),
            "inputs": [_access_to_json(a) for a in body.inputs],
            "expr": expr_to_json(body.expr),
            "reduce_vars": [v.name for v in body.reduce_vars],
            "init": body.init,
            "reduce_op": body.reduce_op,
            "epilogue": body.epilogue,
            "bias": _access_to_json(body.bias) if body.bias is not None else None,
        },
        "buffered": [[name, [v.name for v in vs]] for name, vs in nest.buffered],
    }
    for sub in nest.subs:
        if isinstance(sub, SplitSub):
            doc["subs"].append({"split": {
                "parent": sub.parent.name, "outer": sub.outer.name,
                "inner": sub.inner.name, "factor": sub.factor}})
        else:
            doc["subs"].append({"fuse": {
                "fused": sub.fused.name, "hi": sub.hi.name, "lo": sub.lo.name,
                "lo_extent": sub.lo_extent}})
    return doc


def nest_from_json(doc: dict) -> LoopNest:
    vars_ = {d["name"]: IterVar(d["name"], d["extent"], d["kind"])
             for d in doc["all_vars"]}
    decls: dict[str, TensorDecl] = {}

    def access(adoc) -> TensorAccess:
        t = adoc["tensor"]
        if t["name"] not in decls:
            decls[t["name"]] = TensorDecl(t["name"], tuple(t["shape"]),
                                          ELEM_KINDS[t["elem"]])
        indices = tuple(
            AffineIndex(tuple((vars_[n], c) for n, c in idoc["terms"]), idoc["const"])
            for idoc in adoc["indices"])
        return TensorAccess(decls[t["name"]], indices, adoc["mode"])

    b = doc["body"]
    body = ComputeDef(
        output=access(b["output"]),
        inputs=tuple(access(a) for a in b["inputs"]),
        expr=expr_from_json(b["expr"]),
        reduce_vars=tuple(vars_[n] for n in b["reduce_vars"]),
        init=b["init"],
        reduce_op=b["reduce_op"],
        epilogue=b["epilogue"],
        bias=access(b["bias"]) if b.get("bias") else None,
    )
    subs = []
    for sdoc in doc["subs"]:
        if "split" in sdoc:
            s = sdoc["split"]
            subs.append(SplitSub(parent=vars_[s["parent"]], outer=vars_[s["outer"]],
                                 inner=vars_[s["inner"]], factor=s["factor"]))
        else:
            s = sdoc["fuse"]
            subs.append(FuseSub(fused=vars_[s["fused"]], hi=vars_[s["hi"]],
                                lo=vars_[s["lo"]], lo_extent=s["lo_extent"]))
    buffered = tuple((name, tuple(vars_[n] for n in vs))
                     for name, vs in doc.get("buffered", []))
    return LoopNest(vars=tuple(vars_[n] for n in doc["vars"]), body=body,
                    subs=tuple(subs), buffered=buffered)


# --------------------------------------------------------------------------- #
# plans
# --------------------------------------------------------------------------- #

def kernel_to_json(k: KernelPlan) -> dict:
    return {
        "name": k.name,
        "nest": nest_to_json(k.nest),
        "partition": {
            "var": k.partition.var_name, "num_pes": k.partition.num_pes,
            "chunk": k.partition.chunk,
            "bounds": [list(b) for b in k.partition.bounds],
        },
        "buffer": dict(k.buffer),
        "eff_extent": dict(k.eff_extent),
        "outer": [{"var": s.var_name, "tile": s.tile, "trips_full": s.trips_full}
                  for s in k.outer],
        "tiles": [{"var": s.var_name, "size": s.size} for s in k.tiles],
        "dmas": [{"tensor": d.tensor, "kind": d.kind, "level": d.level,
                  "accumulate": d.accumulate, "apply_epilogue": d.apply_epilogue}
                 for d in k.dmas],
        "buffers": {n: {"spans": list(b.spans), "offset_bytes": b.offset_bytes,
                        "nbytes": b.nbytes} for n, b in k.buffers.items()},
        "unbuffered": sorted(k.unbuffered),
        "bindings": {n: list(b) for n, b in k.bindings.items()},
        "footprint_bytes": k.footprint_bytes,
        "static": k.static,
        "order_info": k.order_info,
        "plan_trace": k.plan_trace,
    }


def kernel_from_json(doc: dict) -> KernelPlan:
    p = doc["partition"]
    return KernelPlan(
        name=doc["name"],
        nest=nest_from_json(doc["nest"]),
        partition=Partition(var_name=p["var"], num_pes=p["num_pes"],
                            chunk=p["chunk"],
                            bounds=tuple(tuple(b) for b in p["bounds"])),
        buffer=dict(doc["buffer"]),
        eff_extent=dict(doc["eff_extent"]),
        outer=[LoopSpec(s["var"], s["tile"], s["trips_full"]) for s in doc["outer"]],
        tiles=[TileLoopSpec(s["var"], s["size"]) for s in doc["tiles"]],
        dmas=[DmaOp(d["tensor"], d["kind"], d["level"], d["accumulate"],
                    d["apply_epilogue"]) for d in doc["dmas"]],
        buffers={n: BufferSpec(n, tuple(b["spans"]), b["offset_bytes"], b["nbytes"])
                 for n, b in doc["buffers"].items()},
        unbuffered=set(doc["unbuffered"]),
        bindings={n: (b[0], b[1]) for n, b in doc["bindings"].items()},
        footprint_bytes=doc["footprint_bytes"],
        static=doc["static"],
        order_info=doc.get("order_info", {}),
        plan_trace=doc.get("plan_trace", []),
    )


def plan_to_json(plan: ProgramPlan) -> dict:
    m = plan.machine
    return {
        "format": PLAN_FORMAT,
        "machine": {"ldm_bytes": m.ldm_bytes, "num_pes": m.num_pes,
                    "init_chunk": m.init_chunk, "reserve_bytes": m.reserve_bytes},
        "elem": plan.elem_name,
        "memory": {
            "allocations": {n: list(v) for n, v in plan.memory.allocations.items()},
            "workspace": list(plan.memory.workspace),
            "arena_bytes": plan.memory.arena_bytes,
        },
        "layers": [{
            "name": l.name, "kind": l.kind, "output": l.output,
            "workspace_bytes": l.workspace_bytes,
            "kernels": [kernel_to_json(k) for k in l.kernels],
        } for l in plan.layers],
        "inputs": plan.inputs,
        "outputs": plan.outputs,
        "meta": plan.meta,
    }


def plan_from_json(doc: dict) -> ProgramPlan:
    if doc.get("format") != PLAN_FORMAT:
        raise ValueError(f"not a {PLAN_FORMAT} document")
    mem = doc["memory"]
    return ProgramPlan(
        machine=MachineConfig(**doc["machine"]),
        elem_name=doc["elem"],
        memory=MemoryPlan(
            allocations={n: tuple(v) for n, v in mem["allocations"].items()},
            workspace=tuple(mem["workspace"]),
            arena_bytes=mem["arena_bytes"]),
        layers=[LayerPlan(
            name=l["name"], kind=l["kind"], output=l["output"],
            workspace_bytes=l["workspace_bytes"],
            kernels=[kernel_from_json(k) for k in l["kernels"]],
        ) for l in doc["layers"]],
        inputs=list(doc["inputs"]),
        outputs=list(doc["outputs"]),
        meta=doc.get("meta", {}),
    )
