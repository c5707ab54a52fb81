"""Naive scalar interpreter for loop nests.

This is the semantic ground truth for the schedule primitives and for the
vectorized simulator: it walks the nest one iteration at a time, resolves the
original loop variables through the split/fuse lineage, and applies the body.
Only suitable for small shapes; every fast path in the package is checked
against it somewhere in the test suite.
"""

from __future__ import annotations

import itertools
from typing import Mapping, Optional

import numpy as np

from .ir import (
    BinOp,
    ComputeDef,
    Const,
    EPILOGUE_BIAS_RELU,
    EPILOGUE_NONE,
    Expr,
    In,
    IterVar,
    LoopNest,
    Select,
)


def eval_expr(expr: Expr, inputs):
    """Evaluate a scalar expression tree; works on scalars and numpy arrays."""
    if isinstance(expr, In):
        return inputs[expr.slot]
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, BinOp):
        a = eval_expr(expr.lhs, inputs)
        b = eval_expr(expr.rhs, inputs)
        if expr.op == "add":
            return a + b
        if expr.op == "mul":
            return a * b
        return np.maximum(a, b)
    if isinstance(expr, Select):
        c = eval_expr(expr.cond, inputs)
        return np.where(c != 0, eval_expr(expr.then, inputs), eval_expr(expr.other, inputs))
    raise TypeError(f"unknown expr node {expr!r}")


def _epilogue_scalar(body: ComputeDef, value, env, arrays):
    if body.epilogue == EPILOGUE_NONE:
        return value
    if body.epilogue == EPILOGUE_BIAS_RELU:
        value = value + arrays[body.bias.tensor.name][body.bias.flat_offset(env)]
    return max(value, type(value)(0)) if not isinstance(value, np.ndarray) else np.maximum(value, 0)


def interpret_nest(nest: LoopNest, arrays: Mapping[str, np.ndarray], *,
                   ranges: Optional[Mapping[IterVar, tuple[int, int]]] = None,
                   init_out: bool = True,
                   apply_epilogue: bool = True) -> None:
    """Execute ``nest`` against flat numpy arrays keyed by tensor name.

    ``ranges`` restricts individual nest vars to [begin, end) (used to replay
    one compute element's share of a partition).  With ``init_out=False`` the
    output array is assumed pre-initialized, so several restricted runs can be
    unioned; in that case the caller applies the epilogue once at the end via
    ``apply_epilogue_ref``.
    """
    body = nest.body
    out = arrays[body.output.tensor.name]
    reduce_ids = set(map(id, body.reduce_vars))

    if init_out and (body.reduce_vars or body.reduce_op == "max"):
        out.fill(body.init)

    spans = []
    for v in nest.vars:
        if ranges and v in ranges:
            spans.append(range(*ranges[v]))
        else:
            spans.append(range(v.extent))

    writes_are_reductions = bool(body.reduce_vars)
    for point in itertools.product(*spans):
        env = dict(zip(nest.vars, point))
        full = nest.resolve_env(env)
        if not nest.guard_ok(full):
            continue
        vals = [arrays[a.tensor.name][a.flat_offset(full)] for a in body.inputs]
        value = eval_expr(body.expr, vals)
        off = body.output.flat_offset(full)
        if writes_are_reductions:
            if body.reduce_op == "add":
                out[off] = out[off] + value
            else:
                out[off] = max(out[off], value)
        else:
            out[off] = value

    if apply_epilogue:
        apply_epilogue_ref(nest, arrays, ranges=ranges)


def apply_epilogue_ref(nest: LoopNest, arrays: Mapping[str, np.ndarray], *,
                       ranges: Optional[Mapping[IterVar, tuple[int, int]]] = None) -> None:
    """Apply the body's epilogue once per output element (reference semantics)."""
    body = nest.body
    if body.epilogue == EPILOGUE_NONE:
        return
    out = arrays[body.output.tensor.name]
    # walk the spatial iteration space of the output only
    out_vars = []
    for index in body.output.indices:
        out_vars.extend(index.vars())
    spans = []
    for v in out_vars:
        if ranges and v in ranges:
            spans.append(range(*ranges[v]))
        else:
            spans.append(range(v.extent))
    for point in itertools.product(*spans):
        env = dict(zip(out_vars, point))
        off = body.output.flat_offset(env)
        value = out[off]
        if body.epilogue == EPILOGUE_BIAS_RELU:
            value = value + arrays[body.bias.tensor.name][body.bias.flat_offset(env)]
        out[off] = max(value, 0)


def max_reduce_init(elem_np_name: str) -> float:
    """Identity element for max-reduction at a given element kind.  For floats
    this is -FLT_MAX rather than -inf so the generated C and the simulator
    share one representable literal."""
    if elem_np_name.startswith("int"):
        return int(np.iinfo(elem_np_name).min)
    return -3.402823466e38
