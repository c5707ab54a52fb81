"""Shared builders and independent oracles for the test suite.

The oracles here are deliberately written as direct enumerations, separate
from the package's implementations, so each fast path is checked against a
dumb-but-obviously-correct counterpart.
"""

from __future__ import annotations

import itertools
from typing import Mapping, Sequence

import numpy as np

from swsched.ir import (
    AffineIndex,
    BinOp,
    ComputeDef,
    In,
    IterVar,
    LoopNest,
    REDUCTION,
    TensorAccess,
    TensorScope,
    F32,
    WRITE,
    ix,
)


def build_matmul(m=256, n=256, k=256, elem=F32):
    """C[x][y] += A[x][k] * B[k][y] with dim 0 the contiguous dimension:
    A dims (K, M), B dims (N, K), C dims (N, M); loops [x, y, k]."""
    scope = TensorScope()
    a = scope.declare("A", (k, m), elem)
    b = scope.declare("B", (n, k), elem)
    c = scope.declare("C", (n, m), elem)
    vx = IterVar("x", m)
    vy = IterVar("y", n)
    vk = IterVar("k", k, REDUCTION)
    body = ComputeDef(
        output=TensorAccess(c, (ix(vy), ix(vx)), WRITE),
        inputs=(TensorAccess(a, (ix(vk), ix(vx))), TensorAccess(b, (ix(vy), ix(vk)))),
        expr=BinOp("mul", In(0), In(1)),
        reduce_vars=(vk,),
        init=0.0,
    )
    nest = LoopNest(vars=(vx, vy, vk), body=body)
    return scope, nest, (vx, vy, vk)


def build_vecmul(n=1024, elem=F32):
    """v[i] = v1[i] * v2[i]."""
    scope = TensorScope()
    v1 = scope.declare("v1", (n,), elem)
    v2 = scope.declare("v2", (n,), elem)
    v = scope.declare("v", (n,), elem)
    vi = IterVar("i", n)
    body = ComputeDef(
        output=TensorAccess(v, (ix(vi),), WRITE),
        inputs=(TensorAccess(v1, (ix(vi),)), TensorAccess(v2, (ix(vi),))),
        expr=BinOp("mul", In(0), In(1)),
    )
    return scope, LoopNest(vars=(vi,), body=body), vi


def build_conv(in_w=57, in_h=57, in_c=16, out_c=64, kk=3, stride=2, elem=F32):
    """Direct convolution, no padding.
    I dims (in_w, in_h, in_c); W dims (kk, kk, in_c, out_c); O dims (out_w, out_h, out_c).
    Loops [ff, yy, xx, rc, ry, rx]; reductions (rc, ry, rx)."""
    out_w = (in_w - kk) // stride + 1
    out_h = (in_h - kk) // stride + 1
    scope = TensorScope()
    ti = scope.declare("I", (in_w, in_h, in_c), elem)
    tw = scope.declare("W", (kk, kk, in_c, out_c), elem)
    to = scope.declare("O", (out_w, out_h, out_c), elem)
    ff = IterVar("ff", out_c)
    yy = IterVar("yy", out_h)
    xx = IterVar("xx", out_w)
    rc = IterVar("rc", in_c, REDUCTION)
    ry = IterVar("ry", kk, REDUCTION)
    rx = IterVar("rx", kk, REDUCTION)
    body = ComputeDef(
        output=TensorAccess(to, (ix(xx), ix(yy), ix(ff)), WRITE),
        inputs=(
            TensorAccess(ti, (ix((xx, stride), rx), ix((yy, stride), ry), ix(rc))),
            TensorAccess(tw, (ix(rx), ix(ry), ix(rc), ix(ff))),
        ),
        expr=BinOp("mul", In(0), In(1)),
        reduce_vars=(rc, ry, rx),
        init=0.0,
    )
    nest = LoopNest(vars=(ff, yy, xx, rc, ry, rx), body=body)
    return scope, nest, (ff, yy, xx, rc, ry, rx)


def random_arrays(scope: TensorScope, rng: np.random.Generator,
                  dtype="float64") -> dict[str, np.ndarray]:
    out = {}
    for decl in scope.tensors():
        if str(dtype).startswith("int"):
            out[decl.name] = rng.integers(-4, 5, size=decl.elems).astype(dtype)
        else:
            out[decl.name] = rng.standard_normal(decl.elems).astype(dtype)
    return out


# ---------------------------------------------------------------------------- #
# independent oracles
# ---------------------------------------------------------------------------- #

def brute_force_span(index: AffineIndex, buffer: Mapping[IterVar, int]) -> int:
    """max - min + 1 of the index over the tile ranges, by full enumeration."""
    vars_ = index.vars()
    ranges = [range(buffer.get(v, 1)) for v in vars_]
    values = []
    for point in itertools.product(*ranges) if ranges else [()]:
        env = dict(zip(vars_, point))
        values.append(index.evaluate(env))
    return max(values) - min(values) + 1


def oracle_order_cost(order_names: Sequence[str], trips: Mapping[str, int],
                      reductions: set[str],
                      tensors: Sequence[tuple[str, set[str], bool]]) -> int:
    """Documented cost model, re-derived from scratch: insertion at the depth
    where the last dependency is fixed; executions = product of enclosing trip
    counts; outputs double under an enclosing reduction loop."""
    total = 0
    for _name, deps, written in tensors:
        level = 0
        for i, vn in enumerate(order_names):
            if vn in deps:
                level = i + 1
        if not deps:
            level = 0
        execs = 1
        for vn in order_names[:level]:
            execs *= trips[vn]
        if written and any(vn in reductions for vn in order_names[:level]):
            execs *= 2
        total += execs
    return total


def oracle_min_order(order_names: Sequence[str], trips, reductions, tensors):
    """Exhaustive-permutation minimum of the documented cost model."""
    best = None
    best_order = None
    for perm in itertools.permutations(order_names):
        c = oracle_order_cost(perm, trips, reductions, tensors)
        if best is None or c < best:
            best, best_order = c, perm
    return best, best_order
