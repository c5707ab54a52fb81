"""Tensor IR: declarations, affine indices, schedule primitives, semantics."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swsched.ir import (
    AffineIndex,
    ComputeDef,
    Const,
    F32,
    In,
    IterVar,
    LoopNest,
    SchedError,
    TensorAccess,
    TensorScope,
    WRITE,
    buffer_read,
    buffer_write,
    expand_index,
    fuse,
    ix,
    reorder,
    split,
)
from swsched.interp import interpret_nest

from helpers import build_matmul, random_arrays


# --------------------------------------------------------------------------- #
# tensors
# --------------------------------------------------------------------------- #

class TestDeclareTensor:
    def test_2d(self):
        scope = TensorScope()
        b = scope.declare("B", (256, 256), F32)
        assert b.rank == 2 and b.elems == 65536 and b.bytes == 262144
        assert b.pitches() == (1, 256)

    def test_1d(self):
        scope = TensorScope()
        v = scope.declare("v", (1024,), F32)
        assert v.bytes == 4096

    def test_scalar_like(self):
        scope = TensorScope()
        s = scope.declare("s", (1,), F32)
        assert s.bytes == 4

    def test_duplicate_name(self):
        scope = TensorScope()
        scope.declare("t", (4,))
        with pytest.raises(SchedError):
            scope.declare("t", (8,))

    def test_zero_extent(self):
        with pytest.raises(SchedError):
            TensorScope().declare("z", (4, 0))

    def test_empty_shape(self):
        with pytest.raises(SchedError):
            TensorScope().declare("z", ())


# --------------------------------------------------------------------------- #
# affine indices
# --------------------------------------------------------------------------- #

class TestAffineIndex:
    def test_negative_coeff_rejected(self):
        v = IterVar("v", 4)
        with pytest.raises(SchedError):
            AffineIndex(((v, -1),), 0)

    def test_repeated_var_rejected(self):
        v = IterVar("v", 4)
        with pytest.raises(SchedError):
            AffineIndex(((v, 1), (v, 2)), 0)

    def test_zero_vars_is_const(self):
        v = IterVar("v", 4)
        idx = ix((v, 2), const=3)
        assert idx.evaluate({v: 0}) == 3

    @given(coeffs=st.lists(st.integers(0, 8), min_size=1, max_size=3),
           const=st.integers(0, 5))
    @settings(max_examples=60, deadline=None)
    def test_monotone_and_max(self, coeffs, const):
        vars_ = [IterVar(f"v{i}", 5) for i in range(len(coeffs))]
        idx = AffineIndex(tuple(zip(vars_, coeffs)), const)
        lo = idx.evaluate({v: 0 for v in vars_})
        hi = idx.evaluate({v: v.extent - 1 for v in vars_})
        assert lo == const
        assert hi == idx.max_value()
        for bump in vars_:
            env = {v: 0 for v in vars_}
            env[bump] = 1
            assert idx.evaluate(env) >= lo

    def test_access_bounds_checked(self):
        scope = TensorScope()
        t = scope.declare("t", (8,))
        v = IterVar("v", 9)
        with pytest.raises(SchedError):
            TensorAccess(t, (ix(v),))


# --------------------------------------------------------------------------- #
# split
# --------------------------------------------------------------------------- #

class TestSplit:
    def test_walkthrough_factors(self):
        _, nest, (vx, vy, vk) = build_matmul()
        nest, yo, yi = split(nest, vy, 128)
        assert (yo.extent, yi.extent) == (2, 128)
        nest, ko, ki = split(nest, vk, 64)
        assert (ko.extent, ki.extent) == (4, 64)
        assert [v.name for v in nest.vars] == ["x", "yo", "yi", "ko", "ki"]

    def test_full_extent_split(self):
        scope = TensorScope()
        t = scope.declare("t", (10,))
        v = IterVar("n", 10)
        body = ComputeDef(TensorAccess(t, (ix(v),), WRITE), (), Const(1.0))
        nest = LoopNest((v,), body)
        nest, outer, inner = split(nest, v, 10)
        assert (outer.extent, inner.extent) == (1, 10)

    def test_errors(self):
        _, nest, (vx, vy, vk) = build_matmul(8, 8, 8)
        stranger = IterVar("w", 4)
        with pytest.raises(SchedError):
            split(nest, stranger, 2)
        with pytest.raises(SchedError):
            split(nest, vx, 0)

    def test_round_trip_enumerates_guarded_range(self):
        # ceil split of 10 by 3: (outer, inner) pairs under the guard hit 0..9 once
        v = IterVar("v", 10)
        scope = TensorScope()
        t = scope.declare("t", (10,))
        body = ComputeDef(TensorAccess(t, (ix(v),), WRITE), (), Const(1.0))
        nest = LoopNest((v,), body)
        nest, outer, inner = split(nest, v, 3)
        assert outer.extent == 4
        seen = []
        for o, i in itertools.product(range(outer.extent), range(inner.extent)):
            full = nest.resolve_env({outer: o, inner: i})
            if nest.guard_ok(full):
                seen.append(full[v])
        assert sorted(seen) == list(range(10))

    @pytest.mark.parametrize("factor", [2, 3, 7, 8])
    def test_semantic_preservation(self, factor):
        rng = np.random.default_rng(0)
        scope, nest, (vx, vy, vk) = build_matmul(6, 5, 7)
        ref = random_arrays(scope, rng)
        got = {k: v.copy() for k, v in ref.items()}
        interpret_nest(nest, ref)
        nest2, _, _ = split(nest, vk, factor)
        nest2, _, _ = split(nest2, vy, 2)
        interpret_nest(nest2, got)
        np.testing.assert_allclose(got["C"], ref["C"], rtol=1e-12)


# --------------------------------------------------------------------------- #
# fuse
# --------------------------------------------------------------------------- #

class TestFuse:
    def _two_loop_nest(self, e1, e2):
        scope = TensorScope()
        t = scope.declare("t", (e2, e1))
        out = scope.declare("o", (e2, e1))
        c = IterVar("c", e1)
        h = IterVar("h", e2)
        body = ComputeDef(
            TensorAccess(out, (ix(h), ix(c)), WRITE),
            (TensorAccess(t, (ix(h), ix(c))),),
            In(0),
        )
        return scope, LoopNest((c, h), body), c, h

    def test_fuse_extent_and_index_equivalence(self):
        scope, nest, c, h = self._two_loop_nest(3, 8)
        fused_nest, f = fuse(nest, c, h)
        assert f.extent == 24
        # enumerate all 24 fused points; each (c, h) pair appears exactly once
        pairs = set()
        for fv in range(24):
            full = fused_nest.resolve_env({f: fv})
            assert full[c] == fv // 8 and full[h] == fv % 8
            pairs.add((full[c], full[h]))
        assert pairs == set(itertools.product(range(3), range(8)))

    def test_fuse_unit_dim(self):
        scope, nest, c, h = self._two_loop_nest(1, 7)
        fused_nest, f = fuse(nest, c, h)
        assert f.extent == 7

    def test_fuse_non_adjacent_error(self):
        _, nest, (vx, vy, vk) = build_matmul(4, 4, 4)
        with pytest.raises(SchedError):
            fuse(nest, nest.vars[0], nest.vars[2])

    def test_fuse_semantics(self):
        rng = np.random.default_rng(1)
        scope, nest, c, h = self._two_loop_nest(3, 8)
        ref = random_arrays(scope, rng)
        got = {k: v.copy() for k, v in ref.items()}
        interpret_nest(nest, ref)
        fused_nest, f = fuse(nest, c, h)
        interpret_nest(fused_nest, got)
        np.testing.assert_array_equal(got["o"], ref["o"])


# --------------------------------------------------------------------------- #
# reorder
# --------------------------------------------------------------------------- #

class TestReorder:
    def test_reorder_semantics(self):
        rng = np.random.default_rng(2)
        scope, nest, (vx, vy, vk) = build_matmul(5, 6, 4)
        ref = random_arrays(scope, rng)
        got = {k: v.copy() for k, v in ref.items()}
        interpret_nest(nest, ref)
        nest2 = reorder(nest, (vk, vx, vy))
        assert [v.name for v in nest2.vars] == ["k", "x", "y"]
        interpret_nest(nest2, got)
        np.testing.assert_allclose(got["C"], ref["C"], rtol=1e-12)

    def test_identity(self):
        _, nest, vars_ = build_matmul(4, 4, 4)
        assert reorder(nest, nest.vars).vars == nest.vars

    def test_missing_var_error(self):
        _, nest, (vx, vy, vk) = build_matmul(4, 4, 4)
        with pytest.raises(SchedError):
            reorder(nest, (vx, vy))


# --------------------------------------------------------------------------- #
# buffer markers
# --------------------------------------------------------------------------- #

class TestBufferMarkers:
    def test_buffer_read_two_dims(self):
        scope, nest, (vx, vy, vk) = build_matmul()
        nest, yo, yi = split(nest, vy, 128)
        nest, ko, ki = split(nest, vk, 64)
        nest = buffer_read(nest, scope["B"], [ki, yi])
        assert nest.buffered_map()["B"] == (ki, yi)

    def test_buffer_write(self):
        scope, nest, (vx, vy, vk) = build_matmul()
        nest, yo, yi = split(nest, vy, 128)
        nest = buffer_write(nest, scope["C"], [yi])
        assert nest.buffered_map()["C"] == (yi,)

    def test_uncorrelated_var_rejected(self):
        scope, nest, (vx, vy, vk) = build_matmul()
        with pytest.raises(SchedError):
            buffer_read(nest, scope["A"], [vy])  # A is indexed by k and x only


# --------------------------------------------------------------------------- #
# expansion through lineage
# --------------------------------------------------------------------------- #

class TestExpansion:
    def test_split_coeffs(self):
        scope, nest, (vx, vy, vk) = build_matmul()
        nest, ko, ki = split(nest, vk, 64)
        exp = expand_index(ix(vk), nest)
        assert exp.coeffs == {ko: 64, ki: 1} and exp.const == 0

    def test_fused_nonlinear_flagged(self):
        scope = TensorScope()
        t = scope.declare("t", (8, 3))
        out = scope.declare("o", (8, 3))
        c = IterVar("c", 3)
        h = IterVar("h", 8)
        body = ComputeDef(
            TensorAccess(out, (ix(h), ix(c)), WRITE),
            (TensorAccess(t, (ix(h), ix(c))),),
            In(0))
        nest = LoopNest((c, h), body)
        nest, f = fuse(nest, c, h)
        exp = expand_index(ix(c), nest)
        assert f in exp.nonlinear and not exp.coeffs

    def test_degenerate_fuse_is_affine(self):
        scope = TensorScope()
        t = scope.declare("t", (7, 1))
        out = scope.declare("o", (7, 1))
        a = IterVar("a", 1)
        b = IterVar("b", 7)
        body = ComputeDef(
            TensorAccess(out, (ix(b), ix(a)), WRITE),
            (TensorAccess(t, (ix(b), ix(a))),),
            In(0))
        nest = LoopNest((a, b), body)
        nest, f = fuse(nest, a, b)
        exp = expand_index(ix(b), nest)
        assert exp.coeffs == {f: 1} and not exp.nonlinear


# --------------------------------------------------------------------------- #
# randomized semantic preservation across primitive chains
# --------------------------------------------------------------------------- #

@given(st.data())
@settings(max_examples=25, deadline=None)
def test_random_schedule_chain_preserves_semantics(data):
    m = data.draw(st.integers(2, 6), label="m")
    n = data.draw(st.integers(2, 6), label="n")
    k = data.draw(st.integers(2, 6), label="k")
    scope, nest, (vx, vy, vk) = build_matmul(m, n, k)
    rng = np.random.default_rng(data.draw(st.integers(0, 2**16), label="seed"))
    ref = random_arrays(scope, rng)
    got = {key: val.copy() for key, val in ref.items()}
    interpret_nest(nest, ref)

    live = list(nest.vars)
    for _ in range(data.draw(st.integers(1, 3), label="steps")):
        op = data.draw(st.sampled_from(["split", "reorder", "fuse"]))
        if op == "split":
            var = data.draw(st.sampled_from(live))
            factor = data.draw(st.integers(1, var.extent + 1))
            nest, outer, inner = split(nest, var, factor)
        elif op == "fuse":
            pos = data.draw(st.integers(0, len(nest.vars) - 2))
            hi, lo = nest.vars[pos], nest.vars[pos + 1]
            if hi.kind != lo.kind:
                continue
            nest, _ = fuse(nest, hi, lo)
        else:
            order = list(nest.vars)
            data.draw(st.randoms(use_true_random=False)).shuffle(order)
            nest = reorder(nest, order)
        live = list(nest.vars)

    interpret_nest(nest, got)
    np.testing.assert_allclose(got["C"], ref["C"], rtol=1e-9)
