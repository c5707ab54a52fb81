"""Correlation, classification, frontier updates, and footprint arithmetic."""

import numpy as np
import pytest

from swsched.analysis import (
    AnalysisError,
    DOWN,
    SIZE_TYPE,
    NUM_TYPE,
    COMP_TYPE,
    SizingState,
    UP,
    analyze_correlation,
    buffered_extent,
    build_views,
    classify,
    ldm_usage,
    update,
    var_type,
)
from swsched.ir import AffineIndex, IterVar, ix, split

from helpers import brute_force_span, build_conv, build_matmul


@pytest.fixture
def matmul():
    scope, nest, (vx, vy, vk) = build_matmul()
    return scope, nest, vx, vy, vk


# --------------------------------------------------------------------------- #
# correlation (per-dimension occurrence of loop vars)
# --------------------------------------------------------------------------- #

class TestCorrelation:
    def test_matmul_post_split_outer_universe(self, matmul):
        scope, nest, vx, vy, vk = matmul
        nest, yo, yi = split(nest, vy, 128)
        nest, ko, ki = split(nest, vk, 64)
        views = build_views(nest)
        corr = analyze_correlation([vx, yo, ko], views)
        assert corr["A"] == {vx, ko}
        assert corr["B"] == {ko, yo}
        assert corr["C"] == {vx, yo}

    def test_conv_weight_unrelated_to_spatial(self):
        scope, nest, (ff, yy, xx, rc, ry, rx) = build_conv()
        views = build_views(nest)
        corr = analyze_correlation([yy], views)
        assert corr["W"] == set()

    def test_empty_universe(self, matmul):
        scope, nest, *_ = matmul
        views = build_views(nest)
        corr = analyze_correlation([], views)
        assert all(s == set() for s in corr.values())

    def test_monotone_in_universe(self):
        scope, nest, (ff, yy, xx, rc, ry, rx) = build_conv()
        views = build_views(nest)
        full = analyze_correlation([ff, yy, xx, rc, ry, rx], views)
        small = analyze_correlation([ff, rc], views)
        for name in views:
            assert small[name] <= full[name]


# --------------------------------------------------------------------------- #
# var_type / classify
# --------------------------------------------------------------------------- #

class TestVarType:
    def test_matmul_classification(self, matmul):
        scope, nest, vx, vy, vk = matmul
        views = build_views(nest)
        frontiers = {name: 0 for name in views}
        assert var_type(vy, views, frontiers) == SIZE_TYPE
        assert var_type(vx, views, frontiers) == NUM_TYPE
        assert var_type(vk, views, frontiers) == COMP_TYPE

    def test_uncorrelated_raises(self, matmul):
        scope, nest, *_ = matmul
        views = build_views(nest)
        stray = IterVar("stray", 4)
        with pytest.raises(AnalysisError):
            var_type(stray, views, {name: 0 for name in views})

    def test_classify_is_partition(self, matmul):
        scope, nest, vx, vy, vk = matmul
        views = build_views(nest)
        state = SizingState.fresh([vx, vy, vk], views)
        cls = classify(state, views)
        groups = [cls.sizevars, cls.numvars, cls.compvars]
        assert sorted(v.name for g in groups for v in g) == ["k", "x", "y"]
        assert [v.name for v in cls.sizevars] == ["y"]
        assert [v.name for v in cls.numvars] == ["x"]
        assert [v.name for v in cls.compvars] == ["k"]

    def test_conv_classification_initial(self):
        scope, nest, (ff, yy, xx, rc, ry, rx) = build_conv()
        views = build_views(nest)
        state = SizingState.fresh([ff, yy, xx, rc, ry, rx], views)
        cls = classify(state, views)
        # dim0 of O and I is indexed by xx (and rx for I); dim0 of W by rx
        assert set(cls.sizevars) == {xx, rx}
        assert set(cls.numvars) == {ff, yy, ry, rc}
        assert cls.compvars == []


class TestUpdate:
    def test_up_advances_past_buffered_kernel_dim(self):
        scope, nest, (ff, yy, xx, rc, ry, rx) = build_conv()
        views = build_views(nest)
        state = SizingState.fresh([ff, yy, xx, rc, ry, rx], views)
        update(state, views, rx, UP)
        # W dim0 is {rx}: frontier advances to 1; I dim0 still has xx
        assert state.frontiers["W"] == 1
        assert state.frontiers["I"] == 0
        assert state.frontiers["O"] == 0

    def test_up_then_down_restores_frontiers(self):
        scope, nest, (ff, yy, xx, rc, ry, rx) = build_conv()
        views = build_views(nest)
        state = SizingState.fresh([ff, yy, xx, rc, ry, rx], views)
        before = dict(state.frontiers)
        update(state, views, rx, UP)
        update(state, views, rx, DOWN)
        assert state.frontiers == before
        assert state.contains(rx)

    def test_up_ignores_unrelated_tensor(self):
        scope, nest, (ff, yy, xx, rc, ry, rx) = build_conv()
        views = build_views(nest)
        state = SizingState.fresh([ff, yy, xx, rc, ry, rx], views)
        update(state, views, ff, UP)  # ff indexes only high dims of W and O
        assert state.frontiers["I"] == 0
        assert state.frontiers["W"] == 0
        assert state.frontiers["O"] == 0

    def test_up_never_decreases_down_never_increases(self):
        scope, nest, vars_ = build_conv()
        views = build_views(nest)
        state = SizingState.fresh(list(vars_), views)
        rng = np.random.default_rng(7)
        removed = []
        for _ in range(40):
            if removed and rng.random() < 0.4:
                var = removed.pop(rng.integers(len(removed)))
                before = dict(state.frontiers)
                update(state, views, var, DOWN)
                assert all(state.frontiers[n] <= before[n] for n in before)
            else:
                live = state.universe()
                if not live:
                    continue
                var = live[rng.integers(len(live))]
                before = dict(state.frontiers)
                update(state, views, var, UP)
                removed.append(var)
                assert all(state.frontiers[n] >= before[n] for n in before)


# --------------------------------------------------------------------------- #
# buffered_extent / ldm_usage
# --------------------------------------------------------------------------- #

class TestFootprint:
    def test_single_var(self):
        y = IterVar("y", 256)
        assert buffered_extent(ix(y), {y: 128}) == 128

    def test_strided_two_term(self):
        yy = IterVar("yy", 16)
        ry = IterVar("ry", 3)
        idx = ix((yy, 2), ry)
        assert buffered_extent(idx, {yy: 8, ry: 3}) == 17
        assert brute_force_span(idx, {yy: 8, ry: 3}) == 17

    def test_const_only(self):
        assert buffered_extent(AffineIndex((), 5), {}) == 1

    def test_brute_force_random(self):
        # acceptance: 200 random affine indices, <=3 terms, coeff <=8, Buffer <=16
        rng = np.random.default_rng(1234)
        for _ in range(200):
            nterms = int(rng.integers(1, 4))
            vars_ = [IterVar(f"v{j}", int(rng.integers(1, 33))) for j in range(nterms)]
            coeffs = [int(rng.integers(0, 9)) for _ in range(nterms)]
            const = int(rng.integers(0, 6))
            idx = AffineIndex(tuple(zip(vars_, coeffs)), const)
            buffer = {v: int(rng.integers(1, min(v.extent, 16) + 1)) for v in vars_}
            assert buffered_extent(idx, buffer) == brute_force_span(idx, buffer)

    def test_matmul_walkthrough_usages(self, matmul):
        scope, nest, vx, vy, vk = matmul
        views = build_views(nest)
        u1 = ldm_usage(views, {vx: 1, vy: 64, vk: 64})
        u2 = ldm_usage(views, {vx: 1, vy: 128, vk: 64})
        u3 = ldm_usage(views, {vx: 1, vy: 128, vk: 128})
        assert u1 == 16896   # 16.5 KB: B 16384 + A 256 + C 256
        assert u2 == 33536   # 32.75 KB
        assert u3 == 66560   # 65 KB

    def test_usage_counts_unit_buffers_as_unit_span(self, matmul):
        scope, nest, vx, vy, vk = matmul
        views = build_views(nest)
        assert ldm_usage(views, {}) == 3 * 4  # one element per tensor
