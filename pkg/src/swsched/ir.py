"""Core tensor IR: dense tensors, affine accesses, compute bodies, schedule primitives.

Conventions used throughout the compiler:

* Dimension 0 of a tensor is the innermost (contiguous) dimension; the pitch of
  dimension d is the product of the extents of dimensions 0..d-1.
* Loop nests list their variables outermost first.
* Index expressions are authored over the *original* loop variables.  Schedule
  primitives (split/fuse) never rewrite indices textually; instead every derived
  variable records its lineage, and evaluation / affine expansion resolve the
  original variables from the current nest variables on demand.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Optional, Sequence, Union


class SchedError(ValueError):
    """Raised for malformed IR or illegal schedule directives."""


# --------------------------------------------------------------------------- #
# element kinds
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class ElemKind:
    name: str
    bytes: int
    np_name: str
    c_type: str

    def __repr__(self) -> str:
        return self.name


F32 = ElemKind("f32", 4, "float32", "float")
I32 = ElemKind("i32", 4, "int32", "int")

ELEM_KINDS = {k.name: k for k in (F32, I32)}


# --------------------------------------------------------------------------- #
# tensors
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class TensorDecl:
    """A named dense tensor.  ``shape[0]`` is the contiguous extent."""

    name: str
    shape: tuple[int, ...]
    elem: ElemKind = F32

    def __post_init__(self):
        if not self.shape:
            raise SchedError(f"tensor {self.name!r}: shape must be non-empty")
        if any(e < 1 for e in self.shape):
            raise SchedError(f"tensor {self.name!r}: zero or negative extent in {self.shape}")
        object.__setattr__(self, "shape", tuple(int(e) for e in self.shape))

    @property
    def rank(self) -> int:
        return len(self.shape)

    @property
    def elems(self) -> int:
        n = 1
        for e in self.shape:
            n *= e
        return n

    @property
    def bytes(self) -> int:
        return self.elems * self.elem.bytes

    def pitches(self) -> tuple[int, ...]:
        """Element pitch of each dimension (dim 0 has pitch 1)."""
        out, p = [], 1
        for e in self.shape:
            out.append(p)
            p *= e
        return tuple(out)


class TensorScope:
    """Name-unique registry of tensor declarations for one compilation unit."""

    def __init__(self):
        self._decls: dict[str, TensorDecl] = {}

    def declare(self, name: str, shape: Sequence[int], elem: ElemKind = F32) -> TensorDecl:
        if name in self._decls:
            raise SchedError(f"duplicate tensor name {name!r}")
        decl = TensorDecl(name, tuple(shape), elem)
        self._decls[name] = decl
        return decl

    def __getitem__(self, name: str) -> TensorDecl:
        return self._decls[name]

    def __contains__(self, name: str) -> bool:
        return name in self._decls

    def tensors(self) -> list[TensorDecl]:
        return list(self._decls.values())


def declare_tensor(scope: TensorScope, name: str, shape: Sequence[int],
                   elem: ElemKind = F32) -> TensorDecl:
    return scope.declare(name, shape, elem)


# --------------------------------------------------------------------------- #
# loop variables and lineage
# --------------------------------------------------------------------------- #

SPATIAL = "spatial"
REDUCTION = "reduction"


@dataclass(frozen=True, eq=False)
class IterVar:
    """A loop variable with a constant range.  Identity-hashed: two vars with
    the same name are distinct unless they are literally the same object."""

    name: str
    extent: int
    kind: str = SPATIAL

    def __post_init__(self):
        if self.extent < 1:
            raise SchedError(f"itervar {self.name!r}: extent must be >= 1")
        if self.kind not in (SPATIAL, REDUCTION):
            raise SchedError(f"itervar {self.name!r}: bad kind {self.kind!r}")

    def __repr__(self) -> str:
        return f"{self.name}:{self.extent}"


@dataclass(frozen=True)
class SplitSub:
    """Records ``parent = outer * factor + inner`` (plus a range guard when
    the factor does not divide the parent extent)."""
    parent: IterVar
    outer: IterVar
    inner: IterVar
    factor: int


@dataclass(frozen=True)
class FuseSub:
    """Records ``hi = fused // lo_extent`` and ``lo = fused % lo_extent``."""
    fused: IterVar
    hi: IterVar
    lo: IterVar
    lo_extent: int


Substitution = Union[SplitSub, FuseSub]


# --------------------------------------------------------------------------- #
# affine indices and accesses
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class AffineIndex:
    """Non-negative affine combination of loop variables plus a constant."""

    terms: tuple[tuple[IterVar, int], ...] = ()
    const: int = 0

    def __post_init__(self):
        seen = set()
        for var, coeff in self.terms:
            if coeff < 0:
                raise SchedError(f"negative coefficient {coeff} for {var.name}")
            if id(var) in seen:
                raise SchedError(f"variable {var.name} repeated in index")
            seen.add(id(var))
        if self.const < 0:
            raise SchedError("negative index constant")
        # drop zero-coefficient terms so correlation analysis sees real deps only
        object.__setattr__(self, "terms", tuple((v, c) for v, c in self.terms if c != 0))

    def max_value(self) -> int:
        return sum(c * (v.extent - 1) for v, c in self.terms) + self.const

    def evaluate(self, env: Mapping[IterVar, int]):
        val = self.const
        for var, coeff in self.terms:
            val = val + coeff * env[var]
        return val

    def vars(self) -> tuple[IterVar, ...]:
        return tuple(v for v, _ in self.terms)

    def __repr__(self) -> str:
        parts = [f"{c}*{v.name}" if c != 1 else v.name for v, c in self.terms]
        if self.const or not parts:
            parts.append(str(self.const))
        return "+".join(parts)


def ix(*parts, const: int = 0) -> AffineIndex:
    """Index builder: ``ix(v)``, ``ix((v, 2), r)``, ``ix(const=3)``."""
    terms = []
    for p in parts:
        if isinstance(p, IterVar):
            terms.append((p, 1))
        else:
            var, coeff = p
            terms.append((var, coeff))
    return AffineIndex(tuple(terms), const)


READ = "read"
WRITE = "write"
READ_WRITE = "read-write"


@dataclass(frozen=True)
class TensorAccess:
    tensor: TensorDecl
    indices: tuple[AffineIndex, ...]
    mode: str = READ

    def __post_init__(self):
        if len(self.indices) != self.tensor.rank:
            raise SchedError(
                f"access to {self.tensor.name}: {len(self.indices)} indices for rank "
                f"{self.tensor.rank}")
        if self.mode not in (READ, WRITE, READ_WRITE):
            raise SchedError(f"bad access mode {self.mode!r}")
        for d, index in enumerate(self.indices):
            if index.max_value() >= self.tensor.shape[d]:
                raise SchedError(
                    f"access to {self.tensor.name} dim {d}: max index "
                    f"{index.max_value()} >= extent {self.tensor.shape[d]}")

    def vars(self) -> set[IterVar]:
        out: set[IterVar] = set()
        for index in self.indices:
            out.update(index.vars())
        return out

    def flat_offset(self, env: Mapping[IterVar, int]):
        pitches = self.tensor.pitches()
        off = 0
        for d, index in enumerate(self.indices):
            off = off + index.evaluate(env) * pitches[d]
        return off


# --------------------------------------------------------------------------- #
# scalar expressions
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class Expr:
    pass


@dataclass(frozen=True)
class In(Expr):
    """Reference to ``inputs[slot]`` of the surrounding ComputeDef."""
    slot: int


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # add | mul | max
    lhs: Expr
    rhs: Expr

    def __post_init__(self):
        if self.op not in ("add", "mul", "max"):
            raise SchedError(f"bad binop {self.op!r}")


@dataclass(frozen=True)
class Select(Expr):
    """``then`` where ``cond`` is nonzero, otherwise ``other``."""
    cond: Expr
    then: Expr
    other: Expr


def expr_slots(expr: Expr) -> set[int]:
    if isinstance(expr, In):
        return {expr.slot}
    if isinstance(expr, Const):
        return set()
    if isinstance(expr, BinOp):
        return expr_slots(expr.lhs) | expr_slots(expr.rhs)
    if isinstance(expr, Select):
        return expr_slots(expr.cond) | expr_slots(expr.then) | expr_slots(expr.other)
    raise SchedError(f"unknown expr node {expr!r}")


# --------------------------------------------------------------------------- #
# compute definition
# --------------------------------------------------------------------------- #

EPILOGUE_NONE = "none"
EPILOGUE_RELU = "relu"
EPILOGUE_BIAS_RELU = "bias+relu"


@dataclass(frozen=True)
class ComputeDef:
    """One statement: ``output[...] (reduce)= expr(inputs...)`` plus an optional
    fused epilogue applied once per output element after the reduction."""

    output: TensorAccess
    inputs: tuple[TensorAccess, ...]
    expr: Expr
    reduce_vars: tuple[IterVar, ...] = ()
    init: float = 0.0
    reduce_op: str = "add"  # add | max
    epilogue: str = EPILOGUE_NONE
    bias: Optional[TensorAccess] = None

    def __post_init__(self):
        if self.output.mode == READ:
            raise SchedError("output access must be a write")
        if self.reduce_op not in ("add", "max"):
            raise SchedError(f"bad reduce op {self.reduce_op!r}")
        if self.epilogue not in (EPILOGUE_NONE, EPILOGUE_RELU, EPILOGUE_BIAS_RELU):
            raise SchedError(f"bad epilogue {self.epilogue!r}")
        if self.epilogue == EPILOGUE_BIAS_RELU and self.bias is None:
            raise SchedError("bias+relu epilogue requires a bias access")
        slots = expr_slots(self.expr)
        if slots and max(slots) >= len(self.inputs):
            raise SchedError("expression references an input slot out of range")
        reduce_set = set(map(id, self.reduce_vars))
        for index in self.output.indices:
            for v in index.vars():
                if id(v) in reduce_set:
                    raise SchedError(f"reduction var {v.name} indexes the output")
        # the simulator and code generator rely on dense output tiles: every
        # output index must be a plain variable (coefficient 1) or a constant
        for index in self.output.indices:
            if len(index.terms) > 1 or any(c != 1 for _, c in index.terms):
                raise SchedError(
                    f"output index {index!r} must be a single unit-stride variable")

    def all_accesses(self) -> tuple[TensorAccess, ...]:
        acc = (self.output,) + self.inputs
        if self.bias is not None:
            acc = acc + (self.bias,)
        return acc

    def all_vars(self) -> set[IterVar]:
        out: set[IterVar] = set()
        for a in self.all_accesses():
            out |= a.vars()
        out.update(self.reduce_vars)
        return out


# --------------------------------------------------------------------------- #
# loop nest
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class LoopNest:
    """Ordered loop tree (outermost first) around one ComputeDef.

    ``subs`` carries the split/fuse lineage from original variables down to the
    current nest variables; ``buffered`` maps tensor name -> vars chosen by
    buffer_read/buffer_write.
    """

    vars: tuple[IterVar, ...]
    body: ComputeDef
    subs: tuple[Substitution, ...] = ()
    buffered: tuple[tuple[str, tuple[IterVar, ...]], ...] = ()

    def __post_init__(self):
        names = [v.name for v in self.vars]
        if len(set(names)) != len(names):
            raise SchedError(f"duplicate loop var names in nest: {names}")

    def var_named(self, name: str) -> IterVar:
        for v in self.vars:
            if v.name == name:
                return v
        raise SchedError(f"no loop var named {name!r} in nest")

    def buffered_map(self) -> dict[str, tuple[IterVar, ...]]:
        out: dict[str, tuple[IterVar, ...]] = {}
        for name, vs in self.buffered:
            out[name] = out.get(name, ()) + vs
        return out

    # -- lineage resolution -------------------------------------------------- #

    def resolve_env(self, env: Mapping[IterVar, object]) -> dict[IterVar, object]:
        """Extend an assignment of current nest vars with every ancestor var.

        Works elementwise on numpy arrays as well as on python ints.
        """
        full: dict[IterVar, object] = dict(env)
        # substitutions were appended in application order; resolving in reverse
        # derives each parent from children already present
        for sub in reversed(self.subs):
            if isinstance(sub, SplitSub):
                if sub.outer in full and sub.inner in full:
                    full[sub.parent] = full[sub.outer] * sub.factor + full[sub.inner]
            else:
                if sub.fused in full:
                    full[sub.hi] = full[sub.fused] // sub.lo_extent
                    full[sub.lo] = full[sub.fused] % sub.lo_extent
        return full

    def guard_ok(self, full_env: Mapping[IterVar, int]) -> bool:
        """True when every resolved variable is inside its declared range
        (masks the remainder iterations of non-dividing splits)."""
        return all(0 <= value < var.extent for var, value in full_env.items())

    def expansion(self, index: AffineIndex) -> "IndexExpansion":
        return expand_index(index, self)


@dataclass(frozen=True)
class IndexExpansion:
    """Affine view of an index over the current nest variables.

    ``coeffs`` holds the exact coefficient of every nest var the index depends
    on linearly.  ``nonlinear`` lists nest vars the index depends on through a
    non-affine fuse derivation; their coefficient is undefined and passes must
    keep their tile extent at 1.
    """

    coeffs: dict[IterVar, int]
    const: int
    nonlinear: frozenset[IterVar]

    def vars(self) -> set[IterVar]:
        return set(self.coeffs) | set(self.nonlinear)


_Expansion = tuple[Optional[dict], int, set]


def _var_expansion(var: IterVar, nest: LoopNest, cache: dict[int, _Expansion]) -> _Expansion:
    """Express ``var`` over the current nest vars.

    Returns (coeffs, const, nonlinear_vars); coeffs is None when the variable
    itself is a non-affine function of the nest vars.
    """
    if id(var) in cache:
        return cache[id(var)]
    if any(v is var for v in nest.vars):
        result: _Expansion = ({var: 1}, 0, set())
    else:
        rec: Optional[Substitution] = None
        for sub in nest.subs:
            if isinstance(sub, SplitSub) and sub.parent is var:
                rec = sub
                break
            if isinstance(sub, FuseSub) and (sub.hi is var or sub.lo is var):
                rec = sub
                break
        if rec is None:
            raise SchedError(f"variable {var.name} is not derivable from the nest")
        if isinstance(rec, SplitSub):
            oc, o0, onl = _var_expansion(rec.outer, nest, cache)
            ic, i0, inl = _var_expansion(rec.inner, nest, cache)
            if oc is None or ic is None:
                result = (None, 0, onl | inl)
            else:
                coeffs: dict[IterVar, int] = {}
                for v, c in oc.items():
                    coeffs[v] = coeffs.get(v, 0) + c * rec.factor
                for v, c in ic.items():
                    coeffs[v] = coeffs.get(v, 0) + c
                result = (coeffs, o0 * rec.factor + i0, onl | inl)
        else:
            fc, f0, fnl = _var_expansion(rec.fused, nest, cache)
            hi_extent = rec.fused.extent // rec.lo_extent
            # hi = fused // lo_extent, lo = fused % lo_extent: affine only when
            # one side of the fuse is degenerate
            degenerate_hi = rec.lo_extent == 1   # fused == lo-part is trivial
            degenerate_lo = hi_extent == 1       # fused < lo_extent
            if var is rec.hi:
                if degenerate_hi:
                    result = (fc, f0, set(fnl))
                elif degenerate_lo:
                    result = ({}, 0, set(fnl))
                else:
                    result = (None, 0, set(fnl) | set(fc or {}))
            else:
                if degenerate_hi:
                    result = ({}, 0, set(fnl))
                elif degenerate_lo:
                    result = (fc, f0, set(fnl))
                else:
                    result = (None, 0, set(fnl) | set(fc or {}))
    cache[id(var)] = result
    return result


def expand_index(index: AffineIndex, nest: LoopNest) -> IndexExpansion:
    cache: dict[int, _Expansion] = {}
    coeffs: dict[IterVar, int] = {}
    const = index.const
    nonlinear: set[IterVar] = set()
    for var, coeff in index.terms:
        vc, v0, vnl = _var_expansion(var, nest, cache)
        nonlinear |= vnl
        if vc is None:
            continue
        const += coeff * v0
        for v, c in vc.items():
            coeffs[v] = coeffs.get(v, 0) + coeff * c
    coeffs = {v: c for v, c in coeffs.items() if c != 0}
    current = set(map(id, nest.vars))
    nonlinear = {v for v in nonlinear if id(v) in current}
    return IndexExpansion(coeffs, const, frozenset(nonlinear))


# --------------------------------------------------------------------------- #
# schedule primitives
# --------------------------------------------------------------------------- #

def _fresh_name(base: str, taken: Iterable[str]) -> str:
    taken = set(taken)
    if base not in taken:
        return base
    for i in itertools.count(2):
        cand = f"{base}{i}"
        if cand not in taken:
            return cand
    raise AssertionError("unreachable")


def split(nest: LoopNest, var: IterVar, factor: int) -> tuple[LoopNest, IterVar, IterVar]:
    """Replace ``var`` with (outer, inner): ``var = outer*factor + inner``.

    ``outer.extent = ceil(var.extent / factor)``; when the factor does not
    divide the extent, remainder iterations are masked by the range guard.
    """
    if factor < 1:
        raise SchedError(f"split factor must be >= 1, got {factor}")
    if not any(v is var for v in nest.vars):
        raise SchedError(f"split: {var.name} is not live in the nest")
    names = [v.name for v in nest.vars]
    outer = IterVar(_fresh_name(var.name + "o", names), -(-var.extent // factor), var.kind)
    inner = IterVar(_fresh_name(var.name + "i", names + [outer.name]), factor, var.kind)
    pos = next(i for i, v in enumerate(nest.vars) if v is var)
    new_vars = nest.vars[:pos] + (outer, inner) + nest.vars[pos + 1:]
    sub = SplitSub(parent=var, outer=outer, inner=inner, factor=factor)
    buffered = tuple(
        (name, tuple(inner if v is var else v for v in vs)) for name, vs in nest.buffered)
    return replace(nest, vars=new_vars, subs=nest.subs + (sub,), buffered=buffered), outer, inner


def fuse(nest: LoopNest, hi: IterVar, lo: IterVar) -> tuple[LoopNest, IterVar]:
    """Fuse two adjacent loops (``hi`` immediately encloses ``lo``) into one of
    extent ``hi.extent * lo.extent``."""
    if not any(v is hi for v in nest.vars) or not any(v is lo for v in nest.vars):
        raise SchedError("fuse: both vars must be live in the nest")
    pos = next(i for i, v in enumerate(nest.vars) if v is hi)
    if pos + 1 >= len(nest.vars) or nest.vars[pos + 1] is not lo:
        raise SchedError(f"fuse: {hi.name} does not immediately enclose {lo.name}")
    if hi.kind != lo.kind:
        raise SchedError("fuse: cannot fuse spatial with reduction var")
    names = [v.name for v in nest.vars]
    fused = IterVar(_fresh_name(f"{hi.name}_{lo.name}", names), hi.extent * lo.extent, hi.kind)
    new_vars = nest.vars[:pos] + (fused,) + nest.vars[pos + 2:]
    sub = FuseSub(fused=fused, hi=hi, lo=lo, lo_extent=lo.extent)
    buffered = tuple(
        (name, tuple(fused if (v is hi or v is lo) else v for v in vs))
        for name, vs in nest.buffered)
    return replace(nest, vars=new_vars, subs=nest.subs + (sub,), buffered=buffered), fused


def reorder(nest: LoopNest, order: Sequence[IterVar]) -> LoopNest:
    """Explicitly re-order the nest; ``order`` must be a permutation of the live vars."""
    if len(order) != len(nest.vars) or set(map(id, order)) != set(map(id, nest.vars)):
        raise SchedError("reorder: order is not a permutation of the live vars")
    return replace(nest, vars=tuple(order))


def _check_correlated(nest: LoopNest, tensor: TensorDecl, vars_: Sequence[IterVar],
                      accesses: Sequence[TensorAccess]) -> None:
    correlated: set[IterVar] = set()
    for acc in accesses:
        if acc.tensor.name != tensor.name:
            continue
        for index in acc.indices:
            correlated |= expand_index(index, nest).vars()
    for v in vars_:
        if v not in correlated:
            raise SchedError(f"buffer: var {v.name} is uncorrelated with tensor {tensor.name}")


def buffer_read(nest: LoopNest, tensor: TensorDecl, vars_: Sequence[IterVar]) -> LoopNest:
    """Mark ``tensor`` as read-buffered along the dimensions indexed by ``vars_``."""
    _check_correlated(nest, tensor, vars_, nest.body.all_accesses())
    return replace(nest, buffered=nest.buffered + ((tensor.name, tuple(vars_)),))


def buffer_write(nest: LoopNest, tensor: TensorDecl, vars_: Sequence[IterVar]) -> LoopNest:
    """Mark ``tensor`` as write-buffered along the dimensions indexed by ``vars_``."""
    _check_correlated(nest, tensor, vars_, (nest.body.output,))
    return replace(nest, buffered=nest.buffered + ((tensor.name, tuple(vars_)),))
