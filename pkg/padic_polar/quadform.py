"""
Quadratic forms over Q_p (p odd): diagonalization by a GL(n, Z_p) base change,
the classical invariants, representation of values and isometries between
equivalent forms.
"""
import logging
from dataclasses import dataclass, field
from itertools import product
from typing import Dict, List, Optional, Sequence, Tuple

from padic_polar.errors import (
    ConfigError,
    Degenerate,
    InsufficientPrecision,
    InternalInvariantViolation,
    InvariantMismatch,
    NotRepresented,
    SingularToPrecision,
)
from padic_polar.padic import (
    INFINITY,
    PadicScalar,
    PrimeContext,
    SquareClass,
    TRIVIAL_CLASS,
    error_valuation,
    hensel_sqrt,
    hilbert_symbol,
    unit_square_class,
)
from padic_polar.plinalg import PMatrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FormInvariants:
    dim: int
    disc: SquareClass
    hasse: int

    def to_json(self) -> Dict:
        return {"dim": self.dim, "disc": self.disc.to_json(), "hasse": self.hasse}


@dataclass(frozen=True)
class SupDiagonalization:
    """U^T B U = diag(values) with U in GL(n, Z_p)"""
    U: PMatrix
    values: Tuple[PadicScalar, ...]


@dataclass(frozen=True)
class MaxVector:
    vector: Tuple[PadicScalar, ...]
    scale: int


@dataclass(frozen=True)
class SquareClassSplit:
    """values[i] = representative(classes[i]) * roots[i]^2"""
    classes: Tuple[SquareClass, ...]
    roots: Tuple[PadicScalar, ...]


def _agree(a: PadicScalar, b: PadicScalar) -> bool:
    return error_valuation(a, b) >= min(a.absolute_precision, b.absolute_precision)


def _symmetric(gram: PMatrix) -> bool:
    return all(_agree(gram[i, j], gram[j, i])
               for i in range(gram.rows) for j in range(i + 1, gram.cols))


def _same_gram(b1: PMatrix, b2: PMatrix) -> bool:
    return all(_agree(x, y) for r1, r2 in zip(b1.entries, b2.entries) for x, y in zip(r1, r2))


@dataclass(frozen=True)
class QuadraticForm:
    """
    q(x) = x^T B x for a symmetric non-degenerate Gram matrix B. The
    diagonalization and invariants are computed once at construction.
    """
    gram: PMatrix
    diagonalization: SupDiagonalization = field(init=False, repr=False, compare=False)
    invariants: FormInvariants = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.gram.is_square:
            raise ConfigError("a Gram matrix must be square")
        if not _symmetric(self.gram):
            raise ConfigError("the Gram matrix is not symmetric")
        diagonal = _diagonalize_gram(self.gram)
        object.__setattr__(self, 'diagonalization', diagonal)
        object.__setattr__(self, 'invariants', _invariants_of(diagonal.values))

    @classmethod
    def diagonal(cls, values: Sequence, ctx: PrimeContext) -> "QuadraticForm":
        return cls(PMatrix.diagonal(values, ctx))

    @property
    def ctx(self) -> PrimeContext:
        return self.gram.ctx

    @property
    def dim(self) -> int:
        return self.gram.rows

    @property
    def disc(self) -> SquareClass:
        return self.invariants.disc

    @property
    def hasse(self) -> int:
        return self.invariants.hasse

    def is_diagonal(self) -> bool:
        return self.gram.is_diagonal()

    def evaluate(self, v: Sequence[PadicScalar]) -> PadicScalar:
        image = self.gram.apply(v)
        total = PadicScalar.zero(self.ctx)
        for a, b in zip(v, image):
            if not a.is_exact_zero and not b.is_exact_zero:
                total = total + a * b
        return total

    def to_json(self) -> Dict:
        return {"p": self.ctx.p, "gram": self.gram.to_json()}

    @classmethod
    def from_json(cls, doc: Dict, ctx: PrimeContext) -> "QuadraticForm":
        if doc.get("p", ctx.p) != ctx.p:
            raise ConfigError(f"form is over Q_{doc['p']}, expected Q_{ctx.p}")
        return cls(PMatrix.from_json(doc["gram"], ctx))


def _as_gram(q) -> PMatrix:
    return q.gram if isinstance(q, QuadraticForm) else q


def _pick_max_index(block: List[List[PadicScalar]], start: int) -> Tuple[int, Optional[int], int]:
    """
    (i, j, m) for the trailing block from start: the lowest diagonal index with
    the block's minimal valuation m (j is None), else the lexicographically first
    off-diagonal pair (i, j) attaining m.
    """
    n = len(block)
    m = min(block[i][j].pivot_valuation for i in range(start, n) for j in range(start, n))
    if m == INFINITY:
        if any(not block[i][j].is_exact_zero for i in range(start, n) for j in range(start, n)):
            raise InsufficientPrecision("the complement cancelled to working precision")
        raise Degenerate("the form vanishes on a complement to working precision")
    for i in range(start, n):
        if block[i][i].pivot_valuation == m:
            return i, None, m
    for i in range(start, n):
        for j in range(i + 1, n):
            if block[i][j].pivot_valuation == m:
                return i, j, m
    raise InternalInvariantViolation("minimal valuation not attained")


def find_max_vector(q) -> MaxVector:
    """
    A vector e of Z_p^n where |q| is maximal on the unit ball, for the Gram matrix
    scaled by p^-scale so its minimal entry valuation is 0. A unit diagonal entry
    gives a basis vector; otherwise e_i + e_j works for a unit off-diagonal entry
    because 2 is a unit.
    """
    gram = _as_gram(q)
    ctx = gram.ctx
    i, j, scale = _pick_max_index(gram.to_mutable(), 0)
    vector = [PadicScalar.zero(ctx)] * gram.rows
    vector[i] = ctx.one()
    if j is not None:
        vector[j] = ctx.one()
    return MaxVector(tuple(vector), int(scale))


def _congruence_add(block, basis, target: int, source: int):
    """Replace basis vector target by e_target + e_source"""
    n = len(block)
    for k in range(n):
        block[k][target] = block[k][target] + block[k][source]
    for k in range(n):
        block[target][k] = block[target][k] + block[source][k]
    for row in basis:
        row[target] = row[target] + row[source]


def _swap(block, basis, a: int, b: int):
    if a == b:
        return
    block[a], block[b] = block[b], block[a]
    for row in block:
        row[a], row[b] = row[b], row[a]
    for row in basis:
        row[a], row[b] = row[b], row[a]


def _diagonalize_gram(gram: PMatrix) -> SupDiagonalization:
    ctx = gram.ctx
    n = gram.rows
    zero = PadicScalar.zero(ctx)
    if gram.min_valuation() == INFINITY:
        raise Degenerate("the zero form is degenerate")
    block = gram.to_mutable()
    basis = PMatrix.identity(n, ctx).to_mutable()
    values = []
    for t in range(n):
        i, j, _ = _pick_max_index(block, t)
        if j is not None:
            _congruence_add(block, basis, j, i)
            i = j
        _swap(block, basis, t, i)
        pivot = block[t][t]
        multipliers = [block[t][k] / pivot if not block[t][k].is_zero else zero for k in range(n)]
        for k in range(t + 1, n):
            lk = multipliers[k]
            if lk.is_zero:
                continue
            for row in basis:
                if not row[t].is_zero:
                    row[k] = row[k] - lk * row[t]
        for k in range(t + 1, n):
            for l in range(t + 1, n):
                if multipliers[k].is_zero or block[t][l].is_zero:
                    continue
                block[k][l] = block[k][l] - multipliers[k] * block[t][l]
        for k in range(t + 1, n):
            block[t][k] = zero
            block[k][t] = zero
        values.append(pivot)
    return SupDiagonalization(PMatrix.from_mutable(basis, ctx), tuple(values))


def diagonalize_sup(q) -> SupDiagonalization:
    """
    U in GL(n, Z_p) and D with U^T B U = diag(D): pick a vector of maximal |q|,
    complete it to a Z_p-basis, clear its row and column (divisions by a unit
    relative to the block scale), recurse on the complement.
    """
    if isinstance(q, QuadraticForm):
        return q.diagonalization
    return _diagonalize_gram(q)


def square_class_split(values: Sequence[PadicScalar]) -> SquareClassSplit:
    classes = []
    roots = []
    for c in values:
        if c.is_exact_zero:
            raise Degenerate("square classes need non-zero values")
        s = unit_square_class(c)
        classes.append(s)
        roots.append(hensel_sqrt(c / s.representative(c.context)))
    return SquareClassSplit(tuple(classes), tuple(roots))


def _invariants_of(values: Sequence[PadicScalar]) -> FormInvariants:
    disc = TRIVIAL_CLASS
    for c in values:
        disc = disc * unit_square_class(c)
    hasse = 1
    for i in range(len(values)):
        for j in range(i + 1, len(values)):
            hasse *= hilbert_symbol(values[i], values[j])
    return FormInvariants(len(values), disc, hasse)


def form_invariants(q) -> FormInvariants:
    """(dim, discriminant class, Hasse invariant); forms over Q_p are equivalent iff these agree"""
    if isinstance(q, QuadraticForm):
        return q.invariants
    return _invariants_of(_diagonalize_gram(q).values)


def is_equivalent(q1, q2) -> bool:
    return form_invariants(q1) == form_invariants(q2)


def _solve_coordinate(coefficient: PadicScalar, target: PadicScalar) -> PadicScalar:
    """x with coefficient * x^2 = target, where target/coefficient is a unit square"""
    return hensel_sqrt(target / coefficient)


def _residue_search(units: Sequence[PadicScalar], indices: Sequence[int], target: int, p: int):
    """
    Residues w on indices, not all zero, with sum units[i] w_i^2 = target mod p.
    Two coordinates reach every non-zero residue and three are always isotropic,
    so the scan is limited to that many. Returns (assignment, pivot index) or None.
    """
    window = list(indices)[:2 if target % p else 3]
    residues = [u.leading_digit for u in units]
    if target % p:
        # a single coordinate first, so a basis vector is found when one exists
        for i in window:
            for w in range(1, p):
                if residues[i] * w * w % p == target % p:
                    return {i: w}, i
    for values in product(range(p), repeat=len(window)):
        if not any(values):
            continue
        total = sum(residues[i] * w * w for i, w in zip(window, values)) % p
        if total == target % p:
            assignment = dict(zip(window, values))
            pivot = next(i for i in window if assignment[i])
            return assignment, pivot
    return None


def _lift(units: Sequence[PadicScalar], assignment: Dict[int, int], pivot: int,
          target: PadicScalar) -> List[PadicScalar]:
    """Fix the non-pivot coordinates at their residues and solve the pivot exactly"""
    ctx = target.context
    w = [PadicScalar.zero(ctx)] * len(units)
    rest = target
    for i, residue in assignment.items():
        if i == pivot or residue == 0:
            continue
        w[i] = ctx.embed(residue)
        rest = rest - units[i] * w[i] * w[i]
    w[pivot] = _solve_coordinate(units[pivot], rest)
    return w


def represent_value(q, c: PadicScalar) -> Tuple[PadicScalar, ...]:
    """
    v with q(v) = c for a diagonal form q. Coordinates are rescaled by p-powers so
    the coefficients of q/c have valuation 0 or 1; a unit solution comes from a
    residue search on the valuation-0 part, otherwise from an isotropic residue of
    the valuation-1 part lifted to value p (one shift of the scale).
    """
    gram = _as_gram(q)
    if not gram.is_diagonal():
        raise ConfigError("represent_value needs a diagonal form")
    if c.is_zero:
        raise ConfigError("only non-zero values are represented")
    ctx = gram.ctx
    coefficients = gram.diagonal_entries()
    if any(x.is_zero and not x.is_exact_zero for x in coefficients):
        raise InsufficientPrecision("a coefficient cancelled to working precision")
    if any(x.is_zero for x in coefficients):
        raise Degenerate("diagonal form with a zero coefficient")
    n = len(coefficients)
    if n == 1:
        if unit_square_class(c / coefficients[0]) != TRIVIAL_CLASS:
            raise NotRepresented(f"{c!r} is not a square multiple of the coefficient")
    elif n == 2:
        a, b = coefficients
        if hilbert_symbol(a * c, b * c) != 1:
            raise NotRepresented("Hilbert symbol excludes the value for this binary form")

    shifts = []
    scaled = []
    for b in coefficients:
        ratio = b / c
        m = -(int(ratio.valuation) // 2)
        shifts.append(m)
        scaled.append(ratio * PadicScalar.power_of_p(ctx, 2 * m))
    spread = max(x.valuation for x in scaled) - min(x.valuation for x in scaled)
    if spread > 1:
        raise InternalInvariantViolation(f"normalized valuation spread {spread} exceeds 1")
    p = ctx.p
    level0 = [i for i, x in enumerate(scaled) if x.valuation == 0]
    level1 = [i for i, x in enumerate(scaled) if x.valuation == 1]
    one = ctx.one()
    w = None
    found = _residue_search(scaled, level0, 1, p)
    if found is not None:
        w = _lift(scaled, found[0], found[1], one)
    else:
        units1 = [x / PadicScalar.power_of_p(ctx, 1) for x in scaled]
        found = _residue_search(units1, level1, 0, p) if len(level1) >= 2 else None
        if found is not None:
            # units1-form takes the value p, so the scaled form takes p^2
            lifted = _lift(units1, found[0], found[1], PadicScalar.power_of_p(ctx, 1))
            inverse_p = PadicScalar.power_of_p(ctx, -1)
            w = [x * inverse_p for x in lifted]
    if w is None:
        raise NotRepresented(f"the form does not represent {c!r}")
    vector = tuple(x * PadicScalar.power_of_p(ctx, m) for x, m in zip(w, shifts))
    logger.debug("represented value with vector %s", [x.to_text() for x in vector])
    return vector


def _complement_basis(values: Sequence[PadicScalar], v: Sequence[PadicScalar]) -> PMatrix:
    """
    Columns spanning the orthogonal complement of v for diag(values): e_j minus a
    multiple of e_i0 where |values[i0] v[i0]| is maximal, so the multiples are integral.
    """
    ctx = v[0].context
    n = len(values)
    weighted = [a * x for a, x in zip(values, v)]
    i0 = min(range(n), key=lambda i: (weighted[i].pivot_valuation, i))
    columns = []
    for j in range(n):
        if j == i0:
            continue
        column = [PadicScalar.zero(ctx)] * n
        column[j] = ctx.one()
        if not weighted[j].is_exact_zero:
            column[i0] = -(weighted[j] / weighted[i0])
        columns.append(column)
    return PMatrix.from_columns(columns, ctx)


def _diagonal_isometry(source: Sequence[PadicScalar], target: Sequence[PadicScalar]) -> PMatrix:
    """delta with delta^T diag(source) delta = diag(target), by Witt chaining"""
    ctx = source[0].context
    n = len(source)
    source_form = PMatrix.diagonal(list(source), ctx)
    first = represent_value(source_form, target[0])
    if n == 1:
        return PMatrix.from_columns([list(first)], ctx)
    complement = _complement_basis(source, first)
    restricted = complement.T @ source_form @ complement
    inner = _diagonalize_gram(restricted)
    rest = _diagonal_isometry(inner.values, target[1:])
    tail = complement @ inner.U @ rest
    columns = [list(first)] + [list(tail.column(j)) for j in range(tail.cols)]
    return PMatrix.from_columns(columns, ctx)


def witt_isometry(q1, q2) -> PMatrix:
    """
    gamma with gamma^T B1 gamma = B2. Both forms are diagonalized, each target
    value is represented in the remaining part of the source and split off with
    its orthogonal complement.
    """
    q1 = q1 if isinstance(q1, QuadraticForm) else QuadraticForm(q1)
    q2 = q2 if isinstance(q2, QuadraticForm) else QuadraticForm(q2)
    if q1.invariants != q2.invariants:
        raise InvariantMismatch(f"invariants differ: {q1.invariants} vs {q2.invariants}")
    if _same_gram(q1.gram, q2.gram):
        return PMatrix.identity(q1.dim, q1.ctx)
    d1 = q1.diagonalization
    d2 = q2.diagonalization
    delta = _diagonal_isometry(d1.values, d2.values)
    try:
        return d1.U @ delta @ d2.U.inverse()
    except SingularToPrecision:
        raise InternalInvariantViolation("diagonalizing base change is not invertible")
