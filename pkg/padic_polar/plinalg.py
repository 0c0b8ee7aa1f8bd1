"""
Matrices over Q_p: elimination with minimal-valuation pivots, GL(n, Z_p) membership,
column Hermite forms of lattices, Smith normal form over Z_p (the Cartan decomposition
g = k1 * diag(p^a) * k2) and simultaneous diagonalization of ultrametric norms.
"""
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from padic_polar.errors import ConfigError, InsufficientPrecision, RankDeficient, SingularToPrecision
from padic_polar.padic import INFINITY, PadicScalar, PrimeContext, error_valuation

logger = logging.getLogger(__name__)

Entry = Union[PadicScalar, int, Fraction, str]


def parse_entry(value, ctx: PrimeContext, precision: Optional[int] = None) -> PadicScalar:
    """Accepts scalars, ints, Fractions, 'num/den' strings and scalar JSON objects"""
    if isinstance(value, PadicScalar):
        return value
    if isinstance(value, dict):
        return PadicScalar.from_json(value, ctx)
    if isinstance(value, bool):
        raise ConfigError(f"not a matrix entry: {value!r}")
    if isinstance(value, (int, Fraction)):
        return PadicScalar.from_rational(value, ctx, precision)
    if isinstance(value, str):
        try:
            return PadicScalar.from_rational(Fraction(value.strip()), ctx, precision)
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"not an exact rational: {value!r}")
    raise ConfigError(f"not a matrix entry: {value!r}")


@dataclass(frozen=True)
class PMatrix:
    ctx: PrimeContext
    entries: Tuple[Tuple[PadicScalar, ...], ...]

    def __post_init__(self):
        widths = {len(row) for row in self.entries}
        if len(widths) > 1:
            raise ConfigError("ragged matrix rows")
        for row in self.entries:
            for entry in row:
                if entry.context.p != self.ctx.p:
                    raise ConfigError("matrix entries live over different primes")

    # -- construction ---------------------------------------------------------

    @classmethod
    def from_rows(cls, rows: Iterable[Iterable[Entry]], ctx: PrimeContext,
                  precision: Optional[int] = None) -> "PMatrix":
        return cls(ctx, tuple(tuple(parse_entry(x, ctx, precision) for x in row) for row in rows))

    @classmethod
    def from_columns(cls, columns: Sequence[Sequence[PadicScalar]], ctx: PrimeContext) -> "PMatrix":
        return cls.from_rows(zip(*columns), ctx)

    @classmethod
    def identity(cls, n: int, ctx: PrimeContext) -> "PMatrix":
        return cls.diagonal([1] * n, ctx)

    @classmethod
    def zeros(cls, rows: int, cols: int, ctx: PrimeContext) -> "PMatrix":
        zero = PadicScalar.zero(ctx)
        return cls(ctx, tuple((zero,) * cols for _ in range(rows)))

    @classmethod
    def diagonal(cls, values: Sequence[Entry], ctx: PrimeContext) -> "PMatrix":
        n = len(values)
        zero = PadicScalar.zero(ctx)
        values = [parse_entry(v, ctx) for v in values]
        return cls(ctx, tuple(tuple(values[i] if i == j else zero for j in range(n)) for i in range(n)))

    @classmethod
    def p_power_diagonal(cls, exponents: Sequence[int], ctx: PrimeContext) -> "PMatrix":
        return cls.diagonal([Fraction(ctx.p) ** a for a in exponents], ctx)

    @classmethod
    def from_mutable(cls, rows: List[List[PadicScalar]], ctx: PrimeContext) -> "PMatrix":
        return cls(ctx, tuple(tuple(row) for row in rows))

    # -- shape and access ---------------------------------------------------

    @property
    def rows(self) -> int:
        return len(self.entries)

    @property
    def cols(self) -> int:
        return len(self.entries[0]) if self.entries else 0

    @property
    def is_square(self) -> bool:
        return self.rows == self.cols

    def __getitem__(self, index: Tuple[int, int]) -> PadicScalar:
        i, j = index
        return self.entries[i][j]

    def row(self, i: int) -> Tuple[PadicScalar, ...]:
        return self.entries[i]

    def column(self, j: int) -> Tuple[PadicScalar, ...]:
        return tuple(row[j] for row in self.entries)

    def to_mutable(self) -> List[List[PadicScalar]]:
        return [list(row) for row in self.entries]

    def diagonal_entries(self) -> Tuple[PadicScalar, ...]:
        return tuple(self.entries[i][i] for i in range(min(self.rows, self.cols)))

    def is_diagonal(self) -> bool:
        return all(self.entries[i][j].is_zero
                   for i in range(self.rows) for j in range(self.cols) if i != j)

    def min_valuation(self) -> Union[int, float]:
        return min((x.valuation for row in self.entries for x in row), default=INFINITY)

    @property
    def is_exact(self) -> bool:
        return all(x.is_exact for row in self.entries for x in row)

    def at_precision(self, precision: int) -> "PMatrix":
        return PMatrix(self.ctx.with_precision(precision),
                       tuple(tuple(x.at_precision(precision) for x in row) for row in self.entries))

    # -- algebra ------------------------------------------------------------

    @property
    def T(self) -> "PMatrix":
        return PMatrix(self.ctx, tuple(zip(*self.entries)) if self.entries else ())

    def transpose(self) -> "PMatrix":
        return self.T

    def __matmul__(self, other: "PMatrix") -> "PMatrix":
        if self.cols != other.rows:
            raise ConfigError(f"shape mismatch {self.rows}x{self.cols} @ {other.rows}x{other.cols}")
        zero = PadicScalar.zero(self.ctx)
        columns = [other.column(j) for j in range(other.cols)]
        out = []
        for row in self.entries:
            out_row = []
            for column in columns:
                total = zero
                for a, b in zip(row, column):
                    if a.is_exact_zero or b.is_exact_zero:
                        continue
                    total = total + a * b
                out_row.append(total)
            out.append(tuple(out_row))
        return PMatrix(self.ctx, tuple(out))

    def apply(self, vector: Sequence[PadicScalar]) -> Tuple[PadicScalar, ...]:
        column = PMatrix.from_columns([list(vector)], self.ctx)
        return (self @ column).column(0)

    def _entrywise(self, other: "PMatrix", fn) -> "PMatrix":
        if (self.rows, self.cols) != (other.rows, other.cols):
            raise ConfigError("shape mismatch")
        return PMatrix(self.ctx, tuple(tuple(fn(a, b) for a, b in zip(r1, r2))
                                       for r1, r2 in zip(self.entries, other.entries)))

    def __add__(self, other: "PMatrix") -> "PMatrix":
        return self._entrywise(other, lambda a, b: a + b)

    def __sub__(self, other: "PMatrix") -> "PMatrix":
        return self._entrywise(other, lambda a, b: a - b)

    def scale(self, c: Entry) -> "PMatrix":
        c = parse_entry(c, self.ctx)
        return PMatrix(self.ctx, tuple(tuple(c * x for x in row) for row in self.entries))

    def with_entry(self, i: int, j: int, value: Entry) -> "PMatrix":
        rows = self.to_mutable()
        rows[i][j] = parse_entry(value, self.ctx)
        return PMatrix.from_mutable(rows, self.ctx)

    def det(self) -> PadicScalar:
        if not self.is_square:
            raise ConfigError("determinant of a non-square matrix")
        try:
            perm, _, upper = plu_eliminate(self)
        except SingularToPrecision:
            return PadicScalar.zero(self.ctx)
        result = PadicScalar.from_rational(permutation_sign(perm), self.ctx)
        for i in range(self.rows):
            result = result * upper[i, i]
        return result

    def inverse(self) -> "PMatrix":
        n = self.rows
        perm, lower, upper = plu_eliminate(self)
        zero = PadicScalar.zero(self.ctx)
        columns = []
        for j in range(n):
            # solve L U x = P e_j
            rhs = [PadicScalar.from_rational(1 if perm[i] == j else 0, self.ctx) for i in range(n)]
            y = []
            for i in range(n):
                total = rhs[i]
                for k in range(i):
                    if not lower[i, k].is_exact_zero and not y[k].is_exact_zero:
                        total = total - lower[i, k] * y[k]
                y.append(total)
            x = [zero] * n
            for i in reversed(range(n)):
                total = y[i]
                for k in range(i + 1, n):
                    if not upper[i, k].is_exact_zero and not x[k].is_exact_zero:
                        total = total - upper[i, k] * x[k]
                x[i] = total / upper[i, i]
            columns.append(x)
        return PMatrix.from_columns(columns, self.ctx)

    def agreement(self, reference: "PMatrix") -> Union[int, float]:
        """
        Worst entrywise error valuation against reference, measured relative to the
        reference's scale (its minimal entry valuation, 0 for the zero matrix).
        """
        if (self.rows, self.cols) != (reference.rows, reference.cols):
            raise ConfigError("shape mismatch")
        scale = reference.min_valuation()
        if scale == INFINITY:
            scale = 0
        worst = INFINITY
        for r1, r2 in zip(self.entries, reference.entries):
            for a, b in zip(r1, r2):
                worst = min(worst, error_valuation(a, b))
        return worst - scale

    # -- serialization ------------------------------------------------------

    def to_json(self) -> Dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "entries": [[x.to_json() for x in row] for row in self.entries],
        }

    @classmethod
    def from_json(cls, doc, ctx: PrimeContext) -> "PMatrix":
        """Accepts the matrix JSON object or a bare list of rows"""
        rows = doc["entries"] if isinstance(doc, dict) else doc
        matrix = cls.from_rows(rows, ctx)
        if isinstance(doc, dict) and (matrix.rows, matrix.cols) != (doc["rows"], doc["cols"]):
            raise ConfigError("matrix JSON dimensions disagree with its entries")
        return matrix

    def to_text(self) -> str:
        return "\n".join("[" + ", ".join(x.to_text() for x in row) + "]" for row in self.entries)


def permutation_sign(perm: Sequence[int]) -> int:
    sign = 1
    seen = [False] * len(perm)
    for start in range(len(perm)):
        if seen[start]:
            continue
        length = 0
        i = start
        while not seen[i]:
            seen[i] = True
            i = perm[i]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def _pivot_key(entry: PadicScalar, *index: int):
    return (entry.pivot_valuation,) + index


def _raise_if_inexact(candidates: Iterable[PadicScalar]):
    """A block of zeros with one known only to finite precision needs more digits"""
    if any(not x.is_exact_zero for x in candidates):
        raise InsufficientPrecision("every pivot candidate cancelled to working precision")


def is_integral_unit(m: PMatrix) -> bool:
    """Membership in GL(n, Z_p): integral entries and a unit determinant"""
    if not m.is_square:
        raise ConfigError("GL(n, O) membership needs a square matrix")
    if any(not x.is_integral for row in m.entries for x in row):
        return False
    return m.det().valuation == 0


def plu_eliminate(m: PMatrix) -> Tuple[Tuple[int, ...], PMatrix, PMatrix]:
    """
    P m = L U with row pivots of minimal valuation (largest absolute value), ties to
    the lowest row. Every multiplier lies in Z_p.
    """
    if not m.is_square:
        raise ConfigError("elimination needs a square matrix")
    ctx = m.ctx
    n = m.rows
    zero = PadicScalar.zero(ctx)
    work = m.to_mutable()
    perm = list(range(n))
    lower = [[zero] * n for _ in range(n)]
    for j in range(n):
        pivot_row = min(range(j, n), key=lambda i: _pivot_key(work[i][j], i))
        if work[pivot_row][j].is_zero:
            _raise_if_inexact(work[i][j] for i in range(j, n))
            raise SingularToPrecision(f"no pivot of finite valuation in column {j}")
        if pivot_row != j:
            work[j], work[pivot_row] = work[pivot_row], work[j]
            perm[j], perm[pivot_row] = perm[pivot_row], perm[j]
            lower[j], lower[pivot_row] = lower[pivot_row], lower[j]
        pivot = work[j][j]
        for i in range(j + 1, n):
            if work[i][j].is_zero:
                continue
            multiplier = work[i][j] / pivot
            lower[i][j] = multiplier
            work[i][j] = zero
            for k in range(j + 1, n):
                if not work[j][k].is_zero:
                    work[i][k] = work[i][k] - multiplier * work[j][k]
    one = PadicScalar.from_rational(1, ctx)
    for i in range(n):
        lower[i][i] = one
    return tuple(perm), PMatrix.from_mutable(lower, ctx), PMatrix.from_mutable(work, ctx)


@dataclass(frozen=True)
class CartanFactors:
    """g = k1 * diag(p^exponents) * k2 with k1, k2 in GL(n, Z_p)"""
    k1: PMatrix
    exponents: Tuple[int, ...]
    k2: PMatrix

    def middle(self) -> PMatrix:
        return PMatrix.p_power_diagonal(self.exponents, self.k1.ctx)

    def reconstruct(self) -> PMatrix:
        return self.k1 @ self.middle() @ self.k2

    def to_json(self) -> Dict:
        return {"k1": self.k1.to_json(), "exponents": list(self.exponents), "k2": self.k2.to_json()}


def smith_cartan(g: PMatrix, reverse: bool = False) -> CartanFactors:
    """
    Smith normal form over Z_p with full minimal-valuation pivoting (ties to the
    lowest row, then column). Pivot valuations come out non-decreasing; reverse=True
    returns them non-increasing.
    """
    if not g.is_square:
        raise ConfigError("the Cartan decomposition needs a square matrix")
    ctx = g.ctx
    n = g.rows
    zero = PadicScalar.zero(ctx)
    work = g.to_mutable()
    k1 = PMatrix.identity(n, ctx).to_mutable()
    k2 = PMatrix.identity(n, ctx).to_mutable()
    for t in range(n):
        i0, j0 = min(((i, j) for i in range(t, n) for j in range(t, n)),
                     key=lambda ij: _pivot_key(work[ij[0]][ij[1]], *ij))
        if work[i0][j0].is_zero:
            _raise_if_inexact(work[i][j] for i in range(t, n) for j in range(t, n))
            raise SingularToPrecision(f"matrix has rank {t} < {n} to working precision")
        if i0 != t:
            # row swap in work, column swap in k1
            work[t], work[i0] = work[i0], work[t]
            for row in k1:
                row[t], row[i0] = row[i0], row[t]
        if j0 != t:
            for row in work:
                row[t], row[j0] = row[j0], row[t]
            k2[t], k2[j0] = k2[j0], k2[t]
        pivot = work[t][t]
        for i in range(t + 1, n):
            if work[i][t].is_zero:
                continue
            multiplier = work[i][t] / pivot
            work[i][t] = zero
            for k in range(t + 1, n):
                if not work[t][k].is_zero:
                    work[i][k] = work[i][k] - multiplier * work[t][k]
            # k1 <- k1 * (I + multiplier e_i e_t^T)
            for row in k1:
                if not row[i].is_zero:
                    row[t] = row[t] + multiplier * row[i]
        for j in range(t + 1, n):
            if work[t][j].is_zero:
                continue
            multiplier = work[t][j] / pivot
            work[t][j] = zero
            # k2 <- (I + multiplier e_t e_j^T) * k2
            k2[t] = [a + multiplier * b if not b.is_zero else a for a, b in zip(k2[t], k2[j])]
    exponents = []
    for t in range(n):
        pivot = work[t][t]
        unit = pivot / PadicScalar.power_of_p(ctx, pivot.valuation)
        exponents.append(int(pivot.valuation))
        k2[t] = [unit * x for x in k2[t]]
    factors = CartanFactors(PMatrix.from_mutable(k1, ctx), tuple(exponents), PMatrix.from_mutable(k2, ctx))
    if reverse:
        order = list(reversed(range(n)))
        flip = PMatrix.from_rows([[1 if order[i] == j else 0 for j in range(n)] for i in range(n)], ctx)
        factors = CartanFactors(factors.k1 @ flip, tuple(reversed(exponents)), flip @ factors.k2)
    logger.debug("Cartan exponents %s", factors.exponents)
    return factors


def centered_norm(exponents: Sequence[int]) -> float:
    """Euclidean norm of the exponent vector after subtracting its mean"""
    if not exponents:
        return 0.0
    mean = Fraction(sum(exponents), len(exponents))
    return math.sqrt(float(sum((Fraction(a) - mean) ** 2 for a in exponents)))


@dataclass(frozen=True)
class UltraNorm:
    """
    N(x) = sup_i |p^{w_i} y_i| where x = basis * y, i.e. sup_i alpha_i |y_i| with
    alpha_i = |p^{w_i}| = p^{-w_i}.
    """
    basis: PMatrix
    weights: Tuple[int, ...]

    @classmethod
    def sup_norm(cls, ctx: PrimeContext, n: int) -> "UltraNorm":
        return cls(PMatrix.identity(n, ctx), (0,) * n)

    @property
    def coordinate_matrix(self) -> PMatrix:
        """M with N(x) = ||M x||_sup"""
        return PMatrix.p_power_diagonal(self.weights, self.basis.ctx) @ self.basis.inverse()

    def valuation(self, x: Sequence[PadicScalar]) -> Union[int, float]:
        """The v with N(x) = p^{-v}"""
        return min(y.valuation for y in self.coordinate_matrix.apply(x))

    def evaluate(self, x: Sequence[PadicScalar]) -> Fraction:
        v = self.valuation(x)
        if v == INFINITY:
            return Fraction(0)
        return Fraction(self.basis.ctx.p) ** (-v)


@dataclass(frozen=True)
class NormPairDiagonalization:
    basis: PMatrix
    weights1: Tuple[int, ...]
    weights2: Tuple[int, ...]


def diagonalize_norm_pair(n1: UltraNorm, n2: UltraNorm) -> NormPairDiagonalization:
    """
    A basis in which both norms are sup-of-weighted-coordinates. With
    M1 M2^-1 = k1 D k2 the basis M1^-1 k1 turns N1 into the sup norm and N2 into
    sup |p^{-a_i} y_i|.
    """
    if n1.basis.ctx.p != n2.basis.ctx.p or n1.basis.rows != n2.basis.rows:
        raise ConfigError("norms over different fields or dimensions")
    m1 = n1.coordinate_matrix
    m2 = n2.coordinate_matrix
    factors = smith_cartan(m1 @ m2.inverse())
    basis = m1.inverse() @ factors.k1
    n = basis.rows
    return NormPairDiagonalization(basis, (0,) * n, tuple(-a for a in factors.exponents))


def hnf_lattice(gens: PMatrix) -> PMatrix:
    """
    Column Hermite form over Z_p of the lattice spanned by the columns of gens: upper
    triangular, diagonal p^{e_i}, entries right of the diagonal reduced to their
    digits below p^{e_i}. Equal lattices give identical output.
    """
    ctx = gens.ctx
    n = gens.rows
    zero = PadicScalar.zero(ctx)
    columns = [list(gens.column(j)) for j in range(gens.cols)]
    fixed: List[Optional[List[PadicScalar]]] = [None] * n
    for i in reversed(range(n)):
        live = [c for c in columns if not c[i].is_zero]
        if not live:
            raise RankDeficient(f"generators do not span row {i}")
        pivot_index = min(range(len(columns)),
                          key=lambda j: _pivot_key(columns[j][i], j))
        pivot = columns.pop(pivot_index)
        head = pivot[i]
        for column in columns:
            if column[i].is_zero:
                continue
            multiplier = column[i] / head
            for k in range(i):
                if not pivot[k].is_zero:
                    column[k] = column[k] - multiplier * pivot[k]
            column[i] = zero
        unit = head / PadicScalar.power_of_p(ctx, head.valuation)
        pivot = [x / unit for x in pivot]
        pivot[i] = PadicScalar.power_of_p(ctx, head.valuation)
        fixed[i] = pivot
    hermite = [list(column) for column in fixed]
    exponents = [int(hermite[i][i].valuation) for i in range(n)]
    for j in range(n):
        column = hermite[j]
        for i in reversed(range(j)):
            entry = column[i]
            reduced = entry.truncate_below(exponents[i])
            if entry.is_zero or error_valuation(entry, reduced) >= entry.absolute_precision:
                column[i] = reduced
                continue
            quotient = (entry - reduced) / hermite[i][i]
            for k in range(i):
                if not hermite[i][k].is_zero:
                    column[k] = column[k] - quotient * hermite[i][k]
            column[i] = reduced
    return PMatrix.from_columns(hermite, ctx)
