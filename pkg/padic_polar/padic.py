"""
Capped relative precision arithmetic in Q_p for odd primes p.

A scalar is p^valuation * unit with the unit known modulo p^precision. An addition that
cancels every retained digit gives an inexact zero O(p^k), known only up to its absolute
precision k; it never serves as a pivot or a divisor. Scalars embedded from rationals carry
their exact value along, so exact cancellation (1 - 1) gives the exact zero.
"""
import math
import operator
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from itertools import count
from typing import Dict, Iterator, List, Optional, Union

from sympy.ntheory import isprime, legendre_symbol, sqrt_mod

from padic_polar.errors import (
    ConfigError,
    DivisionByZero,
    InsufficientPrecision,
    InvalidPrime,
    NotASquare,
)

INFINITY = math.inf

# exact shadows larger than this are dropped and the scalar continues as inexact
_SHADOW_BITS = 1 << 14

Rational = Union[int, Fraction]


@lru_cache(maxsize=4096)
def _ppow(p: int, k: int) -> int:
    return p ** k


def valuation_of_int(n: int, p: int) -> int:
    """p-adic valuation of a non-zero integer"""
    if n == 0:
        raise ValueError("valuation of 0 is infinite")
    v = 0
    while n % p == 0:
        n //= p
        v += 1
    return v


def valuation_of_rational(value: Fraction, p: int) -> Union[int, float]:
    if value == 0:
        return INFINITY
    return valuation_of_int(value.numerator, p) - valuation_of_int(value.denominator, p)


def legendre(a: int, p: int) -> int:
    return int(legendre_symbol(a % p, p))


@dataclass(frozen=True)
class PrimeContext:
    """
    The field Q_p: an odd prime, the default relative precision and the retry cap.
    nonresidue_u is the smallest positive quadratic non-residue mod p.
    """
    p: int
    default_precision: int = 64
    max_precision: int = 1024
    nonresidue_u: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.p < 3 or not isprime(self.p):
            raise InvalidPrime(f"p must be an odd prime, got {self.p}")
        if self.default_precision < 1:
            raise ConfigError("precision must be positive")
        if self.max_precision < self.default_precision:
            raise ConfigError("max precision is below the default precision")
        u = next(a for a in count(2) if legendre(a, self.p) == -1)
        object.__setattr__(self, 'nonresidue_u', u)

    def with_precision(self, precision: int) -> "PrimeContext":
        return replace(self, default_precision=precision,
                       max_precision=max(self.max_precision, precision))

    def precision_ladder(self) -> Iterator[int]:
        """Default precision, then doubled, up to and including the cap"""
        precision = self.default_precision
        yield precision
        while precision < self.max_precision:
            precision = min(2 * precision, self.max_precision)
            yield precision

    def embed(self, value: Rational, precision: Optional[int] = None) -> "PadicScalar":
        return PadicScalar.from_rational(value, self, precision)

    def zero(self) -> "PadicScalar":
        return PadicScalar.zero(self)

    def one(self) -> "PadicScalar":
        return PadicScalar.from_rational(1, self)


_TEXT_PATTERN = re.compile(
    r"^\s*(\d+)\^(-?\d+) \* \((.*)\) \[prec (\d+)\](?: = (-?\d+(?:/\d+)?))?\s*$"
)
_ZERO_PATTERN = re.compile(r"^\s*O\((\d+)\^(-?\d+)\)\s*$")


@dataclass(frozen=True, eq=False)
class PadicScalar:
    context: PrimeContext
    valuation: Union[int, float]
    unit_digits: int
    precision: int
    rational: Optional[Fraction] = None

    def __post_init__(self):
        if self.valuation == INFINITY:
            if self.unit_digits != 0:
                raise ValueError("the zero scalar has no unit digits")
            return
        if self.unit_digits == 0 and self.precision == 0 and self.rational is None:
            return
        p = self.context.p
        if self.precision < 1:
            raise ValueError("non-zero scalars need precision >= 1")
        if self.unit_digits % p == 0 or not 0 < self.unit_digits < _ppow(p, self.precision):
            raise ValueError("unit digits must be a unit modulo p^precision")

    # -- construction -------------------------------------------------------

    @classmethod
    def zero(cls, ctx: PrimeContext) -> "PadicScalar":
        return cls(ctx, INFINITY, 0, 0, Fraction(0))

    @classmethod
    def inexact_zero(cls, ctx: PrimeContext, absolute_precision: int) -> "PadicScalar":
        """O(p^absolute_precision)"""
        return cls(ctx, absolute_precision, 0, 0)

    @classmethod
    def from_rational(cls, value: Rational, ctx: PrimeContext,
                      precision: Optional[int] = None) -> "PadicScalar":
        value = Fraction(value)
        if value == 0:
            return cls.zero(ctx)
        precision = precision or ctx.default_precision
        p = ctx.p
        num, den = value.numerator, value.denominator
        v_num = valuation_of_int(num, p)
        v_den = valuation_of_int(den, p)
        num //= _ppow(p, v_num)
        den //= _ppow(p, v_den)
        modulus = _ppow(p, precision)
        unit = (num * pow(den, -1, modulus)) % modulus
        shadow = value if num.bit_length() + den.bit_length() <= _SHADOW_BITS else None
        return cls(ctx, v_num - v_den, unit, precision, shadow)

    @classmethod
    def power_of_p(cls, ctx: PrimeContext, k: int, precision: Optional[int] = None) -> "PadicScalar":
        return cls.from_rational(Fraction(ctx.p) ** k, ctx, precision)

    @classmethod
    def _from_exact(cls, value: Fraction, ctx: PrimeContext, precision: int) -> "PadicScalar":
        return cls.from_rational(value, ctx, precision)

    # -- basic properties ---------------------------------------------------

    @property
    def p(self) -> int:
        return self.context.p

    @property
    def is_zero(self) -> bool:
        """True for the exact zero and for zeros known only to some absolute precision"""
        return self.unit_digits == 0

    @property
    def is_exact_zero(self) -> bool:
        return self.valuation == INFINITY

    @property
    def pivot_valuation(self) -> Union[int, float]:
        """Valuation of a non-zero scalar; INFINITY for either kind of zero"""
        return INFINITY if self.is_zero else self.valuation

    @property
    def is_exact(self) -> bool:
        return self.rational is not None

    @property
    def is_unit(self) -> bool:
        return self.valuation == 0

    @property
    def is_integral(self) -> bool:
        return self.valuation >= 0

    @property
    def absolute_precision(self) -> Union[int, float]:
        if self.is_exact:
            return INFINITY
        return self.valuation + self.precision

    @property
    def leading_digit(self) -> int:
        return self.unit_digits % self.p

    def digits(self) -> List[int]:
        """Base-p digits of the unit part, least significant first"""
        out = []
        n = self.unit_digits
        for _ in range(self.precision):
            n, r = divmod(n, self.p)
            out.append(r)
        return out

    def at_precision(self, precision: int) -> "PadicScalar":
        """
        Re-embed an exact scalar at the given relative precision; an inexact scalar can
        only be truncated.
        """
        if self.is_zero:
            return self
        if self.is_exact:
            if precision == self.precision:
                return self
            return PadicScalar.from_rational(self.rational, self.context, precision)
        if precision >= self.precision:
            return self
        return PadicScalar(self.context, self.valuation,
                           self.unit_digits % _ppow(self.p, precision), precision)

    def truncate_below(self, e: int) -> "PadicScalar":
        """Exact scalar sum_{k<e} d_k p^k, the canonical representative modulo p^e O"""
        if self.is_exact_zero or self.valuation >= e:
            return PadicScalar.zero(self.context)
        if self.is_zero:
            raise InsufficientPrecision(f"zero known to p^{self.valuation} cannot be reduced modulo p^{e}")
        needed = e - self.valuation
        source = self
        if self.is_exact:
            source = self.at_precision(max(needed, self.precision))
        elif needed > self.precision:
            raise InsufficientPrecision(
                f"need {needed} digits to reduce modulo p^{e}, scalar carries {self.precision}")
        part = source.unit_digits % _ppow(self.p, needed)
        value = Fraction(part) * Fraction(self.p) ** self.valuation
        return PadicScalar.from_rational(value, self.context, max(self.precision, 1))

    # -- arithmetic -----------------------------------------------------------

    def _coerce(self, other) -> "PadicScalar":
        if isinstance(other, PadicScalar):
            if other.context.p != self.context.p:
                raise ValueError(f"cannot mix Q_{self.p} and Q_{other.p} scalars")
            return other
        if isinstance(other, (int, Fraction)):
            return PadicScalar.from_rational(other, self.context, self.precision or None)
        return NotImplemented

    def _aligned(self, other: "PadicScalar", sign: int):
        """
        Digits of self + sign*other aligned at the smaller valuation, up to the
        smaller absolute precision. Returns (valuation, width, total).
        """
        p = self.p
        cap = min(self.absolute_precision, other.absolute_precision)
        a, b = self, other
        if a.is_exact and not a.is_zero:
            a = a.at_precision(max(a.precision, cap - a.valuation))
        if b.is_exact and not b.is_zero:
            b = b.at_precision(max(b.precision, cap - b.valuation))
        v = min(a.valuation, b.valuation)
        width = cap - v
        if width <= 0:
            return v, width, 0
        modulus = _ppow(p, width)
        total = 0
        if not a.is_zero:
            total += a.unit_digits * _ppow(p, a.valuation - v)
        if not b.is_zero:
            total += sign * b.unit_digits * _ppow(p, b.valuation - v)
        return v, width, total % modulus

    def _combine(self, other: "PadicScalar", sign: int) -> "PadicScalar":
        if other.is_exact_zero:
            return self
        if self.is_exact_zero:
            return other if sign > 0 else -other
        if self.is_exact and other.is_exact:
            precision = max(self.precision, other.precision)
            return PadicScalar._from_exact(self.rational + sign * other.rational, self.context, precision)
        v, width, total = self._aligned(other, sign)
        if total == 0:
            return PadicScalar.inexact_zero(self.context, v + width)
        shift = valuation_of_int(total, self.p)
        unit = total // _ppow(self.p, shift)
        return PadicScalar(self.context, v + shift, unit, width - shift)

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return self._combine(other, 1)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return self._combine(other, -1)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return other._combine(self, -1)

    def __neg__(self) -> "PadicScalar":
        if self.is_zero:
            return self
        modulus = _ppow(self.p, self.precision)
        return PadicScalar(self.context, self.valuation, (-self.unit_digits) % modulus,
                           self.precision, -self.rational if self.is_exact else None)

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        if self.is_exact_zero or other.is_exact_zero:
            return PadicScalar.zero(self.context)
        if self.is_zero or other.is_zero:
            return PadicScalar.inexact_zero(self.context, self.valuation + other.valuation)
        if self.is_exact and other.is_exact:
            precision = max(self.precision, other.precision)
            return PadicScalar._from_exact(self.rational * other.rational, self.context, precision)
        a, b = self, other
        # an exact operand is known to every digit the inexact one needs
        if a.is_exact:
            a = a.at_precision(b.precision)
        if b.is_exact:
            b = b.at_precision(a.precision)
        precision = min(a.precision, b.precision)
        modulus = _ppow(self.p, precision)
        return PadicScalar(self.context, a.valuation + b.valuation,
                           (a.unit_digits * b.unit_digits) % modulus, precision)

    __rmul__ = __mul__

    def inverse(self) -> "PadicScalar":
        if self.is_exact_zero:
            raise DivisionByZero("division by the zero scalar")
        if self.is_zero:
            raise InsufficientPrecision(f"cannot divide by a zero known only to p^{self.valuation}")
        if self.is_exact:
            return PadicScalar._from_exact(1 / self.rational, self.context, self.precision)
        modulus = _ppow(self.p, self.precision)
        return PadicScalar(self.context, -self.valuation,
                           pow(self.unit_digits, -1, modulus), self.precision)

    def __truediv__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        if other.is_zero:
            # raises for either kind of zero
            return self * other.inverse()
        if self.is_exact_zero:
            return self
        if self.is_zero:
            return PadicScalar.inexact_zero(self.context, self.valuation - other.valuation)
        if self.is_exact and other.is_exact:
            precision = max(self.precision, other.precision)
            return PadicScalar._from_exact(self.rational / other.rational, self.context, precision)
        return self * other.inverse()

    def __rtruediv__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return other / self

    def __pow__(self, k: int) -> "PadicScalar":
        if k < 0:
            return self.inverse() ** (-k)
        result = PadicScalar.from_rational(1, self.context, self.precision or None)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __eq__(self, other) -> bool:
        if not isinstance(other, PadicScalar):
            return NotImplemented
        return (self.context.p == other.context.p and self.valuation == other.valuation
                and self.precision == other.precision and self.unit_digits == other.unit_digits)

    def __hash__(self) -> int:
        return hash((self.context.p, self.valuation, self.precision, self.unit_digits))

    # -- rendering ------------------------------------------------------------

    def to_text(self) -> str:
        """'p^v * (d0 + d1*p + ...) [prec N]', with ' = a/b' appended for exact values"""
        if self.is_exact_zero:
            return "0"
        if self.is_zero:
            return f"O({self.p}^{self.valuation})"
        p = self.p
        terms = []
        for k, d in enumerate(self.digits()):
            if d == 0:
                continue
            if k == 0:
                terms.append(str(d))
            elif k == 1:
                terms.append(f"{d}*{p}")
            else:
                terms.append(f"{d}*{p}^{k}")
        text = f"{p}^{self.valuation} * ({' + '.join(terms)}) [prec {self.precision}]"
        if self.is_exact:
            text += f" = {self.rational}"
        return text

    def __str__(self) -> str:
        return self.to_text()

    @classmethod
    def from_text(cls, text: str, ctx: PrimeContext) -> "PadicScalar":
        if text.strip() == "0":
            return cls.zero(ctx)
        match = _ZERO_PATTERN.match(text)
        if match:
            if int(match.group(1)) != ctx.p:
                raise ConfigError(f"literal is over Q_{match.group(1)}, expected Q_{ctx.p}")
            return cls.inexact_zero(ctx, int(match.group(2)))
        match = _TEXT_PATTERN.match(text)
        if not match:
            raise ConfigError(f"unparseable p-adic literal: {text!r}")
        p, valuation, body, precision, rational = match.groups()
        if int(p) != ctx.p:
            raise ConfigError(f"literal is over Q_{p}, expected Q_{ctx.p}")
        unit = 0
        for term in body.split(" + "):
            if "*" in term:
                digit, power = term.split("*")
                k = int(power.split("^")[1]) if "^" in power else 1
            else:
                digit, k = term, 0
            unit += int(digit) * ctx.p ** k
        return cls(ctx, int(valuation), unit, int(precision),
                   Fraction(rational) if rational is not None else None)

    def to_json(self) -> Dict:
        doc = {
            "p": self.p,
            "valuation": "inf" if self.is_exact_zero else self.valuation,
            "digits": [] if self.is_zero else self.digits(),
            "precision": self.precision,
        }
        if self.is_exact:
            doc["rational"] = str(self.rational)
        return doc

    @classmethod
    def from_json(cls, doc: Dict, ctx: Optional[PrimeContext] = None) -> "PadicScalar":
        ctx = ctx or PrimeContext(doc["p"])
        if doc["p"] != ctx.p:
            raise ConfigError(f"scalar is over Q_{doc['p']}, expected Q_{ctx.p}")
        if doc["valuation"] == "inf":
            return cls.zero(ctx)
        unit = sum(d * ctx.p ** k for k, d in enumerate(doc["digits"]))
        rational = Fraction(doc["rational"]) if "rational" in doc else None
        return cls(ctx, int(doc["valuation"]), unit, int(doc["precision"]), rational)

    def __repr__(self) -> str:
        if self.is_exact_zero:
            return f"PadicScalar(0, p={self.p})"
        return f"PadicScalar({self.to_text()})"


def embed_rational(numerator: int, denominator: int, ctx: PrimeContext) -> PadicScalar:
    if denominator == 0:
        raise DivisionByZero("denominator must be non-zero")
    return PadicScalar.from_rational(Fraction(numerator, denominator), ctx)


_OPERATIONS = {
    "add": operator.add,
    "sub": operator.sub,
    "mul": operator.mul,
    "div": operator.truediv,
}


def arith(a: PadicScalar, b: PadicScalar, op: str) -> PadicScalar:
    if a.context.p != b.context.p:
        raise ValueError("operands live over different primes")
    try:
        return _OPERATIONS[op](a, b)
    except KeyError:
        raise ValueError(f"unknown operation {op!r}")


def error_valuation(a: PadicScalar, b: PadicScalar) -> Union[int, float]:
    """
    Valuation of a - b. When a and b agree on every digit both carry, the
    smaller absolute precision is returned (INFINITY only for exact agreement).
    """
    if a.is_exact and b.is_exact:
        return valuation_of_rational(a.rational - b.rational, a.p)
    v, width, total = a._aligned(b, -1)
    if total == 0:
        return v + max(width, 0) if v != INFINITY else min(a.absolute_precision, b.absolute_precision)
    return v + valuation_of_int(total, a.p)


class UnitClass(Enum):
    TRIVIAL = "trivial"
    NONRESIDUE = "nonresidue"


@dataclass(frozen=True)
class SquareClass:
    """An element of Q_p*/Q_p*^2, represented by 1, u, p or up"""
    unit_class: UnitClass
    valuation_parity: int

    def __mul__(self, other: "SquareClass") -> "SquareClass":
        unit = UnitClass.TRIVIAL if self.unit_class == other.unit_class else UnitClass.NONRESIDUE
        return SquareClass(unit, (self.valuation_parity + other.valuation_parity) % 2)

    @property
    def label(self) -> str:
        unit = "u" if self.unit_class == UnitClass.NONRESIDUE else ""
        uniformizer = "p" if self.valuation_parity else ""
        return (unit + uniformizer) or "1"

    @property
    def sort_key(self):
        return self.valuation_parity, self.unit_class == UnitClass.NONRESIDUE

    def representative(self, ctx: PrimeContext, precision: Optional[int] = None) -> PadicScalar:
        value = Fraction(ctx.nonresidue_u if self.unit_class == UnitClass.NONRESIDUE else 1)
        if self.valuation_parity:
            value *= ctx.p
        return PadicScalar.from_rational(value, ctx, precision)

    @classmethod
    def from_label(cls, label: str) -> "SquareClass":
        label = label.strip()
        if label not in ("1", "u", "p", "up"):
            raise ConfigError(f"unknown square class {label!r}")
        unit = UnitClass.NONRESIDUE if "u" in label else UnitClass.TRIVIAL
        return cls(unit, 1 if "p" in label else 0)

    @classmethod
    def all(cls) -> tuple:
        return tuple(cls.from_label(label) for label in ("1", "u", "p", "up"))

    def to_json(self) -> Dict:
        return {"unit_class": self.unit_class.value, "parity": self.valuation_parity}

    def __str__(self) -> str:
        return self.label


TRIVIAL_CLASS = SquareClass(UnitClass.TRIVIAL, 0)


def unit_square_class(a: PadicScalar) -> SquareClass:
    if a.is_zero and not a.is_exact_zero:
        raise InsufficientPrecision(f"square class of a zero known only to p^{a.valuation}")
    if a.is_zero:
        raise ValueError("zero has no square class")
    unit = UnitClass.TRIVIAL if legendre(a.leading_digit, a.p) == 1 else UnitClass.NONRESIDUE
    return SquareClass(unit, a.valuation % 2)


def _sign_power(sign: int, exponent: int) -> int:
    return int(sign) if exponent % 2 else 1


def hilbert_symbol(a: PadicScalar, b: PadicScalar) -> int:
    """(a, b) for odd p, from the valuations and leading unit digits"""
    if a.is_exact_zero or b.is_exact_zero:
        raise ValueError("the Hilbert symbol needs non-zero arguments")
    if a.is_zero or b.is_zero:
        raise InsufficientPrecision("Hilbert symbol of a zero known only to finite precision")
    p = a.p
    alpha, beta = a.valuation, b.valuation
    return (_sign_power(legendre(-1, p), alpha * beta)
            * _sign_power(legendre(a.leading_digit, p), beta)
            * _sign_power(legendre(b.leading_digit, p), alpha))


def _rational_sqrt(value: Fraction) -> Optional[Fraction]:
    if value < 0:
        return None
    num_root = math.isqrt(value.numerator)
    den_root = math.isqrt(value.denominator)
    if num_root * num_root == value.numerator and den_root * den_root == value.denominator:
        return Fraction(num_root, den_root)
    return None


def hensel_sqrt(a: PadicScalar) -> PadicScalar:
    """
    Square root by Newton iteration on the unit part. The root whose leading digit
    lies in [1, (p-1)/2] is returned.
    """
    if a.is_exact_zero or unit_square_class(a) != TRIVIAL_CLASS:
        raise NotASquare(f"{a!r} is not a square in Q_{a.p}")
    p = a.p
    c = a.unit_digits
    r = int(min(sqrt_mod(c % p, p, all_roots=True)))
    if r > (p - 1) // 2:
        r = p - r
    reached = 1
    while reached < a.precision:
        reached = min(2 * reached, a.precision)
        modulus = _ppow(p, reached)
        r = (r - (r * r - c) * pow(2 * r, -1, modulus)) % modulus
    shadow = None
    if a.is_exact:
        root = _rational_sqrt(a.rational)
        if root is not None:
            candidate = PadicScalar.from_rational(root, a.context, a.precision)
            shadow = root if candidate.leading_digit == r % p else -root
    return PadicScalar(a.context, a.valuation // 2, r, a.precision, shadow)
