"""
Polar decompositions g = k * a * h of GL(n, Q_p) with respect to the symmetric
subgroup H = O(q0) of a unit diagonal form q0.

The Gram matrix of q0 o g^-1 is diagonalized by some k0 in GL(n, Z_p); its diagonal
splits into square classes s and square roots t. Forms with the same classes are
related by a fixed isometry gamma_s, one per class vector, so

    g = (k0 gamma_s) * (gamma_s^-1 diag(t)^-1 gamma_s) * h,    h in H.

k ranges over the finitely many compact sets K0 gamma_s, which is what bounds the
compact part independently of g.
"""
import logging
import threading
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Tuple, Union

from padic_polar.errors import (
    ConfigError,
    InsufficientPrecision,
    InternalInvariantViolation,
    InvariantMismatch,
    SingularToPrecision,
)
from padic_polar.padic import INFINITY, PrimeContext, SquareClass, unit_square_class
from padic_polar.plinalg import PMatrix, centered_norm, is_integral_unit, smith_cartan
from padic_polar.quadform import QuadraticForm, square_class_split, witt_isometry
from padic_polar.retry import execute_with_precision

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 12
CLASS_NOTE = "classes distinct as indices, conjugacy undecided"

ClassIndex = Tuple[SquareClass, ...]


def class_label(s: ClassIndex) -> str:
    return "(" + ",".join(c.label for c in s) + ")"


class SymmetricSpaceContext:
    """
    G = GL(n, Q_p) with the involution sigma(g) = B0^-1 g^-T B0. Holds the lazily
    built witness isometries gamma_s, one per square-class vector.
    """

    def __init__(self, ctx: PrimeContext, q0: QuadraticForm):
        if not q0.is_diagonal():
            raise ConfigError("q0 must be diagonal")
        if any(not c.is_unit for c in q0.gram.diagonal_entries()):
            raise ConfigError("q0 must have unit diagonal entries")
        self.ctx = ctx
        self.q0 = q0
        self.witness_table: Dict[ClassIndex, Tuple[int, PMatrix]] = {}
        self._table_lock = threading.Lock()
        self.builds = 0

    @classmethod
    def standard(cls, ctx: PrimeContext, n: int) -> "SymmetricSpaceContext":
        """q0 = x_1^2 + ... + x_n^2"""
        return cls(ctx, QuadraticForm(PMatrix.identity(n, ctx)))

    @classmethod
    def from_diagonal(cls, ctx: PrimeContext, entries: Iterable) -> "SymmetricSpaceContext":
        return cls(ctx, QuadraticForm.diagonal(list(entries), ctx))

    @property
    def n(self) -> int:
        return self.q0.dim

    @property
    def gram(self) -> PMatrix:
        return self.q0.gram

    @property
    def base_class(self) -> ClassIndex:
        return tuple(unit_square_class(c) for c in self.gram.diagonal_entries())

    def table_size(self) -> int:
        with self._table_lock:
            return len(self.witness_table)

    def witness_for(self, s: ClassIndex, precision: int) -> PMatrix:
        """
        gamma_s with gamma_s^T diag(rep(s)) gamma_s = B0, rebuilt when the stored
        one was computed at a lower precision.
        """
        with self._table_lock:
            stored = self.witness_table.get(s)
        if stored is not None and stored[0] >= precision:
            return stored[1]
        ctx = self.ctx.with_precision(precision)
        source = QuadraticForm.diagonal([c.representative(ctx, precision) for c in s], ctx)
        try:
            gamma = witt_isometry(source, QuadraticForm(self.gram.at_precision(precision)))
        except InvariantMismatch as e:
            raise InternalInvariantViolation(f"class {class_label(s)} is not equivalent to q0: {e}")
        with self._table_lock:
            current = self.witness_table.get(s)
            if current is None or current[0] <= precision:
                self.witness_table[s] = (precision, gamma)
            self.builds += 1
        logger.info("built witness for class %s at precision %d", class_label(s), precision)
        return gamma


@dataclass(frozen=True)
class KAHWitness:
    """
    g = k * (gamma^-1 a gamma) * h. a is diagonal in the coordinates of the split
    torus A0; torus_element() is the element of A_s = gamma^-1 A0 gamma.
    """
    k: PMatrix
    s: ClassIndex
    a: PMatrix
    h: PMatrix
    gamma: PMatrix
    precision: int
    working_precision: int = 0
    retries: int = 0

    def torus_element(self) -> PMatrix:
        return self.gamma.inverse() @ self.a @ self.gamma

    def compact_part(self) -> PMatrix:
        """k0 = k gamma^-1, the GL(n, Z_p) factor"""
        return self.k @ self.gamma.inverse()

    def reconstruct(self) -> PMatrix:
        return self.k @ self.torus_element() @ self.h

    def to_json(self) -> Dict:
        return {
            "k": self.k.to_json(),
            "s": [c.to_json() for c in self.s],
            "s_labels": [c.label for c in self.s],
            "a": self.a.to_json(),
            "h": self.h.to_json(),
            "gamma": self.gamma.to_json(),
            "precision": self.precision,
        }

    @classmethod
    def from_json(cls, doc: Dict, ctx: PrimeContext) -> "KAHWitness":
        try:
            s = tuple(SquareClass.from_label(label) for label in doc["s_labels"])
            return cls(
                k=PMatrix.from_json(doc["k"], ctx),
                s=s,
                a=PMatrix.from_json(doc["a"], ctx),
                h=PMatrix.from_json(doc["h"], ctx),
                gamma=PMatrix.from_json(doc["gamma"], ctx),
                precision=int(doc["precision"]),
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f"malformed witness document: {e}")


@dataclass(frozen=True)
class CheckResult:
    passed: bool
    error_valuation: Optional[Union[int, float]]

    def to_json(self) -> Dict:
        error = self.error_valuation
        if error == INFINITY:
            error = "inf"
        return {"passed": self.passed, "error_valuation": error}


@dataclass(frozen=True)
class WitnessReport:
    checks: Dict[str, CheckResult]
    threshold: int

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks.values())

    def worst(self) -> Optional[Union[int, float]]:
        errors = [c.error_valuation for c in self.checks.values()]
        if any(e is None for e in errors):
            return None
        return min(errors)

    def to_json(self) -> Dict:
        return {
            "passed": self.passed,
            "threshold": self.threshold,
            "checks": {name: check.to_json() for name, check in self.checks.items()},
        }


def sigma(g: PMatrix, ssc: SymmetricSpaceContext) -> PMatrix:
    """The involution B0^-1 g^-T B0 whose fixed points form O(q0)"""
    b0 = ssc.gram
    return b0.inverse() @ g.inverse().T @ b0


def _h_agreement(h: PMatrix, ssc: SymmetricSpaceContext):
    return (h.T @ ssc.gram @ h).agreement(ssc.gram)


def _carried_precision(h: PMatrix) -> Union[int, float]:
    """Absolute precision guaranteed for the entries of h^T B h with B integral"""
    inexact = [x for row in h.entries for x in row if not x.is_exact]
    if not inexact:
        return h.ctx.default_precision
    return min(x.absolute_precision for x in inexact) + min(x.pivot_valuation for row in h.entries for x in row)


def in_symmetric_subgroup(h: PMatrix, ssc: SymmetricSpaceContext,
                          tolerance: int = DEFAULT_TOLERANCE) -> bool:
    """h^T B0 h = B0 up to tolerance digits below the precision h carries"""
    try:
        return _h_agreement(h, ssc) >= _carried_precision(h) - tolerance
    except InsufficientPrecision:
        return False


def _guarded(check) -> CheckResult:
    try:
        return check()
    except (InsufficientPrecision, SingularToPrecision) as e:
        logger.debug("check lost precision: %s", e)
        return CheckResult(False, None)


def verify_witness(g: PMatrix, w: KAHWitness, ssc: SymmetricSpaceContext,
                   tolerance: int = DEFAULT_TOLERANCE) -> WitnessReport:
    """
    Checks reconstruction, integrality of k gamma^-1, diagonality of a and
    membership of h in H. Error valuations are relative to the reference scale;
    the threshold is the witness precision minus tolerance.
    """
    threshold = w.precision - tolerance
    if (g.rows, g.cols) != (w.k.rows, w.k.cols) or g.rows != ssc.n:
        raise ConfigError("witness and matrix shapes differ")

    def reconstruct():
        error = w.reconstruct().agreement(g)
        return CheckResult(error >= threshold, error)

    def integral():
        k0 = w.compact_part()
        if is_integral_unit(k0):
            return CheckResult(True, INFINITY)
        entry_floor = k0.min_valuation()
        return CheckResult(False, min(entry_floor, -k0.det().valuation))

    def diagonal():
        scale = w.a.min_valuation()
        off = min((w.a[i, j].valuation for i in range(w.a.rows) for j in range(w.a.cols) if i != j),
                  default=INFINITY)
        error = off - scale
        return CheckResult(error >= threshold, error)

    def membership():
        error = _h_agreement(w.h, ssc)
        return CheckResult(error >= threshold, error)

    checks = {
        "reconstruct": _guarded(reconstruct),
        "integral": _guarded(integral),
        "diagonal": _guarded(diagonal),
        "H_membership": _guarded(membership),
    }
    return WitnessReport(checks, threshold)


def _decompose_at(g: PMatrix, ssc: SymmetricSpaceContext, target: int) -> KAHWitness:
    ctx = g.ctx
    precision = ctx.default_precision
    b0 = ssc.gram.at_precision(precision)
    g_inverse = g.inverse()
    q = QuadraticForm(g_inverse.T @ b0 @ g_inverse)
    k0 = q.diagonalization.U
    split = square_class_split(q.diagonalization.values)
    gamma = ssc.witness_for(split.classes, precision)
    t = PMatrix.diagonal(list(split.roots), ctx)
    a = PMatrix.diagonal([r.inverse() for r in split.roots], ctx)
    h = gamma.inverse() @ t @ k0.inverse() @ g
    return KAHWitness(k=k0 @ gamma, s=split.classes, a=a, h=h, gamma=gamma, precision=target,
                      working_precision=precision)


def kah_decompose(g: PMatrix, ssc: SymmetricSpaceContext,
                  tolerance: int = DEFAULT_TOLERANCE) -> KAHWitness:
    """
    A witness g = k a h certified to g's precision minus tolerance digits. The
    pipeline reruns at doubled working precision until verify_witness passes.
    """
    if not g.is_square or g.rows != ssc.n:
        raise ConfigError(f"expected a {ssc.n}x{ssc.n} matrix")
    if g.det().is_zero:
        raise SingularToPrecision("g is not invertible")
    target = g.ctx.default_precision

    def step(ctx: PrimeContext) -> KAHWitness:
        working = g.at_precision(ctx.default_precision)
        witness = _decompose_at(working, ssc, target)
        report = verify_witness(g, witness, ssc, tolerance)
        if not report.passed:
            failed = [name for name, check in report.checks.items() if not check.passed]
            raise InsufficientPrecision(f"witness checks {failed} below {report.threshold} digits")
        return witness

    run = execute_with_precision(step, g.ctx, "KAH decomposition")
    witness = run.result
    return KAHWitness(k=witness.k, s=witness.s, a=witness.a, h=witness.h, gamma=witness.gamma,
                      precision=target, working_precision=run.precision, retries=run.retries)


def displacement(m: PMatrix) -> float:
    """d(x0, m x0) in the building: centered norm of the Cartan exponents of m"""
    return centered_norm(smith_cartan(m).exponents)


@dataclass
class ClassUsage:
    count: int = 0
    max_displacement: float = 0.0

    def to_json(self) -> Dict:
        return {"count": self.count, "max_disp": self.max_displacement}


def witness_usage_stats(samples: Iterable[PMatrix], ssc: SymmetricSpaceContext,
                        tolerance: int = DEFAULT_TOLERANCE) -> Dict[ClassIndex, ClassUsage]:
    """How often each square-class witness occurs, with the largest displacement of k per class"""
    usage: Dict[ClassIndex, ClassUsage] = {}
    for g in samples:
        w = kah_decompose(g, ssc, tolerance)
        entry = usage.setdefault(w.s, ClassUsage())
        entry.count += 1
        entry.max_displacement = max(entry.max_displacement, displacement(w.k))
    return usage


def usage_to_json(usage: Dict[ClassIndex, ClassUsage]) -> Dict:
    return {
        "classes": {class_label(s): entry.to_json()
                    for s, entry in sorted(usage.items(), key=lambda item: [c.sort_key for c in item[0]])},
        "note": CLASS_NOTE,
    }
