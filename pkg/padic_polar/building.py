"""
Vertices of the Bruhat-Tits building of GL(n, Q_p) as homothety classes of lattices,
the Euclidean distance between them, the action of the involution sigma as the dual
lattice for q0, sigma-apartments of the witnessed tori, and the quasi-density
experiment over random group elements.
"""
import csv
import io
import itertools
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from datetime import datetime
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from sympy import Matrix

from padic_polar.errors import ConfigError
from padic_polar.padic import PrimeContext
from padic_polar.plinalg import PMatrix, centered_norm, hnf_lattice, smith_cartan
from padic_polar.polar import (
    CLASS_NOTE,
    DEFAULT_TOLERANCE,
    ClassIndex,
    KAHWitness,
    SymmetricSpaceContext,
    class_label,
    displacement,
    kah_decompose,
)
from padic_polar.quadform import QuadraticForm
from padic_polar.retry import execute_with_precision

logger = logging.getLogger(__name__)

CSV_HEADER = ["sample", "class", "bound", "exact"]

# digits of the random GL(n, Z_p) factor in experiment samples
SAMPLE_DIGITS = 6


@dataclass(frozen=True, eq=False)
class LatticeClass:
    """A lattice up to homothety, stored as its column Hermite form scaled so the smallest diagonal exponent is 0"""
    hnf: PMatrix

    @classmethod
    def from_generators(cls, gens: PMatrix) -> "LatticeClass":
        hermite = hnf_lattice(gens)
        shift = min(int(x.valuation) for x in hermite.diagonal_entries())
        if shift:
            hermite = hnf_lattice(hermite.scale(Fraction(gens.ctx.p) ** (-shift)))
        return cls(hermite)

    @classmethod
    def standard(cls, ctx: PrimeContext, n: int) -> "LatticeClass":
        return cls(PMatrix.identity(n, ctx))

    @classmethod
    def diagonal(cls, exponents: Sequence[int], ctx: PrimeContext) -> "LatticeClass":
        return cls.from_generators(PMatrix.p_power_diagonal(exponents, ctx))

    @property
    def n(self) -> int:
        return self.hnf.rows

    @property
    def ctx(self) -> PrimeContext:
        return self.hnf.ctx

    def transform(self, g: PMatrix) -> "LatticeClass":
        return LatticeClass.from_generators(g @ self.hnf)

    def key(self) -> Tuple:
        return tuple((x.rational if x.is_exact else (x.valuation, x.unit_digits))
                     for row in self.hnf.entries for x in row)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LatticeClass):
            return NotImplemented
        return self.ctx.p == other.ctx.p and self.key() == other.key()

    def __hash__(self) -> int:
        return hash((self.ctx.p, self.key()))

    def to_json(self) -> Dict:
        return {"hnf": self.hnf.to_json()}


def _check_compatible(x: LatticeClass, y: LatticeClass):
    if x.ctx.p != y.ctx.p or x.n != y.n:
        raise ConfigError("lattice classes live over different fields or dimensions")


def relative_position(x: LatticeClass, y: LatticeClass) -> Tuple[int, ...]:
    """Elementary divisor exponents of y relative to x, non-decreasing"""
    _check_compatible(x, y)
    return smith_cartan(x.hnf.inverse() @ y.hnf).exponents


def distance(x: LatticeClass, y: LatticeClass) -> float:
    return centered_norm(relative_position(x, y))


def sigma_dual(x: LatticeClass, q0: QuadraticForm) -> LatticeClass:
    """The dual lattice {v : B0(v, x) in Z_p}, generated by B0^-1 hnf(x)^-T"""
    return LatticeClass.from_generators(q0.gram.inverse() @ x.hnf.inverse().T)


def _box(n: int, radius: int):
    """Exponent vectors with first coordinate 0 and the rest in [-radius, radius]"""
    for tail in itertools.product(range(-radius, radius + 1), repeat=n - 1):
        yield (0,) + tail


def sigma_fixed_vertices(q0: QuadraticForm, radius: int) -> List[Tuple[int, ...]]:
    """Vertices diag(p^a) L0 of the standard apartment that sigma_dual fixes, within the box"""
    ctx = q0.ctx
    fixed = []
    for exponents in _box(q0.dim, radius):
        x = LatticeClass.diagonal(exponents, ctx)
        if sigma_dual(x, q0) == x:
            fixed.append(exponents)
    return fixed


def chamber_diameter(n: int) -> float:
    """Largest vertex distance inside one chamber: the centered norm of (0,..,0,1,..,1) split evenly"""
    return math.sqrt((n // 2) * ((n + 1) // 2) / n)


@dataclass(frozen=True)
class SigmaApartmentRef:
    """
    The orbit conjugator * t * base * L0 over the diagonal torus t: the images of
    the vertex conjugator * base * L0 under conjugator A0 conjugator^-1. vertex()
    gives the p-power translates.
    """
    conjugator: PMatrix
    base: PMatrix
    class_index: ClassIndex

    @classmethod
    def standard(cls, ssc: SymmetricSpaceContext) -> "SigmaApartmentRef":
        identity = PMatrix.identity(ssc.n, ssc.ctx)
        return cls(identity, identity, ssc.base_class)

    @classmethod
    def from_witness(cls, w: KAHWitness) -> "SigmaApartmentRef":
        """h^-1 A_s x0 for the witness torus A_s = gamma^-1 A0 gamma"""
        conjugator = w.h.inverse() @ w.gamma.inverse()
        return cls(conjugator, w.gamma, w.s)

    def transform(self, g: PMatrix) -> "SigmaApartmentRef":
        return SigmaApartmentRef(g @ self.conjugator, self.base, self.class_index)

    def vertex(self, exponents: Sequence[int]) -> LatticeClass:
        ctx = self.conjugator.ctx
        return LatticeClass.from_generators(
            self.conjugator @ PMatrix.p_power_diagonal(exponents, ctx) @ self.base)


def _unit_twists(base: PMatrix) -> List[PMatrix]:
    """
    diag(u) * base for unit vectors u with u_0 = 1, one per class modulo p^N, where
    u = 1 mod p^N already fixes the lattice base * L0.
    """
    ctx = base.ctx
    p = ctx.p
    level = max(0, -int(base.min_valuation() + base.inverse().min_valuation()))
    if level == 0:
        return [base]
    units = [u for u in range(1, p ** level) if u % p]
    twists = []
    for tail in itertools.product(units, repeat=base.rows - 1):
        twists.append(PMatrix.diagonal([1] + list(tail), ctx) @ base)
    logger.debug("%d unit twists at level %d", len(twists), level)
    return twists


def distance_to_sigma_apartment(x: LatticeClass, apt: SigmaApartmentRef) -> float:
    """
    Exact minimum over the orbit points conjugator * t * base * L0, t in the diagonal
    torus. Each unit twist is searched over the translations that can beat the
    current best: translating by diag(p^a) moves every point by at least the
    centered norm of a, and |a_i - a_0| <= sqrt(2) times that norm.
    """
    if x.n != apt.conjugator.rows:
        raise ConfigError("apartment and vertex dimensions differ")
    local = x.transform(apt.conjugator.inverse())
    ctx = x.ctx
    twists = [(twist, distance(local, LatticeClass.from_generators(twist))) for twist in _unit_twists(apt.base)]
    best = min(d for _, d in twists)
    for twist, start in twists:
        if best == 0:
            break
        radius = math.ceil(math.sqrt(2) * (best + start))
        for exponents in _box(x.n, radius):
            if not any(exponents):
                continue
            candidate = LatticeClass.from_generators(PMatrix.p_power_diagonal(exponents, ctx) @ twist)
            best = min(best, distance(local, candidate))
            if best == 0:
                break
    return best


def _random_unit_matrix(rng: np.random.Generator, n: int, p: int) -> List[List[int]]:
    """Integer matrix with SAMPLE_DIGITS random base-p digits per entry and unit determinant"""
    bound = p ** SAMPLE_DIGITS
    while True:
        rows = [[int(x) for x in rng.integers(0, bound, size=n)] for _ in range(n)]
        if Matrix(rows).det() % p != 0:
            return rows


def sample_group_element(ctx: PrimeContext, n: int, val_bound: int,
                         seed_sequence: np.random.SeedSequence) -> PMatrix:
    """U * diag(p^e) with U in GL(n, Z_p) and e uniform in [-val_bound, val_bound]"""
    rng = np.random.default_rng(seed_sequence)
    unit = _random_unit_matrix(rng, n, ctx.p)
    exponents = [int(e) for e in rng.integers(-val_bound, val_bound + 1, size=n)]
    return PMatrix.from_rows(unit, ctx) @ PMatrix.p_power_diagonal(exponents, ctx)


def sample_stream(ctx: PrimeContext, n: int, val_bound: int, seed: int, samples: int) -> List[PMatrix]:
    children = np.random.SeedSequence(seed).spawn(samples)
    return [sample_group_element(ctx, n, val_bound, child) for child in children]


@dataclass(frozen=True)
class SampleResult:
    index: int
    s: ClassIndex
    bound: float
    exact: Optional[float]

    @property
    def label(self) -> str:
        return class_label(self.s)


def _rounded(x: float) -> float:
    return round(x, 12)


class QuasiDensityExperiment:
    """
    Runs kah_decompose over seeded random samples and records, per sample, the
    certified bound displacement(k) on the distance from g^-1 x0 to the witnessed
    sigma-apartment, plus the exact distance for small n.
    Supports parallel evaluation with a configurable worker count.
    """

    def __init__(self, ssc: SymmetricSpaceContext, max_workers: int = 1,
                 tolerance: int = DEFAULT_TOLERANCE, exact_max_dim: int = 2):
        if max_workers < 1:
            raise ConfigError("max_workers must be at least 1")
        self.ssc = ssc
        self.max_workers = max_workers
        self.tolerance = tolerance
        self.exact_max_dim = exact_max_dim

        self.progress: Dict[str, Dict] = {}
        self.logs: Dict[str, List[str]] = {}
        self._state_lock = threading.Lock()

        self.on_progress_update: Optional[Callable] = None
        self.on_log_update: Optional[Callable] = None

    def _log(self, run_id: str, message: str, status: str = "info", sample: Optional[int] = None):
        timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        prefix = {"error": "❌ ERROR", "success": "✅", "warning": "⚠️"}.get(status, "ℹ️")
        sample_prefix = f"[sample {sample}] " if sample is not None else ""
        log_entry = f"[{timestamp}] {prefix} {sample_prefix}{message}"
        with self._state_lock:
            self.logs.setdefault(run_id, []).append(log_entry)
        level = {"error": logging.ERROR, "warning": logging.WARNING}.get(status, logging.DEBUG)
        logger.log(level, "%s%s", sample_prefix, message)
        if self.on_log_update:
            self.on_log_update(run_id, log_entry, status, sample)
        return log_entry

    def _update_progress(self, run_id: str, sample: int, status: str):
        with self._state_lock:
            run = self.progress.setdefault(run_id, {"samples": {}, "summary": {}})
            run["samples"][sample] = status
            statuses = list(run["samples"].values())
            run["summary"] = {
                "total": len(statuses),
                "pending": statuses.count("pending"),
                "completed": statuses.count("completed"),
                "failed": statuses.count("failed"),
            }
            snapshot = {"summary": dict(run["summary"])}
        if self.on_progress_update:
            self.on_progress_update(run_id, snapshot)

    def get_progress(self, run_id: str) -> Dict:
        return self.progress.get(run_id, {"samples": {}, "summary": {}})

    def get_logs(self, run_id: str) -> List[str]:
        return self.logs.get(run_id, [])

    def evaluate(self, index: int, g: PMatrix) -> SampleResult:
        def step(ctx: PrimeContext):
            w = kah_decompose(g.at_precision(ctx.default_precision), self.ssc, self.tolerance)
            exact = None
            if self.ssc.n <= self.exact_max_dim:
                x = LatticeClass.from_generators(g.inverse())
                exact = distance_to_sigma_apartment(x, SigmaApartmentRef.from_witness(w))
            return w, exact

        w, exact = execute_with_precision(step, g.ctx, f"sample {index}").result
        return SampleResult(index, w.s, displacement(w.k), exact)

    def run(self, samples: int, val_bound: int, seed: int,
            run_id: Optional[str] = None) -> "ExperimentReport":
        if samples < 0:
            raise ConfigError("sample count must be non-negative")
        if val_bound < 0:
            raise ConfigError("valuation bound must be non-negative")
        ctx = self.ssc.ctx
        run_id = run_id or f"p{ctx.p}_n{self.ssc.n}_V{val_bound}_seed{seed}"
        elements = sample_stream(ctx, self.ssc.n, val_bound, seed, samples)
        for i in range(samples):
            self._update_progress(run_id, i, "pending")
        self._log(run_id, f"starting {samples} samples with {self.max_workers} workers")

        results: List[Optional[SampleResult]] = [None] * samples
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = {executor.submit(self.evaluate, i, g): i for i, g in enumerate(elements)}
            for future in as_completed(futures):
                i = futures[future]
                try:
                    results[i] = future.result()
                except Exception as e:
                    self._update_progress(run_id, i, "failed")
                    self._log(run_id, f"failed: {e}", "error", sample=i)
                    executor.shutdown(wait=False, cancel_futures=True)
                    raise
                self._update_progress(run_id, i, "completed")
                self._log(run_id, f"class {results[i].label} bound {results[i].bound:.6f}", sample=i)

        self._log(run_id, "experiment finished", "success")
        return ExperimentReport(p=ctx.p, n=self.ssc.n, val_bound=val_bound, seed=seed,
                                precision=ctx.default_precision, results=tuple(results))


@dataclass(frozen=True)
class ExperimentReport:
    p: int
    n: int
    val_bound: int
    seed: int
    precision: int
    results: Tuple[SampleResult, ...]

    @property
    def c_emp(self) -> float:
        return max((r.bound for r in self.results), default=0.0)

    def per_class(self) -> Dict[str, Dict]:
        classes: Dict[ClassIndex, Dict] = {}
        for r in self.results:
            entry = classes.setdefault(r.s, {"count": 0, "max_disp": 0.0})
            entry["count"] += 1
            entry["max_disp"] = max(entry["max_disp"], _rounded(r.bound))
        ordered = sorted(classes.items(), key=lambda item: [c.sort_key for c in item[0]])
        return {class_label(s): entry for s, entry in ordered}

    def histogram(self) -> List[Dict]:
        counts: Dict[float, int] = {}
        for r in self.results:
            key = _rounded(r.bound)
            counts[key] = counts.get(key, 0) + 1
        return [{"bound": b, "count": counts[b]} for b in sorted(counts)]

    def gap_stats(self) -> Dict:
        gaps = [r.bound - r.exact for r in self.results if r.exact is not None]
        if not gaps:
            return {"computed": 0, "max_gap": None, "mean_gap": None, "violations": 0}
        return {
            "computed": len(gaps),
            "max_gap": _rounded(max(gaps)),
            "mean_gap": _rounded(sum(gaps) / len(gaps)),
            "violations": sum(1 for gap in gaps if gap < -1e-9),
        }

    def to_json(self) -> Dict:
        return {
            "p": self.p,
            "n": self.n,
            "V": self.val_bound,
            "samples": len(self.results),
            "seed": self.seed,
            "precision": self.precision,
            "C_emp": _rounded(self.c_emp),
            "chamber_diameter": _rounded(chamber_diameter(self.n)),
            "per_class": self.per_class(),
            "histogram": self.histogram(),
            "gap": self.gap_stats(),
            "note": CLASS_NOTE,
        }

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self.results:
            exact = "" if r.exact is None else f"{r.exact:.12g}"
            writer.writerow([r.index, r.label, f"{r.bound:.12g}", exact])
        return buffer.getvalue()


def quasi_density_experiment(ssc: SymmetricSpaceContext, samples: int, val_bound: int,
                             seed: int, jobs: int = 1,
                             tolerance: int = DEFAULT_TOLERANCE) -> ExperimentReport:
    return QuasiDensityExperiment(ssc, max_workers=jobs, tolerance=tolerance).run(samples, val_bound, seed)
