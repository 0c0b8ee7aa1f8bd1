import itertools
import math
import os
import random
import unittest
from dataclasses import replace
from fractions import Fraction

from dotenv import load_dotenv
from sympy import Matrix

from padic_polar.errors import ConfigError, InternalInvariantViolation, SingularToPrecision
from padic_polar.padic import INFINITY, PrimeContext, SquareClass
from padic_polar.plinalg import PMatrix, is_integral_unit
from padic_polar.polar import (
    DEFAULT_TOLERANCE,
    CheckResult,
    KAHWitness,
    SymmetricSpaceContext,
    class_label,
    displacement,
    in_symmetric_subgroup,
    kah_decompose,
    sigma,
    usage_to_json,
    verify_witness,
    witness_usage_stats,
)
from padic_polar.quadform import QuadraticForm

# Load environment variables
load_dotenv()

SCALE = float(os.getenv('PADIC_TEST_SCALE', '1'))
WITNESS_SAMPLES = max(1, int(500 * SCALE))
INEXACT_SAMPLES = max(1, int(50 * SCALE))
USAGE_SAMPLES = max(1, int(50 * SCALE))


def rationals(m: PMatrix):
    return [[x.rational for x in row] for row in m.entries]


def random_invertible(rng: random.Random, ctx: PrimeContext, n: int, spread: int = 1) -> PMatrix:
    p = ctx.p
    while True:
        rows = [[Fraction(rng.randrange(0, p * p)) * Fraction(p) ** rng.randint(-spread, spread)
                 for _ in range(n)] for _ in range(n)]
        if Matrix(rows).det() != 0:
            return PMatrix.from_rows(rows, ctx)


def random_near_unit(rng: random.Random, ctx: PrimeContext, n: int) -> PMatrix:
    """U diag(p^e) with U in GL(n, Z) invertible mod p and e in {0, 1}"""
    p = ctx.p
    while True:
        rows = [[rng.randrange(-p * p, p * p) for _ in range(n)] for _ in range(n)]
        if Matrix(rows).det() % p:
            break
    return PMatrix.from_rows(rows, ctx) @ PMatrix.p_power_diagonal([rng.randint(0, 1) for _ in range(n)], ctx)


def without_shadow(m: PMatrix) -> PMatrix:
    """The same digits with the exact values dropped"""
    return PMatrix.from_mutable([[x if x.is_zero else replace(x, rational=None) for x in row]
                                 for row in m.entries], m.ctx)



def labels(s):
    return [c.label for c in s]


class TestSymmetricSpaceContext(unittest.TestCase):
    def setUp(self):
        """Set up test case"""
        self.ctx = PrimeContext(5)
        self.ssc = SymmetricSpaceContext.standard(self.ctx, 2)

    def test_1_validation(self):
        """Test that q0 must be diagonal with unit entries"""
        with self.assertRaises(ConfigError):
            SymmetricSpaceContext(self.ctx, QuadraticForm(PMatrix.from_rows([[1, 1], [1, 2]], self.ctx)))
        with self.assertRaises(ConfigError):
            SymmetricSpaceContext.from_diagonal(self.ctx, [1, 5])
        ssc = SymmetricSpaceContext.from_diagonal(self.ctx, [1, 2])
        self.assertEqual(labels(ssc.base_class), ["1", "u"])

    def test_2_witness_table(self):
        """Test that a witness is built once per class and precision"""
        p_class = SquareClass.from_label("p")
        s = (p_class, p_class)
        gamma = self.ssc.witness_for(s, 64)
        reps = PMatrix.diagonal([5, 5], self.ctx)
        self.assertGreaterEqual((gamma.T @ reps @ gamma).agreement(self.ssc.gram), 50)
        self.ssc.witness_for(s, 64)
        self.ssc.witness_for(s, 32)
        self.assertEqual(self.ssc.builds, 1)
        self.ssc.witness_for(s, 128)
        self.assertEqual(self.ssc.builds, 2)
        self.assertEqual(self.ssc.table_size(), 1)
        self.assertEqual(self.ssc.witness_table[s][0], 128)

    def test_3_inequivalent_class(self):
        """Test that a class vector outside the orbit of q0 is an internal error"""
        s = (SquareClass.from_label("u"), SquareClass.from_label("1"))
        with self.assertRaises(InternalInvariantViolation):
            self.ssc.witness_for(s, 64)

    def test_4_class_label(self):
        """Test the printed class vector"""
        s = (SquareClass.from_label("1"), SquareClass.from_label("u"))
        self.assertEqual(class_label(s), "(1,u)")


class TestInvolution(unittest.TestCase):
    def setUp(self):
        """Set up test case"""
        self.ctx = PrimeContext(5)
        self.ssc = SymmetricSpaceContext.from_diagonal(self.ctx, [1, 2, 3])

    def test_1_sigma_is_an_involution(self):
        """Test sigma(sigma(g)) = g"""
        g = PMatrix.from_rows([[1, 2, 0], [Fraction(1, 5), 1, 3], [0, 7, 25]], self.ctx)
        self.assertEqual(rationals(sigma(sigma(g, self.ssc), self.ssc)), rationals(g))

    def test_2_fixed_points(self):
        """Test membership in the orthogonal group of q0"""
        self.assertTrue(in_symmetric_subgroup(PMatrix.diagonal([1, -1, 1], self.ctx), self.ssc))
        self.assertFalse(in_symmetric_subgroup(PMatrix.diagonal([1, 5, 1], self.ctx), self.ssc))
        standard = SymmetricSpaceContext.standard(self.ctx, 2)
        swap = PMatrix.from_rows([[0, 1], [1, 0]], self.ctx)
        self.assertTrue(in_symmetric_subgroup(swap, standard))
        self.assertEqual(rationals(sigma(swap, standard)), rationals(swap))


class TestKAHDecomposition(unittest.TestCase):
    def setUp(self):
        """Set up test case"""
        self.ctx = PrimeContext(5)
        self.ssc = SymmetricSpaceContext.standard(self.ctx, 2)

    def decompose(self, g: PMatrix, ssc: SymmetricSpaceContext = None) -> KAHWitness:
        ssc = ssc or self.ssc
        w = kah_decompose(g, ssc)
        report = verify_witness(g, w, ssc)
        self.assertTrue(report.passed, report.to_json())
        self.assertTrue(is_integral_unit(w.compact_part()))
        return w

    def test_1_identity(self):
        """Test the trivial decomposition"""
        w = self.decompose(PMatrix.identity(2, self.ctx))
        self.assertEqual(labels(w.s), ["1", "1"])
        self.assertEqual(rationals(w.a), [[1, 0], [0, 1]])

    def test_2_diagonal(self):
        """Test g = diag(1, p)"""
        w = self.decompose(PMatrix.diagonal([1, 5], self.ctx))
        self.assertEqual(labels(w.s), ["1", "1"])
        self.assertEqual(sorted(x.rational for x in w.a.diagonal_entries()), [1, 5])
        self.assertTrue(in_symmetric_subgroup(w.h, self.ssc))

    def test_3_swap_lies_in_h(self):
        """Test that an element of O(q0) decomposes with trivial k and a"""
        swap = PMatrix.from_rows([[0, 1], [1, 0]], self.ctx)
        w = self.decompose(swap)
        self.assertEqual(rationals(w.a), [[1, 0], [0, 1]])
        self.assertEqual(rationals(w.h), rationals(swap))

    def test_4_odd_class(self):
        """Test an element whose square classes are both p"""
        g = PMatrix.from_rows([[Fraction(1, 5), Fraction(2, 5)], [Fraction(2, 5), Fraction(-1, 5)]], self.ctx)
        w = self.decompose(g)
        self.assertEqual(labels(w.s), ["p", "p"])

    def test_5_random_elements(self):
        """Test certified witnesses for random elements of every size and prime"""
        rng = random.Random(7)
        for n, p in itertools.product([2, 3], [3, 5, 7]):
            ctx = PrimeContext(p)
            ssc = SymmetricSpaceContext.standard(ctx, n)
            for _ in range(WITNESS_SAMPLES):
                g = random_invertible(rng, ctx, n, rng.randint(1, 10))
                w = self.decompose(g, ssc)
                self.assertTrue(in_symmetric_subgroup(w.h, ssc))
            self.assertLessEqual(ssc.table_size(), 4 ** n)

    def test_6_tampered_witness(self):
        """Test that verification catches a broken h and a broken a"""
        g = PMatrix.from_rows([[1, 2], [3, 5]], self.ctx)
        w = self.decompose(g)
        bad_h = replace(w, h=w.h.with_entry(0, 0, w.h[0, 0] + self.ctx.one()))
        report = verify_witness(g, bad_h, self.ssc)
        self.assertFalse(report.passed)
        self.assertFalse(report.checks["H_membership"].passed)
        bad_a = replace(w, a=w.a.with_entry(0, 1, 1))
        report = verify_witness(g, bad_a, self.ssc)
        self.assertFalse(report.checks["diagonal"].passed)

    def test_7_invalid_input(self):
        """Test shape and singularity errors"""
        with self.assertRaises(ConfigError):
            kah_decompose(PMatrix.identity(3, self.ctx), self.ssc)
        with self.assertRaises(SingularToPrecision):
            kah_decompose(PMatrix.from_rows([[1, 2], [2, 4]], self.ctx), self.ssc)

    def test_8_json_round_trip(self):
        """Test that a serialized witness still verifies"""
        g = PMatrix.from_rows([[1, Fraction(1, 5)], [3, 2]], self.ctx)
        w = self.decompose(g)
        doc = w.to_json()
        self.assertEqual(set(doc), {"k", "s", "s_labels", "a", "h", "gamma", "precision"})
        parsed = KAHWitness.from_json(doc, self.ctx)
        self.assertTrue(verify_witness(g, parsed, self.ssc).passed)
        with self.assertRaises(ConfigError):
            KAHWitness.from_json({"k": doc["k"]}, self.ctx)

    def test_9_other_base_form(self):
        """Test decompositions for a non-standard q0"""
        ssc = SymmetricSpaceContext.from_diagonal(self.ctx, [1, 2])
        g = PMatrix.from_rows([[5, 1], [0, 1]], self.ctx)
        w = self.decompose(g, ssc)
        self.assertTrue(in_symmetric_subgroup(w.h, ssc))

    def test_10_inexact_elements(self):
        """Test that elements known only to finite precision still certify"""
        rng = random.Random(19)
        for _ in range(INEXACT_SAMPLES):
            ctx = PrimeContext(rng.choice([3, 5, 7]))
            n = rng.choice([2, 3])
            ssc = SymmetricSpaceContext.standard(ctx, n)
            g = without_shadow(random_near_unit(rng, ctx, n))
            w = self.decompose(g, ssc)
            self.assertFalse(w.h.is_exact)
            self.assertGreaterEqual(w.reconstruct().agreement(g), ctx.default_precision - DEFAULT_TOLERANCE)


class TestDisplacement(unittest.TestCase):
    def setUp(self):
        """Set up test case"""
        self.ctx = PrimeContext(5)

    def test_1_examples(self):
        """Test the displacement of the base vertex"""
        self.assertEqual(displacement(PMatrix.identity(2, self.ctx)), 0.0)
        self.assertAlmostEqual(displacement(PMatrix.diagonal([1, 5], self.ctx)), math.sqrt(0.5))
        self.assertEqual(displacement(PMatrix.diagonal([5, 5], self.ctx)), 0.0)

    def test_2_compact_part_is_bounded_by_the_witnesses(self):
        """Test that k moves the base vertex exactly as far as its witness"""
        rng = random.Random(11)
        ssc = SymmetricSpaceContext.standard(self.ctx, 2)
        samples = [random_invertible(rng, self.ctx, 2) for _ in range(USAGE_SAMPLES)]
        usage = witness_usage_stats(samples, ssc)
        self.assertEqual(sum(entry.count for entry in usage.values()), len(samples))
        for s, entry in usage.items():
            gamma = ssc.witness_table[s][1]
            self.assertAlmostEqual(entry.max_displacement, displacement(gamma))

    def test_3_usage_json(self):
        """Test the usage report"""
        ssc = SymmetricSpaceContext.standard(self.ctx, 2)
        self.assertEqual(witness_usage_stats([], ssc), {})
        doc = usage_to_json(witness_usage_stats([PMatrix.diagonal([1, 5], self.ctx)], ssc))
        self.assertEqual(doc["classes"], {"(1,1)": {"count": 1, "max_disp": 0.0}})
        self.assertIn("conjugacy", doc["note"])

    def test_4_check_json(self):
        """Test that an exact check prints its error valuation as inf"""
        self.assertEqual(CheckResult(True, INFINITY).to_json(), {"passed": True, "error_valuation": "inf"})
        self.assertEqual(CheckResult(False, None).to_json(), {"passed": False, "error_valuation": None})


if __name__ == '__main__':
    unittest.main()
