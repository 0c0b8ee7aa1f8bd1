import itertools
import math
import os
import random
import unittest
from dataclasses import replace
from fractions import Fraction

from dotenv import load_dotenv
from sympy import Matrix

from padic_polar.errors import ConfigError, RankDeficient, SingularToPrecision
from padic_polar.padic import INFINITY, PrimeContext, valuation_of_rational
from padic_polar.plinalg import (
    PMatrix,
    UltraNorm,
    centered_norm,
    diagonalize_norm_pair,
    hnf_lattice,
    is_integral_unit,
    permutation_sign,
    plu_eliminate,
    smith_cartan,
)

# Load environment variables
load_dotenv()

SCALE = float(os.getenv('PADIC_TEST_SCALE', '1'))
ROUND_TRIPS = max(1, int(500 * SCALE))
ORACLE_INSTANCES = max(1, int(200 * SCALE))
INEXACT_ROUND_TRIPS = max(1, int(100 * SCALE))
HERMITE_SAMPLES = max(1, int(50 * SCALE))


def rationals(m: PMatrix):
    return [[x.rational for x in row] for row in m.entries]


def random_invertible(rng: random.Random, ctx: PrimeContext, n: int, spread: int) -> PMatrix:
    """Exact matrix with entry valuations uniform in [-spread, spread] and a non-zero determinant"""
    p = ctx.p
    while True:
        rows = [[Fraction(rng.randrange(1, p * p)) * Fraction(p) ** rng.randint(-spread, spread)
                 for _ in range(n)] for _ in range(n)]
        if Matrix(rows).det() != 0:
            return PMatrix.from_rows(rows, ctx)


def elementary_divisor_exponents(rows, p):
    """Valuations of the gcds of k x k minors, differenced"""
    n = len(rows)
    m = Matrix(rows)
    levels = [0]
    for k in range(1, n + 1):
        best = INFINITY
        for r in itertools.combinations(range(n), k):
            for c in itertools.combinations(range(n), k):
                minor = m.extract(list(r), list(c)).det()
                if minor != 0:
                    best = min(best, valuation_of_rational(Fraction(int(minor)), p))
        levels.append(best)
    return tuple(levels[k] - levels[k - 1] for k in range(1, n + 1))


class TestPMatrix(unittest.TestCase):
    def setUp(self):
        """Set up test case"""
        self.ctx = PrimeContext(5)

    def test_1_algebra(self):
        """Test products, inverses and determinants of exact matrices"""
        m = PMatrix.from_rows([[1, 2], [3, 4]], self.ctx)
        self.assertEqual(m.det().rational, -2)
        self.assertEqual(rationals(m @ m.inverse()), [[1, 0], [0, 1]])
        self.assertEqual(rationals(m.T), [[1, 3], [2, 4]])
        self.assertEqual(rationals(m + m - m), [[1, 2], [3, 4]])
        self.assertEqual(rationals(m.scale(Fraction(1, 5))), [[Fraction(1, 5), Fraction(2, 5)],
                                                               [Fraction(3, 5), Fraction(4, 5)]])
        with self.assertRaises(ConfigError):
            m @ PMatrix.identity(3, self.ctx)

    def test_2_parsing(self):
        """Test the accepted entry syntaxes"""
        m = PMatrix.from_json([["1/2", 3], [{"p": 5, "valuation": "inf", "digits": [], "precision": 0}, "-7"]],
                              self.ctx)
        self.assertEqual(rationals(m), [[Fraction(1, 2), 3], [0, -7]])
        self.assertEqual(rationals(PMatrix.from_json(m.to_json(), self.ctx)), rationals(m))
        with self.assertRaises(ConfigError):
            PMatrix.from_rows([["x"]], self.ctx)
        with self.assertRaises(ConfigError):
            PMatrix.from_rows([[1, 2], [3]], self.ctx)

    def test_3_singular(self):
        """Test that a singular matrix has no inverse and determinant zero"""
        m = PMatrix.from_rows([[1, 2], [2, 4]], self.ctx)
        self.assertTrue(m.det().is_zero)
        with self.assertRaises(SingularToPrecision):
            m.inverse()

    def test_4_agreement(self):
        """Test the agreement measure relative to the reference scale"""
        m = PMatrix.from_rows([[1, 0], [0, 25]], self.ctx)
        perturbed = m.with_entry(0, 1, 125)
        self.assertEqual(perturbed.agreement(m), 3)
        self.assertEqual(m.agreement(m), INFINITY)
        self.assertEqual(m.scale(Fraction(1, 5)).with_entry(0, 1, Fraction(1, 5)).agreement(m.scale(Fraction(1, 5))), 0)

    def test_5_permutation_sign(self):
        """Test permutation parity"""
        self.assertEqual(permutation_sign((0, 1, 2)), 1)
        self.assertEqual(permutation_sign((1, 0, 2)), -1)
        self.assertEqual(permutation_sign((1, 2, 0)), 1)


class TestIntegralUnits(unittest.TestCase):
    def setUp(self):
        """Set up test case"""
        self.ctx = PrimeContext(5)

    def test_1_membership(self):
        """Test GL(n, Z_p) membership"""
        self.assertTrue(is_integral_unit(PMatrix.identity(3, self.ctx)))
        self.assertFalse(is_integral_unit(PMatrix.diagonal([5, 1], self.ctx)))
        self.assertTrue(is_integral_unit(PMatrix.from_rows([[1, "1/2"], [1, "-1/2"]], self.ctx)))
        self.assertFalse(is_integral_unit(PMatrix.from_rows([["1/5", 0], [0, 5]], self.ctx)))

    def test_2_plu_pivoting(self):
        """Test that elimination pivots on the unit entry"""
        m = PMatrix.from_rows([[5, 1], [1, 1]], self.ctx)
        perm, lower, upper = plu_eliminate(m)
        self.assertEqual(perm, (1, 0))
        self.assertEqual(rationals(lower), [[1, 0], [5, 1]])
        self.assertEqual(rationals(upper), [[1, 1], [0, -4]])
        self.assertTrue(all(x.is_integral for row in lower.entries for x in row))

    def test_3_plu_diagonal(self):
        """Test elimination of a diagonal matrix"""
        m = PMatrix.diagonal([25, 3, Fraction(1, 5)], self.ctx)
        perm, lower, upper = plu_eliminate(m)
        self.assertEqual(perm, (0, 1, 2))
        self.assertEqual(rationals(lower), rationals(PMatrix.identity(3, self.ctx)))
        self.assertEqual(rationals(upper), rationals(m))


class TestSmithCartan(unittest.TestCase):
    def setUp(self):
        """Set up test case"""
        self.ctx = PrimeContext(5)

    def check_factors(self, g, factors):
        self.assertTrue(is_integral_unit(factors.k1))
        self.assertTrue(is_integral_unit(factors.k2))
        self.assertGreaterEqual(factors.reconstruct().agreement(g), self.ctx.default_precision - 8)

    def test_1_examples(self):
        """Test the Cartan exponents of small matrices"""
        identity = PMatrix.identity(3, self.ctx)
        self.assertEqual(smith_cartan(identity).exponents, (0, 0, 0))
        diagonal = PMatrix.diagonal([25, 1], self.ctx)
        factors = smith_cartan(diagonal)
        self.assertEqual(factors.exponents, (0, 2))
        self.check_factors(diagonal, factors)
        g = PMatrix.from_rows([[5, 0], [1, 1]], self.ctx)
        factors = smith_cartan(g)
        self.assertEqual(factors.exponents, (0, 1))
        self.check_factors(g, factors)

    def test_2_reverse_order(self):
        """Test the non-increasing exponent order"""
        g = PMatrix.from_rows([[5, 0], [1, 1]], self.ctx)
        factors = smith_cartan(g, reverse=True)
        self.assertEqual(factors.exponents, (1, 0))
        self.check_factors(g, factors)

    def test_3_random_round_trips(self):
        """Test reconstruction on random matrices with spread valuations"""
        rng = random.Random(11)
        for _ in range(ROUND_TRIPS):
            ctx = PrimeContext(rng.choice([3, 5, 7]))
            g = random_invertible(rng, ctx, rng.randint(2, 5), 3)
            factors = smith_cartan(g)
            self.assertEqual(list(factors.exponents), sorted(factors.exponents))
            self.assertTrue(is_integral_unit(factors.k1))
            self.assertTrue(is_integral_unit(factors.k2))
            self.assertGreaterEqual(factors.reconstruct().agreement(g), ctx.default_precision - 8)

    def test_4_minor_oracle(self):
        """Test exponents against the elementary divisors from minors"""
        rng = random.Random(5)
        checked = 0
        while checked < ORACLE_INSTANCES:
            p = rng.choice([3, 5, 7])
            n = rng.randint(2, 3)
            values = [0, 1, -1, p, -p, p * p, -p * p]
            rows = [[rng.choice(values) for _ in range(n)] for _ in range(n)]
            if Matrix(rows).det() == 0:
                continue
            g = PMatrix.from_rows(rows, PrimeContext(p))
            self.assertEqual(smith_cartan(g).exponents, elementary_divisor_exponents(rows, p), rows)
            checked += 1

    def test_5_centered_norm(self):
        """Test the centered Euclidean norm of exponent vectors"""
        self.assertEqual(centered_norm((0, 0, 0)), 0.0)
        self.assertAlmostEqual(centered_norm((0, 1)), math.sqrt(0.5))
        self.assertAlmostEqual(centered_norm((3, 5)), math.sqrt(2))
        self.assertAlmostEqual(centered_norm((0, 0, 1)), math.sqrt(2 / 3))

    def test_6_inexact_round_trips(self):
        """Test that dropping the exact values changes neither exponents nor reconstruction"""
        rng = random.Random(23)
        for _ in range(INEXACT_ROUND_TRIPS):
            ctx = PrimeContext(rng.choice([3, 5, 7]))
            g = random_invertible(rng, ctx, rng.randint(2, 3), 2)
            bare = PMatrix.from_mutable([[x if x.is_zero else replace(x, rational=None) for x in row]
                                         for row in g.entries], ctx)
            factors = smith_cartan(bare)
            self.assertEqual(factors.exponents, smith_cartan(g).exponents)
            self.assertTrue(is_integral_unit(factors.k1))
            self.assertTrue(is_integral_unit(factors.k2))
            self.assertGreaterEqual(factors.reconstruct().agreement(g), ctx.default_precision - 8)



class TestUltraNorms(unittest.TestCase):
    def setUp(self):
        """Set up test case"""
        self.ctx = PrimeContext(5)

    def vector(self, *values):
        return tuple(self.ctx.embed(v) for v in values)

    def test_1_evaluate(self):
        """Test weighted sup norms"""
        sup = UltraNorm.sup_norm(self.ctx, 2)
        self.assertEqual(sup.evaluate(self.vector(5, 1)), 1)
        self.assertEqual(sup.evaluate(self.vector(Fraction(1, 25), 1)), 25)
        weighted = UltraNorm(PMatrix.identity(2, self.ctx), (1, 0))
        self.assertEqual(weighted.evaluate(self.vector(1, 0)), Fraction(1, 5))
        self.assertEqual(weighted.evaluate(self.vector(0, 0)), 0)

    def test_2_same_norm(self):
        """Test that a norm pair of equal sup norms stays as it is"""
        sup = UltraNorm.sup_norm(self.ctx, 2)
        pair = diagonalize_norm_pair(sup, sup)
        self.assertEqual(rationals(pair.basis), [[1, 0], [0, 1]])
        self.assertEqual(pair.weights1, pair.weights2)

    def test_3_simultaneous_diagonalization(self):
        """Test that both norms are diagonal in the returned basis"""
        n1 = UltraNorm.sup_norm(self.ctx, 2)
        n2 = UltraNorm(PMatrix.from_rows([[5, 0], [1, 1]], self.ctx), (0, 0))
        pair = diagonalize_norm_pair(n1, n2)
        columns = [pair.basis.column(j) for j in range(2)]
        for j, column in enumerate(columns):
            self.assertEqual(n1.evaluate(column), Fraction(5) ** (-pair.weights1[j]))
            self.assertEqual(n2.evaluate(column), Fraction(5) ** (-pair.weights2[j]))
        combined = tuple(a + b for a, b in zip(*columns))
        self.assertEqual(n2.evaluate(combined), max(Fraction(5) ** (-w) for w in pair.weights2))
        self.assertEqual(sorted(-w for w in pair.weights2), [0, 1])


class TestHermiteForm(unittest.TestCase):
    def setUp(self):
        """Set up test case"""
        self.ctx = PrimeContext(5)

    def test_1_examples(self):
        """Test Hermite forms of small lattices"""
        identity = PMatrix.identity(2, self.ctx)
        self.assertEqual(rationals(hnf_lattice(identity)), [[1, 0], [0, 1]])
        gens = PMatrix.from_columns([[self.ctx.embed(5), self.ctx.zero()],
                                     [self.ctx.one(), self.ctx.one()]], self.ctx)
        self.assertEqual(rationals(hnf_lattice(gens)), [[5, 1], [0, 1]])
        reduced = PMatrix.from_rows([[5, 7], [0, 1]], self.ctx)
        self.assertEqual(rationals(hnf_lattice(reduced)), [[5, 2], [0, 1]])

    def test_2_rank_deficient(self):
        """Test that dependent generators are rejected"""
        with self.assertRaises(RankDeficient):
            hnf_lattice(PMatrix.from_rows([[1, 2], [2, 4]], self.ctx))

    def test_3_unimodular_invariance(self):
        """Test that the Hermite form depends only on the lattice"""
        rng = random.Random(3)
        for _ in range(HERMITE_SAMPLES):
            ctx = PrimeContext(rng.choice([3, 5, 7]))
            g = random_invertible(rng, ctx, 3, 2)
            while True:
                rows = [[rng.randrange(-4, 5) for _ in range(3)] for _ in range(3)]
                if Matrix(rows).det() % ctx.p:
                    break
            unimodular = PMatrix.from_rows(rows, ctx)
            h = hnf_lattice(g)
            self.assertEqual(rationals(hnf_lattice(g @ unimodular)), rationals(h))
            self.assertEqual(rationals(hnf_lattice(h)), rationals(h))
            for i in range(3):
                self.assertEqual(h[i, i].rational, Fraction(ctx.p) ** int(h[i, i].valuation))
                for j in range(i):
                    self.assertTrue(h[i, j].is_zero)


if __name__ == '__main__':
    unittest.main()
