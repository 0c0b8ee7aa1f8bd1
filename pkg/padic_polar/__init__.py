"""
p-adic linear algebra, quadratic forms and polar (KAH) decompositions of GL(n, Q_p).
"""
