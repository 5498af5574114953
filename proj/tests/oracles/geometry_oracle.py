"""Reference values for the geometry, ilr and decomposition tests (mpmath, 30 digits)."""
from mpmath import mp, mpf, sqrt, log, e

mp.dps = 30

# Two-part composition (16, 8): the single balance is sqrt(1/2) * ln(16/8).
print("ilr(16,8)", sqrt(mpf(1) / 2) * log(2))

# Compositional mean of (18, 6) and (8, 16) at total 24.
g1, g2 = sqrt(mpf(18) * 8), sqrt(mpf(6) * 16)
s = g1 + g2
xb = (24 * g1 / s, 24 * g2 / s)
print("mean", xb)
zb = sqrt(mpf(1) / 2) * log(xb[0] / xb[1])
z1 = sqrt(mpf(1) / 2) * log(mpf(18) / 6)
z2 = sqrt(mpf(1) / 2) * log(mpf(8) / 16)
print("zb", zb, "zw1", z1 - zb, "zw2", z2 - zb)

# closure(e, 1) at total 1: clr = (0.5, -0.5), self inner product 0.5.
x = (e / (e + 1), 1 / (e + 1))
clr = [log(v) - (log(x[0]) + log(x[1])) / 2 for v in x]
print("inner(e,1)", clr[0] ** 2 + clr[1] ** 2)

# Five-part composition in the worked basis: coordinates written as
# ratios of geometric means.
x = [mpf(v) for v in (480, 60, 30, 210, 660)]
z = [
    sqrt(mpf(2 * 3) / 5) * log((x[0] * x[1]) ** (mpf(1) / 2) / (x[2] * x[3] * x[4]) ** (mpf(1) / 3)),
    sqrt(mpf(1) / 2) * log(x[0] / x[1]),
    sqrt(mpf(2) / 3) * log(x[2] / (x[3] * x[4]) ** (mpf(1) / 2)),
    sqrt(mpf(1) / 2) * log(x[3] / x[4]),
]
print("ilr5", z)
