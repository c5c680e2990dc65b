"""Freeze an independent oracle for the Smith pairwise density.

Draws 100 points uniformly from z1, z2 in [0.2, 20], a in [0.1, 10] and evaluates the mixed
central finite difference of the bivariate CDF in 60-digit arithmetic, so the difference is
free of double-precision cancellation. Output: smith_density_oracle.csv.
"""
import random

import mpmath as mp

mp.mp.dps = 60


def cdf(z1, z2, a):
    r = mp.log(z2 / z1)
    w = a / 2 + r / a
    v = a / 2 - r / a
    return mp.exp(-mp.ncdf(w) / z1 - mp.ncdf(v) / z2)


def mixed_fd(z1, z2, a):
    h1 = mp.mpf("1e-15") * z1
    h2 = mp.mpf("1e-15") * z2
    return (cdf(z1 + h1, z2 + h2, a) - cdf(z1 + h1, z2 - h2, a)
            - cdf(z1 - h1, z2 + h2, a) + cdf(z1 - h1, z2 - h2, a)) / (4 * h1 * h2)


rng = random.Random(20140101)
with open("smith_density_oracle.csv", "w") as out:
    out.write("z1,z2,a,density\n")
    for _ in range(100):
        z1 = rng.uniform(0.2, 20.0)
        z2 = rng.uniform(0.2, 20.0)
        a = rng.uniform(0.1, 10.0)
        d = mixed_fd(mp.mpf(z1), mp.mpf(z2), mp.mpf(a))
        out.write(f"{z1!r},{z2!r},{a!r},{mp.nstr(d, 25)}\n")
