"""Differentiate a small expression three times on one tape.

Run: python3 demos/autodiff_tour.py
"""

import math

from moveset import autodiff as ad

t = ad.Tape()
x = t.input("x", 0.3)
u = (2.0 * x).tanh() * x.exp()

(du,) = ad.gradient(t, u, [x])
(d2u,) = ad.gradient(t, du, [x])
(d3u,) = ad.gradient(t, d2u, [x])

vals = ad.evaluate(t, None, [u, du, d2u, d3u])
print("u, u', u'', u''' at x=0.3:", [round(float(v), 6) for v in vals])
print("tape size:", len(t), "nodes (shared subexpressions are stored once)")


def f(z):
    return math.tanh(2 * z) * math.exp(z)


h = 1e-4
fd = (f(0.3 + h) - f(0.3 - h)) / (2 * h)
print("central difference for u':", round(fd, 6))
