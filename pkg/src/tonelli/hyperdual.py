"""Second-order forward-mode differentiation on hyper-dual numbers.

A ``Dual2`` carries a value together with two first-order tangents and the
mixed second-order component:

    x = a + b eps1 + c eps2 + d eps1*eps2,   eps1**2 = eps2**2 = 0.

Evaluating f(x0 + h1*eps1 + h2*eps2) yields f(x0), the directional
derivatives f'(x0)h1 and f'(x0)h2, and the curvature h1^T f''(x0) h2, all
exactly (no truncation error).  This is enough to assemble gradients and
Hessians of scalar maps by seeding coordinate directions.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "Dual2",
    "lift",
    "sin",
    "cos",
    "exp",
    "log",
    "sqrt",
    "cosh",
    "sinh",
    "value_grad_hess",
]


class Dual2:
    __slots__ = ("a", "b", "c", "d")

    def __init__(self, a, b=0.0, c=0.0, d=0.0):
        self.a = float(a)
        self.b = float(b)
        self.c = float(c)
        self.d = float(d)

    def __repr__(self):
        return f"Dual2({self.a}, {self.b}, {self.c}, {self.d})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual2):
            return Dual2(self.a + other.a, self.b + other.b, self.c + other.c, self.d + other.d)
        return Dual2(self.a + other, self.b, self.c, self.d)

    __radd__ = __add__

    def __neg__(self):
        return Dual2(-self.a, -self.b, -self.c, -self.d)

    def __sub__(self, other):
        return self + (-other if isinstance(other, Dual2) else Dual2(-other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual2):
            return Dual2(
                self.a * other.a,
                self.a * other.b + self.b * other.a,
                self.a * other.c + self.c * other.a,
                self.a * other.d + self.b * other.c + self.c * other.b + self.d * other.a,
            )
        return Dual2(self.a * other, self.b * other, self.c * other, self.d * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual2):
            return self * other._reciprocal()
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        return self._reciprocal() * other

    def _reciprocal(self):
        ia = 1.0 / self.a
        return self._chain(ia, -ia * ia, 2.0 * ia * ia * ia)

    def __pow__(self, n):
        if isinstance(n, Dual2):
            raise TypeError("dual exponents are not supported")
        a = self.a
        if n == 0:
            return Dual2(1.0)
        if float(n).is_integer() and n > 0 and abs(a) < 1e-300:
            # integer powers of (near) zero stay well defined
            m = int(n)
            f = a**m
            fp = m * a ** (m - 1) if m >= 1 else 0.0
            fpp = m * (m - 1) * a ** (m - 2) if m >= 2 else 0.0
            return self._chain(f, fp, fpp)
        return self._chain(a**n, n * a ** (n - 1), n * (n - 1) * a ** (n - 2))

    def _chain(self, f, fp, fpp):
        """Compose with a scalar function given f, f', f'' at self.a."""
        return Dual2(f, fp * self.b, fp * self.c, fp * self.d + fpp * self.b * self.c)

    # comparisons act on the primal value (used by piecewise formulas)

    def __lt__(self, other):
        return self.a < _primal(other)

    def __le__(self, other):
        return self.a <= _primal(other)

    def __gt__(self, other):
        return self.a > _primal(other)

    def __ge__(self, other):
        return self.a >= _primal(other)

    def __float__(self):
        return self.a


def _primal(x):
    return x.a if isinstance(x, Dual2) else float(x)


def lift(x):
    return x if isinstance(x, Dual2) else Dual2(x)


def sin(x):
    if isinstance(x, Dual2):
        s, c = math.sin(x.a), math.cos(x.a)
        return x._chain(s, c, -s)
    return np.sin(x)


def cos(x):
    if isinstance(x, Dual2):
        s, c = math.sin(x.a), math.cos(x.a)
        return x._chain(c, -s, -c)
    return np.cos(x)


def exp(x):
    if isinstance(x, Dual2):
        e = math.exp(x.a)
        return x._chain(e, e, e)
    return np.exp(x)


def log(x):
    if isinstance(x, Dual2):
        return x._chain(math.log(x.a), 1.0 / x.a, -1.0 / (x.a * x.a))
    return np.log(x)


def sqrt(x):
    if isinstance(x, Dual2):
        r = math.sqrt(x.a)
        return x._chain(r, 0.5 / r, -0.25 / (r * r * r))
    return np.sqrt(x)


def cosh(x):
    if isinstance(x, Dual2):
        return x._chain(math.cosh(x.a), math.sinh(x.a), math.cosh(x.a))
    return np.cosh(x)


def sinh(x):
    if isinstance(x, Dual2):
        return x._chain(math.sinh(x.a), math.cosh(x.a), math.sinh(x.a))
    return np.sinh(x)


def value_grad_hess(f, x):
    """Value, gradient and Hessian of a scalar f: R^n -> R at x.

    ``f`` must be written generically (arithmetic plus the transcendental
    helpers of this module) so it accepts Dual2 entries.  Costs
    n*(n+1)/2 + n evaluations.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    val = float(_primal(f([Dual2(xi) for xi in x])))
    grad = np.empty(n)
    hess = np.empty((n, n))
    for i in range(n):
        args = [Dual2(xk, b=1.0 if k == i else 0.0, c=1.0 if k == i else 0.0) for k, xk in enumerate(x)]
        out = f(args)
        grad[i] = out.b
        hess[i, i] = out.d
    for i in range(n):
        for j in range(i + 1, n):
            args = [
                Dual2(xk, b=1.0 if k == i else 0.0, c=1.0 if k == j else 0.0)
                for k, xk in enumerate(x)
            ]
            out = f(args)
            hess[i, j] = out.d
            hess[j, i] = out.d
    return val, grad, hess
