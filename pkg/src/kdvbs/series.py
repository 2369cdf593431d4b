"""Sparse polynomials in (s, t) and the triple-integral operator of the kernel iteration.

The kernel iteration only ever produces monomials ``s**m * t**k`` with ``m >= 1``,
and the operator that drives it maps a single monomial to at most four monomials
with closed-form coefficients.  Everything here is exact up to the coefficient
type: floats by default, :class:`fractions.Fraction` when the caller feeds
rational coefficients and a rational ``lam``.
"""
from __future__ import annotations

import math
from fractions import Fraction
from numbers import Number, Real
from typing import Iterable, Iterator, Mapping, NamedTuple

__all__ = [
    "COMPONENTS",
    "Monomial",
    "Poly1",
    "Poly2",
    "apply_P",
    "apply_component",
    "poly_diff",
    "poly_eval",
    "poly_int_sq",
    "poly_restrict_t",
    "sup_bound",
]

# below this a float coefficient is treated as an exact zero
DROP_BELOW = 1e-300

COMPONENTS = ("Pm2", "Pm1", "P0", "P1")


class Monomial(NamedTuple):
    s_exp: int
    t_exp: int


def _is_zero(c) -> bool:
    if isinstance(c, float):
        return abs(c) < DROP_BELOW
    return c == 0


def _fsum(values):
    values = list(values)
    if values and all(isinstance(v, float) for v in values):
        return math.fsum(values)
    return sum(values, 0)


class Poly2:
    """Immutable sparse polynomial ``sum c[m, k] * s**m * t**k``.

    Terms are stored sorted by ``(s_exp, t_exp)``; zero coefficients are never
    stored, so two polynomials compare equal iff their term maps do.
    """

    __slots__ = ("_terms",)

    def __init__(self, terms: Mapping[tuple[int, int], Number] | Iterable | None = None):
        if terms is None:
            terms = {}
        items = terms.items() if isinstance(terms, Mapping) else terms
        acc: dict[Monomial, Number] = {}
        for key, c in items:
            m, k = key
            if m < 0 or k < 0:
                raise ValueError(f"negative exponent in monomial {key!r}")
            key = Monomial(int(m), int(k))
            acc[key] = acc[key] + c if key in acc else c
        self._terms = {key: acc[key] for key in sorted(acc) if not _is_zero(acc[key])}

    @classmethod
    def monomial(cls, s_exp: int, t_exp: int, coeff=1.0) -> "Poly2":
        return cls({(s_exp, t_exp): coeff})

    @classmethod
    def _from_sorted(cls, terms: dict) -> "Poly2":
        obj = cls.__new__(cls)
        obj._terms = terms
        return obj

    # mapping-like access
    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self) -> Iterator[Monomial]:
        return iter(self._terms)

    def __getitem__(self, key) -> Number:
        return self._terms.get(Monomial(*key), 0)

    def __contains__(self, key) -> bool:
        return Monomial(*key) in self._terms

    def items(self):
        return self._terms.items()

    @property
    def terms(self) -> dict[Monomial, Number]:
        return dict(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def __bool__(self) -> bool:
        return bool(self._terms)

    def __eq__(self, other) -> bool:
        if isinstance(other, Number) and other == 0:
            return not self._terms
        if not isinstance(other, Poly2):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self):
        return hash(tuple(self._terms.items()))

    def __repr__(self) -> str:
        if not self._terms:
            return "Poly2(0)"
        body = " + ".join(f"{c!r}*s^{m}*t^{k}" for (m, k), c in self._terms.items())
        return f"Poly2({body})"

    # arithmetic
    def __add__(self, other: "Poly2") -> "Poly2":
        if not isinstance(other, Poly2):
            if isinstance(other, Number) and other == 0:
                return self
            return NotImplemented
        acc = dict(self._terms)
        for key, c in other._terms.items():
            acc[key] = acc[key] + c if key in acc else c
        return Poly2(acc)

    __radd__ = __add__

    def __neg__(self) -> "Poly2":
        return Poly2._from_sorted({k: -c for k, c in self._terms.items()})

    def __sub__(self, other: "Poly2") -> "Poly2":
        return self + (-other)

    def __mul__(self, a) -> "Poly2":
        if not isinstance(a, Number):
            return NotImplemented
        return Poly2({k: a * c for k, c in self._terms.items()})

    __rmul__ = __mul__

    def __call__(self, s, t):
        return poly_eval(self, s, t)

    def max_exponents(self) -> tuple[int, int]:
        if not self._terms:
            return (0, 0)
        return (max(m for m, _ in self._terms), max(k for _, k in self._terms))

    def to_float(self) -> "Poly2":
        return Poly2({k: float(c) for k, c in self._terms.items()})


class Poly1:
    """Sparse univariate polynomial ``sum c[j] * x**j``."""

    __slots__ = ("_coeffs",)

    def __init__(self, coeffs: Mapping[int, Number] | None = None):
        coeffs = coeffs or {}
        self._coeffs = {int(j): coeffs[j] for j in sorted(coeffs) if not _is_zero(coeffs[j])}

    def items(self):
        return self._coeffs.items()

    def __len__(self):
        return len(self._coeffs)

    def __getitem__(self, j: int):
        return self._coeffs.get(j, 0)

    def __eq__(self, other):
        if isinstance(other, Number) and other == 0:
            return not self._coeffs
        if not isinstance(other, Poly1):
            return NotImplemented
        return self._coeffs == other._coeffs

    def __repr__(self):
        if not self._coeffs:
            return "Poly1(0)"
        return "Poly1(" + " + ".join(f"{c!r}*x^{j}" for j, c in self._coeffs.items()) + ")"

    @property
    def degree(self) -> int:
        return max(self._coeffs, default=-1)

    def __call__(self, x):
        # Horner over the dense coefficient list; works elementwise on arrays
        deg = self.degree
        if deg < 0:
            return 0.0 * x
        out = 0.0 * x + self._coeffs.get(deg, 0)
        for j in range(deg - 1, -1, -1):
            out = out * x + self._coeffs.get(j, 0)
        return out

    def __add__(self, other: "Poly1") -> "Poly1":
        acc = dict(self._coeffs)
        for j, c in other._coeffs.items():
            acc[j] = acc[j] + c if j in acc else c
        return Poly1(acc)

    def __mul__(self, a) -> "Poly1":
        return Poly1({j: a * c for j, c in self._coeffs.items()})

    __rmul__ = __mul__

    def to_float(self) -> "Poly1":
        return Poly1({j: float(c) for j, c in self._coeffs.items()})


def _coeff_rule(which: str, m: int, k: int, lam):
    """Image exponent and coefficient of ``s**m t**k`` under one operator component."""
    one = 1 if not isinstance(lam, Fraction) else Fraction(1)
    if which == "Pm2":
        if k <= 2:
            return None
        return (m + 2, k - 2), -one * k * (k - 1) / (3 * (m + 1) * (m + 2))
    if which == "Pm1":
        if k <= 1:
            return None
        return (m + 1, k - 1), one * k / (m + 1)
    if which == "P0":
        # the t-derivative kills t**0; the closed form assumes k >= 1
        if k == 0:
            return None
        return (m + 2, k), -one / (3 * (m + 1) * (m + 2))
    if which == "P1":
        return (m + 2, k + 1), -lam / (3 * (m + 1) * (m + 2) * (k + 1))
    raise ValueError(f"unknown component {which!r}; expected one of {COMPONENTS}")


def apply_component(which: str, m: Monomial | tuple[int, int], lam) -> Poly2:
    """Apply one of the four pieces of the kernel operator to a unit monomial.

    Parameters
    ----------
    which : {"Pm2", "Pm1", "P0", "P1"}
        ``Pm2`` comes from the ``-f_ttt`` part, ``Pm1`` from ``3 f_stt``,
        ``P0`` from ``-f_t`` and ``P1`` from ``-lam f``.
    m : Monomial
        ``(s_exp, t_exp)`` with ``s_exp >= 1``.
    lam : float or Fraction

    Returns
    -------
    Poly2
        A single term, or the zero polynomial.
    """
    s_exp, t_exp = m
    if s_exp < 1:
        raise ValueError(f"operator rules require s_exp >= 1, got monomial {tuple(m)!r}")
    if t_exp < 0:
        raise ValueError(f"negative t exponent in {tuple(m)!r}")
    rule = _coeff_rule(which, s_exp, t_exp, lam)
    if rule is None:
        return Poly2()
    key, c = rule
    return Poly2({key: c})


def apply_P(p: Poly2, lam) -> Poly2:
    """Exact image of ``p`` under the full operator (sum of the four components)."""
    acc: dict[tuple[int, int], list] = {}
    for (m, k), c in p.items():
        if m < 1:
            raise ValueError(f"operator rules require s_exp >= 1, got monomial {(m, k)!r}")
        for which in COMPONENTS:
            rule = _coeff_rule(which, m, k, lam)
            if rule is None:
                continue
            key, ci = rule
            acc.setdefault(key, []).append(c * ci)
    # deterministic order of the partial sums: they were appended in sorted-term order
    return Poly2({key: _fsum(vals) for key, vals in acc.items()})


def poly_eval(p: Poly2, s, t):
    """Evaluate ``p`` at ``(s, t)``; ``s`` and ``t`` may be numpy arrays."""
    if p.is_zero():
        return 0.0 * s * t
    return sum(c * s**m * t**k for (m, k), c in p.items())


def poly_diff(p: Poly2, var: str, order: int = 1) -> Poly2:
    if order < 0:
        raise ValueError("order must be >= 0")
    if var not in ("s", "t"):
        raise ValueError(f"var must be 's' or 't', got {var!r}")
    out = {}
    for (m, k), c in p.items():
        e = m if var == "s" else k
        if e < order:
            continue
        f = math.perm(e, order)
        key = (m - order, k) if var == "s" else (m, k - order)
        out[key] = c * f
    return Poly2(out)


def poly_restrict_t(p: Poly2, t0) -> Poly1:
    """``s -> p(s, t0)`` as a univariate polynomial in ``s``."""
    acc: dict[int, list] = {}
    for (m, k), c in p.items():
        acc.setdefault(m, []).append(c * t0**k)
    return Poly1({m: _fsum(v) for m, v in acc.items()})


def poly_int_sq(q: Poly1, a: Real = 0, b: Real | None = None) -> Real:
    """``int_a^b q(x)**2 dx`` by exact term-by-term integration.

    The call form ``poly_int_sq(q, 0, L)`` mirrors the integral; ``poly_int_sq(q, L)``
    is accepted as shorthand.
    """
    if b is None:
        a, b = 0, a
    if b <= a:
        raise ValueError("need a < b")
    terms = []
    items = list(q.items())
    for i, ci in items:
        for j, cj in items:
            n = i + j + 1
            terms.append(ci * cj * (b**n - a**n) / n)
    return _fsum(terms)


def sup_bound(p: Poly2, L: Real) -> Real:
    """``sum |c| L**(m+k)``: dominates ``sup |p|`` on ``{s, t >= 0, s + t <= L}``."""
    if L <= 0:
        raise ValueError("L must be positive")
    return _fsum(abs(c) * L ** (m + k) for (m, k), c in p.items())
