"""Affine scalar and Hermitian-matrix expressions over a real variable vector.

Programs are assembled from these: every constraint body is either an
:class:`Affine` (real scalar) or a :class:`HermitianExpr` (complex Hermitian
matrix), both affine in the real decision vector.
"""

from __future__ import annotations

import numpy as np


class Affine:
    """Real affine function ``const + sum_k coef[k] * x[k]``."""

    __slots__ = ("coef", "const")

    def __init__(self, coef=None, const=0.0):
        self.coef = dict(coef) if coef else {}
        self.const = float(const)

    @classmethod
    def var(cls, index, scale=1.0):
        return cls({int(index): float(scale)})

    def copy(self):
        return Affine(self.coef, self.const)

    def _merge(self, other, sign):
        out = Affine(self.coef, self.const)
        if isinstance(other, Affine):
            for k, v in other.coef.items():
                out.coef[k] = out.coef.get(k, 0.0) + sign * v
            out.const += sign * other.const
        else:
            out.const += sign * float(other)
        return out

    def __add__(self, other):
        return self._merge(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._merge(other, -1.0)

    def __rsub__(self, other):
        return (-self)._merge(other, 1.0)

    def __neg__(self):
        return Affine({k: -v for k, v in self.coef.items()}, -self.const)

    def __mul__(self, scalar):
        s = float(scalar)
        return Affine({k: s * v for k, v in self.coef.items()}, s * self.const)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    def value(self, x):
        if not self.coef:
            return self.const
        idx = np.fromiter(self.coef.keys(), dtype=int, count=len(self.coef))
        val = np.fromiter(self.coef.values(), dtype=float, count=len(self.coef))
        return self.const + float(val @ np.asarray(x)[idx])

    def dense(self, n):
        row = np.zeros(n)
        for k, v in self.coef.items():
            row[k] += v
        return row

    def __repr__(self):
        terms = " + ".join(f"{v:g}*x{k}" for k, v in sorted(self.coef.items()))
        return f"Affine({terms or '0'} + {self.const:g})"


def asum(items):
    """Sum of affine expressions (empty sum is the zero expression)."""
    out = Affine()
    for it in items:
        out = out + it
    return out


class HermitianExpr:
    """Hermitian matrix ``const + sum_k x[k] * terms[k]``."""

    __slots__ = ("dim", "const", "terms")

    def __init__(self, dim, const=None, terms=None):
        self.dim = int(dim)
        self.const = (np.zeros((dim, dim), dtype=complex) if const is None
                      else np.array(const, dtype=complex))
        self.terms = {} if terms is None else {int(k): np.array(v, dtype=complex)
                                                for k, v in terms.items()}

    @classmethod
    def constant(cls, matrix):
        m = np.asarray(matrix, dtype=complex)
        return cls(m.shape[0], m)

    @classmethod
    def scaled(cls, affine, matrix):
        """``affine * matrix`` for a real affine scalar and fixed Hermitian matrix."""
        m = np.asarray(matrix, dtype=complex)
        return cls(m.shape[0], affine.const * m,
                   {k: v * m for k, v in affine.coef.items()})

    def _merge(self, other, sign):
        out = HermitianExpr(self.dim, self.const, self.terms)
        if isinstance(other, HermitianExpr):
            out.const = out.const + sign * other.const
            for k, v in other.terms.items():
                out.terms[k] = out.terms[k] + sign * v if k in out.terms else sign * v
        else:
            out.const = out.const + sign * np.asarray(other, dtype=complex)
        return out

    def __add__(self, other):
        return self._merge(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._merge(other, -1.0)

    def __neg__(self):
        return HermitianExpr(self.dim, -self.const, {k: -v for k, v in self.terms.items()})

    def __mul__(self, scalar):
        s = float(scalar)
        return HermitianExpr(self.dim, s * self.const, {k: s * v for k, v in self.terms.items()})

    __rmul__ = __mul__

    def quad(self, h):
        """Real affine scalar ``h^H X h``."""
        h = np.asarray(h, dtype=complex)
        hc = h.conj()
        return Affine({k: float((hc @ v @ h).real) for k, v in self.terms.items()},
                      float((hc @ self.const @ h).real))

    def inner(self, a):
        """Real affine scalar ``Re tr(A X)`` for a Hermitian weight ``A``."""
        a = np.asarray(a, dtype=complex)
        return Affine({k: float(np.sum(a * v.T).real) for k, v in self.terms.items()},
                      float(np.sum(a * self.const.T).real))

    def trace(self):
        return Affine({k: float(np.trace(v).real) for k, v in self.terms.items()},
                      float(np.trace(self.const).real))

    def congruence(self, h):
        """``H X H^H`` for a fixed (possibly rectangular) matrix ``H``."""
        h = np.asarray(h, dtype=complex)
        hh = h.conj().T
        return HermitianExpr(h.shape[0], h @ self.const @ hh,
                             {k: h @ v @ hh for k, v in self.terms.items()})

    def value(self, x):
        x = np.asarray(x)
        out = self.const.copy()
        for k, v in self.terms.items():
            out += x[k] * v
        return out


def hermitian_basis(dim):
    """Real basis of the ``dim x dim`` Hermitian matrices.

    Order: diagonal entries, then real parts of the strict upper triangle,
    then imaginary parts of the strict upper triangle (row-major).
    """
    basis = []
    for a in range(dim):
        e = np.zeros((dim, dim), dtype=complex)
        e[a, a] = 1.0
        basis.append(e)
    upper = [(a, b) for a in range(dim) for b in range(a + 1, dim)]
    for a, b in upper:
        e = np.zeros((dim, dim), dtype=complex)
        e[a, b] = e[b, a] = 1.0
        basis.append(e)
    for a, b in upper:
        e = np.zeros((dim, dim), dtype=complex)
        e[a, b] = 1j
        e[b, a] = -1j
        basis.append(e)
    return basis


def hermitian_to_coords(matrix):
    """Inverse of the :func:`hermitian_basis` parametrization."""
    m = np.asarray(matrix)
    dim = m.shape[0]
    upper = [(a, b) for a in range(dim) for b in range(a + 1, dim)]
    coords = [m[a, a].real for a in range(dim)]
    coords += [m[a, b].real for a, b in upper]
    coords += [m[a, b].imag for a, b in upper]
    return np.array(coords, dtype=float)


def frobenius_weights(dim):
    """Per-coordinate weights w with ``||X||_F^2 = sum_k w_k c_k^2``."""
    return np.array([1.0] * dim + [2.0] * (dim * (dim - 1)), dtype=float)


class HermitianBlock:
    """A Hermitian matrix variable occupying ``dim**2`` consecutive reals."""

    def __init__(self, name, dim, indices, psd):
        self.name = name
        self.dim = int(dim)
        self.indices = np.asarray(indices, dtype=int)
        self.psd = bool(psd)

    def expr(self):
        basis = hermitian_basis(self.dim)
        return HermitianExpr(self.dim, None, {int(k): b for k, b in zip(self.indices, basis)})

    def coord(self, k):
        return Affine.var(self.indices[k])

    def value(self, x):
        x = np.asarray(x)
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for k, b in zip(self.indices, hermitian_basis(self.dim)):
            out += x[k] * b
        return out

    def coords_of(self, matrix):
        return hermitian_to_coords(matrix)
