"""Small dense barrier-method solver for mixed conic programs.

Supported constraint kinds:

* ``affine``          a(x) <= 0
* ``second-order``    ||(r_1(x), ..., r_k(x))||_2 <= s(x)
* ``psd``             M(x) >= 0 (Hermitian, affine in x)
* ``exp``             exp(t(x)) <= s(x)

Objective: linear + weighted sum of squared affine terms + sum of l2 norms of
affine vectors. Norm terms are moved into epigraph variables before solving.

Hermitian blocks are parametrized by their ``dim**2`` real coordinates (see
:func:`fdcells.expr.hermitian_basis`), and PSD blocks get a log-det barrier.
The path-following loop is the textbook one: centre with damped Newton, divide
the barrier weight by 10, stop once the duality-gap proxy is below ``tol``.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .expr import Affine, HermitianBlock, HermitianExpr

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-7
NEWTON_TOL = 1e-9
# Decrement below which slow (non-quadratic) contraction counts as centered.
# A point with decrement lam is within lam^2/2 (to first order) of the centre in
# t-scaled units, negligible next to the barrier parameter.
STALL_TOL = 0.05
CHOL_MIN_PIVOT = 1e-8  # smaller pivots send the Newton solve to the eigen path
EIG_RCOND = 1e-13    # relative eigenvalue cutoff of the Newton system
BOX_RADIUS = 1e7
ANCHOR_WEIGHT = 1.0  # phase-I proximity to the starting point


class SolverError(RuntimeError):
    pass


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITER = "max-iter"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical-failure"


class ConicProgram:
    """Container for variables, objective terms and tagged constraints."""

    def __init__(self):
        self.names = []
        self.lower = []
        self.upper = []
        self.blocks = []
        self.obj_linear = Affine()
        self.obj_squares = []   # (weight, Affine)
        self.obj_norms = []     # list[Affine]
        self.affine = []        # (Affine, tag)
        self.soc = []           # (list[Affine], Affine, tag)
        self.psd = []           # (HermitianExpr, tag)
        self.exp = []           # (Affine t, Affine s, tag)

    @property
    def n(self):
        return len(self.names)

    # variables -----------------------------------------------------------
    def scalar(self, name, lb=None, ub=None):
        idx = len(self.names)
        self.names.append(name)
        self.lower.append(lb)
        self.upper.append(ub)
        return Affine.var(idx)

    def hermitian(self, name, dim, psd=True):
        start = len(self.names)
        labels = _coord_labels(dim)
        for lab in labels:
            self.names.append(f"{name}.{lab}")
            self.lower.append(None)
            self.upper.append(None)
        block = HermitianBlock(name, dim, np.arange(start, start + dim * dim), psd)
        self.blocks.append(block)
        if psd:
            self.psd.append((block.expr(), f"psd:{name}"))
        return block

    # objective -----------------------------------------------------------
    def add_objective(self, expr):
        self.obj_linear = self.obj_linear + expr

    def add_square(self, expr, weight=1.0):
        """Add ``weight * expr**2`` to the objective (weight >= 0)."""
        if weight < 0:
            raise ValueError("square weight must be non-negative")
        if weight > 0:
            self.obj_squares.append((float(weight), expr))

    def add_norm(self, exprs):
        """Add ``||(e_1, ..., e_k)||_2`` to the objective."""
        exprs = list(exprs)
        if exprs:
            self.obj_norms.append(exprs)

    # constraints ---------------------------------------------------------
    def add_le(self, lhs, rhs=0.0, tag="affine"):
        self.affine.append((_as_affine(lhs) - _as_affine(rhs), tag))

    def add_ge(self, lhs, rhs=0.0, tag="affine"):
        self.add_le(rhs, lhs, tag)

    def add_soc(self, rows, rhs, tag="soc"):
        self.soc.append(([_as_affine(r) for r in rows], _as_affine(rhs), tag))

    def add_psd(self, expr, tag="psd"):
        self.psd.append((expr, tag))

    def add_exp(self, t, s, tag="exp"):
        self.exp.append((_as_affine(t), _as_affine(s), tag))

    # evaluation ------------------------------------------------------------
    def objective_value(self, x):
        x = np.asarray(x, dtype=float)
        val = self.obj_linear.value(x)
        for w, e in self.obj_squares:
            val += w * e.value(x) ** 2
        for rows in self.obj_norms:
            val += math.sqrt(sum(r.value(x) ** 2 for r in rows))
        return val

    def violations(self, x, tol=0.0):
        """List of ``(tag, amount)`` for constraints violated by more than tol."""
        x = np.asarray(x, dtype=float)
        out = []
        for i, (lo, hi) in enumerate(zip(self.lower, self.upper)):
            if lo is not None and lo - x[i] > tol:
                out.append((f"bound:{self.names[i]}", lo - x[i]))
            if hi is not None and x[i] - hi > tol:
                out.append((f"bound:{self.names[i]}", x[i] - hi))
        for e, tag in self.affine:
            v = e.value(x)
            if v > tol:
                out.append((tag, v))
        for rows, rhs, tag in self.soc:
            v = math.sqrt(sum(r.value(x) ** 2 for r in rows)) - rhs.value(x)
            if v > tol:
                out.append((tag, v))
        for e, tag in self.psd:
            v = -float(np.linalg.eigvalsh(e.value(x)).min())
            if v > tol:
                out.append((tag, v))
        for t, s, tag in self.exp:
            v = math.exp(min(t.value(x), 700.0)) - s.value(x)
            if v > tol:
                out.append((tag, v))
        return out

    def counts(self):
        return {"affine": len(self.affine) + sum(lo is not None for lo in self.lower)
                + sum(hi is not None for hi in self.upper),
                "second-order": len(self.soc), "psd": len(self.psd), "exp": len(self.exp)}

    def tags(self):
        out = [tag for _, tag in self.affine]
        out += [tag for _, _, tag in self.soc]
        out += [tag for _, tag in self.psd]
        out += [tag for _, _, tag in self.exp]
        return out


def _coord_labels(dim):
    upper = [(a, b) for a in range(dim) for b in range(a + 1, dim)]
    return ([f"d{a}" for a in range(dim)] + [f"re{a}{b}" for a, b in upper]
            + [f"im{a}{b}" for a, b in upper])


def _as_affine(v):
    return v if isinstance(v, Affine) else Affine(None, float(v))


# ---------------------------------------------------------------------------
# compiled standard form

@dataclass
class _SocGroup:
    A: np.ndarray   # (K, r, n)
    b: np.ndarray   # (K, r)
    c: np.ndarray   # (K, n)
    d: np.ndarray   # (K,)


@dataclass
class _PsdGroup:
    idx: np.ndarray  # (K, nv)
    Mk: np.ndarray   # (K, nv, m, m)
    M0: np.ndarray   # (K, m, m)


@dataclass
class _StandardForm:
    n: int
    c: np.ndarray
    P: np.ndarray
    const: float
    G: np.ndarray
    h: np.ndarray
    socs: list
    psds: list
    ea: np.ndarray
    ea0: np.ndarray
    es: np.ndarray
    es0: np.ndarray
    # row bookkeeping for diagnostics: tags in the order affine, soc, psd, exp
    affine_tags: list = field(default_factory=list)
    soc_tags: list = field(default_factory=list)
    psd_tags: list = field(default_factory=list)
    exp_tags: list = field(default_factory=list)
    n_user: int = 0
    # squared terms sum_k sq_w[k] * (sq_A[k] @ x + sq_b[k])**2, kept unexpanded
    # so large offsets do not cancel catastrophically; P is their Hessian
    sq_A: np.ndarray = None
    sq_b: np.ndarray = None
    sq_w: np.ndarray = None

    def __post_init__(self):
        if self.sq_A is None:
            self.sq_A = np.zeros((0, self.n))
            self.sq_b = np.zeros(0)
            self.sq_w = np.zeros(0)

    @property
    def nu(self):
        """Barrier parameter (sum of the cone degrees)."""
        return (self.G.shape[0] + 2 * sum(g.A.shape[0] for g in self.socs)
                + sum(g.M0.shape[0] * g.M0.shape[1] for g in self.psds)
                + 2 * self.ea.shape[0])

    # barrier and objective ---------------------------------------------------
    def f0(self, x):
        r = self.sq_A @ x + self.sq_b
        return float(self.c @ x + self.const + self.sq_w @ (r * r))

    def grad_f0(self, x):
        r = self.sq_A @ x + self.sq_b
        return self.c + 2.0 * (self.sq_A.T @ (self.sq_w * r))

    def interior(self, x):
        if self.G.shape[0] and np.any(self.h - self.G @ x <= 0):
            return False
        for g in self.socs:
            u = np.einsum("krn,n->kr", g.A, x) + g.b
            s = g.c @ x + g.d
            if np.any(s <= 0) or np.any(s * s - np.einsum("kr,kr->k", u, u) <= 0):
                return False
        for g in self.psds:
            M = g.M0 + np.einsum("kv,kvab->kab", x[g.idx], g.Mk)
            try:
                np.linalg.cholesky(M)
            except np.linalg.LinAlgError:
                return False
        if self.ea.shape[0]:
            s = self.es @ x + self.es0
            if np.any(s <= 0):
                return False
            if np.any(np.log(s) - (self.ea @ x + self.ea0) <= 0):
                return False
        return True

    def barrier(self, x):
        """Log barrier; ``inf`` outside the (numerical) interior."""
        if not self.interior(x):
            return float("inf")
        val = 0.0
        if self.G.shape[0]:
            val -= np.sum(np.log(self.h - self.G @ x))
        for g in self.socs:
            u = np.einsum("krn,n->kr", g.A, x) + g.b
            s = g.c @ x + g.d
            val -= np.sum(np.log(s * s - np.einsum("kr,kr->k", u, u)))
        for g in self.psds:
            M = g.M0 + np.einsum("kv,kvab->kab", x[g.idx], g.Mk)
            L = np.linalg.cholesky(M)
            val -= 2.0 * np.sum(np.log(np.abs(np.diagonal(L, axis1=1, axis2=2))))
        if self.ea.shape[0]:
            s = self.es @ x + self.es0
            gl = np.log(s) - (self.ea @ x + self.ea0)
            val -= np.sum(np.log(gl)) + np.sum(np.log(s))
        return float(val)

    def barrier_derivs(self, x):
        n = self.n
        g = np.zeros(n)
        H = np.zeros((n, n))
        if self.G.shape[0]:
            inv = 1.0 / (self.h - self.G @ x)
            g += self.G.T @ inv
            Gs = self.G * inv[:, None]
            H += Gs.T @ Gs
        for grp in self.socs:
            K, r, _ = grp.A.shape
            u = np.einsum("krn,n->kr", grp.A, x) + grp.b
            s = grp.c @ x + grp.d
            w = s * s - np.einsum("kr,kr->k", u, u)
            gw = 2.0 * s[:, None] * grp.c - 2.0 * np.einsum("krn,kr->kn", grp.A, u)
            g -= np.sum(gw / w[:, None], axis=0)
            gws = gw / w[:, None]
            H += gws.T @ gws
            sq = 1.0 / np.sqrt(w)
            Af = (grp.A * sq[:, None, None]).reshape(K * r, n)
            H += 2.0 * Af.T @ Af
            Cf = grp.c * sq[:, None]
            H -= 2.0 * Cf.T @ Cf
        for grp in self.psds:
            M = grp.M0 + np.einsum("kv,kvab->kab", x[grp.idx], grp.Mk)
            Minv = np.linalg.inv(M)
            R = np.einsum("kab,kvbc->kvac", Minv, grp.Mk)
            gl = -np.einsum("kvaa->kv", R).real
            hl = np.einsum("kpab,kqba->kpq", R, R).real
            np.add.at(g, grp.idx, gl)
            K, nv = grp.idx.shape
            flat = (grp.idx[:, :, None] * n + grp.idx[:, None, :]).ravel()
            H += np.bincount(flat, weights=hl.ravel(), minlength=n * n).reshape(n, n)
        if self.ea.shape[0]:
            s = self.es @ x + self.es0
            gl = np.log(s) - (self.ea @ x + self.ea0)
            dt = 1.0 / gl
            ds = -1.0 / (s * gl) - 1.0 / s
            g += self.ea.T @ dt + self.es.T @ ds
            htt = 1.0 / gl ** 2
            hts = -1.0 / (s * gl ** 2)
            hss = 1.0 / (s * s * gl) + 1.0 / (s * s * gl ** 2) + 1.0 / (s * s)
            cross = self.ea.T @ (hts[:, None] * self.es)
            H += self.ea.T @ (htt[:, None] * self.ea) + cross + cross.T
            H += self.es.T @ (hss[:, None] * self.es)
        return g, H

    def max_violation(self, x):
        """Largest constraint violation (negative when strictly feasible)."""
        vals = []
        if self.G.shape[0]:
            vals.append(np.max(self.G @ x - self.h))
        for grp in self.socs:
            u = np.einsum("krn,n->kr", grp.A, x) + grp.b
            vals.append(np.max(np.linalg.norm(u, axis=1) - (grp.c @ x + grp.d)))
        for grp in self.psds:
            M = grp.M0 + np.einsum("kv,kvab->kab", x[grp.idx], grp.Mk)
            vals.append(np.max(-np.linalg.eigvalsh(M)[:, 0]))
        if self.ea.shape[0]:
            t = np.minimum(self.ea @ x + self.ea0, 700.0)
            vals.append(np.max(np.exp(t) - (self.es @ x + self.es0)))
        return float(max(vals)) if vals else -np.inf


def _compile(prog, extra_vars=0):
    """Lower a :class:`ConicProgram` to dense arrays; norms become epigraphs."""
    n_user = prog.n
    n_norm = len(prog.obj_norms)
    n = n_user + n_norm + extra_vars
    c = np.zeros(n)
    c[:n_user] += prog.obj_linear.dense(n_user)
    const = prog.obj_linear.const
    sq_A = np.array([e.dense(n) for _, e in prog.obj_squares]).reshape(-1, n)
    sq_b = np.array([e.const for _, e in prog.obj_squares], dtype=float)
    sq_w = np.array([w for w, _ in prog.obj_squares], dtype=float)
    P = 2.0 * (sq_A.T * sq_w) @ sq_A

    rows, rhs, atags = [], [], []
    for i, (lo, hi) in enumerate(zip(prog.lower, prog.upper)):
        if lo is not None:
            r = np.zeros(n)
            r[i] = -1.0
            rows.append(r)
            rhs.append(-float(lo))
            atags.append(f"bound:{prog.names[i]}")
        if hi is not None:
            r = np.zeros(n)
            r[i] = 1.0
            rows.append(r)
            rhs.append(float(hi))
            atags.append(f"bound:{prog.names[i]}")
    for e, tag in prog.affine:
        rows.append(e.dense(n))
        rhs.append(-e.const)
        atags.append(tag)
    G = np.array(rows).reshape(len(rows), n)
    h = np.array(rhs, dtype=float)

    socs_raw = []
    for k, rws in enumerate(prog.obj_norms):
        s = np.zeros(n)
        s[n_user + k] = 1.0
        c[n_user + k] = 1.0
        socs_raw.append((np.array([r.dense(n) for r in rws]),
                         np.array([r.const for r in rws]), s, 0.0, f"norm:{k}"))
    for rws, rh, tag in prog.soc:
        socs_raw.append((np.array([r.dense(n) for r in rws]).reshape(len(rws), n),
                         np.array([r.const for r in rws]), rh.dense(n), rh.const, tag))
    socs, stags = _group_socs(socs_raw)

    psd_raw = [(e, tag) for e, tag in prog.psd]
    psds, ptags = _group_psds(psd_raw, n)

    if prog.exp:
        ea = np.array([t.dense(n) for t, _, _ in prog.exp])
        ea0 = np.array([t.const for t, _, _ in prog.exp])
        es = np.array([s.dense(n) for _, s, _ in prog.exp])
        es0 = np.array([s.const for _, s, _ in prog.exp])
    else:
        ea = np.zeros((0, n))
        ea0 = np.zeros(0)
        es = np.zeros((0, n))
        es0 = np.zeros(0)
    return _StandardForm(n, c, P, const, G, h, socs, psds, ea, ea0, es, es0,
                         atags, stags, ptags, [t for _, _, t in prog.exp], n_user,
                         sq_A, sq_b, sq_w)


def _group_socs(raw):
    groups = {}
    for A, b, cvec, d, tag in raw:
        groups.setdefault(A.shape[0], []).append((A, b, cvec, d, tag))
    out, tags = [], []
    for _, items in sorted(groups.items()):
        out.append(_SocGroup(np.stack([i[0] for i in items]), np.stack([i[1] for i in items]),
                             np.stack([i[2] for i in items]), np.array([i[3] for i in items])))
        tags.append([i[4] for i in items])
    return out, tags


def _group_psds(raw, n, extra=None):
    """Group PSD constraints by (dim, number of involved variables)."""
    groups = {}
    for e, tag in raw:
        keys = sorted(e.terms)
        mats = [e.terms[k] for k in keys]
        const = e.const
        if extra is not None:
            keys = keys + [extra]
            mats = mats + [np.eye(e.dim, dtype=complex)]
        if not keys:
            keys = [0]
            mats = [np.zeros((e.dim, e.dim), dtype=complex)]
        groups.setdefault((e.dim, len(keys)), []).append((keys, mats, const, tag))
    out, tags = [], []
    for _, items in sorted(groups.items()):
        idx = np.array([i[0] for i in items], dtype=int)
        Mk = np.array([np.stack(i[1]) for i in items])
        M0 = np.array([i[2] for i in items])
        out.append(_PsdGroup(idx, Mk, M0))
        tags.append([i[3] for i in items])
    return out, tags


def _phase_one_form(sf, radius, anchor=None):
    """Feasibility problem: minimize sigma with every constraint relaxed by sigma.

    With ``anchor`` a scaled proximity term ``sum(((x - anchor) / s)**2)``,
    ``s = max(|anchor|, 1)``, is attached; its weight is set per barrier
    step by :func:`_set_anchor_weight`.
    """
    n = sf.n + 1
    sig = sf.n
    c = np.zeros(n)
    c[sig] = 1.0
    P = np.zeros((n, n))
    G = np.hstack([sf.G, -np.ones((sf.G.shape[0], 1))])
    h = sf.h.copy()
    box = np.vstack([np.hstack([np.eye(sf.n), np.zeros((sf.n, 1))]),
                     np.hstack([-np.eye(sf.n), np.zeros((sf.n, 1))])])
    low = np.zeros((1, n))
    low[0, sig] = -1.0
    G = np.vstack([G, box, low])
    h = np.concatenate([h, np.full(2 * sf.n, radius), [1.0]])
    socs = []
    for grp in sf.socs:
        K = grp.A.shape[0]
        A = np.concatenate([grp.A, np.zeros(grp.A.shape[:2] + (1,))], axis=2)
        cc = np.hstack([grp.c, np.ones((K, 1))])
        socs.append(_SocGroup(A, grp.b, cc, grp.d))
    psds = []
    for grp in sf.psds:
        K, nv = grp.idx.shape
        m = grp.M0.shape[1]
        idx = np.hstack([grp.idx, np.full((K, 1), sig)])
        eye = np.broadcast_to(np.eye(m, dtype=complex), (K, 1, m, m))
        psds.append(_PsdGroup(idx, np.concatenate([grp.Mk, eye], axis=1), grp.M0))
    ea = np.hstack([sf.ea, np.zeros((sf.ea.shape[0], 1))])
    es = np.hstack([sf.es, np.ones((sf.es.shape[0], 1))])
    ph = _StandardForm(n, c, P, 0.0, G, h, socs, psds, ea, sf.ea0, es, sf.es0)
    if anchor is not None:
        scale = np.maximum(np.abs(anchor), 1.0)
        ph.sq_A = np.hstack([np.diag(1.0 / scale), np.zeros((sf.n, 1))])
        ph.sq_b = -anchor / scale
        ph.sq_w = np.zeros(sf.n)
    return ph


def _set_anchor_weight(ph, weight):
    ph.sq_w[:] = weight
    ph.P = 2.0 * weight * (ph.sq_A.T @ ph.sq_A)


# ---------------------------------------------------------------------------
# Newton / path following

def _newton_direction(H, g, rcond=EIG_RCOND):
    # symmetric diagonal scaling: variables of very different magnitude
    # otherwise wreck the conditioning of the Newton system
    d = np.diag(H).copy()
    d = 1.0 / np.sqrt(np.where(d > 0, d, 1.0))
    Hs = H * d[:, None] * d[None, :]
    gs = g * d
    try:
        L = np.linalg.cholesky(Hs)
        piv = np.diag(L) ** 2
        if piv.min() > CHOL_MIN_PIVOT * piv.max():
            y = scipy.linalg.cho_solve((L, True), -gs, check_finite=False)
            return d * y
    except np.linalg.LinAlgError:
        pass
    # near the boundary Hs has directions of numerically zero curvature (a
    # nearly rank-one PSD block, degenerate splits of a sum); they cannot be
    # resolved in double precision, so the step is taken in the complement
    w, V = np.linalg.eigh(Hs)
    keep = w > rcond * max(w[-1], 0.0)
    if not np.any(keep):
        return np.zeros_like(g)
    Vk = V[:, keep]
    return d * -(Vk @ ((Vk.T @ gs) / w[keep]))


def _center(sf, x, t, max_iter, stop=None, newton_tol=NEWTON_TOL):
    """Damped Newton on ``t*f0 + barrier``.

    Returns ``(x, outcome, iterations)`` with outcome one of ``"centered"``,
    ``"max-iter"`` or ``"line-search"``.
    """
    it = 0
    prev = np.inf
    for it in range(1, max_iter + 1):
        try:
            gb, Hb = sf.barrier_derivs(x)
        except np.linalg.LinAlgError:
            # a PSD block at the edge of double precision
            return x, "line-search", it
        g = t * sf.grad_f0(x) + gb
        H = t * sf.P + Hb
        dx = _newton_direction(H, g)
        lam2 = float(-g @ dx)
        if not np.isfinite(lam2):
            return x, "line-search", it
        if lam2 / 2.0 <= newton_tol:
            return x, "centered", it
        if lam2 / 2.0 <= STALL_TOL and lam2 > 0.25 * prev:
            # decrement no longer contracts: the Newton system is too ill-conditioned
            # to resolve the remaining (flat) directions
            return x, "centered", it
        prev = lam2
        step = 1.0
        while not sf.interior(x + step * dx):
            step *= 0.5
            if step < 1e-16:
                return x, "line-search", it
        if lam2 > 0.1:
            f_old = t * sf.f0(x) + sf.barrier(x)
            while t * sf.f0(x + step * dx) + sf.barrier(x + step * dx) > f_old - 0.25 * step * lam2:
                step *= 0.5
                if step < 1e-16:
                    return x, "line-search", it
        x = x + step * dx
        if stop is not None and stop(x):
            return x, "centered", it
    return x, "max-iter", it


@dataclass
class Solution:
    x: np.ndarray
    objective: float
    status: Status
    kkt: dict
    iterations: int
    mu: float
    x_full: np.ndarray = None
    duals: dict = None
    message: str = ""

    @property
    def ok(self):
        return self.status == Status.OPTIMAL


def find_feasible(sf, x0, tol, max_newton):
    """Phase I. Returns (x strictly feasible or None, iterations)."""
    if sf.interior(x0):
        return x0, 0
    viol = sf.max_violation(x0)
    viol = 0.0 if not np.isfinite(viol) else viol
    ph = _phase_one_form(sf, BOX_RADIUS, anchor=np.clip(x0, -0.5 * BOX_RADIUS, 0.5 * BOX_RADIUS))
    x = np.concatenate([np.clip(x0, -0.5 * BOX_RADIUS, 0.5 * BOX_RADIUS), [max(viol, 0.0) + 1.0]])
    if not ph.interior(x):
        x[-1] = 10.0 * (abs(viol) + 1.0)
        if not ph.interior(x):
            raise SolverError("phase-I start is not interior")
    stop = lambda z: z[-1] < 0 and sf.interior(z[:-1])
    t = 1.0
    total = 0
    while True:
        # the anchor keeps one-sided directions from running off to the box
        # (Newton on -log(c) doubles c every step); its pull fades as t grows
        _set_anchor_weight(ph, ANCHOR_WEIGHT / t)
        x, _, it = _center(ph, x, t, max_newton, stop)
        total += it
        if x[-1] < 0 and sf.interior(x[:-1]):
            return x[:-1], total
        if ph.nu / t <= tol * 1e-2 or total > 20 * max_newton:
            return None, total
        t *= 10.0


def solve(program, tol=DEFAULT_TOL, x0=None, mu0=1.0, max_newton=200):
    """Solve ``program`` by phase-I plus barrier path following.

    ``x0`` (user variables only) is used as the starting point; when it is
    strictly feasible phase I is skipped, which makes warm starts cheap.
    """
    sf = _compile(program)
    n_user = program.n
    start = np.zeros(sf.n)
    if x0 is not None:
        start[:n_user] = np.asarray(x0, dtype=float)
    # epigraph variables of the norm terms start strictly above their norms
    for k, rows in enumerate(program.obj_norms):
        start[n_user + k] = math.sqrt(sum(r.value(start) ** 2 for r in rows)) + 1.0
    x, iters = find_feasible(sf, start, tol, max_newton)
    if x is None:
        return Solution(start[:n_user], float("nan"), Status.INFEASIBLE, {}, iters,
                        float("nan"), start, None, "phase I found no strictly feasible point")
    nu = max(sf.nu, 1)
    mu = float(mu0)
    if iters:
        # a phase-I point can sit far from optimal; start where t*f0 and the
        # barrier have comparable size, since damped Newton only gains a
        # bounded amount per step
        mu = max(mu, abs(sf.f0(x)) / nu)
    status = Status.OPTIMAL
    message = ""
    total = iters
    centered = None          # last (x, mu) that finished centering
    while True:
        x, outcome, it = _center(sf, x, 1.0 / mu, max_newton)
        total += it
        if outcome == "max-iter":
            status, message = Status.MAX_ITER, f"centering did not converge at mu={mu:g}"
            break
        if outcome != "centered":
            status, message = Status.NUMERICAL_FAILURE, f"Newton {outcome} at mu={mu:g}"
            break
        centered = (x, mu)
        if nu * mu <= tol:
            # a few extra Newton steps tighten stationarity at negligible cost
            x, _, it = _center(sf, x, 1.0 / mu, 5, newton_tol=1e-20)
            total += it
            break
        mu /= 10.0
    if status != Status.OPTIMAL and centered is not None and nu * centered[1] <= 1e2 * tol:
        # late stages can stall on an ill-conditioned Hessian; the last centered
        # point is within nu * mu of optimal
        x, mu = centered
        message += f" (returned the point centered at mu={mu:g})"
        status = Status.OPTIMAL
    duals = _polish_duals(sf, x, _barrier_duals(sf, x, mu))
    kkt = _kkt_residuals(sf, x, duals)
    return Solution(x[:n_user].copy(), program.objective_value(x[:n_user]), status, kkt,
                    total, mu, x, duals, message)


# ---------------------------------------------------------------------------
# KKT

def _barrier_duals(sf, x, mu):
    d = {}
    if sf.G.shape[0]:
        d["affine"] = mu / (sf.h - sf.G @ x)
    else:
        d["affine"] = np.zeros(0)
    soc = []
    for grp in sf.socs:
        u = np.einsum("krn,n->kr", grp.A, x) + grp.b
        s = grp.c @ x + grp.d
        w = s * s - np.einsum("kr,kr->k", u, u)
        soc.append((2 * mu * s / w, -2 * mu * u / w[:, None]))
    d["soc"] = soc
    psd = []
    for grp in sf.psds:
        M = grp.M0 + np.einsum("kv,kvab->kab", x[grp.idx], grp.Mk)
        psd.append(mu * np.linalg.inv(M))
    d["psd"] = psd
    if sf.ea.shape[0]:
        s = sf.es @ x + sf.es0
        gl = np.log(s) - (sf.ea @ x + sf.ea0)
        d["exp"] = (mu / gl, mu / s)
    else:
        d["exp"] = (np.zeros(0), np.zeros(0))
    return d


def _dual_columns(sf, x, duals):
    """Stationarity contribution of every dual block, one column each."""
    cols = []
    if sf.G.shape[0]:
        cols.append((sf.G * duals["affine"][:, None]).T)
    for grp, (z0, z1) in zip(sf.socs, duals["soc"]):
        cols.append(-(grp.c * z0[:, None] + np.einsum("krn,kr->kn", grp.A, z1)).T)
    for grp, Z in zip(sf.psds, duals["psd"]):
        trz = np.einsum("kab,kvba->kv", Z, grp.Mk).real
        block = np.zeros((sf.n, grp.idx.shape[0]))
        for k in range(grp.idx.shape[0]):
            np.add.at(block[:, k], grp.idx[k], -trz[k])
        cols.append(block)
    le, ne = duals["exp"]
    if sf.ea.shape[0]:
        s = sf.es @ x + sf.es0
        cols.append(((sf.ea - sf.es / s[:, None]) * le[:, None]).T)
        cols.append((-sf.es * ne[:, None]).T)
    return np.hstack(cols) if cols else np.zeros((sf.n, 0))


def _polish_duals(sf, x, duals):
    """Rescale each dual block by (1 + y) to cancel the rounding-limited
    stationarity residual left by the barrier estimates mu/slack."""
    C = _dual_columns(sf, x, duals)
    if C.shape[1] == 0:
        return duals
    r = sf.grad_f0(x) + C.sum(axis=1)
    scale = max(1.0, float(np.max(np.abs(C))))
    ridge = 1e-10 * scale
    A = np.vstack([C, ridge * np.eye(C.shape[1])])
    y = np.linalg.lstsq(A, np.concatenate([-r, np.zeros(C.shape[1])]), rcond=None)[0]
    y = np.maximum(y, -1.0)
    if np.linalg.norm(r + C @ y) >= np.linalg.norm(r):
        return duals
    k = 0
    out = {"soc": [], "psd": []}
    m = len(duals["affine"])
    out["affine"] = duals["affine"] * (1 + y[k:k + m])
    k += m
    for z0, z1 in duals["soc"]:
        m = len(z0)
        f = 1 + y[k:k + m]
        out["soc"].append((z0 * f, z1 * f[:, None]))
        k += m
    for Z in duals["psd"]:
        m = Z.shape[0]
        out["psd"].append(Z * (1 + y[k:k + m])[:, None, None])
        k += m
    le, ne = duals["exp"]
    m = len(le)
    out["exp"] = (le * (1 + y[k:k + m]), ne * (1 + y[k + m:k + 2 * m]))
    return out


def _kkt_residuals(sf, x, duals):
    """Primal/dual feasibility, complementarity and stationarity residuals."""
    grad = sf.grad_f0(x)
    st = grad.copy()
    primal = [0.0]
    dual = [0.0]
    comp = [0.0]
    lam = duals["affine"]
    if sf.G.shape[0]:
        sl = sf.h - sf.G @ x
        st += sf.G.T @ lam
        primal.append(float(np.max(-sl)))
        dual.append(float(np.max(-lam)))
        comp.append(float(np.max(np.abs(lam * sl))))
    for grp, (z0, z1) in zip(sf.socs, duals["soc"]):
        u = np.einsum("krn,n->kr", grp.A, x) + grp.b
        s = grp.c @ x + grp.d
        st -= z0 @ grp.c + np.einsum("krn,kr->n", grp.A, z1)
        primal.append(float(np.max(np.linalg.norm(u, axis=1) - s)))
        dual.append(float(np.max(np.linalg.norm(z1, axis=1) - z0)))
        comp.append(float(np.max(np.abs(z0 * s + np.einsum("kr,kr->k", z1, u)))))
    for grp, Z in zip(sf.psds, duals["psd"]):
        M = grp.M0 + np.einsum("kv,kvab->kab", x[grp.idx], grp.Mk)
        trz = np.einsum("kab,kvba->kv", Z, grp.Mk).real
        np.add.at(st, grp.idx, -trz)
        primal.append(float(np.max(-np.linalg.eigvalsh(M)[:, 0])))
        dual.append(float(np.max(-np.linalg.eigvalsh(Z)[:, 0])))
        comp.append(float(np.max(np.abs(np.einsum("kab,kba->k", Z, M).real))))
    le, ne = duals["exp"]
    if sf.ea.shape[0]:
        s = sf.es @ x + sf.es0
        t = sf.ea @ x + sf.ea0
        st += sf.ea.T @ le - sf.es.T @ (le / s) - sf.es.T @ ne
        primal.append(float(np.max(np.exp(np.minimum(t, 700.0)) - s)))
        dual.append(float(max(np.max(-le), np.max(-ne))))
        comp.append(float(max(np.max(np.abs(le * (np.log(s) - t))), np.max(np.abs(ne * s)))))
    stat = float(np.max(np.abs(st)) / (1.0 + np.max(np.abs(grad)))) if len(st) else 0.0
    rep = {"primal": max(primal), "dual": max(dual), "complementarity": max(comp),
           "stationarity": stat}
    rep["max"] = max(max(rep["primal"], 0.0), max(rep["dual"], 0.0),
                     rep["complementarity"], rep["stationarity"])
    return rep


def check_kkt(program, solution, tol=DEFAULT_TOL):
    """Recompute the KKT residuals of ``solution`` from scratch.

    The primal point is taken from ``solution.x`` (user variables); epigraph
    variables of norm terms are set to the norms they bound. Duals are the
    ones returned by the solver. ``violated`` lists constraint tags whose
    violation exceeds ``tol``.
    """
    sf = _compile(program)
    x = np.zeros(sf.n)
    x[:program.n] = solution.x
    for k, rows in enumerate(program.obj_norms):
        x[program.n + k] = math.sqrt(sum(r.value(x) ** 2 for r in rows))
    if solution.duals is None:
        duals = _zero_duals(sf)
    else:
        duals = solution.duals
    rep = _kkt_residuals(sf, x, duals)
    rep["violated"] = [tag for tag, _ in program.violations(solution.x, tol)]
    return rep


def _zero_duals(sf):
    return {"affine": np.zeros(sf.G.shape[0]),
            "soc": [(np.zeros(g.A.shape[0]), np.zeros(g.A.shape[:2])) for g in sf.socs],
            "psd": [np.zeros_like(g.M0) for g in sf.psds],
            "exp": (np.zeros(sf.ea.shape[0]), np.zeros(sf.ea.shape[0]))}


# ---------------------------------------------------------------------------
# plain-text dump (JSON document)

FORMAT_NAME = "conic-program"
FORMAT_VERSION = 1


def _aff_json(e):
    return {"const": e.const, "coef": {str(k): v for k, v in sorted(e.coef.items())}}


def _aff_load(d):
    return Affine({int(k): float(v) for k, v in d["coef"].items()}, float(d["const"]))


def _cmat_json(m):
    m = np.asarray(m, dtype=complex)
    return [[[float(v.real), float(v.imag)] for v in row] for row in m]


def _cmat_load(rows):
    return np.array([[complex(re, im) for re, im in row] for row in rows], dtype=complex)


def program_to_dict(prog):
    """Serializable description; see README for the schema."""
    block_psd = set()
    for b in prog.blocks:
        if b.psd:
            block_psd.add(f"psd:{b.name}")
    out = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "variables": [{"name": nm, "lb": lo, "ub": hi}
                      for nm, lo, hi in zip(prog.names, prog.lower, prog.upper)],
        "blocks": [{"name": b.name, "dim": b.dim, "start": int(b.indices[0]), "psd": b.psd}
                   for b in prog.blocks],
        "objective": {
            "linear": _aff_json(prog.obj_linear),
            "squares": [{"weight": w, "expr": _aff_json(e)} for w, e in prog.obj_squares],
            "norms": [[_aff_json(r) for r in rows] for rows in prog.obj_norms],
        },
        "constraints": [],
    }
    cons = out["constraints"]
    for e, tag in prog.affine:
        cons.append({"kind": "affine", "tag": tag, "expr": _aff_json(e)})
    for rows, rhs, tag in prog.soc:
        cons.append({"kind": "second-order", "tag": tag,
                     "rows": [_aff_json(r) for r in rows], "rhs": _aff_json(rhs)})
    for e, tag in prog.psd:
        if tag in block_psd:
            continue
        cons.append({"kind": "psd", "tag": tag, "dim": e.dim, "const": _cmat_json(e.const),
                     "terms": {str(k): _cmat_json(v) for k, v in sorted(e.terms.items())}})
    for t, s, tag in prog.exp:
        cons.append({"kind": "exp", "tag": tag, "t": _aff_json(t), "s": _aff_json(s)})
    return out


def program_from_dict(d):
    if d.get("format") != FORMAT_NAME:
        raise ValueError("not a conic-program dump")
    prog = ConicProgram()
    starts = {b["start"]: b for b in d["blocks"]}
    i = 0
    variables = d["variables"]
    while i < len(variables):
        if i in starts:
            b = starts[i]
            prog.hermitian(b["name"], b["dim"], psd=b["psd"])
            i += b["dim"] ** 2
            continue
        v = variables[i]
        prog.scalar(v["name"], v["lb"], v["ub"])
        i += 1
    obj = d["objective"]
    prog.obj_linear = _aff_load(obj["linear"])
    prog.obj_squares = [(float(s["weight"]), _aff_load(s["expr"])) for s in obj["squares"]]
    prog.obj_norms = [[_aff_load(r) for r in rows] for rows in obj["norms"]]
    for c in d["constraints"]:
        kind = c["kind"]
        if kind == "affine":
            prog.add_le(_aff_load(c["expr"]), 0.0, c["tag"])
        elif kind == "second-order":
            prog.add_soc([_aff_load(r) for r in c["rows"]], _aff_load(c["rhs"]), c["tag"])
        elif kind == "psd":
            prog.add_psd(HermitianExpr(c["dim"], _cmat_load(c["const"]),
                                       {int(k): _cmat_load(v) for k, v in c["terms"].items()}),
                         c["tag"])
        elif kind == "exp":
            prog.add_exp(_aff_load(c["t"]), _aff_load(c["s"]), c["tag"])
        else:
            raise ValueError(f"unknown constraint kind {kind!r}")
    return prog


def dump_program(prog, path):
    with open(path, "w") as fh:
        json.dump(program_to_dict(prog), fh, indent=1)


def load_program(path):
    with open(path) as fh:
        return program_from_dict(json.load(fh))
