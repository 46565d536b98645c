"""Convex inner approximation of the relaxed scheduling problem.

Around the current iterate the non-convex SINR constraints are replaced by
convex restrictions:

* DL: ``h^H U h >= F(z, beta, xi)`` with the AM-GM bound
  ``F = beta^2 / (2 xi) + xi z^2 / 2 >= z * beta`` and an affine
  interference-plus-noise bound ``beta``.
* UL: ``z <= f_hat(x, X)``, the first-order expansion of the jointly convex
  matrix-fractional function ``x^2 h^H X^-1 h`` (a global minorant), with
  ``p >= x^2``.
* rates: ``exp(t) <= 1 + z`` with t in nats.

Channels are divided by the receiver noise amplitude so every SINR has unit
noise; powers stay in watts and ``beta`` is in noise units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import phy
from .channel import ChannelSet
from .expr import Affine, HermitianExpr, asum, hermitian_to_coords
from .solver import ConicProgram

LN2 = math.log(2.0)
Z_FLOOR = 1e-9


def amgm_bound(z, beta, xi):
    """``beta^2 / (2 xi) + xi z^2 / 2``, an upper bound on ``z * beta``."""
    xi = np.asarray(xi, dtype=float)
    if np.any(xi <= 0):
        raise ValueError("xi must be positive")
    z = np.asarray(z, dtype=float)
    beta = np.asarray(beta, dtype=float)
    out = beta ** 2 / (2.0 * xi) + xi * z ** 2 / 2.0
    return float(out) if out.ndim == 0 else out


def tight_xi(z, beta, eps=Z_FLOOR):
    """The ``xi`` making the AM-GM bound tight: ``beta / max(z, eps)``."""
    return np.asarray(beta, dtype=float) / np.maximum(np.asarray(z, dtype=float), eps)


CONE_FLOOR = 1e-9


def _cone_scale(value):
    """Square-root scale for a rotated cone ``|u|^2 <= y w`` so that ``y`` and
    ``w`` are of equal size; unbalanced factors cancel catastrophically in the
    barrier near the boundary."""
    return math.sqrt(max(float(value), CONE_FLOOR))


def update_xi(iterate, eps=Z_FLOOR):
    """Refresh ``iterate.xi`` in place from its ``beta`` and ``z_dl``."""
    iterate.xi = np.maximum(tight_xi(iterate.z_dl, iterate.beta, eps), 1e-12)
    return iterate.xi


def _check_pd(X):
    X = np.asarray(X, dtype=complex)
    if np.max(np.abs(X - X.conj().T)) > 1e-9 * max(1.0, np.max(np.abs(X))):
        raise ValueError("matrix is not Hermitian")
    if np.linalg.eigvalsh(0.5 * (X + X.conj().T))[0] <= 0:
        raise ValueError("matrix is not positive definite")
    return X


def matrix_fractional(x, X, h):
    """``x^2 h^H X^-1 h`` for positive definite ``X``."""
    X = _check_pd(X)
    h = np.asarray(h, dtype=complex)
    return float(x) ** 2 * float(np.real(h.conj() @ np.linalg.solve(X, h)))


@dataclass
class LinearizedMF:
    """Affine minorant ``slope * x - <weight, X>`` of the matrix-fractional
    function (the constant term vanishes)."""

    slope: float
    weight: np.ndarray

    def value(self, x, X):
        return self.slope * float(x) - float(np.real(np.sum(self.weight * np.asarray(X).T)))

    def expr(self, x, X_expr):
        """Affine expression for variable ``x`` (Affine) and ``X`` (HermitianExpr)."""
        return x * self.slope - X_expr.inner(self.weight)


def linearize_matrix_fractional(x0, X0, h):
    """First-order expansion of ``x^2 h^H X^-1 h`` at ``(x0, X0)``."""
    X0 = _check_pd(X0)
    h = np.asarray(h, dtype=complex)
    v = np.linalg.solve(X0, h)
    a = float(np.real(h.conj() @ v))
    weight = float(x0) ** 2 * np.outer(v, v.conj())
    return LinearizedMF(2.0 * float(x0) * a, weight)


def normalized_channels(ch):
    """Channels scaled so both receiver classes see unit noise power."""
    su, ss = math.sqrt(ch.sigma2_ue), math.sqrt(ch.sigma2_sbs)
    return ChannelSet(ch.h_dl / su, ch.h_ul / ss, ch.g / su, ch.H_bs / ss, 1.0, 1.0)


@dataclass
class SpcaIterate:
    """Primal point of the successive approximation.

    ``U`` (K_D, N, M_T, M_T) and ``p`` (K_U, N) are in watts, ``x = sqrt(p)``
    bounds, ``beta`` is the DL interference-plus-noise bound in noise units,
    ``z_*`` are SINR lower bounds and ``t_*`` rate lower bounds in nats.
    """

    U: np.ndarray
    p: np.ndarray
    beta: np.ndarray
    z_dl: np.ndarray
    t_dl: np.ndarray
    xi: np.ndarray
    x: np.ndarray
    z_ul: np.ndarray
    t_ul: np.ndarray

    def copy(self):
        return SpcaIterate(*(np.array(getattr(self, f)) for f in self.__dataclass_fields__))


def dl_interference(i, n, U, p, nch, topo, cells=None):
    """Normalized interference-plus-noise at DL user ``i``; with ``cells``
    only transmissions from those cells are counted (noise always is)."""
    total = 1.0
    for k in range(len(topo.dl_cell)):
        if k != i and (cells is None or topo.dl_cell[k] in cells):
            h = nch.h_dl[topo.dl_cell[k], i, n]
            total += float(np.real(h.conj() @ U[k, n] @ h))
    for j in range(len(topo.ul_cell)):
        if cells is None or topo.ul_cell[j] in cells:
            total += float(p[j, n] * abs(nch.g[j, i, n]) ** 2)
    return total


def consistent_iterate(U, p, instance, ch):
    """Iterate whose auxiliaries are tight for the given ``U`` and ``p``."""
    topo = instance.topology
    nch = normalized_channels(ch)
    K_D, N = U.shape[:2]
    K_U = p.shape[0]
    order = instance.sic_order or {}
    z_dl = np.zeros((K_D, N))
    beta = np.ones((K_D, N))
    z_ul = np.zeros((K_U, N))
    for n in range(N):
        for i in range(K_D):
            beta[i, n] = dl_interference(i, n, U, p, nch, topo)
            h = nch.h_dl[topo.dl_cell[i], i, n]
            z_dl[i, n] = float(np.real(h.conj() @ U[i, n] @ h)) / beta[i, n]
        for j in range(K_U):
            z_ul[j, n] = phy.sinr_ul_mmse_sic(j, n, U, p, nch, topo,
                                              order.get(int(topo.ul_cell[j])))
    it = SpcaIterate(np.array(U, dtype=complex), np.array(p, dtype=float), beta, z_dl,
                     np.log1p(z_dl), np.ones((K_D, N)), np.sqrt(np.maximum(p, 0.0)),
                     z_ul, np.log1p(z_ul))
    update_xi(it)
    return it


def tighten_iterate(iterate, instance, ch):
    """Clip the SINR and rate bounds of ``iterate`` to what its ``U`` and ``p``
    actually achieve and set ``beta`` to the actual DL interference.

    Per-cell solves bound SINRs against local copies of the cross-cell
    interference; before those bounds seed the next surrogate they must hold
    for the physical interference. Lowering a rate bound keeps every
    constraint satisfied (decoding energy only shrinks).
    """
    act = consistent_iterate(iterate.U, iterate.p, instance, ch)
    it = iterate.copy()
    it.beta = act.beta
    it.z_dl = np.minimum(it.z_dl, act.z_dl)
    it.z_ul = np.minimum(it.z_ul, act.z_ul)
    it.t_dl = np.minimum(it.t_dl, np.log1p(np.maximum(it.z_dl, 0.0)))
    it.t_ul = np.minimum(it.t_ul, np.log1p(np.maximum(it.z_ul, 0.0)))
    it.x = np.sqrt(np.maximum(it.p, 0.0))
    update_xi(it)
    return it


def initial_iterate(instance, ch, max_halvings=60):
    """Scaled-identity beamformers and flat UL powers, halved until the
    energy budget holds in the energy-constrained setups."""
    cfg, topo = instance.config, instance.topology
    N, m = cfg.num_subcarriers, cfg.antennas_tx
    dl_on, ul_on = instance.dl_carriers, instance.ul_carriers
    U = np.zeros((instance.k_dl, N, m, m), dtype=complex)
    for i in range(instance.k_dl):
        size = int(np.sum(topo.dl_cell == topo.dl_cell[i]))
        U[i, dl_on] = cfg.sbs_max_power / (2.0 * dl_on.sum() * size) * np.eye(m)
    p = np.zeros((instance.k_ul, N))
    p[:, ul_on] = cfg.ue_max_power / (2.0 * ul_on.sum())
    if cfg.energy_constrained:
        if np.any(cfg.circuit_power >= instance.p_avail):
            raise ValueError("circuit power alone exhausts the available power")
        for _ in range(max_halvings):
            rep = phy.evaluate(U, p, instance, ch)
            if np.all(rep.power_total < instance.p_avail):
                break
            U, p = U / 2.0, p / 2.0
        else:
            raise ValueError("no energy-feasible initial point found")
    return consistent_iterate(U, p, instance, ch)


# ---------------------------------------------------------------------------
# coupling between cells

@dataclass(frozen=True)
class Coupling:
    """Interference one cell (``producer``) causes at one user of another cell.

    ``kind`` is ``psi`` (DL to DL user), ``phi`` (UL users to DL user),
    ``Psi`` (UL users to UL receiver, matrix) or ``Phi`` (DL to UL receiver,
    matrix). ``victim_cell`` serves ``user``.
    """

    kind: str
    producer: int
    user: int
    n: int
    victim_cell: int

    @property
    def is_matrix(self):
        return self.kind in ("Psi", "Phi")

    def label(self):
        return f"{self.kind}[{self.producer},{self.user},{self.n}]"


def coupling_keys(instance):
    """All cross-cell interference terms that need consensus, in a fixed order."""
    topo = instance.topology
    dl_on, ul_on = instance.dl_carriers, instance.ul_carriers
    out = []
    for b in range(instance.B):
        has_dl = np.any(topo.dl_cell == b)
        has_ul = np.any(topo.ul_cell == b)
        for n in range(instance.N):
            for i in range(instance.k_dl):
                c = int(topo.dl_cell[i])
                if c == b or not dl_on[n]:
                    continue
                if has_dl:
                    out.append(Coupling("psi", b, i, n, c))
                if has_ul and ul_on[n]:
                    out.append(Coupling("phi", b, i, n, c))
            for j in range(instance.k_ul):
                c = int(topo.ul_cell[j])
                if c == b or not ul_on[n]:
                    continue
                if has_ul:
                    out.append(Coupling("Psi", b, j, n, c))
                if has_dl and dl_on[n]:
                    out.append(Coupling("Phi", b, j, n, c))
    return out


def coupling_value(key, U, p, nch, topo):
    """Actual interference of ``key`` under ``(U, p)`` in noise units."""
    b, n = key.producer, key.n
    if key.kind == "psi":
        h = nch.h_dl[b, key.user, n]
        return sum(float(np.real(h.conj() @ U[k, n] @ h)) for k in np.flatnonzero(topo.dl_cell == b))
    if key.kind == "phi":
        return sum(float(p[l, n] * abs(nch.g[l, key.user, n]) ** 2)
                   for l in np.flatnonzero(topo.ul_cell == b))
    c = key.victim_cell
    m_r = nch.h_ul.shape[-1]
    out = np.zeros((m_r, m_r), dtype=complex)
    if key.kind == "Psi":
        for l in np.flatnonzero(topo.ul_cell == b):
            h = nch.h_ul[c, l, n]
            out += p[l, n] * np.outer(h, h.conj())
    else:
        H = nch.H_bs[c, b, n]
        for k in np.flatnonzero(topo.dl_cell == b):
            out += H @ U[k, n] @ H.conj().T
    return out


# ---------------------------------------------------------------------------
# surrogate assembly

@dataclass
class SurrogateProblem:
    """A convex program plus the map from model quantities to its variables."""

    program: ConicProgram
    cells: tuple
    U: dict = field(default_factory=dict)        # (i, n) -> HermitianBlock
    scalars: dict = field(default_factory=dict)  # (name, idx, n) -> Affine
    copies: dict = field(default_factory=dict)   # Coupling -> Affine | HermitianBlock
    queue_terms: list = field(default_factory=list)  # lists of Affine, one per norm

    def queue_objective(self, xv):
        return float(sum(math.sqrt(sum(e.value(xv) ** 2 for e in rows))
                         for rows in self.queue_terms))

    def start_point(self, iterate, copy_values=None):
        """Variable vector holding the iterate (and given copy values)."""
        x0 = np.zeros(self.program.n)
        for (i, n), blk in self.U.items():
            x0[blk.indices] = hermitian_to_coords(iterate.U[i, n])
        for (name, idx, n), var in self.scalars.items():
            x0[next(iter(var.coef))] = getattr(iterate, name)[idx, n]
        for key, var in self.copies.items():
            if copy_values is None or key not in copy_values:
                continue
            if key.is_matrix:
                x0[var.indices] = hermitian_to_coords(copy_values[key])
            else:
                x0[next(iter(var.coef))] = copy_values[key]
        return x0

    def read(self, xv, iterate):
        """Copy this program's variables from ``xv`` into ``iterate``."""
        for (i, n), blk in self.U.items():
            iterate.U[i, n] = blk.value(xv)
        for (name, idx, n), var in self.scalars.items():
            getattr(iterate, name)[idx, n] = var.value(xv)
        return iterate

    def copy_values(self, xv):
        return {key: var.value(xv) for key, var in self.copies.items()}


def build_surrogate(iterate, instance, ch, mode="centralized", grouping="per_cell"):
    """Convex restriction of the relaxed problem around ``iterate``.

    ``mode`` is ``"centralized"`` (all cells, interference coupled exactly) or
    a cell index ``b``: then only that cell's variables appear and every
    cross-cell interference term is a local copy variable (see
    :func:`coupling_keys`), constrained by its physical value when ``b``
    produces it and entering the SINR constraints when ``b`` suffers it.
    """
    cfg, topo = instance.config, instance.topology
    K_D, K_U, N, m_t = instance.k_dl, instance.k_ul, instance.N, cfg.antennas_tx
    if iterate.U.shape != (K_D, N, m_t, m_t) or iterate.p.shape != (K_U, N):
        raise ValueError("iterate dimensions do not match the instance")
    for name in ("beta", "z_dl", "t_dl", "xi"):
        if getattr(iterate, name).shape != (K_D, N):
            raise ValueError(f"iterate.{name} has shape {getattr(iterate, name).shape}, "
                             f"expected {(K_D, N)}")
    for name in ("x", "z_ul", "t_ul"):
        if getattr(iterate, name).shape != (K_U, N):
            raise ValueError(f"iterate.{name} has shape {getattr(iterate, name).shape}, "
                             f"expected {(K_U, N)}")
    if mode == "centralized":
        cells = tuple(range(instance.B))
        local = False
    else:
        b = int(mode)
        if not 0 <= b < instance.B:
            raise ValueError(f"no cell {b}")
        cells = (b,)
        local = True
        if grouping != "per_cell":
            raise ValueError("per-cell subproblems need per-cell queue grouping")
    nch = normalized_channels(ch)
    dl_on, ul_on = instance.dl_carriers, instance.ul_carriers
    alpha_nat = cfg.effective_alpha / LN2
    prog = ConicProgram()
    sp = SurrogateProblem(prog, cells)
    order = instance.sic_order or {}

    own_dl = [i for i in range(K_D) if topo.dl_cell[i] in cells]
    own_ul = [j for j in range(K_U) if topo.ul_cell[j] in cells]
    U_expr = {}
    S = sp.scalars

    for i in own_dl:
        for n in np.flatnonzero(dl_on):
            blk = prog.hermitian(f"U[{i},{n}]", m_t, psd=True)
            sp.U[(i, n)] = blk
            U_expr[(i, n)] = blk.expr()
            S[("beta", i, n)] = prog.scalar(f"beta[{i},{n}]")
            S[("z_dl", i, n)] = prog.scalar(f"z_dl[{i},{n}]", lb=0.0)
            S[("t_dl", i, n)] = prog.scalar(f"t_dl[{i},{n}]")
    for j in own_ul:
        for n in np.flatnonzero(ul_on):
            S[("p", j, n)] = prog.scalar(f"p[{j},{n}]", lb=0.0)
            S[("x", j, n)] = prog.scalar(f"x[{j},{n}]", lb=0.0)
            S[("z_ul", j, n)] = prog.scalar(f"z_ul[{j},{n}]", lb=0.0)
            S[("t_ul", j, n)] = prog.scalar(f"t_ul[{j},{n}]")

    incoming = {}
    if local:
        b = cells[0]
        for key in coupling_keys(instance):
            if key.producer != b and key.victim_cell != b:
                continue
            tag = key.label()
            # interference is non-negative, so both copies are kept in the cone
            if key.is_matrix:
                var = prog.hermitian(tag, cfg.antennas_rx, psd=True)
            else:
                var = prog.scalar(tag, lb=0.0)
            sp.copies[key] = var
            if key.victim_cell == b:
                incoming.setdefault((key.user, key.n, key.kind in ("psi", "phi")), []).append(
                    var.expr() if key.is_matrix else var)

    # DL SINR restriction, interference bound and rate
    for i in own_dl:
        for n in np.flatnonzero(dl_on):
            beta, z, t = S[("beta", i, n)], S[("z_dl", i, n)], S[("t_dl", i, n)]
            xi = float(iterate.xi[i, n])
            c = topo.dl_cell[i]
            s = U_expr[(i, n)].quad(nch.h_dl[c, i, n])
            # 2s = 4 (s/k)(k/2); k balances both factors at the expansion point
            k = _cone_scale(2.0 * iterate.beta[i, n] * iterate.z_dl[i, n])
            prog.add_soc([beta / math.sqrt(xi), z * math.sqrt(xi), s * (1.0 / k) - 0.5 * k],
                         s * (1.0 / k) + 0.5 * k, tag=f"dl_sinr[{i},{n}]")
            interf = [Affine(const=1.0)]
            for k in range(K_D):
                if k == i or (k, n) not in U_expr:
                    continue
                interf.append(U_expr[(k, n)].quad(nch.h_dl[topo.dl_cell[k], i, n]))
            if ul_on[n]:
                for j in own_ul:
                    interf.append(S[("p", j, n)] * float(abs(nch.g[j, i, n]) ** 2))
            interf += incoming.get((i, n, True), [])
            prog.add_ge(beta, asum(interf), tag=f"dl_interference[{i},{n}]")
            prog.add_exp(t, z + 1.0, tag=f"dl_rate[{i},{n}]")

    # UL SINR restriction via the matrix-fractional minorant
    m_r = cfg.antennas_rx
    for j in own_ul:
        c = int(topo.ul_cell[j])
        same = list(order.get(c, np.flatnonzero(topo.ul_cell == c)))
        later = set(same[same.index(j) + 1:])
        for n in np.flatnonzero(ul_on):
            p, x, z, t = S[("p", j, n)], S[("x", j, n)], S[("z_ul", j, n)], S[("t_ul", j, n)]
            X0 = phy.ul_covariance(j, n, iterate.U, iterate.p, nch, topo, same)
            x0 = float(iterate.x[j, n])
            lin = linearize_matrix_fractional(x0, X0, nch.h_ul[c, j, n])
            X = HermitianExpr.constant(np.eye(m_r))
            for l in own_ul:
                if l == j or (topo.ul_cell[l] == c and l not in later):
                    continue
                h = nch.h_ul[c, l, n]
                X = X + HermitianExpr.scaled(S[("p", l, n)], np.outer(h, h.conj()))
            if dl_on[n]:
                for k in own_dl:
                    X = X + U_expr[(k, n)].congruence(nch.H_bs[c, topo.dl_cell[k], n])
            for extra in incoming.get((j, n, False), []):
                X = X + extra
            prog.add_le(z, lin.expr(x, X), tag=f"ul_sinr[{j},{n}]")
            k = _cone_scale(iterate.p[j, n])
            prog.add_soc([x * 2.0, p * (1.0 / k) - k], p * (1.0 / k) + k,
                         tag=f"ul_sqrt_power[{j},{n}]")
            prog.add_exp(t, z + 1.0, tag=f"ul_rate[{j},{n}]")
        powers = [S[("p", j, n)] for n in np.flatnonzero(ul_on)]
        if powers:
            prog.add_le(asum(powers), cfg.ue_max_power, tag=f"ul_power[{j}]")

    # per-cell power budgets
    for c in cells:
        tr = asum(U_expr[(i, n)].trace() for (i, n) in U_expr if topo.dl_cell[i] == c)
        prog.add_le(tr, cfg.sbs_max_power, tag=f"dl_power[{c}]")
        if cfg.energy_constrained:
            dec = asum(S[("t_ul", j, n)] for j in own_ul if topo.ul_cell[j] == c
                       for n in np.flatnonzero(ul_on))
            prog.add_le(tr + dec * alpha_nat + cfg.circuit_power, float(instance.p_avail[c]),
                        tag=f"energy[{c}]")

    # outgoing copies bound the interference this cell causes
    if local:
        b = cells[0]
        for key, var in sp.copies.items():
            if key.producer != b:
                continue
            n = key.n
            if key.kind == "psi":
                h = nch.h_dl[b, key.user, n]
                prog.add_ge(var, asum(U_expr[(k, n)].quad(h) for k in own_dl),
                            tag=f"copy_{key.label()}")
            elif key.kind == "phi":
                prog.add_ge(var, asum(S[("p", l, n)] * float(abs(nch.g[l, key.user, n]) ** 2)
                                      for l in own_ul), tag=f"copy_{key.label()}")
            elif key.kind == "Psi":
                M = var.expr()
                for l in own_ul:
                    h = nch.h_ul[key.victim_cell, l, n]
                    M = M - HermitianExpr.scaled(S[("p", l, n)], np.outer(h, h.conj()))
                prog.add_psd(M, tag=f"copy_{key.label()}")
            else:
                M = var.expr()
                H = nch.H_bs[key.victim_cell, b, n]
                for k in own_dl:
                    M = M - U_expr[(k, n)].congruence(H)
                prog.add_psd(M, tag=f"copy_{key.label()}")

    # queue deviations in bits
    dl_on_idx = np.flatnonzero(dl_on)
    ul_on_idx = np.flatnonzero(ul_on)

    def qdev(Q, name, idx, carriers):
        return Affine(const=float(Q)) - asum(S[(name, idx, n)] for n in carriers) / LN2

    q_dl = {i: qdev(instance.traffic.q_dl[i], "t_dl", i, dl_on_idx) for i in own_dl}
    q_ul = {j: qdev(instance.traffic.q_ul[j], "t_ul", j, ul_on_idx) for j in own_ul}
    if grouping == "network":
        groups = [list(q_dl.values()), list(q_ul.values())]
    elif grouping == "per_cell":
        groups = []
        for c in cells:
            groups.append([q_dl[i] for i in own_dl if topo.dl_cell[i] == c])
            groups.append([q_ul[j] for j in own_ul if topo.ul_cell[j] == c])
    else:
        raise ValueError(f"unknown grouping {grouping!r}")
    for rows in groups:
        if rows:
            prog.add_norm(rows)
            sp.queue_terms.append(rows)
    return sp


def surrogate_objective(iterate, instance, cells=None, grouping="per_cell"):
    """Queue objective evaluated on the iterate's rate variables."""
    topo = instance.topology
    dl_on, ul_on = instance.dl_carriers, instance.ul_carriers
    q_dl = instance.traffic.q_dl - iterate.t_dl[:, dl_on].sum(axis=1) / LN2
    q_ul = instance.traffic.q_ul - iterate.t_ul[:, ul_on].sum(axis=1) / LN2
    if cells is None:
        return phy.queue_objective(q_dl, q_ul, topo, grouping)
    return float(sum(np.linalg.norm(q_dl[topo.dl_cell == c]) + np.linalg.norm(q_ul[topo.ul_cell == c])
                     for c in cells))
