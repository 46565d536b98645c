"""Consensus ADMM over the per-cell subproblems.

Every cross-cell interference term (a :class:`~fdcells.convexify.Coupling`)
has two local copies, one held by the producing cell and one by the victim's
serving cell, tied by a global consensus variable. Each round solves all cell
subproblems independently, exchanges the copies, averages them into the
globals and takes a dual ascent step on one multiplier per copy.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import convexify as cx
from .expr import Affine, frobenius_weights, hermitian_to_coords
from .solver import solve

TOL = 1e-4
MAX_ITER = 300
BYTES_PER_REAL = 8
WARM_MU0 = 1e-3  # barrier weight when restarting from the previous round


class AdmmError(RuntimeError):
    pass


class StaleStateError(AdmmError):
    pass


@dataclass
class PenaltyParams:
    """Penalty weights per coupling kind; ``adaptive`` enables residual
    balancing (all weights doubled or halved when one residual dominates the
    other by more than ``balance_ratio``)."""

    psi: float = 1.0
    phi: float = 1.0
    Psi: float = 1.0
    Phi: float = 1.0
    adaptive: bool = False
    balance_ratio: float = 10.0

    def __post_init__(self):
        if min(self.psi, self.phi, self.Psi, self.Phi) <= 0:
            raise ValueError("penalty parameters must be positive")

    def of(self, kind):
        return getattr(self, kind)

    def scaled(self, factor):
        return PenaltyParams(self.psi * factor, self.phi * factor, self.Psi * factor,
                             self.Phi * factor, self.adaptive, self.balance_ratio)

    @property
    def max(self):
        return max(self.psi, self.phi, self.Psi, self.Phi)


@dataclass
class LocalState:
    """Result of one cell's subproblem in one round."""

    cell: int
    round: int
    copies: dict            # Coupling -> float | (M, M) complex
    x: np.ndarray           # full solution vector (warm start for the next round)
    queue_objective: float
    problem: cx.SurrogateProblem = None


@dataclass
class GlobalState:
    values: dict            # Coupling -> float | matrix

    def copy(self):
        return GlobalState({k: np.array(v) if np.ndim(v) else float(v)
                            for k, v in self.values.items()})


@dataclass
class Multipliers:
    values: dict            # (Coupling, cell) -> float | matrix, in scaled units

    def copy(self):
        return Multipliers({k: np.array(v) if np.ndim(v) else float(v)
                            for k, v in self.values.items()})


def zero_multipliers(keys, m_r):
    out = {}
    for key in keys:
        zero = np.zeros((m_r, m_r), dtype=complex) if key.is_matrix else 0.0
        out[(key, key.producer)] = zero
        out[(key, key.victim_cell)] = np.array(zero) if key.is_matrix else 0.0
    return Multipliers(out)


def initial_globals(iterate, instance, ch, keys=None):
    """Globals set to the actual interference caused at ``iterate``."""
    nch = cx.normalized_channels(ch)
    keys = cx.coupling_keys(instance) if keys is None else keys
    return GlobalState({k: cx.coupling_value(k, iterate.U, iterate.p, nch, instance.topology)
                        for k in keys})


def coupling_scales(iterate, instance, ch, keys=None):
    """Natural size of every coupling: the victim's interference-plus-noise
    level at ``iterate`` (``beta`` for DL users, ``tr(X) / M_R`` for UL
    receivers), in noise units and never below 1.

    Consensus deviations are measured relative to these, which keeps the
    penalty weights meaningful when interference spans many decades.
    """
    keys = cx.coupling_keys(instance) if keys is None else keys
    nch = cx.normalized_channels(ch)
    topo = instance.topology
    order = instance.sic_order or {}
    cache = {}
    out = {}
    for key in keys:
        idx = (key.kind in ("psi", "phi"), key.user, key.n)
        if idx not in cache:
            if idx[0]:
                val = cx.dl_interference(key.user, key.n, iterate.U, iterate.p, nch, topo)
            else:
                X = cx.phy.ul_covariance(key.user, key.n, iterate.U, iterate.p, nch, topo,
                                         order.get(key.victim_cell))
                val = float(np.trace(X).real) / X.shape[0]
            cache[idx] = max(1.0, val)
        out[key] = cache[idx]
    return out


def build_local_subproblem(b, iterate, globals_, mult, rho, instance, ch, scales=None):
    """Cell ``b``'s surrogate with the augmented-Lagrangian consensus terms
    ``lambda * (c - g) / s + rho / 2 * |c - g|^2 / s^2`` for each of its copies,
    ``s`` being the coupling's scale (1 when ``scales`` is None).

    Multipliers live in scaled units, so a change of scale between rounds
    moves the optimal offset ``c - g`` in proportion to ``s`` only."""
    sp = cx.build_surrogate(iterate, instance, ch, mode=b)
    prog = sp.program
    for key, var in sp.copies.items():
        if key not in globals_.values or (key, b) not in mult.values:
            raise AdmmError(f"missing consensus state for {key.label()}")
        g = globals_.values[key]
        s = 1.0 if scales is None else scales[key]
        lam = mult.values[(key, b)] / s
        r = rho.of(key.kind) / s ** 2
        if key.is_matrix:
            lin = var.expr().inner(lam)
            prog.add_objective(lin - float(np.real(np.sum(lam * np.asarray(g).T))))
            w = frobenius_weights(var.dim)
            for k, gk in enumerate(hermitian_to_coords(g)):
                prog.add_square(var.coord(k) - gk, 0.5 * r * w[k])
        else:
            prog.add_objective((var - g) * float(lam))
            prog.add_square(var - g, 0.5 * r)
    return sp


@dataclass
class Message:
    key: cx.Coupling
    sender: int
    receiver: int
    payload: tuple          # (producer copy, victim copy)
    nbytes: int
    latency: float = 0.0


@dataclass
class MessageLog:
    round: int
    messages: list = field(default_factory=list)

    @property
    def count(self):
        return len(self.messages)

    @property
    def nbytes(self):
        return sum(m.nbytes for m in self.messages)

    @property
    def latency(self):
        return max((m.latency for m in self.messages), default=0.0)


def exchange(locals_, keys, round_, latency=None):
    """Synchronous exchange of both copies of every coupling between the
    producing and the victim cell. ``latency`` (message -> seconds) only
    affects the log."""
    by_cell = {s.cell: s for s in locals_}
    log = MessageLog(round_)
    for key in keys:
        pair = []
        for cell in (key.producer, key.victim_cell):
            st = by_cell.get(cell)
            if st is None or st.round != round_ or key not in st.copies:
                raise StaleStateError(f"cell {cell} has no round-{round_} copy of {key.label()}")
            pair.append(st.copies[key])
        size = (np.size(pair[0]) * 2 if key.is_matrix else 1) * 2 * BYTES_PER_REAL
        msg = Message(key, key.producer, key.victim_cell, tuple(pair), int(size))
        if latency is not None:
            msg.latency = float(latency(msg))
        log.messages.append(msg)
    return log


def update_globals(log):
    """Average of the two exchanged copies of every coupling."""
    return GlobalState({m.key: 0.5 * (np.asarray(m.payload[0]) + np.asarray(m.payload[1]))
                        if m.key.is_matrix else 0.5 * (float(m.payload[0]) + float(m.payload[1]))
                        for m in log.messages})


def update_multipliers(locals_, globals_, mult, rho, scales=None):
    """Dual ascent: every (scaled) multiplier moves by ``rho / s`` times its
    copy's deviation from the new global (conjugate transpose for matrices)."""
    new = mult.copy()
    for st in locals_:
        for key, c in st.copies.items():
            g = globals_.values[key]
            r = rho.of(key.kind) / (1.0 if scales is None else scales[key])
            if key.is_matrix:
                new.values[(key, st.cell)] = mult.values[(key, st.cell)] + r * (
                    np.asarray(c) - np.asarray(g)).conj().T
            else:
                new.values[(key, st.cell)] = mult.values[(key, st.cell)] + r * (float(c) - float(g))
    return new


def _max_abs(v):
    return float(np.max(np.abs(v))) if np.ndim(v) else abs(float(v))


def primal_residual(locals_, globals_, scales=None):
    """Largest copy-vs-global deviation (relative to the coupling scales)."""
    return max((_max_abs(np.asarray(c) - np.asarray(globals_.values[k]))
                / (1.0 if scales is None else scales[k])
                for st in locals_ for k, c in st.copies.items()), default=0.0)


def dual_residual(old, new, rho, scales=None):
    """Largest penalty-weighted change of a global (relative to the scales)."""
    return max((rho.of(k.kind) * _max_abs(np.asarray(new.values[k]) - np.asarray(v))
                / (1.0 if scales is None else scales[k])
                for k, v in old.values.items()), default=0.0)


@dataclass
class AdmmTraceRow:
    iteration: int
    objective: float
    primal: float
    dual: float
    messages: int
    nbytes: int
    rho: float
    seconds: float


@dataclass
class AdmmResult:
    iterate: cx.SpcaIterate
    trace: list
    globals: GlobalState
    multipliers: Multipliers
    converged: bool
    objective: float
    rho: PenaltyParams
    x_local: dict           # cell -> last local solution vector

    @property
    def iterations(self):
        return len(self.trace)


def solve_local(b, iterate, globals_, mult, rho, instance, ch, round_, x0=None, tol=1e-7,
                scales=None):
    sp = build_local_subproblem(b, iterate, globals_, mult, rho, instance, ch, scales)
    sol = None
    if x0 is not None:
        sol = solve(sp.program, tol=tol, x0=x0, mu0=WARM_MU0)
    if sol is None or not sol.ok:
        # a warm start hugging the boundary can stall; restart from the iterate
        # with every copy at the interference the iterate actually causes,
        # which satisfies all constraints of the subproblem
        nch = cx.normalized_channels(ch)
        actual = {k: cx.coupling_value(k, iterate.U, iterate.p, nch, instance.topology)
                  for k in sp.copies}
        sol = solve(sp.program, tol=tol, x0=sp.start_point(iterate, actual))
    if not sol.ok:
        bad = sp.program.violations(sol.x, 1e-6)
        where = ", ".join(tag for tag, _ in bad[:5]) or sol.message
        raise AdmmError(f"cell {b} subproblem {sol.status.value}: {where}")
    return LocalState(b, round_, sp.copy_values(sol.x), sol.x, sp.queue_objective(sol.x), sp)


def _relaxed(state, globals_, a):
    copies = {k: a * np.asarray(c) + (1.0 - a) * np.asarray(globals_.values[k]) if k.is_matrix
              else a * float(c) + (1.0 - a) * float(globals_.values[k])
              for k, c in state.copies.items()}
    return LocalState(state.cell, state.round, copies, state.x, state.queue_objective,
                      state.problem)


def admm_loop(iterate, instance, ch, rho=None, max_iter=MAX_ITER, tol=TOL, globals_=None,
              multipliers=None, latency=None, cell_order=None, solver_tol=1e-7,
              scaled=True, relaxation=1.0):
    """Alternate local solves, exchange, averaging and dual updates until the
    primal and dual residuals are both below ``tol`` or ``max_iter`` rounds.

    Returns an :class:`AdmmResult` whose iterate holds every cell's local
    solution. ``globals_``/``multipliers`` warm-start the consensus state.
    With ``scaled`` the residuals and penalties are measured relative to
    :func:`coupling_scales`, re-evaluated after every round at the current
    local solutions; otherwise in raw noise units.
    """
    rho = PenaltyParams() if rho is None else rho
    keys = cx.coupling_keys(instance)
    B = instance.B
    if globals_ is None or set(globals_.values) != set(keys):
        globals_ = initial_globals(iterate, instance, ch, keys)
    if multipliers is None or len(multipliers.values) != 2 * len(keys):
        multipliers = zero_multipliers(keys, instance.config.antennas_rx)
    scales = coupling_scales(iterate, instance, ch, keys) if scaled else None
    order = list(range(B)) if cell_order is None else list(cell_order)
    if sorted(order) != list(range(B)):
        raise ValueError("cell_order must be a permutation of the cells")
    out = iterate.copy()
    trace = []
    x_prev = {}
    converged = False
    locals_ = []
    for v in range(1, max_iter + 1):
        t0 = time.perf_counter()
        locals_ = []
        for b in order:
            locals_.append(solve_local(b, iterate, globals_, multipliers, rho, instance, ch, v,
                                       x_prev.get(b), solver_tol, scales))
        locals_.sort(key=lambda s: s.cell)
        x_prev = {s.cell: s.x for s in locals_}
        sent = locals_ if relaxation == 1.0 else [_relaxed(s, globals_, relaxation) for s in locals_]
        log = exchange(sent, keys, v, latency)
        new_globals = update_globals(log)
        multipliers = update_multipliers(sent, new_globals, multipliers, rho, scales)
        r_p = primal_residual(locals_, new_globals, scales)
        r_d = dual_residual(globals_, new_globals, rho, scales)
        globals_ = new_globals
        obj = sum(s.queue_objective for s in locals_)
        trace.append(AdmmTraceRow(v, obj, r_p, r_d, log.count, log.nbytes, rho.max,
                                  time.perf_counter() - t0))
        if r_p < tol and r_d < tol:
            converged = True
            break
        if scaled:
            # track the victims' current interference levels
            current = iterate.copy()
            for s in locals_:
                s.problem.read(s.x, current)
            scales = coupling_scales(current, instance, ch, keys)
        if rho.adaptive:
            if r_p > rho.balance_ratio * r_d:
                rho = rho.scaled(2.0)
            elif r_d > rho.balance_ratio * r_p:
                rho = rho.scaled(0.5)
    for s in locals_:
        s.problem.read(s.x, out)
    return AdmmResult(out, trace, globals_, multipliers, converged,
                      sum(s.queue_objective for s in locals_), rho, x_prev)


def write_trace(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective", "primal_residual", "dual_residual", "messages",
                    "bytes", "rho", "seconds"])
        for r in rows:
            w.writerow([r.iteration, f"{r.objective:.10g}", f"{r.primal:.6g}", f"{r.dual:.6g}",
                        r.messages, r.nbytes, f"{r.rho:g}", f"{r.seconds:.4f}"])
