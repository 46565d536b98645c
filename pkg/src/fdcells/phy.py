"""Physical-layer evaluation of a candidate schedule.

Beamformers are stored as an array ``U`` of shape (K_D, N, M_T, M_T) and UL
powers as ``p`` of shape (K_U, N), all in watts. Every function here works on
physical (unnormalized) channels and reports rates in bits/s/Hz.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

FEAS_TOL = 1e-6


def _quad(h, A):
    return float(np.real(np.conj(h) @ A @ h))


def sinr_dl(i, n, U, p, ch, topo):
    """SINR of DL user ``i`` on sub-carrier ``n``.

    Signal over noise plus inter/intra-cell DL leakage and UL-to-DL
    interference.
    """
    cells = topo.dl_cell
    sig = _quad(ch.h_dl[cells[i], i, n], U[i, n])
    interf = ch.sigma2_ue
    for k in range(len(cells)):
        if k != i:
            interf += _quad(ch.h_dl[cells[k], i, n], U[k, n])
    interf += float(np.sum(p[:, n] * np.abs(ch.g[:, i, n]) ** 2))
    return sig / interf


def ul_covariance(j, n, U, p, ch, topo, order=None):
    """Interference-plus-noise covariance seen when decoding UL user ``j``.

    Users of the same cell decoded earlier in ``order`` are cancelled; later
    ones remain. Users of other cells and all DL transmissions (self-
    interference for the own cell) are treated as noise.
    """
    b = topo.ul_cell[j]
    m_r = ch.h_ul.shape[-1]
    X = ch.sigma2_sbs * np.eye(m_r, dtype=complex)
    same = np.flatnonzero(topo.ul_cell == b)
    if order is None:
        order = same
    order = list(order)
    if sorted(order) != sorted(same.tolist()):
        raise ValueError("order must be a permutation of the serving cell's UL users")
    after = order[order.index(j) + 1:]
    for l in range(len(topo.ul_cell)):
        if l == j or (topo.ul_cell[l] == b and l not in after):
            continue
        h = ch.h_ul[b, l, n]
        X += p[l, n] * np.outer(h, h.conj())
    for k in range(len(topo.dl_cell)):
        H = ch.H_bs[b, topo.dl_cell[k], n]
        X += H @ U[k, n] @ H.conj().T
    return X


def sinr_ul_mmse_sic(j, n, U, p, ch, topo, order=None):
    """SINR of UL user ``j`` behind an MMSE-SIC receiver: p_j h^H X^-1 h."""
    X = ul_covariance(j, n, U, p, ch, topo, order)
    if np.linalg.cond(X) > 1e14:
        raise np.linalg.LinAlgError("ill-conditioned UL covariance")
    h = ch.h_ul[topo.ul_cell[j], j, n]
    return float(p[j, n] * np.real(np.conj(h) @ np.linalg.solve(X, h)))


def queue_deviation(Q, rates):
    """Remaining bits ``Q - sum(rates)``; negative means over-serving."""
    return np.asarray(Q, dtype=float) - np.sum(np.atleast_1d(rates), axis=-1)


def power_consumption(b, U, rates_ul, config, topo):
    """Total power drawn by SBS ``b``: transmit + circuit + UL decoding.

    ``rates_ul`` has shape (K_U, N) in bits/s/Hz; decoding power only counts
    when the configured setup charges it.
    """
    dl = np.flatnonzero(topo.dl_cell == b)
    ul = np.flatnonzero(topo.ul_cell == b)
    tx = float(sum(np.trace(U[i, n]).real for i in dl for n in range(U.shape[1])))
    dec = config.effective_alpha * float(np.sum(np.asarray(rates_ul)[ul]))
    return tx + config.circuit_power + dec


@dataclass
class RateReport:
    sinr_dl: np.ndarray
    sinr_ul: np.ndarray
    rate_dl: np.ndarray
    rate_ul: np.ndarray
    q_dev_dl: np.ndarray
    q_dev_ul: np.ndarray
    power_total: np.ndarray

    def rows(self):
        for i, n in np.ndindex(*self.sinr_dl.shape):
            yield ("DL", i, n, self.sinr_dl[i, n], self.rate_dl[i, n], self.q_dev_dl[i])
        for j, n in np.ndindex(*self.sinr_ul.shape):
            yield ("UL", j, n, self.sinr_ul[j, n], self.rate_ul[j, n], self.q_dev_ul[j])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["direction", "ue", "subcarrier", "sinr", "rate_bits", "queue_deviation"])
            for row in self.rows():
                w.writerow([row[0], row[1], row[2], f"{row[3]:.10g}", f"{row[4]:.10g}",
                            f"{row[5]:.10g}"])


def evaluate(U, p, instance, ch, order=None):
    """All SINRs, rates, queue deviations and per-SBS power of a schedule.

    ``order`` maps a cell index to its SIC decoding order (default ascending).
    """
    topo = instance.topology
    K_D, N = U.shape[:2]
    K_U = p.shape[0]
    order = order or instance.sic_order or {}
    s_dl = np.array([[sinr_dl(i, n, U, p, ch, topo) for n in range(N)] for i in range(K_D)])
    s_ul = np.array([[sinr_ul_mmse_sic(j, n, U, p, ch, topo, order.get(int(topo.ul_cell[j])))
                      for n in range(N)] for j in range(K_U)]).reshape(K_U, N)
    s_dl = s_dl.reshape(K_D, N)
    r_dl, r_ul = np.log2(1.0 + s_dl), np.log2(1.0 + s_ul)
    power = np.array([power_consumption(b, U, r_ul, instance.config, topo)
                      for b in range(instance.B)])
    return RateReport(s_dl, s_ul, r_dl, r_ul,
                      queue_deviation(instance.traffic.q_dl, r_dl),
                      queue_deviation(instance.traffic.q_ul, r_ul), power)


def queue_objective(q_dev_dl, q_dev_ul, topo, grouping="per_cell"):
    """Sum of l2 norms of the queue deviations.

    ``per_cell`` sums the DL and UL norms of every cell; ``network`` takes one
    DL and one UL norm over all users.
    """
    q_dev_dl = np.asarray(q_dev_dl, dtype=float)
    q_dev_ul = np.asarray(q_dev_ul, dtype=float)
    if grouping == "network":
        return float(np.linalg.norm(q_dev_dl) + np.linalg.norm(q_dev_ul))
    if grouping != "per_cell":
        raise ValueError(f"unknown grouping {grouping!r}")
    total = 0.0
    for b in range(topo.num_sbs):
        total += np.linalg.norm(q_dev_dl[topo.dl_cell == b])
        total += np.linalg.norm(q_dev_ul[topo.ul_cell == b])
    return float(total)


@dataclass
class FeasibilityReport:
    """Constraint slacks of the scheduling problem; negative slack means violation."""

    dl_power_slack: np.ndarray
    energy_slack: np.ndarray | None
    ul_power_slack: np.ndarray
    min_eig: np.ndarray
    min_power: float
    ranks: np.ndarray
    violations: list = field(default_factory=list)

    @property
    def feasible(self):
        return not self.violations


def validate_solution(U, p, instance, ch, tol=FEAS_TOL, order=None):
    """Check DL power, energy causality, UL power, PSD and non-negativity."""
    cfg, topo = instance.config, instance.topology
    B = instance.B
    tx = np.array([sum(np.trace(U[i, n]).real for i in np.flatnonzero(topo.dl_cell == b)
                       for n in range(U.shape[1])) for b in range(B)], dtype=float)
    dl_slack = cfg.sbs_max_power - tx
    energy = None
    if cfg.energy_constrained:
        rep = evaluate(U, p, instance, ch, order)
        energy = instance.p_avail - rep.power_total
    ul_slack = cfg.ue_max_power - p.sum(axis=1)
    herm = 0.5 * (U + np.conj(np.swapaxes(U, -1, -2)))
    eig = np.linalg.eigvalsh(herm)
    min_eig = eig[..., 0]
    top = np.maximum(eig[..., -1:], 1e-300)
    ranks = np.sum(eig > 1e-6 * top, axis=-1)
    min_p = float(p.min()) if p.size else 0.0

    viol = []
    for b in np.flatnonzero(dl_slack < -tol):
        viol.append(f"dl_power[{b}]")
    if energy is not None:
        for b in np.flatnonzero(energy < -tol):
            viol.append(f"energy[{b}]")
    for j in np.flatnonzero(ul_slack < -tol):
        viol.append(f"ul_power[{j}]")
    for i, n in zip(*np.nonzero(min_eig < -tol)):
        viol.append(f"psd[{i},{n}]")
    if min_p < -tol:
        viol.append("nonnegative_power")
    if np.max(np.abs(U - herm), initial=0.0) > tol:
        viol.append("hermitian")
    return FeasibilityReport(dl_slack, energy, ul_slack, min_eig, min_p, ranks, viol)
