"""End-to-end scheduling runs and experiment sweeps.

One run alternates convex restrictions (solved centrally or by consensus
ADMM) until the queue objective settles, then turns the covariance
beamformers into vectors by Gaussian randomization. Every reported metric
is recomputed from the final beamformers and powers by :mod:`fdcells.phy`.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.optimize

from . import admm as admm_mod
from . import convexify as cx
from . import phy
from .channel import draw_channels
from .scenario import build_instance, desk_config, harvest_for_ratio, rng_streams, tomllib
from .solver import solve

log = logging.getLogger(__name__)

MODES = ("centralized", "admm")


class RunError(RuntimeError):
    pass


@dataclass
class AlgorithmOptions:
    mode: str = "centralized"
    grouping: str = "per_cell"
    max_spca: int = 50            # outer iteration cap
    spca_tol: float = 1e-4        # relative objective change that ends the outer loop
    admm_max_iter: int = admm_mod.MAX_ITER
    admm_tol: float = admm_mod.TOL
    rho: float = 1.0
    adaptive_rho: bool = False
    trials: int = 200
    solver_tol: float = 1e-7

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.max_spca < 1 or self.trials < 1:
            raise ValueError("iteration and trial counts must be positive")

    def penalty(self):
        r = float(self.rho)
        return admm_mod.PenaltyParams(r, r, r, r, adaptive=self.adaptive_rho)


@dataclass
class SpcaTraceRow:
    iteration: int
    objective: float
    admm_iterations: int
    seconds: float


@dataclass
class MetricsLog:
    run_id: str
    mode: str
    setup: str
    duplex: str
    seed: int
    objective: float = float("nan")
    relaxed_objective: float = float("nan")
    extraction_gap: float = float("nan")
    residual_backlog: float = float("nan")
    residual_dl: list = field(default_factory=list)
    residual_ul: list = field(default_factory=list)
    sum_rate_dl: float = float("nan")
    sum_rate_ul: float = float("nan")
    power_tx: list = field(default_factory=list)
    power_circuit: list = field(default_factory=list)
    power_decoding: list = field(default_factory=list)
    power_available: list = field(default_factory=list)
    spca_trace: list = field(default_factory=list)
    admm_traces: list = field(default_factory=list)
    spca_iterations: int = 0
    feasible: bool = False
    violations: list = field(default_factory=list)
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)
    error: str = ""

    def summary_row(self):
        row = {k: getattr(self, k) for k in (
            "run_id", "mode", "setup", "duplex", "seed", "objective", "relaxed_objective",
            "extraction_gap", "residual_backlog", "sum_rate_dl", "sum_rate_ul",
            "spca_iterations", "feasible", "seconds")}
        row.update(self.extra)
        row["admm_iterations"] = sum(len(t) for t in self.admm_traces)
        row["max_power_excess"] = (max(np.array(self.power_tx) + np.array(self.power_circuit)
                                       + np.array(self.power_decoding)
                                       - np.array(self.power_available))
                                   if self.power_tx else float("nan"))
        row["violations"] = ";".join(self.violations)
        row["error"] = self.error
        return row


@dataclass
class ScheduleResult:
    u: np.ndarray            # (K_D, N, M_T) beamforming vectors
    U: np.ndarray            # their outer products
    p: np.ndarray
    relaxed: cx.SpcaIterate
    report: phy.RateReport
    feasibility: phy.FeasibilityReport
    metrics: MetricsLog


# ---------------------------------------------------------------------------
# rank-one extraction

def principal_component(U, ratio_tol=1e-8):
    """``(u, is_rank_one)`` with ``u u^H`` the best rank-one part of ``U``."""
    w, V = np.linalg.eigh(0.5 * (U + U.conj().T))
    top = w[-1]
    if top <= 0:
        return np.zeros(U.shape[0], dtype=complex), True
    second = w[-2] if len(w) > 1 else 0.0
    return math.sqrt(top) * V[:, -1], bool(second / top < ratio_tol)


def _user_sinrs(kind, idx, U, p, ch, instance, carriers):
    topo = instance.topology
    if kind == "dl":
        return np.array([phy.sinr_dl(idx, n, U, p, ch, topo) for n in carriers])
    order = (instance.sic_order or {}).get(int(topo.ul_cell[idx]))
    return np.array([phy.sinr_ul_mmse_sic(idx, n, U, p, ch, topo, order) for n in carriers])


def _bisect(fn, hi=1.0, steps=30):
    """Largest s in [0, hi] with fn(s) true, assuming monotonicity (fn(0) true)."""
    if fn(hi):
        return hi
    lo = 0.0
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if fn(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _scale_for_rate(gamma, target):
    """Largest s in [0, 1] with sum(log2(1 + s * gamma)) <= target."""
    if np.sum(np.log2(1.0 + gamma)) <= target:
        return 1.0
    return scipy.optimize.brentq(lambda s: np.sum(np.log2(1.0 + s * gamma)) - target,
                                 0.0, 1.0, xtol=1e-15, rtol=1e-14)


def back_off(U, p, instance, ch, targets_dl, targets_ul, tol=1e-9, sweeps=200):
    """Scale each user's transmit power down until its total rate (bits)
    does not exceed its target. Power only ever decreases.

    A user's own SINR is linear in its own power, so every step is a scalar
    root; the sweep repeats until no user is above target by more than ``tol``.
    """
    U, p = U.copy(), p.copy()
    carriers = {"dl": np.flatnonzero(instance.dl_carriers),
                "ul": np.flatnonzero(instance.ul_carriers)}
    for _ in range(sweeps):
        worst = 0.0
        for kind, targets in (("dl", targets_dl), ("ul", targets_ul)):
            for idx, target in enumerate(targets):
                gamma = _user_sinrs(kind, idx, U, p, ch, instance, carriers[kind])
                excess = float(np.sum(np.log2(1.0 + gamma))) - target
                if excess <= tol:
                    continue
                worst = max(worst, excess)
                s = _scale_for_rate(gamma, target)
                if kind == "dl":
                    U[idx] *= s
                else:
                    p[idx] *= s
        if worst <= tol:
            break
    return U, p


def enforce_budgets(U, p, instance, ch, tol=1e-9, sweeps=20):
    """Per-cell common scale factors (at most 1) on DL beamformers and the
    cell's UL powers so every SBS meets its energy budget."""
    cfg, topo = instance.config, instance.topology
    if not cfg.energy_constrained:
        return U, p
    U, p = U.copy(), p.copy()
    budget = instance.p_avail - tol

    def power(b, U_, p_):
        rep = phy.evaluate(U_, p_, instance, ch)
        return rep.power_total[b]

    for _ in range(sweeps):
        over = [b for b in range(instance.B) if power(b, U, p) > budget[b]]
        if not over:
            break
        for b in over:
            dl = topo.dl_cell == b
            ul = topo.ul_cell == b
            U0, p0 = U.copy(), p.copy()

            def ok(s):
                U1, p1 = U0.copy(), p0.copy()
                U1[dl] *= s
                p1[ul] *= s
                return power(b, U1, p1) <= budget[b]

            s = _bisect(ok)
            U[dl] = U0[dl] * s
            p[ul] = p0[ul] * s
    return U, p


def _finalize(U, p, instance, ch, targets_dl, targets_ul, grouping, rounds=10):
    # both steps only lower power; alternate until the budgets need no scaling
    for _ in range(rounds):
        U, p = back_off(U, p, instance, ch, targets_dl, targets_ul)
        U2, p2 = enforce_budgets(U, p, instance, ch)
        done = np.array_equal(U2, U) and np.array_equal(p2, p)
        U, p = U2, p2
        if done:
            break
    rep = phy.evaluate(U, p, instance, ch)
    obj = phy.queue_objective(rep.q_dev_dl, rep.q_dev_ul, instance.topology, grouping)
    return U, p, rep, obj


def rate_targets(iterate, instance):
    """Per-user rate caps (bits) used by the back-off: the buffer length, and
    for UL users whose decoding costs energy the scheduled rate."""
    dl_on, ul_on = instance.dl_carriers, instance.ul_carriers
    t_dl = np.asarray(instance.traffic.q_dl, dtype=float).copy()
    t_ul = np.asarray(instance.traffic.q_ul, dtype=float).copy()
    if instance.config.effective_alpha > 0:
        sched = iterate.t_ul[:, ul_on].sum(axis=1) / cx.LN2
        t_ul = np.minimum(t_ul, np.maximum(sched, 0.0))
    return t_dl, t_ul


def extract_rank_one(iterate, instance, ch, trials=200, rng=None, grouping="per_cell"):
    """Beamforming vectors from the relaxed covariances.

    Each candidate set is scaled down per user (no over-service, no unpaid
    decoding energy) and per cell (energy budget) and scored with the exact
    queue objective; the best candidate wins. Candidate 0 is the principal
    component; when every covariance is already rank one it is exact and the
    randomization is skipped.

    Returns ``(u, U, p, report, objective, relaxed_objective)`` where the last
    value scores the relaxed covariances processed the same way.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    if rng is None:
        rng = rng_streams(instance.config.seed)[2]
    U_rel, p_rel = iterate.U, iterate.p
    K_D, N, m = U_rel.shape[:3]
    targets_dl, targets_ul = rate_targets(iterate, instance)

    u0 = np.zeros((K_D, N, m), dtype=complex)
    all_rank_one = True
    for i in range(K_D):
        for n in range(N):
            u0[i, n], r1 = principal_component(U_rel[i, n])
            all_rank_one &= r1

    def outer(u):
        return u[..., :, None] * u[..., None, :].conj()

    _, _, rep_rel, obj_rel = _finalize(U_rel, p_rel, instance, ch, targets_dl, targets_ul, grouping)
    candidates = [u0]
    if not all_rank_one:
        roots = np.zeros_like(U_rel)
        for i in range(K_D):
            for n in range(N):
                w, V = np.linalg.eigh(0.5 * (U_rel[i, n] + U_rel[i, n].conj().T))
                roots[i, n] = V @ np.diag(np.sqrt(np.maximum(w, 0.0))) @ V.conj().T
        power = np.real(np.trace(U_rel, axis1=-2, axis2=-1))
        for _ in range(trials - 1):
            xi = (rng.standard_normal((K_D, N, m)) + 1j * rng.standard_normal((K_D, N, m))) / math.sqrt(2)
            u = np.einsum("knab,knb->kna", roots, xi)
            norm2 = np.sum(np.abs(u) ** 2, axis=-1)
            scale = np.sqrt(np.where(norm2 > 0, power / np.maximum(norm2, 1e-300), 0.0))
            candidates.append(u * scale[..., None])

    best = None
    for u in candidates:
        U_c, p_c, rep, obj = _finalize(outer(u), p_rel, instance, ch, targets_dl, targets_ul, grouping)
        if best is None or obj < best[4]:
            # recover vectors consistent with the scaled covariances
            scale = np.sqrt(np.real(np.trace(U_c, axis1=-2, axis2=-1))
                            / np.maximum(np.sum(np.abs(u) ** 2, axis=-1), 1e-300))
            best = (u * scale[..., None], U_c, p_c, rep, obj)
    u_b, U_b, p_b, rep_b, obj_b = best
    return u_b, outer(u_b), p_b, rep_b, obj_b, obj_rel


# ---------------------------------------------------------------------------
# single run

def _zero_result(instance, ch, metrics):
    cfg = instance.config
    K_D, K_U, N = instance.k_dl, instance.k_ul, instance.N
    U = np.zeros((K_D, N, cfg.antennas_tx, cfg.antennas_tx), dtype=complex)
    p = np.zeros((K_U, N))
    it = cx.consistent_iterate(U, p, instance, ch)
    metrics.spca_trace.append(asdict(SpcaTraceRow(1, 0.0, 0, 0.0)))
    metrics.spca_iterations = 1
    return it, np.zeros((K_D, N, cfg.antennas_tx), dtype=complex), U, p


def run_algorithm1(instance, ch, options=None, run_id="run", trace_dir=None):
    """Successive convex approximation with a centralized or ADMM inner solve,
    then rank-one extraction. Returns an :class:`ScheduleResult`."""
    opts = options or AlgorithmOptions()
    cfg = instance.config
    metrics = MetricsLog(run_id, opts.mode, cfg.setup, cfg.duplex, cfg.seed)
    t_start = time.perf_counter()
    q_dl, q_ul = instance.traffic.q_dl, instance.traffic.q_ul

    if not np.any(q_dl > 0) and not np.any(q_ul > 0):
        it, u, U, p = _zero_result(instance, ch, metrics)
        rep = phy.evaluate(U, p, instance, ch)
        obj_rel = obj = 0.0
    else:
        it = cx.initial_iterate(instance, ch)
        prev = None
        glob = mult = None
        for r in range(1, opts.max_spca + 1):
            t0 = time.perf_counter()
            n_admm = 0
            if opts.mode == "centralized":
                sp = cx.build_surrogate(it, instance, ch, grouping=opts.grouping)
                sol = solve(sp.program, tol=opts.solver_tol, x0=sp.start_point(it))
                if not sol.ok:
                    raise RunError(f"{run_id}: outer iteration {r}: solver {sol.status.value} "
                                   f"({sol.message})")
                sp.read(sol.x, it)
                obj = float(sol.objective)
            else:
                if opts.grouping != "per_cell":
                    raise RunError("ADMM needs per-cell queue grouping")
                try:
                    res = admm_mod.admm_loop(it, instance, ch, opts.penalty(), opts.admm_max_iter,
                                             opts.admm_tol, glob, mult,
                                             solver_tol=opts.solver_tol)
                except admm_mod.AdmmError as exc:
                    raise RunError(f"{run_id}: outer iteration {r}: {exc}") from exc
                glob, mult = res.globals, res.multipliers
                # local bounds were set against interference copies; make them physical
                it = cx.tighten_iterate(res.iterate, instance, ch)
                obj = cx.surrogate_objective(it, instance, grouping=opts.grouping)
                n_admm = res.iterations
                metrics.admm_traces.append([asdict(row) for row in res.trace])
                if trace_dir is not None:
                    admm_mod.write_trace(res.trace, os.path.join(trace_dir, f"admm_{run_id}_r{r}.csv"))
            it.x = np.sqrt(np.maximum(it.p, 0.0))
            cx.update_xi(it)
            metrics.spca_trace.append(asdict(SpcaTraceRow(r, obj, n_admm, time.perf_counter() - t0)))
            log.debug("%s r=%d objective=%.8g", run_id, r, obj)
            metrics.spca_iterations = r
            # relative change, with one bit as the floor so an emptied network stops too
            if prev is not None and abs(prev - obj) <= opts.spca_tol * max(abs(prev), 1.0):
                break
            prev = obj
        u, U, p, rep, obj, obj_rel = extract_rank_one(it, instance, ch, opts.trials,
                                                       grouping=opts.grouping)

    feas = phy.validate_solution(U, p, instance, ch)
    topo = instance.topology
    metrics.objective = float(obj)
    metrics.relaxed_objective = float(obj_rel)
    metrics.extraction_gap = float(obj - obj_rel)
    metrics.residual_dl = [float(v) for v in rep.q_dev_dl]
    metrics.residual_ul = [float(v) for v in rep.q_dev_ul]
    metrics.residual_backlog = float(np.maximum(rep.q_dev_dl, 0).sum() + np.maximum(rep.q_dev_ul, 0).sum())
    metrics.sum_rate_dl = float(rep.rate_dl.sum())
    metrics.sum_rate_ul = float(rep.rate_ul.sum())
    metrics.power_tx = [float(sum(np.trace(U[i, n]).real for i in topo.dl_set(b) for n in range(instance.N)))
                        for b in range(instance.B)]
    metrics.power_circuit = [float(cfg.circuit_power)] * instance.B
    metrics.power_decoding = [float(cfg.effective_alpha * rep.rate_ul[topo.ul_set(b)].sum())
                              for b in range(instance.B)]
    metrics.power_available = ([float(v) for v in instance.p_avail] if cfg.energy_constrained
                               else [float("inf")] * instance.B)
    metrics.feasible = feas.feasible
    metrics.violations = list(feas.violations)
    metrics.seconds = time.perf_counter() - t_start
    return ScheduleResult(u, U, p, it, rep, feas, metrics)


def write_spca_trace(metrics, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective", "admm_iterations", "seconds"])
        for row in metrics.spca_trace:
            w.writerow([row["iteration"], f"{row['objective']:.10g}", row["admm_iterations"],
                        f"{row['seconds']:.4f}"])


# ---------------------------------------------------------------------------
# invariant checks

def check_run(result, instance, ch, spca_tol=AlgorithmOptions.spca_tol, rate_tol=1e-9,
              feas_tol=phy.FEAS_TOL, energy_tol=1e-6, descent_tol=1e-6):
    """Invariants every finished run must satisfy. Returns a list of failure
    messages (empty when all hold)."""
    m = result.metrics
    out = []
    rep = phy.evaluate(result.U, result.p, instance, ch)
    if abs(rep.rate_dl.sum() - m.sum_rate_dl) > rate_tol or abs(rep.rate_ul.sum() - m.sum_rate_ul) > rate_tol:
        out.append("reported sum rates differ from recomputation")
    feas = phy.validate_solution(result.U, result.p, instance, ch, tol=feas_tol)
    if not feas.feasible:
        out.append("infeasible schedule: " + ", ".join(feas.violations))
    if instance.config.energy_constrained:
        excess = rep.power_total - instance.p_avail
        if np.any(excess > energy_tol):
            out.append(f"energy causality violated by {excess.max():.3g} W")
    # the relaxed objective is only known to the outer stopping accuracy
    if m.extraction_gap < -spca_tol * max(abs(m.relaxed_objective), 1.0):
        out.append(f"negative extraction gap {m.extraction_gap:.3g}")
    trace = [row["objective"] for row in m.spca_trace]
    steps = np.diff(trace)
    if steps.size and steps.max() > descent_tol:
        out.append(f"outer objective rose by {steps.max():.3g}")
    return out


# ---------------------------------------------------------------------------
# experiment plans

@dataclass
class ExperimentPlan:
    """Sweep definition. ``scenario`` overrides the desk-scale defaults;
    ``alpha_ratio`` is the energy arrival rate at which decoding efficiency is
    swept and the duplex modes are compared."""

    seeds: list
    eh_ratios: list = field(default_factory=lambda: [0.445, 0.5, 0.6, 0.8, 1.0])
    alphas: list = field(default_factory=lambda: [0.02, 0.05, 0.1, 0.2])
    setups: list = field(default_factory=lambda: ["B", "C"])
    duplexes: list = field(default_factory=lambda: ["FD", "HD"])
    mode: str = "centralized"
    alpha_ratio: float = 0.6
    scenario: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    output_dir: str = "results"

    def __post_init__(self):
        for name in ("seeds", "eh_ratios", "alphas", "setups", "duplexes"):
            setattr(self, name, list(getattr(self, name)))
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")
        self.seeds = [int(s) for s in self.seeds]
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if min(self.eh_ratios) < 0 or min(self.alphas) < 0 or self.alpha_ratio < 0:
            raise ValueError("energy rates and decoding efficiencies must be non-negative")
        self.setups = [str(s).upper() for s in self.setups]
        self.duplexes = [str(d).upper() for d in self.duplexes]
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        # fail early on bad overrides
        self.base_config()
        self.options()

    @classmethod
    def from_toml(cls, path):
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown plan keys: {sorted(unknown)}")
        if "seeds" not in data:
            raise ValueError("plan needs a seeds list")
        return cls(**data)

    def base_config(self):
        return desk_config(**self.scenario)

    def options(self):
        return AlgorithmOptions(mode=self.mode, **self.solver)

    def run_keys(self):
        """Distinct (setup, duplex, eh ratio, alpha, seed) points of the plan,
        in a fixed order."""
        alpha0 = self.base_config().decode_eff
        keys = []
        for setup, duplex, ratio, seed in itertools.product(self.setups, self.duplexes,
                                                            self.eh_ratios, self.seeds):
            keys.append((setup, duplex, float(ratio), float(alpha0), seed))
        if "C" in self.setups:
            for duplex, alpha, seed in itertools.product(self.duplexes, self.alphas, self.seeds):
                keys.append(("C", duplex, float(self.alpha_ratio), float(alpha), seed))
        for setup, duplex, seed in itertools.product(self.setups, self.duplexes, self.seeds):
            keys.append((setup, duplex, float(self.alpha_ratio), float(alpha0), seed))
        return list(dict.fromkeys(keys))


def run_id_for(key):
    setup, duplex, ratio, alpha, seed = key
    return f"{setup}-{duplex}-eh{ratio:g}-a{alpha:g}-s{seed}"


def config_for(plan, key):
    setup, duplex, ratio, alpha, seed = key
    base = plan.base_config()
    return base.replace(setup=setup, duplex=duplex, decode_eff=alpha, seed=seed,
                        harvest_power=harvest_for_ratio(ratio, base))


def execute_run(plan, key, trace_dir=None):
    """One plan point; failures come back as a metrics record with ``error`` set."""
    cfg = config_for(plan, key)
    run_id = run_id_for(key)
    extra = {"eh_ratio": key[2], "alpha": key[3]}
    try:
        inst = build_instance(cfg)
        ch = draw_channels(inst.topology, cfg)
        res = run_algorithm1(inst, ch, plan.options(), run_id=run_id, trace_dir=trace_dir)
    except (RunError, np.linalg.LinAlgError) as exc:
        log.warning("%s failed: %s", run_id, exc)
        m = MetricsLog(run_id, plan.mode, cfg.setup, cfg.duplex, cfg.seed, error=str(exc), extra=extra)
        return m, []
    res.metrics.extra.update(extra)
    return res.metrics, check_run(res, inst, ch, plan.options().spca_tol)


def _mean_se(values):
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def aggregate(runs, group):
    """Seed-averaged rates and backlog of the runs in ``group`` (list of keys)."""
    ok = [runs[k] for k in group if not runs[k].error]
    row = {"runs": len(ok), "failed": len(group) - len(ok)}
    for name in ("sum_rate_dl", "sum_rate_ul", "residual_backlog"):
        row[name], row[name + "_se"] = _mean_se([getattr(m, name) for m in ok])
    return row


@dataclass
class PlanResult:
    plan: ExperimentPlan
    runs: dict                  # key -> MetricsLog
    failures: dict              # run id -> invariant failures
    eh_rows: list
    alpha_rows: list
    duplex_rows: list
    convergence_rows: list
    files: dict


def run_plan(plan, workers=1, write=True):
    """Run every point of ``plan`` and aggregate over seeds.

    With ``write`` the CSVs (summary, per-run traces, EH sweep, alpha sweep,
    convergence) and a gnuplot script land in ``plan.output_dir``.
    """
    keys = plan.run_keys()
    out_dir = plan.output_dir
    if write:
        os.makedirs(out_dir, exist_ok=True)
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as pool:
            done = list(pool.map(execute_run, [plan] * len(keys), keys))
    else:
        done = [execute_run(plan, k) for k in keys]
    runs = {k: m for k, (m, _) in zip(keys, done)}
    failures = {run_id_for(k): f for k, (_, f) in zip(keys, done) if f}

    alpha0 = plan.base_config().decode_eff
    eh_rows, alpha_rows, duplex_rows, conv_rows = [], [], [], []
    for setup, duplex, ratio in itertools.product(plan.setups, plan.duplexes, plan.eh_ratios):
        group = [(setup, duplex, float(ratio), float(alpha0), s) for s in plan.seeds]
        eh_rows.append({"setup": setup, "duplex": duplex, "eh_ratio": ratio, **aggregate(runs, group)})
    if "C" in plan.setups:
        for duplex, alpha in itertools.product(plan.duplexes, plan.alphas):
            group = [("C", duplex, float(plan.alpha_ratio), float(alpha), s) for s in plan.seeds]
            alpha_rows.append({"setup": "C", "duplex": duplex, "alpha": alpha, **aggregate(runs, group)})
    for setup, duplex in itertools.product(plan.setups, plan.duplexes):
        group = [(setup, duplex, float(plan.alpha_ratio), float(alpha0), s) for s in plan.seeds]
        duplex_rows.append({"setup": setup, "duplex": duplex, **aggregate(runs, group)})
        traces = [[r["objective"] for r in runs[k].spca_trace] for k in group if not runs[k].error]
        length = max((len(t) for t in traces), default=0)
        for i in range(length):
            # converged runs hold their last value
            vals = [t[min(i, len(t) - 1)] for t in traces]
            mean, se = _mean_se(vals)
            conv_rows.append({"setup": setup, "duplex": duplex, "iteration": i + 1,
                              "objective": mean, "objective_se": se})

    files = {}
    if write:
        files["summary"] = _write_rows(os.path.join(out_dir, "summary.csv"),
                                       [dict(runs[k].summary_row(), invariant_failures=";".join(
                                           failures.get(run_id_for(k), []))) for k in keys])
        for k in keys:
            if not runs[k].error:
                write_spca_trace(runs[k], os.path.join(out_dir, f"trace_{run_id_for(k)}.csv"))
        files["eh_sweep"] = _write_rows(os.path.join(out_dir, "eh_sweep.csv"), eh_rows)
        if alpha_rows:
            files["alpha_sweep"] = _write_rows(os.path.join(out_dir, "alpha_sweep.csv"), alpha_rows)
        files["duplex"] = _write_rows(os.path.join(out_dir, "duplex.csv"), duplex_rows)
        files["convergence"] = _write_rows(os.path.join(out_dir, "convergence.csv"), conv_rows)
        files["gnuplot"] = write_gnuplot(os.path.join(out_dir, "plots.gp"), plan)
    return PlanResult(plan, runs, failures, eh_rows, alpha_rows, duplex_rows, conv_rows, files)


def _write_rows(path, rows):
    fields = list(dict.fromkeys(k for row in rows for k in row))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})
    return path


def write_gnuplot(path, plan):
    """Gnuplot script drawing the sweep CSVs next to it into PNG files."""
    lines = ["set datafile separator ','", "set key autotitle columnhead", "set terminal pngcairo",
             "set grid", ""]
    lines += ["set output 'eh_sweep.png'", "set xlabel 'normalized energy arrival rate'",
              "set ylabel 'sum rate [bits/s/Hz]'"]
    plots = []
    for setup, duplex in itertools.product(plan.setups, plan.duplexes):
        sel = f'(strcol(1) eq "{setup}" && strcol(2) eq "{duplex}")'
        for col, name in ((5, "DL"), (7, "UL")):
            plots.append(f"'eh_sweep.csv' using 3:({sel} ? ${col} : 1/0) with linespoints "
                         f"title '{setup} {duplex} {name}'")
    lines.append("plot " + ", \\\n     ".join(plots))
    if "C" in plan.setups:
        lines += ["", "set output 'alpha_sweep.png'", "set xlabel 'decoding energy coefficient'"]
        plots = []
        for duplex in plan.duplexes:
            sel = f'(strcol(2) eq "{duplex}")'
            for col, name in ((5, "DL"), (7, "UL")):
                plots.append(f"'alpha_sweep.csv' using 3:({sel} ? ${col} : 1/0) with linespoints "
                             f"title 'C {duplex} {name}'")
        lines.append("plot " + ", \\\n     ".join(plots))
    lines += ["", "set output 'convergence.png'", "set xlabel 'outer iteration'",
              "set ylabel 'queue objective [bits]'"]
    plots = []
    for setup, duplex in itertools.product(plan.setups, plan.duplexes):
        sel = f'(strcol(1) eq "{setup}" && strcol(2) eq "{duplex}")'
        plots.append(f"'convergence.csv' using 3:({sel} ? $4 : 1/0) with linespoints "
                     f"title '{setup} {duplex}'")
    lines.append("plot " + ", \\\n     ".join(plots))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------------------
# sweep trend checks

def _monotone(values, errors, increasing, inversions_allowed=1, tol=0.0):
    """Whether ``values`` move in one direction, tolerating up to
    ``inversions_allowed`` adjacent inversions no larger than the larger
    standard error of the pair."""
    bad = 0
    for a, b, ea, eb in zip(values, values[1:], errors, errors[1:]):
        step = (b - a) if increasing else (a - b)
        if step >= -tol:
            continue
        if -step > max(ea, eb):
            return False
        bad += 1
    return bad <= inversions_allowed


def trend_checks(result, tie_tol=1e-6):
    """Qualitative sweep trends as ``{name: passed}``; a check whose data are
    absent from the plan is omitted. Comparisons allow ``tie_tol`` so that two
    fully served (queue-capped) directions count as equal."""
    checks = {}
    plan = result.plan
    for duplex in plan.duplexes:
        rows = sorted((r for r in result.alpha_rows if r["duplex"] == duplex), key=lambda r: r["alpha"])
        if len(rows) > 1:
            checks[f"alpha_ul_nonincreasing_{duplex}"] = _monotone(
                [r["sum_rate_ul"] for r in rows], [r["sum_rate_ul_se"] for r in rows], False, tol=tie_tol)
            checks[f"alpha_dl_nondecreasing_{duplex}"] = _monotone(
                [r["sum_rate_dl"] for r in rows], [r["sum_rate_dl_se"] for r in rows], True, tol=tie_tol)
        rows_c = [r for r in result.eh_rows if r["setup"] == "C" and r["duplex"] == duplex]
        if rows_c:
            checks[f"eh_dl_dominates_C_{duplex}"] = all(r["sum_rate_dl"] >= r["sum_rate_ul"] - tie_tol
                                                          for r in rows_c)
        rows_b = [r for r in result.eh_rows if r["setup"] == "B" and r["duplex"] == duplex]
        if rows_b:
            low = min(rows_b, key=lambda r: r["eh_ratio"])
            checks[f"eh_ul_wins_low_B_{duplex}"] = low["sum_rate_ul"] >= low["sum_rate_dl"] - tie_tol
    if "FD" in plan.duplexes and "HD" in plan.duplexes:
        for setup in plan.setups:
            fd = next(r for r in result.duplex_rows if r["setup"] == setup and r["duplex"] == "FD")
            hd = next(r for r in result.duplex_rows if r["setup"] == setup and r["duplex"] == "HD")
            checks[f"fd_backlog_le_hd_{setup}"] = fd["residual_backlog"] <= hd["residual_backlog"] + tie_tol
    return checks
