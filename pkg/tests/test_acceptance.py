"""One test per acceptance criterion. Each prints a single PASS/FAIL line,
also collected into the terminal summary."""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, desk
from fdcells import admm
from fdcells import convexify as cx
from fdcells import orchestrator as orc
from fdcells import phy, solver
from fdcells.channel import ChannelSet
from fdcells.scenario import Topology
from solver_corpus import CORPUS

TRIALS = 50


def report(code, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} {code}: {detail}"
    print(line)
    ACCEPTANCE.append(line)
    assert ok, line


# ---------------------------------------------------------------------------
# shared runs

@pytest.fixture(scope="session")
def descent_runs():
    """Centralized runs on 20 seeded 2-SBS desk instances."""
    out = []
    for seed in range(20):
        inst, ch = desk(seed)
        out.append((inst, ch, orc.run_algorithm1(inst, ch, orc.AlgorithmOptions(trials=TRIALS))))
    return out


@pytest.fixture(scope="session")
def admm_pairs():
    """(centralized, ADMM with residual balancing) on 10 seeded 2-SBS desk instances."""
    out = []
    for seed in range(10):
        inst, ch = desk(seed)
        a = orc.run_algorithm1(inst, ch, orc.AlgorithmOptions(trials=TRIALS))
        b = orc.run_algorithm1(inst, ch, orc.AlgorithmOptions(mode="admm", adaptive_rho=True,
                                                              trials=TRIALS))
        out.append((inst, ch, a, b))
    return out


@pytest.fixture(scope="session")
def fd_plan(tmp_path_factory):
    plan = orc.ExperimentPlan(seeds=list(range(10)), setups=["B", "C"], duplexes=["FD"],
                              scenario={"num_sbs": 3}, solver={"trials": TRIALS},
                              output_dir=str(tmp_path_factory.mktemp("fd_plan")))
    return orc.run_plan(plan)


@pytest.fixture(scope="session")
def hd_plan(tmp_path_factory):
    plan = orc.ExperimentPlan(seeds=list(range(10)), eh_ratios=[0.6], alphas=[0.1], setups=["C"],
                              duplexes=["HD"], scenario={"num_sbs": 3}, solver={"trials": TRIALS},
                              output_dir=str(tmp_path_factory.mktemp("hd_plan")))
    return orc.run_plan(plan)


def _all_desk_runs(descent_runs, admm_pairs):
    for inst, ch, res in descent_runs:
        yield f"seed{inst.config.seed}", inst, ch, res
    for inst, ch, a, b in admm_pairs:
        yield f"seed{inst.config.seed}-centralized", inst, ch, a
        yield f"seed{inst.config.seed}-admm", inst, ch, b


# ---------------------------------------------------------------------------
# criteria

def test_c01_amgm_surrogate_validity():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    z, beta, xi = 10.0 ** rng.uniform(-3, 3, (3, 100_000))
    bound = cx.amgm_bound(z, beta, xi)
    tight = cx.amgm_bound(z, beta, cx.tight_xi(z, beta))
    elapsed = time.perf_counter() - t0
    below = int(np.sum(bound < z * beta * (1 - 1e-12)))
    eq_err = float(np.max(np.abs(tight - z * beta) / np.maximum(z * beta, 1.0)))
    report("C1", below == 0 and eq_err <= 1e-9 and elapsed < 1.0,
           f"1e5 triples, {below} below z*beta, tightness error {eq_err:.2e}, {elapsed:.3f} s")


def _random_pd(rng, m, floor):
    A = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    return A @ A.conj().T + floor * np.eye(m)


def test_c02_matrix_fractional_minorant():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = -np.inf
    for _ in range(100):
        h = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        x0, X0 = rng.uniform(0, 3), _random_pd(rng, 2, 0.1)
        lin = cx.linearize_matrix_fractional(x0, X0, h)
        for _ in range(100):
            # sizes from 1e-4 to 1 so the tangent neighbourhood is probed too
            eps = 10.0 ** rng.uniform(-4, 0)
            x = max(x0 + eps * rng.normal(0, 1), 0.0)
            D = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
            X = X0 + 0.5 * eps * (D + D.conj().T)
            if np.linalg.eigvalsh(X)[0] <= 1e-3:
                X = _random_pd(rng, 2, 0.05)
            worst = max(worst, lin.value(x, X) - cx.matrix_fractional(x, X, h))
    elapsed = time.perf_counter() - t0
    report("C2", worst <= 1e-9 and elapsed < 10.0,
           f"1e4 PD perturbations, largest excess {worst:.2e}, {elapsed:.2f} s")


def test_c03_spca_descent(descent_runs):
    worst, where = -np.inf, ""
    for inst, _, res in descent_runs:
        trace = [r["objective"] for r in res.metrics.spca_trace]
        step = float(np.max(np.diff(trace))) if len(trace) > 1 else -np.inf
        if step > worst:
            worst, where = step, f"seed {inst.config.seed}"
    report("C3", worst <= 1e-6,
           f"20 desk runs, largest per-step increase {worst:.2e} ({where})")


def test_c04_admm_matches_centralized(admm_pairs):
    rel_worst, res_worst, lines = 0.0, 0.0, []
    for inst, _, a, b in admm_pairs:
        fa, fb = a.metrics.objective, b.metrics.objective
        # objectives near zero (all queues served) compare on an absolute floor
        rel = abs(fa - fb) / max(abs(fa), 1e-3)
        last = b.metrics.admm_traces[-1][-1]
        rel_worst = max(rel_worst, rel)
        res_worst = max(res_worst, last["primal"], last["dual"])
        lines.append(f"seed {inst.config.seed}: {fa:.6g} vs {fb:.6g}")
    print("\n".join(lines))
    report("C4", rel_worst <= 0.01 and res_worst < 1e-4,
           f"10 seeds, largest relative gap {rel_worst:.2e}, final residual {res_worst:.2e}")


def test_c05_admm_fixed_point():
    inst, ch = desk(0, num_sbs=3)
    it = cx.initial_iterate(inst, ch)
    keys = cx.coupling_keys(inst)
    g = admm.initial_globals(it, inst, ch, keys)
    rng = np.random.default_rng(5)
    mult = admm.zero_multipliers(keys, inst.config.antennas_rx)
    for k in mult.values:
        if k[0].is_matrix:
            A = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
            mult.values[k] = A + A.conj().T
        else:
            mult.values[k] = rng.standard_normal()
    scales = admm.coupling_scales(it, inst, ch, keys)
    locals_ = [admm.LocalState(b, 1, {k: v for k, v in g.values.items()
                                      if b in (k.producer, k.victim_cell)}, np.zeros(0), 0.0)
               for b in range(inst.B)]
    new_g = admm.update_globals(admm.exchange(locals_, keys, 1))
    new_m = admm.update_multipliers(locals_, new_g, mult, admm.PenaltyParams(), scales)
    dg = max(float(np.max(np.abs(np.asarray(new_g.values[k]) - np.asarray(g.values[k])))) for k in keys)
    dm = max(float(np.max(np.abs(np.asarray(new_m.values[k]) - np.asarray(mult.values[k]))))
             for k in mult.values)
    report("C5", dg < 1e-12 and dm < 1e-12,
           f"3-SBS consensus state, global change {dg:.1e}, multiplier change {dm:.1e}")


def _plan_runs(*plans):
    for plan in plans:
        for key, m in plan.runs.items():
            yield orc.run_id_for(key), m, plan.failures.get(orc.run_id_for(key), [])


def test_c06_feasible_after_extraction(descent_runs, admm_pairs, fd_plan, hd_plan):
    bad, count = [], 0
    for name, inst, ch, res in _all_desk_runs(descent_runs, admm_pairs):
        count += 1
        feas = phy.validate_solution(res.U, res.p, inst, ch, tol=1e-6)
        m = res.metrics
        gap_ok = m.extraction_gap >= -orc.AlgorithmOptions.spca_tol * max(abs(m.relaxed_objective), 1.0)
        if not (feas.feasible and np.all(feas.ranks <= 1) and gap_ok):
            bad.append(name)
    for name, m, failures in _plan_runs(fd_plan, hd_plan):
        count += 1
        if m.error or any(f.startswith(("infeasible", "negative extraction")) for f in failures):
            bad.append(name)
    report("C6", not bad, f"{count} desk runs, {len(bad)} infeasible or negative gap {bad[:5]}")


def _oracle_sinr(j, n, U, p, ch, topo, order):
    """Dense-inversion SINR of UL user j: 1 / (1 - p h^H R^-1 h) - 1 with R the
    full received covariance after cancelling the users decoded before j."""
    b = topo.ul_cell[j]
    m = ch.h_ul.shape[-1]
    cancelled = set(order[:order.index(j)])
    R = ch.sigma2_sbs * np.eye(m, dtype=complex)
    for l in range(len(topo.ul_cell)):
        if l not in cancelled:
            h = ch.h_ul[b, l, n]
            R = R + p[l, n] * np.outer(h, h.conj())
    for k in range(len(topo.dl_cell)):
        H = ch.H_bs[b, topo.dl_cell[k], n]
        R = R + H @ U[k, n] @ H.conj().T
    h = ch.h_ul[b, j, n]
    a = p[j, n] * np.real(h.conj() @ np.linalg.inv(R) @ h)
    return 1.0 / (1.0 - a) - 1.0


def _random_case(rng):
    B = int(rng.integers(1, 4))
    ul_cell = np.repeat(np.arange(B), rng.integers(1, 4, B))
    dl_cell = np.repeat(np.arange(B), rng.integers(1, 3, B))
    m_t, m_r = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    K_U, K_D = len(ul_cell), len(dl_cell)
    cg = lambda *s: (rng.standard_normal(s) + 1j * rng.standard_normal(s)) / np.sqrt(2)
    ch = ChannelSet(cg(B, K_D, 1, m_t), cg(B, K_U, 1, m_r), cg(K_U, K_D, 1),
                    0.3 * cg(B, B, 1, m_r, m_t), float(rng.uniform(0.5, 2.0)), 1.0)
    topo = Topology(np.zeros((B, 2)), np.zeros((K_D, 2)), dl_cell, np.zeros((K_U, 2)), ul_cell)
    W = cg(K_D, 1, m_t, m_t)
    U = W @ W.conj().transpose(0, 1, 3, 2) * rng.uniform(0.05, 1.0)
    p = rng.uniform(0.05, 1.0, (K_U, 1))
    return ch, topo, U, p


def test_c07_mmse_sic_oracle():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        ch, topo, U, p = _random_case(rng)
        b = int(rng.integers(topo.num_sbs))
        same = np.flatnonzero(topo.ul_cell == b).tolist()
        order = [int(v) for v in rng.permutation(same)]
        for j in order:
            got = phy.sinr_ul_mmse_sic(j, 0, U, p, ch, topo, order)
            worst = max(worst, abs(got - _oracle_sinr(j, 0, U, p, ch, topo, order)))
    report("C7", worst <= 1e-10, f"1e3 random instances, largest SINR difference {worst:.2e}")


def test_c08_energy_causality(descent_runs, admm_pairs, fd_plan, hd_plan):
    worst, count = -np.inf, 0
    runs = [res.metrics for *_, res in _all_desk_runs(descent_runs, admm_pairs)]
    runs += [m for _, m, _ in _plan_runs(fd_plan, hd_plan) if not m.error]
    for m in runs:
        if m.setup in ("B", "C"):
            count += 1
            worst = max(worst, m.summary_row()["max_power_excess"])
    report("C8", worst <= 1e-6, f"{count} setup B/C runs, largest consumption excess {worst:.2e} W")


def _alpha_line(rows, name):
    return ", ".join(f"{r[name]:.4g}±{r[name + '_se']:.2g}" for r in rows)


def test_c09_decoding_energy_trend(fd_plan):
    checks = orc.trend_checks(fd_plan)
    rows = sorted((r for r in fd_plan.alpha_rows if r["duplex"] == "FD"), key=lambda r: r["alpha"])
    ok = checks["alpha_ul_nonincreasing_FD"] and checks["alpha_dl_nondecreasing_FD"]
    report("C9", ok, f"UL [{_alpha_line(rows, 'sum_rate_ul')}] DL [{_alpha_line(rows, 'sum_rate_dl')}]")


def test_c10_energy_rate_trend(fd_plan):
    checks = orc.trend_checks(fd_plan)
    low_b = min((r for r in fd_plan.eh_rows if r["setup"] == "B"), key=lambda r: r["eh_ratio"])
    rows_c = [r for r in fd_plan.eh_rows if r["setup"] == "C"]
    margin = min(r["sum_rate_dl"] - r["sum_rate_ul"] for r in rows_c)
    ok = checks["eh_dl_dominates_C_FD"] and checks["eh_ul_wins_low_B_FD"]
    report("C10", ok, f"C: smallest DL-UL margin {margin:.4g}; B at {low_b['eh_ratio']}: "
           f"UL {low_b['sum_rate_ul']:.4g} vs DL {low_b['sum_rate_dl']:.4g}")


def test_c11_full_duplex_backlog(fd_plan, hd_plan):
    fd = next(r for r in fd_plan.duplex_rows if r["setup"] == "C")
    hd = next(r for r in hd_plan.duplex_rows if r["setup"] == "C")
    ok = fd["runs"] == hd["runs"] == 10 and fd["residual_backlog"] <= hd["residual_backlog"] + 1e-6
    report("C11", ok, f"setup C backlog FD {fd['residual_backlog']:.4g} vs HD {hd['residual_backlog']:.4g}")


def test_c12_solver_corpus():
    kinds, errors = set(), {}
    for name, build in CORPUS.items():
        prog, optimum = build()
        for kind in ("affine", "soc", "psd", "exp"):
            if getattr(prog, kind):
                kinds.add(kind)
        sol = solver.solve(prog)
        errors[name] = abs(sol.objective - optimum) if sol.ok else np.inf
    worst = max(errors.values())
    ok = len(errors) >= 5 and worst <= 1e-6 and kinds == {"affine", "soc", "psd", "exp"}
    report("C12", ok, f"{len(errors)} programs over {sorted(kinds)}, largest error {worst:.2e}")
