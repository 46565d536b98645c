import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import desk, hand_channels, hand_instance, hand_topology
from fdcells import phy


def _one_cell(g=0.0, H=None, h_dl=(1, 0), h_ul=(1, 0)):
    topo = hand_topology([0], [0])
    H = np.zeros((2, 2)) if H is None else H
    ch = hand_channels([[[h_dl]]], [[[h_ul]]], [[[g]]], [[[H]]])
    return topo, ch


def test_dl_sinr_examples():
    topo, ch = _one_cell()
    U = np.eye(2, dtype=complex)[None, None]
    assert phy.sinr_dl(0, 0, U, np.zeros((1, 1)), ch, topo) == pytest.approx(1.0)
    topo, ch = _one_cell(g=1.0)
    assert phy.sinr_dl(0, 0, U, np.ones((1, 1)), ch, topo) == pytest.approx(0.5)
    assert phy.sinr_dl(0, 0, np.zeros_like(U), np.ones((1, 1)), ch, topo) == 0.0


def test_ul_sinr_examples():
    topo, ch = _one_cell()
    p = np.full((1, 1), 4.0)
    zero_U = np.zeros((1, 1, 2, 2), dtype=complex)
    assert phy.sinr_ul_mmse_sic(0, 0, zero_U, p, ch, topo) == pytest.approx(4.0)
    topo, ch = _one_cell(H=np.eye(2))
    U = np.eye(2, dtype=complex)[None, None]
    assert phy.sinr_ul_mmse_sic(0, 0, U, p, ch, topo) == pytest.approx(2.0)


def test_two_user_sic_against_hand_inverse():
    topo = hand_topology([0], [0, 0])
    h1, h2 = np.array([1.0, 0.5j]), np.array([0.3, 1.0])
    ch = hand_channels([[[[0, 0]]]], [[[h1], [h2]]], [[[0]], [[0]]], [[[np.zeros((2, 2))]]])
    p = np.array([[2.0], [3.0]])
    U = np.zeros((1, 1, 2, 2), dtype=complex)
    # user 0 decoded first sees user 1 as noise; user 1 is then interference free
    X0 = np.eye(2) + 3.0 * np.outer(h2, h2.conj())
    want0 = 2.0 * np.real(h1.conj() @ np.linalg.inv(X0) @ h1)
    want1 = 3.0 * np.real(h2.conj() @ h2)
    assert phy.sinr_ul_mmse_sic(0, 0, U, p, ch, topo) == pytest.approx(want0, abs=1e-10)
    assert phy.sinr_ul_mmse_sic(1, 0, U, p, ch, topo) == pytest.approx(want1, abs=1e-10)
    # reversed order swaps who is cancelled
    X1 = np.eye(2) + 2.0 * np.outer(h1, h1.conj())
    rev = phy.sinr_ul_mmse_sic(1, 0, U, p, ch, topo, order=[1, 0])
    assert rev == pytest.approx(3.0 * np.real(h2.conj() @ np.linalg.inv(X1) @ h2), abs=1e-10)
    with pytest.raises(ValueError):
        phy.sinr_ul_mmse_sic(0, 0, U, p, ch, topo, order=[0])


def test_queue_deviation_examples():
    assert phy.queue_deviation(6, [1, 1]) == 4
    assert phy.queue_deviation(6, [0.0]) == 6
    assert phy.queue_deviation(2, [3]) == -1


def test_power_consumption_examples():
    topo = hand_topology([0], [0])
    U = np.zeros((1, 1, 2, 2))
    U[0, 0] = np.diag([1.5, 0.5])
    rates = np.array([[10.0]])
    for setup, want in (("C", 4.0), ("B", 3.0)):
        inst = hand_instance(topo, [1], [1], setup=setup, decode_eff=0.1, num_subcarriers=1)
        assert phy.power_consumption(0, U, rates, inst.config, topo) == pytest.approx(want)


def test_validate_zero_and_boundary():
    inst, ch = desk(0)
    K_D, K_U, N = inst.k_dl, inst.k_ul, inst.N
    U = np.zeros((K_D, N, 2, 2), dtype=complex)
    p = np.zeros((K_U, N))
    rep = phy.validate_solution(U, p, inst, ch)
    assert rep.feasible
    assert np.allclose(rep.dl_power_slack, inst.config.sbs_max_power)
    assert np.allclose(rep.ul_power_slack, inst.config.ue_max_power)
    cell0 = inst.topology.dl_set(0)
    U[cell0[0], 0] = np.eye(2) * inst.config.sbs_max_power / 2
    rep = phy.validate_solution(U, p, inst, ch)
    assert rep.dl_power_slack[0] == pytest.approx(0.0, abs=1e-12)
    assert "dl_power[0]" not in rep.violations


def test_validate_flags_energy_violation():
    inst, ch = desk(0)
    inst.config.decode_eff = 1e6
    U = np.zeros((inst.k_dl, inst.N, 2, 2), dtype=complex)
    p = np.full((inst.k_ul, inst.N), 0.05)
    rep = phy.validate_solution(U, p, inst, ch)
    assert any(v.startswith("energy") for v in rep.violations)
    inst.config.setup = "A"
    p[0, 0] = -1.0
    rep = phy.validate_solution(U, p, inst, ch)
    assert "nonnegative_power" in rep.violations


def test_evaluate_rates_and_csv(tmp_path):
    inst, ch = desk(2)
    rng = np.random.default_rng(0)
    A = rng.standard_normal((inst.k_dl, inst.N, 2, 2)) * 0.1
    U = A @ np.swapaxes(A, -1, -2)
    p = np.full((inst.k_ul, inst.N), 0.05)
    rep = phy.evaluate(U, p, inst, ch)
    assert np.allclose(rep.rate_dl, np.log2(1 + rep.sinr_dl))
    assert np.allclose(rep.rate_ul, np.log2(1 + rep.sinr_ul))
    assert np.allclose(rep.q_dev_dl, inst.traffic.q_dl - rep.rate_dl.sum(axis=1))
    rep.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("direction,ue,subcarrier")
    assert len(lines) == 1 + (inst.k_dl + inst.k_ul) * inst.N


@given(extra=st.floats(0.0, 10.0), base=st.floats(0.0, 5.0))
def test_dl_sinr_falls_with_interferer_power(extra, base):
    topo, ch = _one_cell(g=0.7)
    U = np.eye(2, dtype=complex)[None, None]
    lo = phy.sinr_dl(0, 0, U, np.array([[base]]), ch, topo)
    hi = phy.sinr_dl(0, 0, U, np.array([[base + extra]]), ch, topo)
    assert hi <= lo + 1e-15


def test_queue_objective_groupings():
    topo = hand_topology([0, 1], [0, 1], B=2)
    dl, ul = np.array([3.0, 4.0]), np.array([0.0, 0.0])
    assert phy.queue_objective(dl, ul, topo) == pytest.approx(7.0)
    assert phy.queue_objective(dl, ul, topo, "network") == pytest.approx(5.0)
    with pytest.raises(ValueError):
        phy.queue_objective(dl, ul, topo, "bogus")
