import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fdcells.scenario import (REFERENCE_Q_DL, REFERENCE_Q_UL, EnergyProfile, ScenarioConfig, available_power, build_instance,
                              carrier_masks, desk_config, generate_topology, harvest_for_ratio,
                              init_queues, load_config, reference_queues)


def test_reference_deployment_user_counts():
    cfg = ScenarioConfig()
    topo = generate_topology(cfg)
    assert cfg.k_dl == cfg.k_ul == 20
    assert len(topo.dl_cell) == len(topo.ul_cell) == 20
    assert topo.num_sbs == 10


def test_same_seed_same_topology():
    a = generate_topology(ScenarioConfig(seed=7))
    b = generate_topology(ScenarioConfig(seed=7))
    for name in ("sbs_positions", "dl_positions", "ul_positions", "dl_cell", "ul_cell"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_single_cell_user_inside_disc():
    cfg = ScenarioConfig(num_sbs=1, dl_ues_per_cell=1, ul_ues_per_cell=1)
    topo = generate_topology(cfg)
    assert np.linalg.norm(topo.dl_positions[0] - topo.sbs_positions[0]) <= 50.0


@given(seed=st.integers(0, 2**31), B=st.integers(1, 6), kd=st.integers(1, 3), ku=st.integers(1, 3))
def test_users_partitioned_and_contained(seed, B, kd, ku):
    cfg = ScenarioConfig(num_sbs=B, dl_ues_per_cell=kd, ul_ues_per_cell=ku, seed=seed)
    topo = generate_topology(cfg)
    for cells, pos, per in ((topo.dl_cell, topo.dl_positions, kd), (topo.ul_cell, topo.ul_positions, ku)):
        assert sorted(np.concatenate([np.flatnonzero(cells == b) for b in range(B)])) == list(range(B * per))
        d = np.linalg.norm(pos - topo.sbs_positions[cells], axis=1)
        assert np.all(d <= cfg.cell_radius + 1e-9)
    assert np.all(np.linalg.norm(topo.sbs_positions, axis=1) <= cfg.macro_radius)


@pytest.mark.parametrize("changes", [
    dict(cell_radius=600.0), dict(num_sbs=0), dict(num_subcarriers=0), dict(antennas_tx=0),
    dict(bandwidth=0.0), dict(decode_eff=-0.1), dict(setup="D"), dict(duplex="XD"),
    dict(duplex="HD", num_subcarriers=1), dict(sbs_max_power=0.0),
])
def test_invalid_configs_rejected(changes):
    with pytest.raises(ValueError):
        ScenarioConfig(**changes)


def test_setups_map_to_energy_rules():
    a, b, c = (ScenarioConfig(setup=s, decode_eff=0.3) for s in "ABC")
    assert not a.energy_constrained and b.energy_constrained and c.energy_constrained
    assert b.effective_alpha == 0.0 and c.effective_alpha == 0.3


def test_reference_buffers():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        q_dl, q_ul = reference_queues(20, 20)
    assert q_dl == [6, 7, 4, 5, 3, 2, 2, 2, 2, 3, 1, 1, 2, 2, 2, 3, 2, 2, 3, 7]
    assert len(q_ul) == 20 and q_ul[:3] == [3, 7, 3]
    assert any("22 entries" in str(w.message) for w in caught)


def test_buffer_length_mismatch_rejected():
    cfg = ScenarioConfig()
    with pytest.raises(ValueError, match="20 UL"):
        init_queues(cfg, (REFERENCE_Q_DL, REFERENCE_Q_UL))
    tr = init_queues(cfg, (REFERENCE_Q_DL, REFERENCE_Q_UL[:20]))
    assert tr.q_ul.sum() == sum(REFERENCE_Q_UL[:20])


def test_negative_buffers_rejected():
    cfg = desk_config()
    with pytest.raises(ValueError):
        init_queues(cfg, ([1.0, -1.0], [1.0, 1.0]))


def test_zero_buffers_valid():
    cfg = desk_config()
    tr = init_queues(cfg, ([0, 0], [0, 0]))
    assert not tr.q_dl.any() and not tr.q_ul.any()


def test_random_buffers_in_range():
    tr = init_queues(ScenarioConfig(seed=3))
    assert tr.q_dl.min() >= 1 and tr.q_dl.max() <= 7


@pytest.mark.parametrize("T, bmax, expected", [(1.0, 10.0, 10.0), (1.0, 20.0, 13.0), (2.0, 20.0, 10.0)])
def test_available_power(T, bmax, expected):
    prof = EnergyProfile(np.array([6.0]), np.array([7.0]), bmax, T)
    assert available_power(prof)[0] == pytest.approx(expected)


pos = st.floats(0.0, 100.0)


@given(ph=pos, pb=pos, bmax=st.floats(0.1, 100.0), T=st.floats(0.1, 10.0), d=pos, which=st.integers(0, 2))
def test_available_power_monotone_and_capped(ph, pb, bmax, T, d, which):
    base = [ph, pb, bmax]
    more = list(base)
    more[which] += d
    p0 = available_power(EnergyProfile(np.array([base[0]]), np.array([base[1]]), base[2], T))[0]
    p1 = available_power(EnergyProfile(np.array([more[0]]), np.array([more[1]]), more[2], T))[0]
    assert p1 >= p0 - 1e-12
    assert p0 <= bmax / T + 1e-12


def test_harvest_ratio_mapping():
    cfg = ScenarioConfig()
    assert harvest_for_ratio(1.0, cfg) == pytest.approx(cfg.circuit_power + 5 * cfg.sbs_max_power)
    with pytest.raises(ValueError):
        harvest_for_ratio(-0.1, cfg)


def test_table_defaults():
    cfg = ScenarioConfig()
    assert cfg.sbs_max_power == pytest.approx(10 ** 2.4 / 1000)
    assert cfg.ue_max_power == pytest.approx(10 ** 2.3 / 1000)
    assert cfg.circuit_power == pytest.approx(1.0)
    assert cfg.si_variance == -110.0 and cfg.decode_eff == 0.1


def test_half_duplex_carrier_split():
    dl, ul = carrier_masks("HD", 3)
    assert dl.tolist() == [True, True, False] and ul.tolist() == [False, False, True]
    dl, ul = carrier_masks("FD", 2)
    assert dl.all() and ul.all()


def test_load_config(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text('num_sbs = 3\nsetup = "b"\n[sweep]\nseeds = [1, 2]\n[solver]\ntrials = 5\n')
    cfg, sweep, solver = load_config(path)
    assert cfg.num_sbs == 3 and cfg.setup == "B"
    assert sweep == {"seeds": [1, 2]} and solver == {"trials": 5}
    path.write_text("num_cells = 3\n")
    with pytest.raises(ValueError, match="num_cells"):
        load_config(path)


def test_instance_budget_follows_config():
    inst = build_instance(desk_config(harvest_power=1.2, leftover_power=0.3, battery_max=1.0))
    assert np.allclose(inst.p_avail, 1.0)
    assert math.isclose(build_instance(desk_config(harvest_power=0.4)).p_avail[0], 0.4)
