import numpy as np
import pytest
from hypothesis import settings

from fdcells.channel import ChannelSet, draw_channels
from fdcells.scenario import (Instance, ScenarioConfig, Topology, TrafficState, build_instance,
                              desk_config)

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def desk(seed=0, **changes):
    """Desk-scale instance and its channels."""
    cfg = desk_config(seed, **changes)
    inst = build_instance(cfg)
    return inst, draw_channels(inst.topology, cfg)


def hand_channels(h_dl, h_ul, g, H_bs, sigma2=1.0):
    as_c = lambda a: np.array(a, dtype=complex)
    return ChannelSet(as_c(h_dl), as_c(h_ul), as_c(g), as_c(H_bs), sigma2, sigma2)


def hand_topology(dl_cell, ul_cell, B=1):
    dl_cell, ul_cell = np.asarray(dl_cell), np.asarray(ul_cell)
    return Topology(np.zeros((B, 2)), np.zeros((len(dl_cell), 2)), dl_cell,
                    np.zeros((len(ul_cell), 2)), ul_cell)


def hand_instance(topo, q_dl, q_ul, p_avail=None, **cfg_changes):
    """Instance around a hand-made topology (config counts are not checked)."""
    cfg = ScenarioConfig(num_sbs=topo.num_sbs, **cfg_changes)
    p_avail = np.full(topo.num_sbs, 10.0) if p_avail is None else np.asarray(p_avail, dtype=float)
    return Instance(cfg, topo, TrafficState(np.asarray(q_dl, float), np.asarray(q_ul, float)), p_avail)


@pytest.fixture
def desk_pair():
    return desk(0)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
