"""Network layout, traffic buffers and energy budgets."""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

SETUPS = ("A", "B", "C")
DUPLEX = ("FD", "HD")

# Buffer lengths (bits) listed for the 20 DL and 20 UL users of the reference
# deployment. The UL list carries 22 entries; see reference_queues().
REFERENCE_Q_DL = (6, 7, 4, 5, 3, 2, 2, 2, 2, 3, 1, 1, 2, 2, 2, 3, 2, 2, 3, 7)
REFERENCE_Q_UL = (3, 7, 3, 5, 7, 3, 2, 3, 1, 3, 3, 3, 3, 1, 2, 2, 2, 2, 3, 2, 1, 1)


def dbm_to_watt(dbm):
    return 10.0 ** (np.asarray(dbm, dtype=float) / 10.0) / 1000.0


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


@dataclass
class ScenarioConfig:
    """All experiment parameters. Defaults follow the reference deployment.

    Powers are in watts, distances in metres, energy in joules.
    """

    num_sbs: int = 10
    dl_ues_per_cell: int = 2
    ul_ues_per_cell: int = 2
    num_subcarriers: int = 2
    antennas_tx: int = 2
    antennas_rx: int = 2
    macro_radius: float = 500.0
    cell_radius: float = 50.0
    min_distance: float = 10.0
    sbs_max_power: float = float(dbm_to_watt(24.0))
    ue_max_power: float = float(dbm_to_watt(23.0))
    circuit_power: float = float(dbm_to_watt(30.0))
    bandwidth: float = 10e6
    noise_density: float = -174.0        # dBm/Hz
    noise_figure_sbs: float = 13.0       # dB
    noise_figure_ue: float = 9.0         # dB
    si_variance: float = -110.0          # dB
    rician_k: float = 1.0
    si_matrix: str = "ones"              # "ones" | "identity"
    los_distance: float = 50.0           # metres, p_LOS(d) = exp(-d / los_distance)
    decode_eff: float = 0.1              # W per (bit/s/Hz)
    setup: str = "C"
    duplex: str = "FD"
    scheduling_period: float = 1.0
    battery_max: float = 100.0
    harvest_power: float = 1.5
    leftover_power: float = 0.0
    intensity_sbs: float = 10.0          # metadata only
    intensity_ue: float = 20.0           # metadata only
    queue_low: int = 1
    queue_high: int = 7
    queues_dl: list = None
    queues_ul: list = None
    seed: int = 0

    def __post_init__(self):
        self.setup = str(self.setup).upper()
        self.duplex = str(self.duplex).upper()
        self.validate()

    def validate(self):
        for name in ("num_sbs", "dl_ues_per_cell", "ul_ues_per_cell", "num_subcarriers",
                     "antennas_tx", "antennas_rx"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("macro_radius", "cell_radius", "sbs_max_power", "ue_max_power",
                     "bandwidth", "scheduling_period", "los_distance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("circuit_power", "battery_max", "harvest_power", "leftover_power",
                     "decode_eff", "min_distance", "rician_k"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.cell_radius > self.macro_radius:
            raise ValueError("cell_radius exceeds macro_radius")
        if self.min_distance >= self.cell_radius:
            raise ValueError("min_distance must be below cell_radius")
        if self.duplex == "HD" and self.num_subcarriers < 2:
            raise ValueError("half duplex needs at least two sub-carriers")
        if self.setup not in SETUPS:
            raise ValueError(f"setup must be one of {SETUPS}")
        if self.duplex not in DUPLEX:
            raise ValueError(f"duplex must be one of {DUPLEX}")
        if self.si_matrix not in ("ones", "identity"):
            raise ValueError("si_matrix must be 'ones' or 'identity'")
        if self.queue_low < 0 or self.queue_high < self.queue_low:
            raise ValueError("bad queue range")

    @property
    def k_dl(self):
        return self.num_sbs * self.dl_ues_per_cell

    @property
    def k_ul(self):
        return self.num_sbs * self.ul_ues_per_cell

    @property
    def energy_constrained(self):
        return self.setup != "A"

    @property
    def effective_alpha(self):
        return self.decode_eff if self.setup == "C" else 0.0

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


# Small deployment used for tests and quick experiments: a few cells packed
# into a 150 m disc so that inter-cell interference actually matters.
DESK = dict(num_sbs=2, dl_ues_per_cell=1, ul_ues_per_cell=1, num_subcarriers=2,
            antennas_tx=2, antennas_rx=2, macro_radius=150.0)


def desk_config(seed=0, **changes):
    """Desk-scale :class:`ScenarioConfig`; keyword arguments override fields."""
    return ScenarioConfig(**{**DESK, "seed": seed, **changes})


def harvest_for_ratio(ratio, config):
    """Harvest power (W) for a normalized energy arrival rate
    ``P_H / (P_cir + 5 P_max)``."""
    if ratio < 0:
        raise ValueError("ratio must be non-negative")
    return float(ratio) * (config.circuit_power + 5.0 * config.sbs_max_power)


def load_config(path):
    """Read a TOML config: flat keys for :class:`ScenarioConfig`, plus optional
    ``[sweep]`` and ``[solver]`` tables which are returned untouched."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    sweep = data.pop("sweep", {})
    solver = data.pop("solver", {})
    known = {f.name for f in dataclasses.fields(ScenarioConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ScenarioConfig(**data), sweep, solver


@dataclass
class Topology:
    sbs_positions: np.ndarray   # (B, 2)
    dl_positions: np.ndarray    # (K_D, 2)
    dl_cell: np.ndarray         # (K_D,) serving SBS
    ul_positions: np.ndarray    # (K_U, 2)
    ul_cell: np.ndarray         # (K_U,)

    @property
    def num_sbs(self):
        return len(self.sbs_positions)

    def dl_set(self, b):
        return np.flatnonzero(self.dl_cell == b)

    def ul_set(self, b):
        return np.flatnonzero(self.ul_cell == b)


@dataclass
class TrafficState:
    q_dl: np.ndarray
    q_ul: np.ndarray


@dataclass
class EnergyProfile:
    harvest_rate: np.ndarray
    leftover: np.ndarray
    battery_max: float
    period: float


def rng_streams(seed):
    """Independent generators for topology, channels and randomization."""
    ss = np.random.SeedSequence(int(seed))
    return [np.random.default_rng(s) for s in ss.spawn(3)]


def _uniform_disc(rng, count, radius, inner=0.0):
    r = np.sqrt(rng.uniform(inner ** 2, radius ** 2, size=count))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=count)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi)])


def generate_topology(config, rng=None):
    """Drop ``num_sbs`` SBSs uniformly in the macro disc, then the configured
    number of DL and UL users uniformly inside every small cell."""
    config.validate()
    if rng is None:
        rng = rng_streams(config.seed)[0]
    B = config.num_sbs
    sbs = _uniform_disc(rng, B, config.macro_radius)
    dl_cell = np.repeat(np.arange(B), config.dl_ues_per_cell)
    ul_cell = np.repeat(np.arange(B), config.ul_ues_per_cell)
    dl = sbs[dl_cell] + _uniform_disc(rng, len(dl_cell), config.cell_radius, config.min_distance)
    ul = sbs[ul_cell] + _uniform_disc(rng, len(ul_cell), config.cell_radius, config.min_distance)
    return Topology(sbs, dl, dl_cell, ul, ul_cell)


def reference_queues(k_dl, k_ul):
    """First ``k_dl`` / ``k_ul`` entries of the reference buffer vectors.

    The reference UL vector is longer than its user count; the surplus tail is
    dropped with a warning.
    """
    if k_dl > len(REFERENCE_Q_DL) or k_ul > len(REFERENCE_Q_UL):
        raise ValueError("reference buffers only cover 20 DL / 22 UL users")
    if k_ul == 20:
        warnings.warn("reference UL buffer vector has 22 entries for 20 users; "
                      "using the first 20", stacklevel=2)
    return list(REFERENCE_Q_DL[:k_dl]), list(REFERENCE_Q_UL[:k_ul])


def init_queues(config, values=None, rng=None):
    """Buffer lengths in bits. ``values`` is an optional ``(q_dl, q_ul)`` pair;
    otherwise the config's explicit lists, otherwise uniform integers."""
    if values is None and config.queues_dl is not None and config.queues_ul is not None:
        values = (config.queues_dl, config.queues_ul)
    if values is not None:
        q_dl = np.asarray(values[0], dtype=float)
        q_ul = np.asarray(values[1], dtype=float)
        if q_dl.shape != (config.k_dl,):
            raise ValueError(f"expected {config.k_dl} DL buffer entries, got {q_dl.size}")
        if q_ul.shape != (config.k_ul,):
            raise ValueError(f"expected {config.k_ul} UL buffer entries, got {q_ul.size}")
    else:
        if rng is None:
            rng = np.random.default_rng(config.seed)
        q_dl = rng.integers(config.queue_low, config.queue_high + 1, size=config.k_dl).astype(float)
        q_ul = rng.integers(config.queue_low, config.queue_high + 1, size=config.k_ul).astype(float)
    if np.any(q_dl < 0) or np.any(q_ul < 0):
        raise ValueError("buffer lengths must be non-negative")
    return TrafficState(q_dl, q_ul)


def energy_profile(config):
    B = config.num_sbs
    return EnergyProfile(np.full(B, float(config.harvest_power)),
                         np.full(B, float(config.leftover_power)),
                         float(config.battery_max), float(config.scheduling_period))


def available_power(profile):
    """Per-SBS power budget min(B_max, T*P_H + T*P_B) / T."""
    T = profile.period
    energy = np.minimum(profile.battery_max,
                        T * np.asarray(profile.harvest_rate) + T * np.asarray(profile.leftover))
    return energy / T


@dataclass
class Instance:
    """Everything the optimizer needs besides the channels."""

    config: ScenarioConfig
    topology: Topology
    traffic: TrafficState
    p_avail: np.ndarray
    dl_carriers: np.ndarray = field(default=None)   # bool (N,)
    ul_carriers: np.ndarray = field(default=None)
    sic_order: dict = None                            # cell -> UL decoding order

    def __post_init__(self):
        N = self.config.num_subcarriers
        if self.dl_carriers is None or self.ul_carriers is None:
            self.dl_carriers, self.ul_carriers = carrier_masks(self.config.duplex, N)

    @property
    def B(self):
        return self.config.num_sbs

    @property
    def N(self):
        return self.config.num_subcarriers

    @property
    def k_dl(self):
        return len(self.topology.dl_cell)

    @property
    def k_ul(self):
        return len(self.topology.ul_cell)


def carrier_masks(duplex, N):
    """FD: every carrier carries both directions. HD: the first ceil(N/2)
    carriers are DL-only and the rest UL-only (same split in every cell)."""
    if duplex == "FD":
        return np.ones(N, dtype=bool), np.ones(N, dtype=bool)
    if N < 2:
        raise ValueError("half duplex needs at least two sub-carriers")
    n_dl = int(math.ceil(N / 2))
    dl = np.zeros(N, dtype=bool)
    dl[:n_dl] = True
    return dl, ~dl


def build_instance(config, traffic=None, topology=None):
    if topology is None:
        topology = generate_topology(config)
    if traffic is None:
        traffic = init_queues(config)
    return Instance(config, topology, traffic, available_power(energy_profile(config)))
