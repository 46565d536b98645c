"""Path loss, small-scale fading and the self-interference channel.

Channel dump format
-------------------
Plain text. The first line is ``fdcells-channels 1``; the second is
``sigma2 <sbs receiver> <ue receiver>`` in watts. Every array then follows as
a header line ``array <name> <ndim> <d0> <d1> ...`` and one line per innermost
row holding ``re im`` pairs, arrays flattened in row-major order. Floats use
17 significant digits so a round trip is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import db_to_linear, rng_streams

# (intercept, slope) per link class and LOS state, distance in km.
PATHLOSS = {
    ("SBS-SBS", True): (98.4, 20.9),
    ("SBS-SBS", False): (169.36, 40.0),
    ("UE-SBS", True): (103.8, 20.9),
    ("UE-SBS", False): (145.4, 37.5),
    ("UE-UE", True): (98.5, 20.0),
    ("UE-UE", False): (175.78, 40.0),
}

# Links closer than this are evaluated at this distance.
MIN_LINK_DISTANCE = 1.0  # metres


def pathloss_db(link, d, los):
    """Path loss in dB for distance ``d`` in kilometres."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    if (link, True) not in PATHLOSS:
        raise ValueError(f"unknown link class {link!r}")
    a_l, s_l = PATHLOSS[(link, True)]
    a_n, s_n = PATHLOSS[(link, False)]
    out = np.where(np.asarray(los, dtype=bool), a_l + s_l * np.log10(d), a_n + s_n * np.log10(d))
    return float(out) if out.ndim == 0 else out


def noise_power(bandwidth, noise_figure, density=-174.0):
    """Thermal noise power in watts over ``bandwidth`` Hz."""
    dbm = density + 10.0 * np.log10(bandwidth) + noise_figure
    return 10.0 ** (dbm / 10.0) / 1000.0


@dataclass(frozen=True)
class ChannelSet:
    """All complex channel coefficients of one scheduling period.

    Shapes: ``h_dl`` (B, K_D, N, M_T), ``h_ul`` (B, K_U, N, M_R),
    ``g`` (K_U, K_D, N), ``H_bs`` (B, B, N, M_R, M_T) where ``H_bs[c, b]`` maps
    SBS b's transmission onto SBS c's receiver (``c == b`` is self-interference).
    """

    h_dl: np.ndarray
    h_ul: np.ndarray
    g: np.ndarray
    H_bs: np.ndarray
    sigma2_sbs: float
    sigma2_ue: float

    def __post_init__(self):
        for name in ("h_dl", "h_ul", "g", "H_bs"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
            arr.setflags(write=False)
        if not (self.sigma2_sbs > 0 and self.sigma2_ue > 0):
            raise ValueError("noise powers must be positive")

    @property
    def shape(self):
        B, K_D, N, M_T = self.h_dl.shape
        return dict(B=B, K_D=K_D, K_U=self.h_ul.shape[1], N=N, M_T=M_T, M_R=self.h_ul.shape[3])


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _distances(a, b):
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    return np.maximum(d, MIN_LINK_DISTANCE)


def _path_gain(rng, link, d_m, los_distance):
    los = rng.uniform(size=d_m.shape) < np.exp(-d_m / los_distance)
    return db_to_linear(-pathloss_db(link, d_m / 1000.0, los))


def si_mean_matrix(kind, m_r, m_t):
    if kind == "ones":
        return np.ones((m_r, m_t), dtype=complex)
    return np.eye(m_r, m_t, dtype=complex)


def draw_si(rng, config, size=()):
    """Rician self-interference blocks of shape ``size + (M_R, M_T)``."""
    m_r, m_t = config.antennas_rx, config.antennas_tx
    var = float(db_to_linear(config.si_variance))
    K = float(config.rician_k)
    if np.isinf(K):
        mean_w, scat_w = np.sqrt(var), 0.0
    else:
        mean_w, scat_w = np.sqrt(var * K / (1.0 + K)), np.sqrt(var / (1.0 + K))
    mean = mean_w * si_mean_matrix(config.si_matrix, m_r, m_t)
    return mean + scat_w * _cn(rng, tuple(size) + (m_r, m_t))


def draw_channels(topology, config, rng=None):
    """Path loss times unit-variance complex Gaussian fading for every link;
    LOS state is drawn once per link and shared by all sub-carriers."""
    if rng is None:
        rng = rng_streams(config.seed)[1]
    B, N = config.num_sbs, config.num_subcarriers
    m_t, m_r = config.antennas_tx, config.antennas_rx
    if topology.num_sbs != B:
        raise ValueError("topology does not match config")
    K_D, K_U = len(topology.dl_cell), len(topology.ul_cell)
    d0 = config.los_distance
    sbs = topology.sbs_positions

    gain_dl = _path_gain(rng, "UE-SBS", _distances(sbs, topology.dl_positions), d0)
    h_dl = np.sqrt(gain_dl)[:, :, None, None] * _cn(rng, (B, K_D, N, m_t))
    gain_ul = _path_gain(rng, "UE-SBS", _distances(sbs, topology.ul_positions), d0)
    h_ul = np.sqrt(gain_ul)[:, :, None, None] * _cn(rng, (B, K_U, N, m_r))
    gain_uu = _path_gain(rng, "UE-UE", _distances(topology.ul_positions, topology.dl_positions), d0)
    g = np.sqrt(gain_uu)[:, :, None] * _cn(rng, (K_U, K_D, N))

    H_bs = np.zeros((B, B, N, m_r, m_t), dtype=complex)
    if B > 1:
        gain_bb = _path_gain(rng, "SBS-SBS", _distances(sbs, sbs), d0)
        H_bs = np.sqrt(gain_bb)[:, :, None, None, None] * _cn(rng, (B, B, N, m_r, m_t))
    si = draw_si(rng, config, (B, N))
    for b in range(B):
        H_bs[b, b] = si[b]

    bw = config.bandwidth / N
    return ChannelSet(h_dl, h_ul, g, H_bs,
                      float(noise_power(bw, config.noise_figure_sbs, config.noise_density)),
                      float(noise_power(bw, config.noise_figure_ue, config.noise_density)))


_ARRAYS = ("h_dl", "h_ul", "g", "H_bs")


def dump_channels(ch, path):
    with open(path, "w") as fh:
        fh.write("fdcells-channels 1\n")
        fh.write(f"sigma2 {ch.sigma2_sbs!r} {ch.sigma2_ue!r}\n")
        for name in _ARRAYS:
            arr = getattr(ch, name)
            fh.write(f"array {name} {arr.ndim} {' '.join(map(str, arr.shape))}\n")
            rows = arr.reshape(-1, arr.shape[-1])
            for row in rows:
                pairs = np.column_stack([row.real, row.imag]).ravel()
                fh.write(" ".join(f"{v:.17g}" for v in pairs) + "\n")


def load_channels(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0].split() != ["fdcells-channels", "1"]:
        raise ValueError("not a channel dump")
    s = lines[1].split()
    if s[0] != "sigma2":
        raise ValueError("missing sigma2 line")
    arrays = {}
    pos = 2
    while pos < len(lines):
        head = lines[pos].split()
        if head[0] != "array":
            raise ValueError(f"expected array header, got {lines[pos]!r}")
        name, ndim = head[1], int(head[2])
        shape = tuple(int(v) for v in head[3:3 + ndim])
        n_rows = int(np.prod(shape[:-1])) if ndim > 1 else 1
        block = lines[pos + 1:pos + 1 + n_rows]
        vals = np.array([float(v) for ln in block for v in ln.split()])
        if vals.size != 2 * int(np.prod(shape)):
            raise ValueError(f"array {name}: wrong number of entries")
        arrays[name] = (vals[0::2] + 1j * vals[1::2]).reshape(shape)
        pos += 1 + n_rows
    missing = set(_ARRAYS) - set(arrays)
    if missing:
        raise ValueError(f"dump lacks arrays {sorted(missing)}")
    return ChannelSet(arrays["h_dl"], arrays["h_ul"], arrays["g"], arrays["H_bs"],
                      float(s[1]), float(s[2]))
