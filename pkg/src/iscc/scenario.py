"""System configuration, random channel generation, and unit conversions.

Geometry: the base station sits at the origin; sensors, targets, and
clutters are drawn independently and uniformly in the disk of the cell
radius.  Every link segment gets i.i.d. Rayleigh small-scale fading scaled
by the square root of the linear path loss of its distance.  Cascaded
sensor->target->BS and sensor->clutter->BS channels are stored both as the
assembled rank-one N x M matrices and as their two vector factors.

Randomness uses the counter-based Philox generator with one independent
stream per (quantity, link) pair, so e.g. adding clutters to a config does
not perturb the sensor or target channels drawn under the same seed.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np

MIN_LINK_DISTANCE_M = 10.0


class NonPositiveDistance(ValueError):
    pass


class ConfigError(ValueError):
    pass


def path_loss_db(distance_km):
    """Path loss in dB at a link distance given in kilometers."""
    if distance_km <= 0:
        raise NonPositiveDistance(f"distance must be positive, got {distance_km}")
    return 128.1 + 37.6 * math.log10(distance_km)


def path_loss_linear(distance_km):
    return 10.0 ** (-path_loss_db(distance_km) / 10.0)


def dbm_to_watts(p_dbm):
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


def watts_to_dbm(p_watts):
    return 10.0 * math.log10(p_watts) + 30.0


def snr_to_power(snr_db, noise_power_w):
    """Transmit power budget implied by a transmit SNR (dB) over the noise floor."""
    if noise_power_w <= 0:
        raise ConfigError("noise power must be positive")
    return noise_power_w * 10.0 ** (snr_db / 10.0)


def _broadcast(value, n, name):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        arr = np.full(n, float(arr[0]))
    if arr.shape != (n,):
        raise ConfigError(f"{name}: expected scalar or length-{n} sequence")
    return arr


@dataclass
class SystemConfig:
    """All scalar system dimensions, powers, weights, and noise parameters."""

    n_bs_antennas: int = 8            # N
    n_sensor_antennas: int = 2        # M
    n_sensors: int = 3                # K
    n_targets: int = 1                # I
    n_model_params: int = 1           # L
    n_comm_streams: int = 1           # J
    n_clutters: int = 1               # O
    cell_radius_m: float = 100.0
    noise_power_w: float = 1e-8
    snr_db: float = 5.0
    tx_power_budget_w: float | None = None   # per sensor; derived from snr_db if None
    rms_target: np.ndarray = field(default=1.0)    # per-target reflection RMS
    rms_clutter: np.ndarray = field(default=1.0)   # per-clutter reflection RMS
    weight_sens: np.ndarray = field(default=1.0)
    weight_comp: np.ndarray = field(default=1.0)
    weight_comm: np.ndarray = field(default=1.0)
    dataset_sizes: np.ndarray | None = None  # inert metadata; aggregation itself is uniform 1/K

    def __post_init__(self):
        for name in ("n_bs_antennas", "n_sensor_antennas", "n_sensors",
                     "n_targets", "n_model_params", "n_comm_streams"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_clutters < 0:
            raise ConfigError("n_clutters must be >= 0")
        if self.n_sensors * self.n_sensor_antennas > self.n_bs_antennas:
            raise ConfigError("antenna condition K*M <= N violated")
        if self.cell_radius_m <= 0 or self.noise_power_w <= 0:
            raise ConfigError("cell radius and noise power must be positive")
        if self.tx_power_budget_w is None:
            self.tx_power_budget_w = snr_to_power(self.snr_db, self.noise_power_w)
        if self.tx_power_budget_w <= 0:
            raise ConfigError("transmit power budget must be positive")
        self.rms_target = _broadcast(self.rms_target, self.n_targets, "rms_target")
        self.rms_clutter = _broadcast(self.rms_clutter, self.n_clutters, "rms_clutter")
        self.weight_sens = _broadcast(self.weight_sens, self.n_targets, "weight_sens")
        self.weight_comp = _broadcast(self.weight_comp, self.n_model_params, "weight_comp")
        wc = np.asarray(self.weight_comm, dtype=float)
        if wc.ndim <= 1 and wc.size == 1:
            wc = np.full((self.n_sensors, self.n_comm_streams), float(wc.reshape(-1)[0]))
        elif wc.ndim == 1 and wc.size == self.n_sensors * self.n_comm_streams:
            wc = wc.reshape(self.n_sensors, self.n_comm_streams)
        if wc.shape != (self.n_sensors, self.n_comm_streams):
            raise ConfigError("weight_comm: expected scalar or K x J array")
        self.weight_comm = wc
        if np.any(self.rms_target <= 0) or (self.n_clutters and np.any(self.rms_clutter <= 0)):
            raise ConfigError("reflection RMS values must be positive")
        for w in (self.weight_sens, self.weight_comp, self.weight_comm.ravel()):
            if np.any(w <= 0):
                raise ConfigError("all weights must be positive")
        if self.dataset_sizes is not None:
            self.dataset_sizes = _broadcast(self.dataset_sizes, self.n_sensors, "dataset_sizes")

    def with_updates(self, **kwargs):
        out = {name: getattr(self, name) for name in self.__dataclass_fields__}
        # per-dimension arrays were expanded in __post_init__; uniform ones
        # collapse back to scalars so dimension changes re-broadcast them
        for name in ("rms_target", "rms_clutter", "weight_sens",
                     "weight_comp", "weight_comm", "dataset_sizes"):
            v = out[name]
            if isinstance(v, np.ndarray):
                if v.size == 0:
                    out[name] = 1.0
                elif np.all(v == v.ravel()[0]):
                    out[name] = float(v.ravel()[0])
        out.update(kwargs)
        return SystemConfig(**out)


def desk_config(**overrides):
    """Small instance for tests and sweeps: N=8, M=2, K=3, single streams."""
    return SystemConfig(**overrides)


def table3_config(**overrides):
    """Paper-scale simulation profile (slow; gated behind --full in the CLI)."""
    base = dict(n_bs_antennas=64, n_sensor_antennas=3, n_sensors=20,
                n_targets=1, n_model_params=1, n_comm_streams=1, n_clutters=1,
                cell_radius_m=500.0, noise_power_w=dbm_to_watts(-50.0), snr_db=5.0)
    base.update(overrides)
    return SystemConfig(**base)


@dataclass(frozen=True)
class ChannelSet:
    """One realization of all channel matrices for a SystemConfig."""

    H: np.ndarray          # (K, N, M) sensor -> BS
    G: np.ndarray          # (K, I, N, M) cascaded sensor -> target -> BS
    g: np.ndarray          # (K, I, M) sensor-side factor of G
    gp: np.ndarray         # (K, I, N) BS-side factor of G
    F: np.ndarray          # (K, O, N, M) cascaded sensor -> clutter -> BS
    f: np.ndarray          # (K, O, M)
    fp: np.ndarray         # (K, O, N)
    rms_target: np.ndarray
    rms_clutter: np.ndarray
    noise_power_w: float
    d_sensor_bs_km: np.ndarray       # (K,)
    d_sensor_target_km: np.ndarray   # (K, I)
    d_target_bs_km: np.ndarray       # (I,)
    d_sensor_clutter_km: np.ndarray  # (K, O)
    d_clutter_bs_km: np.ndarray      # (O,)

    @property
    def n_sensors(self):
        return self.H.shape[0]

    @property
    def n_bs_antennas(self):
        return self.H.shape[1]

    @property
    def n_sensor_antennas(self):
        return self.H.shape[2]

    @property
    def n_targets(self):
        return self.G.shape[1]

    @property
    def n_clutters(self):
        return self.F.shape[1]


# Stream categories for per-link RNG splitting.
_STREAM = {"sensor_pos": 1, "target_pos": 2, "clutter_pos": 3,
           "H": 4, "g": 5, "gp": 6, "f": 7, "fp": 8, "signals": 9, "reflect": 10}


def link_rng(seed, category, a=0, b=0):
    """Independent Philox stream for one (quantity, link) pair under a seed."""
    sid = (_STREAM[category] << 40) | ((a & 0xFFFFF) << 20) | (b & 0xFFFFF)
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) | sid))


def _disk_point(rng, radius_m):
    r = radius_m * math.sqrt(rng.uniform())
    phi = 2.0 * math.pi * rng.uniform()
    return np.array([r * math.cos(phi), r * math.sin(phi)])


def _dist_km(p, q=None):
    d = np.linalg.norm(p if q is None else p - q)
    return max(d, MIN_LINK_DISTANCE_M) / 1000.0


def _fading(rng, shape, pl_linear):
    w = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return math.sqrt(pl_linear / 2.0) * w


def generate_channels(cfg: SystemConfig, seed: int) -> ChannelSet:
    """Draw one channel realization; a pure function of (cfg, seed)."""
    N, M = cfg.n_bs_antennas, cfg.n_sensor_antennas
    K, I, O = cfg.n_sensors, cfg.n_targets, cfg.n_clutters

    sensors = [_disk_point(link_rng(seed, "sensor_pos", k), cfg.cell_radius_m) for k in range(K)]
    targets = [_disk_point(link_rng(seed, "target_pos", i), cfg.cell_radius_m) for i in range(I)]
    clutters = [_disk_point(link_rng(seed, "clutter_pos", o), cfg.cell_radius_m) for o in range(O)]

    d_sb = np.array([_dist_km(p) for p in sensors])
    d_tb = np.array([_dist_km(p) for p in targets])
    d_cb = np.array([_dist_km(p) for p in clutters]) if O else np.zeros(0)
    d_st = np.array([[_dist_km(s, t) for t in targets] for s in sensors])
    d_sc = (np.array([[_dist_km(s, c) for c in clutters] for s in sensors])
            if O else np.zeros((K, 0)))

    H = np.stack([_fading(link_rng(seed, "H", k), (N, M), path_loss_linear(d_sb[k]))
                  for k in range(K)])

    g = np.zeros((K, I, M), dtype=np.complex128)
    gp = np.zeros((K, I, N), dtype=np.complex128)
    for k in range(K):
        for i in range(I):
            g[k, i] = _fading(link_rng(seed, "g", k, i), M, path_loss_linear(d_st[k, i]))
            gp[k, i] = _fading(link_rng(seed, "gp", k, i), N, path_loss_linear(d_tb[i]))
    G = gp[:, :, :, None] * g.conj()[:, :, None, :]

    f = np.zeros((K, O, M), dtype=np.complex128)
    fp = np.zeros((K, O, N), dtype=np.complex128)
    for k in range(K):
        for o in range(O):
            f[k, o] = _fading(link_rng(seed, "f", k, o), M, path_loss_linear(d_sc[k, o]))
            fp[k, o] = _fading(link_rng(seed, "fp", k, o), N, path_loss_linear(d_cb[o]))
    F = fp[:, :, :, None] * f.conj()[:, :, None, :]

    ch = ChannelSet(H=H, G=G, g=g, gp=gp, F=F, f=f, fp=fp,
                    rms_target=cfg.rms_target.copy(), rms_clutter=cfg.rms_clutter.copy(),
                    noise_power_w=cfg.noise_power_w,
                    d_sensor_bs_km=d_sb, d_sensor_target_km=d_st, d_target_bs_km=d_tb,
                    d_sensor_clutter_km=d_sc, d_clutter_bs_km=d_cb)
    for arr in (ch.H, ch.G, ch.g, ch.gp, ch.F, ch.f, ch.fp):
        arr.flags.writeable = False
    return ch


# --- flat key = value config files -----------------------------------------

_LIST_FIELDS = {"rms_target", "rms_clutter", "weight_sens", "weight_comp",
                "weight_comm", "dataset_sizes"}
_INT_FIELDS = {"n_bs_antennas", "n_sensor_antennas", "n_sensors", "n_targets",
               "n_model_params", "n_comm_streams", "n_clutters"}


def read_config(path) -> SystemConfig:
    """Parse a flat `key = value` config file (see docs/config.md)."""
    kwargs = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in _INT_FIELDS:
                kwargs[key] = int(value)
            elif key in _LIST_FIELDS:
                kwargs[key] = [float(v) for v in value.split(",")]
            elif key in SystemConfig.__dataclass_fields__:
                kwargs[key] = float(value)
            else:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
    return SystemConfig(**kwargs)


def write_config(cfg: SystemConfig, path):
    with open(path, "w") as fh:
        for name in SystemConfig.__dataclass_fields__:
            value = getattr(cfg, name)
            if value is None:
                continue
            if isinstance(value, np.ndarray):
                value = ",".join(repr(float(v)) for v in value.ravel())
            fh.write(f"{name} = {value}\n")
