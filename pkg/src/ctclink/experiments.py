"""Link-level and system-level experiment drivers.

Ties the codec, the PHY simulation, and the receiver together into seeded,
reproducible sweeps: frame error rate versus receive power under several
WiFi traffic scenarios, the same sweep across energy-detection registers,
multicell detection grids, and the closed-form rate/airtime table.  Every
run is deterministic for a fixed seed and emits plain CSV.
"""

from __future__ import annotations

import concurrent.futures
import math
from dataclasses import dataclass, replace

import numpy as np

from . import analytics
from .codec import CodingScheme, build_frame, get_scheme
from .demod import DecodedFrame, Demodulator, ReceiverConfig, measure_fer_ser
from .multicell import GridResult, build_hex_deployment, grid_evaluate
from .phy import (
    CsatConfig,
    TrafficTrace,
    generate_waveform,
    poisson_traffic,
    sample_mac_states,
    saturated_traffic,
)
from .radio import RadioLink, map_ed_register

SCENARIOS = ("clear", "background-light", "background-high", "apdl-light", "apdl-high")

# Light traffic: 10 Mbit/s of 1500-byte frames, each 222 us on air at 54 Mbit/s.
LIGHT_RATE_FPS = 833.0
WIFI_FRAME_US = 222.0
# Backlogged senders aggregate: burst airtime varies up to the 802.11n
# A-MPDU limit instead of a single 222 us frame.
SATURATED_BURST_US = (1000.0, 5500.0)
# Probability that a saturated sender launches the burst that no longer fits
# the sensed idle run, overrunning into the LTE ON phase.
STRADDLE_PROB = 0.035
# Fast per-tick measurement noise of the energy detector.
DEFAULT_ED_NOISE_SIGMA_DB = 0.6

_NETWORK_ID_BITS = 32
_CLUSTER_ID_BITS = 16
_N_CLUSTERS = 6


@dataclass(frozen=True)
class ExperimentSpec:
    """One sweep: a traffic scenario, receive powers, and an ED register."""

    scenario: str = "clear"
    powers_dbm: tuple[float, ...] = ()
    theta: int = 28
    seed: int = 1
    repetitions: int = 4
    frames_per_rep: int = 50
    scheme: str = "wide20"
    cycle_ms: float = 40.0
    on_ms: float = 20.0

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.repetitions < 1:
            raise ValueError("need at least one repetition")
        if self.frames_per_rep < 1:
            raise ValueError("need at least one frame per repetition")
        powers = tuple(float(p) for p in self.powers_dbm) or default_power_sweep(self.theta)
        if list(powers) != sorted(powers):
            raise ValueError("power sweep must be sorted ascending")
        object.__setattr__(self, "powers_dbm", powers)

    @property
    def csat(self) -> CsatConfig:
        if not float(self.cycle_ms).is_integer() or not float(self.on_ms).is_integer():
            raise ValueError("cycle and ON durations must be whole milliseconds")
        return CsatConfig(int(self.cycle_ms), int(self.on_ms))

    @property
    def frames_per_point(self) -> int:
        return self.repetitions * self.frames_per_rep


def default_power_sweep(theta: int, span_db: float = 4.0, step_db: float = 0.5) -> tuple[float, ...]:
    """Receive powers bracketing the register's threshold symmetrically."""
    center = map_ed_register(theta)
    n = int(round(span_db / step_db))
    return tuple(center + step_db * i for i in range(-n, n + 1))


def wilson_interval(successes: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("need at least one trial")
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials))
    # the interval always contains the point estimate; min/max guard the
    # one-ulp rounding at the 0 and 1 endpoints
    return max(0.0, min(p, center - half)), min(1.0, max(p, center + half))


# ---------------------------------------------------------------------------
# Single-stream simulation.
# ---------------------------------------------------------------------------

def scenario_traffic(
    scenario: str,
    lte_energy: np.ndarray,
    busy_mask: np.ndarray,
    rng: np.random.Generator,
) -> TrafficTrace | None:
    """WiFi activity at the monitoring node for one named scenario."""
    if scenario == "clear":
        return None
    kind = "tx" if scenario.startswith("apdl") else "rx"
    if scenario.endswith("light"):
        return poisson_traffic(lte_energy, busy_mask, LIGHT_RATE_FPS, WIFI_FRAME_US, kind, rng)
    return saturated_traffic(
        lte_energy, busy_mask, SATURATED_BURST_US, kind, rng, straddle_prob=STRADDLE_PROB
    )


def _random_payload(rng: np.random.Generator) -> tuple[int, tuple[int, ...]]:
    network_id = int(rng.integers(0, 1 << _NETWORK_ID_BITS))
    clusters = tuple(int(c) for c in rng.integers(0, 1 << _CLUSTER_ID_BITS, size=_N_CLUSTERS))
    return network_id, clusters


def align_to_schedule(
    frames: list[DecodedFrame],
    n_frames: int,
    lead_windows: int,
    config: ReceiverConfig,
) -> list[DecodedFrame | None]:
    """Match decoded frames to their transmit slots by sync position.

    The preamble peak of frame i lands at a known sample index; anything
    not matching a slot (late re-syncs, truncated tails) is discarded, and
    empty slots stay None so the metrics count them as lost.
    """
    period = config.preamble_len + config.frame_symbols * config.samples_per_cycle
    out: list[DecodedFrame | None] = [None] * n_frames
    tolerance = config.samples_per_cycle - 1
    for frame in frames:
        if not frame.complete:
            continue
        slot = round((frame.sync_t - lead_windows - config.preamble_len + 1) / period)
        if not 0 <= slot < n_frames:
            continue
        expected = lead_windows + config.preamble_len - 1 + slot * period
        if abs(frame.sync_t - expected) <= tolerance and out[slot] is None:
            out[slot] = frame
    return out


def run_stream(
    scheme: CodingScheme,
    csat: CsatConfig,
    link: RadioLink,
    scenario: str,
    n_frames: int,
    rng: np.random.Generator,
    ed_noise_sigma_db: float = DEFAULT_ED_NOISE_SIGMA_DB,
) -> tuple[float, float]:
    """(FER, SER) of one continuous stream of frames with fresh traffic."""
    tx_symbols = []
    schedules = []
    for _ in range(n_frames):
        network_id, clusters = _random_payload(rng)
        stream = build_frame(network_id, clusters, scheme)
        tx_symbols.append(list(stream.data))
        schedules.extend(stream.schedules())
    wave = generate_waveform(csat, schedules)
    config = ReceiverConfig(scheme, csat)
    lead_windows = int(rng.integers(0, 2 * config.samples_per_cycle))
    wave = wave.with_lead_in(5 * lead_windows)

    sensed = link.mean_rx_dbm() >= link.ed_threshold_dbm
    busy = wave.tx if sensed else np.zeros(wave.n_ticks, dtype=bool)
    traffic = scenario_traffic(scenario, wave.tx, busy, rng)
    series = sample_mac_states(
        wave, link, traffic, ed_noise_sigma_db=ed_noise_sigma_db, rng=rng
    )

    decoded = Demodulator(config)
    frames = decoded.feed(series) + decoded.finish()
    aligned = align_to_schedule(frames, n_frames, lead_windows, config)
    return measure_fer_ser(tx_symbols, aligned)


# ---------------------------------------------------------------------------
# Sweeps.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    scenario: str
    theta: int
    power_dbm: float
    fer: float
    ser: float
    fer_lo: float
    fer_hi: float
    n_frames: int


@dataclass
class SweepResult:
    spec: ExperimentSpec
    points: list[SweepPoint]

    def fer_curve(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.array([p.power_dbm for p in self.points]),
            np.array([p.fer for p in self.points]),
        )

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("scenario,theta,power_dbm,fer,ser,fer_lo,fer_hi,n_frames\n")
            for p in self.points:
                fh.write(
                    f"{p.scenario},{p.theta},{p.power_dbm:g},{p.fer:.6f},{p.ser:.6f},"
                    f"{p.fer_lo:.6f},{p.fer_hi:.6f},{p.n_frames}\n"
                )


def _run_point(spec: ExperimentSpec, point_index: int) -> SweepPoint:
    power = spec.powers_dbm[point_index]
    scheme = get_scheme(spec.scheme)
    link = RadioLink.at_rx_power(power, ed_register=spec.theta)
    frame_errors = 0
    symbol_errors = 0.0
    for rep in range(spec.repetitions):
        rng = np.random.default_rng([spec.seed, spec.theta, point_index, rep])
        fer, ser = run_stream(scheme, spec.csat, link, spec.scenario, spec.frames_per_rep, rng)
        frame_errors += round(fer * spec.frames_per_rep)
        symbol_errors += ser * spec.frames_per_rep
    n = spec.frames_per_point
    lo, hi = wilson_interval(frame_errors, n)
    return SweepPoint(
        spec.scenario,
        spec.theta,
        power,
        frame_errors / n,
        symbol_errors / n,
        lo,
        hi,
        n,
    )


def run_link_sweep(spec: ExperimentSpec, max_workers: int | None = None) -> SweepResult:
    """FER/SER versus receive power; points run in parallel, output in order."""
    indices = range(len(spec.powers_dbm))
    with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as pool:
        points = list(pool.map(lambda i: _run_point(spec, i), indices))
    return SweepResult(spec, points)


@dataclass(frozen=True)
class KneeSummary:
    theta: int
    theta_dbm: float
    knee_dbm: float
    drop_dbm: float
    width_db: float


@dataclass
class EdSweepResult:
    sweeps: dict[int, SweepResult]
    knees: list[KneeSummary]

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("scenario,theta,power_dbm,fer,ser,fer_lo,fer_hi,n_frames\n")
            for theta in sorted(self.sweeps):
                for p in self.sweeps[theta].points:
                    fh.write(
                        f"{p.scenario},{p.theta},{p.power_dbm:g},{p.fer:.6f},{p.ser:.6f},"
                        f"{p.fer_lo:.6f},{p.fer_hi:.6f},{p.n_frames}\n"
                    )

    def knees_to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("theta,theta_dbm,knee_dbm,drop_dbm,width_db\n")
            for k in self.knees:
                fh.write(
                    f"{k.theta},{k.theta_dbm:g},{k.knee_dbm:g},{k.drop_dbm:g},{k.width_db:g}\n"
                )


def knee_metrics(
    powers: np.ndarray,
    fers: np.ndarray,
    low: float = 0.1,
    high: float = 0.9,
) -> tuple[float, float, float]:
    """(knee, drop, width) of an FER-vs-power curve.

    knee: lowest power from which FER stays at or below ``low``; drop:
    highest power below the knee where FER is still at or above ``high``.
    NaNs when the curve never settles.
    """
    powers = np.asarray(powers, dtype=float)
    fers = np.asarray(fers, dtype=float)
    order = np.argsort(powers)
    powers, fers = powers[order], fers[order]
    knee = math.nan
    for i in range(len(powers)):
        if np.all(fers[i:] <= low):
            knee = float(powers[i])
            below = powers[:i][fers[:i] >= high]
            drop = float(below[-1]) if len(below) else math.nan
            return knee, drop, (knee - drop if not math.isnan(drop) else math.nan)
    return math.nan, math.nan, math.nan


def run_ed_sweep(
    spec: ExperimentSpec,
    thetas: tuple[int, ...] = (3, 28),
    max_workers: int | None = None,
) -> EdSweepResult:
    """Link sweep per ED register; powers re-centered on each register."""
    sweeps: dict[int, SweepResult] = {}
    knees: list[KneeSummary] = []
    for theta in thetas:
        sub = replace(spec, theta=theta, powers_dbm=default_power_sweep(theta))
        result = run_link_sweep(sub, max_workers=max_workers)
        sweeps[theta] = result
        powers, fers = result.fer_curve()
        knee, drop, width = knee_metrics(powers, fers)
        knees.append(KneeSummary(theta, map_ed_register(theta), knee, drop, width))
    return EdSweepResult(sweeps, knees)


# ---------------------------------------------------------------------------
# System-level runs.
# ---------------------------------------------------------------------------

@dataclass
class MulticellRun:
    station_count: int
    results: dict[float, GridResult]

    def histogram_rows(self) -> list[tuple[float, int, int]]:
        rows = []
        for sigma in sorted(self.results):
            for count, n_points in sorted(self.results[sigma].histogram().items()):
                rows.append((sigma, int(count), int(n_points)))
        return rows

    def summary_to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("sigma_db,n_detected,n_points\n")
            for sigma, count, n_points in self.histogram_rows():
                fh.write(f"{sigma:g},{count},{n_points}\n")


def run_multicell(
    station_count: int = 100,
    sigmas_db: tuple[float, ...] = (0.0, 6.0),
    seed: int = 1,
    grid_step_m: float = 2.0,
    side_m: float = 140.0,
) -> MulticellRun:
    """Detected-BS-count grids with and without shadowing."""
    deployment = build_hex_deployment(station_count)
    results = {}
    for sigma in sigmas_db:
        rng = np.random.default_rng([seed, int(round(10 * sigma))])
        results[float(sigma)] = grid_evaluate(
            deployment,
            grid_step_m=grid_step_m,
            side_m=side_m,
            shadowing_sigma_db=sigma,
            rng=rng,
        )
    return MulticellRun(station_count, results)


def run_analytics(
    ks=range(0, 10),
    duties=analytics.DEFAULT_DUTIES,
    cycles_ms=analytics.DEFAULT_CYCLES_MS,
) -> list[analytics.AnalyticsPoint]:
    """Closed-form rate/airtime table (no simulation)."""
    return analytics.rate_airtime_table(ks=ks, duties=duties, cycles_ms=cycles_ms)
