"""LTE-U duty-cycle waveforms and the WiFi-side MAC-state sampler.

The transmitter side lays puncture schedules into the ON phases of a CSAT
duty cycle on a 50 us tick grid.  The receiver side is a model of what a
WiFi NIC exposes: per 250 us window, the fraction of time spent idle,
receiving, transmitting, and sensing energy without packet reception
(intf).  That intf fraction is the side channel's only observable.

Tick rules, in precedence order: the node's own transmissions win
(half-duplex), then decoded WiFi receptions, then energy above the ED
threshold from any LTE source or from undecodable WiFi frames, then idle.
A WiFi frame counts as decoded when it starts on a tick where no LTE
envelope is active; frames that start under LTE energy are corrupted and
only contribute energy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .codec import PunctureSchedule
from .radio import RadioLink

RESOLUTION_US = 50
WINDOW_US = 250
CYCLE_CHOICES = (40, 80, 160)
# a >=2 ms puncture is required within every 20 ms of ON time
MAX_ON_RUN_MS = 20
SAFETY_GAP_MS = 2


class SchedulingError(ValueError):
    """A symbol cannot be placed inside the configured ON phase."""


@dataclass(frozen=True)
class CsatConfig:
    """CSAT duty cycle: cycle length and ON time, duty capped at 50%."""

    cycle_ms: int
    on_ms: float

    def __post_init__(self) -> None:
        if self.cycle_ms not in CYCLE_CHOICES:
            raise ValueError(f"cycle_ms must be one of {CYCLE_CHOICES}")
        if not 0 < self.on_ms <= 0.5 * self.cycle_ms:
            raise ValueError("ON time must be positive with duty at most 50%")

    @property
    def duty(self) -> float:
        return self.on_ms / self.cycle_ms


@dataclass
class Waveform:
    """Tick-level transmit pattern of one LTE-U source.

    tx is the actual transmission (punctures are off); envelope is the
    nominal ON phase mask that carrier-sensing WiFi senders react to.
    """

    resolution_us: int
    csat: CsatConfig
    tx: np.ndarray
    envelope: np.ndarray
    symbol_starts: list[tuple[int, PunctureSchedule]] = field(default_factory=list)

    @property
    def n_ticks(self) -> int:
        return len(self.tx)

    @property
    def duration_us(self) -> int:
        return self.n_ticks * self.resolution_us

    @property
    def n_cycles(self) -> int:
        return self.n_ticks // (self.csat.cycle_ms * 1000 // self.resolution_us)

    def measured_duty(self) -> float:
        """Envelope duty over the whole cycles contained in the waveform."""
        cyc = self.csat.cycle_ms * 1000 // self.resolution_us
        whole = self.n_cycles * cyc
        return float(self.envelope[:whole].mean())

    def with_lead_in(self, n_ticks: int) -> "Waveform":
        """Same waveform preceded by silence, for start-offset experiments."""
        pad = np.zeros(n_ticks, dtype=bool)
        return Waveform(
            self.resolution_us,
            self.csat,
            np.concatenate([pad, self.tx]),
            np.concatenate([pad, self.envelope]),
            [(t + n_ticks, s) for t, s in self.symbol_starts],
        )

    def validate(self) -> None:
        """Check the coexistence constraint: no TX run longer than 20 ms."""
        limit = MAX_ON_RUN_MS * 1000 // self.resolution_us
        padded = np.concatenate([[0], self.tx.astype(np.int8), [0]])
        edges = np.flatnonzero(np.diff(padded))
        runs = edges[1::2] - edges[::2]
        if runs.size and runs.max() > limit:
            raise ValueError(f"TX run of {runs.max()} ticks exceeds the 20 ms limit")


def _trailing_gap_ms(schedule: PunctureSchedule) -> int:
    """Length of the punctured run ending at the symbol's last slot."""
    gap = 0
    pos = set(schedule.positions)
    for slot in range(schedule.symbol_ms - 1, -1, -1):
        if slot in pos:
            gap += 1
        else:
            break
    return gap


def generate_waveform(
    csat: CsatConfig,
    symbols: Sequence[PunctureSchedule],
    n_cycles: int | None = None,
    resolution_us: int = RESOLUTION_US,
) -> Waveform:
    """Lay symbols head-to-tail into consecutive ON phases.

    A symbol fits while its transmit span ends inside the ON phase; the
    trailing mandatory gap may extend into the OFF phase.  Leftover ON
    time after the symbols (and symbol-free cycles) transmits plainly
    with a 2 ms safety gap after every 18 ms so no run exceeds 20 ms.
    """
    per_ms = 1000 // resolution_us
    cycle_ticks = csat.cycle_ms * per_ms
    on_ticks = round(csat.on_ms * per_ms)

    # assign symbols to (cycle, offset_ms) slots
    placed: list[tuple[int, int, PunctureSchedule]] = []
    cycle, offset_ms = 0, 0
    for sched in symbols:
        span = sched.symbol_ms - _trailing_gap_ms(sched)
        if span * per_ms > on_ticks:
            raise SchedulingError(
                f"symbol transmit span {span} ms exceeds ON phase {csat.on_ms} ms"
            )
        if (offset_ms + span) * per_ms > on_ticks:
            cycle, offset_ms = cycle + 1, 0
        placed.append((cycle, offset_ms, sched))
        offset_ms += sched.symbol_ms

    used_cycles = (placed[-1][0] + 1) if placed else 1
    total_cycles = used_cycles if n_cycles is None else n_cycles
    if n_cycles is not None and used_cycles > n_cycles:
        raise SchedulingError(f"symbols need {used_cycles} cycles, got {n_cycles}")

    envelope = np.zeros(total_cycles * cycle_ticks, dtype=bool)
    for c in range(total_cycles):
        envelope[c * cycle_ticks:c * cycle_ticks + on_ticks] = True
    tx = envelope.copy()

    symbol_starts = []
    last_footprint = {}  # cycle -> ticks covered by symbols
    for c, off_ms, sched in placed:
        base = c * cycle_ticks + off_ms * per_ms
        symbol_starts.append((base, sched))
        for slot in sched.positions:
            tx[base + slot * per_ms:base + (slot + 1) * per_ms] = False
        last_footprint[c] = (off_ms + sched.symbol_ms) * per_ms

    # safety punctures in symbol-free ON time
    run_limit = MAX_ON_RUN_MS * per_ms
    chunk = (MAX_ON_RUN_MS - SAFETY_GAP_MS) * per_ms
    gap = SAFETY_GAP_MS * per_ms
    for c in range(total_cycles):
        start = c * cycle_ticks + last_footprint.get(c, 0)
        end = c * cycle_ticks + on_ticks
        if start >= end:
            continue
        carry = 0  # TX run carried across the boundary from the last symbol
        t = start
        while t > c * cycle_ticks and tx[t - 1]:
            carry += 1
            t -= 1
        pos = start
        while pos < end:
            if carry + (end - pos) <= run_limit:
                break  # rest of the ON phase fits in one legal run
            budget = chunk - carry
            if budget < 0:
                raise SchedulingError("symbol leaves no room for a safety gap")
            tx[pos + budget:min(pos + budget + gap, end)] = False
            pos += budget + gap
            carry = 0

    return Waveform(resolution_us, csat, tx, envelope, symbol_starts)


# ---------------------------------------------------------------------------
# WiFi traffic traces.
# ---------------------------------------------------------------------------

@dataclass
class TrafficTrace:
    """Per-tick WiFi activity at the sampling node.

    tx: the node transmits.  rx_locked: a frame the NIC decodes.
    rx_unlocked: a corrupted frame, energy only.
    """

    tx: np.ndarray
    rx_locked: np.ndarray
    rx_unlocked: np.ndarray

    @classmethod
    def silent(cls, n_ticks: int) -> "TrafficTrace":
        z = np.zeros(n_ticks, dtype=bool)
        return cls(z, z.copy(), z.copy())

    @property
    def n_ticks(self) -> int:
        return len(self.tx)


def _mark_frame(trace: TrafficTrace, start: int, n: int, kind: str, lte_envelope: np.ndarray) -> None:
    end = min(start + n, trace.n_ticks)
    if start >= trace.n_ticks:
        return
    if kind == "tx":
        trace.tx[start:end] = True
        return
    if lte_envelope[start]:
        # preamble already buried under LTE energy: never locks
        trace.rx_unlocked[start:end] = True
        return
    # locked while the channel stays clean; from the first LTE tick on the
    # NIC loses the frame and only sees energy
    overlap = lte_envelope[start:end]
    stomp = int(np.argmax(overlap)) if overlap.any() else end - start
    trace.rx_locked[start:start + stomp] = True
    trace.rx_unlocked[start + stomp:end] = True


def poisson_traffic(
    lte_envelope: np.ndarray,
    busy_mask: np.ndarray,
    rate_fps: float,
    frame_us: float,
    kind: str,
    rng: np.random.Generator,
    resolution_us: int = RESOLUTION_US,
) -> TrafficTrace:
    """Open-loop arrivals: frames queue behind each other and defer to the
    sender's busy mask, then run to completion once started."""
    n_ticks = len(lte_envelope)
    trace = TrafficTrace.silent(n_ticks)
    frame_ticks = max(1, round(frame_us / resolution_us))
    duration_s = n_ticks * resolution_us / 1e6
    n_frames = rng.poisson(rate_fps * duration_s)
    arrivals = np.sort(rng.integers(0, n_ticks, size=n_frames))
    free_at = 0
    for arr in arrivals:
        start = max(int(arr), free_at)
        while start < n_ticks and busy_mask[start]:
            start += 1
        if start >= n_ticks:
            break
        _mark_frame(trace, start, frame_ticks, kind, lte_envelope)
        free_at = start + frame_ticks
    return trace


def saturated_traffic(
    lte_envelope: np.ndarray,
    busy_mask: np.ndarray,
    frame_us: float | tuple[float, float],
    kind: str,
    rng: np.random.Generator,
    straddle_prob: float = 0.0,
    gap_us: tuple[float, float] = (50.0, 200.0),
    resolution_us: int = RESOLUTION_US,
) -> TrafficTrace:
    """Backlogged sender: fills every idle run with frames separated by
    contention gaps.  frame_us may be a (low, high) range, drawn per
    launch, for senders whose aggregated burst length varies.  With
    probability straddle_prob the frame that no longer fits an idle run
    is launched anyway and overruns into the LTE ON phase, which models
    imperfect carrier sensing at the run boundary.
    """
    n_ticks = len(lte_envelope)
    trace = TrafficTrace.silent(n_ticks)

    def draw_frame_ticks() -> int:
        us = rng.uniform(*frame_us) if isinstance(frame_us, tuple) else frame_us
        return max(1, round(us / resolution_us))

    padded = np.concatenate([[1], busy_mask.astype(np.int8), [1]])
    edges = np.flatnonzero(np.diff(padded))
    for run_start, run_end in zip(edges[::2], edges[1::2]):
        pos = int(run_start)
        while pos < run_end:
            pos += max(1, round(rng.uniform(*gap_us) / resolution_us))
            if pos >= run_end:
                break
            frame_ticks = draw_frame_ticks()
            if pos + frame_ticks <= run_end:
                _mark_frame(trace, pos, frame_ticks, kind, lte_envelope)
                pos += frame_ticks
            else:
                if rng.random() < straddle_prob:
                    _mark_frame(trace, pos, frame_ticks, kind, lte_envelope)
                break
    return trace


# ---------------------------------------------------------------------------
# MAC-state sampling.
# ---------------------------------------------------------------------------

@dataclass
class MacStateSeries:
    """Per-window MAC-state fractions, the receiver's observable."""

    window_us: int
    idle: np.ndarray
    rx: np.ndarray
    tx: np.ndarray
    intf: np.ndarray

    @property
    def n_samples(self) -> int:
        return len(self.idle)

    @property
    def t_us(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.window_us

    def validate(self) -> None:
        total = self.idle + self.rx + self.tx + self.intf
        if not np.all(np.abs(total - 1.0) < 1e-9):
            raise ValueError("MAC-state fractions must sum to 1 per window")
        for arr in (self.idle, self.rx, self.tx, self.intf):
            if np.any(arr < -1e-12) or np.any(arr > 1 + 1e-12):
                raise ValueError("fractions must lie in [0, 1]")

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t_us,idle,rx,tx,intf\n")
            for t, i, r, x, f in zip(self.t_us, self.idle, self.rx, self.tx, self.intf):
                fh.write(f"{t},{i:.6f},{r:.6f},{x:.6f},{f:.6f}\n")

    @classmethod
    def from_csv(cls, path: str) -> "MacStateSeries":
        data = np.genfromtxt(path, delimiter=",", names=True)
        data = np.atleast_1d(data)
        window = int(data["t_us"][1] - data["t_us"][0]) if len(data) > 1 else WINDOW_US
        return cls(
            window_us=window,
            idle=np.asarray(data["idle"], dtype=float),
            rx=np.asarray(data["rx"], dtype=float),
            tx=np.asarray(data["tx"], dtype=float),
            intf=np.asarray(data["intf"], dtype=float),
        )


def sample_mac_states(
    waveforms: Waveform | Sequence[Waveform],
    links: RadioLink | Sequence[RadioLink],
    traffic: TrafficTrace | None = None,
    window_us: int = WINDOW_US,
    ed_noise_sigma_db: float = 0.0,
    rng: np.random.Generator | None = None,
) -> MacStateSeries:
    """Simulate the NIC's per-window MAC-state fractions.

    Each (waveform, link) pair is one LTE source; a tick registers intf
    when any transmitting source's instantaneous receive power (mean plus
    optional fast measurement noise) reaches that link's ED threshold.
    """
    if isinstance(waveforms, Waveform):
        waveforms = [waveforms]
    if isinstance(links, RadioLink):
        links = [links]
    if len(waveforms) != len(links):
        raise ValueError("need exactly one RadioLink per waveform")
    resolution = waveforms[0].resolution_us
    if window_us % resolution:
        raise ValueError("window must be a multiple of the simulation resolution")
    n_ticks = max(w.n_ticks for w in waveforms)

    detect = np.zeros(n_ticks, dtype=bool)
    for wave, link in zip(waveforms, links):
        if wave.resolution_us != resolution:
            raise ValueError("all waveforms must share one resolution")
        on = np.zeros(n_ticks, dtype=bool)
        on[:wave.n_ticks] = wave.tx
        level = link.mean_rx_dbm()
        theta = link.ed_threshold_dbm
        if ed_noise_sigma_db > 0:
            margin = 8.0 * ed_noise_sigma_db
            if level - theta >= margin:
                detect |= on
            elif theta - level < margin:
                if rng is None:
                    raise ValueError("measurement noise needs a random generator")
                noisy = level + rng.normal(0.0, ed_noise_sigma_db, size=n_ticks)
                detect |= on & (noisy >= theta)
        else:
            if level >= theta:
                detect |= on

    if traffic is None:
        traffic = TrafficTrace.silent(n_ticks)
    if traffic.n_ticks != n_ticks:
        raise ValueError("traffic trace length must match the waveform")

    tx = traffic.tx
    rx = ~tx & traffic.rx_locked
    intf = ~tx & ~rx & (detect | traffic.rx_unlocked)
    idle = ~tx & ~rx & ~intf

    per_win = window_us // resolution
    n_win = n_ticks // per_win
    cut = n_win * per_win

    def frac(mask: np.ndarray) -> np.ndarray:
        return mask[:cut].reshape(n_win, per_win).mean(axis=1)

    series = MacStateSeries(window_us, frac(idle), frac(rx), frac(tx), frac(intf))
    series.validate()
    return series
