"""Benchmark the receiver-scan kernels: compiled extension vs pure Python.

Both backends are imported directly (no environment games) and run on the
same cleaned sample streams; outputs are asserted identical before any
timing is reported.  Two stream flavors are timed: a clean loopback, where
the event-jumping fallback has little to do, and a noisy stream near the
detection threshold, where re-synchronization churn dominates.

Usage::

    python3 benchmarks/bench_kernels.py [--frames 40] [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ctclink import _kernels_py, kernels
from ctclink.codec import build_frame, get_scheme
from ctclink.demod import ReceiverConfig, clean_signal
from ctclink.phy import CsatConfig, generate_waveform, sample_mac_states
from ctclink.radio import RadioLink

try:
    from ctclink import _kernels
except ImportError:  # pragma: no cover - extension not built
    _kernels = None


def build_stream(
    n_frames: int, seed: int, noise_sigma_db: float = 0.0, rx_dbm: float = -56.0
) -> tuple[np.ndarray, np.ndarray, ReceiverConfig]:
    """Cleaned samples + preamble correlation for an n_frames loopback."""
    scheme = get_scheme("wide20")
    csat = CsatConfig(40, 20)
    config = ReceiverConfig(scheme, csat)
    rng = np.random.default_rng(seed)
    frame = build_frame(0xC0FFEE42, (11, 22, 33, 44, 55, 66), scheme)
    schedules = list(frame.schedules()) * n_frames
    wave = generate_waveform(csat, schedules).with_lead_in(int(rng.integers(0, 800)))
    link = RadioLink.at_rx_power(rx_dbm, ed_register=28)
    series = sample_mac_states(
        wave, link, ed_noise_sigma_db=noise_sigma_db, rng=rng
    )
    cleaned = clean_signal(series, config.tau1, config.tau2, config.tau3)
    return cleaned, config.preamble_correlation(cleaned), config


def run_backend(fn, cleaned, pre, config, repeats: int):
    """(best seconds, frames) over `repeats` runs of one kernel."""
    args = (
        cleaned,
        pre,
        config.templates,
        int(config.samples_per_cycle),
        int(config.frame_symbols),
        float(config.tau_p),
    )
    best = float("inf")
    frames = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        frames, _ = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, frames


def assert_identical(a, b) -> None:
    assert len(a) == len(b), (len(a), len(b))
    for fa, fb in zip(a, b):
        assert fa[0] == fb[0] and fa[1] == fb[1] and fa[3] == fb[3]
        assert np.array_equal(fa[2], fb[2])


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--frames", type=int, default=40, help="frames per stream")
    parser.add_argument("--repeats", type=int, default=5, help="best-of repeats")
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args(argv)

    if _kernels is None:
        parser.error("compiled extension is not built; run pip install -e .")

    print(f"default backend: {kernels.backend()}")
    header = f"{'stream':<10} {'samples':>9} {'compiled':>11} {'python':>11} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for label, sigma, rx_dbm in (("clean", 0.0, -56.0), ("noisy", 0.6, -61.3)):
        cleaned, pre, config = build_stream(args.frames, args.seed, sigma, rx_dbm)
        t_c, frames_c = run_backend(_kernels.receiver_scan, cleaned, pre, config, args.repeats)
        t_py, frames_py = run_backend(_kernels_py.receiver_scan, cleaned, pre, config, args.repeats)
        assert_identical(frames_c, frames_py)
        print(
            f"{label:<10} {len(cleaned):>9} {t_c * 1e3:>9.2f} ms {t_py * 1e3:>9.2f} ms "
            f"{t_py / t_c:>7.1f}x   ({len(frames_c)} frames, outputs identical)"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
