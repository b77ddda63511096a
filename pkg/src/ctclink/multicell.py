"""Hexagonal multi-cell deployments and proximity detection.

Adjacent base stations are grouped into clusters of up to three so that
cluster members transmit identical control frames (no intra-cluster
interference on the side channel).  Six time-multiplexed cluster
configurations — the two triangle orientations of the lattice in three
shift phases each — cover every edge of every cell, so any receiver that
hears only the members of one cluster can decode that cluster's ID field.
The union of the decoded clusters' members is the proximity estimate.

Grid-scale runs use the threshold decodability model: a field decodes when
every station above the receive sensitivity belongs to the field's
cluster.  A slow full-stack mode cross-checks selected points through the
real waveform, MAC-state sampler, and demodulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .codec import CodingScheme, N_CLUSTER_FIELDS, build_frame, get_scheme
from .demod import ReceiverConfig, demodulate
from .phy import CsatConfig, generate_waveform, sample_mac_states
from .radio import (
    NOISE_FLOOR_DBM,
    SENSITIVITY_DBM,
    PathlossModel,
    RadioLink,
    ShadowingField,
    dbm_to_mw,
)

HEX_SPACING_M = 50.0
N_SLOTS = 6

# axial-coordinate neighbor directions, counter-clockwise
_DIRECTIONS = ((1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1))


class UnsupportedTopologyError(ValueError):
    """The operation needs a hexagonal-lattice deployment."""


class CodebookLookupError(KeyError):
    """A decoded (slot, cluster) tuple is absent from the codebook."""


@dataclass(frozen=True)
class BaseStation:
    cell_id: int
    x_m: float
    y_m: float
    tx_power_dbm: float = 20.0


@dataclass
class Deployment:
    """Base stations on a triangular lattice, all sharing one channel."""

    stations: tuple[BaseStation, ...]
    spacing_m: float
    axial: dict[int, tuple[int, int]] = field(default_factory=dict)

    @property
    def n_cells(self) -> int:
        return len(self.stations)

    @property
    def cell_ids(self) -> tuple[int, ...]:
        return tuple(bs.cell_id for bs in self.stations)

    @property
    def positions_m(self) -> np.ndarray:
        return np.array([[bs.x_m, bs.y_m] for bs in self.stations])

    def neighbors(self, cell_id: int) -> tuple[int, ...]:
        """Cells at lattice distance one."""
        if not self.axial:
            raise UnsupportedTopologyError("deployment has no lattice coordinates")
        q, r = self.axial[cell_id]
        inverse = {qr: cid for cid, qr in self.axial.items()}
        out = []
        for dq, dr in _DIRECTIONS:
            hit = inverse.get((q + dq, r + dr))
            if hit is not None:
                out.append(hit)
        return tuple(sorted(out))

    def adjacent_pairs(self) -> tuple[tuple[int, int], ...]:
        pairs = set()
        for cid in self.cell_ids:
            for other in self.neighbors(cid):
                pairs.add((min(cid, other), max(cid, other)))
        return tuple(sorted(pairs))


def _axial_to_xy(q: int, r: int, spacing: float) -> tuple[float, float]:
    return spacing * (q + r / 2.0), spacing * (math.sqrt(3.0) / 2.0) * r


def build_hex_deployment(count: int, spacing_m: float = HEX_SPACING_M) -> Deployment:
    """Lattice filled ring by ring from the center, deterministic IDs."""
    if count < 1:
        raise ValueError("need at least one base station")
    if spacing_m <= 0:
        raise ValueError("spacing must be positive")
    coords: list[tuple[int, int]] = [(0, 0)]
    ring = 1
    while len(coords) < count:
        q, r = ring * _DIRECTIONS[4][0], ring * _DIRECTIONS[4][1]
        for d in range(6):
            for _ in range(ring):
                coords.append((q, r))
                q, r = q + _DIRECTIONS[d][0], r + _DIRECTIONS[d][1]
        ring += 1
    coords = coords[:count]
    stations = []
    axial = {}
    for cid, (q, r) in enumerate(coords):
        x, y = _axial_to_xy(q, r, spacing_m)
        stations.append(BaseStation(cid, x, y))
        axial[cid] = (q, r)
    return Deployment(tuple(stations), spacing_m, axial)


@dataclass
class ClusterConfiguration:
    """One time slot's disjoint grouping of cells into clusters."""

    slot: int
    clusters: dict[int, tuple[int, ...]]  # cluster_id -> member cells

    def cluster_of(self, cell_id: int) -> int:
        mapping = self.__dict__.get("_cell_to_cluster")
        if mapping is None:
            mapping = {
                cell: cluster_id
                for cluster_id, members in self.clusters.items()
                for cell in members
            }
            self.__dict__["_cell_to_cluster"] = mapping
        try:
            return mapping[cell_id]
        except KeyError:
            raise KeyError(f"cell {cell_id} is in no cluster of slot {self.slot}") from None


@dataclass
class Codebook:
    """Lookup from (configuration slot, cluster ID) to member cells."""

    entries: dict[tuple[int, int], tuple[int, ...]]
    n_slots: int = N_SLOTS

    def members(self, slot: int, cluster_id: int) -> tuple[int, ...]:
        try:
            return self.entries[(slot, cluster_id)]
        except KeyError:
            raise CodebookLookupError(
                f"no cluster {cluster_id} in configuration slot {slot}"
            ) from None

    def canonical_items(self) -> tuple[tuple[int, int, tuple[int, ...]], ...]:
        """Deterministic ordering used for serialization and hashing."""
        return tuple(
            (slot, cid, tuple(sorted(members)))
            for (slot, cid), members in sorted(self.entries.items())
        )


def _triad_anchors(q: int, r: int, orientation: str) -> list[tuple[int, int]]:
    """Anchor candidates whose triad of the given orientation contains (q, r)."""
    if orientation == "up":
        return [(q, r), (q - 1, r), (q, r - 1)]
    return [(q - 1, r - 1), (q - 1, r), (q, r - 1)]


def _triad_members(a: int, b: int, orientation: str) -> tuple[tuple[int, int], ...]:
    if orientation == "up":
        return ((a, b), (a + 1, b), (a, b + 1))
    return ((a + 1, b + 1), (a + 1, b), (a, b + 1))


def build_cluster_configurations(
    dep: Deployment,
) -> tuple[list[ClusterConfiguration], Codebook]:
    """Six overlapping slot configurations from triad tiling.

    Slots 1-3 partition the lattice into upward triangles in the three
    shift phases, slots 4-6 into downward ones, so every adjacent pair
    shares exactly one cluster per orientation.  Cells on the deployment
    boundary may land in truncated clusters of size one or two.  Within a
    slot, a cluster's ID is its smallest member cell ID.
    """
    if not dep.axial:
        raise UnsupportedTopologyError("deployment has no lattice coordinates")
    inverse = {qr: cid for cid, qr in dep.axial.items()}
    configurations = []
    entries: dict[tuple[int, int], tuple[int, ...]] = {}
    for slot in range(1, N_SLOTS + 1):
        orientation = "up" if slot <= 3 else "down"
        phase = (slot - 1) % 3
        by_anchor: dict[tuple[int, int], list[int]] = {}
        for cid, (q, r) in dep.axial.items():
            anchor = next(
                a for a in _triad_anchors(q, r, orientation)
                if (a[0] - a[1]) % 3 == phase
            )
            by_anchor.setdefault(anchor, []).append(cid)
        clusters = {}
        for anchor, members in by_anchor.items():
            members = tuple(sorted(members))
            clusters[min(members)] = members
        configurations.append(ClusterConfiguration(slot, clusters))
        for cluster_id, members in clusters.items():
            entries[(slot, cluster_id)] = members
    return configurations, Codebook(entries)


def example_codebook() -> Codebook:
    """Published seven-cell example: one center cell (4) with six neighbors.

    Only the two cluster rows quoted in the reference material are carried
    (IDs 4 and 5); truncated boundary clusters keep their partial member
    sets.  Lookup order is (slot, cluster): e.g. members(1, 5) = (0, 1, 4)
    and members(2, 4) = (3, 4, 6).
    """
    rows = {
        4: [(3, 6), (3, 4, 6), (4, 5, 6), (5, 6), (2, 4, 5), (2, 5)],
        5: [(0, 1, 4), (0, 1), (1, 2), (1, 2, 4), (1,), (6,)],
    }
    entries = {
        (slot, cluster_id): tuple(members)
        for cluster_id, per_slot in rows.items()
        for slot, members in enumerate(per_slot, start=1)
    }
    return Codebook(entries)


@dataclass(frozen=True)
class ProximityObservation:
    """Decoded (slot, cluster) tuples at one receiver location."""

    pairs: frozenset[tuple[int, int]]
    network_decoded: bool

    def __iter__(self):
        return iter(sorted(self.pairs))


def received_powers_dbm(
    dep: Deployment,
    points: np.ndarray,
    pathloss: PathlossModel | None = None,
    shadowing: ShadowingField | None = None,
) -> np.ndarray:
    """(n_points, n_cells) receive power per station, optionally shadowed."""
    pathloss = pathloss or PathlossModel()
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    delta = pts[:, None, :] - dep.positions_m[None, :, :]
    dist = np.maximum(np.hypot(delta[..., 0], delta[..., 1]), 1e-3)
    tx = np.array([bs.tx_power_dbm for bs in dep.stations])
    rx = tx[None, :] - pathloss.loss_db(dist)
    if shadowing is not None:
        rx = rx + shadowing.values_at(pts)
    return rx


def decodable_fields(
    rx_dbm: np.ndarray,
    configurations: Sequence[ClusterConfiguration],
    cell_ids: Sequence[int],
    sensitivity_dbm: float = SENSITIVITY_DBM,
) -> ProximityObservation:
    """Threshold decodability at one location.

    A cluster-ID field decodes when at least one member is at or above
    sensitivity and no station outside the cluster is.  The network-ID
    field decodes whenever anything is audible, since every station
    transmits it identically.
    """
    rx = np.asarray(rx_dbm, dtype=float)
    above = {cid for cid, p in zip(cell_ids, rx) if p >= sensitivity_dbm}
    if not above:
        return ProximityObservation(frozenset(), False)
    pairs = set()
    for config in configurations:
        ids = {config.cluster_of(c) for c in above}
        if len(ids) == 1:
            cluster_id = ids.pop()
            pairs.add((config.slot, cluster_id))
    return ProximityObservation(frozenset(pairs), True)


def observation_at(
    dep: Deployment,
    point: Sequence[float],
    configurations: Sequence[ClusterConfiguration] | None = None,
    sensitivity_dbm: float = SENSITIVITY_DBM,
    pathloss: PathlossModel | None = None,
    shadowing: ShadowingField | None = None,
) -> ProximityObservation:
    """Threshold-model observation at a single receiver location."""
    if configurations is None:
        configurations, _ = build_cluster_configurations(dep)
    rx = received_powers_dbm(dep, np.asarray(point, dtype=float)[None, :], pathloss, shadowing)
    return decodable_fields(rx[0], configurations, dep.cell_ids, sensitivity_dbm)


def estimate_proximity(
    observation: ProximityObservation | Iterable[tuple[int, int]],
    codebook: Codebook,
) -> set[int]:
    """Union of the member sets of every decoded (slot, cluster) tuple."""
    cells: set[int] = set()
    for slot, cluster_id in observation:
        cells.update(codebook.members(slot, cluster_id))
    return cells


def best_sinr_db(rx_dbm: np.ndarray, noise_floor_dbm: float = NOISE_FLOOR_DBM) -> np.ndarray:
    """Best-station SINR per point; with no interferer this is P/noise."""
    p_mw = dbm_to_mw(np.atleast_2d(rx_dbm))
    total = p_mw.sum(axis=1, keepdims=True)
    noise_mw = dbm_to_mw(noise_floor_dbm)
    sinr = p_mw / (noise_mw + (total - p_mw))
    return 10.0 * np.log10(sinr.max(axis=1))


@dataclass
class GridResult:
    """Per-point proximity statistics of one grid run."""

    points_m: np.ndarray  # (n, 2)
    n_detected: np.ndarray  # (n,)
    sinr_db_best: np.ndarray  # (n,)

    def histogram(self) -> dict[int, int]:
        values, counts = np.unique(self.n_detected, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x_m,y_m,n_detected,sinr_db_best\n")
            for (x, y), n, s in zip(self.points_m, self.n_detected, self.sinr_db_best):
                fh.write(f"{x:.2f},{y:.2f},{n},{s:.3f}\n")


def evaluate_points(
    dep: Deployment,
    points: np.ndarray,
    configurations: Sequence[ClusterConfiguration] | None = None,
    codebook: Codebook | None = None,
    sensitivity_dbm: float = SENSITIVITY_DBM,
    pathloss: PathlossModel | None = None,
    shadowing: ShadowingField | None = None,
) -> GridResult:
    """Proximity-set size and best SINR at explicit receiver locations."""
    if configurations is None or codebook is None:
        configurations, codebook = build_cluster_configurations(dep)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    rx = received_powers_dbm(dep, pts, pathloss, shadowing)
    counts = np.zeros(len(pts), dtype=int)
    for i in range(len(pts)):
        obs = decodable_fields(rx[i], configurations, dep.cell_ids, sensitivity_dbm)
        counts[i] = len(estimate_proximity(obs, codebook))
    return GridResult(pts, counts, best_sinr_db(rx))


def grid_evaluate(
    dep: Deployment,
    grid_step_m: float = 2.0,
    side_m: float = 140.0,
    sensitivity_dbm: float = SENSITIVITY_DBM,
    shadowing_sigma_db: float = 0.0,
    rng: np.random.Generator | None = None,
    pathloss: PathlossModel | None = None,
) -> GridResult:
    """Regular-grid proximity heatmap over a square centered on the lattice.

    The shadowing field (when enabled) is drawn once up front so every
    point sees one consistent spatially correlated realization.
    """
    half = side_m / 2.0
    axis = np.arange(-half, half + grid_step_m / 2.0, grid_step_m)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    points = np.column_stack([gx.ravel(), gy.ravel()])
    shadowing = None
    if shadowing_sigma_db > 0:
        shadowing = ShadowingField(
            shadowing_sigma_db,
            dep.n_cells,
            (-half, half, -half, half),
            rng=rng,
        )
    return evaluate_points(
        dep, points, sensitivity_dbm=sensitivity_dbm,
        pathloss=pathloss, shadowing=shadowing,
    )


def full_stack_check(
    dep: Deployment,
    points: np.ndarray,
    scheme: CodingScheme | None = None,
    csat: CsatConfig | None = None,
    network_id: int = 0x0A000001,
    sensitivity_dbm: float = SENSITIVITY_DBM,
    pathloss: PathlossModel | None = None,
) -> list[dict]:
    """Cross-check the threshold model against the real receiver chain.

    Every station transmits its own frame (shared network ID, its six
    per-slot cluster IDs) on a time-aligned duty cycle; the receiver's ED
    threshold is set to the sensitivity so audibility matches the model.
    Returns one record per point with both observations and a match flag.
    """
    scheme = scheme or get_scheme("wide20")
    csat = csat or CsatConfig(40, 20)
    pathloss = pathloss or PathlossModel()
    configurations, codebook = build_cluster_configurations(dep)
    cluster_ids = {
        bs.cell_id: [c.cluster_of(bs.cell_id) for c in configurations]
        for bs in dep.stations
    }
    waveforms = {
        bs.cell_id: generate_waveform(
            csat, list(build_frame(network_id, cluster_ids[bs.cell_id], scheme).schedules())
        )
        for bs in dep.stations
    }
    config = ReceiverConfig(scheme, csat)
    results = []
    for point in np.atleast_2d(np.asarray(points, dtype=float)):
        rx = received_powers_dbm(dep, point[None, :], pathloss)[0]
        analytic = decodable_fields(rx, configurations, dep.cell_ids, sensitivity_dbm)
        links = [
            RadioLink(
                distance_m=max(float(np.hypot(bs.x_m - point[0], bs.y_m - point[1])), 1e-3),
                tx_power_dbm=bs.tx_power_dbm,
                pathloss=pathloss,
                ed_threshold_dbm=sensitivity_dbm,
            )
            for bs in dep.stations
        ]
        series = sample_mac_states([waveforms[bs.cell_id] for bs in dep.stations], links)
        decoded = [f for f in demodulate(series, config) if f.complete]
        pairs = set()
        network_decoded = False
        if decoded:
            frame = decoded[0].frame
            network_decoded = frame.network_ok
            for j in range(N_CLUSTER_FIELDS):
                if frame.cluster_ok[j]:
                    pairs.add((j + 1, frame.cluster_ids[j]))
        results.append({
            "point": tuple(point),
            "analytic": analytic,
            "stack_pairs": pairs,
            "stack_network": network_decoded,
            "match": pairs == set(analytic.pairs)
            and network_decoded == analytic.network_decoded,
        })
    return results
