"""Weighted Gower dissimilarity over the fixed variables.

Per-variable distances: scaled absolute difference for ordinal
(|a-b|/(levels-1)) and continuous (|a-b|/range), Hamming for nominal.
The weighted sum is clipped to [0, 1] so floating-point accumulation can
never push a distance past the theoretical maximum. Neighborhood membership
uses ``distance <= dstar`` everywhere (boundary ties are deterministic).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .data import CONTINUOUS, FIXED, MixedDataset, NOMINAL, ORDINAL
from .errors import ConfigError, ZeroRange


@dataclass(frozen=True)
class DistanceSpec:
    """Weights and per-variable metadata for the Gower distance.

    ``denoms`` holds levels-1 for ordinal, the observed range for continuous,
    and 1 for nominal variables. ``lows``/``highs`` bound each coordinate's
    support (level bounds for discrete, observed min/max for continuous) and
    double as the uniform prior box for mixture-component locations.
    """

    names: tuple[str, ...]
    kinds: tuple[str, ...]
    levels: np.ndarray
    denoms: np.ndarray
    lows: np.ndarray
    highs: np.ndarray
    weights: np.ndarray
    dstar: float

    def __post_init__(self):
        q = len(self.names)
        if q > 0:
            if np.any(self.weights < 0):
                raise ConfigError("distance weights must be nonnegative")
            if abs(self.weights.sum() - 1.0) > 1e-12:
                raise ConfigError("distance weights must sum to 1")
            for j, kind in enumerate(self.kinds):
                if kind == CONTINUOUS and self.denoms[j] <= 0 and self.weights[j] > 0:
                    raise ZeroRange(self.names[j])
        if not 0.0 <= self.dstar <= 1.0:
            raise ConfigError("dstar must lie in [0, 1]")

    @property
    def q(self) -> int:
        return len(self.names)

    def with_weights(self, weights) -> "DistanceSpec":
        return replace(self, weights=np.asarray(weights, dtype=float))

    def with_dstar(self, dstar: float) -> "DistanceSpec":
        return replace(self, dstar=float(dstar))


def spec_from_dataset(data: MixedDataset, weights=None, dstar: float = 0.5) -> DistanceSpec:
    """Build a DistanceSpec over the dataset's fixed variables.

    Default weights are equal (1/q). Continuous ranges are the observed
    sample ranges, frozen here.
    """
    names = tuple(data.names(role=FIXED))
    q = len(names)
    kinds, levels, denoms, lows, highs = [], [], [], [], []
    for name in names:
        spec = data.spec(name)
        col = data.columns[name]
        kinds.append(spec.kind)
        if spec.kind == ORDINAL:
            levels.append(spec.levels)
            denoms.append(spec.levels - 1.0)
            lows.append(1.0)
            highs.append(float(spec.levels))
        elif spec.kind == NOMINAL:
            levels.append(spec.levels)
            denoms.append(1.0)
            lows.append(1.0)
            highs.append(float(spec.levels))
        else:
            levels.append(0)
            denoms.append(float(col.max() - col.min()))
            lows.append(float(col.min()))
            highs.append(float(col.max()))
    if weights is None:
        w = np.full(q, 1.0 / q) if q else np.zeros(0)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (q,):
            raise ConfigError(f"expected {q} weights, got {w.shape}")
    return DistanceSpec(
        names=names,
        kinds=tuple(kinds),
        levels=np.asarray(levels, dtype=int),
        denoms=np.asarray(denoms, dtype=float),
        lows=np.asarray(lows, dtype=float),
        highs=np.asarray(highs, dtype=float),
        weights=w,
        dstar=float(dstar),
    )


def cross_distances(F: np.ndarray, G: np.ndarray, spec: DistanceSpec) -> np.ndarray:
    """All pairwise distances between rows of F (n, q) and rows of G (m, q)."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    n, m = F.shape[0], G.shape[0]
    out = np.zeros((n, m))
    for j in range(spec.q):
        w = spec.weights[j]
        if w == 0.0:
            continue
        a = F[:, j][:, None]
        b = G[:, j][None, :]
        if spec.kinds[j] == NOMINAL:
            dj = (a != b).astype(float)
        else:
            dj = np.minimum(np.abs(a - b) / spec.denoms[j], 1.0)
        out += w * dj
    return np.minimum(out, 1.0)


def gower_distance(f, f_prime, spec: DistanceSpec) -> float:
    """Weighted Gower distance between two fixed-variable vectors, in [0, 1]."""
    return float(cross_distances(np.asarray(f, dtype=float)[None, :],
                                 np.asarray(f_prime, dtype=float)[None, :], spec)[0, 0])


def rowwise_distances(F: np.ndarray, G: np.ndarray, spec: DistanceSpec) -> np.ndarray:
    """Distance between corresponding rows of two (n, q) matrices."""
    F = np.asarray(F, dtype=float)
    G = np.asarray(G, dtype=float)
    out = np.zeros(F.shape[0])
    for j in range(spec.q):
        w = spec.weights[j]
        if w == 0.0:
            continue
        if spec.kinds[j] == NOMINAL:
            dj = (F[:, j] != G[:, j]).astype(float)
        else:
            dj = np.minimum(np.abs(F[:, j] - G[:, j]) / spec.denoms[j], 1.0)
        out += w * dj
    return np.minimum(out, 1.0)


def neighbor_mask(F: np.ndarray, locations: np.ndarray, spec: DistanceSpec) -> np.ndarray:
    """Boolean (n, N) matrix: True where a location lies within dstar of a row."""
    return cross_distances(F, locations, spec) <= spec.dstar


def neighborhood(f, locations: np.ndarray, spec: DistanceSpec) -> np.ndarray:
    """Indices (ascending, 0-based) of locations within dstar of f.

    The ascending global order is what defines the position of each component
    in the local stick-breaking weights. May be empty.
    """
    d = cross_distances(np.asarray(f, dtype=float)[None, :], locations, spec)[0]
    return np.flatnonzero(d <= spec.dstar)


def pairwise_condensed(F: np.ndarray, spec: DistanceSpec) -> np.ndarray:
    """Upper-triangle (i < j) pairwise distances of the rows of F."""
    n = F.shape[0]
    full = cross_distances(F, F, spec)
    iu = np.triu_indices(n, 1)
    return full[iu]


def avg_neighbor_fraction(data: MixedDataset, spec: DistanceSpec) -> float:
    """Average over ordered pairs (i, i'), i != i', of 1{d(f_i, f_i') <= dstar}.

    This is the fraction of other observations sharing an observation's
    neighborhood, averaged over observations.
    """
    F = data.matrix(list(spec.names))
    if data.n < 2:
        raise ConfigError("need at least 2 rows")
    d = pairwise_condensed(F, spec)
    return float(np.mean(d <= spec.dstar))


def solve_dstar(data: MixedDataset, spec: DistanceSpec, target_r: float) -> float:
    """Smallest empirical pairwise-distance value at which the average
    neighbor fraction reaches ``target_r``."""
    if not 0.0 < target_r <= 1.0:
        raise ConfigError("target_r must be in (0, 1]")
    F = data.matrix(list(spec.names))
    if data.n < 2:
        raise ConfigError("need at least 2 rows")
    d = np.sort(pairwise_condensed(F, spec))
    frac = np.arange(1, d.size + 1) / d.size
    idx = int(np.searchsorted(frac, target_r, side="left"))
    idx = min(idx, d.size - 1)
    return float(d[idx])


_CACHE_MAGIC = b"CMMGOW1\x00"


def save_distance_cache(path, data: MixedDataset, spec: DistanceSpec) -> np.ndarray:
    """Compute and store the condensed pairwise distances, keyed by content hash.

    Layout: magic, 32-byte hex hash, uint64 pair count, little-endian float64
    payload (row-major upper triangle).
    """
    F = data.matrix(list(spec.names))
    d = pairwise_condensed(F, spec).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(data.content_hash().encode("ascii"))
        fh.write(struct.pack("<Q", d.size))
        fh.write(d.tobytes())
    return d


def load_distance_cache(path, data: MixedDataset) -> np.ndarray | None:
    """Load cached condensed distances; None on any mismatch."""
    try:
        with open(path, "rb") as fh:
            if fh.read(len(_CACHE_MAGIC)) != _CACHE_MAGIC:
                return None
            if fh.read(32).decode("ascii", "replace") != data.content_hash():
                return None
            (count,) = struct.unpack("<Q", fh.read(8))
            payload = fh.read(8 * count)
            if len(payload) != 8 * count:
                return None
            return np.frombuffer(payload, dtype="<f8").copy()
    except OSError:
        return None
