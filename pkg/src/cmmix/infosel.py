"""Plug-in mutual information and forward feature selection for the distance.

Selection follows minimal-redundancy-maximal-relevance: seed with the fixed
variable whose best single MI against any nominal random variable is
largest, then repeatedly add the candidate maximizing (best MI with the
nominal targets) minus (average raw MI with the already-selected set).
Selection stops when no remaining candidate is relevant (normalized MI
against every target below t1) or every remaining candidate is redundant
(normalized MI from some selected variable above t2). Selected variables
share the distance weight equally.

All logs are natural; normalized quantities are base-invariant.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import FIXED, MixedDataset, NOMINAL, RANDOM
from .errors import ConfigError


class DegenerateColumnWarning(UserWarning):
    pass


def _is_integral(col: np.ndarray) -> bool:
    obs = col[~np.isnan(col)]
    return obs.size > 0 and np.all(obs == np.round(obs))


def discretize(col: np.ndarray, bins: int) -> np.ndarray:
    """Equal-frequency codes for a continuous column (NaN passes through as -1)."""
    out = np.full(col.shape, -1, dtype=int)
    obs = ~np.isnan(col)
    vals = col[obs]
    if vals.size == 0:
        return out
    edges = np.unique(np.quantile(vals, np.linspace(0, 1, bins + 1)[1:-1]))
    out[obs] = np.searchsorted(edges, vals, side="left")
    return out


def _codes(col: np.ndarray, bins: int) -> np.ndarray:
    col = np.asarray(col, dtype=float)
    if _is_integral(col):
        out = np.full(col.shape, -1, dtype=int)
        obs = ~np.isnan(col)
        out[obs] = col[obs].astype(int)
        return out
    return discretize(col, bins)


def entropy(a, bins: int = 10) -> float:
    """Plug-in entropy (nats) of a column; continuous values are discretized."""
    codes = _codes(np.asarray(a, dtype=float), bins)
    codes = codes[codes >= 0]
    if codes.size == 0:
        return 0.0
    counts = np.bincount(codes)
    p = counts[counts > 0] / codes.size
    return float(-(p * np.log(p)).sum())


def empirical_mi(a, b, bins: int = 10) -> float:
    """Plug-in mutual information (nats) between two columns.

    Missing entries are dropped pairwise; continuous columns are first cut
    into equal-frequency bins. Clamped at zero (the plug-in estimate is
    nonnegative up to float error). Degenerate columns (fewer than two
    distinct values) yield 0 with a warning.
    """
    ca = _codes(np.asarray(a, dtype=float), bins)
    cb = _codes(np.asarray(b, dtype=float), bins)
    keep = (ca >= 0) & (cb >= 0)
    ca, cb = ca[keep], cb[keep]
    if ca.size == 0 or np.unique(ca).size < 2 or np.unique(cb).size < 2:
        warnings.warn("degenerate column in MI estimate", DegenerateColumnWarning)
        return 0.0
    _, ia = np.unique(ca, return_inverse=True)
    _, ib = np.unique(cb, return_inverse=True)
    na, nb = ia.max() + 1, ib.max() + 1
    joint = np.bincount(ia * nb + ib, minlength=na * nb).reshape(na, nb) / ca.size
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    mi = float((joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])).sum())
    if mi < -1e-12:
        raise AssertionError(f"plug-in MI below zero: {mi}")
    return max(mi, 0.0)


def i_max(f_col, x_cols: list, bins: int = 10) -> float:
    """Largest MI between one candidate column and any of the target columns."""
    if not x_cols:
        raise ConfigError("need at least one target column")
    return max(empirical_mi(f_col, x, bins) for x in x_cols)


@dataclass
class MiReport:
    """Everything the selection run measured and decided."""

    f_names: list[str]
    x_names: list[str]
    i_fx: np.ndarray
    i_star_fx: np.ndarray
    i_max_fx: np.ndarray
    h_x: np.ndarray
    h_f: np.ndarray
    i_ff: np.ndarray
    i_star_ff: np.ndarray
    selected: list[int]
    trace: list[dict] = field(default_factory=list)
    stopped_by: str = ""
    weights: np.ndarray = None

    def selected_names(self) -> list[str]:
        return [self.f_names[i] for i in self.selected]

    def to_dict(self) -> dict:
        return {
            "f_names": self.f_names,
            "x_names": self.x_names,
            "i_fx": self.i_fx.tolist(),
            "i_star_fx": self.i_star_fx.tolist(),
            "i_max_fx": self.i_max_fx.tolist(),
            "h_x": self.h_x.tolist(),
            "h_f": self.h_f.tolist(),
            "i_ff": self.i_ff.tolist(),
            "i_star_ff": self.i_star_ff.tolist(),
            "selected": list(map(int, self.selected)),
            "selected_names": self.selected_names(),
            "trace": self.trace,
            "stopped_by": self.stopped_by,
            "weights": self.weights.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        lines = [f"{'variable':<20} {'I_max':>8} {'I*_max':>8} {'weight':>8}"]
        for i, name in enumerate(self.f_names):
            istar = self.i_star_fx[i].max() if self.i_star_fx.size else 0.0
            lines.append(f"{name:<20} {self.i_max_fx[i]:8.4f} {istar:8.4f} "
                         f"{self.weights[i]:8.4f}")
        lines.append(f"selected: {', '.join(self.selected_names())} "
                     f"(stopped by {self.stopped_by})")
        return "\n".join(lines)


def mrmr_from_tables(i_fx: np.ndarray, i_ff: np.ndarray, h_x: np.ndarray,
                     h_f: np.ndarray, t1: float, t2: float):
    """Run the forward selection given precomputed MI/entropy tables.

    Returns (selected indices, trace, stopping reason). Argmax ties break at
    the lowest index. Both stopping conditions are evaluated at the top of
    every iteration after the seed step.
    """
    if not (0 < t1 < 1 and 0 < t2 < 1):
        raise ConfigError("thresholds must lie strictly between 0 and 1")
    q = i_fx.shape[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        i_star_fx = np.where(h_x[None, :] > 0, i_fx / h_x[None, :], 0.0)
    i_max_fx = i_fx.max(axis=1)

    remaining = list(range(q))
    seed = int(np.argmax(i_max_fx))
    selected = [seed]
    remaining.remove(seed)
    trace = [{"step": 1, "chosen": seed, "score": float(i_max_fx[seed])}]
    stopped_by = "exhausted"
    while True:
        if not remaining:
            stopped_by = "exhausted"
            break
        rel = max(i_star_fx[l].max() for l in remaining)
        if rel < t1:
            stopped_by = "relevancy"
            break
        red = min(
            max((i_ff[s, l] / h_f[l] if h_f[l] > 0 else 0.0) for s in selected)
            for l in remaining
        )
        if red > t2:
            stopped_by = "redundancy"
            break
        scores = np.array([
            i_max_fx[l] - np.mean([i_ff[s, l] for s in selected]) for l in remaining
        ])
        pick = remaining[int(np.argmax(scores))]
        trace.append({"step": len(selected) + 1, "chosen": pick,
                      "score": float(scores.max())})
        selected.append(pick)
        remaining.remove(pick)
    return selected, trace, stopped_by


def mrmr_select(data: MixedDataset, t1: float = 0.05, t2: float = 0.8,
                bins: int = 10) -> MiReport:
    """Select fixed variables for the distance by mRMR with MI stopping rules.

    Candidates are the dataset's fixed columns; targets are its nominal
    random columns. The selected set gets weight 1/|selected| each, all
    other fixed variables weight 0.
    """
    f_names = data.names(role=FIXED)
    x_names = data.names(role=RANDOM, kind=NOMINAL)
    if not f_names:
        raise ConfigError("no fixed variables to select from")
    if not x_names:
        raise ConfigError("no nominal random variables to target")
    f_cols = [data.columns[n] for n in f_names]
    x_cols = [data.columns[n] for n in x_names]
    q, pn = len(f_cols), len(x_cols)

    i_fx = np.array([[empirical_mi(f, x, bins) for x in x_cols] for f in f_cols])
    h_x = np.array([entropy(x, bins) for x in x_cols])
    h_f = np.array([entropy(f, bins) for f in f_cols])
    i_ff = np.zeros((q, q))
    for a in range(q):
        for b in range(a + 1, q):
            i_ff[a, b] = i_ff[b, a] = empirical_mi(f_cols[a], f_cols[b], bins)

    selected, trace, stopped_by = mrmr_from_tables(i_fx, i_ff, h_x, h_f, t1, t2)
    weights = np.zeros(q)
    weights[selected] = 1.0 / len(selected)
    with np.errstate(divide="ignore", invalid="ignore"):
        i_star_fx = np.where(h_x[None, :] > 0, i_fx / h_x[None, :], 0.0)
        i_star_ff = np.where(h_f[None, :] > 0, i_ff / h_f[None, :], 0.0)
    return MiReport(
        f_names=f_names, x_names=x_names, i_fx=i_fx, i_star_fx=i_star_fx,
        i_max_fx=i_fx.max(axis=1), h_x=h_x, h_f=h_f, i_ff=i_ff,
        i_star_ff=i_star_ff, selected=selected, trace=trace,
        stopped_by=stopped_by, weights=weights,
    )
