"""JSON-able round-tripping of configs and fitted draws.

A fit directory is self-contained: the dataset (CSV + schema), the design,
distance, and hyperprior settings (manifest.json), thinned state snapshots
(npz), the trace (CSV), and completed datasets (CSV). ``load_draws``
reconstructs a live :class:`Draws` from it.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from .data import (
    DesignConfig,
    DummyOf,
    InteractionOf,
    Intercept,
    LinearOf,
    MixedDataset,
    VariableSpec,
    load_csv,
)
from .errors import ConfigError
from .gower import DistanceSpec
from .model import Hyperpriors, ModelState, build_workspace
from .sampler.sweep import ChainConfig, Draws


def term_to_dict(term) -> dict:
    if isinstance(term, Intercept):
        return {"kind": "intercept"}
    if isinstance(term, DummyOf):
        return {"kind": "dummy", "var": term.var, "level": term.level}
    if isinstance(term, LinearOf):
        return {"kind": "linear", "var": term.var}
    if isinstance(term, InteractionOf):
        return {"kind": "interaction", "left": term_to_dict(term.left),
                "right": term_to_dict(term.right)}
    raise ConfigError(f"unknown term {term!r}")


def term_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "intercept":
        return Intercept()
    if kind == "dummy":
        return DummyOf(d["var"], int(d["level"]))
    if kind == "linear":
        return LinearOf(d["var"])
    if kind == "interaction":
        return InteractionOf(term_from_dict(d["left"]), term_from_dict(d["right"]))
    raise ConfigError(f"unknown term kind {kind!r}")


def design_to_dict(design: DesignConfig) -> dict:
    return {"terms": [term_to_dict(t) for t in design.terms]}


def design_from_dict(d: dict) -> DesignConfig:
    return DesignConfig([term_from_dict(t) for t in d["terms"]])


def schema_to_dict(schema: list[VariableSpec]) -> dict:
    return {"columns": [
        {"name": s.name, "role": s.role, "kind": s.kind,
         **({"levels": s.levels} if s.levels is not None else {})}
        for s in schema
    ]}


def schema_from_dict(d: dict) -> list[VariableSpec]:
    return [VariableSpec(c["name"], c["role"], c["kind"], c.get("levels"))
            for c in d["columns"]]


def distance_to_dict(spec: DistanceSpec) -> dict:
    return {
        "names": list(spec.names), "kinds": list(spec.kinds),
        "levels": spec.levels.tolist(), "denoms": spec.denoms.tolist(),
        "lows": spec.lows.tolist(), "highs": spec.highs.tolist(),
        "weights": spec.weights.tolist(), "dstar": spec.dstar,
    }


def distance_from_dict(d: dict) -> DistanceSpec:
    return DistanceSpec(
        names=tuple(d["names"]), kinds=tuple(d["kinds"]),
        levels=np.asarray(d["levels"], dtype=int),
        denoms=np.asarray(d["denoms"], dtype=float),
        lows=np.asarray(d["lows"], dtype=float),
        highs=np.asarray(d["highs"], dtype=float),
        weights=np.asarray(d["weights"], dtype=float),
        dstar=float(d["dstar"]),
    )


def hyper_to_dict(h: Hyperpriors) -> dict:
    return {
        "a_alpha": h.a_alpha, "b_alpha": h.b_alpha,
        "a_tau": h.a_tau, "b_tau": h.b_tau, "tau2_max": h.tau2_max,
        "nu": h.nu, "a_s": h.a_s, "b_s_mat": h.b_s_mat.tolist(), "h": h.h,
        "dirichlet_a": [a.tolist() for a in h.dirichlet_a],
        "cutoffs": [[("-inf" if np.isneginf(c) else "inf" if np.isposinf(c) else c)
                     for c in cuts] for cuts in h.cutoffs],
        "n_components": h.n_components,
        "distance": distance_to_dict(h.distance) if h.distance is not None else None,
    }


def _parse_cut(c):
    if c == "-inf":
        return -np.inf
    if c == "inf":
        return np.inf
    return float(c)


def hyper_from_dict(d: dict) -> Hyperpriors:
    return Hyperpriors(
        a_alpha=d["a_alpha"], b_alpha=d["b_alpha"], a_tau=d["a_tau"],
        b_tau=d["b_tau"], tau2_max=d["tau2_max"], nu=d["nu"], a_s=d["a_s"],
        b_s_mat=np.asarray(d["b_s_mat"], dtype=float).reshape(
            len(d["b_s_mat"]), -1) if d["b_s_mat"] else np.zeros((0, 0)),
        h=d["h"],
        dirichlet_a=[np.asarray(a, dtype=float) for a in d["dirichlet_a"]],
        cutoffs=[np.array([_parse_cut(c) for c in cuts]) for cuts in d["cutoffs"]],
        n_components=int(d["n_components"]),
        distance=distance_from_dict(d["distance"]) if d.get("distance") else None,
    )


def write_trace_csv(path, trace: np.ndarray, columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in trace:
            w.writerow([f"{int(row[0])}"] + [repr(float(v)) for v in row[1:]])


def write_completed_csv(path, schema: list[VariableSpec], completed: dict) -> None:
    names = [s.name for s in schema]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        n = len(next(iter(completed.values())))
        for i in range(n):
            row = []
            for s in schema:
                v = completed[s.name][i]
                row.append(str(int(round(v))) if s.is_discrete else repr(float(v)))
            w.writerow(row)


def save_draws(draws: Draws, outdir) -> None:
    os.makedirs(outdir, exist_ok=True)
    ws = draws.ws
    manifest = {
        "schema": schema_to_dict(ws.data.schema),
        "design": design_to_dict(ws.design),
        "distance": distance_to_dict(ws.dist),
        "hyper": hyper_to_dict(draws.hyper),
        "global_dp": ws.global_dp,
        "chain": {"iterations": draws.config.iterations,
                  "burn_in": draws.config.burn_in, "thin": draws.config.thin,
                  "seed": draws.config.seed,
                  "n_completed": draws.config.n_completed},
        "n_states": len(draws.states),
        "trace_columns": draws.trace_columns,
    }
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    ws.data.write_csv(os.path.join(outdir, "dataset.csv"))
    write_trace_csv(os.path.join(outdir, "trace.csv"), draws.trace, draws.trace_columns)
    states_dir = os.path.join(outdir, "states")
    os.makedirs(states_dir, exist_ok=True)
    for i, st in enumerate(draws.states):
        st.save(os.path.join(states_dir, f"state_{i:05d}.npz"))
    for i, comp in enumerate(draws.completed):
        write_completed_csv(os.path.join(outdir, f"completed_{i:02d}.csv"),
                            ws.data.schema, comp)


def load_draws(outdir) -> Draws:
    with open(os.path.join(outdir, "manifest.json")) as fh:
        manifest = json.load(fh)
    schema = schema_from_dict(manifest["schema"])
    data = load_csv(os.path.join(outdir, "dataset.csv"), schema)
    design = design_from_dict(manifest["design"])
    dist = distance_from_dict(manifest["distance"])
    hyper = hyper_from_dict(manifest["hyper"])
    ws = build_workspace(data, design, dist, global_dp=manifest["global_dp"])
    states = [ModelState.load(os.path.join(outdir, "states", f"state_{i:05d}.npz"))
              for i in range(manifest["n_states"])]
    trace_rows = []
    with open(os.path.join(outdir, "trace.csv")) as fh:
        reader = csv.reader(fh)
        cols = next(reader)
        for row in reader:
            trace_rows.append([float(v) for v in row])
    chain = manifest["chain"]
    cfg = ChainConfig(iterations=chain["iterations"], burn_in=chain["burn_in"],
                      thin=chain["thin"], seed=chain["seed"],
                      n_completed=chain["n_completed"])
    return Draws(states=states, completed=[], trace=np.array(trace_rows),
                 trace_columns=cols, ws=ws, hyper=hyper, config=cfg)
