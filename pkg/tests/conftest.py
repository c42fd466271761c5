import numpy as np
import pytest

from cmmix import gower
from cmmix.data import MixedDataset, VariableSpec, default_design
from cmmix.model import build_workspace, default_hyperpriors, init_state
from cmmix.rng import KeyedRng


def make_mixed_dataset(n=40, seed=7, missing=True, k_y=3, d_x=2, k_f=3, d_f=2):
    """Small mixed dataset: one ordinal, one continuous, one nominal random
    variable; one ordinal and one nominal fixed variable."""
    rng = np.random.default_rng(seed)
    schema = [
        VariableSpec("y1", "random", "ordinal", k_y),
        VariableSpec("z1", "random", "continuous"),
        VariableSpec("x1", "random", "nominal", d_x),
        VariableSpec("f1", "fixed", "ordinal", k_f),
        VariableSpec("f2", "fixed", "nominal", d_f),
    ]
    raw = {
        "y1": rng.integers(1, k_y + 1, n).astype(float),
        "z1": rng.normal(1.0, 2.0, n),
        "x1": rng.integers(1, d_x + 1, n).astype(float),
        "f1": rng.integers(1, k_f + 1, n).astype(float),
        "f2": rng.integers(1, d_f + 1, n).astype(float),
    }
    if missing and n >= 12:
        raw["y1"][:3] = np.nan
        raw["z1"][3:6] = np.nan
        raw["x1"][6:9] = np.nan
    return MixedDataset.from_arrays(schema, raw)


def make_tiny_problem(dstar=0.5, n=4, n_components=3, seed=11, missing=True):
    """The tiny oracle instance: n=4, N=3, one of each random kind, q=2."""
    data = make_mixed_dataset(n=n, seed=seed, missing=False)
    if missing:
        raw = {name: data.destandardize(name, col.copy())
               if data.spec(name).kind == "continuous" else col.copy()
               for name, col in data.columns.items()}
        raw["y1"][0] = np.nan
        raw["z1"][1] = np.nan
        raw["x1"][2] = np.nan
        data = MixedDataset.from_arrays(data.schema, raw)
    design = default_design(data.schema)
    dist = gower.spec_from_dataset(data, dstar=dstar)
    hyper = default_hyperpriors(data, design, n_components=n_components, distance=dist)
    ws = build_workspace(data, design, dist)
    key = KeyedRng(seed)
    state = init_state(ws, hyper, key)
    return ws, hyper, state, key


@pytest.fixture
def tiny():
    return make_tiny_problem()
