"""Sweep orchestration and chain running."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..data import CONTINUOUS
from ..errors import ConfigError
from ..model import Hyperpriors, ModelState, Workspace, init_state
from ..rng import KeyedRng
from . import updates


@dataclass
class ChainConfig:
    """Chain-control knobs: length, burn-in, thinning, and how many completed
    datasets to emit for multiple imputation.

    ``permute_component_order`` runs the per-component atom and location
    updates in a permuted order each sweep; per-update keyed streams make the
    trajectory identical either way, so the flag exists to exercise (and let
    tests assert) that order independence.
    """

    iterations: int
    burn_in: int
    thin: int = 1
    seed: int = 0
    n_completed: int = 1
    checkpoint_path: str | None = None
    permute_component_order: bool = False

    def __post_init__(self):
        if not self.burn_in < self.iterations:
            raise ConfigError("burn_in must be smaller than iterations")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if self.n_completed < 1:
            raise ConfigError("need at least one completed dataset")
        if self.iterations - self.burn_in < self.n_completed:
            raise ConfigError("need at least one post-burn-in sweep per "
                              "completed dataset")


@dataclass
class Draws:
    """Thinned post-burn-in snapshots plus completed datasets and the trace."""

    states: list[ModelState]
    completed: list[dict[str, np.ndarray]]
    trace: np.ndarray
    trace_columns: list[str]
    ws: Workspace
    hyper: Hyperpriors
    config: ChainConfig

    def __len__(self) -> int:
        return len(self.states)


def gibbs_sweep(ws: Workspace, hyper: Hyperpriors, state: ModelState,
                key: KeyedRng, t: int, component_order: np.ndarray | None = None) -> None:
    """One full pass, in fixed order: latents/imputations, allocations,
    sticks, locations, atoms, hyperparameters.

    Every update draws from its own keyed stream, so skipped or reordered
    independent blocks cannot disturb the rest of the trajectory;
    ``component_order`` reorders the per-component loops without changing it.
    """
    N = hyper.n_components
    order = np.arange(N) if component_order is None else component_order
    D = ws.design_for(state.x_cur)
    updates.update_latents(ws, hyper, state, D, key.stream("latents", t))
    updates.impute_nominal(ws, hyper, state, key.stream("impute_x", t))
    D = ws.design_for(state.x_cur)

    updates.update_allocation(ws, hyper, state, D, key.stream("alloc", t))
    updates.update_sticks(ws, hyper, state, key.stream("sticks", t))

    members = updates.component_members(state.alloc, N)
    if not ws.global_dp and ws.q > 0:
        for h in order:
            updates.update_locations(ws, hyper, state, h, members[h],
                                     key.stream("locations", t, int(h)))
        state.nbr_mask = ws.neighbor_mask(state.gamma)

    for h in order:
        updates.update_beta(ws, hyper, state, h, members[h], D,
                            key.stream("beta", t, int(h)))
    for h in order:
        updates.update_sigma(ws, hyper, state, h, members[h], D,
                             key.stream("sigma", t, int(h)))
    for h in order:
        updates.update_psi(ws, hyper, state, h, members[h],
                           key.stream("psi", t, int(h)))

    updates.update_beta0(state, hyper, key.stream("beta0", t))
    updates.update_tau2(state, hyper, key.stream("tau2", t))
    updates.update_scale_s(state, hyper, key.stream("scale", t))
    updates.update_alpha(state, hyper, key.stream("alpha", t))


def completed_dataset(ws: Workspace, state: ModelState) -> dict[str, np.ndarray]:
    """Current completed values for every column, on the original scale."""
    out: dict[str, np.ndarray] = {}
    for name in ws.data.names():
        out[name] = ws.data.destandardize(name, ws.data.columns[name]) \
            if ws.data.spec(name).kind == CONTINUOUS else ws.data.columns[name].copy()
    for j, name in enumerate(ws.names_y):
        out[name] = state.y_cur[:, j].astype(float)
    for j, name in enumerate(ws.names_z):
        out[name] = ws.data.destandardize(name, state.wtilde[:, ws.p_o + j])
    for j, name in enumerate(ws.names_x):
        out[name] = state.x_cur[:, j].astype(float)
    return out


def trace_columns(ws: Workspace) -> list[str]:
    return ["iteration", "alpha", "active_components"] + [
        f"tau2_{i}" for i in range(ws.k)]


def run_chain(ws: Workspace, hyper: Hyperpriors, config: ChainConfig,
              key: KeyedRng | None = None) -> Draws:
    """Run one chain: init, sweeps, thinned snapshots, completed datasets.

    Completed datasets are captured at ``n_completed`` evenly spaced
    post-burn-in sweeps. A checkpoint is written on abort when
    ``config.checkpoint_path`` is set.
    """
    if key is None:
        key = KeyedRng(config.seed)
    state = init_state(ws, hyper, key)
    span = config.iterations - config.burn_in
    m = config.n_completed
    completed_at = {config.burn_in + ((i + 1) * span) // m for i in range(m)}

    states: list[ModelState] = []
    completed: list[dict[str, np.ndarray]] = []
    trace = np.empty((config.iterations, 3 + ws.k))
    try:
        for t in range(1, config.iterations + 1):
            order = None
            if config.permute_component_order:
                order = key.stream("component_order", t).permutation(hyper.n_components)
            gibbs_sweep(ws, hyper, state, key, t, component_order=order)
            trace[t - 1, 0] = t
            trace[t - 1, 1] = state.alpha
            trace[t - 1, 2] = np.unique(state.alloc).size
            trace[t - 1, 3:] = state.tau2
            if t > config.burn_in and (t - config.burn_in) % config.thin == 0:
                states.append(state.copy())
            if t in completed_at:
                completed.append(completed_dataset(ws, state))
    except Exception:
        if config.checkpoint_path is not None:
            state.save(config.checkpoint_path)
        raise
    _warn_on_truncation_pressure(ws, state)
    return Draws(states=states, completed=completed, trace=trace,
                 trace_columns=trace_columns(ws), ws=ws, hyper=hyper, config=config)


def _warn_on_truncation_pressure(ws: Workspace, state: ModelState) -> None:
    """Warn when some observation's whole neighborhood is occupied at chain
    end: its local truncation level may be binding."""
    occupied = np.zeros(state.n_components, dtype=int)
    occupied[np.unique(state.alloc)] = 1
    full = state.nbr_mask.astype(int) @ occupied == state.nbr_mask.sum(axis=1)
    if full.any():
        warnings.warn(
            f"{int(full.sum())} observation(s) end the chain with every "
            "neighborhood component occupied; consider raising n_components",
            RuntimeWarning, stacklevel=2)
