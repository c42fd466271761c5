"""Model state, hyperprior defaults, initialization, and the joint density.

The mixture kernel couples a multivariate normal over (latent-ordinal,
continuous) coordinates, with mean a regression on the design vector, and
independent categorical distributions for nominal random variables. Mixture
weights are local: each observation draws its component from the set of
locations within ``dstar`` of its fixed values, through stick-breaking
weights read off in ascending global component order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import gower
from .data import (
    CONTINUOUS,
    DesignConfig,
    FIXED,
    MixedDataset,
    NOMINAL,
    ORDINAL,
    RANDOM,
    design_matrix,
)
from .errors import ConfigError, InitFailure
from .rng import KeyedRng, sample_wishart, truncated_invgamma, truncated_normal

KERNEL_SCALE_ESTIMATE = 1.5 ** 2  # typical variance of a standardized coordinate


@dataclass
class Hyperpriors:
    """Hyperprior constants and structural settings for one model fit."""

    a_alpha: float
    b_alpha: float
    a_tau: float
    b_tau: float
    tau2_max: float
    nu: float
    a_s: float
    b_s_mat: np.ndarray
    h: float
    dirichlet_a: list[np.ndarray]
    cutoffs: list[np.ndarray]
    n_components: int
    distance: gower.DistanceSpec | None = None

    def validate(self, p: int) -> None:
        if self.nu <= p + 1:
            raise ConfigError("nu must exceed (ordinal+continuous count) + 1")
        if self.a_alpha <= 0 or self.b_alpha <= 0 or self.a_tau <= 0 or self.b_tau <= 0:
            raise ConfigError("gamma/inverse-gamma hyperparameters must be positive")
        if self.tau2_max <= 0:
            raise ConfigError("tau2_max must be positive (np.inf disables the guard)")
        for cuts in self.cutoffs:
            interior = cuts[1:-1]
            if not (np.isneginf(cuts[0]) and np.isposinf(cuts[-1])
                    and np.all(np.diff(interior) > 0)):
                raise ConfigError("cutoffs must be -inf < strictly increasing < +inf")


def _default_cutoffs(levels: int) -> np.ndarray:
    if levels == 2:
        interior = np.array([0.0])
    else:
        interior = np.linspace(-3.0, 3.0, levels - 1)
    return np.concatenate(([-np.inf], interior, [np.inf]))


def default_hyperpriors(data: MixedDataset, design: DesignConfig,
                        n_components: int = 50, tau2_max: float = 6.0,
                        distance: gower.DistanceSpec | None = None) -> Hyperpriors:
    """Weakly informative defaults that center and scale the mixture kernel.

    With all continuous variables standardized and latent cutoffs spanning
    [-3, 3], each kernel coordinate has variance roughly 1.5^2 = v. The
    smallest shape/degree values keeping prior moments finite are used, and
    b_tau, h, B_S split the marginal kernel variance in three so that it
    comes out to v and each diagonal of a component covariance is centered
    at v/3 = 0.75.
    """
    p_o = len(data.names(role=RANDOM, kind=ORDINAL))
    p_c = len(data.names(role=RANDOM, kind=CONTINUOUS))
    p = p_o + p_c
    v = KERNEL_SCALE_ESTIMATE
    a_tau = 3.0
    a_s = p + 2.0
    nu = p + 2.0
    b_tau = (a_tau - 1.0) * v / 3.0
    h = v / 3.0
    b_s = (nu - p - 1.0) / (3.0 * a_s) * v * np.eye(p) if p else np.zeros((0, 0))
    dirichlet_a = [np.ones(data.spec(name).levels)
                   for name in data.names(role=RANDOM, kind=NOMINAL)]
    cutoffs = [_default_cutoffs(data.spec(name).levels)
               for name in data.names(role=RANDOM, kind=ORDINAL)]
    if distance is None and data.names(role=FIXED):
        distance = gower.spec_from_dataset(data, dstar=0.5)
    return Hyperpriors(
        a_alpha=0.5, b_alpha=0.5,
        a_tau=a_tau, b_tau=b_tau, tau2_max=tau2_max,
        nu=nu, a_s=a_s, b_s_mat=b_s, h=h,
        dirichlet_a=dirichlet_a, cutoffs=cutoffs,
        n_components=n_components, distance=distance,
    )


@dataclass
class Workspace:
    """Static problem structure shared by every update of a chain.

    Holds the split column arrays, the design compiler, and the distance
    spec. Immutable during sampling; all mutable quantities live in
    :class:`ModelState`.
    """

    data: MixedDataset
    design: DesignConfig
    dist: gower.DistanceSpec
    names_y: list[str]
    names_z: list[str]
    names_x: list[str]
    y_obs: np.ndarray
    y_miss: np.ndarray
    z_obs: np.ndarray
    z_miss: np.ndarray
    x_obs: np.ndarray
    x_miss: np.ndarray
    f_mat: np.ndarray
    levels_x: np.ndarray
    global_dp: bool = False
    _fixed_cols: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def p_o(self) -> int:
        return len(self.names_y)

    @property
    def p_c(self) -> int:
        return len(self.names_z)

    @property
    def p(self) -> int:
        return self.p_o + self.p_c

    @property
    def p_n(self) -> int:
        return len(self.names_x)

    @property
    def q(self) -> int:
        return self.dist.q

    @property
    def k(self) -> int:
        return self.design.k

    def design_for(self, x_cur: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        """Design matrix under the current nominal-random values.

        ``rows`` restricts the evaluation to a subset of observations (used
        when re-scoring candidate imputations).
        """
        if rows is None:
            cols = dict(self._fixed_cols)
            for j, name in enumerate(self.names_x):
                cols[name] = x_cur[:, j]
            return design_matrix(cols, self.design, self.n)
        cols = {name: col[rows] for name, col in self._fixed_cols.items()}
        for j, name in enumerate(self.names_x):
            cols[name] = x_cur[rows, j]
        return design_matrix(cols, self.design, len(rows))

    def neighbor_mask(self, locations: np.ndarray) -> np.ndarray:
        if self.global_dp or self.q == 0:
            return np.ones((self.n, locations.shape[0]), dtype=bool)
        return gower.neighbor_mask(self.f_mat, locations, self.dist)


def build_workspace(data: MixedDataset, design: DesignConfig,
                    dist: gower.DistanceSpec | None = None,
                    global_dp: bool = False) -> Workspace:
    design.validate(data.schema)
    if dist is None:
        dist = gower.spec_from_dataset(data, dstar=1.0)
    names_y = data.names(role=RANDOM, kind=ORDINAL)
    names_z = data.names(role=RANDOM, kind=CONTINUOUS)
    names_x = data.names(role=RANDOM, kind=NOMINAL)
    y_miss = data.mask_matrix(names_y)
    y_obs = np.where(y_miss, 0, np.nan_to_num(data.matrix(names_y))).astype(int)
    z_obs = data.matrix(names_z)
    z_miss = data.mask_matrix(names_z)
    x_miss = data.mask_matrix(names_x)
    x_obs = np.where(x_miss, 0, np.nan_to_num(data.matrix(names_x))).astype(int)
    f_mat = data.matrix(list(dist.names))
    fixed_cols = {name: data.columns[name] for name in data.names(role=FIXED)}
    return Workspace(
        data=data, design=design, dist=dist,
        names_y=names_y, names_z=names_z, names_x=names_x,
        y_obs=y_obs, y_miss=y_miss, z_obs=z_obs, z_miss=z_miss,
        x_obs=x_obs, x_miss=x_miss, f_mat=f_mat,
        levels_x=np.array([data.spec(n).levels for n in names_x], dtype=int),
        global_dp=global_dp, _fixed_cols=fixed_cols,
    )


@dataclass
class ModelState:
    """Everything the Gibbs sampler mutates, as flat arrays.

    ``wtilde`` stacks latent-ordinal then continuous coordinates per row;
    ``y_cur``/``x_cur`` hold the current completed discrete values (observed
    cells never change). ``nbr_mask`` caches neighborhood membership under
    the current locations.
    """

    v: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray
    psi: list[np.ndarray]
    alloc: np.ndarray
    wtilde: np.ndarray
    x_cur: np.ndarray
    y_cur: np.ndarray
    beta0: np.ndarray
    tau2: np.ndarray
    s_mat: np.ndarray
    alpha: float
    nbr_mask: np.ndarray

    @property
    def n_components(self) -> int:
        return self.v.shape[0]

    def copy(self) -> "ModelState":
        return ModelState(
            v=self.v.copy(), gamma=self.gamma.copy(), beta=self.beta.copy(),
            sigma=self.sigma.copy(), psi=[p.copy() for p in self.psi],
            alloc=self.alloc.copy(), wtilde=self.wtilde.copy(),
            x_cur=self.x_cur.copy(), y_cur=self.y_cur.copy(),
            beta0=self.beta0.copy(), tau2=self.tau2.copy(),
            s_mat=self.s_mat.copy(), alpha=float(self.alpha),
            nbr_mask=self.nbr_mask.copy(),
        )

    def save(self, path) -> None:
        payload = {
            "version": np.array([1]),
            "v": self.v, "gamma": self.gamma, "beta": self.beta,
            "sigma": self.sigma, "alloc": self.alloc, "wtilde": self.wtilde,
            "x_cur": self.x_cur, "y_cur": self.y_cur, "beta0": self.beta0,
            "tau2": self.tau2, "s_mat": self.s_mat,
            "alpha": np.array([self.alpha]), "nbr_mask": self.nbr_mask,
            "n_psi": np.array([len(self.psi)]),
        }
        for j, p in enumerate(self.psi):
            payload[f"psi_{j}"] = p
        np.savez(path, **payload)

    @classmethod
    def load(cls, path) -> "ModelState":
        with np.load(path) as z:
            if int(z["version"][0]) != 1:
                raise ConfigError(f"unknown state record version in {path}")
            psi = [z[f"psi_{j}"] for j in range(int(z["n_psi"][0]))]
            return cls(
                v=z["v"], gamma=z["gamma"], beta=z["beta"], sigma=z["sigma"],
                psi=psi, alloc=z["alloc"], wtilde=z["wtilde"],
                x_cur=z["x_cur"], y_cur=z["y_cur"], beta0=z["beta0"],
                tau2=z["tau2"], s_mat=z["s_mat"], alpha=float(z["alpha"][0]),
                nbr_mask=z["nbr_mask"],
            )


def local_stick_logweights(v: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log stick-breaking weights per row, restricted to each row's neighborhood.

    Position h in a row's neighborhood gets V_h times the product of (1 - V_j)
    over earlier members j; the last member takes the remainder so each row's
    weights sum to one exactly. Non-members get -inf.
    """
    n, N = mask.shape
    with np.errstate(divide="ignore"):
        log_v = np.log(v)
        log_1mv = np.log1p(-v)
    contrib = np.where(mask, log_1mv, 0.0)
    cum_exc = np.cumsum(contrib, axis=1) - contrib
    logw = np.where(mask, log_v + cum_exc, -np.inf)
    has = mask.any(axis=1)
    last = np.where(has, N - 1 - np.argmax(mask[:, ::-1], axis=1), 0)
    rows = np.flatnonzero(has)
    logw[rows, last[rows]] = cum_exc[rows, last[rows]]
    return logw


def levels_from_latents(w_col: np.ndarray, cutoffs: np.ndarray) -> np.ndarray:
    """Ordinal level implied by a latent value: level l iff value lies in
    (cutoff_{l-1}, cutoff_l]."""
    interior = cutoffs[1:-1]
    return np.searchsorted(interior, w_col, side="left") + 1


def init_state(ws: Workspace, hyper: Hyperpriors, key: KeyedRng,
               max_uniform_tries: int = 50) -> ModelState:
    """Initialize all sampler state from the prior plus marginal hot starts.

    Locations are drawn from their uniform priors and redrawn until every
    observation has a nonempty neighborhood; if pure resampling keeps
    failing, locations are moved onto observed fixed-value rows one at a
    time (still leaving the state valid) before giving up.
    """
    hyper.validate(ws.p)
    n, N, p, q = ws.n, hyper.n_components, ws.p, ws.q
    alpha0 = hyper.a_alpha / hyper.b_alpha

    rng_hyper = key.stream("init", "hyper")
    tau2 = truncated_invgamma(rng_hyper, np.full(ws.k, hyper.a_tau),
                              np.full(ws.k, hyper.b_tau), hyper.tau2_max)
    s_mat = sample_wishart(rng_hyper, hyper.a_s, hyper.b_s_mat) if p else np.zeros((0, 0))
    beta0 = np.sqrt(hyper.h) * rng_hyper.standard_normal((ws.k, p))

    gamma_arr, nbr = _init_locations(ws, N, key.stream("init", "gamma"), max_uniform_tries)

    v = key.stream("init", "sticks").beta(1.0, alpha0, size=N)

    rng_atoms = key.stream("init", "atoms")
    beta = beta0[None, :, :] + np.sqrt(tau2)[None, :, None] * rng_atoms.standard_normal((N, ws.k, p))
    sigma = np.empty((N, p, p))
    for h in range(N):
        sigma[h] = _invwishart_draw(rng_atoms, hyper.nu, s_mat) if p else np.zeros((0, 0))
    psi = [rng_atoms.dirichlet(a, size=N) for a in hyper.dirichlet_a]

    rng_alloc = key.stream("init", "alloc")
    counts = nbr.sum(axis=1)
    pick = np.minimum((rng_alloc.random(n) * counts).astype(int), counts - 1)
    cum = np.cumsum(nbr, axis=1)
    alloc = np.argmax(cum > pick[:, None], axis=1)

    rng_imp = key.stream("init", "impute")
    x_cur = ws.x_obs.copy()
    for j in range(ws.p_n):
        miss = ws.x_miss[:, j]
        if miss.any():
            obs = ws.x_obs[~miss, j]
            if obs.size == 0:
                x_cur[miss, j] = rng_imp.integers(1, ws.levels_x[j] + 1, size=miss.sum())
            else:
                x_cur[miss, j] = obs[rng_imp.integers(0, obs.size, size=miss.sum())]
    z_cur = ws.z_obs.copy()
    for j in range(ws.p_c):
        miss = ws.z_miss[:, j]
        if miss.any():
            obs = ws.z_obs[~miss, j]
            if obs.size == 0:
                z_cur[miss, j] = rng_imp.standard_normal(miss.sum())
            else:
                z_cur[miss, j] = obs[rng_imp.integers(0, obs.size, size=miss.sum())]

    rng_lat = key.stream("init", "latents")
    D = ws.design_for(x_cur)
    means = np.einsum("nk,nkp->np", D, beta[alloc]) if p else np.zeros((n, 0))
    sds = np.sqrt(sigma[alloc][:, np.arange(p), np.arange(p)]) if p else np.zeros((n, 0))
    wtilde = np.empty((n, p))
    y_cur = ws.y_obs.copy()
    for j in range(ws.p_o):
        cuts = hyper.cutoffs[j]
        lo = np.where(ws.y_miss[:, j], -np.inf, cuts[np.maximum(ws.y_obs[:, j] - 1, 0)])
        hi = np.where(ws.y_miss[:, j], np.inf, cuts[np.maximum(ws.y_obs[:, j], 1)])
        wtilde[:, j] = truncated_normal(rng_lat, means[:, j], sds[:, j], lo, hi)
        miss = ws.y_miss[:, j]
        y_cur[miss, j] = levels_from_latents(wtilde[miss, j], cuts)
    for j in range(ws.p_c):
        wtilde[:, ws.p_o + j] = z_cur[:, j]

    return ModelState(
        v=v, gamma=gamma_arr, beta=beta, sigma=sigma, psi=psi, alloc=alloc,
        wtilde=wtilde, x_cur=x_cur, y_cur=y_cur, beta0=beta0, tau2=tau2,
        s_mat=s_mat, alpha=alpha0, nbr_mask=nbr,
    )


def _invwishart_draw(rng, df, scale):
    scale_inv = np.linalg.inv(scale)
    W = sample_wishart(rng, df, 0.5 * (scale_inv + scale_inv.T))
    out = np.linalg.inv(W)
    return 0.5 * (out + out.T)


def draw_location_prior(rng, spec: gower.DistanceSpec, size: int) -> np.ndarray:
    """Draw locations from the product-of-uniforms prior over fixed-variable space."""
    out = np.empty((size, spec.q))
    for j in range(spec.q):
        if spec.kinds[j] == CONTINUOUS:
            out[:, j] = rng.uniform(spec.lows[j], spec.highs[j], size=size)
        else:
            out[:, j] = rng.integers(1, spec.levels[j] + 1, size=size)
    return out


def _init_locations(ws: Workspace, N: int, rng, max_uniform_tries: int):
    if ws.global_dp or ws.q == 0:
        gamma_arr = np.zeros((N, ws.q))
        return gamma_arr, np.ones((ws.n, N), dtype=bool)
    for _ in range(max_uniform_tries):
        gamma_arr = draw_location_prior(rng, ws.dist, N)
        nbr = ws.neighbor_mask(gamma_arr)
        if nbr.any(axis=1).all():
            return gamma_arr, nbr
    # Pure resampling failed: move locations onto uncovered observations.
    for h in range(N):
        uncovered = np.flatnonzero(~nbr.any(axis=1))
        if uncovered.size == 0:
            return gamma_arr, nbr
        gamma_arr[h] = ws.f_mat[uncovered[0]]
        nbr = ws.neighbor_mask(gamma_arr)
    if nbr.any(axis=1).all():
        return gamma_arr, nbr
    raise InitFailure(
        "could not find locations giving every observation a neighbor; "
        "dstar is likely too small for this dataset")


def validate(state: ModelState, ws: Workspace, hyper: Hyperpriors) -> list[str]:
    """Check every state invariant; returns human-readable violations."""
    out: list[str] = []
    mask = ws.neighbor_mask(state.gamma)
    rows = np.arange(ws.n)
    bad = ~mask[rows, state.alloc]
    for i in np.flatnonzero(bad):
        out.append(f"AllocationOutsideNeighborhood: row {i} component {state.alloc[i]}")
    for j in range(ws.p_o):
        cuts = hyper.cutoffs[j]
        lev = state.y_cur[:, j]
        w = state.wtilde[:, j]
        ok = (cuts[lev - 1] < w) & (w <= cuts[lev])
        for i in np.flatnonzero(~ok):
            out.append(f"LatentIntervalViolation: row {i}, ordinal {j}")
        obs = ~ws.y_miss[:, j]
        if np.any(state.y_cur[obs, j] != ws.y_obs[obs, j]):
            out.append(f"ObservedCellMutated: ordinal {j}")
    for j in range(ws.p_c):
        obs = ~ws.z_miss[:, j]
        if not np.allclose(state.wtilde[obs, ws.p_o + j], ws.z_obs[obs, j], atol=0, rtol=0):
            out.append(f"ObservedCellMutated: continuous {j}")
    for j in range(ws.p_n):
        obs = ~ws.x_miss[:, j]
        if np.any(state.x_cur[obs, j] != ws.x_obs[obs, j]):
            out.append(f"ObservedCellMutated: nominal {j}")
    for j, p in enumerate(state.psi):
        if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-12):
            out.append(f"SimplexViolation: psi {j}")
    for h in range(state.n_components):
        if ws.p:
            try:
                np.linalg.cholesky(state.sigma[h])
            except np.linalg.LinAlgError:
                out.append(f"NonPDCovariance: component {h}")
    if np.any(state.tau2 > hyper.tau2_max * (1 + 1e-12)):
        out.append("Tau2AboveTruncation")
    if np.any((state.v <= 0) | (state.v >= 1)):
        out.append("StickOutOfRange")
    if np.any(np.isnan(state.wtilde)):
        out.append("NaNLatent")
    return out


# -- joint log-density ------------------------------------------------------

def _log_location_prior(spec: gower.DistanceSpec, gamma_arr: np.ndarray) -> float:
    total = 0.0
    for j in range(spec.q):
        col = gamma_arr[:, j]
        if spec.kinds[j] == CONTINUOUS:
            width = spec.highs[j] - spec.lows[j]
            if np.any((col < spec.lows[j]) | (col > spec.highs[j])):
                return -np.inf
            total += -np.log(width) * col.size
        else:
            if np.any((col < 1) | (col > spec.levels[j])):
                return -np.inf
            total += -np.log(spec.levels[j]) * col.size
    return total


def log_joint(ws: Workspace, hyper: Hyperpriors, state: ModelState) -> float:
    """Full joint log-density of data, latents, parameters, and hyperparameters.

    Used by oracle tests: every term whose normalization depends on any
    sampled quantity is included in normalized form. Returns -inf off the
    support.
    """
    N, p = state.n_components, ws.p
    total = stats.gamma.logpdf(state.alpha, hyper.a_alpha, scale=1.0 / hyper.b_alpha)
    if np.any(state.tau2 > hyper.tau2_max):
        return -np.inf
    total += stats.invgamma.logpdf(state.tau2, hyper.a_tau, scale=hyper.b_tau).sum()
    if p:
        total += stats.wishart.logpdf(state.s_mat, df=hyper.a_s, scale=hyper.b_s_mat)
    total += stats.norm.logpdf(state.beta0, 0.0, np.sqrt(hyper.h)).sum()

    if np.any((state.v <= 0) | (state.v >= 1)):
        return -np.inf
    total += stats.beta.logpdf(state.v, 1.0, state.alpha).sum()
    if not ws.global_dp:
        lp = _log_location_prior(ws.dist, state.gamma)
        if not np.isfinite(lp):
            return -np.inf
        total += lp

    tau_sd = np.sqrt(state.tau2)
    for h in range(N):
        total += stats.norm.logpdf(state.beta[h], state.beta0, tau_sd[:, None]).sum()
        if p:
            total += stats.invwishart.logpdf(state.sigma[h], df=hyper.nu, scale=state.s_mat)
        for j, a in enumerate(hyper.dirichlet_a):
            total += stats.dirichlet.logpdf(state.psi[j][h], a)

    mask = ws.neighbor_mask(state.gamma)
    logw = local_stick_logweights(state.v, mask)
    alloc_terms = logw[np.arange(ws.n), state.alloc]
    if np.any(np.isneginf(alloc_terms)):
        return -np.inf
    total += alloc_terms.sum()

    D = ws.design_for(state.x_cur)
    if p:
        means = np.einsum("nk,nkp->np", D, state.beta[state.alloc])
        for h in np.unique(state.alloc):
            rows = np.flatnonzero(state.alloc == h)
            total += _mvn_logpdf(state.wtilde[rows] - means[rows], state.sigma[h]).sum()
    for j in range(ws.p_n):
        total += np.log(state.psi[j][state.alloc, state.x_cur[:, j] - 1]).sum()
    for j in range(ws.p_o):
        cuts = hyper.cutoffs[j]
        obs = ~ws.y_miss[:, j]
        lev = ws.y_obs[obs, j]
        w = state.wtilde[obs, j]
        if np.any((w <= cuts[lev - 1]) | (w > cuts[lev])):
            return -np.inf
    return float(total)


def _mvn_logpdf(dev: np.ndarray, cov: np.ndarray) -> np.ndarray:
    from scipy.linalg import solve_triangular

    p = cov.shape[0]
    chol = np.linalg.cholesky(cov)
    sol = solve_triangular(chol, dev.T, lower=True)
    quad = np.sum(sol ** 2, axis=0)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * (quad + logdet + p * np.log(2.0 * np.pi))
