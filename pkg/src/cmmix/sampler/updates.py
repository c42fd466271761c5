"""Full-conditional updates for the blocked Gibbs sampler.

Each update draws one block from its conditional given everything else.
Parameter computations are separated from the draws where oracle tests need
to inspect the implied distribution. All likelihood evaluations run in log
space with max-subtraction before any categorical draw.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from ..errors import EmptyInterval, EmptyNeighborhood, NonPDScale, SingularPrecision
from ..data import CONTINUOUS, NOMINAL
from ..model import Hyperpriors, ModelState, Workspace, levels_from_latents, local_stick_logweights
from ..rng import categorical_rows, sample_wishart, truncated_invgamma, truncated_normal

_V_EPS = 1e-12


def component_members(alloc: np.ndarray, n_components: int) -> list[np.ndarray]:
    order = np.argsort(alloc, kind="stable")
    sorted_alloc = alloc[order]
    bounds = np.searchsorted(sorted_alloc, np.arange(n_components + 1))
    return [order[bounds[h]:bounds[h + 1]] for h in range(n_components)]


def _chol_with_jitter(mat: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        try:
            return np.linalg.cholesky(mat + 1e-10 * np.eye(mat.shape[0]))
        except np.linalg.LinAlgError:
            raise SingularPrecision(what) from None


def _mvn_logpdf(dev: np.ndarray, chol: np.ndarray) -> np.ndarray:
    sol = solve_triangular(chol, dev.T, lower=True)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * (np.sum(sol ** 2, axis=0) + logdet + chol.shape[0] * np.log(2.0 * np.pi))


def conditional_regression(sigma: np.ndarray):
    """Per-coordinate conditional structure of a covariance matrix.

    Returns (coefs, cond_vars): row j of ``coefs`` maps deviations of the
    other coordinates to the conditional mean shift of coordinate j, and
    ``cond_vars[j]`` is the conditional variance.
    """
    p = sigma.shape[0]
    coefs = np.zeros((p, max(p - 1, 0)))
    cond_vars = np.empty(p)
    for j in range(p):
        others = [i for i in range(p) if i != j]
        if not others:
            cond_vars[j] = sigma[j, j]
            continue
        sol = np.linalg.solve(sigma[np.ix_(others, others)], sigma[others, j])
        coefs[j] = sol
        cond_vars[j] = sigma[j, j] - sigma[j, others] @ sol
    return coefs, cond_vars


# -- regression coefficients -------------------------------------------------

def beta_column_params(state: ModelState, hyper: Hyperpriors, h: int, j: int,
                       members: np.ndarray, D: np.ndarray):
    """Mean and covariance of the conditional for column j of component h's
    coefficient matrix, given its other columns."""
    k = D.shape[1]
    Dm = D[members]
    W = state.wtilde[members]
    sigma = state.sigma[h]
    p = sigma.shape[0]
    others = [i for i in range(p) if i != j]
    if others:
        sol = np.linalg.solve(sigma[np.ix_(others, others)], sigma[others, j])
        cond_var = sigma[j, j] - sigma[j, others] @ sol
        mu_star = (W[:, others] - Dm @ state.beta[h][:, others]) @ sol
    else:
        cond_var = sigma[j, j]
        mu_star = np.zeros(members.size)
    prec = np.diag(1.0 / state.tau2) + (Dm.T @ Dm) / cond_var
    rhs = state.beta0[:, j] / state.tau2 + Dm.T @ (W[:, j] - mu_star) / cond_var
    chol = _chol_with_jitter(prec, f"beta update, component {h}")
    mean = cho_solve((chol, True), rhs)
    cov = cho_solve((chol, True), np.eye(k))
    return mean, cov, chol


def update_beta(ws: Workspace, hyper: Hyperpriors, state: ModelState, h: int,
                members: np.ndarray, D: np.ndarray, rng) -> None:
    if ws.p == 0:
        return
    if members.size == 0:
        z = rng.standard_normal((ws.k, ws.p))
        state.beta[h] = state.beta0 + np.sqrt(state.tau2)[:, None] * z
        return
    for j in range(ws.p):
        mean, _, chol = beta_column_params(state, hyper, h, j, members, D)
        z = rng.standard_normal(ws.k)
        state.beta[h][:, j] = mean + solve_triangular(chol.T, z, lower=False)


# -- component covariances ----------------------------------------------------

def sigma_params(state: ModelState, hyper: Hyperpriors, h: int,
                 members: np.ndarray, D: np.ndarray):
    """(df, scale) of the inverse-Wishart conditional for component h."""
    if members.size == 0:
        return hyper.nu, state.s_mat
    resid = state.wtilde[members] - D[members] @ state.beta[h]
    return hyper.nu + members.size, state.s_mat + resid.T @ resid


def update_sigma(ws: Workspace, hyper: Hyperpriors, state: ModelState, h: int,
                 members: np.ndarray, D: np.ndarray, rng) -> None:
    if ws.p == 0:
        return
    df, scale = sigma_params(state, hyper, h, members, D)
    try:
        scale_inv = np.linalg.inv(scale)
    except np.linalg.LinAlgError:
        raise NonPDScale(f"sigma update, component {h}") from None
    W = sample_wishart(rng, df, 0.5 * (scale_inv + scale_inv.T))
    out = np.linalg.inv(W)
    state.sigma[h] = 0.5 * (out + out.T)


# -- categorical kernels -------------------------------------------------------

def psi_params(state: ModelState, hyper: Hyperpriors, h: int, j: int,
               members: np.ndarray) -> np.ndarray:
    """Dirichlet concentration of the conditional for component h, nominal j."""
    d = hyper.dirichlet_a[j].shape[0]
    counts = np.bincount(state.x_cur[members, j] - 1, minlength=d) if members.size else np.zeros(d)
    return hyper.dirichlet_a[j] + counts


def update_psi(ws: Workspace, hyper: Hyperpriors, state: ModelState, h: int,
               members: np.ndarray, rng) -> None:
    for j in range(ws.p_n):
        state.psi[j][h] = rng.dirichlet(psi_params(state, hyper, h, j, members))


# -- allocations ---------------------------------------------------------------

def allocation_logprobs(ws: Workspace, state: ModelState, D: np.ndarray) -> np.ndarray:
    """Unnormalized log-probabilities (n, N) of each component per observation.

    Combines local stick weights with the normal kernel and nominal masses;
    -inf outside the observation's neighborhood.
    """
    n, N = ws.n, state.n_components
    logp = local_stick_logweights(state.v, state.nbr_mask).copy()
    if ws.p:
        loglik = np.empty((n, N))
        for h in range(N):
            chol = _chol_with_jitter(state.sigma[h], f"allocation, component {h}")
            dev = state.wtilde - D @ state.beta[h]
            loglik[:, h] = _mvn_logpdf(dev, chol)
        logp = logp + loglik
    for j in range(ws.p_n):
        with np.errstate(divide="ignore"):
            logpsi = np.log(state.psi[j])
        logp = logp + logpsi[:, state.x_cur[:, j] - 1].T
    return logp


def update_allocation(ws: Workspace, hyper: Hyperpriors, state: ModelState,
                      D: np.ndarray, rng) -> None:
    if not state.nbr_mask.any(axis=1).all():
        bad = int(np.flatnonzero(~state.nbr_mask.any(axis=1))[0])
        raise EmptyNeighborhood(f"observation {bad} has no component in range")
    logp = allocation_logprobs(ws, state, D)
    state.alloc = categorical_rows(rng, logp)


# -- sticks ---------------------------------------------------------------------

def stick_counts(mask: np.ndarray, alloc: np.ndarray):
    """Success/failure counts for every stick.

    A success for component h is an observation allocated to h when h is not
    the last member of its neighborhood (allocations to the last member ride
    on the remainder weight and carry no stick factor). A failure is an
    observation allocated past h with h inside its neighborhood.
    """
    n, N = mask.shape
    last = N - 1 - np.argmax(mask[:, ::-1], axis=1)
    succ = np.bincount(alloc[alloc != last], minlength=N).astype(float)
    fail = ((alloc[:, None] > np.arange(N)[None, :]) & mask).sum(axis=0).astype(float)
    return succ, fail


def update_sticks(ws: Workspace, hyper: Hyperpriors, state: ModelState, rng) -> None:
    succ, fail = stick_counts(state.nbr_mask, state.alloc)
    draws = rng.beta(1.0 + succ, state.alpha + fail)
    state.v = np.clip(draws, _V_EPS, 1.0 - _V_EPS)


# -- locations --------------------------------------------------------------------

def update_locations(ws: Workspace, hyper: Hyperpriors, state: ModelState, h: int,
                     members: np.ndarray, rng) -> None:
    """Coordinate-wise uniform draws keeping the component within ``dstar`` of
    every member; empty components redraw from the location prior.

    Discrete coordinates enumerate their levels and test each candidate with
    the same distance routine that defines neighborhood membership, so a
    drawn location can never round a member out of its own neighborhood.
    Continuous intervals are shrunk inward by a sliver and the draw verified
    the same way, falling back to the (always valid) current value.
    """
    from .. import gower

    spec = ws.dist
    if spec.q == 0:
        return
    if members.size == 0:
        from ..model import draw_location_prior

        state.gamma[h] = draw_location_prior(rng, spec, 1)[0]
        return
    g = state.gamma[h].copy()
    F = ws.f_mat[members]
    for l in range(spec.q):
        w_l = spec.weights[l]
        kind = spec.kinds[l]
        if w_l == 0.0:
            if kind == CONTINUOUS:
                g[l] = rng.uniform(spec.lows[l], spec.highs[l])
            else:
                g[l] = float(rng.integers(1, spec.levels[l] + 1))
            continue
        if kind != CONTINUOUS:
            levels = np.arange(1, spec.levels[l] + 1, dtype=float)
            cands = np.tile(g, (levels.size, 1))
            cands[:, l] = levels
            dists = gower.cross_distances(F, cands, spec)
            allowed = levels[np.all(dists <= spec.dstar, axis=0)]
            if allowed.size == 0:
                raise EmptyInterval(f"component {h}, coordinate {l}: no level keeps "
                                    "all members in range")
            new = float(allowed[rng.integers(0, allowed.size)])
        else:
            own = np.minimum(np.abs(F[:, l] - g[l]) / spec.denoms[l], 1.0)
            other = gower.cross_distances(F, g[None, :], spec)[:, 0] - w_l * own
            slack = np.maximum(spec.dstar - other - 1e-12, 0.0)
            s = spec.denoms[l] * slack / w_l
            lo = max(np.max(F[:, l] - s), spec.lows[l])
            hi = min(np.min(F[:, l] + s), spec.highs[l])
            if lo > hi:
                new = g[l]
            else:
                new = rng.uniform(lo, hi)
                cand = g.copy()
                cand[l] = new
                check = gower.cross_distances(F, cand[None, :], spec)[:, 0]
                if np.any(check > spec.dstar):
                    new = g[l]
        g[l] = new
    state.gamma[h] = g


# -- hyperparameters -----------------------------------------------------------------

def update_alpha(state: ModelState, hyper: Hyperpriors, rng) -> None:
    rate = hyper.b_alpha - np.log1p(-state.v).sum()
    state.alpha = float(rng.gamma(hyper.a_alpha + state.n_components, 1.0 / rate))


def update_beta0(state: ModelState, hyper: Hyperpriors, rng) -> None:
    if state.beta0.size == 0:
        return
    N = state.n_components
    var = 1.0 / (1.0 / hyper.h + N / state.tau2)
    mean = var[:, None] * (state.beta.sum(axis=0) / state.tau2[:, None])
    z = rng.standard_normal(state.beta0.shape)
    state.beta0 = mean + np.sqrt(var)[:, None] * z


def tau2_params(state: ModelState, hyper: Hyperpriors):
    """(shape, rate) of the truncated inverse-gamma conditional, per design row."""
    N = state.n_components
    p = state.beta.shape[2]
    shape = hyper.a_tau + 0.5 * N * p
    rate = hyper.b_tau + 0.5 * ((state.beta - state.beta0[None]) ** 2).sum(axis=(0, 2))
    return shape, rate


def update_tau2(state: ModelState, hyper: Hyperpriors, rng) -> None:
    if state.tau2.size == 0:
        return
    shape, rate = tau2_params(state, hyper)
    state.tau2 = truncated_invgamma(rng, np.full_like(rate, shape), rate, hyper.tau2_max)


def scale_s_params(state: ModelState, hyper: Hyperpriors):
    """(df, scale) of the Wishart conditional for the shared scale matrix."""
    N = state.n_components
    sum_inv = np.zeros_like(state.s_mat)
    for h in range(N):
        try:
            sum_inv += np.linalg.inv(state.sigma[h])
        except np.linalg.LinAlgError:
            raise NonPDScale(f"scale update: component {h} covariance singular") from None
    scale = np.linalg.inv(np.linalg.inv(hyper.b_s_mat) + sum_inv)
    return N * hyper.nu + hyper.a_s, 0.5 * (scale + scale.T)


def update_scale_s(state: ModelState, hyper: Hyperpriors, rng) -> None:
    if state.s_mat.size == 0:
        return
    df, scale = scale_s_params(state, hyper)
    state.s_mat = sample_wishart(rng, df, scale)


# -- latent continuous variables and imputation ----------------------------------------

def update_latents(ws: Workspace, hyper: Hyperpriors, state: ModelState,
                   D: np.ndarray, rng) -> None:
    """Resample latent-ordinal coordinates and missing continuous cells.

    One pass of coordinate-wise draws: each coordinate's conditional normal
    given all other current coordinates, truncated to the observed ordinal
    level's cutoff interval. Observed continuous cells are never modified;
    levels implied by the new latents refresh the missing-ordinal values.
    """
    if ws.p == 0:
        return
    n, p = ws.n, ws.p
    N = state.n_components
    members = component_members(state.alloc, N)
    structs = [conditional_regression(state.sigma[h]) for h in range(N)]
    for j in range(p):
        is_ordinal = j < ws.p_o
        if not is_ordinal and not ws.z_miss[:, j - ws.p_o].any():
            continue
        for h in range(N):
            rows = members[h]
            if rows.size == 0:
                continue
            if not is_ordinal:
                rows = rows[ws.z_miss[rows, j - ws.p_o]]
                if rows.size == 0:
                    continue
            coefs, cond_vars = structs[h]
            others = [i for i in range(p) if i != j]
            mean = D[rows] @ state.beta[h][:, j]
            if others:
                dev = state.wtilde[np.ix_(rows, others)] - D[rows] @ state.beta[h][:, others]
                mean = mean + dev @ coefs[j]
            sd = np.sqrt(cond_vars[j])
            if is_ordinal:
                cuts = hyper.cutoffs[j]
                miss = ws.y_miss[rows, j]
                lev = np.maximum(ws.y_obs[rows, j], 1)
                lo = np.where(miss, -np.inf, cuts[lev - 1])
                hi = np.where(miss, np.inf, cuts[lev])
            else:
                lo, hi = -np.inf, np.inf
            state.wtilde[rows, j] = truncated_normal(rng, mean, sd, lo, hi)
        if is_ordinal:
            miss = ws.y_miss[:, j]
            if miss.any():
                state.y_cur[miss, j] = levels_from_latents(
                    state.wtilde[miss, j], hyper.cutoffs[j])


def nominal_imputation_logprobs(ws: Workspace, hyper: Hyperpriors, state: ModelState,
                                j: int, rows: np.ndarray) -> np.ndarray:
    """Log-probabilities (len(rows), d_j) for the candidate levels of nominal
    variable j on the given rows, under current allocations and latents."""
    d = int(ws.levels_x[j])
    out = np.empty((rows.size, d))
    chols = {}
    x_try = state.x_cur.copy()
    for lev in range(1, d + 1):
        x_try[rows, j] = lev
        with np.errstate(divide="ignore"):
            out[:, lev - 1] = np.log(state.psi[j][state.alloc[rows], lev - 1])
        if ws.p:
            D_rows = ws.design_for(x_try, rows)
            for h in np.unique(state.alloc[rows]):
                sub = state.alloc[rows] == h
                if h not in chols:
                    chols[h] = _chol_with_jitter(state.sigma[h], f"imputation, component {h}")
                dev = state.wtilde[rows[sub]] - D_rows[sub] @ state.beta[h]
                out[sub, lev - 1] += _mvn_logpdf(dev, chols[h])
    return out


def impute_nominal(ws: Workspace, hyper: Hyperpriors, state: ModelState, rng) -> None:
    """Redraw every missing nominal cell from its categorical conditional."""
    for j in range(ws.p_n):
        rows = np.flatnonzero(ws.x_miss[:, j])
        if rows.size == 0:
            continue
        logp = nominal_imputation_logprobs(ws, hyper, state, j, rows)
        state.x_cur[rows, j] = categorical_rows(rng, logp) + 1
