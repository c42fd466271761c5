"""Chain diagnostics and simulation tools used by correctness harnesses.

``draw_prior_state`` and ``resimulate_data`` let a test alternate parameter
sweeps with data re-simulation (the joint-distribution check of a sampler:
the two simulators must agree in distribution). ``resimulate_data`` mutates
the workspace's column arrays, so callers own the workspace they pass in.
"""

from __future__ import annotations

import numpy as np

from ..model import (
    Hyperpriors,
    ModelState,
    Workspace,
    draw_location_prior,
    levels_from_latents,
    local_stick_logweights,
)
from ..rng import categorical_rows, sample_wishart, truncated_invgamma
from .updates import _chol_with_jitter


def draw_prior_state(ws: Workspace, hyper: Hyperpriors, rng) -> ModelState:
    """One exact draw of all parameters from the prior, plus simulated data.

    Locations come from their unconditional uniform prior, so the instance
    must guarantee full neighborhood coverage (e.g. dstar = 1) for the
    allocation draw to be well defined.
    """
    N, p, k = hyper.n_components, ws.p, ws.k
    alpha = rng.gamma(hyper.a_alpha, 1.0 / hyper.b_alpha)
    tau2 = truncated_invgamma(rng, np.full(k, hyper.a_tau), np.full(k, hyper.b_tau),
                              hyper.tau2_max)
    s_mat = sample_wishart(rng, hyper.a_s, hyper.b_s_mat) if p else np.zeros((0, 0))
    beta0 = np.sqrt(hyper.h) * rng.standard_normal((k, p))
    v = np.clip(rng.beta(1.0, alpha, size=N), 1e-12, 1 - 1e-12)
    if ws.global_dp or ws.q == 0:
        gamma_arr = np.zeros((N, ws.q))
    else:
        gamma_arr = draw_location_prior(rng, ws.dist, N)
    beta = beta0[None] + np.sqrt(tau2)[None, :, None] * rng.standard_normal((N, k, p))
    sigma = np.empty((N, p, p))
    for h in range(N):
        if p:
            s_inv = np.linalg.inv(s_mat)
            W = sample_wishart(rng, hyper.nu, 0.5 * (s_inv + s_inv.T))
            out = np.linalg.inv(W)
            sigma[h] = 0.5 * (out + out.T)
    psi = [rng.dirichlet(a, size=N) for a in hyper.dirichlet_a]

    mask = ws.neighbor_mask(gamma_arr)
    if not mask.any(axis=1).all():
        raise ValueError("prior draw left an observation with no neighbor; "
                         "use an instance with guaranteed coverage")
    logw = local_stick_logweights(v, mask)
    alloc = categorical_rows(rng, logw)

    state = ModelState(
        v=v, gamma=gamma_arr, beta=beta, sigma=sigma, psi=psi, alloc=alloc,
        wtilde=np.zeros((ws.n, p)), x_cur=np.ones((ws.n, ws.p_n), dtype=int),
        y_cur=np.ones((ws.n, ws.p_o), dtype=int), beta0=beta0, tau2=tau2,
        s_mat=s_mat, alpha=float(alpha), nbr_mask=mask,
    )
    resimulate_data(ws, hyper, state, rng)
    return state


def resimulate_data(ws: Workspace, hyper: Hyperpriors, state: ModelState, rng) -> None:
    """Redraw the complete data (nominal, latent, continuous) given parameters.

    Writes the simulated values both into the state and into the workspace's
    observed-value arrays; the missingness mask is left untouched.
    """
    n, p = ws.n, ws.p
    for j in range(ws.p_n):
        with np.errstate(divide="ignore"):
            logp = np.log(state.psi[j][state.alloc])
        state.x_cur[:, j] = categorical_rows(rng, logp) + 1
    ws.x_obs[:] = state.x_cur
    if p:
        D = ws.design_for(state.x_cur)
        means = np.einsum("nk,nkp->np", D, state.beta[state.alloc])
        z = rng.standard_normal((n, p))
        wt = np.empty((n, p))
        for h in np.unique(state.alloc):
            rows = state.alloc == h
            chol = _chol_with_jitter(state.sigma[h], "resimulate")
            wt[rows] = means[rows] + z[rows] @ chol.T
        state.wtilde = wt
    for j in range(ws.p_o):
        state.y_cur[:, j] = levels_from_latents(state.wtilde[:, j], hyper.cutoffs[j])
    ws.y_obs[:] = state.y_cur
    for j in range(ws.p_c):
        ws.z_obs[:, j] = state.wtilde[:, ws.p_o + j]


def gelman_rubin(chains: np.ndarray) -> float:
    """Potential scale reduction factor for a (n_chains, n_draws) array."""
    chains = np.asarray(chains, dtype=float)
    m, n = chains.shape
    means = chains.mean(axis=1)
    W = chains.var(axis=1, ddof=1).mean()
    B_over_n = means.var(ddof=1)
    var_hat = (n - 1) / n * W + B_over_n * (1.0 + 1.0 / m)
    return float(np.sqrt(var_hat / W))


def batch_means_se(x: np.ndarray, n_batches: int = 50) -> float:
    """Standard error of the mean of a correlated sequence via batch means."""
    x = np.asarray(x, dtype=float)
    size = x.size // n_batches
    if size < 2:
        return float(x.std(ddof=1) / np.sqrt(x.size))
    trimmed = x[: size * n_batches].reshape(n_batches, size)
    return float(trimmed.mean(axis=1).std(ddof=1) / np.sqrt(n_batches))


def iact_se(x: np.ndarray) -> float:
    """Standard error of the mean via the integrated autocorrelation time,
    summing autocorrelations in pairs until the first negative pair."""
    x = np.asarray(x, dtype=float)
    n = x.size
    xm = x - x.mean()
    var = xm.var()
    if var == 0:
        return 0.0
    tau = 1.0
    for k in range(1, n // 4):
        r1 = np.dot(xm[: -(2 * k - 1)], xm[2 * k - 1:]) / ((n - 2 * k + 1) * var)
        r2 = np.dot(xm[: -(2 * k)], xm[2 * k:]) / ((n - 2 * k) * var)
        if r1 + r2 < 0:
            break
        tau += 2 * (r1 + r2)
    return float(np.sqrt(var * tau / n))
