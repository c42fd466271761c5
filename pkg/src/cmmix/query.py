"""Posterior functionals of a fitted model and multiple-imputation combining.

Conditioning values are supplied as name -> value mappings on the original
scale (continuous fixed variables are standardized internally). Ordinal
random coordinates are latent-scale in density queries; probabilities over
ordinal levels integrate the latent kernel over cutoff rectangles: exactly
for one ordinal, by tensor Gauss-Legendre quadrature for two, by antithetic
Monte Carlo with a standard error for three or more.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy import stats
from scipy.special import ndtr

from .data import CONTINUOUS, build_design_vector
from .errors import ConfigError, EmptyNeighborhood, TooFewDraws
from .gower import neighborhood
from .model import Hyperpriors, ModelState, Workspace, local_stick_logweights


def _fixed_std(ws: Workspace, f: dict) -> dict:
    out = {}
    for name in ws.dist.names:
        if name not in f:
            raise ConfigError(f"missing fixed value for {name!r}")
        val = float(f[name])
        if ws.data.spec(name).kind == CONTINUOUS:
            mean, sd = ws.data.standardization[name]
            val = (val - mean) / sd
        out[name] = val
    return out


def local_weights(state: ModelState, ws: Workspace, f: dict):
    """Neighborhood (ascending component indices) and stick weights at f."""
    if ws.global_dp or ws.q == 0:
        idx = np.arange(state.n_components)
        mask = np.ones((1, state.n_components), dtype=bool)
    else:
        fstd = _fixed_std(ws, f)
        fvec = np.array([fstd[name] for name in ws.dist.names])
        idx = neighborhood(fvec, state.gamma, ws.dist)
        if idx.size == 0:
            raise EmptyNeighborhood(f"no component within dstar of {f!r}")
        mask = np.zeros((1, state.n_components), dtype=bool)
        mask[0, idx] = True
    logw = local_stick_logweights(state.v, mask)[0]
    return idx, np.exp(logw[idx])


def _design_row(ws: Workspace, x: dict, f: dict) -> np.ndarray:
    row = dict(_fixed_std(ws, f))
    row.update({name: x[name] for name in x})
    return build_design_vector(row, ws.design)


def pr_x_given_f(state: ModelState, ws: Workspace, f: dict, x: dict) -> float:
    """Probability of a full nominal-random combination given fixed values."""
    if set(x) != set(ws.names_x):
        raise ConfigError("x must assign every nominal random variable")
    idx, w = local_weights(state, ws, f)
    total = w.copy()
    for j, name in enumerate(ws.names_x):
        total *= state.psi[j][idx, int(x[name]) - 1]
    return float(total.sum())


def joint_conditional_density(state: ModelState, ws: Workspace, hyper: Hyperpriors,
                              f: dict, x: dict, wz: dict,
                              original_scale: bool = True) -> float:
    """Mixture density of the (latent-ordinal, continuous) block at one point,
    jointly with the nominal values, conditional on f.

    ``wz`` maps each ordinal random name to a latent value and each
    continuous random name to a value (original scale unless
    ``original_scale`` is False, in which case standardized).
    """
    if set(x) != set(ws.names_x):
        raise ConfigError("x must assign every nominal random variable")
    point = np.empty(ws.p)
    jac = 1.0
    for j, name in enumerate(ws.names_y):
        point[j] = float(wz[name])
    for j, name in enumerate(ws.names_z):
        val = float(wz[name])
        if original_scale:
            mean, sd = ws.data.standardization[name]
            val = (val - mean) / sd
            jac /= sd
        point[ws.p_o + j] = val
    idx, w = local_weights(state, ws, f)
    drow = _design_row(ws, x, f)
    total = 0.0
    for pos, h in enumerate(idx):
        mean = drow @ state.beta[h]
        dens = stats.multivariate_normal.pdf(point, mean=mean, cov=state.sigma[h]) \
            if ws.p else 1.0
        mass = np.prod([state.psi[j][h, int(x[name]) - 1]
                        for j, name in enumerate(ws.names_x)]) if ws.p_n else 1.0
        total += w[pos] * dens * mass
    return float(total * jac)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def _rect_prob_1d(mean, sd, lo, hi) -> float:
    return float(ndtr((hi - mean) / sd) - ndtr((lo - mean) / sd))


def _rect_prob_2d(mean, cov, lo, hi) -> float:
    """P(lo < W <= hi) under a bivariate normal, by conditioning the second
    coordinate on Gauss-Legendre nodes of the first."""
    s1 = np.sqrt(cov[0, 0])
    a = max(lo[0], mean[0] - 8.5 * s1)
    b = min(hi[0], mean[0] + 8.5 * s1)
    if a >= b:
        return 0.0
    t = 0.5 * (b - a) * _GL_NODES + 0.5 * (b + a)
    wts = 0.5 * (b - a) * _GL_WEIGHTS
    dens1 = stats.norm.pdf(t, mean[0], s1)
    slope = cov[0, 1] / cov[0, 0]
    mu2 = mean[1] + slope * (t - mean[0])
    s2 = np.sqrt(cov[1, 1] - slope * cov[0, 1])
    inner = ndtr((hi[1] - mu2) / s2) - ndtr((lo[1] - mu2) / s2)
    return float(np.sum(wts * dens1 * inner))


def pr_y_given_xf(state: ModelState, ws: Workspace, hyper: Hyperpriors,
                  f: dict, x: dict, y: dict, mc_samples: int = 20000,
                  rng=None):
    """Probability of an ordinal-level combination given nominal and fixed values.

    Returns (probability, standard_error); the standard error is None for
    the exact (one or two ordinal variables) evaluations.
    """
    if set(y) != set(ws.names_y):
        raise ConfigError("y must assign every ordinal random variable")
    if set(x) != set(ws.names_x):
        raise ConfigError("x must assign every nominal random variable")
    p_o = ws.p_o
    idx, w = local_weights(state, ws, f)
    drow = _design_row(ws, x, f)
    lo = np.array([hyper.cutoffs[j][int(y[name]) - 1] for j, name in enumerate(ws.names_y)])
    hi = np.array([hyper.cutoffs[j][int(y[name])] for j, name in enumerate(ws.names_y)])
    total = 0.0
    var_total = 0.0
    if p_o >= 3 and rng is None:
        rng = np.random.default_rng(0)
    for pos, h in enumerate(idx):
        mean = (drow @ state.beta[h])[:p_o]
        cov = state.sigma[h][:p_o, :p_o]
        if p_o == 1:
            prob = _rect_prob_1d(mean[0], np.sqrt(cov[0, 0]), lo[0], hi[0])
        elif p_o == 2:
            prob = _rect_prob_2d(mean, cov, lo, hi)
        else:
            npairs = max(mc_samples // 2, 1)
            z = rng.standard_normal((npairs, p_o))
            chol = np.linalg.cholesky(cov)
            wplus = mean + z @ chol.T
            wminus = mean - z @ chol.T
            g = 0.5 * (np.all((wplus > lo) & (wplus <= hi), axis=1).astype(float)
                       + np.all((wminus > lo) & (wminus <= hi), axis=1).astype(float))
            prob = float(g.mean())
            var_total += w[pos] ** 2 * g.var(ddof=1) / npairs
        total += w[pos] * prob
    se = float(np.sqrt(var_total)) if p_o >= 3 else None
    return float(total), se


def nominal_marginals(state: ModelState, ws: Workspace, f: dict) -> list[np.ndarray]:
    """Marginal category probabilities of each nominal random variable at f."""
    idx, w = local_weights(state, ws, f)
    return [w @ state.psi[j][idx] for j in range(ws.p_n)]


def marginalize_nominal(state: ModelState, ws: Workspace, f: dict,
                        x_partial: dict, functional) -> float:
    """Average a functional of a full nominal assignment over the unspecified
    coordinates, each weighted by its mixture marginal at f."""
    free = [name for name in ws.names_x if name not in x_partial]
    if not free:
        return float(functional(dict(x_partial)))
    margs = nominal_marginals(state, ws, f)
    weights = {name: margs[ws.names_x.index(name)] for name in free}
    total = 0.0
    levels = [range(1, int(ws.levels_x[ws.names_x.index(name)]) + 1) for name in free]
    for combo in product(*levels):
        x_full = dict(x_partial)
        wgt = 1.0
        for name, lev in zip(free, combo):
            x_full[name] = lev
            wgt *= weights[name][lev - 1]
        total += wgt * functional(x_full)
    return float(total)


@dataclass
class PosteriorSummary:
    mean: float
    lower: float
    upper: float
    level: float
    values: np.ndarray


def summarize_over_draws(draws, functional, level: float = 0.9) -> PosteriorSummary:
    """Posterior mean and equal-tailed credible interval of a functional
    evaluated per retained draw."""
    states = draws.states if hasattr(draws, "states") else list(draws)
    if len(states) < 10:
        raise TooFewDraws(f"have {len(states)} draws, need at least 10")
    vals = np.array([functional(s) for s in states], dtype=float)
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(vals, [tail, 1.0 - tail])
    return PosteriorSummary(mean=float(vals.mean()), lower=float(lo),
                            upper=float(hi), level=level, values=vals)


@dataclass
class RubinResult:
    estimate: float
    within: float
    between: float
    total_variance: float
    df: float
    ci_lower: float
    ci_upper: float


def rubin_combine(point_estimates, within_variances, level: float = 0.95) -> RubinResult:
    """Combine per-imputation estimates: total variance is the within mean
    plus (1 + 1/m) times the between variance; the interval uses a t
    reference with the classic small-m degrees of freedom."""
    q = np.asarray(point_estimates, dtype=float)
    u = np.asarray(within_variances, dtype=float)
    m = q.size
    if m < 2:
        raise ConfigError("need at least two imputations to combine")
    qbar = float(q.mean())
    ubar = float(u.mean())
    b = float(q.var(ddof=1))
    t_var = ubar + (1.0 + 1.0 / m) * b
    if b > 0:
        df = (m - 1) * (1.0 + ubar / ((1.0 + 1.0 / m) * b)) ** 2
    else:
        df = np.inf
    half = stats.t.ppf(0.5 + level / 2.0, df) * np.sqrt(t_var) if t_var > 0 else 0.0
    return RubinResult(estimate=qbar, within=ubar, between=b, total_variance=t_var,
                       df=float(df), ci_lower=qbar - half, ci_upper=qbar + half)
