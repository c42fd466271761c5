"""Data-fusion simulation harness: generation, blanking, baselines, metrics.

The scenario: a block of shared, fully observed columns A; three synthetic
outcome variables (continuous, ordinal via a probit link, nominal via
multinomial logits) generated conditionally independently given A; rows
split into three groups, each missing a different pair of outcomes. Methods
produce multiple completed datasets; inference quality is scored on every
bivariate cell probability of (nominal, A_j) and (ordinal, A_j), on a
cross-block regression whose outcome-block coefficients are truly zero, and
on a conditional-mutual-information check of the independence assumption.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import ndtr

from . import gower, infosel
from .data import (
    CONTINUOUS,
    FIXED,
    MixedDataset,
    NOMINAL,
    ORDINAL,
    RANDOM,
    VariableSpec,
    default_design,
)
from .errors import ConfigError, NoDonor
from .model import build_workspace, default_hyperpriors
from .rng import KeyedRng
from .sampler.sweep import ChainConfig, run_chain


# -- generators ---------------------------------------------------------------

@dataclass(frozen=True)
class TermCoef:
    """One predictor term: a product of factors times a coefficient.

    Each factor is (column, level) for a dummy 1{column == level} or
    (column, None) for the raw value; multiple factors form an interaction.
    """

    factors: tuple
    coef: float


def _eval_terms(cols: dict[str, np.ndarray], terms: list[TermCoef], n: int) -> np.ndarray:
    out = np.zeros(n)
    for term in terms:
        val = np.full(n, term.coef)
        for var, level in term.factors:
            col = np.asarray(cols[var], dtype=float)
            val = val * ((col == level).astype(float) if level is not None else col)
        out += val
    return out


@dataclass
class GenConfig:
    """Coefficients for the three conditionally independent generators."""

    z_terms: list[TermCoef]
    z_intercept: float
    z_sd: float
    y_terms: list[TermCoef]
    y_intercept: float
    y_cutpoints: np.ndarray
    x_terms: list[list[TermCoef]]
    x_intercepts: list[float]
    x_levels: int

    @property
    def y_levels(self) -> int:
        return len(self.y_cutpoints) + 1


@dataclass
class FusionTruth:
    """Exact conditional laws of the generated outcomes given each A row."""

    px: np.ndarray      # (n, x_levels)
    py: np.ndarray      # (n, y_levels)
    mean_z: np.ndarray  # (n,)
    sd_z: float

    def cell_probs(self, A: MixedDataset) -> list[tuple]:
        """True Pr(outcome level, A_j = a) for every bivariate cell.

        Returns tuples (a_name, which, outcome_level, a_level, prob) with
        ``which`` in {"x", "y"}.
        """
        out = []
        for name in A.names():
            col = A.columns[name]
            levels = A.spec(name).levels
            for a in range(1, levels + 1):
                sel = (col == a).astype(float) / A.n
                for lev in range(self.px.shape[1]):
                    out.append((name, "x", lev + 1, a, float(sel @ self.px[:, lev])))
                for lev in range(self.py.shape[1]):
                    out.append((name, "y", lev + 1, a, float(sel @ self.py[:, lev])))
        return out


def synthetic_shared_data(n: int, seed: int = 0,
                          ordinal_levels=(6, 5, 5, 7, 5, 5),
                          nominal_levels=(4, 2, 2, 2, 3),
                          rho: float = 0.35) -> MixedDataset:
    """Correlated discrete shared columns via a Gaussian AR(1) copula.

    Six ordinal and five nominal columns by default; marginals are uniform
    over each column's levels. All columns are declared fixed.
    """
    rng = KeyedRng(seed).stream("shared_data")
    q = len(ordinal_levels) + len(nominal_levels)
    corr = rho ** np.abs(np.subtract.outer(np.arange(q), np.arange(q)))
    z = rng.standard_normal((n, q)) @ np.linalg.cholesky(corr).T
    u = ndtr(z)
    schema, raw = [], {}
    names = [f"a{i+1}" for i in range(len(ordinal_levels))] + \
            [f"b{i+1}" for i in range(len(nominal_levels))]
    kinds = [ORDINAL] * len(ordinal_levels) + [NOMINAL] * len(nominal_levels)
    levels = list(ordinal_levels) + list(nominal_levels)
    for j, (name, kind, k) in enumerate(zip(names, kinds, levels)):
        schema.append(VariableSpec(name, FIXED, kind, k))
        raw[name] = np.minimum((u[:, j] * k).astype(int) + 1, k).astype(float)
    return MixedDataset.from_arrays(schema, raw)


def default_gen_config(A: MixedDataset, x_levels: int = 3, y_levels: int = 3) -> GenConfig:
    """Generators driven by the first few shared columns, centered on A.

    The exact coefficients in the original study are not published; these
    defaults give each outcome a strong, partially overlapping dependence on
    the shared block while keeping the three outcomes conditionally
    independent by construction.
    """
    names = A.names()
    ords = [n for n in names if A.spec(n).kind == ORDINAL]
    noms = [n for n in names if A.spec(n).kind == NOMINAL]
    if len(ords) < 3 or len(noms) < 2:
        raise ConfigError("default generators need >= 3 ordinal and >= 2 nominal shared columns")
    cols = A.columns
    z_terms = [
        TermCoef(((ords[0], None),), 0.55),
        TermCoef(((ords[1], None),), -0.45),
        TermCoef(((noms[0], 2),), 1.1),
        TermCoef(((ords[0], None), (noms[1], 2)), 0.35),
    ]
    z_intercept = -float(_eval_terms(cols, z_terms, A.n).mean())
    y_terms = [
        TermCoef(((ords[2], None),), 0.65),
        TermCoef(((noms[1], 2),), -1.3),
        TermCoef(((ords[0], None),), 0.3),
        TermCoef(((ords[2], None), (noms[0], 3)), -0.3),
    ]
    y_intercept = -float(_eval_terms(cols, y_terms, A.n).mean())
    cuts = stats.norm.ppf(np.linspace(0, 1, y_levels + 1)[1:-1]) * 1.6
    x_terms, x_intercepts = [], []
    for lev in range(2, x_levels + 1):
        sign = 1.0 if lev % 2 == 0 else -1.0
        terms = [
            TermCoef(((ords[0], None),), sign * 1.35),
            TermCoef(((noms[0], 2),), -sign * 1.9),
            TermCoef(((noms[0], 3),), sign * 1.2),
            TermCoef(((noms[0], 4),), -sign * 1.0),
            TermCoef(((ords[2], None),), 0.45 * sign),
            TermCoef(((ords[0], None), (noms[0], 4)), -sign * 0.4),
        ]
        x_terms.append(terms)
        x_intercepts.append(-float(_eval_terms(cols, terms, A.n).mean()))
    return GenConfig(
        z_terms=z_terms, z_intercept=z_intercept, z_sd=1.0,
        y_terms=y_terms, y_intercept=y_intercept, y_cutpoints=cuts,
        x_terms=x_terms, x_intercepts=x_intercepts, x_levels=x_levels,
    )


OUTCOME_NAMES = ("zvar", "yvar", "xvar")


def generate_fusion_replicate(A: MixedDataset, cfg: GenConfig, rng):
    """Append (continuous, ordinal, nominal) outcomes drawn independently
    given A; returns the complete dataset and the exact generation truth."""
    n = A.n
    cols = A.columns
    lin_z = cfg.z_intercept + _eval_terms(cols, cfg.z_terms, n)
    z = lin_z + cfg.z_sd * rng.standard_normal(n)

    lin_y = cfg.y_intercept + _eval_terms(cols, cfg.y_terms, n)
    latent = lin_y + rng.standard_normal(n)
    y = np.searchsorted(cfg.y_cutpoints, latent, side="left") + 1
    edges = np.concatenate(([-np.inf], cfg.y_cutpoints, [np.inf]))
    py = ndtr(edges[None, 1:] - lin_y[:, None]) - ndtr(edges[None, :-1] - lin_y[:, None])

    logits = np.zeros((n, cfg.x_levels))
    for i, (terms, icpt) in enumerate(zip(cfg.x_terms, cfg.x_intercepts)):
        logits[:, i + 1] = icpt + _eval_terms(cols, terms, n)
    logits -= logits.max(axis=1, keepdims=True)
    px = np.exp(logits)
    px /= px.sum(axis=1, keepdims=True)
    u = rng.random(n)
    x = (u[:, None] > np.cumsum(px, axis=1)).sum(axis=1) + 1

    schema = list(A.schema) + [
        VariableSpec(OUTCOME_NAMES[0], RANDOM, CONTINUOUS),
        VariableSpec(OUTCOME_NAMES[1], RANDOM, ORDINAL, cfg.y_levels),
        VariableSpec(OUTCOME_NAMES[2], RANDOM, NOMINAL, cfg.x_levels),
    ]
    raw = {name: A.columns[name].copy() for name in A.names()}
    raw[OUTCOME_NAMES[0]] = z
    raw[OUTCOME_NAMES[1]] = y.astype(float)
    raw[OUTCOME_NAMES[2]] = x.astype(float)
    data = MixedDataset.from_arrays(schema, raw)
    truth = FusionTruth(px=px, py=py, mean_z=lin_z, sd_z=cfg.z_sd)
    return data, truth


def blank_three_way(data: MixedDataset, seed: int | None = None) -> MixedDataset:
    """Partition rows into three near-equal blocks (remainder to the last)
    and blank (nominal, continuous), (nominal, ordinal), (ordinal,
    continuous) random columns respectively. ``seed`` permutes the block
    assignment; None keeps it positional."""
    n = data.n
    if n < 3:
        raise ConfigError("need at least 3 rows to form three blocks")
    order = np.arange(n)
    if seed is not None:
        order = KeyedRng(seed).stream("blank").permutation(n)
    base = n // 3
    blocks = [order[:base], order[base:2 * base], order[2 * base:]]
    names_x = data.names(role=RANDOM, kind=NOMINAL)
    names_y = data.names(role=RANDOM, kind=ORDINAL)
    names_z = data.names(role=RANDOM, kind=CONTINUOUS)
    raw = {}
    for spec in data.schema:
        col = data.columns[spec.name].copy()
        if spec.kind == CONTINUOUS:
            col = data.destandardize(spec.name, col)
        raw[spec.name] = col
    for name in names_x:
        raw[name][blocks[0]] = np.nan
        raw[name][blocks[1]] = np.nan
    for name in names_z:
        raw[name][blocks[0]] = np.nan
        raw[name][blocks[2]] = np.nan
    for name in names_y:
        raw[name][blocks[1]] = np.nan
        raw[name][blocks[2]] = np.nan
    return MixedDataset.from_arrays(data.schema, raw)


# -- baselines -----------------------------------------------------------------

def statistical_matching(data: MixedDataset, rng) -> dict[str, np.ndarray]:
    """Hot-deck completion: each missing cell copies a uniformly chosen donor
    among the rows observing that variable at minimal Hamming distance on
    the fixed columns. Returns completed columns on the original scale."""
    a_names = data.names(role=FIXED)
    A = data.matrix(a_names)
    out = {}
    for spec in data.schema:
        col = data.columns[spec.name]
        out[spec.name] = data.destandardize(spec.name, col).copy() \
            if spec.kind == CONTINUOUS else col.copy()
    for name in data.names(role=RANDOM):
        miss = data.mask[name]
        if not miss.any():
            continue
        donors = np.flatnonzero(~miss)
        if donors.size == 0:
            raise NoDonor(name)
        recips = np.flatnonzero(miss)
        dist = np.zeros((recips.size, donors.size), dtype=int)
        for j in range(A.shape[1]):
            dist += A[recips][:, j][:, None] != A[donors][:, j][None, :]
        best = dist.min(axis=1)
        vals = out[name]
        for i, r in enumerate(recips):
            cands = donors[dist[i] == best[i]]
            vals[r] = vals[cands[rng.integers(0, cands.size)]]
    return out


def oracle_impute(data: MixedDataset, truth: FusionTruth, rng) -> dict[str, np.ndarray]:
    """Fill missing outcomes from their true generative conditionals given A
    (calibration reference, not a competing method)."""
    out = {}
    for spec in data.schema:
        col = data.columns[spec.name]
        out[spec.name] = data.destandardize(spec.name, col).copy() \
            if spec.kind == CONTINUOUS else col.copy()
    z_name, y_name, x_name = OUTCOME_NAMES
    miss = data.mask[z_name]
    out[z_name][miss] = truth.mean_z[miss] + truth.sd_z * rng.standard_normal(miss.sum())
    miss = data.mask[y_name]
    u = rng.random(miss.sum())
    out[y_name][miss] = (u[:, None] > np.cumsum(truth.py[miss], axis=1)).sum(axis=1) + 1
    miss = data.mask[x_name]
    u = rng.random(miss.sum())
    out[x_name][miss] = (u[:, None] > np.cumsum(truth.px[miss], axis=1)).sum(axis=1) + 1
    return out


# -- model-based methods ---------------------------------------------------------

@dataclass
class MethodSpec:
    """One column of the study: how to complete the fused data."""

    name: str
    kind: str                      # cmm_mix | joint_baseline | matching | oracle
    weights: object = "mrmr"       # "mrmr" | "equal" | explicit list (cmm_mix only)
    dstar: float | None = None
    target_r: float = 0.3
    t1: float = 0.05
    t2: float = 0.8
    bins: int = 10


@dataclass
class StudyConfig:
    replications: int = 10
    n_completed: int = 5
    iterations: int = 1200
    burn_in: int = 600
    n_components: int = 30
    seed: int = 0
    ci_level: float = 0.95
    blank_seed: int | None = None


def _as_all_random(data: MixedDataset) -> MixedDataset:
    schema = [VariableSpec(s.name, RANDOM, s.kind, s.levels) for s in data.schema]
    raw = {}
    for spec in data.schema:
        col = data.columns[spec.name].copy()
        if spec.kind == CONTINUOUS:
            col = data.destandardize(spec.name, col)
        raw[spec.name] = col
    return MixedDataset.from_arrays(schema, raw)


def fit_completions(fused: MixedDataset, method: MethodSpec, study: StudyConfig,
                    key: KeyedRng) -> list[dict[str, np.ndarray]]:
    """Produce ``study.n_completed`` completed datasets under one method."""
    m = study.n_completed
    if method.kind == "matching":
        return [statistical_matching(fused, key.stream("match", i)) for i in range(m)]
    if method.kind == "oracle":
        raise ConfigError("oracle completions need the generation truth; "
                          "use run_fusion_study")
    if method.kind == "joint_baseline":
        data = _as_all_random(fused)
        dist = gower.spec_from_dataset(data, dstar=1.0)
    elif method.kind == "cmm_mix":
        data = fused
        if isinstance(method.weights, str) and method.weights == "mrmr":
            report = infosel.mrmr_select(data, t1=method.t1, t2=method.t2,
                                         bins=method.bins)
            w = report.weights
        elif isinstance(method.weights, str) and method.weights == "equal":
            w = None
        else:
            w = np.asarray(method.weights, dtype=float)
        dist = gower.spec_from_dataset(data, weights=w, dstar=1.0)
        dstar = method.dstar if method.dstar is not None else \
            gower.solve_dstar(data, dist, method.target_r)
        dist = dist.with_dstar(dstar)
    else:
        raise ConfigError(f"unknown method kind {method.kind!r}")
    design = default_design(data.schema)
    hyper = default_hyperpriors(data, design, n_components=study.n_components,
                                distance=dist)
    ws = build_workspace(data, design, dist)
    cfg = ChainConfig(iterations=study.iterations, burn_in=study.burn_in,
                      thin=max((study.iterations - study.burn_in) // 50, 1),
                      seed=0, n_completed=m)
    draws = run_chain(ws, hyper, cfg, key.child("chain"))
    return draws.completed


# -- metrics ----------------------------------------------------------------------

def _rubin_cells(estimates: np.ndarray, within: np.ndarray, level: float):
    """Vectorized combining over cells: estimates/within are (m, n_cells)."""
    m = estimates.shape[0]
    qbar = estimates.mean(axis=0)
    ubar = within.mean(axis=0)
    b = estimates.var(axis=0, ddof=1)
    t_var = ubar + (1 + 1 / m) * b
    with np.errstate(divide="ignore", invalid="ignore"):
        df = np.where(b > 0, (m - 1) * (1 + ubar / ((1 + 1 / m) * b)) ** 2, np.inf)
    half = stats.t.ppf(0.5 + level / 2, df) * np.sqrt(t_var)
    half = np.where(t_var > 0, half, 0.0)
    return qbar, qbar - half, qbar + half


def cell_coverage(completed: list[dict[str, np.ndarray]], A: MixedDataset,
                  cells: list[tuple], level: float = 0.95):
    """Coverage indicators and absolute errors for every tracked bivariate cell."""
    n = A.n
    m = len(completed)
    x_name, y_name = OUTCOME_NAMES[2], OUTCOME_NAMES[1]
    est = np.empty((m, len(cells)))
    for d_i, comp in enumerate(completed):
        for c_i, (a_name, which, lev, a_lev, _) in enumerate(cells):
            out_col = comp[x_name] if which == "x" else comp[y_name]
            est[d_i, c_i] = np.mean((comp[a_name] == a_lev) & (out_col == lev))
    within = est * (1 - est) / n
    truth = np.array([c[4] for c in cells])
    qbar, lo, hi = _rubin_cells(est, within, level)
    covered = (lo <= truth) & (truth <= hi)
    return covered, np.abs(qbar - truth)


def crossblock_regression(completed: list[dict[str, np.ndarray]], cfg: GenConfig,
                          level: float = 0.95):
    """Regress the continuous outcome on the other two outcomes plus the true
    generating terms; combine per-coefficient across completed datasets.

    Returns (labels, RubinResult-like tuples, zero_flags): the outcome-block
    coefficients are zero in truth by conditional independence.
    """
    from .query import rubin_combine

    labels = ["intercept"]
    zero_flags = [False]
    x_name, y_name, z_name = OUTCOME_NAMES[2], OUTCOME_NAMES[1], OUTCOME_NAMES[0]
    for lev in range(2, cfg.x_levels + 1):
        labels.append(f"{x_name}=={lev}")
        zero_flags.append(True)
    for lev in range(2, cfg.y_levels + 1):
        labels.append(f"{y_name}=={lev}")
        zero_flags.append(True)
    for t_i, term in enumerate(cfg.z_terms):
        labels.append("z_term_" + "_".join(
            f"{v}" + (f"=={l}" if l is not None else "") for v, l in term.factors))
        zero_flags.append(False)

    ests = []
    variances = []
    for comp in completed:
        n = comp[z_name].size
        cols = [np.ones(n)]
        for lev in range(2, cfg.x_levels + 1):
            cols.append((comp[x_name] == lev).astype(float))
        for lev in range(2, cfg.y_levels + 1):
            cols.append((comp[y_name] == lev).astype(float))
        for term in cfg.z_terms:
            val = np.ones(n)
            for var, levl in term.factors:
                col = np.asarray(comp[var], dtype=float)
                val = val * ((col == levl).astype(float) if levl is not None else col)
            cols.append(val)
        X = np.column_stack(cols)
        yv = comp[z_name]
        XtX_inv = np.linalg.inv(X.T @ X)
        beta = XtX_inv @ (X.T @ yv)
        resid = yv - X @ beta
        s2 = resid @ resid / (n - X.shape[1])
        ests.append(beta)
        variances.append(s2 * np.diag(XtX_inv))
    ests = np.array(ests)
    variances = np.array(variances)
    results = [rubin_combine(ests[:, j], variances[:, j], level=level)
               for j in range(ests.shape[1])]
    return labels, results, zero_flags


def cmi_outcome_given_shared(completed: list[dict[str, np.ndarray]],
                             A: MixedDataset, z_bins: int = 4) -> float:
    """Mean conditional MI between the nominal and (binned) continuous
    outcomes given each shared column; near zero under the independence
    assumption the fusion relies on."""
    x_name, z_name = OUTCOME_NAMES[2], OUTCOME_NAMES[0]
    vals = []
    for comp in completed:
        zb = infosel.discretize(np.asarray(comp[z_name], dtype=float), z_bins)
        x = comp[x_name].astype(int)
        for a_name in A.names():
            a = A.columns[a_name].astype(int)
            cmi = 0.0
            for a_lev in np.unique(a):
                sel = a == a_lev
                w = sel.mean()
                if sel.sum() >= 2:
                    cmi += w * infosel.empirical_mi(x[sel], zb[sel])
            vals.append(cmi)
    return float(np.mean(vals))


@dataclass
class FusionReport:
    """Per-method study metrics plus the cross-block regression summary."""

    replications: int
    methods: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"replications": self.replications, "methods": self.methods}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def rows(self) -> list[tuple]:
        out = []
        for name in sorted(self.methods):
            for metric in sorted(self.methods[name]):
                val = self.methods[name][metric]
                if isinstance(val, (int, float)):
                    out.append((name, metric, val))
        return out

    def table(self) -> str:
        metrics = ["coverage_mean", "mae_mean", "err_q25_mean", "err_q75_mean",
                   "zero_coef_cover_rate", "cmi_mean"]
        hdr = f"{'method':<16}" + "".join(f"{m:>22}" for m in metrics)
        lines = [hdr]
        for name in self.methods:
            row = f"{name:<16}"
            for m in metrics:
                v = self.methods[name].get(m)
                row += f"{v:>22.4f}" if isinstance(v, (int, float)) else f"{'-':>22}"
            lines.append(row)
        return "\n".join(lines)


def run_fusion_study(A: MixedDataset, gen_cfg: GenConfig, methods: list[MethodSpec],
                     study: StudyConfig, truth_rng_tag: str = "gen") -> FusionReport:
    """Run the full study: per replication, regenerate outcomes, blank, fit
    every method, and score; aggregate means and Monte Carlo SEs."""
    key = KeyedRng(study.seed)
    per_rep: dict[str, dict[str, list]] = {
        m.name: {"coverage": [], "mae": [], "q25": [], "q75": [],
                 "zero_cover": [], "zero_total": [], "cmi": []}
        for m in methods
    }
    for rep in range(study.replications):
        data, truth = generate_fusion_replicate(A, gen_cfg, key.stream(truth_rng_tag, rep))
        fused = blank_three_way(data, seed=study.blank_seed)
        cells = truth.cell_probs(A)
        for method in methods:
            mkey = key.child("rep", rep, "method", method.name)
            if method.kind == "oracle":
                completed = [oracle_impute(fused, truth, mkey.stream("oracle", i))
                             for i in range(study.n_completed)]
            else:
                completed = fit_completions(fused, method, study, mkey)
            covered, abs_err = cell_coverage(completed, A, cells, study.ci_level)
            labels, results, zero_flags = crossblock_regression(
                completed, gen_cfg, study.ci_level)
            zc = [r.ci_lower <= 0.0 <= r.ci_upper
                  for r, z in zip(results, zero_flags) if z]
            rec = per_rep[method.name]
            rec["coverage"].append(float(covered.mean()))
            rec["mae"].append(float(abs_err.mean()))
            rec["q25"].append(float(np.quantile(abs_err, 0.25)))
            rec["q75"].append(float(np.quantile(abs_err, 0.75)))
            rec["zero_cover"].append(int(np.sum(zc)))
            rec["zero_total"].append(len(zc))
            rec["cmi"].append(cmi_outcome_given_shared(completed, A))
    report = FusionReport(replications=study.replications)
    for method in methods:
        rec = per_rep[method.name]
        cov = np.array(rec["coverage"])
        mae = np.array(rec["mae"])
        report.methods[method.name] = {
            "kind": method.kind,
            "coverage_mean": float(cov.mean()),
            "coverage_se": float(cov.std(ddof=1) / np.sqrt(cov.size)) if cov.size > 1 else 0.0,
            "mae_mean": float(mae.mean()),
            "mae_se": float(mae.std(ddof=1) / np.sqrt(mae.size)) if mae.size > 1 else 0.0,
            "err_q25_mean": float(np.mean(rec["q25"])),
            "err_q75_mean": float(np.mean(rec["q75"])),
            "zero_coef_cover_rate": float(sum(rec["zero_cover"]) / max(sum(rec["zero_total"]), 1)),
            "cmi_mean": float(np.mean(rec["cmi"])),
            "per_rep_coverage": rec["coverage"],
            "per_rep_mae": rec["mae"],
        }
    return report
