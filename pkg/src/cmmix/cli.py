"""Command-line driver: feature selection, fitting, imputation, queries,
and the fusion study.

Config files are TOML (JSON accepted). All randomness descends from one
seed through keyed streams, so any subcommand rerun with the same config
and seed writes byte-identical outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import fusion, gower, infosel, query, serialize
from .data import DesignConfig, default_design, load_csv, load_schema
from .errors import CmmixError, ConfigError
from .model import build_workspace, default_hyperpriors
from .rng import KeyedRng
from .sampler.diagnostics import gelman_rubin
from .sampler.sweep import ChainConfig, run_chain


def load_config(path) -> dict:
    raw = open(path, "rb").read()
    if str(path).endswith(".json"):
        return json.loads(raw.decode("utf-8"))
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    return tomllib.loads(raw.decode("utf-8"))


def _output_dir(cfg: dict, args) -> str:
    out = os.environ.get("CMMIX_OUTPUT_DIR") or cfg.get("output", {}).get("dir", "out")
    os.makedirs(out, exist_ok=True)
    return out


def _load_dataset(cfg: dict):
    data_cfg = cfg.get("data", {})
    if "path" not in data_cfg or "schema" not in data_cfg:
        raise ConfigError("config needs [data] path and schema")
    schema = load_schema(data_cfg["schema"])
    return load_csv(data_cfg["path"], schema)


def _build_design(cfg: dict, schema) -> DesignConfig:
    d = cfg.get("design", {})
    design = default_design(schema, ordinal_fixed_linear=d.get("ordinal_fixed_linear", False))
    for extra in d.get("extra_terms", []):
        design.terms.append(serialize.term_from_dict(extra))
    design.validate(schema)
    return design


def _resolve_distance(cfg: dict, data) -> gower.DistanceSpec:
    d = cfg.get("distance", {})
    weights = d.get("weights", "equal")
    if weights == "mrmr":
        report = infosel.mrmr_select(data, t1=d.get("t1", 0.05), t2=d.get("t2", 0.8),
                                     bins=d.get("bins", 10))
        w = report.weights
    elif weights == "equal":
        w = None
    else:
        w = np.asarray(weights, dtype=float)
    spec = gower.spec_from_dataset(data, weights=w, dstar=1.0)
    if "dstar" in d:
        return spec.with_dstar(float(d["dstar"]))
    if "target_r" in d:
        return spec.with_dstar(gower.solve_dstar(data, spec, float(d["target_r"])))
    return spec.with_dstar(0.5)


def _chain_config(cfg: dict, seed_override=None) -> ChainConfig:
    c = cfg.get("chain", {})
    seed = seed_override if seed_override is not None else c.get("seed", 0)
    return ChainConfig(
        iterations=c.get("iterations", 2000),
        burn_in=c.get("burn_in", 1000),
        thin=c.get("thin", 10),
        seed=seed,
        n_completed=c.get("m", 5),
    )


def cmd_show_config(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    effective = {
        "data": cfg.get("data", {}),
        "design": cfg.get("design", {"ordinal_fixed_linear": False, "extra_terms": []}),
        "distance": {"weights": "equal", "dstar": 0.5, **cfg.get("distance", {})},
        "hyper": {"n_components": 50, "tau2_max": 6.0, **cfg.get("hyper", {})},
        "chain": {"iterations": 2000, "burn_in": 1000, "thin": 10, "seed": 0,
                  "m": 5, **cfg.get("chain", {})},
        "output": {"dir": "out", **cfg.get("output", {})},
        "fusion": cfg.get("fusion", {}),
    }
    print(json.dumps(effective, indent=2, sort_keys=True))
    return 0


def cmd_select_features(args) -> int:
    cfg = load_config(args.config)
    data = _load_dataset(cfg)
    d = cfg.get("distance", {})
    report = infosel.mrmr_select(data, t1=d.get("t1", 0.05), t2=d.get("t2", 0.8),
                                 bins=d.get("bins", 10))
    out = _output_dir(cfg, args)
    with open(os.path.join(out, "mi_report.json"), "w") as fh:
        fh.write(report.to_json())
    weights_fragment = {"weights": report.weights.tolist()}
    with open(os.path.join(out, "distance_weights.json"), "w") as fh:
        json.dump(weights_fragment, fh, indent=2, sort_keys=True)
    print(report.table())
    return 0


def _run_one_chain(packed):
    ws, hyper, chain_cfg, chain_id = packed
    key = KeyedRng(chain_cfg.seed).child("chain", chain_id)
    return run_chain(ws, hyper, chain_cfg, key)


def _fit(cfg: dict, args, completed_only: bool = False) -> int:
    data = _load_dataset(cfg)
    design = _build_design(cfg, data.schema)
    dist = _resolve_distance(cfg, data)
    hyper_cfg = cfg.get("hyper", {})
    hyper = default_hyperpriors(
        data, design, n_components=hyper_cfg.get("n_components", 50),
        tau2_max=hyper_cfg.get("tau2_max", 6.0), distance=dist)
    for name in ("a_alpha", "b_alpha", "a_tau", "b_tau", "nu", "a_s", "h"):
        if name in hyper_cfg:
            setattr(hyper, name, float(hyper_cfg[name]))
    ws = build_workspace(data, design, dist)
    chain_cfg = _chain_config(cfg, args.seed)
    out = _output_dir(cfg, args)

    n_chains = args.chains
    packed = [(ws, hyper, chain_cfg, c) for c in range(n_chains)]
    if args.threads > 1 and n_chains > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            all_draws = list(pool.map(_run_one_chain, packed))
    else:
        all_draws = [_run_one_chain(p) for p in packed]

    for c, draws in enumerate(all_draws):
        subdir = os.path.join(out, f"chain_{c}") if n_chains > 1 else out
        os.makedirs(subdir, exist_ok=True)
        if completed_only:
            for i, comp in enumerate(draws.completed):
                serialize.write_completed_csv(
                    os.path.join(subdir, f"completed_{i:02d}.csv"), data.schema, comp)
        else:
            serialize.save_draws(draws, subdir)
    if n_chains > 1:
        alphas = np.array([d.trace[d.config.burn_in:, 1] for d in all_draws])
        print(f"gelman_rubin_alpha: {gelman_rubin(alphas):.4f}")
    print(f"wrote {'completed datasets' if completed_only else 'draws'} to {out}")
    return 0


def cmd_fit(args) -> int:
    return _fit(load_config(args.config), args)


def cmd_impute(args) -> int:
    return _fit(load_config(args.config), args, completed_only=True)


def _query_functional(spec: dict, draws):
    ws, hyper = draws.ws, draws.hyper
    kind = spec.get("functional")
    f = spec.get("f", {})
    x = spec.get("x", {})
    marginalize = spec.get("marginalize", [])
    f_average = spec.get("f_average")
    if f_average:
        # population-share table: evaluate at each f point, fixed average
        total_w = sum(entry["weight"] for entry in f_average)
        parts = []
        for entry in f_average:
            sub = {k: v for k, v in spec.items() if k != "f_average"}
            sub["f"] = entry["f"]
            parts.append((entry["weight"] / total_w, _query_functional(sub, draws)))

        def averaged(state):
            return sum(w * fn(state) for w, fn in parts)
        return averaged

    if kind == "pr_x_given_f":
        def fn(state):
            return query.pr_x_given_f(state, ws, f, x)
        return fn
    if kind == "pr_y_given_xf":
        y = spec.get("y", {})
        mc = spec.get("mc_samples", 20000)

        def fn(state):
            def slice_fn(x_full):
                return query.pr_y_given_xf(state, ws, hyper, f, x_full, y,
                                           mc_samples=mc,
                                           rng=np.random.default_rng(0))[0]
            if marginalize:
                partial = {k: v for k, v in x.items() if k not in marginalize}
                return query.marginalize_nominal(state, ws, f, partial, slice_fn)
            return slice_fn(x)
        return fn
    if kind == "density":
        wz = spec.get("wz", {})

        def fn(state):
            def slice_fn(x_full):
                return query.joint_conditional_density(state, ws, hyper, f, x_full, wz)
            if marginalize:
                partial = {k: v for k, v in x.items() if k not in marginalize}
                return query.marginalize_nominal(state, ws, f, partial, slice_fn)
            return slice_fn(x)
        return fn
    raise ConfigError(f"unknown functional {kind!r}")


def cmd_query(args) -> int:
    with open(args.functional) as fh:
        spec = json.load(fh)
    draws = serialize.load_draws(args.draws)
    level = spec.get("level", 0.9)
    out_path = args.output or os.path.join(args.draws, "query.csv")

    grid = spec.get("grid")
    rows = []
    if grid:
        var, lo, hi, points = grid["var"], grid["lo"], grid["hi"], grid.get("points", 41)
        for val in np.linspace(lo, hi, points):
            spec_i = dict(spec)
            spec_i["wz"] = {**spec.get("wz", {}), var: float(val)}
            fn = _query_functional(spec_i, draws)
            summ = query.summarize_over_draws(draws, fn, level=level)
            rows.append((float(val), summ.mean, summ.lower, summ.upper))
        header = [grid["var"], "mean", "lower", "upper"]
    else:
        fn = _query_functional(spec, draws)
        summ = query.summarize_over_draws(draws, fn, level=level)
        rows.append(("value", summ.mean, summ.lower, summ.upper))
        header = ["point", "mean", "lower", "upper"]
        per_draw_path = os.path.splitext(out_path)[0] + "_draws.csv"
        with open(per_draw_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["draw", "value"])
            for i, v in enumerate(summ.values):
                w.writerow([i, repr(float(v))])
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    print(f"wrote {out_path}")
    return 0


def _fusion_methods(cfg: dict) -> list[fusion.MethodSpec]:
    specs = cfg.get("methods")
    if not specs:
        return [
            fusion.MethodSpec(name="cmm", kind="cmm_mix", weights="mrmr", target_r=0.3),
            fusion.MethodSpec(name="joint", kind="joint_baseline"),
            fusion.MethodSpec(name="matching", kind="matching"),
        ]
    out = []
    for s in specs:
        out.append(fusion.MethodSpec(
            name=s["name"], kind=s["kind"], weights=s.get("weights", "mrmr"),
            dstar=s.get("dstar"), target_r=s.get("target_r", 0.3),
            t1=s.get("t1", 0.05), t2=s.get("t2", 0.8), bins=s.get("bins", 10)))
    return out


def cmd_fuse_sim(args) -> int:
    cfg = load_config(args.config)
    fcfg = cfg.get("fusion", {})
    shared = fcfg.get("shared", {})
    A = fusion.synthetic_shared_data(
        n=shared.get("n", 600), seed=shared.get("seed", 0),
        ordinal_levels=tuple(shared.get("ordinal_levels", (4, 4, 5, 5, 3, 3))),
        nominal_levels=tuple(shared.get("nominal_levels", (2, 2, 3, 2, 2))),
        rho=shared.get("rho", 0.35))
    gen_cfg = fusion.default_gen_config(A, x_levels=fcfg.get("x_levels", 3),
                                        y_levels=fcfg.get("y_levels", 3))
    study = fusion.StudyConfig(
        replications=fcfg.get("replications", 10),
        n_completed=fcfg.get("m", 5),
        iterations=fcfg.get("iterations", 1200),
        burn_in=fcfg.get("burn_in", 600),
        n_components=fcfg.get("n_components", 30),
        seed=args.seed if args.seed is not None else fcfg.get("seed", 0),
        ci_level=fcfg.get("ci_level", 0.95))
    methods = _fusion_methods(fcfg)
    report = fusion.run_fusion_study(A, gen_cfg, methods, study)
    out = _output_dir(cfg, args)
    with open(os.path.join(out, "fusion_report.json"), "w") as fh:
        fh.write(report.to_json())
    with open(os.path.join(out, "fusion_report.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "metric", "value"])
        for row in report.rows():
            w.writerow([row[0], row[1], repr(float(row[2]))])
    print(report.table())
    return 0


def cmd_report(args) -> int:
    path = args.input
    if os.path.isdir(path):
        fr = os.path.join(path, "fusion_report.json")
        if os.path.exists(fr):
            with open(fr) as fh:
                doc = json.load(fh)
            report = fusion.FusionReport(replications=doc["replications"],
                                         methods=doc["methods"])
            print(report.table())
            return 0
        tr = os.path.join(path, "trace.csv")
        if os.path.exists(tr):
            rows = []
            with open(tr) as fh:
                reader = csv.reader(fh)
                cols = next(reader)
                for row in reader:
                    rows.append([float(v) for v in row])
            arr = np.array(rows)
            print(f"{'parameter':<20}{'mean':>12}{'sd':>12}{'q05':>12}{'q95':>12}")
            for j, name in enumerate(cols[1:], start=1):
                col = arr[:, j]
                q05, q95 = np.quantile(col, [0.05, 0.95])
                print(f"{name:<20}{col.mean():>12.4f}{col.std(ddof=1):>12.4f}"
                      f"{q05:>12.4f}{q95:>12.4f}")
            return 0
    raise ConfigError(f"nothing to report at {path!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmmix")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, needs_config=True):
        p = sub.add_parser(name)
        if needs_config:
            p.add_argument("--config", required=(name != "show-config"))
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--chains", type=int, default=1)
        p.add_argument("--threads", type=int, default=1)
        p.set_defaults(fn=fn)
        return p

    add("show-config", cmd_show_config)
    add("select-features", cmd_select_features)
    add("fit", cmd_fit)
    add("impute", cmd_impute)
    add("fuse-sim", cmd_fuse_sim)
    q = add("query", cmd_query, needs_config=False)
    q.add_argument("--draws", required=True)
    q.add_argument("--functional", required=True)
    q.add_argument("--output", default=None)
    r = add("report", cmd_report, needs_config=False)
    r.add_argument("--input", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CmmixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
