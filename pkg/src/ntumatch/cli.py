"""Command-line entry points.

Every command writes ``config.resolved.ini`` (all settings, defaults
included, plus the seed) into its output directory so the run can be
repeated exactly.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .errors import MatchingError
from .io import (RunConfig, load_market_dir, load_utilities, save_market, save_table, save_utilities,
                 worker_count, write_snapshot)

log = logging.getLogger("ntumatch")


def _config(args) -> RunConfig:
    over = {"run": {}}
    if getattr(args, "seed", None) is not None:
        over["run"]["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        over["run"]["output"] = args.out
    g = {k: getattr(args, k, None) for k in ("iterations", "burn_in", "chains")}
    over["gibbs"] = {k: v for k, v in g.items() if v is not None}
    if g["iterations"] is not None and g["burn_in"] is None:
        over["gibbs"]["burn_in"] = int(0.4 * g["iterations"])
    if getattr(args, "samples", None) is not None:
        over["mc"] = {"samples": args.samples}
    return RunConfig.load(args.config, over)


def _outdir(cfg: RunConfig) -> Path:
    d = Path(cfg.get("run", "output"))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _read_chain_files(paths):
    from .bayes import read_chain_csv

    draws, names = [], None
    for p in paths:
        d, nm, _ = read_chain_csv(p)
        if names is not None and nm != names:
            raise MatchingError(f"{p} has different parameters from the first chain file")
        names = nm
        draws.append(d)
    return np.vstack(draws), names


def _dgp_model(market):
    from .dgp import Z_NAMES, index_model

    if tuple(market.z_names) != Z_NAMES:
        raise MatchingError(f"the built-in model needs shared covariates {Z_NAMES}, got {market.z_names}")
    return index_model(market)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    from .dgp import simulate_market

    cfg = _config(args)
    out = _outdir(cfg)
    sim = simulate_market(cfg.dgp())
    save_market(out, sim.market, sim.matching)
    save_utilities(out / "utilities.csv", sim.utilities)
    save_table(out / "truth.csv", ["parameter", "value"],
               [[k, v] for k, v in zip(sim.model.param_names, sim.truth)])
    write_snapshot(out, cfg, {"command": "simulate", "seed": cfg.seed, "version": __version__})
    counts = sim.matching.counts(sim.market.n_colleges)
    print(f"simulated {sim.market.n_students} students; matched per school {counts.tolist()}; "
          f"wrote {out}")
    return 0


def cmd_estimate_bayes(args) -> int:
    from .bayes import GibbsData, run_chain, write_chain_csv
    from .diagnostics import psrf

    cfg = _config(args)
    out = _outdir(cfg)
    gcfg = cfg.gibbs()
    market, matching = load_market_dir(args.market)
    model = _dgp_model(market)
    GibbsData.build(market, matching, model)  # fail early on inconsistent data
    write_snapshot(out, cfg, {"command": "estimate-bayes", "market": str(args.market), "seed": cfg.seed})
    jobs = []
    for k in range(gcfg.chains):
        ck = out / f"chain_{k + 1}.ckpt.npz"
        resume = ck if args.resume and ck.exists() else None
        jobs.append(dict(chain_id=k, checkpoint=ck if gcfg.checkpoint_every else None, resume=resume))
    t0 = time.time()
    workers = min(worker_count(cfg), gcfg.chains)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(run_chain, market, matching, model, gcfg, **j) for j in jobs]
            chains = [f.result() for f in futs]
    else:
        chains = [run_chain(market, matching, model, gcfg, **j) for j in jobs]
    for k, ch in enumerate(chains):
        write_chain_csv(out / f"chain_{k + 1}.csv", ch)
        if ch.stability_violations:
            log.error("chain %d: %d stability violations", k + 1, ch.stability_violations)
    allx = np.vstack([c.draws for c in chains])
    r = psrf(chains).values if len(chains) > 1 else np.full(model.n_params, np.nan)
    rows = []
    for j, name in enumerate(model.param_names):
        q = np.quantile(allx[:, j], [0.025, 0.975])
        rows.append([name, allx[:, j].mean(), allx[:, j].std(ddof=1), q[0], q[1], r[j]])
    save_table(out / "estimates.csv", ["parameter", "mean", "sd", "q025", "q975", "psrf"], rows)
    print(f"{len(chains)} chain(s) x {gcfg.iterations} sweeps in {time.time() - t0:.1f}s; wrote {out}")
    for row in rows:
        print(f"  {row[0]:<14s} {row[1]: .4f} ({row[2]:.4f})")
    return 0


def cmd_estimate_semi(args) -> int:
    from .semiparam import GENERAL, REDUCED, average_derivatives, solve_coefficients

    cfg = _config(args)
    out = _outdir(cfg)
    market, matching = load_market_dir(args.market)
    shared = REDUCED if args.model == "reduced" else GENERAL
    mats = average_derivatives(market, matching, cfg.kernel(), shared=shared)
    est = solve_coefficients(mats)
    names = list(est.row("gmm"))
    rows = [[v] + [est.row(v)[k] for k in names] for v in est.shared]
    save_table(out / "semiparametric.csv", ["variant"] + names, rows)
    write_snapshot(out, cfg, {"command": "estimate-semi", "model": args.model, "market": str(args.market)})
    for r in rows:
        print(f"  {r[0]:<5s} beta_z={r[-2]: .4f} gamma_z={r[-1]: .4f}")
    return 0


def cmd_audit(args) -> int:
    from .market import audit_stability, compute_cutoffs, stable_from_cutoffs

    market, matching = load_market_dir(args.market)
    upath = Path(args.utilities) if args.utilities else Path(args.market) / "utilities.csv"
    lu = load_utilities(upath)
    rep = audit_stability(market, lu, matching)
    print(rep.summary())
    cut = compute_cutoffs(matching.assignment, market, lu)
    alloc = stable_from_cutoffs(market, lu, cut)
    same = bool(np.array_equal(alloc.matching.assignment, matching.assignment))
    print(f"cutoff allocation {'reproduces' if same else 'differs from'} the matching "
          f"({'clears' if alloc.clears else 'does not clear'})")
    status = 0 if rep.stable and same else 1
    if args.rank:
        from .semiparam import kernel_gradients, rank_condition

        if "z" not in market.z_names:
            print("rank condition: needs a shared covariate named 'z'")
        else:
            fn = kernel_gradients(market, matching, "z")
            zc = market.z[:, market.z_names.index("z")]
            rr = rank_condition(fn, np.median(zc), np.median(market.y, axis=0),
                                np.quantile(market.w, 0.25, axis=0), np.quantile(market.w, 0.75, axis=0))
            print(f"rank condition: {rr}")
    return status


def cmd_counterfactual(args) -> int:
    from .counterfactual import PriorityPolicy, simulate_counterfactual

    cfg = _config(args)
    out = _outdir(cfg)
    market, _ = load_market_dir(args.market)
    model = _dgp_model(market)
    draws, names = _read_chain_files(args.chain)
    if names != model.param_names:
        raise MatchingError("chain parameters do not match the model")
    s = cfg.sections["counterfactual"]
    scope = tuple(x.strip() for x in s["scope"].split(",") if x.strip()) or None
    policy = PriorityPolicy(s["flag"], scope)
    rep = simulate_counterfactual(
        market, model, draws, policy, distance_coef=s["distance_coef"] or model.param_names[0],
        sorting_values={k: market.z[:, j] for j, k in enumerate(market.z_names)},
        n_blocks=cfg.int("counterfactual", "n_blocks"), block_size=cfg.int("counterfactual", "block_size"),
        seed=cfg.seed, group_flag=s["group"] or None)
    rep.to_csv(out / "counterfactual.csv")
    write_snapshot(out, cfg, {"command": "counterfactual", "market": str(args.market),
                              "chains": [str(c) for c in args.chain]})
    for k, (b, c) in rep.sorting.items():
        print(f"  sorting {k}: {b:.3f} -> {c:.3f}")
    for g, wf in rep.welfare.items():
        print(f"  {g}: {wf.mean_km:+.3f} km, winners {wf.winners:.3f}, losers {wf.losers:.3f}")
    return 0


def cmd_fit(args) -> int:
    from .modelfit import fit_report, model_simulations, random_benchmark

    cfg = _config(args)
    out = _outdir(cfg)
    market, matching = load_market_dir(args.market)
    model = _dgp_model(market)
    draws, _ = _read_chain_files(args.chain)
    sims = model_simulations(market, model, draws, cfg.int("fit", "n_sims"), cfg.seed)
    bench = random_benchmark(market, cfg.int("fit", "benchmark_sims"), cfg.seed + 1)
    rep = fit_report(market, matching, sims, bench,
                     student_values={k: market.z[:, j] for j, k in enumerate(market.z_names)},
                     school_values={k: market.attributes[:, j] for j, k in enumerate(market.attribute_names)})
    rep.to_csv(out / "fit.csv")
    write_snapshot(out, cfg, {"command": "fit", "market": str(args.market)})
    for sec, k, a, b in rep.rows():
        print(f"  {k:<32s} model {a:8.3f}  random {b:8.3f}")
    return 0


def _mc_one(cfg: RunConfig, seed: int):
    from .dgp import simulate_market

    sim = simulate_market(cfg.dgp(seed=seed))
    if cfg.get("mc", "estimator") == "bayes":
        from .bayes import run_chain

        ch = run_chain(sim.market, sim.matching, sim.model, cfg.gibbs())
        return list(sim.model.param_names), ch.mean, sim.truth
    from .semiparam import GENERAL, REDUCED, average_derivatives, solve_coefficients

    shared = REDUCED if cfg.get("mc", "model") == "reduced" else GENERAL
    est = solve_coefficients(average_derivatives(sim.market, sim.matching, cfg.kernel(), shared=shared))
    names, vals = [], []
    for variant, (bz, gz) in est.shared.items():
        names += [f"beta_z[{variant}]", f"gamma_z[{variant}]"]
        vals += [bz, gz]
    row = est.row("gmm")
    keys = [k for k in row if k.startswith(("beta_s", "gamma_m"))]
    return keys + names, np.array([row[k] for k in keys] + vals), None


def cmd_mc(args) -> int:
    cfg = _config(args)
    if args.estimator:
        cfg.sections["mc"]["estimator"] = args.estimator
    if args.model:
        cfg.sections["mc"]["model"] = args.model
        if args.model == "reduced":
            cfg.sections["dgp"]["preset"] = "reduced"
    out = _outdir(cfg)
    write_snapshot(out, cfg, {"command": "mc"})
    n = cfg.int("mc", "samples")
    seeds = [cfg.int("mc", "first_seed") + k for k in range(n)]
    workers = worker_count(cfg)
    t0 = time.time()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            res = list(ex.map(_mc_one, [cfg] * n, seeds))
    else:
        res = [_mc_one(cfg, s) for s in seeds]
    names = res[0][0]
    est = np.array([r[1] for r in res])
    save_table(out / "mc_estimates.csv", ["sample_seed"] + names,
               [[str(s)] + list(row) for s, row in zip(seeds, est)])
    truth = res[0][2]
    rows = []
    for j, name in enumerate(names):
        col = est[:, j]
        t = truth[j] if truth is not None else 1.0
        rows.append([name, t, np.nanmedian(col), np.nanmean(col), np.nanstd(col, ddof=1) if n > 1 else 0.0])
    save_table(out / "mc_summary.csv", ["parameter", "truth", "median", "mean", "sd"], rows)
    print(f"{n} samples in {time.time() - t0:.1f}s")
    print(f"  {'parameter':<18s} {'truth':>7s} {'Median':>8s} {'Mean':>8s} {'Std. Dev.':>10s}")
    for r in rows:
        print(f"  {r[0]:<18s} {r[1]:7.2f} {r[2]:8.3f} {r[3]:8.3f} {r[4]:10.3f}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ntumatch", description="Simulate and estimate two-sided matching markets")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--seed", type=int)
        if out:
            sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("simulate", help="draw a market and its stable matching")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("estimate-bayes", help="Gibbs sampler on a market")
    common(sp)
    sp.add_argument("--market", required=True, help="directory written by 'simulate' or save_market")
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--burn-in", dest="burn_in", type=int)
    sp.add_argument("--chains", type=int)
    sp.add_argument("--resume", action="store_true", help="continue from checkpoints in --out")
    sp.set_defaults(func=cmd_estimate_bayes)

    sp = sub.add_parser("estimate-semi", help="average-derivative estimator")
    common(sp)
    sp.add_argument("--market", required=True)
    sp.add_argument("--model", choices=["general", "reduced"], default="general")
    sp.set_defaults(func=cmd_estimate_semi)

    sp = sub.add_parser("audit", help="stability audit of a matching under latent utilities")
    sp.add_argument("--market", required=True)
    sp.add_argument("--utilities", help="utilities CSV (default: <market>/utilities.csv)")
    sp.add_argument("--rank", action="store_true", help="also report the kernel rank condition")
    sp.set_defaults(func=cmd_audit)

    sp = sub.add_parser("counterfactual", help="priority-policy simulation from posterior draws")
    common(sp)
    sp.add_argument("--market", required=True)
    sp.add_argument("--chain", required=True, nargs="+", help="chain CSV file(s)")
    sp.set_defaults(func=cmd_counterfactual)

    sp = sub.add_parser("fit", help="model-fit tables against a random benchmark")
    common(sp)
    sp.add_argument("--market", required=True)
    sp.add_argument("--chain", required=True, nargs="+")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("mc", help="Monte Carlo over simulated samples")
    common(sp)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--burn-in", dest="burn_in", type=int)
    sp.add_argument("--estimator", choices=["bayes", "semi"])
    sp.add_argument("--model", choices=["general", "reduced"])
    sp.set_defaults(func=cmd_mc)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MatchingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
