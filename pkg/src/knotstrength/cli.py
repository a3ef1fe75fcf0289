"""Command line interface.

Subcommands cover the whole workflow: simulate a dataset, fit the spatial
model, summarize or predict from stored draws, run the predictive checks,
and cross-validate against the regression baselines.

Exit codes: 0 on success, 1 on usage or data errors, 2 when sampling
finished but the run is unusable (a chain spent too much of its sampling
phase diverging).
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from .diagnostics import posterior_quantiles
from .estimators import MoeMaxKnotRegression, MoeRegression, SpatialStrengthModel
from .evaluation import (
    kfold_cv,
    large_knot_subgroup,
    posterior_predictive_check,
    predict_strength,
    subgroup_mspe,
)
from .hmc import run_chains
from .io import (
    RunConfig,
    load_column_map,
    load_config,
    read_dataset,
    read_draws_csv,
    write_cv_csv,
    write_draws_csv,
    write_knots_csv,
    write_ppc_csv,
    write_ppc_histograms,
    write_predictions_csv,
    write_quantiles_csv,
    write_specimens_csv,
    write_subgroup_csv,
    write_truth_csv,
)
from .data import validate_specimens
from .posterior import AugmentedPosterior
from .simulate import generate_dataset


class _CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; that code is reserved for
    # sampler failure here, so route usage problems through _CliError
    def error(self, message):
        raise _CliError(message)


def _add_config_arg(parser):
    parser.add_argument("--config", metavar="JSON",
                        help="run configuration file; omit for defaults")
    parser.add_argument("--seed", type=int, help="override the config seed")


def _config_from(args):
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def _add_data_args(parser):
    parser.add_argument("--specimens", required=True, metavar="CSV",
                        help="specimen table (id, moe_psi_e6, uts_psi_e3, failure_cell)")
    parser.add_argument("--knots", metavar="CSV",
                        help="knot table (specimen_id, lx_in, ly_in, volume_in3, edge)")
    parser.add_argument("--column-map", metavar="JSON",
                        help="mapping from canonical column names to the file's names")


def _load_data(args, config):
    column_map = load_column_map(args.column_map) if args.column_map else None
    specimens = read_dataset(args.specimens, args.knots, column_map)
    return validate_specimens(specimens, config.grid())


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="knotstrength",
                     description="Spatial Bayesian modelling of lumber tensile strength")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic dataset")
    _add_config_arg(p)
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--n-specimens", type=int, help="override the config size")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="sample the posterior for observed specimens")
    _add_config_arg(p)
    _add_data_args(p)
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("summarize", help="quantile table from stored draws")
    p.add_argument("--draws", required=True, metavar="CSV")
    p.add_argument("--out", metavar="CSV", help="output path; stdout if omitted")
    p.set_defaults(func=_cmd_summarize)

    p = sub.add_parser("ppc", help="posterior predictive checks from stored draws")
    _add_config_arg(p)
    _add_data_args(p)
    p.add_argument("--draws", required=True, metavar="CSV")
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=_cmd_ppc)

    p = sub.add_parser("cv", help="cross-validate against the regression baselines")
    _add_config_arg(p)
    _add_data_args(p)
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=_cmd_cv)

    p = sub.add_parser("predict", help="predictive intervals for new specimens")
    _add_config_arg(p)
    _add_data_args(p)
    p.add_argument("--draws", required=True, metavar="CSV")
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=_cmd_predict)

    return parser


def _cmd_simulate(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.n_specimens is not None:
        overrides["n_specimens"] = args.n_specimens
    config = load_config(args.config, overrides)  # overrides win over the file
    dataset = generate_dataset(config.sim_config())

    os.makedirs(args.out, exist_ok=True)
    write_specimens_csv(os.path.join(args.out, "specimens.csv"), dataset.specimens)
    write_knots_csv(os.path.join(args.out, "knots.csv"), dataset.specimens)
    write_truth_csv(os.path.join(args.out, "truth.csv"), dataset)
    n_knots = sum(len(s.knots) for s in dataset.specimens)
    print(f"wrote {len(dataset.specimens)} specimens ({n_knots} knots) to {args.out}")
    return 0


def _cmd_fit(args) -> int:
    config = _config_from(args)
    specimens = _load_data(args, config)
    posterior = AugmentedPosterior(specimens, config.grid(), config.decay_kernel())
    draws, diagnostics = run_chains(posterior, config.hmc_config())

    os.makedirs(args.out, exist_ok=True)
    write_draws_csv(os.path.join(args.out, "draws.csv"), draws)
    with open(os.path.join(args.out, "diagnostics.txt"), "w") as fh:
        fh.write(str(diagnostics) + "\n")
    print(diagnostics)
    if diagnostics.failed:
        print("error: a chain exceeded the divergence budget; "
              "treat these draws as unusable", file=sys.stderr)
        return 2
    return 0


def _cmd_summarize(args) -> int:
    draws = read_draws_csv(args.draws)
    quantiles = posterior_quantiles(draws.params, (0.5, 0.025, 0.975))
    if args.out:
        write_quantiles_csv(args.out, draws.param_names, quantiles)
        print(f"wrote {args.out}")
    else:
        print("parameter,q50,q2.5,q97.5")
        for j, name in enumerate(draws.param_names):
            row = ",".join(format(quantiles[i, j], ".6g") for i in range(3))
            print(f"{name},{row}")
    return 0


def _cmd_ppc(args) -> int:
    config = _config_from(args)
    specimens = _load_data(args, config)
    draws = read_draws_csv(args.draws)
    report = posterior_predictive_check(
        draws, specimens, config.grid(), config.decay_kernel(),
        n_draws=config.n_predict_draws, seed=config.seed,
    )
    os.makedirs(args.out, exist_ok=True)
    write_ppc_csv(os.path.join(args.out, "ppc_report.csv"), report)
    write_ppc_histograms(args.out, report)
    for name, stat in report.statistics.items():
        print(f"{name}: observed {stat.observed:.4g}, p-value {stat.p_value:.3f}")
    return 0


def _cmd_cv(args) -> int:
    config = _config_from(args)
    specimens = _load_data(args, config)
    models = {
        "spatial": SpatialStrengthModel(
            n_cells=config.n_cells, span_length=config.span_length,
            width=config.width, cutoff=config.cutoff, kernel=config.kernel,
            n_chains=config.n_chains, iterations=config.iterations,
            warmup=config.warmup, target_accept=config.target_accept,
            max_leapfrog_steps=config.max_leapfrog_steps,
            trajectory_time=config.trajectory_time, seed=config.seed,
            adapt_mass=config.adapt_mass, n_predict_draws=config.n_predict_draws,
        ),
        "moe": MoeRegression(),
        "moe_maxknot": MoeMaxKnotRegression(),
    }
    report = kfold_cv(specimens, models, k=config.cv_folds,
                      seed=config.seed, level=config.level)

    os.makedirs(args.out, exist_ok=True)
    write_cv_csv(os.path.join(args.out, "cv_report.csv"), report)
    mask = large_knot_subgroup(specimens, config.grid())
    if mask.sum() >= 2:
        write_subgroup_csv(os.path.join(args.out, "cv_subgroup.csv"),
                           subgroup_mspe(report, mask))
    for name in report.model_names:
        m = report.metrics[name]
        print(f"{name}: mspe {m.mspe:.4g} (se {m.mspe_se:.2g}), "
              f"mape {m.mape:.4g}, interval length {m.interval_length:.4g}, "
              f"coverage {m.coverage:.3f}")
    return 0


def _cmd_predict(args) -> int:
    config = _config_from(args)
    specimens = _load_data(args, config)
    draws = read_draws_csv(args.draws)
    summary = predict_strength(
        draws, specimens, config.grid(), config.decay_kernel(),
        n_draws=config.n_predict_draws, seed=config.seed, level=config.level,
    )
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "predictions.csv")
    write_predictions_csv(path, summary)
    print(f"wrote predictions for {len(summary.specimen_ids)} specimens to {path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
