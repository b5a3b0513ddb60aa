"""Command-line interface.

Every subcommand writes its outputs and a ``manifest.json`` into the
directory given by ``-o``.  ``qfavar rerun MANIFEST`` repeats a recorded run.
Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np
import pandas as pd

log = logging.getLogger("qfavar")

__all__ = ["main", "build_parser"]


class UsageError(Exception):
    pass


def _threads(args):
    if getattr(args, "threads", None) is not None:
        n = args.threads
    else:
        n = int(os.environ.get("QFAVAR_THREADS", "1"))
    if n < 1:
        raise UsageError("--threads must be >= 1")
    return n


def _thread_limit(n):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(limits=n)


def _float_list(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _int_list(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _load_config(args):
    from .panel import ModelConfig, load_config

    config = load_config(args.config) if getattr(args, "config", None) else ModelConfig()
    changes = {}
    for attr, key in (("method", "method"), ("variant", "variant"), ("horizon", "horizon"), ("p", "p")):
        val = getattr(args, attr, None)
        if val is not None:
            changes[key] = val
    if getattr(args, "quantiles", None):
        changes["quantiles"] = tuple(_float_list(args.quantiles))
    if changes:
        config = config.replace(**changes)
    mc = {}
    for attr, key in (("iterations", "iterations"), ("burn_in", "burn_in"), ("thin", "thin")):
        val = getattr(args, attr, None)
        if val is not None:
            mc[key] = val
    if getattr(args, "seed", None) is not None:
        mc["seed"] = args.seed
        config = config.replace(vb=dataclasses.replace(config.vb, seed=args.seed))
    if mc:
        config = config.replace(mcmc=dataclasses.replace(config.mcmc, **mc))
    # re-run validation on the combined settings
    return type(config).from_dict(config.to_dict())


def _read_panel(args):
    from .panel import load_panel, transform_series

    schema = {}
    if getattr(args, "globals", None):
        schema["globals"] = [g for g in args.globals.split(",") if g]
    if getattr(args, "date_column", None):
        schema["date_column"] = args.date_column
    panel = load_panel(args.data, schema)
    if getattr(args, "transform", None):
        spec = json.loads(Path(args.transform).read_text(encoding="utf-8"))
        panel = transform_series(panel, spec)
    return panel


def _out_dir(args):
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------------------------------------------------------
# subcommands


def cmd_simulate(args, threads):
    from .panel import write_panel
    from .simulate import SimulationSettings, simulate_qfavar

    out = _out_dir(args)
    settings = SimulationSettings(quantiles=tuple(_float_list(args.quantiles)) if args.quantiles else (0.1, 0.5, 0.9),
                                  noise=args.noise, hetero=args.hetero,
                                  **({"noise_scale": args.noise_scale} if args.noise_scale is not None else {}))
    dims = dict(m=args.m, n=args.n, k=args.k, T=args.T, p=args.p_true)
    panel, truth = simulate_qfavar(dims, settings, args.seed)
    write_panel(panel, out / "panel.csv")
    truth.save(out / "truth.json")
    return [out / "panel.csv", out / "truth.json"], {"dims": dims, "settings": dataclasses.asdict(settings)}, args.seed


def cmd_estimate(args, threads):
    from .forecast import fit_model
    from .io import save_posterior, to_jsonable

    config = _load_config(args)
    panel = _read_panel(args)
    out = _out_dir(args)
    fit = fit_model(panel, config, config.variant)
    if config.variant in ("QAR", "QAR-X"):
        path = out / "qar.json"
        path.write_text(json.dumps(to_jsonable(dataclasses.asdict(fit)), sort_keys=True), encoding="utf-8")
        return [path], config.to_dict(), config.mcmc.seed
    path = save_posterior(fit, out / "posterior.bin")
    factors = pd.DataFrame(fit.F.mean(axis=0), index=pd.Index(fit.time_index, name="date"),
                           columns=fit.layout.factor_labels(fit.indicator_labels))
    factors.to_csv(out / "factors.csv")
    return [path, path.with_suffix(".json"), out / "factors.csv"], config.to_dict(), config.mcmc.seed


def _load_model(path):
    from .io import load_posterior
    from .qar import QARFit

    path = Path(path)
    if path.suffix == ".json" and path.name.startswith("qar"):
        data = json.loads(path.read_text(encoding="utf-8"))
        for key in ("coef", "y_tail", "g_tail", "g_intercept", "g_Phi"):
            data[key] = np.asarray(data[key], dtype=float)
        data["quantiles"] = tuple(data["quantiles"])
        return QARFit(**data)
    return load_posterior(path)


def cmd_forecast(args, threads):
    from .forecast import forecast_fan

    model = _load_model(args.posterior)
    out = _out_dir(args)
    qs = _float_list(args.quantiles) if args.quantiles else None
    fan = forecast_fan(model, args.horizon, qs, args.filter_explosive)
    fan.to_frame().to_csv(out / "forecasts.csv", index=False)
    outputs = [out / "forecasts.csv"]
    if args.density:
        rows = []
        for s, label in enumerate(fan.series_labels):
            grid, dens = fan.density(args.density_horizon, s)
            rows.append(pd.DataFrame({"variable": label, "horizon": args.density_horizon, "x": grid,
                                      "density": dens}))
        pd.concat(rows).to_csv(out / "densities.csv", index=False)
        outputs.append(out / "densities.csv")
    return outputs, getattr(model, "config", None), getattr(model, "seed", None)


def cmd_irf(args, threads):
    from .structural import irf_from_draws

    draws = _load_model(args.posterior)
    out = _out_dir(args)
    labels = draws.state_labels
    shocks = args.shock or list(draws.global_labels[:draws.layout.k]) or labels
    for s in shocks:
        if s not in labels:
            raise ValueError(f"unknown shock {s!r}; available: {labels}")
    lay = draws.layout
    state_q = [q for q in lay.quantiles for _ in range(lay.m)] + [np.nan] * lay.k
    var_labels = [draws.series_labels[b] for b in lay.block_series]
    var_q = [lay.quantiles[r] for r in lay.block_quantile]
    frames = []
    for s in shocks:
        res = irf_from_draws(draws, s, args.horizon, args.omega_mode, args.filter_explosive)
        frames.append(res.to_frame(s, labels, var_labels, var_q, state_q))
    pd.concat(frames).to_csv(out / "irf.csv", index=False)
    return [out / "irf.csv"], draws.config, draws.seed


def _fevd_frames(draws, res):
    lay = draws.layout
    labels = draws.state_labels
    var_labels = [f"{draws.series_labels[b]}(q={lay.quantiles[r]:g})"
                  for b, r in zip(lay.block_series, lay.block_quantile)]
    state = pd.concat({"normalized": pd.DataFrame(res.median("state"), index=labels, columns=labels),
                       "raw": pd.DataFrame(res.median("state_raw"), index=labels, columns=labels)},
                      names=["kind", "target"])
    var = pd.concat({"normalized": pd.DataFrame(res.median("variable"), index=var_labels, columns=labels),
                     "raw": pd.DataFrame(res.median("variable_raw"), index=var_labels, columns=labels)},
                    names=["kind", "target"])
    return state, var, var_labels


def cmd_fevd(args, threads):
    from .structural import fevd_from_draws

    draws = _load_model(args.posterior)
    out = _out_dir(args)
    res = fevd_from_draws(draws, args.horizon, args.omega_mode, args.filter_explosive)
    state, var, _ = _fevd_frames(draws, res)
    state.to_csv(out / "fevd_state.csv")
    var.to_csv(out / "fevd_variable.csv")
    return [out / "fevd_state.csv", out / "fevd_variable.csv"], draws.config, draws.seed


def cmd_connect(args, threads):
    from .structural import connectedness, fevd_from_draws

    draws = _load_model(args.posterior)
    out = _out_dir(args)
    res = fevd_from_draws(draws, args.horizon, args.omega_mode, args.filter_explosive)
    _, _, var_labels = _fevd_frames(draws, res)
    cm = connectedness(res.median("variable"), res.median("state"), args.threshold, var_labels,
                       draws.state_labels)
    cm.edges.to_csv(out / "edges.csv", index=False)
    pd.DataFrame(cm.matrix, index=cm.labels, columns=cm.labels).to_csv(out / "connectedness.csv")
    (out / "network.dot").write_text(cm.to_dot(), encoding="utf-8")
    return [out / "edges.csv", out / "connectedness.csv", out / "network.dot"], draws.config, draws.seed


def cmd_evaluate(args, threads):
    from .evaluate import ScoreSeries, commonality_table, format_report, tstat_table

    out = _out_dir(args)
    scores = ScoreSeries.read_csv(args.scores)
    qs = tuple(_float_list(args.quantiles)) if args.quantiles else (0.1, 0.9)
    hs = tuple(_int_list(args.horizons)) if args.horizons else (1, 6, 12, 24)
    table = tstat_table(scores, args.model, args.benchmark, qs, hs)
    flat = table.copy()
    flat.columns = [f"t_q{q:g}_h{h}" for q, h in table.columns]
    flat.to_csv(out / "tstats.csv", float_format="%.6f")
    outputs = [out / "tstats.csv"]
    common = None
    if args.mean_posterior and args.quantile_posterior:
        mean = _load_model(args.mean_posterior)
        quant = _load_model(args.quantile_posterior)
        T = min(mean.Y.shape[0], quant.Y.shape[0])
        lay = quant.layout
        common = commonality_table(quant.Y[-T:], quant.series_labels, [s // lay.n for s in range(lay.n_series)],
                                   mean.F.mean(axis=0)[-T:], quant.F.mean(axis=0)[-T:], lay.quantiles)
        common.to_csv(out / "commonality.csv", float_format="%.6f")
        outputs.append(out / "commonality.csv")
    (out / "report.txt").write_text(format_report(table, common), encoding="utf-8")
    outputs.append(out / "report.txt")
    return outputs, None, None


def cmd_poos(args, threads):
    from .forecast import recursive_poos

    config = _load_config(args)
    panel = _read_panel(args)
    out = _out_dir(args)
    models = [m for m in args.models.split(",") if m]
    horizons = _int_list(args.horizons) if args.horizons else (1, 6, 12, 24)
    eval_q = _float_list(args.eval_quantiles) if args.eval_quantiles else None
    scores = recursive_poos(panel, config, models, horizons, eval_q, args.start_fraction, args.step,
                            out / "checkpoints", threads, args.seed)
    scores.to_csv(out / "scores.csv")
    return [out / "scores.csv"], config.to_dict(), config.mcmc.seed


def cmd_rerun(args, threads):
    from .io import read_manifest

    manifest = read_manifest(args.manifest)
    argv = list(manifest["argv"])
    if args.output:
        for flag in ("-o", "--output"):
            if flag in argv:
                argv[argv.index(flag) + 1] = args.output
    return argv


# ----------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p, config=True, posterior=False):
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=None, help="worker count (default: QFAVAR_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    if config:
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--method", choices=("vb", "mcmc"))
        p.add_argument("--variant", choices=("QFAVAR", "QDFM", "FAVAR", "QAR", "QAR-X"))
        p.add_argument("--quantiles", help="comma-separated quantile levels")
        p.add_argument("--p", type=int, help="lag order")
        p.add_argument("--horizon", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--iterations", type=int)
        p.add_argument("--burn-in", dest="burn_in", type=int)
        p.add_argument("--thin", type=int)
    if posterior:
        p.add_argument("posterior", help="posterior.bin written by `estimate`")
        p.add_argument("--omega-mode", choices=("mean", "last"), default="mean")
        p.add_argument("--filter-explosive", action="store_true")


def _data_args(p):
    p.add_argument("data", help="panel CSV")
    p.add_argument("--globals", help="comma-separated global series names")
    p.add_argument("--date-column", dest="date_column")
    p.add_argument("--transform", help="JSON file mapping series to level|yoy_log_growth|mom_log_growth")


def build_parser():
    parser = _Parser(prog="qfavar", description="Quantile factor-augmented VAR toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="draw a synthetic panel with known factors")
    _common(p, config=False)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--T", type=int, default=300)
    p.add_argument("--p", dest="p_true", type=int, default=1)
    p.add_argument("--quantiles")
    p.add_argument("--noise", choices=("laplace", "skew"), default="laplace")
    p.add_argument("--noise-scale", dest="noise_scale", type=float)
    p.add_argument("--hetero", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate a model and store the posterior")
    _common(p)
    _data_args(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("forecast", help="quantile forecasts from a stored posterior")
    _common(p, config=False, posterior=True)
    p.add_argument("--horizon", type=int, default=24)
    p.add_argument("--quantiles", help="levels for Gaussian (FAVAR) predictive quantiles")
    p.add_argument("--density", action="store_true", help="also write kernel densities")
    p.add_argument("--density-horizon", dest="density_horizon", type=int, default=1)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("irf", help="generalized impulse responses")
    _common(p, config=False, posterior=True)
    p.add_argument("--shock", action="append", help="state label of the shock (repeatable)")
    p.add_argument("--horizon", type=int, default=24)
    p.set_defaults(func=cmd_irf)

    p = sub.add_parser("fevd", help="generalized variance decompositions")
    _common(p, config=False, posterior=True)
    p.add_argument("--horizon", type=int, default=24)
    p.set_defaults(func=cmd_fevd)

    p = sub.add_parser("connect", help="connectedness matrix and edge list")
    _common(p, config=False, posterior=True)
    p.add_argument("--horizon", type=int, default=24)
    p.add_argument("--threshold", type=float, default=0.05)
    p.set_defaults(func=cmd_connect)

    p = sub.add_parser("evaluate", help="t-statistics and commonality report")
    _common(p, config=False)
    p.add_argument("scores", help="scores.csv written by `poos`")
    p.add_argument("--model", default="QFAVAR")
    p.add_argument("--benchmark", default="FAVAR")
    p.add_argument("--quantiles")
    p.add_argument("--horizons")
    p.add_argument("--mean-posterior", dest="mean_posterior", help="FAVAR posterior for commonality")
    p.add_argument("--quantile-posterior", dest="quantile_posterior", help="QFAVAR posterior for commonality")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("poos", help="recursive pseudo-out-of-sample evaluation")
    _common(p)
    _data_args(p)
    p.add_argument("--models", default="QFAVAR,FAVAR")
    p.add_argument("--horizons")
    p.add_argument("--eval-quantiles", dest="eval_quantiles")
    p.add_argument("--start-fraction", dest="start_fraction", type=float, default=0.5)
    p.add_argument("--step", type=int, default=1)
    p.set_defaults(func=cmd_poos)

    p = sub.add_parser("rerun", help="repeat a run recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", help="write to this directory instead")
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None):
    from .io import write_manifest

    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"qfavar: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command == "rerun":
        try:
            return main(cmd_rerun(args, 1))
        except (OSError, ValueError, KeyError) as exc:
            print(f"qfavar rerun: error: {exc}", file=sys.stderr)
            return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = _threads(args)
        with _thread_limit(threads):
            outputs, config, seed = args.func(args, threads)
        write_manifest(args.output, args.command, argv, config, seed, outputs, threads)
    except UsageError as exc:
        print(f"qfavar {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported with context, exit 1
        log.debug("failure", exc_info=True)
        print(f"qfavar {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
