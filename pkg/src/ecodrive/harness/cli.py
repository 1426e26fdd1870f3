"""Command-line entry point: ``ecodrive <subcommand> --config FILE [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import ContractViolation, SchemaError, SolverInfeasible, TrainingDivergence, ValidationError
from ..ocp.grid import ValueTable
from ..powertrain import load_plant
from ..predictor.corpus import CorpusSpec, build_corpus, corpus_seconds, corpus_windows
from ..predictor.forecast import rmse
from ..predictor.gru import load_model, predict_batch, save_model
from ..predictor.features import stack_windows
from ..predictor.training import TrainConfig, train
from ..route_world import load_route, save_trajectory_csv
from .compare import ROW_COLUMNS, compare, load_compare_spec
from .config import load_config_document, load_scenario
from .report import emit_report, summary_path, write_json, write_rows
from .simulate import long_term_rollout, long_term_table, target_trajectory

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_SAFETY = 0, 2, 3, 4
SAFETY_KINDS = ("collision", "gap", "red_light", "stop_sign")

log = logging.getLogger("ecodrive")


# ------------------------------------------------------------------ predictor config

@dataclass(frozen=True)
class PredictorJob:
    """Training / evaluation settings read from a predictor config file."""

    T_h: float = 10.0
    T_p: float = 20.0
    dsrc_range: float = 300.0
    seed: int = 0
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    eval_corpus: CorpusSpec | None = None
    routes: tuple = ()
    train: TrainConfig = field(default_factory=TrainConfig)
    model: Path | None = None


def load_predictor_job(file_path) -> PredictorJob:
    path = Path(file_path)
    doc = load_config_document(path)
    known = {"T_h", "T_p", "dsrc_range", "seed", "corpus", "eval_corpus", "routes", "train", "model"}
    extra = set(doc) - known
    if extra:
        raise SchemaError(f"unknown keys {sorted(extra)}", path=path)
    try:
        routes = tuple(load_route(p if Path(p).is_absolute() else path.parent / p) for p in doc.get("routes", ()))
        model = doc.get("model")
        return PredictorJob(
            T_h=float(doc.get("T_h", 10.0)), T_p=float(doc.get("T_p", 20.0)),
            dsrc_range=float(doc.get("dsrc_range", 300.0)), seed=int(doc.get("seed", 0)),
            corpus=CorpusSpec.from_dict(doc.get("corpus")),
            eval_corpus=CorpusSpec.from_dict(doc["eval_corpus"]) if doc.get("eval_corpus") else None,
            routes=routes, train=TrainConfig.from_dict(doc.get("train")),
            model=None if model is None else (Path(model) if Path(model).is_absolute() else path.parent / model))
    except TypeError as exc:
        raise SchemaError(f"bad value: {exc}", path=path) from exc


# ------------------------------------------------------------------ subcommands

def cmd_gen_traffic(args) -> int:
    cfg = load_scenario(args.config).with_overrides(seed=args.seed)
    route = load_route(cfg.route)
    traj = target_trajectory(cfg, route)
    if traj is None:
        raise ValidationError("target", "scenario has no target vehicle")
    out = Path(args.out)
    if args.format == "json":
        write_json({"sample_period": traj.sample_period, "t": traj.t.tolist(), "v": traj.v.tolist(),
                    "position": traj.position.tolist()}, out)
    else:
        save_trajectory_csv(traj, out)
    return EXIT_OK


def cmd_train(args) -> int:
    job = load_predictor_job(args.config)
    seed = job.seed if args.seed is None else args.seed
    drives = build_corpus(replace(job.corpus, seed=job.corpus.seed if args.seed is None else args.seed), job.routes)
    windows = corpus_windows(drives, job.T_h, job.T_p, job.dsrc_range)
    log.info("corpus: %d drives, %.0f s, %d windows", len(drives), corpus_seconds(drives), len(windows))
    model, tlog = train(windows, job.T_h, job.T_p, job.train, seed=seed, dsrc_range=job.dsrc_range)
    out = Path(args.out)
    save_model(model, out)
    doc = tlog.to_dict()
    doc.update(corpus_seconds=corpus_seconds(drives), windows=len(windows), T_h=job.T_h, T_p=job.T_p)
    write_json(doc, summary_path(out))
    return EXIT_OK


def cmd_eval_predictor(args) -> int:
    job = load_predictor_job(args.config)
    if job.model is None:
        raise ValidationError("model", "eval-predictor needs a model file")
    model = load_model(job.model)
    spec = job.eval_corpus or job.corpus
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    drives = build_corpus(spec, job.routes)
    windows = corpus_windows(drives, model.T_h, model.T_p, model.dsrc_range)
    X, Y = stack_windows(windows)
    pred = predict_batch(model, X)
    const = np.repeat(X[:, -1:, 0], Y.shape[1], axis=1)
    rows = []
    for k in range(Y.shape[1]):
        rows.append({"step": k + 1, "horizon_s": (k + 1) * model.sample_period,
                     "rmse_gru": rmse(Y[:, k], pred[:, k]), "rmse_constant": rmse(Y[:, k], const[:, k])})
    summary = {"windows": len(windows), "T_h": model.T_h, "T_p": model.T_p,
               "rmse_gru": rmse(Y, pred), "rmse_constant": rmse(Y, const)}
    out = Path(args.out)
    if args.format == "json":
        write_json({"summary": summary, "per_step": rows}, out)
    else:
        write_rows(out, ("step", "horizon_s", "rmse_gru", "rmse_constant"), rows)
        write_json(summary, summary_path(out))
    return EXIT_OK


def cmd_solve_long_term(args) -> int:
    cfg = load_scenario(args.config)
    route, plant = load_route(cfg.route), load_plant(cfg.plant)
    table = long_term_table(route, plant, cfg.solver, cfg.target_soc)
    controls = cfg.solver.long_term_controls or cfg.solver.controls
    rollout = long_term_rollout(route, plant, table, controls, cfg.solver.gamma, cfg.initial_soc,
                                cfg.departure_time)
    keep = list(range(0, len(table.values), args.every))
    if keep[-1] != len(table.values) - 1:
        keep.append(len(table.values) - 1)
    sub = ValueTable(table.grid, table.positions[keep], [table.values[n] for n in keep])
    out = Path(args.out)
    summary = rollout.summary()
    summary.update(nodes_exported=keep)
    if args.format == "json":
        write_json({"summary": summary, "v": table.grid.v.tolist(), "soc": table.grid.soc.tolist(),
                    "positions": sub.positions.tolist(),
                    "values": [v[:, :, 0].tolist() for v in sub.values]}, out)
    else:
        sub.to_csv(out)
        write_json(summary, summary_path(out))
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .simulate import simulate
    cfg = load_scenario(args.config).with_overrides(predictor=args.predictor, seed=args.seed)
    report = simulate(cfg)
    emit_report(report, args.format, args.out)
    bad = [v for v in report.violations if v["kind"] in SAFETY_KINDS]
    if bad:
        log.error("%d safety violations, first: %s", len(bad), bad[0])
        return EXIT_SAFETY
    return EXIT_OK


def cmd_compare(args) -> int:
    spec = load_compare_spec(args.config)
    seeds = spec.seeds if args.seed is None else (args.seed,)
    variants = spec.predictors if args.predictor is None else (args.predictor,)
    table = compare(spec.scenarios, seeds, variants)
    out = Path(args.out)
    if args.format == "json":
        write_json(table.to_dict(), out)
    else:
        write_rows(out, ROW_COLUMNS, table.rows)
        doc = table.to_dict()
        doc.pop("rows")
        write_json(doc, summary_path(out))
    if table.safety_violations():
        return EXIT_SAFETY
    if not table.complete:
        return EXIT_INFEASIBLE
    return EXIT_OK


COMMANDS = {
    "gen-traffic": (cmd_gen_traffic, "write the target trajectory of a scenario"),
    "train": (cmd_train, "train a GRU encoder-decoder on a synthetic corpus"),
    "eval-predictor": (cmd_eval_predictor, "per-step RMSE of a model and of the constant-velocity baseline"),
    "solve-long-term": (cmd_solve_long_term, "solve and export the long-term value table"),
    "simulate": (cmd_simulate, "run one closed-loop scenario"),
    "compare": (cmd_compare, "run scenarios x seeds x predictors and tabulate FC / TT"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecodrive", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", required=True, help="output file")
        p.add_argument("--seed", type=int, default=None, help="override the config's seed")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--predictor", choices=("gru", "constant"), default=None,
                       help="override the scenario's predictor")
        if name == "solve-long-term":
            p.add_argument("--every", type=int, default=10, help="export every k-th route node")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "every", 1) < 1:
        parser.error("--every must be >= 1")
    handler = COMMANDS[args.command][0]
    try:
        return handler(args)
    except (SchemaError, ValidationError, ContractViolation, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverInfeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except TrainingDivergence as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
