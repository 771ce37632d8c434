"""Command line: generate datasets, fit estimators, run sweeps, build reports, verify bounds, serve."""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from config import settings
from dataset_io import (
    read_eval_csv,
    read_observational_csv,
    read_results_csv,
    read_simulator_csv,
    write_eval_csv,
    write_json,
    write_latents_csv,
    write_model_json,
    write_observational_csv,
    write_results_csv,
    write_simulator_csv,
)
from errors import ConfigError, SimcateError
from harness import (
    CellData,
    FitContext,
    cell_seed,
    format_report_table,
    generate_cell,
    generate_report,
    load_config,
    load_latent_pool,
    parse_config,
    recover_extractors,
    resolve_output_dir,
    resolve_threads,
    run_sweep,
    run_verification,
    summarize_checks,
    write_report_csv,
)
from linear_estimators import predict_cate
from metrics import cate_error, factual_error
from models import EstimatorKind, ExtractorMode, SweepConfig

logger = logging.getLogger("simcate")


def _config(args: argparse.Namespace) -> SweepConfig:
    cfg = load_config(args.config) if args.config else parse_config({})
    if getattr(args, "seed", None) is not None:
        cfg = parse_config({**cfg.model_dump(mode="json"), "seeds": [args.seed + k for k in range(len(cfg.seeds))]})
    return cfg


def cmd_gen(args: argparse.Namespace) -> int:
    cfg = _config(args)
    gaps = cfg.grid[args.cell]
    seed = cfg.seeds[0]
    out = resolve_output_dir(cfg, args.out)
    data = generate_cell(cfg, gaps, np.random.default_rng([cell_seed(seed, gaps), 0]), load_latent_pool(cfg))
    write_observational_csv(data.d_trn, out / "train.csv")
    write_simulator_csv(data.d_syn, out / "sim.csv")
    write_eval_csv(data.d_tst, out / "test.csv")
    if data.d_tst.z is not None:
        write_latents_csv(data.d_tst.z, out / "test_latents.csv")
    if data.spec is not None:
        (out / "spec.json").write_text(data.spec.model_dump_json(indent=2))
    logger.info("Wrote %s cell %s (seed %d) to %s", cfg.dgp_kind.value, gaps.cell, seed, out)
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if cfg.extractor_mode == ExtractorMode.LATENT:
        raise ConfigError("latent inputs need ground-truth latents, which dataset files do not carry")
    if cfg.extractor_mode == ExtractorMode.ORACLE:
        logger.info("No ground-truth maps for file inputs; recovering extractors from the simulator pairs")
        cfg = cfg.model_copy(update={"extractor_mode": ExtractorMode.LEARNED})
    d_trn = read_observational_csv(args.train)
    d_syn = read_simulator_csv(args.sim)
    d_tst = read_eval_csv(args.test) if args.test else None
    seed = args.seed if args.seed is not None else settings.default_seed

    f_tilde = recover_extractors(cfg, CellData(d_trn, d_syn, d_tst, None), np.random.default_rng([seed, 1]))
    context = FitContext(cfg, d_trn, d_syn, f_tilde, seed, 0, linear=args.heads == "linear")
    kind = EstimatorKind(args.estimator)
    model, lambda_f, lambda_tau = context.fit(kind)

    out = resolve_output_dir(cfg, args.out)
    write_model_json(model, out / f"{kind.value}_model.json")
    factual, _ = factual_error(model, d_trn)
    metrics = {"estimator": kind.value, "factual_mse": factual, "lambda_f": lambda_f, "lambda_tau": lambda_tau}
    if d_tst is not None:
        metrics["cate_mse"], metrics["cate_rmse"] = cate_error(predict_cate(model, d_tst.x, d_tst.t), d_tst.tau)
    write_json(metrics, out / f"{kind.value}_metrics.json")
    logger.info("Fitted %s: %s", kind.value, metrics)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _config(args)
    rows = run_sweep(cfg, resolve_threads(cfg, args.threads))
    out = resolve_output_dir(cfg, args.out)
    path = write_results_csv(rows, out / "results.csv")
    failed = sum(row.status != "ok" for row in rows)
    print(f"{len(rows)} rows ({failed} errors) -> {path}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    rows = read_results_csv(args.results)
    report = generate_report(rows, EstimatorKind(args.baseline))
    out = Path(args.out) if args.out else Path(args.results).parent
    path = write_report_csv(report, out / "report.csv")
    print(format_report_table(report))
    print(f"-> {path}")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    checks = run_verification(args.seed if args.seed is not None else settings.default_seed)
    print(f"{'check':<24}{'instances':>10}{'failures':>10}{'worst':>14}{'seconds':>10}")
    for check in checks:
        print(f"{check.name:<24}{check.instances:>10}{check.failures:>10}{check.worst:>14.3e}{check.seconds:>10.2f}")
    if args.out:
        write_json(summarize_checks(checks), Path(args.out) / "verify.json")
    passed = all(check.passed for check in checks)
    print("all checks passed" if passed else "VERIFICATION FAILED")
    return 0 if passed else 1


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("main:app", host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simcate", description="Simulator-assisted CATE estimation workbench")
    parser.add_argument("--log-level", default=settings.log_level, help="Logging level (default from SIMCATE_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="Sweep config JSON")
        p.add_argument("--out", help="Output directory")
        p.add_argument("--seed", type=int, help="Base seed")

    gen = sub.add_parser("gen", help="Emit train/sim/test CSVs for one gap cell")
    common(gen)
    gen.add_argument("--cell", type=int, default=0, help="Index into the gap grid")
    gen.set_defaults(func=cmd_gen)

    fit = sub.add_parser("fit", help="Fit one estimator from dataset files")
    common(fit)
    fit.add_argument("--train", required=True, help="Observational CSV")
    fit.add_argument("--sim", required=True, help="Simulator CSV")
    fit.add_argument("--test", help="Evaluation CSV with potential outcomes")
    fit.add_argument("--estimator", default=EstimatorKind.SIMPONET.value, choices=[k.value for k in EstimatorKind])
    fit.add_argument("--heads", default="linear", choices=["linear", "mlp"])
    fit.set_defaults(func=cmd_fit)

    sweep = sub.add_parser("sweep", help="Run the gap-grid sweep")
    common(sweep)
    sweep.add_argument("--threads", type=int, help="Worker processes")
    sweep.set_defaults(func=cmd_sweep)

    report = sub.add_parser("report", help="Aggregate a results CSV")
    report.add_argument("--results", required=True, help="results.csv from a sweep")
    report.add_argument("--out", help="Output directory (default: next to the results)")
    report.add_argument("--baseline", default=EstimatorKind.SIMPONET.value, choices=[k.value for k in EstimatorKind])
    report.set_defaults(func=cmd_report)

    verify = sub.add_parser("verify", help="Run the bound and oracle property suites")
    verify.add_argument("--seed", type=int, help="Base seed")
    verify.add_argument("--out", help="Also write verify.json here")
    verify.set_defaults(func=cmd_verify)

    serve = sub.add_parser("serve", help="Start the HTTP service")
    serve.add_argument("--host", default=settings.host)
    serve.add_argument("--port", type=int, default=settings.port)
    serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except SimcateError as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
