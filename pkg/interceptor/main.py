"""Command-line front end: gen-data, train, verify, simulate, pipeline, sweep-eta."""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from dotenv import load_dotenv
from pydantic import ValidationError

# Load environment variables from .env file
load_dotenv()

from config import PipelineConfig, config, load_pipeline_config
from pipeline.dataset_gen import Dataset
from pipeline.errors import QualityGateError, TrainingDivergedError
from pipeline.lyapunov_model import Axis
from pipeline.pipeline_manager import PipelineManager, eta_sweep

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_QUALITY_GATE = 3


def setup_logging(level: str, log_file: Optional[Path] = None) -> None:
    # UTF-8 file handler so the emoji markers survive on every platform
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.insert(0, logging.FileHandler(log_file, encoding='utf-8'))
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def exit_code_for(exc: BaseException) -> Optional[int]:
    if isinstance(exc, (QualityGateError, TrainingDivergedError)):
        return EXIT_QUALITY_GATE
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (ValidationError, ValueError)):
        return EXIT_VALIDATION
    return None


def _csv_floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline config; missing keys take the defaults")
    common.add_argument("--seed", type=int, help="base seed; the five stage seeds become seed, seed+1, ...")
    common.add_argument("--out", help=f"output directory (default {config.OUTPUT_DIR})")
    common.add_argument("--eta", type=float, help="decrease-rate weight (must be > 0)")
    common.add_argument("--epochs", type=int, help="training epochs (must be > 0)")
    common.add_argument("--grid", type=int, help="verification grid points per swept axis")
    common.add_argument("--workers", type=int, help=f"thread fan-out (default {config.WORKERS})")
    common.add_argument("--log-level", default=config.LOG_LEVEL)
    common.add_argument("--dry-run", action="store_true", help="print the resolved config and planned stages, then exit")
    common.add_argument("--dump-config", action="store_true", help="print the resolved config as JSON and exit")

    parser = argparse.ArgumentParser(
        prog="interceptor",
        description="Data-free Lyapunov initialization of neural interception policies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="generate S_x.csv, S_y.csv and the generation report")

    p_train = sub.add_parser("train", parents=[common], help="train both axis policies from dataset CSVs")
    p_train.add_argument("--data-x", help="x-axis dataset (default <out>/S_x.csv)")
    p_train.add_argument("--data-y", help="y-axis dataset (default <out>/S_y.csv)")

    for name, text in (("verify", "sample the D sign over the RoI slice"),
                       ("simulate", "closed-loop runs from the default initial states")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--model-x", help="x-axis model (default <out>/model_x.json)")
        p.add_argument("--model-y", help="y-axis model (default <out>/model_y.json)")

    sub.add_parser("pipeline", parents=[common], help="gen-data, train, verify and simulate in one go")

    p_sweep = sub.add_parser("sweep-eta", parents=[common], help="full pipeline for several eta values")
    p_sweep.add_argument("--etas", type=_csv_floats, default=[1.0, 2.0, 4.0], help="comma-separated, e.g. 1,2,4")
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    base = load_pipeline_config(args.config)
    return base.with_overrides(seed=args.seed, out=args.out, eta=args.eta, epochs=args.epochs,
                               grid=args.grid, workers=args.workers)


def _plan(args: argparse.Namespace, cfg: PipelineConfig) -> str:
    out = Path(cfg.out_dir)
    stages = {
        "gen-data": ["S_x.csv", "S_y.csv", "generation_report.json"],
        "train": ["model_x.json", "model_y.json", "loss_x.csv", "loss_y.csv"],
        "verify": ["roa_x.csv", "roa_y.csv", "verify_summary.json"],
        "simulate": ["trajectories_true_cz.csv", "trajectories_fabricated_cz.csv"],
    }
    names = stages[args.command] if args.command in stages else [n for files in stages.values() for n in files]
    if args.command in ("pipeline", "sweep-eta"):
        names.append("summary.json")
    return "\n".join(str(out / n) for n in names)


def _print_summary(summary: dict) -> None:
    print(f"eta = {summary['eta']:g}")
    for axis in ("x", "y"):
        loss = summary["final_loss"].get(axis)
        frac = summary["violation_fraction"].get(axis)
        hit = summary["hit_check"].get(axis, {})
        print(f"  {axis}-axis  final mse={loss!s:<22} violations={frac!s:<22} "
              f"static error @1m={hit.get('bound')} (hit: {hit.get('passes')})")
    for mode, runs in summary["trajectories"].items():
        flags = " ".join("ok" if r["converged"] else "--" for r in runs)
        print(f"  {mode:<16} converged: {flags}")


def run_command(args: argparse.Namespace, cfg: PipelineConfig) -> None:
    manager = PipelineManager(cfg)
    out = manager.out_dir

    if args.command == "gen-data":
        manager.generate()
    elif args.command == "train":
        datasets = {}
        for axis, given in ((Axis.X, args.data_x), (Axis.Y, args.data_y)):
            path = Path(given) if given else out / f"S_{axis.value}.csv"
            if not path.is_file():
                raise FileNotFoundError(f"dataset not found: {path}")
            seed = cfg.seeds.data_x if axis is Axis.X else cfg.seeds.data_y
            datasets[axis] = Dataset.read_csv(path, cfg.roi, cfg.search.eta, seed)
        manager.train(datasets)
    elif args.command in ("verify", "simulate"):
        model_x = Path(args.model_x) if args.model_x else out / "model_x.json"
        model_y = Path(args.model_y) if args.model_y else out / "model_y.json"
        for path in (model_x, model_y):
            if not path.is_file():
                raise FileNotFoundError(f"model not found: {path}")
        manager.load_policies(model_x, model_y)
        if args.command == "verify":
            manager.verify()
        else:
            manager.simulate()
    elif args.command == "pipeline":
        _print_summary(manager.run_all())
    elif args.command == "sweep-eta":
        for row in eta_sweep(cfg, args.etas, out):
            _print_summary(row)
            if row["gate_failure"]:
                print(f"  gate failure: {row['gate_failure']}")
    logger.info(f"📊 Stats: {json.dumps(manager.get_stats(), default=str)}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)

    try:
        cfg = resolve_config(args)
        if args.dump_config:
            print(cfg.to_text())
            return EXIT_OK
        if args.dry_run:
            print(cfg.to_text())
            print(f"# {args.command} would write:")
            print(_plan(args, cfg))
            return EXIT_OK

        setup_logging(args.log_level, Path(cfg.out_dir) / config.LOG_FILE)
        logger.info(f"🚀 {args.command}: out_dir={cfg.out_dir}")
        run_command(args, cfg)
        logger.info(f"✅ {args.command} finished")
        return EXIT_OK
    except Exception as exc:
        code = exit_code_for(exc)
        if code is None:
            raise
        logger.error(f"❌ {args.command} failed: {exc}")
        logger.debug("Traceback", exc_info=True)
        return code


if __name__ == "__main__":
    sys.exit(main())
