"""
Command line interface

    vicount [--config FILE] [--manifest FILE] [--log-level LEVEL] [--log-json] COMMAND [options]

Commands: simulate, count, eval, train, sweep-interval, grad-check.
Flags override values from the config file, which override VICOUNT_*
environment variables. Every run ends with a manifest (command, config,
versions, seeds): manifest.json in the output directory, a trailing JSON
document on stdout, or the file given with --manifest. Exit status is 0 on
success, 1 when a run fails and 2 on usage errors.
"""

import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from . import io
from .config import RunConfig, load_config
from .descriptors import gradient_check
from .exceptions import DataError, VicountError
from .logconfig import setup_logging
from .metrics import evaluate
from .models import SceneConfig, SceneSequence
from .pipeline import compare_association, count_video, evaluate_counts, interval_sweep, sweep_trend, train
from .simulator import simulate
from .sinks import DirectorySink, ResultSink, StdoutSink
from .solver import SolverConfig
from .version import get_version

logger = logging.getLogger(__name__)

# flag dest -> RunConfig key
_CONFIG_FLAGS = {
    "tau": "tau",
    "tau_unit": "tau_unit",
    "fps": "fps",
    "sigma": "sigma",
    "iters": "sinkhorn_iters",
    "mode": "descriptor_mode",
    "points": "point_mode",
    "flow_source": "flow_source",
    "dust_score": "dust_score",
    "hungarian_threshold": "hungarian_threshold",
    "noise": "noise_level",
    "seed": "seed",
    "workers": "max_workers",
    "epochs": "epochs",
    "lr": "learning_rate",
    "c_lr": "c_learning_rate",
    "optimizer": "optimizer",
    "momentum": "momentum",
    "proposal_source": "proposal_source",
    "descriptor_dim": "descriptor_dim",
}


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--tau", type=float, help="sampling interval (frames unless --tau-unit seconds)")
    parser.add_argument("--tau-unit", dest="tau_unit", choices=["frames", "seconds"])
    parser.add_argument("--fps", type=float)
    parser.add_argument("--sigma", type=float, help="entropic regularization")
    parser.add_argument("--iters", type=int, help="Sinkhorn iterations")
    parser.add_argument("--mode", choices=["gt-descriptors", "trained-encoder"], help="descriptor mode")
    parser.add_argument("--points", choices=["gt-points", "proposals"], help="point mode")
    parser.add_argument("--flow-source", dest="flow_source", choices=["transport", "hungarian", "oracle"])
    parser.add_argument("--dust-score", dest="dust_score", type=float)
    parser.add_argument("--hungarian-threshold", dest="hungarian_threshold", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int, help="threads solving frame pairs")


def _add_input_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--annotations", nargs="+", help="frame,id,x,y CSV files")
    parser.add_argument("--features", nargs="+", help="feature sidecars, one per annotation file")
    parser.add_argument("--height", type=int, help="frame height of annotation files")
    parser.add_argument("--width", type=int, help="frame width of annotation files")
    _add_scene_flags(parser)


def _add_scene_flags(parser: argparse.ArgumentParser) -> None:
    scene = SceneConfig()
    parser.add_argument("--videos", type=int, default=1, help="number of simulated videos")
    parser.add_argument("--duration", type=int, default=scene.duration)
    parser.add_argument("--initial-count", dest="initial_count", type=int, default=scene.initial_count)
    parser.add_argument("--entry-rate", dest="entry_rate", type=float, default=scene.entry_rate)
    parser.add_argument("--exit-rate", dest="exit_rate", type=float, default=scene.exit_rate)
    parser.add_argument("--separability", type=float, default=scene.separability)
    parser.add_argument("--appearance-noise", dest="appearance_noise", type=float,
                        default=scene.appearance_noise_std)
    parser.add_argument("--appearance-dim", dest="appearance_dim", type=int, default=scene.appearance_dim)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vicount",
        description="Video individual counting: first-frame count plus transport-based inflow.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {get_version()}")
    parser.add_argument("--config", help="config file (.json, .yaml or key=value lines)")
    parser.add_argument("--log-level", dest="log_level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--log-json", dest="log_json", action="store_true", help="JSON log records")
    parser.add_argument("--manifest", help="write the run manifest to this file instead of beside the results")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("simulate", help="generate synthetic videos")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--fps", type=float)
    _add_scene_flags(p)

    p = sub.add_parser("count", help="count individuals in videos")
    _add_run_flags(p)
    _add_input_flags(p)
    p.add_argument("--encoder", help="encoder JSON for --mode trained-encoder")
    p.add_argument("--compare", action="store_true", help="also count with Hungarian matching")
    p.add_argument("--out", help="output directory (default: stdout)")

    p = sub.add_parser("eval", help="metrics from predicted and ground-truth counts")
    p.add_argument("--table", help="CSV with pred and gt columns (optional length, video_id)")
    p.add_argument("--pred", help="CSV of predicted counts")
    p.add_argument("--gt", help="CSV of ground-truth counts")
    p.add_argument("--out", help="output directory (default: stdout)")

    p = sub.add_parser("train", help="train the descriptor encoder")
    _add_run_flags(p)
    _add_input_flags(p)
    p.add_argument("--pairs-per-video", dest="pairs_per_video", type=int, default=50)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, help="encoder learning rate")
    p.add_argument("--c-lr", dest="c_lr", type=float, help="learning rate of the dust-bin score")
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--momentum", type=float)
    p.add_argument("--proposal-source", dest="proposal_source", choices=["gt", "gt+pred"])
    p.add_argument("--noise", type=float, help="proposal noise level in pixels")
    p.add_argument("--descriptor-dim", dest="descriptor_dim", type=int)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("sweep-interval", help="counting error against the sampling interval")
    _add_run_flags(p)
    _add_input_flags(p)
    p.add_argument("--taus", required=True, help="comma-separated intervals in frames")
    p.add_argument("--encoder", help="encoder JSON for --mode trained-encoder")
    p.add_argument("--out", help="output directory (default: stdout)")

    p = sub.add_parser("grad-check", help="finite-difference check of the unrolled gradients")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else load_config()
    overrides: Dict[str, Any] = {key: getattr(args, flag) for flag, key in _CONFIG_FLAGS.items()
                                 if hasattr(args, flag)}
    return config.replace(**overrides)


def _sink(args: argparse.Namespace) -> ResultSink:
    return DirectorySink(args.out) if getattr(args, "out", None) else StdoutSink()


def _finish(args: argparse.Namespace, sink: ResultSink, command: str, config: RunConfig,
            outputs: Sequence[str], seeds: Optional[Dict[str, int]] = None) -> None:
    if args.manifest:
        path = os.path.abspath(args.manifest)
        io.write_manifest(DirectorySink(os.path.dirname(path)), command, config, outputs, seeds,
                          name=os.path.basename(path))
    else:
        io.write_manifest(sink, command, config, outputs, seeds)
    sink.flush()


def _scene_config(args: argparse.Namespace, config: RunConfig, index: int) -> SceneConfig:
    return SceneConfig(duration=args.duration, fps=config.fps, initial_count=args.initial_count,
                       entry_rate=args.entry_rate, exit_rate=args.exit_rate, separability=args.separability,
                       appearance_noise_std=args.appearance_noise, appearance_dim=args.appearance_dim,
                       rng_seed=config.seed + index)


def _sequences(args: argparse.Namespace, config: RunConfig) -> List[SceneSequence]:
    if args.annotations:
        features = args.features or [None] * len(args.annotations)
        if len(features) != len(args.annotations):
            raise VicountError("--features needs one sidecar per annotation file.")
        return [io.load_annotations(path, args.height, args.width, fps=config.fps, features_path=feat)
                for path, feat in zip(args.annotations, features)]
    return [simulate(_scene_config(args, config, k), video_id=f"video_{k:03d}") for k in range(args.videos)]


def _encoder(args: argparse.Namespace, config: RunConfig):
    if config.descriptor_mode != "trained-encoder":
        return None
    if not args.encoder:
        raise VicountError("--mode trained-encoder needs --encoder FILE (see 'vicount train').")
    return io.load_encoder(args.encoder)


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _run_config(args)
    sink = DirectorySink(args.out)
    outputs = []
    for k in range(args.videos):
        seq = simulate(_scene_config(args, config, k), video_id=f"video_{k:03d}")
        for name, writer in ((f"{seq.video_id}.csv", io.save_annotations), (f"{seq.video_id}.feat", io.save_features)):
            writer(seq, sink.path_for(name))
            outputs.append(name)
    _finish(args, sink, "simulate", config, outputs)
    return 0


def cmd_count(args: argparse.Namespace) -> int:
    config = _run_config(args)
    sequences = _sequences(args, config)
    encoder = _encoder(args, config)
    results = [count_video(seq, config.tau_frames, encoder, config=config) for seq in sequences]
    sink = _sink(args)
    sink.write_json("result.json", io.result_payload(results))
    outputs = ["result.json"]
    if isinstance(sink, DirectorySink):
        sink.write_json("flows.json", io.flows_payload(results))
        outputs.append("flows.json")
        if all(seq.frames[0].points.has_identities() for seq in sequences):
            sink.write_json("report.json", evaluate_counts(results, sequences).to_dict())
            outputs.append("report.json")
    if args.compare:
        rows = compare_association(sequences, config.tau_frames, encoder, config)
        sink.write_table("association.csv", pd.DataFrame(rows))
        outputs.append("association.csv")
    _finish(args, sink, "count", config, outputs)
    partial = [r.video_id for r in results if r.partial]
    if partial:
        print(f"vicount count: partial results for {', '.join(partial)}", file=sys.stderr)
        return 1
    return 0


def _columns(path: str, *names: str) -> pd.DataFrame:
    table = io.load_count_table(path)
    missing = [name for name in names if name not in table.columns]
    if missing:
        raise DataError(f"{path}: expected the header '{','.join(names)}', "
                        f"found '{','.join(map(str, table.columns))}'.")
    return table


def cmd_eval(args: argparse.Namespace) -> int:
    if args.table:
        table = _columns(args.table, "pred", "gt")
        preds, gts = table["pred"].tolist(), table["gt"].tolist()
    elif args.pred and args.gt:
        preds = _columns(args.pred, "count")["count"].tolist()
        gts = _columns(args.gt, "count")["count"].tolist()
        table = None
    else:
        raise VicountError("eval needs --table, or both --pred and --gt.")
    lengths = table["length"].tolist() if table is not None and "length" in table else None
    ids = [str(v) for v in table["video_id"]] if table is not None and "video_id" in table else None
    report = evaluate(preds, gts, lengths, video_ids=ids)
    sink = _sink(args)
    sink.write_json("report.json", report.to_dict())
    _finish(args, sink, "eval", _run_config(args), ["report.json"])
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _run_config(args)
    sequences = _sequences(args, config)
    result = train(sequences, args.pairs_per_video, config)
    sink = DirectorySink(args.out)
    io.save_encoder(result.params, sink.path_for("encoder.json"))
    sink.write_table("loss_trace.csv", io.loss_trace_table(result.trace))
    _finish(args, sink, "train", config, ["encoder.json", "loss_trace.csv"])
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _run_config(args)
    try:
        taus = [int(t) for t in args.taus.split(",") if t.strip()]
    except ValueError:
        raise VicountError(f"--taus must be comma-separated integers, got '{args.taus}'.")
    sequences = _sequences(args, config)
    rows = interval_sweep(sequences, taus, _encoder(args, config), config=config)
    sink = _sink(args)
    sink.write_table("sweep.csv", io.sweep_table(rows))
    if len(rows) > 1:
        logger.info("sweep trend", extra={"spearman": sweep_trend(rows)})
    _finish(args, sink, "sweep-interval", config, ["sweep.csv"])
    return 0


def cmd_grad_check(args: argparse.Namespace) -> int:
    report = gradient_check(instances=args.instances, seed=args.seed,
                            solver_cfg=SolverConfig(sigma=1.0, iterations=100))
    passed = report.max_relative_error < args.tolerance
    sink = StdoutSink()
    sink.write_json("grad_check.json", {
        "instances": args.instances,
        "seed": args.seed,
        "max_relative_error": report.max_relative_error,
        "tolerance": args.tolerance,
        "passed": passed,
    })
    _finish(args, sink, "grad-check", _run_config(args), ["grad_check.json"], seeds={"seed": args.seed})
    return 0 if passed else 1


_COMMANDS = {
    "simulate": cmd_simulate,
    "count": cmd_count,
    "eval": cmd_eval,
    "train": cmd_train,
    "sweep-interval": cmd_sweep,
    "grad-check": cmd_grad_check,
}


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv`` and run one command; returns the exit status"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    integration = setup_logging(level=getattr(logging, args.log_level), json_format=args.log_json)
    try:
        return _COMMANDS[args.command](args)
    except (VicountError, FileNotFoundError, OSError) as e:
        print(f"vicount {args.command}: error: {e}", file=sys.stderr)
        return 1
    finally:
        integration.teardown()


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
