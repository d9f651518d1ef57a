"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..errors import STTrackError
from ..evaluation import evaluate_sequence, summarize, write_curves, write_report
from ..geometry import read_boxes, write_boxes
from ..head import decode, write_heatmap_csv, write_heatmap_pgm
from ..model import build_params, forward
from ..numerics import load_checkpoint, no_grad, save_checkpoint
from ..tracker import run_sequence_detailed
from .config import RunConfig, dump_config, load_config
from .dataset import SequenceData, list_sequences, load_sequence, write_sequence
from .synth import generate_sequence, subsample_sequence

log = logging.getLogger("sttrack")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with status 2
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- subcommands --------------------------------------------------------------

def cmd_synth(args) -> int:
    _, scene = load_config(args.config)
    out = Path(args.out)
    for i in range(args.sequences):
        spec = replace(scene, seed=scene.seed + i)
        clouds, gt = generate_sequence(spec)
        clouds, gt = subsample_sequence(clouds, gt, args.stride)
        write_sequence(out, SequenceData(f"{args.prefix}{i:04d}", clouds, gt, args.category))
    print(f"wrote {args.sequences} sequence(s) to {out}")
    return EXIT_OK


def _load_params(cfg: RunConfig, checkpoint: str | None):
    if checkpoint is None:
        log.warning("no checkpoint given; tracking with untrained parameters (seed %d)", cfg.param_seed)
        return build_params(cfg.model, cfg.param_seed)
    params = load_checkpoint(checkpoint)
    expected = build_params(cfg.model, cfg.param_seed)
    if params.names() != expected.names() or any(params[n].shape != expected[n].shape for n in expected):
        raise STTrackError(f"{checkpoint}: parameters do not match the configured model")
    return params


def _track_one(job: tuple) -> str:
    data_root, results, name, cfg, params, heat_dir = job
    seq = load_sequence(data_root, name)
    heatmaps: dict[int, np.ndarray] = {}

    def predictor(state, inputs):
        with no_grad():
            out = forward(state.model, state.params, inputs.clouds, inputs.ages, inputs.past_boxes)
        heatmaps[inputs.frame_index] = out.heatmap.data[..., 0].copy()
        return decode(out.heatmap, out.offset, out.height, out.orientation, state.model.grid, state.known_size)

    preds = run_sequence_detailed(seq.clouds, seq.gt[0], params, cfg.model, predictor)
    write_boxes(Path(results) / f"{name}.txt", [p.box for p in preds])
    if heat_dir is not None:
        target = Path(heat_dir) / name
        target.mkdir(parents=True, exist_ok=True)
        for k, heat in heatmaps.items():  # coasted frames have no heatmap
            write_heatmap_pgm(target / f"{k:06d}.pgm", heat)
            write_heatmap_csv(target / f"{k:06d}.csv", heat)
    coasted = sum(p.coasted for p in preds)
    return f"{name}: {len(preds)} frames, {coasted} coasted"


def _run_jobs(fn: Callable, jobs: Sequence, workers: int) -> list:
    """Map preserving input order; results merge deterministically."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def cmd_track(args) -> int:
    cfg, _ = load_config(args.config)
    params = _load_params(cfg, args.checkpoint)
    names = list_sequences(args.data)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    jobs = [(args.data, args.out, n, cfg, params, args.heatmaps) for n in names]
    for line in _run_jobs(_track_one, jobs, args.jobs):
        print(line)
    return EXIT_OK


def _eval_one(job: tuple):
    data_root, results, name = job
    seq = load_sequence(data_root, name, with_clouds=False)
    path = Path(results) / f"{name}.txt"
    if not path.is_file():
        raise STTrackError(f"missing result file {path}")
    return evaluate_sequence(read_boxes(path), seq.gt), seq.category, seq.gt, read_boxes(path)


def cmd_eval(args) -> int:
    from .plots import plot_curves, plot_track

    names = list_sequences(args.data)
    rows = _run_jobs(_eval_one, [(args.data, args.results, n) for n in names], args.jobs)
    result = summarize([r[0] for r in rows], [r[1] for r in rows])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "report.csv", result)
    write_curves(out / "curves.csv", result)
    figures = plot_curves(result, out)
    if args.track_plots:
        for name, (_, _, gt, pred) in zip(names, rows):
            figures.append(plot_track(pred, gt, out / f"track_{name}.png", title=name))
    for r in [*result.categories, result.mean]:
        print(f"{r.name:12s} frames={r.frames:6d} success={r.success:7.2f} precision={r.precision:7.2f}")
    print(f"report: {out / 'report.csv'}; figures: {', '.join(p.name for p in figures)}")
    return EXIT_OK


def cmd_train_toy(args) -> int:
    from .plots import plot_loss
    from .train import train_toy

    cfg, scene = load_config(args.config)
    if args.steps is not None:
        cfg = replace(cfg, train=replace(cfg.train, steps=args.steps))
    result = train_toy(cfg, scene, progress=args.verbose)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.params, out)
    trace = out.with_suffix(".loss.csv")
    with open(trace, "w", newline="") as fh:
        keys = sorted(result.components[0]) if result.components else []
        w = csv.writer(fh)
        w.writerow(["step", "loss", *keys])
        for step, (loss, comp) in enumerate(zip(result.losses, result.components)):
            w.writerow([step, repr(loss), *(repr(comp[k]) for k in keys)])
    if result.losses:
        plot_loss(result.losses, out.with_suffix(".loss.png"))
        print(f"loss {result.losses[0]:.4f} -> {result.losses[-1]:.4f} over {len(result.losses)} steps")
    print(f"checkpoint: {out}; trace: {trace}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import all_gradchecks

    cfg, _ = load_config(args.config)
    reports = all_gradchecks(cfg.model, seed=args.seed, max_entries=args.max_entries)
    failed = 0
    for name, rep in reports.items():
        status = "PASS" if rep.passed else "FAIL"
        failed += not rep.passed
        print(f"{status} {name} max_rel_err={rep.max_error:.3e}")
        if args.verbose or not rep.passed:
            for line in rep.lines():
                print("    " + line)
    print(f"{len(reports) - failed}/{len(reports)} gradient checks passed")
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


def cmd_goldens(args) -> int:
    from .checks import golden_hashes

    hashes = golden_hashes(args.seed)
    if args.check:
        stored = json.loads(Path(args.check).read_text())
        bad = sorted(k for k in set(stored) | set(hashes) if stored.get(k) != hashes.get(k))
        for k in bad:
            print(f"MISMATCH {k}")
        print(f"{len(hashes) - len(bad)}/{len(hashes)} golden hashes match")
        return EXIT_OK if not bad else EXIT_RUNTIME
    text = json.dumps(hashes, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {len(hashes)} hashes to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_config(args) -> int:
    cfg, scene = load_config(args.config)
    sys.stdout.write(dump_config(cfg, scene))
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sttrack", description="Spatio-temporal point cloud single object tracker.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def add(name: str, fn, help_: str) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--config", help="flat key = value config file")
        return sp

    sp = add("synth", cmd_synth, "Generate synthetic sequences in the dataset layout.")
    sp.add_argument("--out", required=True)
    sp.add_argument("--sequences", type=int, default=1)
    sp.add_argument("--stride", type=int, default=1, help="keep every stride-th frame")
    sp.add_argument("--category", default="car")
    sp.add_argument("--prefix", default="seq")

    sp = add("track", cmd_track, "Track every sequence one-pass from its first ground-truth box.")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="directory for <sequence>.txt result boxes")
    sp.add_argument("--checkpoint")
    sp.add_argument("--heatmaps", help="dump per-frame heatmaps (PGM + CSV) here")
    sp.add_argument("--jobs", type=int, default=1)

    sp = add("eval", cmd_eval, "Score result boxes against ground truth; writes CSV and PNG figures.")
    sp.add_argument("--data", required=True)
    sp.add_argument("--results", required=True)
    sp.add_argument("--out", required=True, help="report directory")
    sp.add_argument("--track-plots", action="store_true", help="also draw a top-down plot per sequence")
    sp.add_argument("--jobs", type=int, default=1)

    sp = add("train-toy", cmd_train_toy, "Train on synthetic scenes and write a checkpoint.")
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--steps", type=int, help="override train.steps")

    sp = add("gradcheck", cmd_gradcheck, "Finite-difference check of every op and the composed model.")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-entries", type=int, default=4, help="coordinates probed per model parameter")

    sp = add("goldens", cmd_goldens, "Regenerate or verify golden output hashes.")
    sp.add_argument("--seed", type=int, default=0)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--out")
    g.add_argument("--check", help="compare against a stored hash file")

    add("config", cmd_config, "Print the fully resolved configuration.")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print(f"{parser.prog}: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (STTrackError, ValueError, ArithmeticError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
