"""Command-line front end: ``egosup <subcommand> ...``.

Results go only to the declared output files; progress and diagnostics go to
stderr.  Exit status is 0 on success, 1 on invalid input and 2 on internal
failures (diverged training, corrupt artifacts).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataio, plots
from .errors import CorruptArtifact, Diverged, InvalidInput
from .evaluation import (ablation_table, evaluate, match, predict_cooperator,
                         pseudo_gt_predictions, render_gaussian_gt, run_ablations)
from .gradcheck import run_suite
from .learner import TrainConfig, predict_frame, train, training_pairs
from .synth import SynthConfig, generate_synthetic
from .transformer import PriorConfig, build_location_prior, pseudo_gt

log = logging.getLogger("egosup")


class _Parser(argparse.ArgumentParser):
    """Usage errors are invalid input, so they exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _prior_flags(p):
    d = PriorConfig()
    p.add_argument("--sigma", type=float, default=d.sigma)
    p.add_argument("--visibility-threshold", type=float, default=d.visibility_threshold)
    p.add_argument("--no-loc", action="store_true", help="drop the location prior")
    p.add_argument("--no-size", action="store_true", help="drop the size prior")
    p.add_argument("--no-pose", action="store_true", help="drop the pose prior")


def _train_flags(p):
    d = TrainConfig()
    p.add_argument("--lr", type=float, default=d.learning_rate)
    p.add_argument("--momentum", type=float, default=d.momentum)
    p.add_argument("--weight-decay", type=float, default=d.weight_decay)
    p.add_argument("--batch", type=int, default=d.batch_size)
    p.add_argument("--iters", type=int, default=d.iterations)
    p.add_argument("--seed", type=int, default=d.seed)


def _prior_cfg(args) -> PriorConfig:
    return PriorConfig(sigma=args.sigma, visibility_threshold=args.visibility_threshold,
                       use_loc=not args.no_loc, use_size=not args.no_size,
                       use_pose=not args.no_pose)


def _train_cfg(args) -> TrainConfig:
    return TrainConfig(learning_rate=args.lr, momentum=args.momentum,
                       weight_decay=args.weight_decay, batch_size=args.batch,
                       iterations=args.iters, seed=args.seed)


def _load_prior_or_build(args, ds):
    if args.prior is not None:
        prior = dataio.load_prior(args.prior)
        if prior.dims != ds.dims:
            raise InvalidInput(f"prior dims {prior.dims} do not match dataset dims {ds.dims}")
        return prior
    log.info("no --prior given; building the location prior from %s itself", args.data)
    return build_location_prior(ds.frames, ds.dims)


def _annotated(ds):
    if not ds.annotations:
        raise InvalidInput("dataset has no annotations")
    return ds.annotations


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# -- subcommands --------------------------------------------------------------

def cmd_synth(args):
    cfg = SynthConfig(seed=args.seed, frame_count=args.frames,
                      players_per_frame=tuple(args.players), size_cue=args.size_cue,
                      pose_cue=args.pose_cue, loc_cue=args.loc_cue,
                      appearance_cue=args.appearance_cue, id_prefix=args.prefix or "")
    ds = generate_synthetic(cfg)
    dataio.save_dataset(ds, args.out)
    prior = build_location_prior(ds.frames, ds.dims)
    report = evaluate(pseudo_gt_predictions(ds.frames, prior, PriorConfig()), ds.frames,
                      ds.annotations)
    summary = {"frames": len(ds.frames), "seed": cfg.seed,
               "pseudo_gt_accuracy": report.accuracy, "pseudo_gt_correct": report.n_correct}
    out = Path(args.out)
    _write(out.with_suffix(".summary.json"), json.dumps(summary, indent=2) + "\n")
    log.info("wrote %d frames to %s (in-sample pseudo-GT accuracy %.4f)",
             len(ds.frames), out, report.accuracy)


def cmd_build_prior(args):
    ds = dataio.load_dataset(args.data, load_images=False)
    prior = build_location_prior(ds.frames, ds.dims)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    dataio.save_prior(prior, args.out)
    log.info("location prior from %d frames -> %s", prior.image_count, args.out)


def cmd_pseudo_gt(args):
    ds = dataio.load_dataset(args.data)
    prior = _load_prior_or_build(args, ds)
    cfg = _prior_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    anns = {a.image_id: a for a in ds.annotations or ()}
    lines = ["image_id\tpredicted\tmax_value\tcorrect"]
    first = None
    for f in ds.frames:
        m = pseudo_gt(f, prior, cfg)
        dataio.export_heatmap(m, out / f"{f.image_id}.pgm")
        if args.overlay and f.image is not None:
            dataio.export_heatmap(m, out / f"{f.image_id}.ppm", image=f.image)
        k = predict_cooperator(m, f) if f.detections else -1
        ok = ""
        if f.image_id in anns and k >= 0:
            ok = str(int(match(f.detections[k], anns[f.image_id])))
        lines.append(f"{f.image_id}\t{k}\t{float(m.max()):.6f}\t{ok}")
        if first is None and f.image_id in anns:
            first = (f, m)
    _write(out / "summary.tsv", "\n".join(lines) + "\n")
    if first is not None:
        f, m = first
        ann = anns[f.image_id]
        plots.heatmap_panels(f, [m, render_gaussian_gt(ann, f.dims)], ["pseudo GT", "Gaussian GT"],
                             out / "panels.png", box=ann.cooperator_box)
    log.info("wrote %d heat maps to %s", len(ds.frames), out)


def cmd_train(args):
    ds = dataio.load_dataset(args.data)
    prior = _load_prior_or_build(args, ds)
    cfg = _train_cfg(args)
    pairs = training_pairs(ds.frames, prior, _prior_cfg(args))
    losses = []
    every = max(1, cfg.iterations // 20)

    def progress(it, value):
        if it % every == 0 or it == cfg.iterations - 1:
            log.info("iter %d/%d loss %.4f", it + 1, cfg.iterations, value)

    params = train(pairs, cfg, loss_log=losses, progress=progress)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dataio.save_params(params, out)
    loss_path = Path(args.loss_log) if args.loss_log else out.with_suffix(".loss.tsv")
    _write(loss_path, "".join(f"{i}\t{v!r}\n" for i, v in enumerate(losses)))
    plots.loss_curve(losses, loss_path.with_suffix(".png"))
    log.info("saved parameters to %s", out)


def _read_maps(directory, frames):
    maps = {}
    for f in frames:
        p = Path(directory) / f"{f.image_id}.pgm"
        if p.exists():
            m = dataio.read_pgm(p)
            if m.ndim != 2:
                raise InvalidInput(f"{p} is not a grayscale map")
            maps[f.image_id] = m.astype(np.float64) / 255.0
    return maps


def cmd_eval(args):
    ds = dataio.load_dataset(args.data)
    anns = _annotated(ds)
    if args.model is not None:
        params = dataio.load_params(args.model)
        preds = {f.image_id: predict_frame(params, f, _prior_cfg(args)) for f in ds.frames}
        label = "trained"
    elif args.maps is not None:
        preds = _read_maps(args.maps, ds.frames)
        label = "maps"
    else:
        prior = _load_prior_or_build(args, ds)
        preds = pseudo_gt_predictions(ds.frames, prior, _prior_cfg(args))
        label = "pseudo_gt"
    report = evaluate(preds, ds.frames, anns, args.label or label)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "report.txt", report.table())
    dataio.save_records(report, out / "records.json")
    log.info("%s accuracy %.4f (%d/%d)", report.config_label, report.accuracy,
             report.n_correct, len(report.per_image))


def cmd_ablate(args):
    ds = dataio.load_dataset(args.data)
    anns = _annotated(ds)
    prior = _load_prior_or_build(args, ds)
    train_fn = None
    if args.train_data is not None:
        train_ds = dataio.load_dataset(args.train_data)
        tcfg = _train_cfg(args)

        def train_fn(cfg):
            log.info("training learner for %s", cfg)
            params = train(training_pairs(train_ds.frames, prior, cfg), tcfg)
            return {f.image_id: predict_frame(params, f, cfg) for f in ds.frames}

    rows = run_ablations(ds.frames, anns, prior, _prior_cfg(args), train_fn)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "ablation.tsv", ablation_table(rows))
    plots.ablation_chart(rows, out / "ablation.png")
    for r in rows:
        log.info("%-8s pseudo-GT %.4f", r.variant, r.pseudo_gt.accuracy)


def cmd_gradcheck(args):
    results = run_suite(args.n, args.seed, args.tol)
    worst = max(r.max_rel_error for r in results)
    failed = sum(r.n_failed for r in results)
    lines = ["seed\tcoords\tmax_rel_error\tfailed"]
    lines += [f"{r.seed}\t{r.n_coords}\t{r.max_rel_error:.3e}\t{r.n_failed}" for r in results]
    lines.append(f"# max_rel_error\t{worst:.3e}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _write(args.out, text)
    print(f"max_rel_error {worst:.3e}")
    if failed:
        log.error("%d coordinates exceed relative error %g", failed, args.tol)
        return 2
    return 0


def build_parser():
    p = _Parser(prog="egosup", description="Pseudo-label supervision for first-person intent maps.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--out", required=True, help="output .egods path")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frames", type=int, default=SynthConfig.frame_count)
    s.add_argument("--players", type=int, nargs=2, default=SynthConfig.players_per_frame,
                   metavar=("LO", "HI"))
    s.add_argument("--size-cue", type=float, default=SynthConfig.size_cue)
    s.add_argument("--pose-cue", type=float, default=SynthConfig.pose_cue)
    s.add_argument("--loc-cue", type=float, default=SynthConfig.loc_cue)
    s.add_argument("--appearance-cue", type=float, default=SynthConfig.appearance_cue)
    s.add_argument("--prefix", help="image_id prefix (default s<seed>)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("build-prior", help="dataset-mean location prior")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_prior)

    s = sub.add_parser("pseudo-gt", help="export pseudo ground-truth heat maps")
    s.add_argument("--data", required=True)
    s.add_argument("--prior")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--overlay", action="store_true", help="also write colour overlays")
    _prior_flags(s)
    s.set_defaults(func=cmd_pseudo_gt)

    s = sub.add_parser("train", help="train the learner on pseudo labels")
    s.add_argument("--data", required=True)
    s.add_argument("--prior")
    s.add_argument("--out", required=True, help="output .egoi path")
    s.add_argument("--loss-log", help="loss log path (default <out>.loss.tsv)")
    _prior_flags(s)
    _train_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="cooperator accuracy of a model, maps or pseudo labels")
    s.add_argument("--data", required=True)
    s.add_argument("--prior")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--model", help="learner parameters (.egoi)")
    src.add_argument("--maps", help="directory of <image_id>.pgm heat maps")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--label")
    _prior_flags(s)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="accuracy table over prior ablations")
    s.add_argument("--data", required=True)
    s.add_argument("--prior")
    s.add_argument("--train-data", help="also train a learner per variant on this dataset")
    s.add_argument("--out", required=True, help="output directory")
    _prior_flags(s)
    _train_flags(s)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("gradcheck", help="finite-difference check of the learner gradient")
    s.add_argument("--n", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--out", help="optional per-instance table")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args) or 0
    except (Diverged, CorruptArtifact) as e:
        log.error("%s", e)
        return 2
    except (InvalidInput, OSError) as e:
        log.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
