"""Command line entry point: ``gohscore <command> [options]``.

Exit codes: 0 success, 2 argument or config error, 3 data or format error,
4 training divergence.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys

import numpy as np

from .errors import (DivergenceError, EmptyLungsError, FormatError, InfeasibleCropError,
                     OutOfExtentError)
from .imagecore import write_mask_pgm, write_slice_pgm
from .metrics import agreement_report, write_plot_data, write_report_csv
from .nnreg.training import load_checkpoint, save_checkpoint, write_loss_log
from .sampling import LEVEL_ORDER, PATTERNS
from .synth import generate_healthy_phantom, synthesize

log = logging.getLogger("gohscore")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="experiment config (JSON)")
    parser.add_argument("--seed", type=int, default=default, help="override the config seed")
    parser.add_argument("--out", default=argparse.SUPPRESS if suppress else "out",
                        help="output directory (default: ./out)")
    parser.add_argument("-v", "--verbose", action="store_true",
                        default=argparse.SUPPRESS if suppress else False)


def build_parser():
    p = argparse.ArgumentParser(prog="gohscore", description=__doc__.splitlines()[0])
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        _global_flags(sp, suppress=True)
        return sp

    sp = add("synth", "generate a graded slice dataset")
    sp.add_argument("--cases", type=int, help="cases (five slices each); default from config")
    sp.add_argument("--traces", type=int, default=0,
                    help="also export PGM stages of this many example syntheses")

    sp = add("phantoms", "generate annotated 3D phantom volumes")
    sp.add_argument("--n", type=int, help="number of volumes; default from config")

    sp = add("train-levels", "train the level network")
    sp.add_argument("--data", help="directory written by 'phantoms' (generated if omitted)")

    sp = add("train-scores", "train the slice-score network")
    sp.add_argument("--data", help="dataset.csv written by 'synth' (generated if omitted)")

    sp = add("eval", "cascade inference with trained networks, or a cross-validated run")
    sp.add_argument("--levels-net", help="level network checkpoint")
    sp.add_argument("--scores-net", help="score network checkpoint")
    sp.add_argument("--data", help="directory written by 'phantoms' (cascade mode)")
    sp.add_argument("--ablation", action="store_true",
                    help="cross-validate the three score training recipes")

    sp = add("agree", "rater agreement table")
    sp.add_argument("--table", required=True, help="CSV: case,level,rater,session,tot,gg,ret")
    sp.add_argument("--weighting", choices=("linear", "quadratic"), default="linear")

    sp = add("plot-data", "Bland-Altman and correlation point lists from predictions")
    sp.add_argument("--predictions", required=True,
                    help="levels_predictions.csv or scores_predictions.csv")
    return p


def _config(args):
    from .harness.experiment import ExperimentConfig, load_config

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args, cfg):
    from .harness.data import make_slice_dataset, write_slice_dataset

    n = args.cases if args.cases is not None else cfg.n_slices // 5
    if n < 1:
        raise ValueError("--cases must be >= 1")
    ds = make_slice_dataset(n, cfg.seed, cfg.slice_size, cfg.lesion_prob,
                            cfg.lesion_max_axis_frac, cfg.texture)
    write_slice_dataset(args.out, ds)
    if args.traces:
        tdir = os.path.join(args.out, "traces")
        os.makedirs(tdir, exist_ok=True)
        for i in range(args.traces):
            base, lung = generate_healthy_phantom(np.random.SeedSequence([cfg.seed, 9, i]),
                                                  (cfg.slice_size, cfg.slice_size))
            _, _, tr = synthesize(base, lung, cfg.texture,
                                  np.random.default_rng([cfg.seed, 10, i]))
            stem = os.path.join(tdir, f"t{i:03d}")
            write_slice_pgm(f"{stem}_base.pgm", tr.base)
            write_slice_pgm(f"{stem}_result.pgm", tr.result)
            for name in ("lung", "ellipses_gg", "ellipses_ret", "lesion_gg", "lesion_ret"):
                write_mask_pgm(f"{stem}_{name}.pgm", getattr(tr, name))
    print(f"wrote {len(ds)} slices to {args.out}")


def cmd_phantoms(args, cfg):
    from .harness.data import make_volume_set, write_volume_set

    n = args.n if args.n is not None else cfg.n_volumes
    if n < 1:
        raise ValueError("--n must be >= 1")
    write_volume_set(args.out, make_volume_set(n, cfg.phantom, cfg.seed))
    print(f"wrote {n} volumes to {args.out}")


def _volumes(args, cfg):
    from .harness.data import make_volume_set, read_volume_set

    if args.data:
        return read_volume_set(args.data)
    return make_volume_set(cfg.n_volumes, cfg.phantom, cfg.seed)


def cmd_train_levels(args, cfg):
    from .harness.experiment import train_levels_net

    volumes = _volumes(args, cfg)
    train_cfg = dataclasses.replace(cfg.train_levels, seed=cfg.seed)
    net, tlog = train_levels_net(volumes, cfg.net_3d, cfg.crop_dims, train_cfg, net_seed=cfg.seed)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(os.path.join(args.out, "levels_net.ckpt"), net, cfg.seed, train_cfg.epochs)
    write_loss_log(os.path.join(args.out, "loss_levels.csv"), tlog)
    print(f"final train MAE {tlog[-1][3]:.3f} slices")


def cmd_train_scores(args, cfg):
    from .harness.data import make_slice_dataset, read_slice_dataset
    from .harness.experiment import train_scores_net

    if args.data:
        ds = read_slice_dataset(args.data)
    else:
        ds = make_slice_dataset(cfg.n_slices // 5, cfg.seed, cfg.slice_size, cfg.lesion_prob,
                                cfg.lesion_max_axis_frac, cfg.texture)
    train_cfg = dataclasses.replace(cfg.train, seed=cfg.seed)
    net, tlog = train_scores_net(ds, cfg.net_2d, train_cfg, cfg.synth_prob, cfg.balanced,
                                 cfg.balance_key, cfg.texture, cfg.morph, net_seed=cfg.seed,
                                 max_axis_frac=cfg.lesion_max_axis_frac)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(os.path.join(args.out, "scores_net.ckpt"), net, cfg.seed, train_cfg.epochs)
    write_loss_log(os.path.join(args.out, "loss_scores.csv"), tlog)
    print(f"final train MAE {tlog[-1][3]:.3f} points")


def cmd_eval(args, cfg):
    from .harness.experiment import cascade_predict, run_cv, run_score_ablation
    from .harness.reports import format_table1, format_table2

    nets = (args.levels_net, args.scores_net)
    if any(nets):
        if not all(nets):
            raise ValueError("cascade mode needs both --levels-net and --scores-net")
        net3d, _ = load_checkpoint(args.levels_net)
        net2d, _ = load_checkpoint(args.scores_net)
        volumes = _volumes(args, cfg)
        os.makedirs(args.out, exist_ok=True)
        preds = []
        with open(os.path.join(args.out, "cascade.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case_id", "level", "truth_index", "pred_index", "slice",
                        "tot", "gg", "ret", "tot_grade", "gg_grade", "ret_grade"])
            for case_id, vol, truth in volumes:
                for res, t in zip(cascade_predict(net3d, net2d, vol), truth):
                    w.writerow([case_id, res.level, repr(float(t)), repr(res.continuous),
                                res.index, *(repr(v) for v in res.scores), *res.grades])
                    preds.append((res.level, res.continuous, float(t)))
        rows = []
        for lvl in LEVEL_ORDER[::-1]:
            sel = [(p, t) for l, p, t in preds if l == lvl]
            if len(sel) >= 2:
                rows.append((f"level{lvl}", agreement_report(*zip(*sel), kappa=False)))
        if len(preds) >= 2:
            rows.append(("all", agreement_report([p for _, p, _ in preds],
                                                 [t for _, _, t in preds], kappa=False)))
        write_report_csv(os.path.join(args.out, "levels_report.csv"), rows)
        print(format_table1(rows), end="")
        return
    if args.ablation:
        table = run_score_ablation(cfg, args.out)
        print(format_table2(table), end="")
        return
    result = run_cv(cfg, args.out)
    if result.level_rows:
        print(format_table1(result.level_rows), end="")
    if result.score_rows:
        print(format_table2([("cascade", result.score_rows)]), end="")


def cmd_agree(args, cfg):
    from .harness.reports import format_table3, rater_agreement, write_table3_csv

    report = rater_agreement(args.table, args.weighting)
    os.makedirs(args.out, exist_ok=True)
    write_table3_csv(os.path.join(args.out, "table3.csv"), report)
    text = format_table3(report)
    with open(os.path.join(args.out, "table3.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")


def cmd_plot_data(args, cfg):
    from .harness.experiment import read_predictions

    kind, recs = read_predictions(args.predictions)
    os.makedirs(args.out, exist_ok=True)
    if kind == "levels":
        write_plot_data(os.path.join(args.out, "levels_all"),
                        [r["pred"] for r in recs], [r["truth"] for r in recs])
        for lvl in (1, 2, 3, 4, 5):
            sel = [r for r in recs if r["level"] == lvl]
            if sel:
                write_plot_data(os.path.join(args.out, f"levels_level{lvl}"),
                                [r["pred"] for r in sel], [r["truth"] for r in sel])
    else:
        for p in PATTERNS:
            k = p.lower()
            write_plot_data(os.path.join(args.out, f"scores_{k}"),
                            [r[f"{k}_pred"] for r in recs], [r[f"{k}_true"] for r in recs])
    print(f"wrote plot data to {args.out}")


COMMANDS = {
    "synth": cmd_synth,
    "phantoms": cmd_phantoms,
    "train-levels": cmd_train_levels,
    "train-scores": cmd_train_scores,
    "eval": cmd_eval,
    "agree": cmd_agree,
    "plot-data": cmd_plot_data,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
    except (ValueError, OSError) as exc:
        print(f"gohscore: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        COMMANDS[args.command](args, cfg)
    except DivergenceError as exc:
        print(f"gohscore: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FormatError, EmptyLungsError, InfeasibleCropError, OutOfExtentError,
            OSError) as exc:
        print(f"gohscore: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"gohscore: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
