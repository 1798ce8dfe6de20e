"""Command-line entry point.

Subcommands: gen, train, oracle, check, eval, bench.  Global flags --seed,
--threads, --config apply before the subcommand.  Exit codes: 0 success,
1 usage error, 2 data/model error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import geometry as geo
from . import inference as inf
from . import metrics as me
from .config import RunConfig, read_config, write_config
from .nn import (
    ChecksumError,
    DataError,
    LabelSpaceMismatch,
    ShapeMismatch,
    SpecError,
    StateError,
    VersionMismatch,
    build_model,
    evaluate,
    load_model,
    param_summary,
    save_model,
    train,
    write_history,
)

USAGE_EXIT = 1
DATA_EXIT = 2

DATA_ERRORS = (
    geo.ParseError,
    geo.LayoutError,
    ds.GenerationFailed,
    ds.NoCandidateError,
    ds.ExtentTooSmall,
    ds.InsufficientCleanClips,
    ChecksumError,
    VersionMismatch,
    SpecError,
    ShapeMismatch,
    StateError,
    DataError,
    LabelSpaceMismatch,
    me.LengthMismatch,
    me.UnknownLabel,
    me.MissingCleanClass,
    OSError,
    ValueError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _build_parser() -> _Parser:
    p = _Parser(prog="drccnn", description=__doc__)
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--threads", type=int, default=None, help="worker pool cap")
    p.add_argument("--config", type=str, default=None, help="flat key=value config file")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate a labeled clip dataset")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--seeds", type=int, default=None)
    g.add_argument("--variants", type=int, default=None)
    g.add_argument("--rules", type=int, choices=(1, 3), default=None)
    g.add_argument("--ops-per-rule", type=int, default=None)

    t = sub.add_parser("train", help="train a model on a generated dataset")
    t.add_argument("--dataset", required=True, help="dataset directory (with manifest.csv)")
    t.add_argument("--preset", default=None, help="one_rule | three_rule")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--out", required=True, help="model file")
    t.add_argument("--history", default=None, help="history csv (default: <out>.history.csv)")

    o = sub.add_parser("oracle", help="run the boolean DRC oracle on a layout")
    o.add_argument("--layout", required=True)
    o.add_argument("--out", default=None, help="DRC report file (JSON)")

    c = sub.add_parser("check", help="scan a layout with a trained model")
    c.add_argument("--model", required=True)
    c.add_argument("--layout", required=True)
    c.add_argument("--out-prefix", default=None, help="writes <prefix>.scan.csv and <prefix>.mask.pgm")

    e = sub.add_parser("eval", help="evaluate a model on a dataset split")
    e.add_argument("--model", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--split", default="test", choices=ds.SPLITS)
    e.add_argument("--out", default=None, help="evaluation report file (JSON)")

    b = sub.add_parser("bench", help="time the CNN scan against the oracle")
    b.add_argument("--model", required=True)
    b.add_argument("--layout", required=True)
    b.add_argument("--reps", type=int, default=3)
    b.add_argument("--out", default=None, help="bench report file")
    return p


def _run_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = read_config(args.config, cfg)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    for flag, field in (
        ("seeds", "seeds"),
        ("variants", "variants"),
        ("rules", "rule_count"),
        ("ops_per_rule", "ops_per_rule"),
        ("preset", "preset"),
        ("epochs", "epochs"),
        ("batch_size", "batch_size"),
        ("lr", "learning_rate"),
    ):
        if getattr(args, flag, None) is not None:
            setattr(cfg, field, getattr(args, flag))
    return cfg


def cmd_gen(args) -> int:
    cfg = _run_config(args)
    manifest = ds.generate_dataset(cfg.gen_config(), args.out, threads=max(1, cfg.threads))
    write_config(cfg, Path(args.out) / "run_config.txt")
    counts = manifest.counts()
    print(f"dataset written to {args.out}: {len(manifest.records)} clips")
    for label in manifest.classes:
        print(f"  {label:>7}: {counts[label]}")
    for split in ds.SPLITS:
        print(f"  {split:>7}: {len(manifest.split_records(split))}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    manifest = ds.read_manifest(Path(args.dataset) / "manifest.csv")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 4]))
    model = build_model(cfg.preset, rng, seed=cfg.seed, print_summary=True)
    tc = cfg.train_config()

    def progress(epoch, st):
        print(
            f"epoch {epoch + 1}/{tc.epochs}: train_loss={st.train_loss:.4f} "
            f"val_loss={st.val_loss:.4f} val_acc={st.val_accuracy:.4f} ({st.seconds:.1f}s)"
        )

    model, history = train(model, manifest, tc, args.dataset, on_epoch=progress)
    save_model(model, args.out)
    history_path = args.history or f"{args.out}.history.csv"
    write_history(history, history_path, config=dataclasses.asdict(cfg))
    print(f"model written to {args.out} (fingerprint {model.fingerprint()})")
    return 0


def cmd_oracle(args) -> int:
    cfg = _run_config(args)
    layout = geo.read_layout(args.layout)
    report = geo.run_drc(layout, cfg.ruleset())
    if args.out:
        geo.write_drc_report(report, args.out, cfg.ruleset())
    print(f"{layout.name}: {len(report.violations)} violations in {report.duration_ms:.2f} ms")
    for v in report.violations:
        r = v.region
        print(f"  {v.rule.value} at ({r.x0},{r.y0},{r.x1},{r.y1}) shapes {list(v.shape_indices)}")
    return 0


def cmd_check(args) -> int:
    model = load_model(args.model)
    layout = geo.read_layout(args.layout)
    report = inf.scan_layout(model, layout)
    prefix = args.out_prefix or args.layout
    inf.write_scan_report(report, f"{prefix}.scan.csv")
    mask = inf.emit_mask(report, layout.extent)
    inf.write_mask_pgm(mask, f"{prefix}.mask.pgm", comment=f"model={report.model_id}")
    flagged = report.flagged()
    print(
        f"{layout.name}: {len(report.origins)} windows scanned in {report.duration_ms:.1f} ms, "
        f"{len(flagged)} flagged"
    )
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    manifest = ds.read_manifest(Path(args.dataset) / "manifest.csv")
    if len(manifest.classes) != model.spec.output_dim:
        raise LabelSpaceMismatch(
            f"dataset has {len(manifest.classes)} classes, model outputs {model.spec.output_dim}"
        )
    clips = ds.load_clips(manifest, args.dataset, args.split)
    _loss, _acc, pred_idx = evaluate(model, clips)
    pred = [manifest.classes[k] for k in pred_idx]
    truth = [manifest.classes[k] for k in clips.labels]
    cm = me.confusion(pred, truth, manifest.classes)
    report = me.evaluation_report(
        cm,
        config={
            "split": args.split,
            "model": model.fingerprint(),
            "dataset_seed": manifest.seed,
        },
    )
    print(me.format_report(report), end="")
    if args.out:
        me.write_report(report, args.out)
    return 0


def cmd_bench(args) -> int:
    cfg = _run_config(args)
    model = load_model(args.model)
    layout = geo.read_layout(args.layout)
    report = inf.benchmark(model, layout, cfg.ruleset(), reps=args.reps)
    if args.out:
        inf.write_bench_report(report, args.out)
    print(
        f"{layout.name}: cnn {report.cnn_ms:.1f} ms vs oracle {report.oracle_ms:.1f} ms "
        f"(ratio {report.ratio:.2f}) over {report.windows} windows, median of {report.reps}"
    )
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "oracle": cmd_oracle,
    "check": cmd_check,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return COMMANDS[args.cmd](args)
    except DATA_ERRORS as e:
        print(f"drccnn {args.cmd}: error: {e}", file=sys.stderr)
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
