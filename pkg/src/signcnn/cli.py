"""Command-line interface: ``signcnn {train,eval,predict,stream,plot,summary}``.

Exit codes: 0 success, 2 usage error, 3 I/O error, 4 bad file format,
5 numeric failure during training.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import data, metrics, model as model_mod, pipeline, train as train_mod

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_NUMERIC = 5

log = logging.getLogger("signcnn")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    d = train_mod.TrainConfig()
    p.add_argument("--max-epochs", type=int, default=d.max_epochs)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--validation-fraction", type=float, default=d.validation_fraction)
    p.add_argument("--patience", type=int, default=d.patience)
    p.add_argument("--no-restore-best", dest="restore_best", action="store_false")
    p.add_argument("--lr", type=float, default=d.lr, help="Adam learning rate")
    p.add_argument("--seed", type=int, default=d.seed, help="init, split and shuffle seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="signcnn", description="Sign Language MNIST CNN: train, evaluate and classify"
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the CNN on a Sign Language MNIST CSV")
    p.add_argument("train_csv")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--history", help="history file (default: <out>.history.tsv)")
    p.add_argument("--subset", type=int, help="train on a stratified subset of this size")
    _add_train_flags(p)

    p = sub.add_parser("eval", help="evaluate a model on a test CSV")
    p.add_argument("test_csv")
    p.add_argument("model")
    p.add_argument("--confusion", action="store_true", help="print the confusion matrix")

    p = sub.add_parser("predict", help="classify a single PGM image")
    p.add_argument("model")
    p.add_argument("image")

    p = sub.add_parser("stream", help="classify a directory of PGMs or a PGM stream on stdin")
    p.add_argument("model")
    p.add_argument("source", help="directory of .pgm files, or '-' for stdin")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--speak-cmd", help="command template with a {letter} placeholder")
    g.add_argument("--silent", action="store_true", help="emit no speak events")
    p.add_argument(
        "--speak-channel",
        choices=("inline", "stderr"),
        default="stderr",
        help="where SPEAK events are written when no command is given",
    )
    p.add_argument("--debounce", type=float, default=1.0, help="seconds per letter")
    p.add_argument("--no-debounce", action="store_true")

    p = sub.add_parser("plot", help="render a history file as a two-panel SVG")
    p.add_argument("history")
    p.add_argument("out_svg")

    p = sub.add_parser("summary", help="print the layer table and parameter counts")
    p.add_argument("model", nargs="?", help="model file (default: a freshly built model)")
    return parser


def _print_epoch(r: train_mod.EpochRecord) -> None:
    print(
        f"epoch {r.epoch:3d}  loss {r.train_loss:.4f}  acc {r.train_accuracy:.4f}  "
        f"val_loss {r.val_loss:.4f}  val_acc {r.val_accuracy:.4f}",
        flush=True,
    )


def cmd_train(args) -> int:
    cfg = train_mod.TrainConfig(
        max_epochs=args.max_epochs,
        batch_size=args.batch_size,
        validation_fraction=args.validation_fraction,
        patience=args.patience,
        restore_best=args.restore_best,
        seed=args.seed,
        lr=args.lr,
    )
    ds = data.load_dataset(args.train_csv)
    print(f"loaded {len(ds)} samples ({ds.dropped} dropped by the 0..23 label filter)")
    if args.subset:
        ds = data.stratified_subset(ds, args.subset, args.seed)
        print(f"using a stratified subset of {len(ds)} samples")
    tr, va = train_mod.split_train_val(ds, cfg.validation_fraction, cfg.seed)
    print(f"train {len(tr)} / validation {len(va)}")
    m = model_mod.build_model(seed=cfg.seed)
    m, history = train_mod.train(m, tr, cfg, val_set=va, on_epoch=_print_epoch)

    history_path = Path(args.history or f"{args.out}.history.tsv")
    if history.records:
        metrics.export_history(history, history_path)
    model_mod.save(m, args.out)
    if history.records:
        best = history.records[history.best_epoch - 1]
        print(
            f"best epoch {history.best_epoch} (val_loss {best.val_loss:.5f}, "
            f"val_acc {best.val_accuracy:.5f})"
            + ("; stopped early" if history.stopped_early else "")
        )
        print(f"wrote {args.out} and {history_path}")
    else:
        print(f"no epochs run; wrote untrained model {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    m = model_mod.load(args.model)
    ds = data.load_dataset(args.test_csv)
    report = metrics.evaluate(m, ds)
    print(report.format(with_confusion=args.confusion, letters=list(pipeline.LETTERS)))
    return EXIT_OK


def cmd_predict(args) -> int:
    m = model_mod.load(args.model)
    pred = pipeline.predict(m, data.read_pgm(args.image))
    print(f"{pred.letter}\t{pred.confidence:.5f}")
    return EXIT_OK


def cmd_stream(args) -> int:
    m = model_mod.load(args.model)
    if args.source == "-":
        frames = pipeline.stream_frames(sys.stdin.buffer)
    else:
        if not Path(args.source).is_dir():
            raise FileNotFoundError(f"frame directory {args.source} does not exist")
        frames = pipeline.directory_frames(args.source)
    debounce = 0.0 if args.no_debounce else args.debounce
    if args.silent:
        hook = pipeline.SpeakHook(mode="silent")
    elif args.speak_cmd:
        hook = pipeline.SpeakHook(mode="command", command=args.speak_cmd, debounce=debounce)
    else:
        out = sys.stdout if args.speak_channel == "inline" else sys.stderr
        hook = pipeline.SpeakHook(mode="stdout", debounce=debounce, out=out)
    try:
        for _ in pipeline.classify_stream(m, frames, hook, out=sys.stdout, errors=sys.stderr):
            pass
    except KeyboardInterrupt:
        pass
    finally:
        hook.wait()
    return EXIT_OK


def cmd_plot(args) -> int:
    history = metrics.load_history(args.history)
    metrics.write_svg(history, args.out_svg)
    print(f"wrote {args.out_svg} ({len(history)} epochs)")
    return EXIT_OK


def cmd_summary(args) -> int:
    m = model_mod.load(args.model) if args.model else model_mod.build_model()
    print(m.summary())
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "stream": cmd_stream,
    "plot": cmd_plot,
    "summary": cmd_summary,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (train_mod.NumericError, FloatingPointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (
        data.DataFormatError,
        data.ImageFormatError,
        model_mod.ModelFormatError,
        metrics.HistoryFormatError,
        train_mod.LabelError,
    ) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
