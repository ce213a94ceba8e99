"""Command-line entry point.

Data goes to stdout, logs to stderr.  Exit codes: 0 success, 1 usage error,
2 runtime error.  Report commands that take --out also render figures next
to the delimited output.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import accountant, evaluation, figures, toyworld, training
from .checkpoint import load_arrays, save_arrays
from .config import load_model_config, load_run_config
from .model import build_model
from .vocab import TokenStream, WordVocab, build_vocab, make_codec


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write_or_print(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
        _log(f"wrote {out}")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_gen_data(args) -> int:
    train, val, test = toyworld.generate_dataset(
        args.seed, args.n_train, args.n_val, args.n_test)
    os.makedirs(args.out, exist_ok=True)
    for name, scenes in (("train", train), ("val", val), ("test", test)):
        path = os.path.join(args.out, f"{name}.jsonl")
        toyworld.save_scenes(path, scenes)
        _log(f"wrote {path} ({len(scenes)} scenes)")
    return 0


def _cmd_build_vocab(args) -> int:
    if args.corpus.endswith(".jsonl"):
        captions = [s.caption for s in toyworld.load_scenes(args.corpus)]
    else:
        with open(args.corpus, encoding="utf-8") as fh:
            captions = [line.strip() for line in fh if line.strip()]
    vocab = build_vocab(captions, args.min_frequency)
    if args.out:
        vocab.save(args.out)
        _log(f"wrote {args.out} ({len(vocab)} entries)")
    else:
        sys.stdout.write("".join(
            f"{w}\t{c}\n" for w, c in zip(vocab.words, vocab.counts)))
    return 0


def _cmd_encode(args) -> int:
    codec = make_codec(WordVocab.load(args.vocab), args.radix_base)
    for caption in args.text:
        stream = codec.encode_caption(caption.split())
        print(stream.to_text())
    return 0


def _cmd_decode(args) -> int:
    codec = make_codec(WordVocab.load(args.vocab), args.radix_base)
    streams = args.stream if args.stream else [line for line in sys.stdin]
    for text in streams:
        text = text.strip()
        if not text:
            continue
        ts = TokenStream.from_text(text, codec.mode)
        print(" ".join(codec.decode_stream(ts, strict=args.strict)))
    return 0


def _cmd_train(args) -> int:
    rc = load_run_config(args.config)
    seed = args.seed if args.seed is not None else rc.train_seed
    train_scenes, val_scenes, _ = rc.data.load()
    run = training.train(rc.model, train_scenes, val_scenes, rc.schedule, seed)
    _log(f"best validation exact match {run.best_exact:.3f} "
         f"(epoch {run.best_epoch})")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        run.model.load_state(run.best_state)
        save_arrays(os.path.join(args.out, "model.ckpt"), run.model.state())
        run.codec.word_vocab.save(os.path.join(args.out, "vocab.tsv"))
        with open(os.path.join(args.out, "config.json"), "w") as fh:
            json.dump({"model": run.cfg.to_dict()}, fh, indent=2)
        metrics_path = os.path.join(args.out, "metrics.csv")
        with open(metrics_path, "w", encoding="utf-8") as fh:
            fh.write(run.metrics_csv())
        if run.history:
            figures.save_training_curves(
                run.history, os.path.join(args.out, "metrics.png"))
        _log(f"wrote checkpoint, vocab, metrics and figures under {args.out}")
    return 0


def _load_model_for_inference(args):
    cfg = load_model_config(args.config)
    vocab = WordVocab.load(args.vocab)
    cfg = cfg.with_vocab_size(len(vocab))
    codec = make_codec(vocab, cfg.radix_base)
    model = build_model(cfg, args.seed or 0)
    if args.checkpoint:
        model.load_state(load_arrays(args.checkpoint))
    else:
        _log("no checkpoint given; using seed-initialized weights")
    return model, codec


def _cmd_caption(args) -> int:
    model, codec = _load_model_for_inference(args)
    scenes = toyworld.load_scenes(args.input)
    captions = evaluation.generate_captions(
        model, codec, scenes, beam_size=args.beam_size,
        noise=0.0, noise_seed=args.seed or 0)
    _write_or_print("".join(c + "\n" for c in captions), args.out)
    return 0


def _cmd_evaluate(args) -> int:
    model, codec = _load_model_for_inference(args)
    scenes = toyworld.load_scenes(args.data)
    train_captions = []
    if args.train_data:
        train_captions = [s.caption for s in toyworld.load_scenes(args.train_data)]
    result = evaluation.evaluate(model, codec, scenes, beam_size=args.beam_size,
                                 training_captions=train_captions, noise=0.0)
    print("exact_match,bleu1,bleu2,bleu3,bleu4,unique_frac,avg_len")
    b = result.bleu
    print(f"{result.exact_match:.4f},{b[0]:.4f},{b[1]:.4f},{b[2]:.4f},"
          f"{b[3]:.4f},{result.stats.unique_fraction:.4f},"
          f"{result.stats.avg_word_count:.3f}")
    return 0


def _cmd_count(args) -> int:
    cfg = load_model_config(args.config)
    report = accountant.count_from_config(cfg)
    name = os.path.splitext(os.path.basename(args.config))[0]
    text = accountant.CSV_HEADER + "\n" + report.csv_row(name) + "\n"
    _write_or_print(text, args.out)
    return 0


def _cmd_tables(args) -> int:
    configs = accountant.suite_configs(args.suite)
    text = accountant.emit_tables(configs)
    _write_or_print(text, args.out)
    if args.out and not args.no_figures:
        names = list(configs)
        totals = [accountant.count_from_config(c).total_millions
                  for c in configs.values()]
        fig_path = os.path.splitext(args.out)[0] + ".png"
        figures.save_size_chart(names, totals, fig_path)
        _log(f"wrote {fig_path}")
    return 0


def _cmd_layer_dist(args) -> int:
    cfg = load_model_config(args.config)
    model = build_model(cfg, args.seed or 0)
    if args.checkpoint:
        model.load_state(load_arrays(args.checkpoint))
    else:
        _log("no checkpoint given; distances reflect seed-initialized weights")
    for squared, tag in ((True, "msd"), (False, "rmsd")):
        for stack, mat in evaluation.layer_distance_matrix(
                model, squared=squared).items():
            csv = "\n".join(",".join(f"{v:.8e}" for v in row) for row in mat) + "\n"
            if args.out:
                path = f"{args.out}_{stack}_{tag}.csv"
                with open(path, "w", encoding="utf-8") as fh:
                    fh.write(csv)
                _log(f"wrote {path}")
            else:
                print(f"# {stack} {tag}")
                sys.stdout.write(csv)
    if args.out and not args.no_figures:
        for stack, mat in evaluation.layer_distance_matrix(model).items():
            fig_path = f"{args.out}_{stack}.png"
            figures.save_distance_heatmap(mat, fig_path,
                                          f"{stack} layer distance (MSD)")
            _log(f"wrote {fig_path}")
    return 0


# ---------------------------------------------------------------------------
# parser wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="compactcap",
                     description="Compact captioner workbench: data, vocab, "
                                 "training, decoding and parameter accounting.")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate the synthetic scene dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-val", type=int, default=200)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("build-vocab", help="rank words by corpus frequency")
    p.add_argument("--corpus", required=True,
                   help="caption text file or scenes .jsonl")
    p.add_argument("--min-frequency", type=int, default=5)
    p.add_argument("--out", help="vocabulary tsv (default stdout)")
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("encode", help="encode captions to token streams")
    p.add_argument("--vocab", required=True)
    p.add_argument("--radix-base", type=int, default=0,
                   help="digit base; 0 keeps word-level ids")
    p.add_argument("text", nargs="+", help="caption text")
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="decode token streams to captions")
    p.add_argument("--vocab", required=True)
    p.add_argument("--radix-base", type=int, default=0)
    p.add_argument("--strict", action="store_true",
                   help="error on malformed streams instead of recovering")
    p.add_argument("stream", nargs="*", help="token streams (default stdin)")
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("train", help="train a captioner from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="directory for checkpoint/metrics/figures")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("caption", help="caption scenes, one line per scene")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", required=True, help="scenes .jsonl")
    p.add_argument("--beam-size", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_caption)

    p = sub.add_parser("evaluate", help="score a checkpoint on a scene file")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--vocab", required=True)
    p.add_argument("--data", required=True, help="scenes .jsonl")
    p.add_argument("--train-data", help="training scenes for uniqueness stats")
    p.add_argument("--beam-size", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("count", help="analytic parameter count for a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_count)

    p = sub.add_parser("tables", help="emit the model-size tables as CSV")
    p.add_argument("--suite", default="paper",
                   choices=["paper", *accountant.SUITES])
    p.add_argument("--out", help="CSV path; a bar chart lands next to it")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_tables)

    p = sub.add_parser("layer-dist",
                       help="pairwise layer parameter distance matrices")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="path prefix; CSV grids plus heatmaps")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_layer_dist)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help exits 0
        return int(exc.code or 0)
    try:
        return args.func(args) or 0
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure: report, exit 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
