"""Command line entry point: synth, train, eval, retrieve, gradcheck."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import checkpoint
from .alignment import RECALL_KS
from .graph import load_dataset, save_dataset, synth_dataset
from .gradcheck import gradcheck
from .train import EpochLog, TrainConfig, delta_sweep, evaluate, retrieve, train

REPORT_HEADER = ["delta"] + [f"i2t_R@{k}" for k in RECALL_KS] + [f"t2i_R@{k}" for k in RECALL_KS] + ["rsum"]


def _tsv(values) -> str:
    return "\t".join(str(v) for v in values)


def cmd_synth(args) -> int:
    records = synth_dataset(args.seed, args.pairs, args.n, args.m, args.d, args.n_rel, args.n_attr)
    save_dataset(args.out, records)
    print(f"wrote {len(records)} pairs to {args.out}")
    return 0


def cmd_train(args) -> int:
    data = load_dataset(args.data)
    state = None
    if args.resume:
        config, state = checkpoint.load_checkpoint(args.resume)
    else:
        config = TrainConfig.load(args.config)
    log_file = open(args.log, "a" if args.resume else "w") if args.log else None
    print(_tsv(EpochLog.HEADER), flush=True)
    if log_file and not args.resume:
        log_file.write(_tsv(EpochLog.HEADER) + "\n")

    def on_epoch(entry, st):
        print(entry.to_tsv(), flush=True)
        if log_file:
            log_file.write(entry.to_tsv() + "\n")
            log_file.flush()

    try:
        state = train(config, data, state, on_epoch)
    finally:
        if log_file:
            log_file.close()
    checkpoint.save_checkpoint(args.out, config, state)
    if args.figures and state.logs:
        from .plotting import plot_training_curves

        path = plot_training_curves(state.logs, Path(args.figures) / "training_curves.png")
        print(f"# figure {path}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    config, state = checkpoint.load_checkpoint(args.ckpt)
    data = load_dataset(args.data)
    if args.sweep:
        deltas = [float(x) for x in args.sweep.split(",")]
    else:
        deltas = [config.delta if args.delta is None else args.delta]
    if len(deltas) == 1:
        rows = [(deltas[0], evaluate(state.params, data, delta=deltas[0]))]
    else:
        rows = delta_sweep(state.params, data, deltas)
    print(_tsv(REPORT_HEADER))
    for dl, report in rows:
        print(_tsv([dl] + report.as_row()))
    if args.figures and len(rows) > 1:
        from .plotting import plot_delta_sweep

        path = plot_delta_sweep(rows, Path(args.figures) / "delta_sweep.png")
        print(f"# figure {path}", file=sys.stderr)
    return 0


def cmd_retrieve(args) -> int:
    config, state = checkpoint.load_checkpoint(args.ckpt)
    gallery = load_dataset(args.gallery)
    if Path(args.query).is_file():
        query_rec = load_dataset(args.query)[0]
    else:
        matches = [r for r in gallery if r.pair_id == args.query]
        if not matches:
            print(f"error: no pair {args.query!r} in {args.gallery}", file=sys.stderr)
            return 2
        query_rec = matches[0]
    if args.modality == "image":
        query, items = query_rec.image_graph, [r.text_graph for r in gallery]
    else:
        query, items = query_rec.text_graph, [r.image_graph for r in gallery]
    hits = retrieve(state.params, query, items, args.topk, args.explain, args.pairs, args.modality)
    print(_tsv(["rank", "pair_id", "score"]))
    for h in hits:
        print(_tsv([h.rank, gallery[h.index].pair_id, repr(h.score)]))
    if args.explain and hits:
        print(_tsv(["#", "region", "word", "affinity"]))
        for i, j, a in hits[0].region_word_pairs:
            print(_tsv(["#", i, j, repr(a)]))
        if args.figure:
            from .model import embed_pair
            from .plotting import plot_region_word

            best = items[hits[0].index]
            image, text = (query, best) if args.modality == "image" else (best, query)
            _, A = embed_pair(state.params, image, text)
            path = plot_region_word(A.value, args.figure, hits[0].region_word_pairs)
            print(f"# figure {path}", file=sys.stderr)
    return 0


def cmd_gradcheck(args) -> int:
    report = gradcheck(args.seed, loss="linear" if args.linear else "full", inject_fault=args.inject_fault)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scenematch", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic matched-pair dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pairs", type=int, default=64)
    p.add_argument("--n", type=int, default=4, help="regions per image")
    p.add_argument("--m", type=int, default=5, help="words per text")
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--n-rel", type=int, default=2)
    p.add_argument("--n-attr", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train and write a checkpoint")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="continue from this checkpoint (its config is used)")
    p.add_argument("--log", help="also append the epoch log to this file")
    p.add_argument("--figures", help="directory for training-curve figures")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="recall@K and rSum over a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--delta", type=float)
    p.add_argument("--sweep", help="comma-separated delta values, e.g. 0,0.3,0.5,0.7")
    p.add_argument("--figures", help="directory for the sweep figure")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("retrieve", help="rank a gallery against one query")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--query", required=True, help="pair_id in the gallery, or a dataset file")
    p.add_argument("--gallery", required=True)
    p.add_argument("--topk", type=int, default=5)
    p.add_argument("--modality", choices=("image", "text"), default="image")
    p.add_argument("--explain", action="store_true")
    p.add_argument("--pairs", type=int, default=5, help="region-word pairs to list with --explain")
    p.add_argument("--figure", help="write the region-word heat map here (with --explain)")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("gradcheck", help="reverse-mode vs finite-difference gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--linear", action="store_true", help="use a linear toy loss")
    p.add_argument("--inject-fault", action="store_true", help="corrupt one gradient entry")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "train" and not (args.config or args.resume):
        parser.error("train needs --config or --resume")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
