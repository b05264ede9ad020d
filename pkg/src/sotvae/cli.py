"""Command-line entry point: ``sotvae <command> [flags]``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ABLATION_GRIDS, VARIANTS, Config, apply_variant
from .data import (SynthConfig, detokenize, load_corpus_dir, save_corpus_dir, split_corpus,
                   synth_corpus)
from .errors import NonFiniteError, SoTVAEError
from .evaluation import evaluate, generate_for_eval
from .trainer import load_model, train

log = logging.getLogger("sotvae")


def _model_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="key=value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--paper-scale", action="store_true", help="full-width model and published optimiser settings")
    p.add_argument("--sentiments", type=int, help="number of sentiment classes N")
    p.add_argument("--mask-ratio", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--variant", choices=sorted(VARIANTS), default="full")


def build_config(args, data_corpus=None) -> Config:
    """Defaults, then the config file, then the variant, then explicit flags, then data-derived sizes."""
    cfg = Config.paper_scale() if getattr(args, "paper_scale", False) else Config()
    if getattr(args, "config", None):
        cfg = Config.load(args.config, cfg)
    cfg = apply_variant(cfg, getattr(args, "variant", "full") or "full")
    flags = {"seed": "seed", "sentiments": "n_classes", "mask_ratio": "mask_ratio", "beta": "beta",
             "gamma": "gamma", "batch_size": "batch_size", "epochs": "epochs"}
    changes = {key: getattr(args, flag) for flag, key in flags.items() if getattr(args, flag, None) is not None}
    cfg = cfg.replace(**changes)
    if data_corpus is not None:
        if "n_classes" in changes and changes["n_classes"] != data_corpus.n_classes:
            raise SoTVAEError(f"--sentiments {changes['n_classes']} disagrees with the corpus "
                              f"({data_corpus.n_classes} classes)")
        cfg = cfg.replace(vocab_size=len(data_corpus.vocab), n_classes=data_corpus.n_classes,
                          d_in=int(np.asarray(data_corpus.samples[0].frames).shape[1]))
    return cfg.validate()


def _require(path: Path, what: str) -> Path:
    if path is None or not Path(path).exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return Path(path)


def cmd_synth(args) -> int:
    mixture = tuple(float(x) for x in args.mixture.split(",")) if args.mixture else None
    scfg = SynthConfig(vocab_size=args.vocab_size, n_samples=args.samples, n_classes=args.sentiments or 3,
                       sentiment_mixture=mixture, seed=args.seed if args.seed is not None else 0)
    corpus, _, lexicon = synth_corpus(scfg)
    header = {k: v for k, v in vars(scfg).items()}
    save_corpus_dir(args.out, corpus, lexicon, header)
    print(f"wrote {len(corpus)} samples to {args.out}")
    return 0


def _load_split(data_dir):
    return load_corpus_dir(_require(data_dir, "data directory"))


def cmd_train(args) -> int:
    corpus, _ = _load_split(args.data)
    cfg = build_config(args, corpus)
    tr, _ = split_corpus(corpus, cfg.test_fraction, cfg.seed)
    res = train(cfg, tr, out_dir=args.out, resume=args.resume)
    last = res.loss_log[-1] if res.loss_log else {}
    print(f"trained {len(res.loss_log)} steps; final total={last.get('total', float('nan')):.4f}; "
          f"checkpoint {Path(args.out) / 'model.ckpt'}")
    return 0


def cmd_generate(args) -> int:
    model, _, _ = load_model(_require(args.checkpoint, "checkpoint"))
    corpus, _ = _load_split(args.data)
    _, te = split_corpus(corpus, model.cfg.test_fraction, model.cfg.seed)
    target = corpus if args.split == "all" else te
    seed = args.seed if args.seed is not None else model.cfg.seed
    gens = generate_for_eval(model, target, seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {line}" for line in model.cfg.dump().splitlines()]
    for s, sample_gens in zip(target.samples, gens):
        for g in sample_gens:
            if not np.isfinite(g.mean_logprob):
                raise NonFiniteError(f"non-finite log-likelihood for {s.sample_id}")
            lines.append("\t".join([s.sample_id, str(g.sentiment), detokenize(g.tokens, corpus.vocab),
                                    f"{g.mean_logprob:.6f}"]))
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {sum(len(g) for g in gens)} comments for {len(gens)} samples to {out}")
    return 0


def cmd_evaluate(args) -> int:
    model, _, _ = load_model(_require(args.checkpoint, "checkpoint"))
    corpus, lexicon = _load_split(args.data)
    tr, te = split_corpus(corpus, model.cfg.test_fraction, model.cfg.seed)
    seed = args.seed if args.seed is not None else model.cfg.seed
    report, _ = evaluate(model, tr, te, lexicon, seed=seed, max_ranked=args.max_ranked)
    if not report.finite():
        raise NonFiniteError("evaluation produced non-finite metrics")
    report.write(args.out, model.cfg.dump())
    print(report.to_text(), end="")
    return 0


def cmd_ablate(args) -> int:
    corpus, lexicon = _load_split(args.data)
    base = build_config(args, corpus)
    tr, te = split_corpus(corpus, base.test_fraction, base.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, changes in ABLATION_GRIDS[args.grid]:
        cfg = base.replace(**changes).validate()
        run_dir = out / name.replace("=", "-").replace(",", "_")
        print(f"[{args.grid}] {name}", flush=True)
        res = train(cfg, tr, out_dir=run_dir)
        report, _ = evaluate(res.model, tr, te, lexicon, seed=cfg.seed, max_ranked=args.max_ranked)
        if not report.finite():
            raise NonFiniteError(f"{name}: evaluation produced non-finite metrics")
        report.write(run_dir, cfg.dump())
        rows.append({"variant": name, **{k: v for k, v in report.items()}})
    with open(out / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write("".join(f"# {line}\n" for line in base.dump().splitlines()))
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (";".join(map(str, v)) if isinstance(v, list) else
                            f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    print(f"wrote {out / 'comparison.csv'}")
    return 0


def cmd_dump_config(args) -> int:
    print(build_config(args).dump(), end="")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sotvae", description=__doc__)
    parser.add_argument("--dump-config", action="store_true", help="print the default configuration and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth-data", help="write a seeded synthetic corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--vocab-size", type=int, default=200)
    p.add_argument("--sentiments", type=int)
    p.add_argument("--mixture", help="comma-separated class weights, e.g. 0.02,0.49,0.49")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a corpus directory")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--resume", type=Path)
    _model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="one comment per sentiment class for each sample")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", choices=("test", "all"), default="test")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="ranking, diversity and controllability report")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-ranked", type=int, help="rank only the first N test samples")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and evaluate one ablation grid")
    p.add_argument("--grid", choices=sorted(ABLATION_GRIDS), required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--max-ranked", type=int)
    _model_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-config", help="print the resolved configuration")
    _model_flags(p)
    p.set_defaults(func=cmd_dump_config)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.dump_config:
        print(Config().dump(), end="")
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NonFiniteError as exc:
        print(f"error: non-finite values: {exc}", file=sys.stderr)
        return 3
    except SoTVAEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
