"""Command-line entry point: ``srb {train,eval,generate,gradcheck,make-toy}``.

Every subcommand accepts ``--config FILE`` (``key = value`` lines) and any
configuration key as a ``--key=value`` flag; flags win over the file.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from srb import data as D
from srb import training
from srb.checkpoint import load_checkpoint
from srb.config import RunConfig, load_config, parse_overrides
from srb.decoding import default_max_len, format_attention, greedy_decode, replace_unk
from srb.errors import ConfigError, DataError, NumericError
from srb.gradcheck import TOLERANCE, check_model_gradients
from srb.metrics import evaluate_corpus

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def _checkpoint_path(cfg: RunConfig) -> Path:
    return Path(cfg.checkpoint) if cfg.checkpoint else Path(cfg.out_dir) / "best.srb"


def _load_model(cfg: RunConfig):
    ckpt = _checkpoint_path(cfg)
    vocab_path = Path(cfg.vocab_path) if cfg.vocab_path else ckpt.parent / "vocab.txt"
    if not vocab_path.is_file():
        raise DataError(f"vocabulary file not found: {vocab_path}")
    vocab = D.Vocab.load(vocab_path)
    params, _ = load_checkpoint(ckpt, expect=cfg.model_config(len(vocab)))
    return params, vocab


def _tagger(cfg: RunConfig):
    return training.make_tagger(cfg) if cfg.anonymize else None


def _decode_line(text: str, params, vocab, cfg: RunConfig, tagger):
    prep = training.prepare_pair(text, "", cfg, tagger)
    if not prep.source:
        return [], None
    ids = vocab.encode(prep.source)
    limit = cfg.max_decode_len or default_max_len(cfg.profile, len(ids))
    result = greedy_decode(ids, params, limit, vocab)
    words = replace_unk(result, prep.source, prep.recovery)
    tokens = [piece for w in words for piece in w.split(" ")]
    return tokens, result


def cmd_train(cfg: RunConfig) -> int:
    tagger = _tagger(cfg)
    train_pairs = training.load_split(cfg, cfg.train_path, "train", tagger)
    if cfg.vocab_path:
        vocab = D.Vocab.load(cfg.vocab_path)
    else:
        corpus = [p.source for p in train_pairs] + [p.target for p in train_pairs]
        slots = cfg.entity_slots if cfg.anonymize else 0
        vocab = D.build_vocab(corpus, cfg.vocab_size, cfg.tokenize_mode, entity_slots=slots)
    dev_pairs = training.load_split(cfg, cfg.dev_path, "dev", tagger) if cfg.dev_path else []
    params = None
    if cfg.checkpoint:
        params, _ = load_checkpoint(cfg.checkpoint, expect=cfg.model_config(len(vocab)))
    result = training.train(
        cfg,
        training.to_examples(train_pairs, vocab),
        training.to_examples(dev_pairs, vocab),
        vocab=vocab,
        out_dir=cfg.out_dir,
        params=params,
        on_epoch=lambda s: print(
            f"epoch {s.epoch}\tnll {s.nll:.4f}\tcos {s.cosine:.4f}\tloss {s.loss:.4f}"
            + (f"\tdev {s.dev_loss:.4f}" if s.dev_loss is not None else ""),
            flush=True,
        ),
    )
    print(f"best epoch {result.best_epoch}; checkpoints in {cfg.out_dir}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    records = D.read_records(cfg.test_path) if cfg.test_path else []
    if cfg.corpus == "lcsts":
        records = D.filter_lcsts(records)
    ref_cols = [[r.target for r in records]] if records else []
    for path in filter(None, cfg.reference_paths.split(",")):
        ref_cols.append(Path(path).read_text(encoding="utf-8").splitlines())
    if not ref_cols:
        raise ConfigError("eval needs test_path or reference_paths")
    if cfg.decoded_path:
        lines = Path(cfg.decoded_path).read_text(encoding="utf-8").splitlines()
        cands = [D.tokenize(line, cfg.tokenize_mode) for line in lines]
    else:
        if not records:
            raise ConfigError("decoding for eval needs a test_path record file")
        params, vocab = _load_model(cfg)
        tagger = _tagger(cfg)
        cands = [_decode_line(r.source, params, vocab, cfg, tagger)[0] for r in records]
    for col in ref_cols:
        if len(col) != len(cands):
            raise DataError(f"reference column has {len(col)} lines for {len(cands)} outputs")
    refs = [[D.tokenize(col[i], cfg.tokenize_mode) for col in ref_cols] for i in range(len(cands))]
    report = evaluate_corpus(cands, refs)
    if cfg.report_path:
        report.write(cfg.report_path)
    print(report.table())
    return EXIT_OK


def cmd_generate(cfg: RunConfig) -> int:
    if not cfg.input_path or not cfg.output_path:
        raise ConfigError("generate needs input_path and output_path")
    params, vocab = _load_model(cfg)
    tagger = _tagger(cfg)
    lines = Path(cfg.input_path).read_text(encoding="utf-8").splitlines()
    attn = open(cfg.attention_path, "w", encoding="utf-8") if cfg.attention_path else None
    try:
        with open(cfg.output_path, "w", encoding="utf-8") as out:
            for line in lines:
                tokens, result = _decode_line(line, params, vocab, cfg, tagger)
                out.write(D.detokenize(tokens, cfg.tokenize_mode) + "\n")
                if attn is not None:
                    attn.write(format_attention(result.attention if result else []))
    finally:
        if attn is not None:
            attn.close()
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig) -> int:
    if cfg.dropout_rate > 0:
        print("gradcheck refuses to run with dropout enabled; set --dropout_rate=0", file=sys.stderr)
        return EXIT_USAGE
    worst, per_param = check_model_gradients(cfg.lambda_sr, seed=cfg.seed)
    for name, err in per_param.items():
        print(f"{name:<16} {err:.3e}")
    status = "ok" if worst < TOLERANCE else "FAILED"
    print(f"max relative error {worst:.3e} (lambda={cfg.lambda_sr}) {status}")
    return EXIT_OK if worst < TOLERANCE else EXIT_NUMERIC


def cmd_make_toy(cfg: RunConfig) -> int:
    if not cfg.output_path:
        raise ConfigError("make-toy needs output_path")
    pairs = D.make_toy_corpus(cfg.toy_task, cfg.toy_size, seed=cfg.seed)
    D.write_records(cfg.output_path, (D.Record(" ".join(s), " ".join(t)) for s, t in pairs))
    print(f"wrote {len(pairs)} {cfg.toy_task} pairs to {cfg.output_path}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "generate": cmd_generate,
    "gradcheck": cmd_gradcheck,
    "make-toy": cmd_make_toy,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srb", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, rest = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, parse_overrides(rest))
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, IndexError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
