"""Command-line entry point: ``lla {train,eval,translate,lexicon-dump,lesion}``.

All output is UTF-8 and tab-separated.  Exit codes: 0 success, 2 usage or
configuration error, 3 ingestion error, 4 numeric abort during training.
"""

import argparse
import logging
import sys
from pathlib import Path

from .data import DOMAINS, colors_corpus_dir, load_split, load_tsv
from .errors import ConfigurationError, IngestionError, TrainingError, VocabularyError
from .lesion import LesionSpec, lesion_report
from .training import TrainSchedule, Translator, evaluate_checkpoint, train

EXIT_OK, EXIT_CONFIG, EXIT_INGEST, EXIT_NUMERIC = 0, 2, 3, 4

# defaults applied after config-file values; command-line flags win over both
DEFAULTS = {
    "domain": "colors",
    "data": None,
    "variant": "lla",
    "seed": 0,
    "epochs": 1000,
    "lexicon_epochs": 30,
    "out": None,
    "max_len": 1000,
    "metric": None,
    "hidden": 300,
    "embed": 300,
    "adv_hidden": 1000,
    "max_input_len": None,
}
INT_KEYS = {"seed", "epochs", "lexicon_epochs", "max_len", "hidden", "embed", "adv_hidden", "max_input_len"}


def read_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = int(value) if key in INT_KEYS else value
    return values


def resolve(args):
    merged = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise ConfigurationError(f"config file not found: {cfg_path}")
        merged.update(read_config(cfg_path))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def cmd_train(args, out, err):
    cfg = resolve(args)
    if cfg["domain"] not in DOMAINS:
        raise ConfigurationError(f"unknown domain {cfg['domain']!r}")
    if cfg["out"] is None:
        raise ConfigurationError("--out is required")
    data = cfg["data"]
    if data is None:
        if cfg["domain"] != "colors":
            raise ConfigurationError(f"--data is required for domain {cfg['domain']}")
        data = colors_corpus_dir()
    data = Path(data)
    if not (data / "train.tsv").exists():
        raise ConfigurationError(f"dataset not found: {data / 'train.tsv'}")
    split = load_split(data, cfg["domain"], max_input_len=cfg["max_input_len"])
    metric = cfg["metric"] or ("bleu" if cfg["domain"] == "zh" else "exact")
    schedule = TrainSchedule(lexicon_epochs=cfg["lexicon_epochs"], total_epochs=cfg["epochs"],
                             seed=cfg["seed"], validation_metric=metric, max_len=cfg["max_len"])
    result = train(split, cfg["variant"], schedule, out_dir=cfg["out"], hidden=cfg["hidden"],
                   embed=cfg["embed"], adv_hidden=cfg["adv_hidden"])
    print(f"best epoch\t{result.main.best_epoch}\tvalidation {metric}\t{result.main.best_score:.2f}", file=out)
    if split.test:
        report = evaluate_checkpoint(result.translator, split.test, bleu=metric == "bleu", max_len=cfg["max_len"])
        print(report.header(), file=out)
        print(report.row(), file=out)
    return EXIT_OK


def _load(checkpoint, vocab_dir=None):
    path = Path(checkpoint)
    if not path.exists():
        raise ConfigurationError(f"checkpoint not found: {path}")
    return Translator.load(path, vocab_dir)


def cmd_eval(args, out, err):
    translator = _load(args.checkpoint, args.vocab_dir)
    test_path = Path(args.test)
    if not test_path.exists():
        raise ConfigurationError(f"test file not found: {test_path}")
    pairs = load_tsv(test_path, translator.domain)
    report = evaluate_checkpoint(translator, pairs, bleu=args.bleu, max_len=args.max_len)
    print(report.header(), file=out)
    print(report.row(), file=out)
    return EXIT_OK


def cmd_translate(args, out, err):
    translator = _load(args.checkpoint, args.vocab_dir)
    source = open(args.input, encoding="utf-8") if args.input else sys.stdin
    try:
        for line in source:
            line = line.rstrip("\n")
            tokens = translator.tokenize_input(line) if line.strip() else []
            if not tokens:
                print("", file=out)
                continue
            unknown = translator.unknown_tokens(tokens)
            if unknown:
                print(f"warning: unknown input tokens mapped to {translator.src_vocab.unk}: {' '.join(unknown)}",
                      file=err)
            print(" ".join(translator.translate_tokens(tokens, max_len=args.max_len)), file=out)
    finally:
        if source is not sys.stdin:
            source.close()
    return EXIT_OK


def lexicon_table(translator, words, threshold=0.05):
    """``(word, output token, sigmoid(w))`` triples with value >= threshold, descending per word."""
    model = translator.model
    if not model.variant.has_lexicon:
        raise ConfigurationError("checkpoint has no lexicon unit (plain variant)")
    missing = [w for w in words if w not in translator.src_vocab]
    if missing:
        raise VocabularyError(f"words not in the input vocabulary: {' '.join(missing)}")
    rows = []
    for word in words:
        values = model.lexicon_gate([translator.src_vocab.lookup(word)]).data
        order = sorted(range(len(values)), key=lambda k: (-values[k], k))
        rows.extend((word, translator.tgt_vocab.tokens[k], float(values[k])) for k in order if values[k] >= threshold)
    return rows


def cmd_lexicon_dump(args, out, err):
    translator = _load(args.checkpoint, args.vocab_dir)
    print("word\ttoken\tsigma_w", file=out)
    for word, token, value in lexicon_table(translator, args.words, args.threshold):
        print(f"{word}\t{token}\t{value:.4f}", file=out)
    return EXIT_OK


def cmd_lesion(args, out, err):
    if not args.targets:
        raise ConfigurationError("--targets is required (e.g. --targets lstms --targets lexicon)")
    translator = _load(args.checkpoint, args.vocab_dir)
    probes = []
    if args.probes:
        for line in Path(args.probes).read_text(encoding="utf-8").splitlines():
            if line.strip():
                probes.append(translator.tokenize_input(line))
    test = load_tsv(args.test, translator.domain) if args.test else []
    specs = [None] + [LesionSpec(frozenset(t.split(",")), seed=args.seed) for t in args.targets]
    print("modules_damaged\tinput\toutput", file=out)
    for spec in specs:
        report = lesion_report(translator, spec, test, probes, max_len=args.max_len)
        for row in report.rows():
            print(row, file=out)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="lla", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run both training stages and write checkpoints")
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--domain", choices=sorted(DOMAINS))
    p.add_argument("--data", help="directory with train.tsv [valid.tsv] [test.tsv]; colors defaults to the bundled corpus")
    p.add_argument("--variant", choices=["lla", "lla-noadv", "plain"])
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int, help="epoch at which training stops (default 1000)")
    p.add_argument("--lexicon-epochs", type=int, help="epoch at which the lexicon stage ends (default 30)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--max-len", type=int)
    p.add_argument("--metric", choices=["exact", "bleu"])
    p.add_argument("--hidden", type=int)
    p.add_argument("--embed", type=int)
    p.add_argument("--adv-hidden", type=int)
    p.add_argument("--max-input-len", type=int, help="drop longer inputs (10 for WSJ10)")
    p.set_defaults(func=cmd_train)

    def with_checkpoint(p):
        p.add_argument("checkpoint")
        p.add_argument("--vocab-dir", help="directory holding vocab.input.txt/vocab.output.txt")
        p.add_argument("--max-len", type=int, default=1000)

    p = sub.add_parser("eval", help="score a checkpoint on a TSV file")
    with_checkpoint(p)
    p.add_argument("--test", required=True)
    p.add_argument("--bleu", action="store_true", help="also report corpus BLEU")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("translate", help="greedy-translate one input per line")
    with_checkpoint(p)
    p.add_argument("--input", help="read from this file instead of stdin")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("lexicon-dump", help="sigma(w) values for input words")
    with_checkpoint(p)
    p.add_argument("words", nargs="+")
    p.add_argument("--threshold", type=float, default=0.05)
    p.set_defaults(func=cmd_lexicon_dump)

    p = sub.add_parser("lesion", help="damage modules and report probes and test precision")
    with_checkpoint(p)
    p.add_argument("--targets", action="append",
                   help="comma-separated target set (lstms, lexicon, adversary); repeat for several sets")
    p.add_argument("--probes", help="file with one probe input per line")
    p.add_argument("--test", help="TSV test set for mean precision")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_lesion)
    return parser


def main(argv=None, out=None, err=None):
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=err)
    try:
        return args.func(args, out, err)
    except TrainingError as exc:
        print(f"error: numeric abort: {exc}", file=err)
        return EXIT_NUMERIC
    except IngestionError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_INGEST
    except (ConfigurationError, VocabularyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
