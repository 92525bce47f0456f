"""Two-stage training schedule, validation and best-epoch selection.

Stage 1 fits only the lexicon table with row-sparse Adam on the BCE between
the lexicon gate and the indicator of output tokens.  Stage 2 freezes the
lexicon and fits everything else with dense Adam on the summed per-step NLL,
plus the adversary BCE for the full model.  Both stages validate after every
epoch and restore the best epoch's parameters at the end.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import DOMAINS, Vocabulary, build_vocab, tokenize
from .errors import ConfigurationError, TrainingError, VocabularyError
from .metrics import corpus_bleu, score_corpus, strip_stop
from .model import ModelConfig, ModelVariant, Seq2SeqModel, load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)


@dataclass
class TrainSchedule:
    lexicon_epochs: int = 30
    total_epochs: int = 1000
    lexicon_batch: int = 1
    main_batch: int = 30
    lexicon_lr: float = 0.1
    main_lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    adversary_lambda: float = 1e-4
    seed: int = 0
    validation_metric: str = "exact"
    max_len: int = 1000

    def __post_init__(self):
        if not 0 <= self.lexicon_epochs < self.total_epochs:
            raise ConfigurationError("need 0 <= lexicon_epochs < total_epochs")
        if self.lexicon_batch < 1 or self.main_batch < 1:
            raise ConfigurationError("batch sizes must be >= 1")
        if self.validation_metric not in ("exact", "bleu"):
            raise ConfigurationError(f"unknown validation metric {self.validation_metric!r}")
        if self.adversary_lambda < 0:
            raise ConfigurationError("adversary_lambda must be >= 0")


@dataclass
class StageResult:
    stage: str
    best_epoch: int
    best_score: float
    train_losses: list = field(default_factory=list)
    val_scores: list = field(default_factory=list)


def select_best(scores, higher_is_better=True):
    """1-based index of the best score; ties keep the earliest epoch."""
    if not scores:
        raise ValueError("no scores to select from")
    arr = np.asarray(scores, dtype=float)
    return int(np.argmax(arr) if higher_is_better else np.argmin(arr)) + 1


def _batches(order, size):
    for start in range(0, len(order), size):
        yield order[start:start + size]


def _check_finite(value, what):
    if not np.isfinite(value):
        raise TrainingError(f"non-finite {what}: {value}")


class EpochLog:
    """Collects tab-separated ``epoch stage train_loss val_score`` lines."""

    def __init__(self, path=None):
        self.lines = []
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.write_text("epoch\tstage\ttrain_loss\tval_score\n", encoding="utf-8")

    def __call__(self, epoch, stage, train_loss, val_score):
        line = f"{epoch}\t{stage}\t{train_loss!r}\t{val_score!r}"
        self.lines.append(line)
        logger.info(line)
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")


def lexicon_bce(model, src, tgt):
    return ad.bce_loss(model.lexicon_forward(src), model.lexicon_target(tgt))


def train_lexicon(model, train_pairs, val_pairs, schedule, rng, log=None):
    """Stage 1 over id pairs ``(src, tgt)``; leaves the best rows in the model."""
    if not model.variant.has_lexicon:
        raise ConfigurationError("the plain variant has no lexicon stage")
    table = model["lexicon.weight"]
    opt = ad.Adam([table], lr=schedule.lexicon_lr, betas=schedule.betas,
                  eps=schedule.adam_eps, sparse=True)
    result = StageResult("lexicon", 0, float("inf"))
    best_rows = table.data.copy()
    for epoch in range(1, schedule.lexicon_epochs + 1):
        order = rng.permutation(len(train_pairs))
        total = 0.0
        for batch in _batches(order, schedule.lexicon_batch):
            opt.zero_grad()
            for i in batch:
                src, tgt = train_pairs[i]
                loss = lexicon_bce(model, src, tgt)
                _check_finite(loss.item(), f"lexicon loss at epoch {epoch}")
                total += loss.item()
                ad.scale(loss, 1.0 / len(batch)).backward()
            opt.step()
        with ad.no_grad():
            val = float(np.mean([lexicon_bce(model, s, t).item() for s, t in val_pairs]))
        train_loss = total / len(train_pairs)
        result.train_losses.append(train_loss)
        result.val_scores.append(val)
        if log is not None:
            log(epoch, "lexicon", train_loss, val)
        if val < result.best_score:
            result.best_score, result.best_epoch = val, epoch
            best_rows = table.data.copy()
    table.data = best_rows
    table.grad = None
    return result


def validation_score(model, val_pairs, metric, max_len=1000):
    """Mean exact match (x100) or corpus BLEU over id pairs.

    For exact match, decoding is capped at gold length + 1: a longer
    decode can never be an exact match, so the score is unchanged.
    """
    stop = model.config.stop_id
    preds, golds = [], []
    for src, tgt in val_pairs:
        gold = [k for k in tgt if k != stop]
        cap = len(gold) + 1 if metric == "exact" else max_len
        preds.append(model.greedy_translate(src, max_len=cap))
        golds.append(gold)
    if metric == "bleu":
        return corpus_bleu(preds, golds)
    return 100.0 * float(np.mean([p == g for p, g in zip(preds, golds)]))


def train_main(model, train_pairs, val_pairs, schedule, rng, log=None, adversary_lambda=None,
               loss_trace=None):
    """Stage 2: epochs ``lexicon_epochs+1 .. total_epochs``; restores the best epoch.

    ``loss_trace``, when a list, receives the loss of every minibatch.
    """
    lam = schedule.adversary_lambda if adversary_lambda is None else adversary_lambda
    params = model.main_parameters()
    opt = ad.Adam(params, lr=schedule.main_lr, betas=schedule.betas, eps=schedule.adam_eps)
    result = StageResult("main", 0, -float("inf"))
    best_state = {p.name: p.data.copy() for p in params}
    first = schedule.lexicon_epochs + 1
    for epoch in range(first, schedule.total_epochs + 1):
        order = rng.permutation(len(train_pairs))
        total = 0.0
        for batch in _batches(order, schedule.main_batch):
            opt.zero_grad()
            batch_loss = 0.0
            for i in batch:
                src, tgt = train_pairs[i]
                loss = model.sequence_loss(src, tgt, adversary_lambda=lam)
                _check_finite(loss.item(), f"training loss at epoch {epoch}")
                batch_loss += loss.item()
                ad.scale(loss, 1.0 / len(batch)).backward()
            opt.step()
            total += batch_loss
            if loss_trace is not None:
                loss_trace.append(batch_loss / len(batch))
        score = validation_score(model, val_pairs, schedule.validation_metric, schedule.max_len)
        train_loss = total / len(train_pairs)
        result.train_losses.append(train_loss)
        result.val_scores.append(score)
        if log is not None:
            log(epoch, "main", train_loss, score)
        if score > result.best_score:
            result.best_score, result.best_epoch = score, epoch
            best_state = {p.name: p.data.copy() for p in params}
    for p in params:
        p.data = best_state[p.name]
        p.grad = None
    return result


# ---------------------------------------------------------------------------
# a model together with its vocabularies

@dataclass
class Translator:
    model: Seq2SeqModel
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    domain: str = "colors"

    def encode_pair(self, pair):
        return self.src_vocab.encode(pair.input), [self.tgt_vocab.lookup(t) for t in pair.output]

    def translate_tokens(self, tokens, max_len=1000):
        ids = self.model.greedy_translate(self.src_vocab.encode(tokens), max_len=max_len)
        return self.tgt_vocab.decode(ids)

    def tokenize_input(self, text):
        if self.domain == "wsj":
            text = text.lower()
        return tokenize(text, DOMAINS[self.domain][0])

    def unknown_tokens(self, tokens):
        return [t for t in tokens if t not in self.src_vocab or t == self.src_vocab.unk]

    def vocab_hashes(self):
        return {"input": self.src_vocab.digest(), "output": self.tgt_vocab.digest()}

    def save(self, path, extra=None):
        """Write the checkpoint plus ``vocab.input.txt``/``vocab.output.txt`` beside it."""
        path = Path(path)
        self.src_vocab.save(path.parent / "vocab.input.txt")
        self.tgt_vocab.save(path.parent / "vocab.output.txt")
        save_checkpoint(self.model, path, self.vocab_hashes(), dict(extra or {}, domain=self.domain))

    @classmethod
    def load(cls, path, vocab_dir=None):
        path = Path(path)
        vocab_dir = path.parent if vocab_dir is None else Path(vocab_dir)
        model, manifest = load_checkpoint(path)
        src = Vocabulary.load(vocab_dir / "vocab.input.txt")
        tgt = Vocabulary.load(vocab_dir / "vocab.output.txt")
        expected = manifest.get("vocab", {})
        for side, vocab in (("input", src), ("output", tgt)):
            if expected.get(side) and expected[side] != vocab.digest():
                raise VocabularyError(f"{side} vocabulary in {vocab_dir} does not match the checkpoint hash")
        return cls(model, src, tgt, manifest.get("extra", {}).get("domain", "colors"))


def evaluate_checkpoint(translator, pairs, bleu=False, max_len=1000):
    """Greedy-translate every pair and aggregate the corpus metrics."""
    preds = [translator.translate_tokens(p.input, max_len=max_len) for p in pairs]
    golds = [strip_stop(p.output, translator.tgt_vocab.stop) for p in pairs]
    return score_corpus(preds, golds, bleu=bleu)


@dataclass
class TrainResult:
    translator: Translator
    lexicon: StageResult = None
    main: StageResult = None
    log_lines: list = field(default_factory=list)


def build_translator(split, variant="lla", seed=0, **model_kw):
    pairs = split.all_pairs()
    src_vocab = build_vocab(pairs, "input")
    tgt_vocab = build_vocab(pairs, "output")
    config = ModelConfig(n_in=len(src_vocab), n_out=len(tgt_vocab), variant=ModelVariant(variant).value,
                         stop_id=tgt_vocab.stop_id, **model_kw)
    model = Seq2SeqModel(config, rng=np.random.default_rng([seed, 0]))
    return Translator(model, src_vocab, tgt_vocab, split.domain)


def train(split, variant="lla", schedule=None, out_dir=None, adversary_lambda=None,
          loss_trace=None, **model_kw):
    """Full two-stage run on a :class:`~lla.data.DatasetSplit`.

    With ``out_dir`` set, writes ``train.log``, ``best.lla``, ``last.lla``,
    ``best.json`` and the two vocabulary files.
    """
    schedule = schedule or TrainSchedule()
    translator = build_translator(split, variant, schedule.seed, **model_kw)
    model = translator.model
    rng = np.random.default_rng([schedule.seed, 1])
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    log = EpochLog(out / "train.log" if out is not None else None)

    train_ids = [translator.encode_pair(p) for p in split.train]
    val_ids = [translator.encode_pair(p) for p in split.validation]
    result = TrainResult(translator)
    if model.variant.has_lexicon and schedule.lexicon_epochs > 0:
        result.lexicon = train_lexicon(model, train_ids, val_ids, schedule, rng, log)
    main_log = log
    last_state = {}
    if out is not None:
        def main_log(epoch, stage, loss, score):
            log(epoch, stage, loss, score)
            if epoch == schedule.total_epochs:
                last_state.update(model.state_dict())
    result.main = train_main(model, train_ids, val_ids, schedule, rng, main_log,
                             adversary_lambda=adversary_lambda, loss_trace=loss_trace)
    result.log_lines = list(log.lines)

    if out is not None:
        translator.save(out / "best.lla", extra={"epoch": result.main.best_epoch})
        if last_state:
            best_state = model.state_dict()
            model.load_state_dict(last_state)
            translator.save(out / "last.lla", extra={"epoch": schedule.total_epochs})
            model.load_state_dict(best_state)
        manifest = {
            "checkpoint": "best.lla",
            "epoch": result.main.best_epoch,
            "score": result.main.best_score,
            "metric": schedule.validation_metric,
            "variant": model.variant.value,
        }
        if result.lexicon is not None:
            manifest["lexicon_epoch"] = result.lexicon.best_epoch
            manifest["lexicon_val_bce"] = result.lexicon.best_score
        (out / "best.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return result

