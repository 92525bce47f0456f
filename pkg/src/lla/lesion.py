"""Lesion experiments: re-draw a trained submodule's weights and probe the result.

Damaging ``LSTMS`` (encoder, decoder, input embeddings and output
projection) removes word-order knowledge; damaging ``LEXICON_UNIT`` replaces
the lexicon table with uniform(-1, 1) noise so the gate passes wrong content.
``ADVERSARY`` damage is accepted but has no effect on translation.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .metrics import pair_scores, strip_stop


class LesionTarget(enum.Enum):
    LSTMS = "lstms"
    LEXICON_UNIT = "lexicon"
    ADVERSARY = "adversary"

    @classmethod
    def parse(cls, name):
        key = name.strip().lower().replace("-", "_")
        aliases = {"lstms": cls.LSTMS, "lstm": cls.LSTMS, "lexicon": cls.LEXICON_UNIT,
                   "lexicon_unit": cls.LEXICON_UNIT, "adversary": cls.ADVERSARY}
        if key not in aliases:
            raise ConfigurationError(f"unknown lesion target {name!r}; expected lstms, lexicon or adversary")
        return aliases[key]


@dataclass(frozen=True)
class LesionSpec:
    targets: frozenset
    seed: int = 0

    def __post_init__(self):
        targets = frozenset(t if isinstance(t, LesionTarget) else LesionTarget.parse(t) for t in self.targets)
        if not targets:
            raise ConfigurationError("a lesion needs at least one target")
        object.__setattr__(self, "targets", targets)

    @property
    def label(self):
        names = {LesionTarget.LSTMS: "LSTMs", LesionTarget.LEXICON_UNIT: "Lexicon Unit",
                 LesionTarget.ADVERSARY: "Adversary"}
        return " + ".join(names[t] for t in LesionTarget if t in self.targets)


def apply_lesion(model, spec):
    """Return a damaged copy of ``model``; the original is left untouched.

    Targets are processed in a fixed order from one generator seeded by
    ``spec.seed``, so equal specs give equal damage.
    """
    damaged = model.copy()
    groups = damaged.groups()
    rng = np.random.default_rng([spec.seed, 2])
    for target in LesionTarget:
        if target not in spec.targets:
            continue
        if target.value not in groups:
            raise ConfigurationError(f"model variant {damaged.variant.value} has no {target.value} module")
        damaged.reinitialize(target.value, rng)
    return damaged


@dataclass
class LesionReport:
    label: str
    probes: list = field(default_factory=list)   # (input tokens, output tokens)
    precision: float = None

    def rows(self):
        """Tab-separated rows: one per probe, then the corpus precision."""
        out = [f"{self.label}\t{' '.join(src)}\t{' '.join(pred)}" for src, pred in self.probes]
        if self.precision is not None:
            out.append(f"{self.label}\tPrec.\t{self.precision:.2f}")
        return out


def mean_precision(translator, pairs, max_len=1000):
    total = 0.0
    for pair in pairs:
        pred = translator.translate_tokens(pair.input, max_len=max_len)
        total += pair_scores(pred, strip_stop(pair.output, translator.tgt_vocab.stop))[0]
    return 100.0 * total / len(pairs)


def lesion_report(translator, spec, test_pairs=(), probe_inputs=(), max_len=1000):
    """Greedy translations of each probe plus mean test precision for a damaged copy.

    ``spec=None`` reports the undamaged model (the "None" row).
    """
    if spec is None:
        damaged, label = translator, "None"
    else:
        damaged = type(translator)(apply_lesion(translator.model, spec), translator.src_vocab,
                                   translator.tgt_vocab, translator.domain)
        label = spec.label
    report = LesionReport(label)
    for tokens in probe_inputs:
        report.probes.append((list(tokens), damaged.translate_tokens(tokens, max_len=max_len)))
    if test_pairs:
        report.precision = mean_precision(damaged, test_pairs, max_len=max_len)
    return report
