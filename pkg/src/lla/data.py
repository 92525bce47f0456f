"""Vocabularies, tokenizers and dataset ingestion.

Datasets are exchanged as UTF-8 tab-separated files, one ``input<TAB>output``
pair per line.  A domain name selects the tokenizer applied to each side:

========  ============  ==========
domain    input mode    output mode
========  ============  ==========
colors    colors        colors
geo       geo_in        geo_out
wsj       wsj           wsj
zh        zh_en_in      zh_out
========  ============  ==========
"""

import hashlib
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import IngestionError, VocabularyError

STOP = "<s>"
UNK = "<unk>"

#: Punctuation stripped (geo_in) or detached (zh_en_in, zh_out).
PUNCTUATION = frozenset(".,?!'\";:" + "。？！，")

DOMAINS = {
    "colors": ("colors", "colors"),
    "geo": ("geo_in", "geo_out"),
    "wsj": ("wsj", "wsj"),
    "zh": ("zh_en_in", "zh_out"),
}
MODES = ("colors", "geo_in", "geo_out", "wsj", "zh_en_in", "zh_out")

_PUNCT_CLASS = "[" + re.escape("".join(sorted(PUNCTUATION))) + "]"
_GEO_OUT_RE = re.compile(r"[()]|[A-D]|[^\s()A-D]+")
_ZH_EN_RE = re.compile(_PUNCT_CLASS + r"|[^\s" + re.escape("".join(sorted(PUNCTUATION))) + r"]+")
_CJK = (r"⺀-⿟぀-ヿ㐀-䶿一-鿿"
        r"豈-﫿\U00020000-\U0002fa1f")
_ZH_OUT_RE = re.compile(
    f"[{_CJK}]|{_PUNCT_CLASS}|[^\\s{_CJK}{re.escape(''.join(sorted(PUNCTUATION)))}]+")


def tokenize(text, mode):
    """Split ``text`` into tokens according to ``mode``.

    Returns a possibly empty list; callers that need a non-empty result
    (ingestion) raise there, where the line number is known.
    """
    if mode in ("colors", "wsj"):
        return [t for t in text.split(" ") if t]
    if mode == "geo_in":
        table = str.maketrans("", "", "".join(PUNCTUATION))
        return [t for t in (w.translate(table) for w in text.split()) if t]
    if mode == "geo_out":
        return _GEO_OUT_RE.findall(text.replace(",", ""))
    if mode == "zh_en_in":
        return _ZH_EN_RE.findall(text)
    if mode == "zh_out":
        return _ZH_OUT_RE.findall(text)
    raise ValueError(f"unknown tokenization mode {mode!r}; expected one of {MODES}")


# ---------------------------------------------------------------------------
# WSJ bracket rewriting

def _parse_brackets(text):
    tokens = re.findall(r"\(|\)|[^\s()]+", text)
    if not tokens:
        raise IngestionError("empty parse")
    pos = 0

    def node():
        nonlocal pos
        if tokens[pos] != "(":
            word = tokens[pos]
            pos += 1
            return word
        pos += 1
        label = ""
        if pos < len(tokens) and tokens[pos] not in ("(", ")"):
            label = tokens[pos]
            pos += 1
        children = []
        while True:
            if pos >= len(tokens):
                raise IngestionError("unbalanced parse: missing ')'")
            if tokens[pos] == ")":
                pos += 1
                return (label, children)
            children.append(node())

    if tokens[0] != "(":
        raise IngestionError("parse must start with '('")
    tree = node()
    if pos != len(tokens):
        raise IngestionError("unbalanced parse: trailing tokens after the root")
    return tree


def _prune_empty(tree):
    if isinstance(tree, str):
        return tree
    label, children = tree
    if label == "-NONE-":
        return None
    kept = [c for c in (_prune_empty(c) for c in children) if c is not None]
    return (label, kept) if kept else None


def wsj_paren_transform(parse):
    """Rewrite a bracketed parse so each ``(`` joins its nonterminal and each
    ``)`` closing a preterminal joins its word.

    >>> wsj_paren_transform("(S (NP (PRP he)) (VP (VBZ runs)))")
    '(s (np (prp he) ) (vp (vbz runs) ) )'

    The output is lowercased.  Empty elements (``-NONE-``) are dropped, and an
    unlabeled outer bracket, as in treebank files, is unwrapped.
    """
    tree = _prune_empty(_parse_brackets(parse))
    if tree is None:
        raise IngestionError("parse has no overt material")
    while not isinstance(tree, str) and tree[0] == "" and len(tree[1]) == 1:
        tree = tree[1][0]
    out = []

    def emit(t):
        if isinstance(t, str):
            out.append(t)
            return
        label, children = t
        if len(children) == 1 and isinstance(children[0], str):
            out.append("(" + label)
            out.append(children[0] + ")")
            return
        out.append("(" + label)
        for c in children:
            emit(c)
        out.append(")")

    emit(tree)
    return " ".join(out).lower()


# ---------------------------------------------------------------------------
# vocabulary

class Vocabulary:
    """Dense bijection between tokens and ids ``0..n-1``.

    Special tokens occupy the lowest ids.  ``unk`` is set for input-side
    vocabularies only; ``lookup`` of an unknown token then returns its id
    instead of raising.
    """

    def __init__(self, tokens, stop=STOP, unk=None):
        self.stop = stop
        self.unk = unk
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise VocabularyError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return (isinstance(other, Vocabulary) and self.tokens == other.tokens
                and self.stop == other.stop and self.unk == other.unk)

    @property
    def specials(self):
        return [t for t in self.tokens if t in (self.stop, self.unk)]

    @property
    def n_words(self):
        """Size excluding the stop and unknown tokens."""
        return len(self.tokens) - len(self.specials)

    @property
    def stop_id(self):
        return self.index[self.stop]

    @property
    def unk_id(self):
        return self.index[self.unk] if self.unk is not None else None

    def lookup(self, token):
        if token in self.index:
            return self.index[token]
        if self.unk is not None:
            return self.index[self.unk]
        raise VocabularyError(f"unknown token {token!r}")

    def encode(self, tokens):
        return [self.lookup(t) for t in tokens]

    def decode(self, ids):
        try:
            return [self.tokens[i] for i in ids]
        except IndexError:
            raise VocabularyError(f"id out of range for vocabulary of size {len(self)}") from None

    def digest(self):
        """SHA-256 over the header and token list; stored in checkpoints."""
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    def dumps(self):
        header = f"#stop\t{self.stop}"
        if self.unk is not None:
            header += f"\tunk\t{self.unk}"
        return "\n".join([header] + self.tokens) + "\n"

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text):
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines or not lines[0].startswith("#stop\t"):
            raise VocabularyError("vocabulary file lacks a '#stop' header")
        fields = lines[0].split("\t")
        meta = dict(zip(fields[0::2], fields[1::2]))
        return cls(lines[1:], stop=meta["#stop"], unk=meta.get("unk"))

    @classmethod
    def load(cls, path):
        return cls.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# datasets

@dataclass
class ParallelPair:
    """Tokenized pair; ``output`` ends with the stop token after ingestion."""

    input: list
    output: list


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    domain: str = "colors"
    paths: dict = field(default_factory=dict)

    def all_pairs(self):
        return self.train + self.validation + self.test


def build_vocab(pairs, side):
    """Collect every distinct token on one side of ``pairs``.

    Tokens are ordered by first appearance after the specials: ``<unk>``
    (input side) or ``<s>`` (output side) takes id 0.
    """
    if not pairs:
        raise ValueError("build_vocab needs at least one pair")
    if side not in ("input", "output"):
        raise ValueError(f"side must be 'input' or 'output', not {side!r}")
    seen = {}
    for pair in pairs:
        for tok in getattr(pair, side):
            if tok != STOP:
                seen.setdefault(tok, None)
    if side == "input":
        return Vocabulary([UNK] + list(seen), unk=UNK)
    return Vocabulary([STOP] + list(seen))


def parse_line(line, domain, lineno=None, path=None, max_input_len=None):
    """Tokenize one ``input<TAB>output`` line; ``None`` when filtered out."""
    in_mode, out_mode = DOMAINS[domain]
    parts = line.split("\t")
    if len(parts) != 2:
        raise IngestionError(f"expected exactly one tab, found {len(parts) - 1}", lineno, path)
    raw_in, raw_out = parts
    if domain == "wsj":
        raw_in = raw_in.lower()
        try:
            raw_out = wsj_paren_transform(raw_out)
        except IngestionError as exc:
            raise IngestionError(str(exc), lineno, path) from None
    src = tokenize(raw_in, in_mode)
    tgt = tokenize(raw_out, out_mode)
    if not src:
        raise IngestionError("input side tokenizes to nothing", lineno, path)
    if not tgt:
        raise IngestionError("output side tokenizes to nothing", lineno, path)
    if max_input_len is not None and len(src) > max_input_len:
        return None
    return ParallelPair(src, tgt + [STOP])


def load_tsv(path, domain, max_input_len=None):
    """Read a dataset file into a list of :class:`ParallelPair`.

    Blank lines are skipped.  ``max_input_len`` drops longer inputs (the
    WSJ10 rule is ``max_input_len=10``).
    """
    if domain not in DOMAINS:
        raise ValueError(f"unknown domain {domain!r}; expected one of {sorted(DOMAINS)}")
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        pair = parse_line(line, domain, lineno, path, max_input_len)
        if pair is not None:
            pairs.append(pair)
    if not pairs:
        raise IngestionError("no pairs found", path=path)
    return pairs


def load_split(directory, domain, max_input_len=None):
    """Load ``train.tsv``, ``valid.tsv`` and ``test.tsv`` from a directory.

    Without ``valid.tsv`` the train set doubles as the validation set (the
    colors diagnostic is too small to hold one out).
    """
    directory = Path(directory)
    train_path = directory / "train.tsv"
    valid_path = directory / "valid.tsv"
    test_path = directory / "test.tsv"
    train = load_tsv(train_path, domain, max_input_len)
    valid = load_tsv(valid_path, domain, max_input_len) if valid_path.exists() else list(train)
    test = load_tsv(test_path, domain, max_input_len) if test_path.exists() else []
    paths = {"train": train_path, "validation": valid_path if valid_path.exists() else train_path}
    if test_path.exists():
        paths["test"] = test_path
    return DatasetSplit(train, valid, test, domain, paths)


def colors_corpus_dir():
    """Directory of the bundled colors diagnostic (14 train / 10 test pairs)."""
    return Path(str(resources.files("lla") / "corpora" / "colors"))


def colors_corpus():
    return load_split(colors_corpus_dir(), "colors")
