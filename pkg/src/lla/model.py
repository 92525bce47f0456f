"""LSTM encoder-decoder with the Lexicon and Lexicon-Adversary units.

Forward pass for an input of ``m`` tokens::

    h_e, c_e = Encoder(E[x_1..x_m])
    l        = sigmoid(max_i w_{x_i})                       # lexicon gate
    l_a      = sigmoid(W_a2 relu(W_a1 revgrad([h_e; c_e]))) # adversary
    o_t      = softmax(W h_t)       where h_t = Decoder^t(h_e, c_e)
    o'_t     = l * o_t

The decoder is fed a zero vector at every step, so its input projection
vanishes and only recurrent weights and bias are kept.
"""

import copy
import enum
import hashlib
import json
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, PreconditionError, VocabularyError


class ModelVariant(enum.Enum):
    LLA_LSTM = "lla"
    LLA_NO_ADVERSARY = "lla-noadv"
    PLAIN_LSTM = "plain"

    @property
    def has_lexicon(self):
        return self is not ModelVariant.PLAIN_LSTM

    @property
    def has_adversary(self):
        return self is ModelVariant.LLA_LSTM


@dataclass
class ModelConfig:
    n_in: int
    n_out: int
    hidden: int = 300
    embed: int = 300
    adv_hidden: int = 1000
    variant: str = "lla"
    stop_id: int = 0

    def __post_init__(self):
        ModelVariant(self.variant)
        for name in ("n_in", "n_out", "hidden", "embed", "adv_hidden"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if not 0 <= self.stop_id < self.n_out:
            raise ConfigurationError("stop_id outside the output vocabulary")


@dataclass
class EncoderState:
    h: Tensor
    c: Tensor


@dataclass
class DecoderOutput:
    h: Tensor
    o: Tensor        # softmax distribution
    gated: Tensor    # l * o (o itself for the plain variant)


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def lstm_cell(x_proj, h, c, w_hh, bias):
    """One LSTM step. ``x_proj`` is ``W_ih x`` or ``None`` for a zero input.

    Gate rows are laid out as [input, forget, output, cell].
    """
    gates = ad.matmul(w_hh, h) + bias
    if x_proj is not None:
        gates = gates + x_proj
    n = h.shape[0]
    ifo = ad.sigmoid(ad.slice_(gates, 0, 3 * n))
    g = ad.tanh(ad.slice_(gates, 3 * n, 4 * n))
    i, f, o = ad.split(ifo, 3)
    c_new = f * c + i * g
    h_new = o * ad.tanh(c_new)
    return h_new, c_new


class EncoderDecoder:
    """Plain LSTM encoder-decoder; the baseline with no LLA structures."""

    def __init__(self, config, rng):
        self.config = config
        self.params = OrderedDict()
        self._init_base(rng)

    def _add(self, name, data, sparse_grad=False):
        self.params[name] = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True,
                                   name=name, sparse_grad=sparse_grad)

    def _init_base(self, rng):
        cfg = self.config
        H, D = cfg.hidden, cfg.embed
        self._add("encoder.embedding", rng.standard_normal((cfg.n_in, D)))
        self._add("encoder.w_ih", _uniform(rng, (4 * H, D), D))
        self._add("encoder.w_hh", _uniform(rng, (4 * H, H), H))
        self._add("encoder.bias", _uniform(rng, (4 * H,), H))
        self._add("decoder.w_hh", _uniform(rng, (4 * H, H), H))
        self._add("decoder.bias", _uniform(rng, (4 * H,), H))
        self._add("output.weight", _uniform(rng, (cfg.n_out, H), H))
        self._add("output.bias", _uniform(rng, (cfg.n_out,), H))

    def __getitem__(self, name):
        return self.params[name]

    # -- forward pieces ----------------------------------------------------

    def _check_ids(self, tokens, limit, side):
        if len(tokens) == 0:
            raise PreconditionError(f"{side} sequence is empty")
        for t in tokens:
            if not 0 <= t < limit:
                raise VocabularyError(f"{side} id {t} outside vocabulary of size {limit}")

    def encode(self, tokens):
        """Run the encoder over input ids and return the final state."""
        self._check_ids(tokens, self.config.n_in, "input")
        p = self.params
        H = self.config.hidden
        dtype = p["encoder.w_hh"].data.dtype
        h = Tensor(np.zeros(H, dtype=dtype))
        c = Tensor(np.zeros(H, dtype=dtype))
        for t in tokens:
            x = ad.row(p["encoder.embedding"], t)
            h, c = lstm_cell(ad.matmul(p["encoder.w_ih"], x), h, c,
                             p["encoder.w_hh"], p["encoder.bias"])
        return EncoderState(h, c)

    def decoder_step(self, h, c, lex=None):
        p = self.params
        h, c = lstm_cell(None, h, c, p["decoder.w_hh"], p["decoder.bias"])
        o = ad.softmax(ad.matmul(p["output.weight"], h) + p["output.bias"])
        gated = o if lex is None else ad.mul(lex, o)
        return h, c, DecoderOutput(h, o, gated)

    def decode(self, state, lex=None, steps=1):
        if steps < 1:
            raise PreconditionError("decode needs steps >= 1")
        h, c = state.h, state.c
        outputs = []
        for _ in range(steps):
            h, c, out = self.decoder_step(h, c, lex)
            outputs.append(out)
        return outputs

    def lexicon_gate(self, tokens):
        return None

    def greedy_translate(self, tokens, max_len=1000):
        """Greedy decoding: argmax of the gated output until stop or ``max_len``.

        The stop token is not included in the result.
        """
        if max_len < 1:
            raise PreconditionError("max_len must be >= 1")
        stop = self.config.stop_id
        with ad.no_grad():
            state = self.encode(tokens)
            lex = self.lexicon_gate(tokens)
            h, c = state.h, state.c
            result = []
            for _ in range(max_len):
                h, c, out = self.decoder_step(h, c, lex)
                k = int(np.argmax(out.gated.data))
                if k == stop:
                    break
                result.append(k)
        return result

    def sequence_loss(self, src, tgt, adversary_lambda=0.0):
        """Summed NLL over gold steps of ``log(o'_t + eps)``.

        ``tgt`` includes the final stop id.  The plain model ignores
        ``adversary_lambda``.
        """
        self._check_ids(tgt, self.config.n_out, "output")
        state = self.encode(src)
        outs = self.decode(state, None, steps=len(tgt))
        return ad.add_n([ad.nll_loss(ad.log(o.gated, eps=ad.EPS), k) for o, k in zip(outs, tgt)])

    # -- parameter groups ---------------------------------------------------

    def groups(self):
        return {"lstms": [n for n in self.params if n.split(".")[0] in ("encoder", "decoder", "output")]}

    def main_parameters(self):
        return [p for n, p in self.params.items() if not n.startswith("lexicon.")]

    def reinitialize(self, group, rng):
        """Draw fresh values for every parameter of ``group`` ('lstms')."""
        if group != "lstms":
            raise ConfigurationError(f"model has no parameter group {group!r}")
        fresh = EncoderDecoder.__new__(EncoderDecoder)
        fresh.config = self.config
        fresh.params = OrderedDict()
        fresh._init_base(rng)
        for name, t in fresh.params.items():
            self.params[name].data = t.data

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def copy(self):
        return copy.deepcopy(self)

    def state_dict(self):
        return OrderedDict((n, p.data.copy()) for n, p in self.params.items())

    def load_state_dict(self, state):
        for n, arr in state.items():
            if self.params[n].shape != arr.shape:
                raise ConfigurationError(f"shape mismatch for {n}: {self.params[n].shape} vs {arr.shape}")
            self.params[n].data = np.array(arr, dtype=self.params[n].data.dtype, copy=True)


class Seq2SeqModel(EncoderDecoder):
    """Encoder-decoder with optional Lexicon Unit and Lexicon-Adversary Unit.

    Base parameters are drawn first so that, for one seed, every variant
    shares identical encoder/decoder initial weights.
    """

    def __init__(self, config, rng=None, seed=None):
        if rng is None:
            rng = np.random.default_rng(seed)
        self.variant = ModelVariant(config.variant)
        super().__init__(config, rng)
        cfg = config
        if self.variant.has_lexicon:
            self._add("lexicon.weight", np.zeros((cfg.n_in, cfg.n_out)), sparse_grad=True)
        if self.variant.has_adversary:
            self._init_adversary(rng)

    def _init_adversary(self, rng):
        cfg = self.config
        H2, A = 2 * cfg.hidden, cfg.adv_hidden
        self._add("adversary.w1", _uniform(rng, (A, H2), H2))
        self._add("adversary.b1", _uniform(rng, (A,), H2))
        self._add("adversary.w2", _uniform(rng, (cfg.n_out, A), A))
        self._add("adversary.b2", _uniform(rng, (cfg.n_out,), A))

    # -- lexicon unit --------------------------------------------------------

    def lexicon_forward(self, tokens):
        """``sigmoid`` of the per-index max over the input tokens' lexicon rows."""
        if not self.variant.has_lexicon:
            raise ConfigurationError("the plain variant has no lexicon unit")
        self._check_ids(tokens, self.config.n_in, "input")
        table = self.params["lexicon.weight"]
        return ad.sigmoid(ad.maxpool_vectors([ad.row(table, t) for t in tokens]))

    def lexicon_target(self, output_ids):
        """Indicator over the output vocabulary of tokens present in ``output_ids``."""
        target = np.zeros(self.config.n_out)
        for k in output_ids:
            if not 0 <= k < self.config.n_out:
                raise VocabularyError(f"output id {k} outside vocabulary of size {self.config.n_out}")
            target[k] = 1.0
        return target

    def lexicon_gate(self, tokens):
        if not self.variant.has_lexicon:
            return None
        with ad.no_grad():
            return self.lexicon_forward(tokens)

    # -- adversary -----------------------------------------------------------

    def adversary_forward(self, state, lam):
        if not self.variant.has_adversary:
            raise ConfigurationError(f"variant {self.variant.value} has no adversary")
        p = self.params
        joint = ad.concat([state.h, state.c])
        if joint.shape[0] != p["adversary.w1"].shape[1]:
            raise ConfigurationError(
                f"encoder state of size {joint.shape[0]} does not match adversary input {p['adversary.w1'].shape[1]}")
        z = ad.grad_reverse(joint, lam)
        hidden = ad.relu(ad.matmul(p["adversary.w1"], z) + p["adversary.b1"])
        return ad.sigmoid(ad.matmul(p["adversary.w2"], hidden) + p["adversary.b2"])

    # -- training loss -------------------------------------------------------

    def sequence_loss(self, src, tgt, adversary_lambda=0.0):
        """Summed NLL over gold steps plus, when enabled, the adversary BCE.

        The lexicon gate is a constant here: lexicon rows are trained only by
        their own BCE stage.  A non-positive ``adversary_lambda`` drops the
        adversary term.
        """
        if self.variant is ModelVariant.PLAIN_LSTM:
            return super().sequence_loss(src, tgt)
        self._check_ids(tgt, self.config.n_out, "output")
        state = self.encode(src)
        lex = self.lexicon_gate(src)
        outs = self.decode(state, lex, steps=len(tgt))
        terms = [ad.nll_loss(ad.log(o.gated, eps=ad.EPS), k) for o, k in zip(outs, tgt)]
        if self.variant.has_adversary and adversary_lambda > 0:
            terms.append(ad.bce_loss(self.adversary_forward(state, adversary_lambda), lex))
        return ad.add_n(terms)

    # -- parameter groups ----------------------------------------------------

    def groups(self):
        out = super().groups()
        if self.variant.has_lexicon:
            out["lexicon"] = ["lexicon.weight"]
        if self.variant.has_adversary:
            out["adversary"] = [n for n in self.params if n.startswith("adversary.")]
        return out

    def reinitialize(self, group, rng):
        if group == "lstms":
            return super().reinitialize(group, rng)
        if group == "lexicon" and self.variant.has_lexicon:
            t = self.params["lexicon.weight"]
            t.data = rng.uniform(-1.0, 1.0, size=t.shape)
            return
        if group == "adversary" and self.variant.has_adversary:
            fresh = Seq2SeqModel.__new__(Seq2SeqModel)
            fresh.config = self.config
            fresh.params = OrderedDict()
            fresh._init_adversary(rng)
            for name, t in fresh.params.items():
                self.params[name].data = t.data
            return
        raise ConfigurationError(f"variant {self.variant.value} has no parameter group {group!r}")


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"LLA1"
FORMAT_VERSION = 1


def checksum(model):
    """SHA-256 over parameter names, shapes and float64 bytes."""
    h = hashlib.sha256()
    for name, p in model.params.items():
        h.update(name.encode())
        h.update(repr(p.shape).encode())
        h.update(np.ascontiguousarray(p.data, dtype=np.float64).tobytes())
    return h.hexdigest()


def save_checkpoint(model, path, vocab_hashes=None, extra=None):
    """Write ``MAGIC``, a length-prefixed JSON manifest, then float32 LE values.

    The manifest lists each tensor's name and shape in storage order along
    with the model config, variant tag and vocabulary digests.
    """
    manifest = {
        "version": FORMAT_VERSION,
        "variant": model.variant.value,
        "config": asdict(model.config),
        "vocab": dict(vocab_hashes or {}),
        "extra": dict(extra or {}),
        "tensors": [{"name": n, "shape": list(p.shape)} for n, p in model.params.items()],
    }
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for p in model.params.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def read_checkpoint(path):
    """Return ``(manifest, {name: float64 array})``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ConfigurationError(f"{path}: not an LLA checkpoint (bad magic)")
    (n,) = struct.unpack("<I", blob[4:8])
    manifest = json.loads(blob[8:8 + n].decode("utf-8"))
    if manifest.get("version") != FORMAT_VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint version {manifest.get('version')}")
    offset = 8 + n
    arrays = OrderedDict()
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        raw = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        arrays[entry["name"]] = raw.astype(np.float64).reshape(entry["shape"])
        offset += 4 * count
    if offset != len(blob):
        raise ConfigurationError(f"{path}: trailing or missing tensor data")
    return manifest, arrays


def load_checkpoint(path):
    """Rebuild a :class:`Seq2SeqModel` from a checkpoint; returns ``(model, manifest)``."""
    manifest, arrays = read_checkpoint(path)
    config = ModelConfig(**manifest["config"])
    model = Seq2SeqModel(config, seed=0)
    if list(arrays) != list(model.params):
        raise ConfigurationError(f"{path}: parameter set does not match variant {config.variant}")
    model.load_state_dict(arrays)
    return model, manifest
