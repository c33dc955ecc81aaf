"""Character-level Transformer encoder-decoder with truth-table fusion.

The encoder reads the obfuscated expression one character per token and the
decoder emits the simplified expression.  Between the two, a projected
truth-table feature vector can be fused into the encoder output in one of
three ways: added elementwise to every position, appended as an extra
token (front, back, or between the real tokens and the padding, optionally
preceded by a learned separator token), or concatenated featurewise and
re-projected.  A fourth mode disables fusion entirely and gives the plain
syntax-only baseline through the same code paths.

Residual blocks are post-norm: LN(x + Sublayer(x)).  Positional encodings
are sinusoidal and apply only to real input tokens, never to the appended
table or separator tokens, which carry no position.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import ParamStore, Tensor
from .errors import CheckpointError, ShapeError
from .semantics import SEMANTICS_CHOICES, feature_length

__all__ = [
    "PAD",
    "BOS",
    "EOS",
    "SEP",
    "Vocab",
    "FusionSpec",
    "ModelConfig",
    "Seq2SeqModel",
    "FUSION_MODES",
    "CONCAT_POSITIONS",
]

PAD, BOS, EOS, SEP = 0, 1, 2, 3

_SPECIALS = ("<pad>", "<bos>", "<eos>", "<sep>")
_ALPHABET = "()&|^~+-*0123456789abcdefghijklmnopqrstuvwxyz"

FUSION_MODES = ("vanilla", "add", "token_concat", "hidden_concat")
CONCAT_POSITIONS = ("back", "front", "back_front_of_pad")


@dataclass(frozen=True)
class Vocab:
    """Character-level vocabulary: four specials, then the expression
    alphabet; ids are dense from 0 and <pad> is id 0."""

    tokens: tuple[str, ...] = _SPECIALS + tuple(_ALPHABET)

    def __post_init__(self):
        if self.tokens[:4] != _SPECIALS:
            raise ValueError("vocabulary must start with the four special tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate vocabulary tokens")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def encode(self, text: str) -> np.ndarray:
        """Character token ids for ``text`` (no specials added)."""
        try:
            ids = [self.tokens.index(ch, 4) for ch in text]
        except ValueError:
            bad = next(ch for ch in text if ch not in self.tokens[4:])
            raise ValueError(f"character {bad!r} is not in the vocabulary") from None
        return np.asarray(ids, dtype=np.int64)

    def decode(self, ids) -> str:
        """Text for ``ids``, stopping at <eos> and skipping other specials."""
        out = []
        for i in np.asarray(ids).reshape(-1):
            if i == EOS:
                break
            if i >= 4:
                out.append(self.tokens[int(i)])
        return "".join(out)


@dataclass(frozen=True)
class FusionSpec:
    """How (and whether) truth-table features reach the decoder.

    ``mode`` is one of ``vanilla`` (no fusion), ``add``, ``token_concat``,
    or ``hidden_concat``.  ``position`` and ``use_sep`` apply only to
    ``token_concat``; ``semantics`` ("bool" / "ext" / "both") applies to
    every fused mode and must be None for vanilla.
    """

    mode: str = "vanilla"
    semantics: str | None = None
    position: str | None = None
    use_sep: bool = False

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode: {self.mode!r}")
        if self.mode == "vanilla":
            if self.semantics is not None or self.position is not None or self.use_sep:
                raise ValueError("vanilla mode takes no semantics/position/sep options")
            return
        if self.semantics not in SEMANTICS_CHOICES:
            raise ValueError(f"semantics must be one of {SEMANTICS_CHOICES}")
        if self.mode == "token_concat":
            if self.position is None:
                object.__setattr__(self, "position", "back")
            if self.position not in CONCAT_POSITIONS:
                raise ValueError(f"position must be one of {CONCAT_POSITIONS}")
        elif self.position is not None or self.use_sep:
            raise ValueError("position/sep options apply only to token_concat")

    @property
    def fused(self) -> bool:
        return self.mode != "vanilla"

    @property
    def feature_len(self) -> int:
        return feature_length(self.semantics) if self.fused else 0


@dataclass(frozen=True)
class ModelConfig:
    """Transformer hyperparameters; the defaults are the desk-scale model
    (CPU-trainable in minutes)."""

    d_model: int = 64
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    ffn_dim: int = 256
    max_len: int = 128
    vocab_size: int = len(_SPECIALS) + len(_ALPHABET)
    dropout: float = 0.0
    feature_len: int = 0
    d_prime: int = 0  # hidden_concat projection width; 0 means d_model

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        for name in ("d_model", "n_heads", "n_encoder_layers", "n_decoder_layers",
                     "ffn_dim", "max_len", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


def _sinusoid_table(max_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    idx = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (idx // 2) / d_model)
    table = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return table


class Seq2SeqModel:
    """Encoder-decoder over character tokens with optional feature fusion.

    All parameters live in ``self.params`` (a :class:`ParamStore`), so the
    generic optimizer and checkpoint code applies unchanged.  Construction
    is deterministic given ``seed``.
    """

    def __init__(
        self,
        config: ModelConfig | None = None,
        spec: FusionSpec | None = None,
        vocab: Vocab | None = None,
        seed: int = 0,
    ):
        self.config = config or ModelConfig()
        self.spec = spec or FusionSpec()
        self.vocab = vocab or Vocab()
        if self.config.vocab_size != self.vocab.size:
            raise ValueError(
                f"config vocab_size {self.config.vocab_size} != vocabulary size {self.vocab.size}"
            )
        if self.spec.fused and self.config.feature_len != self.spec.feature_len:
            raise ValueError(
                f"config feature_len {self.config.feature_len} does not match "
                f"semantics {self.spec.semantics!r} (needs {self.spec.feature_len})"
            )
        self.training = False
        self._dropout_rng = np.random.default_rng(seed + 1)
        self.params = ParamStore()
        self._posenc = _sinusoid_table(self.config.max_len, self.config.d_model)
        self._init_params(np.random.default_rng(seed))

    # -- construction -------------------------------------------------

    def _init_params(self, rng) -> None:
        cfg = self.config
        d, f, v = cfg.d_model, cfg.ffn_dim, cfg.vocab_size

        def xavier(fan_in, fan_out):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, size=(fan_in, fan_out))

        def linear(name, fan_in, fan_out):
            self.params.add(f"{name}.w", xavier(fan_in, fan_out))
            self.params.add(f"{name}.b", np.zeros(fan_out))

        def norm(name):
            self.params.add(f"{name}.g", np.ones(d))
            self.params.add(f"{name}.b", np.zeros(d))

        def attention(name):
            # bias-free projections: a key bias shifts every score in a
            # softmax row equally, so it could never receive gradient
            for part in ("q", "k", "v", "o"):
                self.params.add(f"{name}.{part}.w", xavier(d, d))

        self.params.add("embed", rng.normal(0.0, d**-0.5, size=(v, d)))
        linear("out", d, v)
        for i in range(cfg.n_encoder_layers):
            attention(f"enc{i}.attn")
            norm(f"enc{i}.ln1")
            linear(f"enc{i}.ffn1", d, f)
            linear(f"enc{i}.ffn2", f, d)
            norm(f"enc{i}.ln2")
        for i in range(cfg.n_decoder_layers):
            attention(f"dec{i}.self")
            norm(f"dec{i}.ln1")
            attention(f"dec{i}.cross")
            norm(f"dec{i}.ln2")
            linear(f"dec{i}.ffn1", d, f)
            linear(f"dec{i}.ffn2", f, d)
            norm(f"dec{i}.ln3")
        if self.spec.fused:
            d_out = d if self.spec.mode != "hidden_concat" else (cfg.d_prime or d)
            linear("fuse.proj", cfg.feature_len, d_out)
            if self.spec.mode == "hidden_concat":
                linear("fuse.re", d + d_out, d)

    def n_values(self) -> int:
        return self.params.n_values()

    # -- building blocks ----------------------------------------------

    def _linear(self, x: Tensor, name: str) -> Tensor:
        return ag.add(ag.matmul(x, self.params[f"{name}.w"]), self.params[f"{name}.b"])

    def _norm(self, x: Tensor, name: str) -> Tensor:
        return ag.layer_norm(x, self.params[f"{name}.g"], self.params[f"{name}.b"])

    def _drop(self, x: Tensor) -> Tensor:
        if self.training and self.config.dropout > 0.0:
            return ag.dropout(x, self.config.dropout, self._dropout_rng)
        return x

    def _heads(self, x: Tensor, length: int) -> Tensor:
        # [B, S, D] -> [B, h, S, dk]
        b = x.shape[0]
        h = self.config.n_heads
        dk = self.config.d_model // h
        return ag.transpose(ag.reshape(x, (b, length, h, dk)), (0, 2, 1, 3))

    def _attention(self, q_in, kv_in, name, key_mask=None, causal=False) -> Tensor:
        """Multi-head attention; ``key_mask`` is [B, Sk] with True at
        positions to hide, ``causal`` hides keys after the query index."""
        b, sq, d = q_in.shape
        sk = kv_in.shape[1]
        q = self._heads(ag.matmul(q_in, self.params[f"{name}.q.w"]), sq)
        k = self._heads(ag.matmul(kv_in, self.params[f"{name}.k.w"]), sk)
        v = self._heads(ag.matmul(kv_in, self.params[f"{name}.v.w"]), sk)
        scores = ag.scale(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))),
                          1.0 / math.sqrt(d // self.config.n_heads))
        mask = None
        if key_mask is not None:
            mask = np.asarray(key_mask, dtype=bool)[:, None, None, :]
        if causal:
            tri = np.triu(np.ones((sq, sk), dtype=bool), k=1)[None, None, :, :]
            mask = tri if mask is None else (mask | tri)
        if mask is not None:
            scores = ag.masked_fill(scores, mask, -1e9)
        weights = ag.softmax(scores)
        ctx = ag.matmul(weights, v)  # [B, h, Sq, dk]
        merged = ag.reshape(ag.transpose(ctx, (0, 2, 1, 3)), (b, sq, d))
        return ag.matmul(merged, self.params[f"{name}.o.w"])

    def _ffn(self, x: Tensor, prefix: str) -> Tensor:
        return self._linear(ag.relu(self._linear(x, f"{prefix}.ffn1")), f"{prefix}.ffn2")

    def _embed(self, ids: np.ndarray) -> Tensor:
        cfg = self.config
        length = ids.shape[1]
        if length > cfg.max_len:
            raise ShapeError(f"sequence length {length} exceeds max_len {cfg.max_len}")
        x = ag.scale(ag.embedding(self.params["embed"], ids), math.sqrt(cfg.d_model))
        return ag.add(x, Tensor(self._posenc[:length]))

    # -- pipeline stages ----------------------------------------------

    def encode(self, src_ids: np.ndarray, src_mask: np.ndarray | None = None):
        """Encoder stack over [B, S] token ids; returns (H, pad mask)."""
        src_ids = np.asarray(src_ids, dtype=np.int64)
        if src_mask is None:
            src_mask = src_ids == PAD
        x = self._drop(self._embed(src_ids))
        for i in range(self.config.n_encoder_layers):
            attn = self._attention(x, x, f"enc{i}.attn", key_mask=src_mask)
            x = self._norm(ag.add(x, self._drop(attn)), f"enc{i}.ln1")
            x = self._norm(ag.add(x, self._drop(self._ffn(x, f"enc{i}"))), f"enc{i}.ln2")
        return x, src_mask

    def fuse(self, h: Tensor, feats: np.ndarray | None, mask: np.ndarray):
        """Inject the feature vector per ``self.spec``; returns the decoder
        memory and its key mask."""
        spec = self.spec
        if not spec.fused:
            return h, mask
        feats = np.asarray(feats, dtype=np.float64)
        b, s, d = h.shape
        if feats.shape != (b, self.config.feature_len):
            raise ShapeError(
                f"fuse: features {feats.shape} do not match [{b}, {self.config.feature_len}]"
            )
        proj = self._linear(Tensor(feats), "fuse.proj")  # [B, d_out]
        if spec.mode == "add":
            return ag.add(h, ag.reshape(proj, (b, 1, d))), mask

        if spec.mode == "hidden_concat":
            d_out = proj.shape[-1]
            tiled = ag.add(Tensor(np.zeros((b, s, d_out))), ag.reshape(proj, (b, 1, d_out)))
            wide = ag.concat([h, tiled], axis=2)
            return self._linear(wide, "fuse.re"), mask

        # token_concat: lay the extra token(s) out, then position them
        pieces = [ag.reshape(proj, (b, 1, d))]
        if spec.use_sep:
            sep = ag.reshape(ag.embedding(self.params["embed"], np.array([SEP])), (1, 1, d))
            sep = ag.add(Tensor(np.zeros((b, 1, d))), sep)
            pieces.insert(0, sep)  # separator sits between syntax and table
        k = len(pieces)
        real = np.zeros((b, k), dtype=bool)
        if spec.position == "front":
            out = ag.concat(list(reversed(pieces)) + [h], axis=1)
            return out, np.concatenate([real, mask], axis=1)
        out = ag.concat([h] + pieces, axis=1)
        new_mask = np.concatenate([mask, real], axis=1)
        if spec.position == "back":
            return out, new_mask
        # back_front_of_pad: move the appended tokens to just after the
        # last real token of each row (rows are padded at the end)
        n = s + k
        perm = np.zeros((b, n, n))
        moved = np.empty((b, n), dtype=bool)
        n_real = (~np.asarray(mask, dtype=bool)).sum(axis=1)
        for row, nr in enumerate(n_real):
            order = list(range(nr)) + list(range(s, s + k)) + list(range(nr, s))
            perm[row, np.arange(n), order] = 1.0
            moved[row] = new_mask[row, order]
        return ag.matmul(Tensor(perm), out), moved

    def decode(self, trg_ids: np.ndarray, memory: Tensor, mem_mask: np.ndarray) -> Tensor:
        """Decoder stack over a [B, U] target prefix; returns [B, U, V]
        logits (softmax left to the caller)."""
        trg_ids = np.asarray(trg_ids, dtype=np.int64)
        x = self._drop(self._embed(trg_ids))
        for i in range(self.config.n_decoder_layers):
            attn = self._attention(x, x, f"dec{i}.self", causal=True)
            x = self._norm(ag.add(x, self._drop(attn)), f"dec{i}.ln1")
            cross = self._attention(x, memory, f"dec{i}.cross", key_mask=mem_mask)
            x = self._norm(ag.add(x, self._drop(cross)), f"dec{i}.ln2")
            x = self._norm(ag.add(x, self._drop(self._ffn(x, f"dec{i}"))), f"dec{i}.ln3")
        return self._linear(x, "out")

    def forward(self, src_ids, feats, trg_ids) -> Tensor:
        """Teacher-forcing path: encode, fuse, decode in one call."""
        h, mask = self.encode(src_ids)
        memory, mem_mask = self.fuse(h, feats, mask)
        return self.decode(trg_ids, memory, mem_mask)

    def log_probs(self, logits: Tensor) -> np.ndarray:
        """Normalized log-probabilities for given logits (no gradient)."""
        z = logits.data - logits.data.max(axis=-1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def greedy_decode(
        self,
        src_ids: np.ndarray,
        feats: np.ndarray | None = None,
        max_new: int | None = None,
    ) -> list[list[int]]:
        """Argmax decoding from <bos>; stops per row at <eos> or after
        ``max_new`` tokens.  Ties resolve to the lowest token id.  Returns
        content token ids per row (specials stripped)."""
        src_ids = np.asarray(src_ids, dtype=np.int64)
        cap = min(max_new or self.config.max_len - 1, self.config.max_len - 1)
        was_training = self.training
        self.training = False
        try:
            with ag.no_grad():
                h, mask = self.encode(src_ids)
                memory, mem_mask = self.fuse(h, feats, mask)
                b = src_ids.shape[0]
                ys = np.full((b, 1), BOS, dtype=np.int64)
                alive = np.ones(b, dtype=bool)
                for _ in range(cap):
                    logits = self.decode(ys, memory, mem_mask)
                    nxt = np.argmax(logits.data[:, -1, :], axis=-1)
                    nxt = np.where(alive, nxt, PAD)
                    ys = np.concatenate([ys, nxt[:, None]], axis=1)
                    alive &= nxt != EOS
                    if not alive.any():
                        break
        finally:
            self.training = was_training
        out = []
        for row in ys:
            toks = []
            for t in row[1:]:
                if t == EOS:
                    break
                if t >= 4:
                    toks.append(int(t))
            out.append(toks)
        return out

    # -- persistence ---------------------------------------------------

    def save(self, path) -> None:
        """Self-describing checkpoint: hyperparameters and fusion spec in
        the header, parameters in the payload."""
        meta = {
            "config": asdict(self.config),
            "spec": asdict(self.spec),
            "vocab": list(self.vocab.tokens),
        }
        ag.save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path) -> "Seq2SeqModel":
        params, meta = ag.load_checkpoint(path)
        try:
            config = ModelConfig(**meta["config"])
            spec = FusionSpec(**meta["spec"])
            vocab = Vocab(tuple(meta["vocab"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: bad model header ({exc})") from None
        model = cls(config, spec, vocab, seed=0)
        if model.params.names() != params.names():
            raise CheckpointError(f"{path}: parameter names do not match the header config")
        for name, t in model.params.items():
            stored = params[name]
            if stored.data.shape != t.data.shape:
                raise CheckpointError(f"{path}: shape mismatch for {name!r}")
            t.data = stored.data
        return model
