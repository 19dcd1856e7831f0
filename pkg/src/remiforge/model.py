"""Toy autoregressive transformer decoder with bottleneck style adapters.

The decoder is a standard pre-LayerNorm stack with a clipped learned
relative-position bias shared by all layers (one row per head). Style
conditioning enters twice: the composer token leads the input sequence, and
selected layers carry a residual adapter h + Up(GELU(Down([h ; e_c]))) whose
up-projection starts at zero, so a fresh adapter is exactly the identity.
By default adapters sit after each even layer except the last (1-based); an
explicit layer list can override that placement.

Everything runs in float64 so finite-difference gradient checks are sharp.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import (
    AllPadBatch,
    CheckpointError,
    ConfigError,
    ContextOverflow,
    UnknownComposer,
)
from .score import COMPOSERS
from .tokens import PAD_ID, VOCAB, VOCAB_SIZE, composer_token

COMPOSER_NAMES = (None,) + COMPOSERS
_COMPOSER_INDEX = {name: i for i, name in enumerate(COMPOSER_NAMES)}
_COMPOSER_TOKEN_BASE = VOCAB.id_of(composer_token(None))

CHECKPOINT_MAGIC = b"RFCK"
CHECKPOINT_VERSION = 1


def default_adapter_layers(n_layers: int) -> tuple[int, ...]:
    """1-based layer indices that are even and not the last layer."""
    return tuple(range(2, n_layers, 2))


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 4
    hidden: int = 64
    heads: int = 4
    context: int = 256
    vocab_size: int = VOCAB_SIZE
    adapter_bottleneck: int = 16
    rel_pos_window: int = 32
    adapter_layers: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ConfigError(
                f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.context < 4:
            raise ConfigError(f"context must be >= 4, got {self.context}")
        if self.n_layers < 1 or self.rel_pos_window < 1:
            raise ConfigError("n_layers and rel_pos_window must be >= 1")
        if self.adapter_layers is not None:
            layers = tuple(self.adapter_layers)
            if any(not 1 <= i <= self.n_layers for i in layers):
                raise ConfigError(f"adapter layer out of range in {layers}")
            if len(set(layers)) != len(layers):
                raise ConfigError("duplicate adapter layers")
            object.__setattr__(self, "adapter_layers", layers)

    @property
    def composer_dim(self) -> int:
        return max(1, self.hidden // 4)

    @property
    def effective_adapter_layers(self) -> tuple[int, ...]:
        if self.adapter_layers is not None:
            return self.adapter_layers
        return default_adapter_layers(self.n_layers)


def composer_index(composer) -> int:
    """0 for None, 1..4 for the named composers."""
    if isinstance(composer, int):
        if not 0 <= composer < len(COMPOSER_NAMES):
            raise UnknownComposer(f"composer index {composer} outside 0..4")
        return composer
    try:
        return _COMPOSER_INDEX[composer]
    except KeyError:
        raise UnknownComposer(f"unknown composer {composer!r}") from None


class Adapter(nn.Module):
    def __init__(self, hidden: int, bottleneck: int, composer_dim: int):
        super().__init__()
        self.down = nn.Linear(hidden + composer_dim, bottleneck)
        self.up = nn.Linear(bottleneck, hidden)
        nn.init.zeros_(self.up.weight)
        nn.init.zeros_(self.up.bias)

    def forward(self, h, e):
        mixed = torch.cat([h, e.unsqueeze(1).expand(-1, h.shape[1], -1)], dim=-1)
        return h + self.up(F.gelu(self.down(mixed)))


class Block(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.heads = config.heads
        self.head_dim = config.hidden // config.heads
        self.ln1 = nn.LayerNorm(config.hidden)
        self.qkv = nn.Linear(config.hidden, 3 * config.hidden)
        self.proj = nn.Linear(config.hidden, config.hidden)
        self.ln2 = nn.LayerNorm(config.hidden)
        self.ff_in = nn.Linear(config.hidden, 4 * config.hidden)
        self.ff_out = nn.Linear(4 * config.hidden, config.hidden)

    def forward(self, x, bias, mask):
        b, t, h = x.shape
        q, k, v = self.qkv(self.ln1(x)).split(h, dim=-1)
        shape = (b, t, self.heads, self.head_dim)
        q = q.view(shape).transpose(1, 2)
        k = k.view(shape).transpose(1, 2)
        v = v.view(shape).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / self.head_dim ** 0.5
        scores = scores + bias
        scores = scores.masked_fill(mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, t, h)
        x = x + self.proj(out)
        x = x + self.ff_out(F.gelu(self.ff_in(self.ln2(x))))
        return x


class Decoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.tok_emb = nn.Embedding(config.vocab_size, config.hidden)
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.n_layers))
        self.rel_bias = nn.Parameter(
            torch.zeros(config.heads, 2 * config.rel_pos_window + 1))
        self.composer_emb = nn.Embedding(len(COMPOSER_NAMES), config.composer_dim)
        self.adapters = nn.ModuleDict({
            str(i): Adapter(config.hidden, config.adapter_bottleneck,
                            config.composer_dim)
            for i in config.effective_adapter_layers
        })
        self.ln_f = nn.LayerNorm(config.hidden)
        self.head = nn.Linear(config.hidden, config.vocab_size)

    def _bias(self, t: int):
        pos = torch.arange(t)
        rel = (pos[None, :] - pos[:, None]).clamp(
            -self.config.rel_pos_window, self.config.rel_pos_window)
        return self.rel_bias[:, rel + self.config.rel_pos_window]

    def forward(self, ids, composer_ids):
        """Causal logits of shape (batch, length, vocab).

        `ids` is a (batch, length) long tensor; `composer_ids` a (batch,)
        long tensor of composer indices feeding the adapters. Trailing pads
        are masked out of attention keys.
        """
        if ids.dim() == 1:
            ids = ids.unsqueeze(0)
        b, t = ids.shape
        if t > self.config.context:
            raise ContextOverflow(
                f"sequence length {t} exceeds context {self.config.context}")
        if t == 0:
            raise AllPadBatch("empty input sequence")
        # Queries always see position 0 (the non-pad Composer token), so no
        # attention row is ever fully masked.
        causal = torch.triu(torch.ones(t, t, dtype=torch.bool), diagonal=1)
        key_pad = ids == PAD_ID
        mask = causal[None, None, :, :] | key_pad[:, None, None, :]
        bias = self._bias(t)[None]
        e = self.composer_emb(composer_ids)
        x = self.tok_emb(ids)
        for i, block in enumerate(self.blocks, start=1):
            x = block(x, bias, mask)
            key = str(i)
            if key in self.adapters:
                x = self.adapters[key](x, e)
        return self.head(self.ln_f(x))


def init_model(config: ModelConfig, seed: int = 0) -> Decoder:
    """Deterministically initialized float64 decoder."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = Decoder(config)
    return model.double()


def composer_ids_from_tokens(ids: torch.Tensor) -> torch.Tensor:
    """Derive adapter conditioning from the leading Composer tokens."""
    first = ids[:, 0] if ids.dim() == 2 else ids[:1]
    rel = first - _COMPOSER_TOKEN_BASE
    if ((rel < 0) | (rel >= len(COMPOSER_NAMES))).any():
        raise UnknownComposer("sequence does not start with a composer token")
    return rel


def loss(model: Decoder, ids: torch.Tensor, composer_ids=None) -> torch.Tensor:
    """Mean next-token cross-entropy over non-pad target positions."""
    if ids.dim() == 1:
        ids = ids.unsqueeze(0)
    if ids.shape[0] == 0:
        raise AllPadBatch("empty batch")
    if composer_ids is None:
        composer_ids = composer_ids_from_tokens(ids)
    inputs = ids[:, :-1]
    targets = ids[:, 1:]
    target_mask = targets != PAD_ID
    if not bool(target_mask.any()):
        raise AllPadBatch("batch has no non-pad prediction targets")
    logits = model(inputs, composer_ids)
    ce = F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]),
        targets.reshape(-1),
        reduction="none",
    )
    mask = target_mask.reshape(-1).to(ce.dtype)
    return (ce * mask).sum() / mask.sum()


def batch_to_tensor(segments) -> torch.Tensor:
    """Stack Segments into a (batch, length) long tensor, trimmed to the
    longest attention length."""
    longest = max(s.attention_length for s in segments)
    return torch.tensor([list(s.ids[:longest]) for s in segments],
                        dtype=torch.long)


def _config_json(config: ModelConfig) -> bytes:
    d = asdict(config)
    if d["adapter_layers"] is not None:
        d["adapter_layers"] = list(d["adapter_layers"])
    return json.dumps(d, sort_keys=True).encode("utf-8")


def checkpoint_bytes(model: Decoder) -> bytes:
    """Magic, version, JSON config block, then float64 LE parameter data in
    named-parameter order."""
    out = io.BytesIO()
    out.write(CHECKPOINT_MAGIC)
    cfg = _config_json(model.config)
    out.write(struct.pack("<II", CHECKPOINT_VERSION, len(cfg)))
    out.write(cfg)
    for _name, param in model.named_parameters():
        array = param.detach().to(torch.float64).contiguous().numpy()
        out.write(array.astype("<f8", copy=False).tobytes())
    return out.getvalue()


def save_checkpoint(model: Decoder, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(source, expected_config: ModelConfig | None = None) -> Decoder:
    """Rebuild a model from checkpoint bytes or a file path."""
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = Path(source).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, cfg_len = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        raw = json.loads(data[12:12 + cfg_len].decode("utf-8"))
        if raw.get("adapter_layers") is not None:
            raw["adapter_layers"] = tuple(raw["adapter_layers"])
        config = ModelConfig(**raw)
    except (ValueError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"bad config block: {exc}") from None
    if expected_config is not None and config != expected_config:
        raise CheckpointError("checkpoint config does not match the expected config")
    model = init_model(config)
    pos = 12 + cfg_len
    with torch.no_grad():
        for _name, param in model.named_parameters():
            count = param.numel()
            end = pos + 8 * count
            if end > len(data):
                raise CheckpointError("checkpoint parameter data truncated")
            values = np.frombuffer(data[pos:end], dtype="<f8").reshape(param.shape)
            param.copy_(torch.from_numpy(values.copy()))
            pos = end
    if pos != len(data):
        raise CheckpointError("checkpoint has trailing bytes")
    return model


def adapter_parameter_names(model: Decoder) -> set[str]:
    """Names of the adapter-group parameters (adapters + composer table)."""
    return {name for name, _ in model.named_parameters()
            if name.startswith("adapters.") or name.startswith("composer_emb.")}
