"""Small transformer encoder with a masked-POI prediction head.

Trained from scratch on the corpus samples; the output projection is tied
to the token embedding matrix and both training loss and inference softmax
are restricted to POI-kind tokens (the task never predicts users, themes or
cities).

Checkpoint container: magic ``SBTC``, u32 version, u32 header length,
UTF-8 JSON header (config, vocabulary, tensor directory, training
metadata), then raw float32 little-endian tensor data.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import MASK, PAD, TrainingSample, Vocabulary

SBTC_MAGIC = b"SBTC"
SBTC_VERSION = 1


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_dim: int = 128
    max_len: int = 128
    dropout: float = 0.05
    learning_rate: float = 2e-3
    batch_size: int = 32
    seed: int = 42

    def validate(self) -> None:
        for name in ("d_model", "n_layers", "n_heads", "ffn_dim", "max_len", "batch_size"):
            if getattr(self, name) <= 0:
                raise ModelError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_model % self.n_heads != 0:
            raise ModelError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        self.n_heads = cfg.n_heads
        self.head_dim = d // cfg.n_heads
        self.q_proj = nn.Linear(d, d)
        self.k_proj = nn.Linear(d, d)
        self.v_proj = nn.Linear(d, d)
        self.out_proj = nn.Linear(d, d)
        self.norm1 = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d)
        self.ffn = nn.Sequential(
            nn.Linear(d, cfg.ffn_dim), nn.GELU(), nn.Linear(cfg.ffn_dim, d)
        )
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, pad_mask):
        # x: [B, T, d]; pad_mask: [B, T] True where padded
        B, T, d = x.shape
        q = self.q_proj(x).view(B, T, self.n_heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(x).view(B, T, self.n_heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(x).view(B, T, self.n_heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if pad_mask is not None:
            scores = scores.masked_fill(pad_mask[:, None, None, :], float("-inf"))
        attn = self.dropout(torch.softmax(scores, dim=-1))
        ctx = (attn @ v).transpose(1, 2).reshape(B, T, d)
        x = self.norm1(x + self.dropout(self.out_proj(ctx)))
        x = self.norm2(x + self.dropout(self.ffn(x)))
        return x


class MaskedPoiModel(nn.Module):
    """Encoder over token sequences; logits only over POI-kind tokens."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary):
        config.validate()
        super().__init__()
        self.config = config
        self.vocab = vocab
        self.token_emb = nn.Embedding(len(vocab), config.d_model)
        self.pos_emb = nn.Embedding(config.max_len, config.d_model)
        self.layers = nn.ModuleList(EncoderLayer(config) for _ in range(config.n_layers))
        self.dropout = nn.Dropout(config.dropout)
        # indices of POI tokens in the vocabulary; the tied output projection
        # is sliced down to these rows
        self.register_buffer("poi_token_ids", torch.tensor(vocab.poi_ids, dtype=torch.long))

    def forward(self, input_ids, pad_mask=None):
        """POI logits at every position: [B, T, n_poi]."""
        B, T = input_ids.shape
        if T > self.config.max_len:
            raise ModelError(f"sequence length {T} exceeds max_len {self.config.max_len}")
        pos = torch.arange(T, device=input_ids.device)
        x = self.token_emb(input_ids) + self.pos_emb(pos)[None, :, :]
        x = self.dropout(x)
        for layer in self.layers:
            x = layer(x, pad_mask)
        return x @ self.token_emb.weight[self.poi_token_ids].T

    def mask_logits(self, input_ids, pad_mask=None):
        """POI logits at the (single) MASK position of each sequence: [B, n_poi]."""
        if not bool(((input_ids == MASK).sum(dim=1) == 1).all()):
            raise ModelError("each query must contain exactly one [MASK] token")
        mask_hits = (input_ids == MASK).nonzero(as_tuple=False)
        logits = self.forward(input_ids, pad_mask)
        return logits[mask_hits[:, 0], mask_hits[:, 1]]


def init_model(config: ModelConfig, vocab: Vocabulary, seed: int | None = None) -> MaskedPoiModel:
    """Deterministic scaled-uniform initialization."""
    config.validate()
    if seed is None:
        seed = config.seed
    model = MaskedPoiModel(config, vocab)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in sorted(model.named_parameters()):
            if p.dim() >= 2:
                fan_in, fan_out = p.shape[-1], p.shape[-2]
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                p.uniform_(-bound, bound, generator=gen)
            elif "norm" in name and name.endswith("weight"):
                p.fill_(1.0)
            else:
                p.zero_()
    model.eval()
    return model


def _pad_batch(seqs: list[tuple[int, ...]]) -> tuple[torch.Tensor, torch.Tensor]:
    T = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), T), PAD, dtype=torch.long)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.tensor(s, dtype=torch.long)
    return ids, ids == PAD


def batch_loss(model: MaskedPoiModel, batch: list[TrainingSample]) -> torch.Tensor:
    """Mean cross-entropy at the masked position over POI-restricted logits."""
    ids, pad_mask = _pad_batch([s.input_ids for s in batch])
    logits = model.mask_logits(ids, pad_mask)
    poi_index = {tid: i for i, tid in enumerate(model.vocab.poi_ids)}
    try:
        targets = torch.tensor([poi_index[s.label_id] for s in batch], dtype=torch.long)
    except KeyError as exc:
        raise ModelError(f"label token id {exc} is not a POI token")
    return F.cross_entropy(logits, targets)


def train(
    model: MaskedPoiModel,
    samples: list[TrainingSample],
    epochs: int,
    config: ModelConfig | None = None,
    start_epoch: int = 0,
    optimizer: torch.optim.Optimizer | None = None,
) -> tuple[list[float], torch.optim.Optimizer]:
    """Adam training loop; shuffling and dropout are seeded per (seed, epoch)
    with a global epoch index, so incremental runs reproduce monolithic ones.

    Returns (per-epoch mean losses, optimizer) so callers may continue
    training with preserved moment estimates.
    """
    if config is None:
        config = model.config
    if epochs < 1:
        raise ModelError(f"epochs must be >= 1, got {epochs}")
    if not samples:
        raise ModelError("no training samples")
    too_long = [s for s in samples if len(s.input_ids) > config.max_len]
    if too_long:
        raise ModelError(
            f"{len(too_long)} samples exceed max_len {config.max_len}; corpus truncation failed"
        )
    if optimizer is None:
        optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    losses = []
    for epoch in range(start_epoch, start_epoch + epochs):
        torch.manual_seed(config.seed * 1_000_003 + epoch)  # dropout RNG
        gen = torch.Generator().manual_seed(config.seed * 2_000_003 + epoch)
        order = torch.randperm(len(samples), generator=gen).tolist()
        model.train()
        total, count = 0.0, 0
        for lo in range(0, len(order), config.batch_size):
            batch = [samples[i] for i in order[lo : lo + config.batch_size]]
            optimizer.zero_grad()
            loss = batch_loss(model, batch)
            loss.backward()
            optimizer.step()
            total += loss.item() * len(batch)
            count += len(batch)
        losses.append(total / count)
    model.eval()
    return losses, optimizer


def mlm_predict(model: MaskedPoiModel, query: tuple[int, ...]) -> np.ndarray:
    """Probability distribution over POI tokens (order = vocab.poi_ids)."""
    return mlm_predict_batch(model, [query])[0]


def mlm_predict_batch(model: MaskedPoiModel, queries: list[tuple[int, ...]]) -> np.ndarray:
    """Batched MLM inference: [n_queries, n_poi] probabilities."""
    for q in queries:
        if sum(1 for t in q if t == MASK) != 1:
            raise ModelError("query must contain exactly one [MASK] token")
    model.eval()
    with torch.no_grad():
        ids, pad_mask = _pad_batch(queries)
        logits = model.mask_logits(ids, pad_mask)
        return torch.softmax(logits, dim=-1).numpy()


def poi_distribution(model: MaskedPoiModel, query: tuple[int, ...]) -> dict[int, float]:
    """Map actual poi_id -> probability for one query."""
    probs = mlm_predict(model, query)
    vocab = model.vocab
    return {vocab.poi_of_token(tid): float(p) for tid, p in zip(vocab.poi_ids, probs)}


def _vocab_hash(vocab: Vocabulary) -> str:
    return hashlib.sha256("\n".join(vocab.id_to_token).encode("utf-8")).hexdigest()


def save_checkpoint(
    model: MaskedPoiModel,
    path,
    epochs_completed: int = 0,
    final_loss: float | None = None,
) -> None:
    state = dict(model.named_parameters())  # buffers derive from vocab, not stored
    names = sorted(state)
    directory = []
    offset = 0
    blobs = []
    for name in names:
        arr = state[name].detach().cpu().numpy().astype("<f4")
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    header = {
        "config": asdict(model.config),
        "vocab": model.vocab.id_to_token,
        "vocab_hash": _vocab_hash(model.vocab),
        "tensors": directory,
        "metadata": {
            "epochs_completed": epochs_completed,
            "final_loss": final_loss,
            "seed": model.config.seed,
        },
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(SBTC_MAGIC)
        fh.write(struct.pack("<II", SBTC_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, expected_vocab: Vocabulary | None = None) -> tuple[MaskedPoiModel, dict]:
    """Load a checkpoint; returns (model, metadata)."""
    path = Path(path)
    if not path.exists():
        raise ModelError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if data[:4] != SBTC_MAGIC:
        raise ModelError(f"{path}: bad magic {data[:4]!r}, expected {SBTC_MAGIC!r}")
    version, header_len = struct.unpack_from("<II", data, 4)
    if version != SBTC_VERSION:
        raise ModelError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[12 : 12 + header_len].decode("utf-8"))
    vocab = Vocabulary(header["vocab"])
    if header.get("vocab_hash") != _vocab_hash(vocab):
        raise ModelError(f"{path}: embedded vocabulary does not match its hash")
    if expected_vocab is not None and _vocab_hash(expected_vocab) != header["vocab_hash"]:
        raise ModelError(f"{path}: checkpoint vocabulary differs from the provided one")
    config = ModelConfig(**header["config"])
    model = MaskedPoiModel(config, vocab)
    state = {}
    base = 12 + header_len
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = base + entry["offset"]
        end = start + 4 * count
        if end > len(data):
            raise ModelError(f"{path}: truncated tensor {entry['name']}")
        arr = np.frombuffer(data[start:end], dtype="<f4").reshape(shape)
        state[entry["name"]] = torch.tensor(arr.copy())
    expected_shapes = {k: tuple(v.shape) for k, v in model.named_parameters()}
    if set(state) != set(expected_shapes):
        raise ModelError(
            f"{path}: tensor set mismatch: missing {sorted(set(expected_shapes) - set(state))}, "
            f"unexpected {sorted(set(state) - set(expected_shapes))}"
        )
    for name, tensor in state.items():
        if tuple(tensor.shape) != expected_shapes[name]:
            raise ModelError(
                f"{path}: tensor {name} has shape {tuple(tensor.shape)}, "
                f"expected {expected_shapes[name]}"
            )
    model.load_state_dict(state, strict=False)
    model.eval()
    return model, header["metadata"]
