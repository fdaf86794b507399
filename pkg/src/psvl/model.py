"""Cross-modal attention localization model.

Pipeline: encode video frames and query tokens, fuse them with three attention
stages (words-aware video attention, video-aware words attention, multi-modal
cross attention), globally mix with a non-local residual block, pool with
temporal attention, and regress normalized (start, end) boundaries. The loss is
Huber boundary regression plus an attention guidance term pushing temporal
attention mass inside the ground-truth segment.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import TemporalSegment

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Checkpoint file does not match the expected shape table or format."""


@dataclass(frozen=True)
class ModelConfig:
    d: int = 512
    video_len: int = 128
    max_tokens: int = 8
    word_dim: int = 300
    feature_dim: int = 1024
    lambda_guide: float = 1.0
    huber_delta: float = 1.0
    dropout: float = 0.1
    seed: int = 0
    identity_word_encoder: bool = False

    def __post_init__(self):
        if min(self.d, self.video_len, self.max_tokens, self.word_dim, self.feature_dim) < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.lambda_guide < 0:
            raise ValueError("lambda_guide must be >= 0")


@dataclass(frozen=True)
class ForwardOutput:
    """Single-sample localization result."""

    pred: TemporalSegment
    temporal_attention: np.ndarray
    word_attention: np.ndarray


@dataclass
class ModelOutput:
    """Batched forward results (tensors)."""

    pred: torch.Tensor  # (B, 2) with pred[:, 0] <= pred[:, 1]
    temporal_attention: torch.Tensor  # (B, video_len), rows sum to 1
    word_attention: torch.Tensor  # (B, max_tokens), masked entries 0

    def single(self, i: int = 0) -> ForwardOutput:
        start, end = self.pred[i].detach().cpu().numpy().tolist()
        return ForwardOutput(
            pred=TemporalSegment(float(start), float(end)),
            temporal_attention=self.temporal_attention[i].detach().cpu().numpy(),
            word_attention=self.word_attention[i].detach().cpu().numpy(),
        )


def sinusoidal_positions(length: int, dim: int) -> torch.Tensor:
    """Fixed sine/cosine positional table, (length, dim)."""
    position = torch.arange(length, dtype=torch.float32)[:, None]
    half = torch.arange(0, dim, 2, dtype=torch.float32)
    freq = torch.exp(-math.log(10000.0) * half / dim)
    table = torch.zeros(length, dim)
    table[:, 0::2] = torch.sin(position * freq)
    table[:, 1::2] = torch.cos(position * freq)[:, : dim // 2]
    return table


def _masked_attention(q, k, v, mask=None):
    """Scaled dot-product attention; mask (B, Lk) of {0,1} excludes keys."""
    scores = q @ k.transpose(1, 2) / math.sqrt(q.shape[-1])
    if mask is not None:
        scores = scores.masked_fill(mask[:, None, :] == 0, float("-inf"))
    attn = torch.softmax(scores, dim=-1)
    return attn @ v, attn


class LocalizationModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        d = cfg.d

        self.word_proj = nn.Linear(cfg.word_dim, d)
        self.word_rnn = nn.GRU(d, d, batch_first=True, bidirectional=True)
        self.video_proj = nn.Linear(cfg.feature_dim, d)
        self.video_rnn = nn.GRU(d, d, batch_first=True, bidirectional=True)
        self.register_buffer("positions", sinusoidal_positions(cfg.video_len, d))

        self.wva_key = nn.Linear(d, d)
        self.wva_val = nn.Linear(d, d)
        self.wva_norm = nn.LayerNorm(d)

        self.vwa_key = nn.Linear(d, d)
        self.vwa_val = nn.Linear(d, d)
        self.vwa_norm = nn.LayerNorm(d)

        self.mca_key = nn.Linear(d, d)
        self.mca_val = nn.Linear(d, d)
        self.mca_norm1 = nn.LayerNorm(d)
        self.mca_ffn = nn.Sequential(nn.Linear(d, 2 * d), nn.Tanh(), nn.Linear(2 * d, d))
        self.mca_norm2 = nn.LayerNorm(d)

        self.nl_theta = nn.Linear(d, d)
        self.nl_phi = nn.Linear(d, d)
        self.nl_g = nn.Linear(d, d)
        self.nl_out = nn.Linear(d, d)
        # Identity start: the non-local block is exactly a no-op at init.
        nn.init.zeros_(self.nl_out.weight)
        nn.init.zeros_(self.nl_out.bias)

        self.temporal_mlp = nn.Sequential(nn.Linear(d, d), nn.Tanh(), nn.Linear(d, 1))
        self.boundary_mlp = nn.Sequential(nn.Linear(d, d), nn.Tanh(), nn.Linear(d, 2))
        self.drop = nn.Dropout(cfg.dropout)

    # -- encoders ----------------------------------------------------------

    def encode_words(self, word_vecs: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """(B, L, word_dim) frozen embeddings -> (B, L, d) contextual features."""
        x = self.word_proj(word_vecs)
        if not self.cfg.identity_word_encoder:
            out, _ = self.word_rnn(x)
            x = out[..., : self.cfg.d] + out[..., self.cfg.d :]
        return self.drop(x)

    def encode_video(self, features: torch.Tensor) -> torch.Tensor:
        """(B, video_len, feature_dim) -> (B, video_len, d) with positions mixed in."""
        if not torch.isfinite(features).all():
            raise ValueError("non-finite video features")
        x = self.video_proj(features) + self.positions[None, :, :]
        out, _ = self.video_rnn(x)
        return self.drop(out[..., : self.cfg.d] + out[..., self.cfg.d :])

    # -- attention stages ----------------------------------------------------

    def wva(self, video, words, mask):
        """Words-aware video attention: every frame reads from the query tokens."""
        ctx, attn = _masked_attention(video, self.wva_key(words), self.wva_val(words), mask)
        return self.wva_norm(video + self.drop(ctx)), attn

    def vwa(self, video, words, mask):
        """Video-aware words attention; also emits per-word relevance weights."""
        ctx, attn = _masked_attention(words, self.vwa_key(video), self.vwa_val(video))
        out = self.vwa_norm(words + self.drop(ctx))
        pooled = video.mean(dim=1)
        scores = (out * pooled[:, None, :]).sum(-1) / math.sqrt(self.cfg.d)
        scores = scores.masked_fill(mask == 0, float("-inf"))
        word_attention = torch.softmax(scores, dim=-1)
        word_attention = word_attention.masked_fill(mask == 0, 0.0)
        return out, attn, word_attention

    def mca(self, video_aware, word_aware, mask):
        """Fuse the two attended streams, then a position-wise feed-forward."""
        ctx, attn = _masked_attention(
            video_aware, self.mca_key(word_aware), self.mca_val(word_aware), mask
        )
        fused = self.mca_norm1(video_aware + self.drop(ctx))
        fused = self.mca_norm2(fused + self.drop(self.mca_ffn(fused)))
        return fused, attn

    def nonlocal_block(self, fused):
        """Residual global self-attention over frames."""
        ctx, attn = _masked_attention(self.nl_theta(fused), self.nl_phi(fused), self.nl_g(fused))
        return fused + self.nl_out(ctx), attn

    # -- heads ---------------------------------------------------------------

    def temporal_attention(self, fused):
        """Softmax frame weights from a two-layer MLP plus the attention pool."""
        scores = self.temporal_mlp(fused).squeeze(-1)
        weights = torch.softmax(scores, dim=-1)
        pooled = (weights[:, :, None] * fused).sum(dim=1)
        return weights, pooled

    def regress_boundaries(self, pooled):
        """(B, d) -> (B, 2) normalized boundaries, ordered by construction."""
        uv = torch.sigmoid(self.boundary_mlp(pooled))
        lo, _ = uv.min(dim=-1)
        hi, _ = uv.max(dim=-1)
        return torch.stack([lo, hi], dim=-1)

    def forward(self, features, word_vecs, word_mask) -> ModelOutput:
        video = self.encode_video(features)
        words = self.encode_words(word_vecs, word_mask)
        video_aware, _ = self.wva(video, words, word_mask)
        word_aware, _, word_attention = self.vwa(video, words, word_mask)
        fused, _ = self.mca(video_aware, word_aware, word_mask)
        fused, _ = self.nonlocal_block(fused)
        weights, pooled = self.temporal_attention(fused)
        pred = self.regress_boundaries(pooled)
        return ModelOutput(pred=pred, temporal_attention=weights, word_attention=word_attention)


# ---------------------------------------------------------------------------
# loss


def gt_frame_mask(gt: torch.Tensor, video_len: int) -> torch.Tensor:
    """Boolean (B, video_len): frame t is inside gt iff start <= t/video_len < end."""
    grid = torch.arange(video_len, dtype=gt.dtype, device=gt.device) / video_len
    return (grid[None, :] >= gt[:, 0:1]) & (grid[None, :] < gt[:, 1:2])


def loss_total(
    output: ModelOutput,
    gt: Union[torch.Tensor, TemporalSegment, Sequence[TemporalSegment]],
    cfg: ModelConfig,
) -> tuple[torch.Tensor, dict]:
    """Huber boundary loss plus attention-guidance loss, averaged over the batch.

    Guidance is -log of the temporal attention mass inside the ground truth;
    zero-length ground-truth segments contribute 0 to it (counted in the
    components dict).
    """
    if isinstance(gt, TemporalSegment):
        gt = [gt]
    if not torch.is_tensor(gt):
        gt = torch.tensor([[s.start, s.end] for s in gt])
    gt = gt.to(output.pred.dtype)

    reg = F.huber_loss(
        output.pred[:, 0], gt[:, 0], delta=cfg.huber_delta, reduction="none"
    ) + F.huber_loss(output.pred[:, 1], gt[:, 1], delta=cfg.huber_delta, reduction="none")

    inside = gt_frame_mask(gt, output.temporal_attention.shape[-1])
    mass = (output.temporal_attention * inside).sum(dim=-1)
    guide = -torch.log(mass + 1e-8)
    zero_length = gt[:, 1] <= gt[:, 0]
    guide = torch.where(zero_length, torch.zeros_like(guide), guide)

    total = (reg + cfg.lambda_guide * guide).mean()
    components = {
        "loss_reg": reg.mean(),
        "loss_guide": guide.mean(),
        "zero_length_gt": int(zero_length.sum()),
    }
    return total, components


# ---------------------------------------------------------------------------
# frozen word embeddings


class EmbeddingTable:
    """Frozen word-vector lookup; unknown words map to the zero vector."""

    def __init__(self, table: Mapping[str, np.ndarray], dim: int):
        self.dim = dim
        self._table = {}
        for word, vec in table.items():
            arr = np.asarray(vec, dtype=np.float32).ravel()
            if arr.size != dim:
                raise ValueError(f"embedding for {word!r} has size {arr.size}, expected {dim}")
            self._table[word] = arr

    def __contains__(self, word: str) -> bool:
        return word in self._table

    def lookup(self, word: str) -> np.ndarray:
        return self._table.get(word, np.zeros(self.dim, dtype=np.float32))

    def encode_batch(
        self, token_lists: Sequence[Sequence[str]], max_tokens: int
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Pad token lists to max_tokens; empty lists become a single unknown token."""
        batch = np.zeros((len(token_lists), max_tokens, self.dim), dtype=np.float32)
        mask = np.zeros((len(token_lists), max_tokens), dtype=np.float32)
        for i, tokens in enumerate(token_lists):
            if not tokens:
                logger.warning("empty query at batch index %d; using one unknown token", i)
                mask[i, 0] = 1.0
                continue
            for j, tok in enumerate(tokens[:max_tokens]):
                batch[i, j] = self.lookup(tok)
                mask[i, j] = 1.0
        return torch.from_numpy(batch), torch.from_numpy(mask)


def localize(
    model: LocalizationModel,
    features_128: np.ndarray,
    tokens: Sequence[str],
    embeddings: EmbeddingTable,
) -> ForwardOutput:
    """Eval-mode single-sample inference."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            feats = torch.from_numpy(np.asarray(features_128, dtype=np.float32))[None]
            word_vecs, mask = embeddings.encode_batch([list(tokens)], model.cfg.max_tokens)
            param = next(model.parameters())
            out = model(
                feats.to(param.dtype), word_vecs.to(param.dtype), mask.to(param.dtype)
            )
        return out.single(0)
    finally:
        if was_training:
            model.train()


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: LocalizationModel, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": asdict(model.cfg),
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_checkpoint(path) -> LocalizationModel:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version in {path}")
    cfg = ModelConfig(**payload["config"])
    model = LocalizationModel(cfg)
    expected = {name: tuple(t.shape) for name, t in model.state_dict().items()}
    stored = {name: tuple(t.shape) for name, t in payload["state_dict"].items()}
    if expected != stored:
        diff = sorted(set(expected.items()) ^ set(stored.items()))
        raise CheckpointError(f"checkpoint shape table mismatch: {diff[:4]}")
    model.load_state_dict(payload["state_dict"])
    return model
