"""Evaluation metrics: APE/AVE on joint positions, Fréchet distance, mCLIP,
R-precision, multimodality, and the contrastive motion/text feature
extractor they rely on.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn

from .denoiser import sinusoidal_embedding
from .errors import ConfigurationError, DimensionError, NumericError
from .motion import MotionSequence
from .text import ToyTextEncoder, tokenize, _bucket

# ---------------------------------------------------------------------------
# Position-space metrics (joint positions shaped (frames, joints, 3))


def _check_positions(gen: torch.Tensor, ref: torch.Tensor) -> None:
    if gen.shape != ref.shape or gen.ndim != 3 or gen.shape[-1] != 3:
        raise DimensionError(
            f"positions must share shape (F, J, 3); got {tuple(gen.shape)} vs {tuple(ref.shape)}")


def ape(gen: torch.Tensor, ref: torch.Tensor) -> dict:
    """Average positional error variants, mean over frames.

    root:   L2 error of the root joint.
    traj:   L2 error of the root projected to the ground plane (x, z).
    local:  mean over joints of root-relative position error.
    global: mean over joints of absolute position error.
    """
    _check_positions(gen, ref)
    dist = torch.linalg.norm(gen - ref, dim=-1)          # (F, J)
    root = dist[:, 0].mean()
    traj = torch.linalg.norm(gen[:, 0, [0, 2]] - ref[:, 0, [0, 2]], dim=-1).mean()
    local_gen = (gen - gen[:, 0:1])[:, 1:]
    local_ref = (ref - ref[:, 0:1])[:, 1:]
    local = torch.linalg.norm(local_gen - local_ref, dim=-1).mean()
    return {"root": float(root), "traj": float(traj),
            "local": float(local), "global": float(dist.mean())}


def joint_variance(pos: torch.Tensor) -> torch.Tensor:
    """Per-joint temporal variance (J, 3), unbiased (divisor F-1)."""
    if pos.shape[0] < 2:
        raise ConfigurationError("variance needs at least 2 frames")
    mean = pos.mean(dim=0, keepdim=True)
    return ((pos - mean) ** 2).sum(dim=0) / (pos.shape[0] - 1)


def ave(gen: torch.Tensor, ref: torch.Tensor) -> dict:
    """Average variance error: L2 between per-joint temporal variances."""
    _check_positions(gen, ref)
    vg, vr = joint_variance(gen), joint_variance(ref)
    err = torch.linalg.norm(vg - vr, dim=-1)             # (J,)
    traj = torch.linalg.norm(vg[0, [0, 2]] - vr[0, [0, 2]])
    return {"root": float(err[0]), "traj": float(traj),
            "local": float(err[1:].mean() if err.shape[0] > 1 else err.mean()),
            "global": float(err.mean())}


def average_metric(fn, pairs) -> dict:
    """Mean of a per-pair metric dict over a list of (gen, ref) pairs."""
    dicts = [fn(g, r) for g, r in pairs]
    return {k: float(np.mean([d[k] for d in dicts])) for k in dicts[0]}


# ---------------------------------------------------------------------------
# Fréchet distance


def frechet_distance(feats_a, feats_b, eig_tol: float = -1e-8) -> float:
    """||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)).

    The matrix square root is taken via a symmetric eigendecomposition of
    S1^(1/2) S2 S1^(1/2); eigenvalues below eig_tol raise, small negatives
    are clamped to zero.
    """
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError("feature sets must be (n, d) with equal d")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ConfigurationError("each feature set needs at least 2 vectors")
    mu1, mu2 = a.mean(axis=0), b.mean(axis=0)
    s1 = np.cov(a, rowvar=False)
    s2 = np.cov(b, rowvar=False)
    w1, v1 = np.linalg.eigh(s1)
    root1 = (v1 * np.sqrt(np.clip(w1, 0.0, None))) @ v1.T
    inner = root1 @ s2 @ root1
    w, _ = np.linalg.eigh((inner + inner.T) / 2.0)
    if w.min() < eig_tol:
        raise NumericError(f"covariance product not PSD (min eigenvalue {w.min():.3e})")
    trace_sqrt = np.sqrt(np.clip(w, 0.0, None)).sum()
    fd = float(np.sum((mu1 - mu2) ** 2) + np.trace(s1) + np.trace(s2) - 2.0 * trace_sqrt)
    return max(fd, 0.0)


# ---------------------------------------------------------------------------
# Contrastive dual encoder


@dataclass(frozen=True)
class ExtractorConfig:
    d_motion: int = 147
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    d_feat: int = 32
    max_frames: int = 471
    temperature: float = 0.07
    vocab: int = 4096
    dropout: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


class FeatureExtractor(nn.Module):
    """Dual encoder mapping motions and texts to unit vectors in R^d_feat."""

    def __init__(self, cfg: ExtractorConfig, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.cfg = cfg
        self.frame_proj = nn.Linear(cfg.d_motion, cfg.d_model)
        layer = nn.TransformerEncoderLayer(
            cfg.d_model, cfg.n_heads, cfg.d_ff, dropout=cfg.dropout,
            batch_first=True, norm_first=True)
        self.encoder = nn.TransformerEncoder(layer, cfg.n_layers,
                                             enable_nested_tensor=False)
        self.register_buffer(
            "pos_enc", sinusoidal_embedding(torch.arange(cfg.max_frames), cfg.d_model),
            persistent=False)
        self.motion_head = nn.Linear(cfg.d_model, cfg.d_feat)
        self.word_emb = nn.Embedding(cfg.vocab + 1, cfg.d_model)
        self.text_head = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.d_model), nn.SiLU(),
            nn.Linear(cfg.d_model, cfg.d_feat))
        self.log_temp = math.log(cfg.temperature)

    def encode_motions(self, motions: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """(B, L, D) + (B,) -> (B, d_feat) unit-normalized."""
        B, L, _ = motions.shape
        h = self.frame_proj(motions) + self.pos_enc[:L]
        pad = torch.arange(L).unsqueeze(0) >= lengths.reshape(B, 1)
        h = self.encoder(h, src_key_padding_mask=pad)
        w = (~pad).to(h.dtype).unsqueeze(-1)
        pooled = (h * w).sum(dim=1) / w.sum(dim=1)
        return nn.functional.normalize(self.motion_head(pooled), dim=-1)

    def encode_motion(self, m: MotionSequence) -> torch.Tensor:
        dtype = self.frame_proj.weight.dtype
        return self.encode_motions(
            m.data[: m.valid_len].to(dtype).unsqueeze(0),
            torch.tensor([m.valid_len])).squeeze(0)

    def encode_text(self, text: str) -> torch.Tensor:
        words = tokenize(text)
        idx = torch.tensor([_bucket(w, self.cfg.vocab) for w in words] or [0],
                           dtype=torch.long)
        pooled = self.word_emb(idx).mean(dim=0)
        return nn.functional.normalize(self.text_head(pooled), dim=-1)


def info_nce(logits: torch.Tensor) -> torch.Tensor:
    """Symmetric InfoNCE over in-batch negatives; diagonal entries are the
    positives. Invariant to adding a constant to any row of logits."""
    n = logits.shape[0]
    targets = torch.arange(n, device=logits.device)
    return 0.5 * (nn.functional.cross_entropy(logits, targets)
                  + nn.functional.cross_entropy(logits.t(), targets))


@dataclass(frozen=True)
class ExtractorTrainConfig:
    steps: int = 400
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 1e-4
    seed: int = 0


def train_feature_extractor(items: list[tuple[MotionSequence, str]],
                            cfg: ExtractorConfig,
                            train_cfg: ExtractorTrainConfig = ExtractorTrainConfig(),
                            log_every: int = 0) -> FeatureExtractor:
    """Contrastive training over (motion, text) pairs; returns the extractor
    in eval mode with frozen weights."""
    if train_cfg.batch_size < 2:
        raise ConfigurationError("contrastive training needs batch_size >= 2")
    model = FeatureExtractor(cfg, seed=train_cfg.seed)
    opt = torch.optim.AdamW(model.parameters(), lr=train_cfg.lr,
                            betas=(0.9, 0.999), weight_decay=train_cfg.weight_decay)
    gen = torch.Generator().manual_seed(train_cfg.seed)
    L = max(m.num_frames for m, _ in items)
    model.train()
    for step in range(train_cfg.steps):
        idx = torch.randperm(len(items), generator=gen)[: train_cfg.batch_size]
        motions = torch.zeros(len(idx), L, cfg.d_motion)
        lengths = torch.zeros(len(idx), dtype=torch.long)
        zt = []
        for row, j in enumerate(idx.tolist()):
            m, text = items[j]
            motions[row, : m.valid_len] = m.data[: m.valid_len].to(torch.float32)
            lengths[row] = m.valid_len
            zt.append(model.encode_text(text))
        zm = model.encode_motions(motions, lengths)
        zt = torch.stack(zt)
        logits = zm @ zt.t() / math.exp(model.log_temp)
        loss = info_nce(logits)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log_every and (step + 1) % log_every == 0:
            print(f"extractor step {step + 1}: infonce {float(loss.detach()):.4f}")
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def save_extractor(model: FeatureExtractor, path) -> None:
    torch.save({"version": 1, "config": model.cfg.to_dict(),
                "state": model.state_dict()}, path)


def load_extractor(path) -> FeatureExtractor:
    payload = torch.load(path, weights_only=True)
    if payload.get("version") != 1:
        raise ConfigurationError(f"unsupported extractor checkpoint version "
                                 f"{payload.get('version')!r}")
    model = FeatureExtractor(ExtractorConfig(**payload["config"]))
    model.load_state_dict(payload["state"])
    model.eval()
    return model


# ---------------------------------------------------------------------------
# Retrieval / similarity metrics


def mclip(extractor: FeatureExtractor, motion: MotionSequence, text: str) -> float:
    """Cosine similarity between pooled motion and text features."""
    with torch.no_grad():
        zm = extractor.encode_motion(motion)
        zt = extractor.encode_text(text)
    nm, nt = float(torch.linalg.norm(zm)), float(torch.linalg.norm(zt))
    if nm == 0.0 or nt == 0.0:
        warnings.warn("zero feature vector in mclip; returning 0")
        return 0.0
    return float(zm @ zt / (nm * nt))


def r_precision(extractor: FeatureExtractor, gen_motions: list[MotionSequence],
                gt_texts: list[str], pool: list[str], k_candidates: int = 32,
                gen: torch.Generator | None = None) -> dict:
    """Retrieval accuracy of the ground-truth text among k_candidates ranked
    by Euclidean feature distance (1 GT + k-1 sampled negatives)."""
    if len(gen_motions) != len(gt_texts):
        raise DimensionError("motions and texts must pair up")
    gen = gen or torch.Generator().manual_seed(0)
    n_neg = k_candidates - 1
    hits = {1: 0, 2: 0, 3: 0}
    with torch.no_grad():
        text_feats = {t: extractor.encode_text(t) for t in set(pool) | set(gt_texts)}
        for motion, gt in zip(gen_motions, gt_texts):
            negatives = [t for t in pool if t != gt]
            if len(negatives) < n_neg:
                raise ConfigurationError(
                    f"pool has {len(negatives)} non-GT texts, need {n_neg}")
            order = torch.randperm(len(negatives), generator=gen)[:n_neg]
            candidates = [gt] + [negatives[i] for i in order.tolist()]
            zm = extractor.encode_motion(motion)
            dists = torch.stack([torch.linalg.norm(zm - text_feats[t])
                                 for t in candidates])
            rank = int((torch.argsort(dists, stable=True) == 0).nonzero()[0])
            for k in hits:
                hits[k] += int(rank < k)
    n = len(gen_motions)
    return {f"top{k}": hits[k] / n for k in hits}


@dataclass
class MetricReport:
    """Aggregated evaluation results. `mid` is always None (not computed)."""

    ape_root: float
    ape_traj: float
    ape_local: float
    ape_global: float
    ave_root: float
    ave_traj: float
    ave_local: float
    ave_global: float
    mclip: float
    fd: float
    r_top1: float
    r_top2: float
    r_top3: float
    multimodality: float | None = None
    joint_variance: float | None = None
    mid: None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        rows = [(k, "n/a" if v is None else f"{v:.4f}")
                for k, v in self.to_dict().items()]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def multimodality(extractor: FeatureExtractor,
                  per_text_sample_sets: list[tuple[list, list]],
                  s_l: int = 10) -> float:
    """Mean feature distance between paired sample sets per text:
    (1 / (C * S_l)) sum_c sum_i ||v_{c,i} - v'_{c,i}||."""
    total = 0.0
    for set_a, set_b in per_text_sample_sets:
        if len(set_a) != s_l or len(set_b) != s_l:
            raise ConfigurationError(f"each sample set must have exactly {s_l} items")
        with torch.no_grad():
            for ma, mb in zip(set_a, set_b):
                va = extractor.encode_motion(ma)
                vb = extractor.encode_motion(mb)
                total += float(torch.linalg.norm(va - vb))
    return total / (len(per_text_sample_sets) * s_l)
