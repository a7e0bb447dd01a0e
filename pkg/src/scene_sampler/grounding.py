"""Object-proposal features, contrastive grounding losses, and 3D-IoU metrics.

The grounding objective scores each object k as s_k = f(e_k) . g(h) with
two-layer projection heads f, g, and minimizes
L = -log( sum_{k in O+} exp(s_k / tau) / sum_{k in O} exp(s_k / tau) ),
the multi-positive InfoNCE form (no normalization by |O+|).  Gradients are
exact backpropagation; no autodiff framework is involved.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInput, ObjectNotVisible
from .geometry import CoordinateMap
from .posenc import (
    DEFAULT_GRID_RESOLUTION,
    MlpParams,
    mlp_backward,
    mlp_forward,
    sinusoidal_pe,
)

log = logging.getLogger(__name__)

DEFAULT_TAU = 0.07
DEFAULT_MULTI_TARGET_P = 0.25
DEFAULT_IOU_THRESHOLDS = (0.25, 0.5)


@dataclass
class ObjectProposal:
    """Axis-aligned 3D box: center plus full side lengths, in meters."""

    id: int
    center: np.ndarray
    extent: np.ndarray
    score: float | None = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.extent = np.asarray(self.extent, dtype=np.float64).reshape(3)
        if not np.all(self.extent > 0):
            raise InvalidInput(f"box extents must be positive, got {self.extent}")

    @property
    def min_corner(self) -> np.ndarray:
        return self.center - self.extent / 2.0

    @property
    def max_corner(self) -> np.ndarray:
        return self.center + self.extent / 2.0

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))


@dataclass
class ObjectEmbedding:
    object_id: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise InvalidInput(f"object {self.object_id} embedding is not finite")


@dataclass
class PeConfig:
    """How object centers are encoded when pooled into embeddings."""

    grid_resolution: float = DEFAULT_GRID_RESOLUTION


@dataclass
class GroundingHead:
    """Projection heads f (objects) and g (query) plus the temperature."""

    f_params: MlpParams
    g_params: MlpParams
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if self.tau <= 0:
            raise InvalidInput(f"tau must be > 0, got {self.tau}")
        if self.f_params.out_dim != self.g_params.out_dim:
            raise InvalidInput(
                f"head output dims differ: f {self.f_params.out_dim} vs g {self.g_params.out_dim}"
            )

    @classmethod
    def seeded(cls, seed: int, d: int, hidden: int | None = None, tau: float = DEFAULT_TAU) -> "GroundingHead":
        hidden = d if hidden is None else hidden
        return cls(
            f_params=MlpParams.seeded(seed, d, hidden, d),
            g_params=MlpParams.seeded(seed + 1, d, hidden, d),
            tau=tau,
        )

    @classmethod
    def identity(cls, d: int, tau: float = DEFAULT_TAU) -> "GroundingHead":
        return cls(f_params=MlpParams.identity(d), g_params=MlpParams.identity(d), tau=tau)


@dataclass
class GroundingBatch:
    """All candidate objects, the positive ids, and the query vector."""

    objects: list[ObjectEmbedding]
    positives: set[int]
    query: np.ndarray

    def __post_init__(self):
        self.query = np.asarray(self.query, dtype=np.float64).reshape(-1)
        ids = [o.object_id for o in self.objects]
        if len(self.objects) < 2:
            raise InvalidInput(f"batch needs >= 2 objects, got {len(self.objects)}")
        if len(set(ids)) != len(ids):
            raise InvalidInput("duplicate object ids in batch")
        if not self.positives:
            raise InvalidInput("positive set is empty")
        if not self.positives <= set(ids):
            raise InvalidInput("positive ids not a subset of object ids")

    @property
    def positive_mask(self) -> np.ndarray:
        return np.array([o.object_id in self.positives for o in self.objects], dtype=bool)


@dataclass
class GroundingGrads:
    """Gradients for both heads and the query vector."""

    f_params: MlpParams
    g_params: MlpParams
    query: np.ndarray


def assign_patches(box: ObjectProposal, cmap: CoordinateMap, patch_size: int) -> np.ndarray:
    """Patch mask: selected iff > 50% of the patch's valid pixels fall in the box.

    Containment is inclusive of the box boundary; patches with no valid
    pixels are never selected.  The comparison is integer-exact
    (2 * n_inside > n_valid).
    """
    p = int(patch_size)
    if p < 1:
        raise InvalidInput(f"patch_size must be >= 1, got {patch_size}")
    h, w = cmap.shape
    if h < p or w < p:
        raise InvalidInput(f"image {h}x{w} smaller than one {p}x{p} patch")
    hp, wp = h // p, w // p
    lo, hi = box.min_corner, box.max_corner
    inside = cmap.valid & np.all((cmap.coords >= lo) & (cmap.coords <= hi), axis=-1)
    inside_counts = inside[: hp * p, : wp * p].reshape(hp, p, wp, p).sum(axis=(1, 3))
    valid_counts = cmap.valid[: hp * p, : wp * p].reshape(hp, p, wp, p).sum(axis=(1, 3))
    return 2 * inside_counts > valid_counts


def pool_object_features(
    mask: np.ndarray,
    visual: np.ndarray,
    center: np.ndarray,
    pe_cfg: PeConfig,
    object_id: int = 0,
) -> ObjectEmbedding:
    """Mean of the selected patches' features plus the center coordinate's PE."""
    mask = np.asarray(mask, dtype=bool)
    visual = np.asarray(visual, dtype=np.float64)
    if visual.ndim != 3 or visual.shape[:2] != mask.shape:
        raise InvalidInput(f"visual {visual.shape} does not match mask {mask.shape}")
    if not mask.any():
        raise ObjectNotVisible(f"object {object_id} selects no patch")
    pooled = visual[mask].mean(axis=0)
    pe = sinusoidal_pe(center, visual.shape[2], pe_cfg.grid_resolution)
    return ObjectEmbedding(object_id=object_id, values=pooled + pe)


@dataclass
class EmbeddingStats:
    """Diagnostics from batch embedding construction."""

    n_objects: int = 0
    n_pe_only: int = 0
    pe_only_ids: list[int] = field(default_factory=list)


def build_object_embeddings(
    proposals: Sequence[ObjectProposal],
    cmaps: Sequence[CoordinateMap],
    visuals: Sequence[np.ndarray],
    patch_size: int,
    pe_cfg: PeConfig,
) -> tuple[list[ObjectEmbedding], EmbeddingStats]:
    """Embed each proposal from all frames it is visible in.

    Patch features are averaged across every selected patch of every frame.
    Proposals visible nowhere fall back to a PE-only embedding and are
    counted in the returned stats.
    """
    if len(cmaps) != len(visuals):
        raise InvalidInput("one visual embedding grid per coordinate map required")
    stats = EmbeddingStats(n_objects=len(proposals))
    out = []
    for prop in proposals:
        feats = []
        for cmap, visual in zip(cmaps, visuals):
            mask = assign_patches(prop, cmap, patch_size)
            if mask.any():
                feats.append(np.asarray(visual, dtype=np.float64)[mask])
        d = np.asarray(visuals[0]).shape[2] if visuals else 0
        pe = sinusoidal_pe(prop.center, d, pe_cfg.grid_resolution)
        if feats:
            pooled = np.concatenate(feats, axis=0).mean(axis=0)
            out.append(ObjectEmbedding(object_id=prop.id, values=pooled + pe))
        else:
            stats.n_pe_only += 1
            stats.pe_only_ids.append(prop.id)
            log.debug("object %d not visible in any frame; PE-only embedding", prop.id)
            out.append(ObjectEmbedding(object_id=prop.id, values=pe))
    return out, stats


def _scores_forward(batch: GroundingBatch, head: GroundingHead):
    emb = np.stack([o.values for o in batch.objects])
    u, f_cache = mlp_forward(head.f_params, emb)
    v, g_cache = mlp_forward(head.g_params, batch.query)
    return emb, u, v, f_cache, g_cache, u @ v


def _scores_backward(batch, head, f_cache, g_cache, u, v, dscores) -> GroundingGrads:
    du = dscores[:, None] * v
    dv = dscores @ u
    f_grads, _ = mlp_backward(head.f_params, f_cache, du)
    g_grads, dquery = mlp_backward(head.g_params, g_cache, dv)
    return GroundingGrads(f_params=f_grads, g_params=g_grads, query=dquery)


def _logsumexp(a: np.ndarray) -> float:
    m = np.max(a)
    return float(m + np.log(np.sum(np.exp(a - m))))


def infonce_loss(batch: GroundingBatch, head: GroundingHead) -> tuple[float, GroundingGrads]:
    """Multi-positive InfoNCE loss and exact gradients.

    Returns exactly 0 (with a warning) in the degenerate case where every
    object is positive.
    """
    _, u, v, f_cache, g_cache, scores = _scores_forward(batch, head)
    pos = batch.positive_mask
    if pos.all():
        warnings.warn("all objects are positive; InfoNCE loss is degenerately 0", RuntimeWarning)
    a = scores / head.tau
    lse_all = _logsumexp(a)
    lse_pos = _logsumexp(a[pos])
    loss = lse_all - lse_pos

    p_all = np.exp(a - lse_all)
    p_pos = np.zeros_like(p_all)
    p_pos[pos] = np.exp(a[pos] - lse_pos)
    dscores = (p_all - p_pos) / head.tau
    return loss, _scores_backward(batch, head, f_cache, g_cache, u, v, dscores)


def bce_with_logits(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy over independent sigmoids, numerically stable."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    per = np.maximum(logits, 0.0) - logits * labels + np.log1p(np.exp(-np.abs(logits)))
    sig = 1.0 / (1.0 + np.exp(-logits))
    return float(per.mean()), (sig - labels) / logits.size


def bce_loss(batch: GroundingBatch, head: GroundingHead) -> tuple[float, GroundingGrads]:
    """Per-object sigmoid BCE against the positive indicator (ablation baseline).

    Logits are the raw scores f(e_k) . g(h); the temperature is not applied.
    """
    _, u, v, f_cache, g_cache, scores = _scores_forward(batch, head)
    labels = batch.positive_mask.astype(np.float64)
    loss, dscores = bce_with_logits(scores, labels)
    return loss, _scores_backward(batch, head, f_cache, g_cache, u, v, dscores)


def select_single(similarities: Iterable[tuple[int, float]]) -> int:
    """Highest-similarity object id; ties break toward the lowest id."""
    items = list(similarities)
    if not items:
        raise InvalidInput("similarities must be nonempty")
    return max(items, key=lambda t: (t[1], -t[0]))[0]


def select_multi(similarities: Iterable[tuple[int, float]], tau: float, p: float = DEFAULT_MULTI_TARGET_P) -> set[int]:
    """Minimal prefix of softmax(sim/tau), sorted descending, with mass > p."""
    items = list(similarities)
    if not items:
        raise InvalidInput("similarities must be nonempty")
    if not (0 < p < 1):
        raise InvalidInput(f"cumulative threshold p must be in (0, 1), got {p}")
    if tau <= 0:
        raise InvalidInput(f"tau must be > 0, got {tau}")
    ids = np.array([t[0] for t in items])
    sims = np.array([t[1] for t in items], dtype=np.float64) / tau
    probs = np.exp(sims - sims.max())
    probs /= probs.sum()
    order = sorted(range(len(items)), key=lambda k: (-probs[k], ids[k]))
    chosen: set[int] = set()
    cum = 0.0
    for k in order:
        chosen.add(int(ids[k]))
        cum += probs[k]
        if cum > p:
            break
    return chosen


def aabb_iou(a: ObjectProposal, b: ObjectProposal) -> float:
    """Intersection over union of two axis-aligned boxes."""
    lo = np.maximum(a.min_corner, b.min_corner)
    hi = np.minimum(a.max_corner, b.max_corner)
    inter = float(np.prod(np.maximum(hi - lo, 0.0)))
    union = a.volume + b.volume - inter
    return inter / union if union > 0 else 0.0


def _greedy_match_f1(preds: Sequence[ObjectProposal], gts: Sequence[ObjectProposal], threshold: float) -> float:
    """Record-level F1 with greedy one-to-one matching, highest IoU first."""
    if not preds and not gts:
        return 1.0
    if not preds or not gts:
        return 0.0
    pairs = []
    for i, pr in enumerate(preds):
        for j, gt in enumerate(gts):
            iou = aabb_iou(pr, gt)
            if iou > threshold:
                pairs.append((iou, i, j))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_p: set[int] = set()
    used_g: set[int] = set()
    tp = 0
    for _, i, j in pairs:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        tp += 1
    if tp == 0:
        return 0.0
    precision = tp / len(preds)
    recall = tp / len(gts)
    return 2 * precision * recall / (precision + recall)


def eval_metrics(
    predictions: Sequence[Sequence[ObjectProposal]],
    ground_truths: Sequence[Sequence[ObjectProposal]],
    iou_thresholds: Sequence[float] = DEFAULT_IOU_THRESHOLDS,
) -> dict:
    """Thresholded accuracy over single-target records and per-record F1 over all.

    A record is single-target when it has exactly one ground-truth box; its
    prediction is the record's first predicted box.  Zero-target records with
    an empty prediction count as F1 = 1.
    """
    if len(predictions) != len(ground_truths):
        raise InvalidInput(
            f"got {len(predictions)} prediction records vs {len(ground_truths)} targets"
        )
    out: dict = {"n": len(predictions)}
    single = [(p, g) for p, g in zip(predictions, ground_truths) if len(g) == 1]
    for t in iou_thresholds:
        key = format(t, "g")
        if single:
            hits = sum(
                1 for p, g in single if p and aabb_iou(p[0], g[0]) > t
            )
            out[f"acc_{key}"] = hits / len(single)
        else:
            out[f"acc_{key}"] = None
        f1s = [
            _greedy_match_f1(p, g, t) for p, g in zip(predictions, ground_truths)
        ]
        out[f"f1_{key}"] = float(np.mean(f1s)) if f1s else None
    out["n_single"] = len(single)
    return out


def _boxes_from_json(items, base_id: int = 0) -> list[ObjectProposal]:
    return [
        ObjectProposal(id=base_id + k, center=b["center"], extent=b["extent"])
        for k, b in enumerate(items)
    ]


def read_grounding_records(path: str | Path) -> tuple[list[dict], int]:
    """Parse JSON-lines grounding records; malformed lines are skipped.

    Each record is {query_id, predicted: [{center, extent}...], target: [...]}.
    Returns (records, number of skipped lines).
    """
    records = []
    skipped = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                records.append(
                    {
                        "query_id": raw["query_id"],
                        "predicted": _boxes_from_json(raw.get("predicted", [])),
                        "target": _boxes_from_json(raw.get("target", [])),
                    }
                )
            except (json.JSONDecodeError, KeyError, TypeError, InvalidInput) as exc:
                skipped += 1
                log.warning("%s:%d: skipping malformed record (%s)", path, lineno, exc)
    return records, skipped
