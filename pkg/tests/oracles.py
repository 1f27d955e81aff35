"""Independent reference implementations used as test oracles.

Everything here is deliberately written with plain loops and its own
helper math, sharing nothing with the package's production paths beyond
input/output types.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from token_insight.attribution import AttributionStep, AttributionTrace
from token_insight.vit import TokenSubset, ViTWeights


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop float32 matrix product."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=np.float32)
    for i in range(m):
        for j in range(n):
            acc = np.float32(0.0)
            for t in range(k):
                acc = np.float32(acc + np.float32(a[i, t]) * np.float32(b[t, j]))
            out[i, j] = acc
    return out


def direct_layer_norm_slice(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                            eps: float) -> np.ndarray:
    """Per-slice formula, one 1-d slice at a time, float64 math."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    return ((x - mu) / math.sqrt(var + eps)) * gamma + beta


def sorted_quantile(values, q: float) -> float:
    """Linear interpolation at position q*(n-1) over the sorted values."""
    vals = sorted(float(v) for v in values)
    if len(vals) == 1:
        return vals[0]
    pos = q * (len(vals) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(vals) - 1)
    frac = pos - lo
    return vals[lo] * (1.0 - frac) + vals[hi] * frac


def exact_mean(values) -> float:
    """Order-independent mean: correctly rounded sum over the count."""
    values = [float(v) for v in values]
    return math.fsum(values) / len(values)


def naive_token_insight(model, max_iters=None) -> AttributionTrace:
    """Double-loop greedy reference: scan every retained token, remove the
    one whose removal leaves the lowest target-class confidence (first one
    wins ties), repeat until the prediction changes."""
    n = model.token_count
    if max_iters is None:
        max_iters = n
    retained = list(range(n))
    pred = model.evaluate(TokenSubset(tuple(retained)))
    c = pred.top_class
    initial = float(pred.probs[c])
    steps: list[AttributionStep] = []
    cur = pred
    while True:
        if cur.top_class != c:
            status = "flipped"
            break
        if not retained:
            status = "exhausted"
            break
        if len(steps) >= max_iters:
            status = "max_iters_reached"
            break
        best_t, best_p = None, None
        for t in retained:
            p = model.evaluate(TokenSubset(tuple(s for s in retained if s != t)))
            if best_p is None or float(p.probs[c]) < float(best_p.probs[c]):
                best_t, best_p = t, p
        after = float(best_p.probs[c])
        steps.append(AttributionStep(
            iteration=len(steps) + 1,
            removed_token=best_t,
            confidence_after=after,
            drop=float(cur.probs[c]) - after,
        ))
        retained.remove(best_t)
        cur = best_p
    return AttributionTrace(
        target_class=c,
        initial_confidence=initial,
        steps=tuple(steps),
        status=status,
    )


def traces_equal(a: AttributionTrace, b: AttributionTrace) -> bool:
    """Exact comparison of the observable trace fields."""
    return (
        a.target_class == b.target_class
        and a.initial_confidence == b.initial_confidence
        and a.status == b.status
        and len(a.steps) == len(b.steps)
        and all(
            sa.iteration == sb.iteration
            and sa.removed_token == sb.removed_token
            and sa.confidence_after == sb.confidence_after
            and sa.drop == sb.drop
            for sa, sb in zip(a.steps, b.steps)
        )
    )


# --- masked transformer forward ----------------------------------------------

def _ln(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True, dtype=np.float32)
    cen = x - mu
    var = np.mean(cen * cen, axis=-1, keepdims=True, dtype=np.float32)
    return cen / np.sqrt(var + np.float32(1e-6)) * w + b


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _gelu(x: np.ndarray) -> np.ndarray:
    return x * np.float32(0.5) * (np.float32(1.0) + erf(x * np.float32(1.0 / math.sqrt(2.0))))


def masked_forward_logits(seq, removed: set[int], weights: ViTWeights) -> np.ndarray:
    """Alternative subset evaluation that keeps all rows but adds a large
    negative value to attention logits toward removed tokens. Removed
    tokens therefore receive exactly zero attention weight while the
    sequence length stays N+1."""
    cfg = weights.config
    d, heads = cfg.dim, cfg.heads
    dh = d // heads
    x = np.concatenate([seq.cls[None, :], seq.embeddings], axis=0).astype(np.float32)
    key_penalty = np.zeros(x.shape[0], dtype=np.float32)
    for t in removed:
        key_penalty[t + 1] = np.float32(-1e30)  # +1: row 0 is the class token
    scale = np.float32(1.0 / math.sqrt(dh))
    for blk in weights.blocks:
        h = _ln(x, blk.ln1_w, blk.ln1_b)
        qkv = h @ blk.qkv_w.T + blk.qkv_b
        q, k, v = qkv[:, :d], qkv[:, d:2 * d], qkv[:, 2 * d:]
        out = np.empty_like(x)
        for hd in range(heads):
            sl = slice(hd * dh, (hd + 1) * dh)
            scores = (q[:, sl] @ k[:, sl].T) * scale + key_penalty[None, :]
            out[:, sl] = _softmax(scores) @ v[:, sl]
        x = x + out @ blk.proj_w.T + blk.proj_b
        h = _ln(x, blk.ln2_w, blk.ln2_b)
        x = x + _gelu(h @ blk.fc1_w.T + blk.fc1_b) @ blk.fc2_w.T + blk.fc2_b
    z = _ln(x[0], weights.ln_final_w, weights.ln_final_b)
    return z @ weights.head_w.T + weights.head_b


def naive_occlusion_drops(predict_fn, image, patch_size: int, fill_px) -> list[float]:
    """Plain per-token loop computing occlusion confidence drops."""
    from token_insight.imageio import InputImage

    side = image.width // patch_size
    full = predict_fn(image)
    c = full.top_class
    base = float(full.probs[c])
    drops = []
    for gy in range(side):
        for gx in range(side):
            px = image.pixels.copy()
            px[gy * patch_size:(gy + 1) * patch_size,
               gx * patch_size:(gx + 1) * patch_size, :] = fill_px
            occ = predict_fn(InputImage.from_array(px))
            drops.append(base - float(occ.probs[c]))
    return drops
