"""Vision-transformer classifier over an arbitrary retained-token subset.

The model follows the standard pre-norm encoder recipe: an image is cut
into non-overlapping patches, each patch is linearly embedded and gets
its positional embedding added, a learned class token is prepended, and
per block the sequence goes through `x += attn(ln1(x))` followed by
`x += mlp(ln2(x))`. Classification reads the class token only.

Token removal is implemented by *shortening the sequence*: discarded
tokens are simply absent from every attention computation, so no mask
value can leak into the result. Positional embeddings are attached at
embed time, which lets any subset of tokens keep its spatial identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor_core as tc
from .imageio import IMAGENET_MEAN, IMAGENET_STD, InputImage, normalize, resize_bilinear

__all__ = [
    "ViTConfig",
    "BlockWeights",
    "ViTWeights",
    "TokenSequence",
    "TokenSubset",
    "Prediction",
    "patchify",
    "embed",
    "assemble_rows",
    "encode_logits",
    "forward_subset",
    "predict",
    "ViTSubsetClassifier",
    "PRESETS",
]


@dataclass(frozen=True)
class ViTConfig:
    """Architecture geometry. `token_count` is the patch-grid size squared."""

    image_size: int
    patch_size: int
    dim: int
    depth: int
    heads: int
    num_classes: int
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if min(self.depth, self.heads, self.num_classes) < 1:
            raise ValueError("depth, heads and num_classes must all be >= 1")

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def token_count(self) -> int:
        return self.grid_size ** 2

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


# Named geometries accepted by the CLI. The small one keeps exhaustive
# test oracles tractable (16 tokens).
PRESETS = {
    "vitb16": ViTConfig(image_size=224, patch_size=16, dim=768, depth=12, heads=12, num_classes=2),
    "tiny": ViTConfig(image_size=32, patch_size=8, dim=64, depth=2, heads=4, num_classes=2),
}


@dataclass(frozen=True)
class BlockWeights:
    ln1_w: np.ndarray
    ln1_b: np.ndarray
    qkv_w: np.ndarray
    qkv_b: np.ndarray
    proj_w: np.ndarray
    proj_b: np.ndarray
    ln2_w: np.ndarray
    ln2_b: np.ndarray
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray


@dataclass(frozen=True)
class ViTWeights:
    """Validated parameter set bound to its geometry. Arrays are frozen
    read-only so a loaded weight set can be shared across workers."""

    config: ViTConfig
    patch_embed_w: np.ndarray
    patch_embed_b: np.ndarray
    cls_token: np.ndarray
    pos_embed: np.ndarray
    blocks: tuple[BlockWeights, ...]
    ln_final_w: np.ndarray
    ln_final_b: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray


@dataclass(frozen=True)
class TokenSequence:
    """Patch embeddings with positions already added, plus the class token."""

    embeddings: np.ndarray  # [N, D]
    cls: np.ndarray  # [D]

    @property
    def token_count(self) -> int:
        return self.embeddings.shape[0]


@dataclass(frozen=True)
class TokenSubset:
    """Strictly increasing retained patch-token indices in [0, N).

    The class token is not an index here; it is always retained.
    """

    retained: tuple[int, ...]

    def __post_init__(self):
        r = self.retained
        if any(r[i] >= r[i + 1] for i in range(len(r) - 1)):
            raise ValueError("retained indices must be strictly increasing")
        if r and r[0] < 0:
            raise ValueError("retained indices must be non-negative")

    @classmethod
    def full(cls, n: int) -> "TokenSubset":
        return cls(tuple(range(n)))

    def validate_for(self, n: int) -> None:
        if self.retained and self.retained[-1] >= n:
            raise ValueError(f"subset index {self.retained[-1]} out of range for {n} tokens")

    def remove(self, token: int) -> "TokenSubset":
        if token not in self.retained:
            raise ValueError(f"token {token} not in subset")
        return TokenSubset(tuple(i for i in self.retained if i != token))

    def __len__(self) -> int:
        return len(self.retained)


@dataclass(frozen=True)
class Prediction:
    logits: np.ndarray  # [M]
    probs: np.ndarray  # [M]
    top_class: int
    confidence: float

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> "Prediction":
        logits = tc.as_tensor(logits)
        probs = tc.softmax_rows(logits)
        top = int(np.argmax(probs))
        return cls(logits=logits, probs=probs, top_class=top, confidence=float(probs[top]))

    @classmethod
    def from_probs(cls, probs: Sequence[float]) -> "Prediction":
        """Build a prediction from a probability vector (stub models).

        Logits are the elementwise log, so softmax(logits) recovers the
        probabilities. Stays in float64: stub laws need exact arithmetic.
        """
        p = np.asarray(probs, dtype=np.float64)
        logits = np.log(np.maximum(p, 1e-300))
        top = int(np.argmax(p))
        return cls(logits=logits, probs=p, top_class=top, confidence=float(p[top]))


def patchify(img: np.ndarray, config: ViTConfig) -> np.ndarray:
    """Cut a CHW image tensor into flattened patch vectors.

    Patches are ordered row-major over the grid (top-left first); each
    patch vector is channel-major, then row-major within the channel.
    Returns shape [N, P*P*3].
    """
    img = tc.as_tensor(img)
    p = config.patch_size
    s = config.image_size
    if img.shape != (3, s, s):
        raise ValueError(f"patchify expects image shape (3, {s}, {s}), got {img.shape}")
    g = config.grid_size
    # [3, g, p, g, p] -> [g, g, 3, p, p] -> [N, 3*p*p]
    patches = img.reshape(3, g, p, g, p).transpose(1, 3, 0, 2, 4)
    return np.ascontiguousarray(patches.reshape(g * g, 3 * p * p))


def embed(patches: np.ndarray, weights: ViTWeights) -> TokenSequence:
    """Project patches into the embedding space and attach positions.

    Token k gets pos_embed[k + 1]; slot 0 of pos_embed belongs to the
    class token. Because positions are bound here, subsetting later
    cannot scramble spatial identity.
    """
    emb = tc.linear(patches, weights.patch_embed_w, weights.patch_embed_b)
    emb = emb + weights.pos_embed[1:]
    cls = weights.cls_token + weights.pos_embed[0]
    return TokenSequence(embeddings=emb, cls=cls)


def assemble_rows(seq: TokenSequence, subset: TokenSubset) -> np.ndarray:
    """Stack [cls, retained tokens in index order] into the encoder input."""
    subset.validate_for(seq.token_count)
    if len(subset) == 0:
        return seq.cls[None, :].copy()
    gathered = seq.embeddings[np.asarray(subset.retained, dtype=np.intp)]
    return np.concatenate([seq.cls[None, :], gathered], axis=0)


def _attention(x: np.ndarray, blk: BlockWeights, heads: int) -> np.ndarray:
    t, d = x.shape
    dh = d // heads
    qkv = tc.linear(x, blk.qkv_w, blk.qkv_b)  # [T, 3D]
    q, k, v = qkv[:, :d], qkv[:, d:2 * d], qkv[:, 2 * d:]
    scale = np.float32(1.0 / math.sqrt(dh))
    out = np.empty((t, d), dtype=np.float32)
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        scores = tc.matmul(q[:, sl], np.ascontiguousarray(k[:, sl].T)) * scale
        attn = tc.softmax_rows(scores)
        out[:, sl] = tc.matmul(attn, np.ascontiguousarray(v[:, sl]))
    return tc.linear(out, blk.proj_w, blk.proj_b)


def encode_logits(rows: np.ndarray, weights: ViTWeights) -> np.ndarray:
    """Run the encoder on prepared rows ([cls; tokens]) and return logits."""
    x = tc.as_tensor(rows)
    for blk in weights.blocks:
        x = x + _attention(tc.layer_norm(x, blk.ln1_w, blk.ln1_b), blk, weights.config.heads)
        h = tc.layer_norm(x, blk.ln2_w, blk.ln2_b)
        h = tc.gelu(tc.linear(h, blk.fc1_w, blk.fc1_b))
        x = x + tc.linear(h, blk.fc2_w, blk.fc2_b)
    cls_out = tc.layer_norm(x[0], weights.ln_final_w, weights.ln_final_b)
    return tc.linear(cls_out, weights.head_w, weights.head_b)


def forward_subset(seq: TokenSequence, subset: TokenSubset, weights: ViTWeights) -> Prediction:
    """Classify the sequence with only the subset's tokens present.

    Attention runs over exactly 1 + len(subset) rows; removed tokens do
    not exist anywhere in the computation. A pure function: the same
    subset always yields a bit-identical Prediction.
    """
    return Prediction.from_logits(encode_logits(assemble_rows(seq, subset), weights))


def prepare_sequence(img: InputImage, weights: ViTWeights,
                     mean: Sequence[float] = IMAGENET_MEAN,
                     std: Sequence[float] = IMAGENET_STD) -> TokenSequence:
    """Resize, normalize, patchify and embed an image for this model."""
    cfg = weights.config
    resized = resize_bilinear(img, cfg.image_size, cfg.image_size)
    chw = normalize(resized, mean, std)
    return embed(patchify(chw, cfg), weights)


def predict(img: InputImage, weights: ViTWeights,
            mean: Sequence[float] = IMAGENET_MEAN,
            std: Sequence[float] = IMAGENET_STD) -> Prediction:
    """Full-input classification; the resize/normalize/patchify/embed/
    forward composition with every token retained."""
    seq = prepare_sequence(img, weights, mean, std)
    return forward_subset(seq, TokenSubset.full(seq.token_count), weights)


class ViTSubsetClassifier:
    """Subset-classifier adapter: embeds an image once, then evaluates
    any retained-token subset with a fresh encoder pass."""

    def __init__(self, seq: TokenSequence, weights: ViTWeights):
        self.seq = seq
        self.weights = weights
        self.token_count = seq.token_count

    @classmethod
    def from_image(cls, img: InputImage, weights: ViTWeights,
                   mean: Sequence[float] = IMAGENET_MEAN,
                   std: Sequence[float] = IMAGENET_STD) -> "ViTSubsetClassifier":
        return cls(prepare_sequence(img, weights, mean, std), weights)

    def evaluate(self, subset: TokenSubset) -> Prediction:
        return forward_subset(self.seq, subset, self.weights)
