"""Closed-form subset classifiers for exhaustive testing and demos.

These implement the same interface as the real model but have evaluable
closed forms, so search behavior can be checked against enumeration.
All of them are binary classifiers reporting class 1 as the "positive"
class. Arithmetic stays in float64 (math.fsum) so equal weights are
exactly equal and distinct weights stay distinct.
"""

from __future__ import annotations

import math
from typing import Sequence

from .attribution import SubsetClassifier
from .vit import Prediction, TokenSubset

__all__ = [
    "AdditiveStub",
    "ConstantStub",
    "KeyedStub",
    "CountingClassifier",
]


class AdditiveStub:
    """p(class 1) is the retained share of the total token weight.

    With all tokens present the positive class holds probability 1, and
    removing token i costs exactly w_i / sum(w). The greedy search on
    this model must therefore remove tokens in descending weight order.
    """

    def __init__(self, weights: Sequence[float]):
        self.weights = tuple(float(w) for w in weights)
        if any(w < 0 for w in self.weights):
            raise ValueError("additive stub weights must be non-negative")
        self.total = math.fsum(self.weights)
        if self.total <= 0:
            raise ValueError("additive stub needs positive total weight")
        self.token_count = len(self.weights)

    def evaluate(self, subset: TokenSubset) -> Prediction:
        present = math.fsum(self.weights[i] for i in subset.retained)
        p1 = present / self.total
        return Prediction.from_probs([1.0 - p1, p1])


class ConstantStub:
    """Ignores the subset entirely; always the same probabilities."""

    def __init__(self, confidence: float = 1.0, token_count: int = 16):
        self.confidence = float(confidence)
        self.token_count = token_count

    def evaluate(self, subset: TokenSubset) -> Prediction:
        return Prediction.from_probs([1.0 - self.confidence, self.confidence])


class KeyedStub:
    """Confidence keyed to the presence of specific tokens.

    p(class 1) = present_conf while every key token is retained, and
    absent_conf as soon as any of them is removed.
    """

    def __init__(self, key_tokens: Sequence[int], token_count: int,
                 present_conf: float = 0.9, absent_conf: float = 0.2):
        self.key_tokens = frozenset(int(t) for t in key_tokens)
        self.token_count = token_count
        self.present_conf = float(present_conf)
        self.absent_conf = float(absent_conf)

    def evaluate(self, subset: TokenSubset) -> Prediction:
        retained = set(subset.retained)
        p1 = self.present_conf if self.key_tokens <= retained else self.absent_conf
        return Prediction.from_probs([1.0 - p1, p1])


class CountingClassifier:
    """Wrapper that counts evaluate() calls on any subset classifier."""

    def __init__(self, inner: SubsetClassifier):
        self.inner = inner
        self.token_count = inner.token_count
        self.calls = 0

    def evaluate(self, subset: TokenSubset) -> Prediction:
        self.calls += 1
        return self.inner.evaluate(subset)
