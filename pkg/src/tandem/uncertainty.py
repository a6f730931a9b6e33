"""Per-token perplexity/entropy and the 17-dim distributional feature vector.

Feature order (flattened)::

    ppl_{mean,std,median,max,min,q25,q75}
    entropy_{mean,std,median,max,min,q25,q75}
    ppl_trend, entropy_trend, length

Entropy is in nats.  When a backend reports only the top-K alternatives, the
leftover probability is treated as a single residual outcome, which
underestimates the full-vocabulary entropy.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .backend.base import TokenScore
from .errors import EmptyInputError, InvalidDistributionError

TREND_WINDOW = 20
STAT_NAMES = ("mean", "std", "median", "max", "min", "q25", "q75")
FEATURE_NAMES = (
    tuple(f"ppl_{s}" for s in STAT_NAMES)
    + tuple(f"entropy_{s}" for s in STAT_NAMES)
    + ("ppl_trend", "entropy_trend", "length")
)
N_FEATURES = len(FEATURE_NAMES)


@dataclass(frozen=True)
class SeriesStats:
    mean: float
    std: float
    median: float
    max: float
    min: float
    q25: float
    q75: float

    def as_tuple(self) -> tuple[float, ...]:
        return astuple(self)


@dataclass(frozen=True)
class FeatureVector:
    ppl: SeriesStats
    entropy: SeriesStats
    ppl_trend: float
    entropy_trend: float
    length: int

    def to_array(self) -> np.ndarray:
        return np.array(
            self.ppl.as_tuple()
            + self.entropy.as_tuple()
            + (self.ppl_trend, self.entropy_trend, float(self.length)),
            dtype=float,
        )

    def to_list(self) -> list[float]:
        return self.to_array().tolist()

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "FeatureVector":
        values = [float(v) for v in values]
        if len(values) != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} features, got {len(values)}")
        return cls(
            SeriesStats(*values[0:7]),
            SeriesStats(*values[7:14]),
            values[14],
            values[15],
            int(round(values[16])),
        )


def _require(scores) -> None:
    if len(scores) == 0:
        raise EmptyInputError("no scored tokens")


def per_token_ppl(scores: Sequence[TokenScore]) -> list[float]:
    _require(scores)
    return [math.exp(-s.realized_logprob) for s in scores]


def _xlogx(p: float) -> float:
    return p * math.log(p) if p > 0 else 0.0


def token_entropy(score: TokenScore) -> float:
    probs = score.probabilities()
    if score.residual_mass < 0 or any(p < 0 for p in probs):
        raise InvalidDistributionError("negative probability in distribution")
    return -sum(_xlogx(p) for p in probs) - _xlogx(score.residual_mass)


def per_token_entropy(scores: Sequence[TokenScore]) -> list[float]:
    _require(scores)
    return [token_entropy(s) for s in scores]


def distribution_stats(series: Sequence[float]) -> SeriesStats:
    """Population std; percentiles interpolate linearly between order statistics."""
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise EmptyInputError("empty series")
    q25, median, q75 = np.percentile(x, [25, 50, 75])
    return SeriesStats(
        float(x.mean()),
        float(x.std()),
        float(median),
        float(x.max()),
        float(x.min()),
        float(q25),
        float(q75),
    )


def trend(series: Sequence[float], window: int = TREND_WINDOW) -> float:
    """Mean of the last ``k`` values minus mean of the first ``k``, ``k = min(window, n)``."""
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise EmptyInputError("empty series")
    k = min(window, x.size)
    return float(x[-k:].mean() - x[:k].mean())


def extract_features(scores: Sequence[TokenScore], n: int | None = None) -> FeatureVector:
    """Compose the feature vector for one (question, stage) input.

    ``n`` is the token count of the intern input; it defaults to
    ``len(scores) + 1`` since the first position has no predictive
    distribution.
    """
    _require(scores)
    if n is None:
        n = len(scores) + 1
    if n < len(scores):
        raise ValueError(f"n={n} is smaller than the number of scored tokens {len(scores)}")
    ppl = per_token_ppl(scores)
    ent = per_token_entropy(scores)
    return FeatureVector(
        distribution_stats(ppl),
        distribution_stats(ent),
        trend(ppl),
        trend(ent),
        int(n),
    )


class UncertaintyFeaturizer(TransformerMixin, BaseEstimator):
    """Stateless transformer from score sequences to an ``(m, 17)`` feature matrix.

    Each sample is a ``list[TokenScore]`` or a ``(scores, n)`` pair.
    """

    def __init__(self, window: int = TREND_WINDOW):
        self.window = window

    def fit(self, X=None, y=None):
        self.n_features_out_ = N_FEATURES
        return self

    def transform(self, X) -> np.ndarray:
        rows = []
        for sample in X:
            if isinstance(sample, tuple) and len(sample) == 2 and isinstance(sample[1], int):
                scores, n = sample
            else:
                scores, n = sample, None
            rows.append(self._featurize(scores, n))
        return np.vstack(rows) if rows else np.empty((0, N_FEATURES))

    def _featurize(self, scores, n) -> np.ndarray:
        if self.window == TREND_WINDOW:
            return extract_features(scores, n).to_array()
        fv = extract_features(scores, n)
        ppl, ent = per_token_ppl(scores), per_token_entropy(scores)
        arr = fv.to_array()
        arr[14], arr[15] = trend(ppl, self.window), trend(ent, self.window)
        return arr

    def get_feature_names_out(self, input_features=None):
        return np.asarray(FEATURE_NAMES, dtype=object)
