"""Label spaces and the numeric primitives shared by every stage."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, InvalidTemperature, OutOfVocabulary, ShapeError


@dataclass(frozen=True)
class LabelSpace:
    name: str
    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise InvalidInput(f"label space {self.name!r} needs at least 2 labels")
        if len(set(labels)) != len(labels):
            raise InvalidInput(f"label space {self.name!r} has duplicate labels")
        for label in labels:
            if not label or label != label.lower():
                raise InvalidInput(f"labels must be non-empty lowercase strings, got {label!r}")

    @property
    def size(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise OutOfVocabulary(label, self.name) from None

    def __contains__(self, label: object) -> bool:
        return label in self.labels


MIKELS8 = LabelSpace(
    "mikels8",
    ("amusement", "anger", "awe", "contentment", "disgust", "excitement", "fear", "sadness"),
)
EKMAN6 = LabelSpace("ekman6", ("anger", "surprise", "disgust", "joy", "fear", "sadness"))
BINARY = LabelSpace("binary", ("positive", "negative"))

SPACES = {space.name: space for space in (MIKELS8, EKMAN6, BINARY)}


def get_space(name: str) -> LabelSpace:
    try:
        return SPACES[name]
    except KeyError:
        raise InvalidInput(f"unknown label space {name!r}; expected one of {sorted(SPACES)}") from None


@dataclass(frozen=True)
class OneHotVector:
    space: LabelSpace
    hot_index: int

    def __post_init__(self):
        if not 0 <= self.hot_index < self.space.size:
            raise ShapeError(f"hot_index {self.hot_index} outside [0, {self.space.size})")

    @property
    def label(self) -> str:
        return self.space.labels[self.hot_index]

    @property
    def values(self) -> np.ndarray:
        v = np.zeros(self.space.size)
        v[self.hot_index] = 1.0
        return v


def _check_tau(tau: float) -> None:
    if not tau > 0 or not np.isfinite(tau):
        raise InvalidTemperature(f"temperature must be positive and finite, got {tau!r}")


def log_softened_softmax(logits, tau: float = 1.0) -> np.ndarray:
    """Log of ``softened_softmax`` along the last axis, computed stably."""
    _check_tau(tau)
    z = np.asarray(logits, dtype=np.float64) / tau
    if not np.all(np.isfinite(z)):
        raise InvalidInput("logits must be finite")
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softened_softmax(logits, tau: float = 1.0) -> np.ndarray:
    """softmax(logits / tau) along the last axis.

    Works on a single logit vector or a batch of shape (n, C).
    """
    _check_tau(tau)
    z = np.asarray(logits, dtype=np.float64) / tau
    if not np.all(np.isfinite(z)):
        raise InvalidInput("logits must be finite")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(label: str, space: LabelSpace) -> OneHotVector:
    return OneHotVector(space, space.index(label))


def one_hot_matrix(indices, num_classes: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros((indices.shape[0], num_classes))
    out[np.arange(indices.shape[0]), indices] = 1.0
    return out


def argmax_index(values) -> int | np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest index
    return np.argmax(np.asarray(values), axis=-1)


def argmax_label(probs, space: LabelSpace) -> str:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (space.size,):
        raise ShapeError(f"expected a vector of length {space.size}, got shape {probs.shape}")
    return space.labels[int(argmax_index(probs))]
