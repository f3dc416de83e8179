"""Dataset ingestion, splitting and instruction-triplet construction."""
from __future__ import annotations

import base64
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Protocol

import numpy as np

from .core import BINARY, EKMAN6, MIKELS8, LabelSpace
from .errors import (
    ClientError,
    EmptyDataset,
    GenerationError,
    InvalidInput,
    LayoutError,
    OutOfVocabulary,
    ParseError,
    SplitTooSmall,
)

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = frozenset({".jpg", ".jpeg", ".png", ".bmp", ".gif", ".webp", ".tif", ".tiff"})


@dataclass(frozen=True)
class DatasetProfile:
    name: str
    space: LabelSpace
    expected_size: int


PROFILES = {
    p.name: p
    for p in (
        DatasetProfile("emoset", MIKELS8, 118_102),
        DatasetProfile("fi", MIKELS8, 21_824),
        DatasetProfile("emotion6", EKMAN6, 1_980),
        DatasetProfile("flickr", BINARY, 60_738),
        DatasetProfile("instagram", BINARY, 42_832),
    )
}


def get_profile(name: str) -> DatasetProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise InvalidInput(f"unknown dataset profile {name!r}; expected one of {sorted(PROFILES)}") from None


class Sample(NamedTuple):
    sample_id: str
    image_path: str
    label: str


@dataclass(frozen=True)
class SampleIndex:
    entries: tuple[Sample, ...]
    profile: DatasetProfile

    def __post_init__(self):
        entries = tuple(Sample(*e) for e in self.entries)
        object.__setattr__(self, "entries", entries)
        seen = set()
        for e in entries:
            if e.sample_id in seen:
                raise InvalidInput(f"duplicate sample_id {e.sample_id!r}")
            seen.add(e.sample_id)
            if e.label not in self.profile.space:
                raise OutOfVocabulary(e.label, self.profile.space.name)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def ids(self) -> list[str]:
        return [e.sample_id for e in self.entries]

    @property
    def labels(self) -> list[str]:
        return [e.label for e in self.entries]


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    val: float = 0.1
    test: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train, self.val, self.test)
        if any(not f > 0 for f in fracs):
            raise InvalidInput(f"split fractions must be positive, got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise InvalidInput(f"split fractions must sum to 1, got {sum(fracs)!r}")


def scan_dataset(root_dir, profile: DatasetProfile) -> SampleIndex:
    """Index ``<root>/<label>/<image>`` files, ordered lexicographically.

    Sample ids are the POSIX path relative to ``root_dir``.
    """
    root = Path(root_dir)
    missing = [label for label in profile.space.labels if not (root / label).is_dir()]
    if missing:
        raise LayoutError(f"{root}: missing label directories {missing} for profile {profile.name!r}")
    entries = []
    for label in sorted(profile.space.labels):
        for path in sorted((root / label).iterdir()):
            if path.is_file() and path.suffix.lower() in IMAGE_EXTENSIONS:
                rel = path.relative_to(root).as_posix()
                entries.append(Sample(rel, str(path), label))
    if not entries:
        raise EmptyDataset(f"{root}: no image files found")
    entries.sort(key=lambda e: e.sample_id)
    return SampleIndex(tuple(entries), profile)


def _floor_count(n: int, frac: float) -> int:
    return int(math.floor(n * frac + 1e-9))


def split_index(index: SampleIndex, spec: SplitSpec) -> tuple[SampleIndex, SampleIndex, SampleIndex]:
    """Seeded train/val/test partition. Val and test sizes round down."""
    if len(index) == 0:
        raise EmptyDataset("cannot split an empty index")
    n = len(index)
    n_val = _floor_count(n, spec.val)
    n_test = _floor_count(n, spec.test)
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise SplitTooSmall(f"{n} samples give split sizes {n_train}/{n_val}/{n_test}")
    ordered = sorted(index.entries, key=lambda e: e.sample_id)
    perm = np.random.default_rng(spec.seed).permutation(n)
    shuffled = [ordered[i] for i in perm]
    parts = (shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:])
    return tuple(
        SampleIndex(tuple(sorted(part, key=lambda e: e.sample_id)), index.profile) for part in parts
    )


# -- instruction triplets ----------------------------------------------------

KINDS = ("categorical", "conversation", "reasoning")

DESCRIPTIVE_QUESTIONS = {
    "conversation": "Observe the image and describe key elements of the image.",
    "reasoning": "Observe the image and describe the process of inferring the emotions conveyed in the image.",
}


@dataclass(frozen=True)
class InstructionTriplet:
    image_ref: str
    kind: str
    question: str
    response: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown triplet kind {self.kind!r}")


def _enumerate(labels: Iterable[str]) -> str:
    labels = list(labels)
    return ", ".join(labels[:-1]) + ", and " + labels[-1]


def render_categorical_question(space: LabelSpace) -> str:
    return (
        "Observe the image and select the emotion category that best matches this image "
        f"from the following {space.size} categories: {_enumerate(space.labels)}. "
        f"Answer in dictionary form as follows: {{'emotion':'{space.labels[0]}'}}"
    )


def categorical_response(label: str) -> str:
    return f"{{'emotion': '{label}'}}"


def build_categorical_triplet(sample: Sample, space: LabelSpace) -> InstructionTriplet:
    sample = Sample(*sample)
    if sample.label not in space:
        raise OutOfVocabulary(sample.label, space.name)
    return InstructionTriplet(
        sample.sample_id, "categorical", render_categorical_question(space), categorical_response(sample.label)
    )


class TextGenerationClient(Protocol):
    def generate(self, sample: Sample, kind: str, prompt: str) -> str: ...


class ReplayClient:
    """Serves recorded responses keyed by (sample_id, kind).

    Repeated keys in the file are served in file order, cycling once exhausted.
    """

    def __init__(self, responses: dict[tuple[str, str], list[str]]):
        self._responses = {k: list(v) for k, v in responses.items()}
        self._cursor: dict[tuple[str, str], int] = {}

    @classmethod
    def from_file(cls, path) -> "ReplayClient":
        responses: dict[tuple[str, str], list[str]] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    key = (rec["sample_id"], rec["kind"])
                    text = rec["text"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ParseError(f"{path}: bad replay record ({exc})", line=lineno) from None
                responses.setdefault(key, []).append(text)
        return cls(responses)

    def generate(self, sample: Sample, kind: str, prompt: str) -> str:
        key = (sample.sample_id, kind)
        if key not in self._responses:
            raise KeyError(f"no recorded response for {key}")
        texts = self._responses[key]
        i = self._cursor.get(key, 0)
        self._cursor[key] = i + 1
        return texts[i % len(texts)]


class RemoteTextClient:
    """POSTs ``{"prompt", "image"}`` (image base64) and reads ``{"text"}`` back.

    The bearer token is read from the environment variable named by
    ``token_env``; it is never taken from configuration files.
    """

    def __init__(self, endpoint: str, token_env: str | None = None, timeout: float = 60.0,
                 params: dict | None = None, transport=None):
        import httpx

        headers = {}
        if token_env:
            token = os.environ.get(token_env)
            if not token:
                raise ClientError(f"environment variable {token_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        self.endpoint = endpoint
        self.params = dict(params or {})
        self._client = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    def _image_payload(self, image_path: str) -> str | None:
        if not image_path or not Path(image_path).is_file():
            return None
        return base64.b64encode(Path(image_path).read_bytes()).decode("ascii")

    def generate(self, sample: Sample, kind: str, prompt: str) -> str:
        body = {"prompt": prompt, "image": self._image_payload(sample.image_path), **self.params}
        resp = self._client.post(self.endpoint, json=body)
        resp.raise_for_status()
        return resp.json()["text"]

    def close(self):
        self._client.close()


def generate_descriptive_triplets(sample: Sample, kinds, client: TextGenerationClient,
                                  per_kind: int = 1) -> list[InstructionTriplet]:
    sample = Sample(*sample)
    kinds = list(kinds)
    if not kinds:
        raise InvalidInput("kinds must be non-empty")
    out = []
    for kind in kinds:
        if kind not in DESCRIPTIVE_QUESTIONS:
            raise InvalidInput(f"{kind!r} is not a descriptive triplet kind")
        question = DESCRIPTIVE_QUESTIONS[kind]
        for _ in range(per_kind):
            try:
                text = client.generate(sample, kind, question)
            except Exception as exc:
                raise GenerationError(sample.sample_id, f"{type(exc).__name__}: {exc}") from exc
            text = (text or "").strip()
            if not text:
                raise GenerationError(sample.sample_id, f"empty {kind} response")
            out.append(InstructionTriplet(sample.sample_id, kind, question, text))
    return out


def triplet_to_line(t: InstructionTriplet) -> str:
    rec = {"image_ref": t.image_ref, "kind": t.kind, "question": t.question, "response": t.response}
    return json.dumps(rec, ensure_ascii=False)


def write_triplets(path, triplets: Iterable[InstructionTriplet], append: bool = False) -> None:
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(triplet_to_line(t) + "\n")


def read_triplets(path) -> list[InstructionTriplet]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(InstructionTriplet(rec["image_ref"], rec["kind"], rec["question"], rec["response"]))
            except (json.JSONDecodeError, KeyError, TypeError, InvalidInput) as exc:
                raise ParseError(f"{path}: malformed triplet ({exc})", line=lineno) from None
    return out
