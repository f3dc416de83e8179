"""Feature, teacher and VLM prediction sources.

Recorded files are the default interchange between stages; the synthetic
generator builds complementarity regimes with exact bucket counts, and the
remote clients are thin adapters for live encoders and VLMs.
"""
from __future__ import annotations

import base64
import json
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Protocol

import numpy as np

from .core import SPACES, LabelSpace, get_space, softened_softmax
from .data import RemoteTextClient, Sample, categorical_response, render_categorical_question
from .errors import (
    DuplicateSample,
    ExtractionError,
    InfeasibleSpec,
    InvalidInput,
    OutOfVocabulary,
    ParseError,
    SchemaError,
    UnparseableResponse,
)

# -- response parsing --------------------------------------------------------

_DICT_RE = re.compile(r"""['"]?emotion['"]?\s*:\s*['"]?\s*([a-z][a-z _-]*?)\s*['"]?\s*[},]""", re.IGNORECASE)


def parse_vlm_response(text: str, space: LabelSpace) -> str:
    """Extract a label from a VLM answer.

    The dictionary form ``{'emotion': '<label>'}`` wins when present; a label
    found there but absent from ``space`` is an error rather than a cue to
    fall back. Otherwise the earliest whole-word mention of a space label is
    returned.
    """
    text = text or ""
    m = _DICT_RE.search(text)
    if m:
        label = m.group(1).strip().lower()
        if label not in space:
            raise OutOfVocabulary(label, space.name)
        return label
    lowered = text.lower()
    best = None
    for label in space.labels:
        hit = re.search(rf"\b{re.escape(label)}\b", lowered)
        if hit and (best is None or hit.start() < best[0]):
            best = (hit.start(), label)
    if best is None:
        raise UnparseableResponse(f"no {space.name} label in response {text[:80]!r}")
    return best[1]


class VlmPrediction(NamedTuple):
    sample_id: str
    raw_text: str
    parsed: int | None  # label index, None on parse failure

    def gate_input(self, num_classes: int) -> np.ndarray:
        """One-hot on the parsed label, uniform when parsing failed."""
        if self.parsed is None:
            return np.full(num_classes, 1.0 / num_classes)
        v = np.zeros(num_classes)
        v[self.parsed] = 1.0
        return v


def make_vlm_prediction(sample_id: str, raw_text: str, space: LabelSpace) -> VlmPrediction:
    try:
        parsed = space.index(parse_vlm_response(raw_text, space))
    except (UnparseableResponse, OutOfVocabulary):
        parsed = None
    return VlmPrediction(sample_id, raw_text, parsed)


def vlm_matrix(preds: Iterable[VlmPrediction], num_classes: int) -> np.ndarray:
    return np.stack([p.gate_input(num_classes) for p in preds])


# -- recorded files ----------------------------------------------------------


class FeatureRecord(NamedTuple):
    sample_id: str
    vector: np.ndarray


class TeacherRecord(NamedTuple):
    sample_id: str
    logits: np.ndarray


@dataclass
class VectorTable:
    """Row-aligned ids and vectors for one record kind ("features" or "teacher")."""

    kind: str
    space: LabelSpace
    ids: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.ids):
            raise SchemaError(f"{self.kind}: {len(self.ids)} ids vs values of shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise SchemaError(f"{self.kind}: non-finite entries")
        seen = set()
        for sid in self.ids:
            if sid in seen:
                raise DuplicateSample(sid)
            seen.add(sid)
        self._pos = {sid: i for i, sid in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, sample_id: str) -> np.ndarray:
        return self.values[self._pos[sample_id]]

    def __contains__(self, sample_id) -> bool:
        return sample_id in self._pos

    def select(self, ids: Iterable[str]) -> np.ndarray:
        ids = list(ids)
        missing = [s for s in ids if s not in self._pos]
        if missing:
            raise SchemaError(f"{self.kind}: no rows for {len(missing)} sample(s), e.g. {missing[:3]}")
        return self.values[[self._pos[s] for s in ids]]

    def records(self):
        rec = FeatureRecord if self.kind == "features" else TeacherRecord
        return [rec(sid, row) for sid, row in zip(self.ids, self.values)]


_DIM_KEY = {"features": "d", "teacher": "C"}


def _read_header(fh, path, fmt: str) -> dict:
    first = fh.readline()
    try:
        header = json.loads(first)
    except json.JSONDecodeError:
        raise SchemaError(f"{path}: first line must be a JSON header") from None
    if header.get("format") != fmt:
        raise SchemaError(f"{path}: expected format {fmt!r}, header says {header.get('format')!r}")
    for key in ("space", "count"):
        if key not in header:
            raise SchemaError(f"{path}: header missing {key!r}")
    return header


def _check_id(sample_id: str) -> None:
    if not sample_id or any(ch in sample_id for ch in "\t\n\r"):
        raise SchemaError(f"sample_id {sample_id!r} must be non-empty and contain no tabs or newlines")


def write_vector_file(path, table: VectorTable) -> None:
    dim_key = _DIM_KEY[table.kind]
    header = {"format": table.kind, "space": table.space.name, dim_key: table.dim, "count": len(table)}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for sid, row in zip(table.ids, table.values):
            _check_id(sid)
            fh.write(sid + "\t" + "\t".join(repr(float(x)) for x in row) + "\n")


def _load_vector_file(path, kind: str, space: LabelSpace | None = None) -> VectorTable:
    dim_key = _DIM_KEY[kind]
    with open(path, encoding="utf-8") as fh:
        header = _read_header(fh, path, kind)
        file_space = get_space(header["space"]) if header["space"] in SPACES else None
        if space is None:
            if file_space is None:
                raise SchemaError(f"{path}: unknown space {header['space']!r}; pass the space explicitly")
            space = file_space
        elif header["space"] != space.name:
            raise SchemaError(f"{path}: space {header['space']!r} does not match {space.name!r}")
        if dim_key not in header:
            raise SchemaError(f"{path}: header missing {dim_key!r}")
        dim = int(header[dim_key])
        if kind == "teacher" and dim != space.size:
            raise SchemaError(f"{path}: C={dim} but space {space.name!r} has {space.size} labels")
        ids, rows, seen = [], [], set()
        for lineno, line in enumerate(fh, 2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) - 1 != dim:
                raise SchemaError(f"{path}: line {lineno} has {len(parts) - 1} values, expected {dim_key}={dim}")
            sid = parts[0]
            if sid in seen:
                raise DuplicateSample(sid, path)
            seen.add(sid)
            try:
                rows.append([float(x) for x in parts[1:]])
            except ValueError:
                raise SchemaError(f"{path}: line {lineno} has a non-numeric value") from None
            ids.append(sid)
    if len(ids) != int(header["count"]):
        raise SchemaError(f"{path}: header count {header['count']} but {len(ids)} rows")
    values = np.array(rows, dtype=np.float64).reshape(len(ids), dim)
    return VectorTable(kind, space, ids, values)


def load_feature_file(path, space: LabelSpace | None = None) -> VectorTable:
    return _load_vector_file(path, "features", space)


def load_teacher_file(path, space: LabelSpace | None = None) -> VectorTable:
    return _load_vector_file(path, "teacher", space)


def write_vlm_file(path, preds: Iterable[VlmPrediction], space: LabelSpace) -> None:
    preds = list(preds)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": "vlm", "space": space.name, "count": len(preds)}) + "\n")
        for p in preds:
            fh.write(json.dumps({"sample_id": p.sample_id, "raw_text": p.raw_text}, ensure_ascii=False) + "\n")


def _load_jsonl_records(path, fmt: str, fields: tuple[str, ...]):
    with open(path, encoding="utf-8") as fh:
        header = _read_header(fh, path, fmt)
        space = get_space(header["space"])
        out, seen = [], set()
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                values = tuple(rec[f] for f in fields)
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}: malformed {fmt} record ({exc})", line=lineno) from None
            if values[0] in seen:
                raise DuplicateSample(values[0], path)
            seen.add(values[0])
            out.append(values)
    if len(out) != int(header["count"]):
        raise SchemaError(f"{path}: header count {header['count']} but {len(out)} records")
    return space, out


def load_vlm_file(path, space: LabelSpace | None = None) -> list[VlmPrediction]:
    file_space, rows = _load_jsonl_records(path, "vlm", ("sample_id", "raw_text"))
    if space is not None and space.name != file_space.name:
        raise SchemaError(f"{path}: space {file_space.name!r} does not match {space.name!r}")
    return [make_vlm_prediction(sid, text, file_space) for sid, text in rows]


def write_label_file(path, ids: Iterable[str], labels: Iterable[str], space: LabelSpace) -> None:
    ids, labels = list(ids), list(labels)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": "labels", "space": space.name, "count": len(ids)}) + "\n")
        for sid, label in zip(ids, labels):
            fh.write(json.dumps({"sample_id": sid, "label": label}) + "\n")


def load_label_file(path) -> tuple[LabelSpace, dict[str, str]]:
    space, rows = _load_jsonl_records(path, "labels", ("sample_id", "label"))
    for _, label in rows:
        if label not in space:
            raise OutOfVocabulary(label, space.name)
    return space, dict(rows)


# -- synthetic regimes -------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Complementary teacher/VLM regime over class-informative features.

    Features concatenate a cluster keyed on the true label with a cluster
    keyed on the teacher's choice, so a linear head can fit either target.
    """

    n: int = 2000
    C: int = 8
    d: int = 32
    teacher_accuracy: float = 0.7
    vlm_accuracy: float = 0.7
    overlap: float = 0.5
    confidence_correct: float = 0.9
    confidence_wrong: float = 0.6
    seed: int = 0
    separation: float = 2.0
    noise: float = 1.0

    def buckets(self) -> dict[str, int]:
        if self.n < 1 or self.C < 2 or self.d < 2:
            raise InfeasibleSpec(f"need n >= 1, C >= 2, d >= 2 (got n={self.n}, C={self.C}, d={self.d})")
        for name in ("teacher_accuracy", "vlm_accuracy"):
            if not 0 < getattr(self, name) <= 1:
                raise InfeasibleSpec(f"{name} must lie in (0, 1]")
        if not 0 <= self.overlap <= min(self.teacher_accuracy, self.vlm_accuracy):
            raise InfeasibleSpec(
                f"overlap {self.overlap} must lie in [0, min(teacher, vlm accuracy)]"
            )
        for name in ("confidence_correct", "confidence_wrong"):
            c = getattr(self, name)
            if not 1.0 / self.C < c < 1:
                raise InfeasibleSpec(f"{name} must lie in (1/C, 1), got {c}")

        def count(frac):
            return int(math.floor(self.n * frac + 1e-9))

        both = count(self.overlap)
        a_only = count(self.teacher_accuracy - self.overlap)
        b_only = count(self.vlm_accuracy - self.overlap)
        neither = self.n - both - a_only - b_only
        if neither < 0 or self.teacher_accuracy + self.vlm_accuracy - self.overlap > 1 + 1e-9:
            raise InfeasibleSpec("teacher and VLM correct sets cannot fit in n samples")
        return {"both": both, "a_only": a_only, "b_only": b_only, "neither": neither}


def space_for_classes(num_classes: int) -> LabelSpace:
    for space in SPACES.values():
        if space.size == num_classes:
            return space
    return LabelSpace(f"synthetic{num_classes}", tuple(f"class{i}" for i in range(num_classes)))


@dataclass
class SyntheticData:
    space: LabelSpace
    ids: list[str]
    labels: list[str]
    features: VectorTable
    teacher: VectorTable
    vlm: list[VlmPrediction]
    buckets: dict[str, int] = field(default_factory=dict)

    @property
    def label_indices(self) -> np.ndarray:
        return np.array([self.space.index(label) for label in self.labels])


def _choice_logits(choice: np.ndarray, truth: np.ndarray, C: int, conf_ok: float, conf_bad: float) -> np.ndarray:
    conf = np.where(choice == truth, conf_ok, conf_bad)
    probs = np.repeat(((1 - conf) / (C - 1))[:, None], C, axis=1)
    probs[np.arange(len(choice)), choice] = conf
    return np.log(probs)


def generate_synthetic(spec: SyntheticSpec, space: LabelSpace | None = None) -> SyntheticData:
    buckets = spec.buckets()
    if space is None:
        space = space_for_classes(spec.C)
    elif space.size != spec.C:
        raise InfeasibleSpec(f"space {space.name!r} has {space.size} labels but spec C={spec.C}")
    n, C, d = spec.n, spec.C, spec.d
    rng = np.random.default_rng(spec.seed)

    truth = rng.permutation(np.arange(n) % C)
    order = rng.permutation(n)
    teacher_ok = np.zeros(n, dtype=bool)
    vlm_ok = np.zeros(n, dtype=bool)
    b, a, v = buckets["both"], buckets["a_only"], buckets["b_only"]
    teacher_ok[order[: b + a]] = True
    vlm_ok[order[:b]] = True
    vlm_ok[order[b + a: b + a + v]] = True

    def choose(ok):
        wrong = (truth + rng.integers(1, C, size=n)) % C
        return np.where(ok, truth, wrong)

    teacher_choice = choose(teacher_ok)
    vlm_choice = choose(vlm_ok)

    d_truth = (d + 1) // 2
    centers_truth = rng.normal(size=(C, d_truth)) * spec.separation
    centers_teacher = rng.normal(size=(C, d - d_truth)) * spec.separation
    x = np.hstack([centers_truth[truth], centers_teacher[teacher_choice]])
    x += rng.normal(size=(n, d)) * spec.noise

    ids = [f"s{i:06d}" for i in range(n)]
    labels = [space.labels[i] for i in truth]
    teacher_logits = _choice_logits(teacher_choice, truth, C, spec.confidence_correct, spec.confidence_wrong)
    vlm = [
        VlmPrediction(sid, categorical_response(space.labels[c]), int(c)) for sid, c in zip(ids, vlm_choice)
    ]
    return SyntheticData(
        space=space,
        ids=ids,
        labels=labels,
        features=VectorTable("features", space, ids, x),
        teacher=VectorTable("teacher", space, ids, teacher_logits),
        vlm=vlm,
        buckets=buckets,
    )


def teacher_distribution(teacher: VectorTable, ids: Iterable[str]) -> np.ndarray:
    return softened_softmax(teacher.select(ids), 1.0)


# -- live clients ------------------------------------------------------------


class EncoderClient(Protocol):
    def encode(self, image_path: str) -> np.ndarray: ...


class RemoteEncoderClient(RemoteTextClient):
    """POSTs ``{"image": <base64>}`` and expects ``{"embedding": [[...], ...]}``."""

    def encode(self, image_path: str) -> np.ndarray:
        data = Path(image_path).read_bytes()
        body = {"image": base64.b64encode(data).decode("ascii"), **self.params}
        resp = self._client.post(self.endpoint, json=body)
        resp.raise_for_status()
        return np.asarray(resp.json()["embedding"], dtype=np.float64)


class RemoteVlmClient(RemoteTextClient):
    """Asks the categorical question and parses the reply.

    Decoding parameters (temperature, top_p, ...) pass through ``params``
    untouched; no defaults are imposed here.
    """

    def predict(self, sample: Sample, space: LabelSpace) -> VlmPrediction:
        sample = Sample(*sample)
        text = self.generate(sample, "categorical", render_categorical_question(space))
        return make_vlm_prediction(sample.sample_id, text, space)


def mean_pool(tokens) -> np.ndarray:
    arr = np.asarray(tokens, dtype=np.float64)
    if arr.ndim == 1:
        return arr
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise InvalidInput(f"expected (tokens, d) array, got shape {arr.shape}")
    return arr.mean(axis=0)


def extract_features(samples, encoder_client: EncoderClient, space: LabelSpace,
                     cache_path=None, max_workers: int = 4) -> VectorTable:
    """Encode each image and mean-pool its token sequence to one vector.

    ``samples`` holds :class:`Sample` entries or plain paths (the path then
    doubles as the sample id). Failures are collected and raised together.
    """
    items = []
    for s in samples:
        if isinstance(s, (str, Path)):
            items.append((str(s), str(s)))
        else:
            s = Sample(*s)
            items.append((s.sample_id, s.image_path))

    def work(item):
        sid, path = item
        try:
            return sid, mean_pool(encoder_client.encode(path)), None
        except Exception as exc:
            return sid, None, f"{path}: {type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        results = list(pool.map(work, items))
    failures = {path: err for (sid, path), (_, _, err) in zip(items, results) if err}
    if failures:
        raise ExtractionError(failures)
    dims = {vec.shape for _, vec, _ in results}
    if len(dims) != 1:
        raise SchemaError(f"encoder returned inconsistent dimensions {sorted(dims)}")
    table = VectorTable("features", space, [sid for sid, _, _ in results], np.stack([v for _, v, _ in results]))
    if cache_path is not None:
        write_vector_file(cache_path, table)
    return table
