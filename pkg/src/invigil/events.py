"""Sensor-event data model and session-log I/O.

A session log is a line-delimited JSON stream: a header record, a
reference-embeddings record, then timestamped sensor events (frame
detections, face embeddings, one-second audio windows, frame image
references). Parsing validates the stream into an immutable SessionLog;
serialization is canonical so identical logs give identical bytes.

Timestamps are integer milliseconds since session start, strictly
non-decreasing; ties keep file order so detections and embeddings can
share a frame.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Union

import numpy as np

from .config import BadConfig, EngineConfig, config_from_dict
from .errors import EngineError
from .facematch import Embedding, ReferenceSet
from .objectgate import BoundingBox, Detection, InvalidScore

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 16_000

# Detector label aliases normalised at parse time (COCO naming).
LABEL_ALIASES = {"cell phone": "phone", "mobile phone": "phone"}


class MalformedRecord(EngineError):
    """A log line is not a valid record; the message carries the line number."""


class NonMonotonicTime(EngineError):
    """An event timestamp is earlier than its predecessor."""


class MissingReferences(EngineError):
    """The log has no reference-embeddings record."""


class AudioIntegrityError(EngineError):
    """A referenced audio file fails its hash or length check."""


class EventKind(str, Enum):
    FRAME_DETECTIONS = "FrameDetections"
    FACE_EMBEDDING = "FaceEmbedding"
    AUDIO_WINDOW = "AudioWindow"
    FRAME_IMAGE = "FrameImage"


# Kinds subject to the frames-per-second cap; audio and embeddings are not.
FRAME_KINDS = frozenset({EventKind.FRAME_DETECTIONS, EventKind.FRAME_IMAGE})


@dataclass(frozen=True)
class FrameMeta:
    """Capture resolution; the deployed camera path uses 400x224."""

    width: int = 400
    height: int = 224

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"frame size must be positive, got {self.width}x{self.height}")


@dataclass(frozen=True)
class FrameDetections:
    detections: tuple[Detection, ...]


@dataclass(frozen=True)
class FaceEmbeddingPayload:
    embedding: Embedding


@dataclass(frozen=True, eq=False)
class AudioWindowPayload:
    """Exactly one second of mono PCM, inline or by file reference.

    Inline samples are validated to sample_rate entries at construction.
    File references carry a sha256 over the raw PCM bytes and are
    checked when loaded.
    """

    sample_rate: int = DEFAULT_SAMPLE_RATE
    samples: np.ndarray | None = None
    path: str | None = None
    sha256: str | None = None

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if (self.samples is None) == (self.path is None):
            raise ValueError("audio window needs exactly one of inline samples or a path")
        if self.samples is not None:
            arr = np.asarray(self.samples, dtype=np.float64)
            if arr.ndim != 1 or arr.shape[0] != self.sample_rate:
                raise ValueError(
                    f"audio window must hold exactly {self.sample_rate} samples, got shape {arr.shape}"
                )
            object.__setattr__(self, "samples", arr)

    @property
    def inline(self) -> bool:
        return self.samples is not None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AudioWindowPayload):
            return NotImplemented
        if (self.sample_rate, self.path, self.sha256) != (
            other.sample_rate,
            other.path,
            other.sha256,
        ):
            return False
        if (self.samples is None) != (other.samples is None):
            return False
        return self.samples is None or bool(np.array_equal(self.samples, other.samples))


@dataclass(frozen=True)
class FrameImageRef:
    """Reference to an evidence frame image on disk (binary PPM)."""

    path: str


Payload = Union[FrameDetections, FaceEmbeddingPayload, AudioWindowPayload, FrameImageRef]

_PAYLOAD_TYPES: dict[EventKind, type] = {
    EventKind.FRAME_DETECTIONS: FrameDetections,
    EventKind.FACE_EMBEDDING: FaceEmbeddingPayload,
    EventKind.AUDIO_WINDOW: AudioWindowPayload,
    EventKind.FRAME_IMAGE: FrameImageRef,
}


@dataclass(frozen=True)
class SensorEvent:
    t_ms: int
    kind: EventKind
    payload: Payload

    def __post_init__(self) -> None:
        if not isinstance(self.t_ms, int) or isinstance(self.t_ms, bool):
            raise ValueError(f"t_ms must be an integer, got {self.t_ms!r}")
        if self.t_ms < 0:
            raise ValueError(f"t_ms must be non-negative, got {self.t_ms}")
        expected = _PAYLOAD_TYPES[EventKind(self.kind)]
        if not isinstance(self.payload, expected):
            raise ValueError(
                f"payload for {self.kind} must be {expected.__name__}, got {type(self.payload).__name__}"
            )


@dataclass(frozen=True)
class SessionLog:
    session_id: str
    config: EngineConfig
    reference_embeddings: ReferenceSet
    events: tuple[SensorEvent, ...]

    def __post_init__(self) -> None:
        events = tuple(self.events)
        for prev, cur in zip(events, events[1:]):
            if cur.t_ms < prev.t_ms:
                raise NonMonotonicTime(
                    f"event at t={cur.t_ms} follows event at t={prev.t_ms}"
                )
        object.__setattr__(self, "events", events)


# ---------------------------------------------------------------------------
# Parsing


def _expect(record: Mapping, key: str, lineno: int) -> Any:
    if key not in record:
        raise MalformedRecord(f"line {lineno}: missing key {key!r}")
    return record[key]


def _as_int(value: Any, what: str, lineno: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise MalformedRecord(f"line {lineno}: {what} must be an integer, got {value!r}")
    return value


def _as_number(value: Any, what: str, lineno: int) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedRecord(f"line {lineno}: {what} must be a number, got {value!r}")
    return float(value)


def _parse_box(rec: Any, lineno: int) -> BoundingBox:
    if not isinstance(rec, Mapping):
        raise MalformedRecord(f"line {lineno}: box must be an object")
    try:
        return BoundingBox(
            x=_as_number(_expect(rec, "x", lineno), "box.x", lineno),
            y=_as_number(_expect(rec, "y", lineno), "box.y", lineno),
            w=_as_number(_expect(rec, "w", lineno), "box.w", lineno),
            h=_as_number(_expect(rec, "h", lineno), "box.h", lineno),
        )
    except ValueError as exc:
        raise MalformedRecord(f"line {lineno}: {exc}") from exc


def _parse_payload(kind: EventKind, payload: Any, lineno: int) -> Payload:
    if not isinstance(payload, Mapping):
        raise MalformedRecord(f"line {lineno}: payload must be an object")
    if kind is EventKind.FRAME_DETECTIONS:
        items = _expect(payload, "detections", lineno)
        if not isinstance(items, list):
            raise MalformedRecord(f"line {lineno}: detections must be a list")
        dets = []
        for item in items:
            if not isinstance(item, Mapping):
                raise MalformedRecord(f"line {lineno}: detection must be an object")
            label = str(_expect(item, "class", lineno)).lower()
            label = LABEL_ALIASES.get(label, label)
            score = _as_number(_expect(item, "score", lineno), "score", lineno)
            box = _parse_box(_expect(item, "box", lineno), lineno)
            try:
                dets.append(Detection(label=label, score=score, box=box))
            except InvalidScore as exc:
                raise MalformedRecord(f"line {lineno}: {exc}") from exc
        return FrameDetections(detections=tuple(dets))
    if kind is EventKind.FACE_EMBEDDING:
        values = _expect(payload, "embedding", lineno)
        if not isinstance(values, list):
            raise MalformedRecord(f"line {lineno}: embedding must be a list")
        try:
            return FaceEmbeddingPayload(embedding=Embedding.from_list(values))
        except (EngineError, TypeError, ValueError) as exc:
            raise MalformedRecord(f"line {lineno}: {exc}") from exc
    if kind is EventKind.AUDIO_WINDOW:
        rate = _as_int(payload.get("sample_rate", DEFAULT_SAMPLE_RATE), "sample_rate", lineno)
        samples = payload.get("samples")
        path = payload.get("path")
        sha = payload.get("sha256")
        try:
            if samples is not None:
                return AudioWindowPayload(
                    sample_rate=rate, samples=np.asarray(samples, dtype=np.float64)
                )
            if path is None:
                raise ValueError("audio window needs samples or a path")
            return AudioWindowPayload(
                sample_rate=rate, path=str(path), sha256=None if sha is None else str(sha)
            )
        except (TypeError, ValueError) as exc:
            raise MalformedRecord(f"line {lineno}: {exc}") from exc
    if kind is EventKind.FRAME_IMAGE:
        return FrameImageRef(path=str(_expect(payload, "path", lineno)))
    raise MalformedRecord(f"line {lineno}: unhandled kind {kind}")


def parse_session_log(stream: bytes | str | Iterable[bytes]) -> SessionLog:
    """Parse and validate a line-delimited session log.

    Accepts raw bytes, text, or an iterable of byte lines (an open
    binary file). Raises MalformedRecord with the offending line number,
    NonMonotonicTime when timestamps go backwards, and MissingReferences
    when the reference-embeddings record is absent.
    """
    if isinstance(stream, bytes):
        text = stream.decode("utf-8")
    elif isinstance(stream, str):
        text = stream
    else:
        text = b"".join(stream).decode("utf-8")
    lines = [ln for ln in text.split("\n") if ln.strip()]
    if not lines:
        raise MissingReferences("empty log: no reference embeddings")

    def record(lineno: int) -> Mapping:
        try:
            rec = json.loads(lines[lineno - 1])
        except json.JSONDecodeError as exc:
            raise MalformedRecord(f"line {lineno}: not valid JSON: {exc}") from exc
        if not isinstance(rec, Mapping):
            raise MalformedRecord(f"line {lineno}: record must be a JSON object")
        return rec

    header = record(1)
    if header.get("kind") != "header":
        raise MalformedRecord(f"line 1: first record must be the header, got kind {header.get('kind')!r}")
    session_id = str(_expect(header, "session_id", 1))
    raw_config = header.get("config", {})
    if not isinstance(raw_config, Mapping):
        raise MalformedRecord("line 1: config must be an object")
    try:
        config = config_from_dict(raw_config)
    except BadConfig as exc:
        raise MalformedRecord(f"line 1: {exc}") from exc

    if len(lines) < 2:
        raise MissingReferences("log ends before the reference embeddings record")
    refs_rec = record(2)
    if refs_rec.get("kind") != "references":
        raise MissingReferences(
            f"second record must hold reference embeddings, got kind {refs_rec.get('kind')!r}"
        )
    rows = _expect(refs_rec, "embeddings", 2)
    if not isinstance(rows, list) or not rows:
        raise MissingReferences("reference embeddings record is empty")
    try:
        references = ReferenceSet.from_lists(rows, expected_count=config.reference_count)
    except (EngineError, TypeError, ValueError) as exc:
        raise MalformedRecord(f"line 2: {exc}") from exc

    events: list[SensorEvent] = []
    last_t: int | None = None
    for lineno in range(3, len(lines) + 1):
        rec = record(lineno)
        t_ms = _as_int(_expect(rec, "t_ms", lineno), "t_ms", lineno)
        if t_ms < 0:
            raise MalformedRecord(f"line {lineno}: t_ms must be non-negative, got {t_ms}")
        kind_raw = _expect(rec, "kind", lineno)
        try:
            kind = EventKind(kind_raw)
        except ValueError as exc:
            raise MalformedRecord(f"line {lineno}: unknown event kind {kind_raw!r}") from exc
        if last_t is not None and t_ms < last_t:
            raise NonMonotonicTime(
                f"line {lineno}: t_ms {t_ms} is earlier than previous event at {last_t}"
            )
        last_t = t_ms
        payload = _parse_payload(kind, _expect(rec, "payload", lineno), lineno)
        events.append(SensorEvent(t_ms=t_ms, kind=kind, payload=payload))

    return SessionLog(
        session_id=session_id,
        config=config,
        reference_embeddings=references,
        events=tuple(events),
    )


# ---------------------------------------------------------------------------
# Serialization


def _dump(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _payload_to_dict(payload: Payload) -> dict:
    if isinstance(payload, FrameDetections):
        return {
            "detections": [
                {
                    "class": d.label,
                    "score": d.score,
                    "box": {"x": d.box.x, "y": d.box.y, "w": d.box.w, "h": d.box.h},
                }
                for d in payload.detections
            ]
        }
    if isinstance(payload, FaceEmbeddingPayload):
        return {"embedding": [float(v) for v in payload.embedding.values]}
    if isinstance(payload, AudioWindowPayload):
        out: dict[str, Any] = {"sample_rate": payload.sample_rate}
        if payload.inline:
            out["samples"] = [float(v) for v in payload.samples]
        else:
            out["path"] = payload.path
            if payload.sha256 is not None:
                out["sha256"] = payload.sha256
        return out
    if isinstance(payload, FrameImageRef):
        return {"path": payload.path}
    raise TypeError(f"unknown payload type {type(payload).__name__}")


def serialize_session_log(log: SessionLog) -> bytes:
    """Canonical line-delimited form; parses back to an equal SessionLog."""
    lines = [
        _dump({"kind": "header", "session_id": log.session_id, "config": log.config.to_dict()}),
        _dump(
            {
                "kind": "references",
                "embeddings": [
                    [float(v) for v in emb.values]
                    for emb in log.reference_embeddings.references
                ],
            }
        ),
    ]
    for ev in log.events:
        lines.append(
            _dump({"t_ms": ev.t_ms, "kind": ev.kind.value, "payload": _payload_to_dict(ev.payload)})
        )
    return ("\n".join(lines) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# Sampling policy


def resample_frames(log: SessionLog, max_fps: float | None = None) -> SessionLog:
    """Thin frame-kind events to at most one per 1000/max_fps ms bucket.

    The first event in each bucket is kept and buckets are tracked per
    kind, so paired detection and image events survive together. Audio
    windows and embeddings pass through untouched; order is preserved.
    Idempotent.
    """
    if max_fps is None:
        max_fps = log.config.max_fps
    if max_fps <= 0:
        raise ValueError(f"max_fps must be positive, got {max_fps}")
    seen: dict[EventKind, int] = {}
    kept: list[SensorEvent] = []
    for ev in log.events:
        if ev.kind not in FRAME_KINDS:
            kept.append(ev)
            continue
        bucket = math.floor(ev.t_ms * max_fps / 1000.0)
        if seen.get(ev.kind) == bucket:
            continue
        seen[ev.kind] = bucket
        kept.append(ev)
    return replace(log, events=tuple(kept))


# ---------------------------------------------------------------------------
# Audio resolution


def load_audio_samples(payload: AudioWindowPayload, base_dir: str | Path = ".") -> np.ndarray:
    """Return the window's samples, reading and verifying file references.

    Referenced files hold raw 16-bit little-endian PCM. The sha256 (when
    present) is checked over the raw bytes, and the decoded length must
    be exactly one second at the declared sample rate.
    """
    if payload.inline:
        assert payload.samples is not None
        return payload.samples
    path = Path(base_dir) / payload.path
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise AudioIntegrityError(f"cannot read audio file {path}: {exc}") from exc
    if payload.sha256 is not None:
        digest = hashlib.sha256(raw).hexdigest()
        if digest != payload.sha256.lower():
            raise AudioIntegrityError(
                f"audio file {path} hash mismatch: expected {payload.sha256}, got {digest}"
            )
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if samples.shape[0] != payload.sample_rate:
        raise AudioIntegrityError(
            f"audio file {path} holds {samples.shape[0]} samples, expected {payload.sample_rate}"
        )
    return samples


def resolve_audio_refs(log: SessionLog, base_dir: str | Path) -> SessionLog:
    """Materialise all file-referenced audio windows as inline samples."""
    events = []
    for ev in log.events:
        if ev.kind is EventKind.AUDIO_WINDOW and not ev.payload.inline:
            samples = load_audio_samples(ev.payload, base_dir)
            payload = AudioWindowPayload(sample_rate=ev.payload.sample_rate, samples=samples)
            ev = replace(ev, payload=payload)
        events.append(ev)
    return replace(log, events=tuple(events))


def pcm_bytes(samples: np.ndarray) -> bytes:
    """Encode float samples in [-1, 1] as raw 16-bit little-endian PCM.

    Uses the same 1/32768 step as the decoder, so values already on the
    16-bit grid survive an encode/decode round trip bit-exactly.
    """
    scaled = np.round(np.asarray(samples, dtype=np.float64) * 32768.0)
    return np.clip(scaled, -32768, 32767).astype("<i2").tobytes()
