"""Singer identification: inference windows, track embeddings, profile db.

Profile database file ("VPD1"), little-endian::

    magic        4 bytes  b"VPD1"
    version      u8       1
    fingerprint  u32      weight-archive fingerprint of the embedder
    dim          u32
    count        u32      number of profiles
    per profile:
        id_len u32, singer_id utf-8
        enrolled u32              enrollment count
        n_ids u32, then n_ids x (len u32, track id utf-8)
        reference dim x float32   unit norm
    crc32        u32      over every preceding byte
"""

from __future__ import annotations

import struct
import threading
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import TARGET_RATE_HZ, AudioClip, ensure_rate
from .errors import (
    CorruptArchiveError,
    IncompatibleDbError,
    InvalidArgumentError,
    NoReferencesError,
    TooShortError,
    UndefinedDistanceError,
)
from .nn.archive import write_atomic

DB_MAGIC = b"VPD1"
DB_VERSION = 1


def extract_windows(clip: AudioClip, n: int = 5, dur_s: float = 10.0, seed: int | None = None) -> list[AudioClip]:
    """``n`` windows of ``dur_s`` seconds with evenly spaced start offsets.

    Offsets are round(i * (len - W) / (n - 1)), so the first window starts
    at 0 and the last one ends at the clip's end. Passing ``seed`` draws
    the offsets uniformly instead.
    """
    if n < 1 or dur_s <= 0:
        raise InvalidArgumentError("need n >= 1 and dur_s > 0")
    width = int(round(dur_s * clip.sample_rate_hz))
    span = len(clip) - width
    if span < 0:
        raise TooShortError(f"clip is {clip.duration_s:.2f} s, windows need {dur_s} s")
    if seed is not None:
        offsets = np.sort(np.random.default_rng(seed).integers(0, span + 1, size=n))
    elif n == 1:
        offsets = [0]
    else:
        offsets = [int(round(i * span / (n - 1))) for i in range(n)]
    return [clip.replace(clip.samples[o : o + width]) for o in offsets]


@dataclass(frozen=True, eq=False)
class Embedding:
    vector: np.ndarray
    track_id: str = ""
    fingerprint: int | None = None

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise InvalidArgumentError("embedding must be a finite 1-D vector")
        if not np.any(v):
            raise UndefinedDistanceError(f"embedding of {self.track_id!r} has zero norm")
        object.__setattr__(self, "vector", v)

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


def _vec(x) -> np.ndarray:
    return x.vector if isinstance(x, Embedding) else np.asarray(x, dtype=np.float64)


def cosine_distance(a, b) -> float:
    """1 - cos(a, b); accepts Embeddings or plain vectors."""
    a, b = _vec(a), _vec(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise UndefinedDistanceError("cosine distance is undefined for a zero vector")
    return float(np.clip(1.0 - np.dot(a, b) / (na * nb), 0.0, 2.0))


def window_embeddings(clip: AudioClip, embedder, n: int = 5, dur_s: float = 10.0) -> np.ndarray:
    from .models.architectures import window_features

    windows = extract_windows(ensure_rate(clip, TARGET_RATE_HZ), n, dur_s)
    return embedder.embed(window_features(windows))


def embed_track(clip: AudioClip, embedder, n: int = 5, dur_s: float = 10.0) -> Embedding:
    """Mean of the raw (unnormalized) window embeddings."""
    vectors = window_embeddings(clip, embedder, n, dur_s)
    return Embedding(vectors.mean(axis=0), clip.source_id, getattr(embedder, "fingerprint", None))


@dataclass(frozen=True, eq=False)
class SingerProfile:
    singer_id: str
    reference: np.ndarray  # float32, unit norm
    count: int
    track_ids: tuple = ()

    def __post_init__(self):
        if self.count < 1:
            raise InvalidArgumentError("a profile needs at least one enrolled track")


def make_profile(singer_id: str, embeddings: list[Embedding]) -> SingerProfile:
    if not embeddings:
        raise InvalidArgumentError(f"no embeddings to enroll for {singer_id!r}")
    mean = np.mean([e.vector for e in embeddings], axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0:
        raise UndefinedDistanceError(f"embeddings for {singer_id!r} cancel out")
    ref = (mean / norm).astype(np.float32)
    return SingerProfile(singer_id, ref, len(embeddings), tuple(e.track_id for e in embeddings))


class ProfileDB:
    """Enrolled singer references, bound to one embedder fingerprint.

    Readers work on an immutable snapshot of the profile map; writers build
    a new map under a lock and swap it in, so a reader sees either the old
    or the new profile, never a partial one.
    """

    def __init__(self, fingerprint: int | None = None, dim: int | None = None):
        self.fingerprint = fingerprint
        self.dim = dim
        self._profiles: dict[str, SingerProfile] = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._profiles)

    def __contains__(self, singer_id):
        return singer_id in self._profiles

    def __getitem__(self, singer_id) -> SingerProfile:
        return self._profiles[singer_id]

    @property
    def profiles(self) -> dict[str, SingerProfile]:
        return self._profiles

    def singer_ids(self) -> list[str]:
        return sorted(self._profiles)

    def _check(self, fingerprint, dim):
        if self.fingerprint is not None and fingerprint is not None and fingerprint != self.fingerprint:
            raise IncompatibleDbError(
                f"db was built with embedder {self.fingerprint:08x}, got {fingerprint:08x}"
            )
        if self.dim is not None and dim != self.dim:
            raise IncompatibleDbError(f"db holds {self.dim}-d references, got {dim}-d")

    def put(self, profile: SingerProfile, fingerprint: int | None = None) -> SingerProfile:
        dim = profile.reference.shape[0]
        with self._lock:
            self._check(fingerprint, dim)
            if self.fingerprint is None:
                self.fingerprint = fingerprint
            if self.dim is None:
                self.dim = dim
            updated = dict(self._profiles)
            updated[profile.singer_id] = profile
            self._profiles = updated
        return profile

    def enroll_embeddings(self, singer_id: str, embeddings: list[Embedding]) -> SingerProfile:
        fps = {e.fingerprint for e in embeddings}
        if len(fps) > 1:
            raise IncompatibleDbError(f"embeddings for {singer_id!r} come from different embedders")
        return self.put(make_profile(singer_id, embeddings), fps.pop() if fps else None)

    # -- persistence

    def to_bytes(self) -> bytes:
        snapshot = self._profiles
        dim = self.dim or 0
        parts = [DB_MAGIC, struct.pack("<BIII", DB_VERSION, self.fingerprint or 0, dim, len(snapshot))]
        for sid in sorted(snapshot):
            p = snapshot[sid]
            raw_id = sid.encode("utf-8")
            parts.append(struct.pack("<I", len(raw_id)) + raw_id)
            parts.append(struct.pack("<II", p.count, len(p.track_ids)))
            for tid in p.track_ids:
                raw = tid.encode("utf-8")
                parts.append(struct.pack("<I", len(raw)) + raw)
            parts.append(np.asarray(p.reference, dtype="<f4").tobytes())
        body = b"".join(parts)
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ProfileDB":
        if len(raw) < 21 or raw[:4] != DB_MAGIC:
            raise CorruptArchiveError(f"bad magic; expected {DB_MAGIC!r}")
        body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
        if zlib.crc32(body) != crc:
            raise CorruptArchiveError("checksum mismatch (truncated or corrupted profile db)")
        version, fp, dim, count = struct.unpack_from("<BIII", body, 4)
        if version != DB_VERSION:
            raise CorruptArchiveError(f"unsupported profile db version {version}")
        # 0 marks "not yet bound" for both fields
        db = cls(fp or None, dim or None)
        pos = 17
        profiles = {}

        def text():
            nonlocal pos
            (n,) = struct.unpack_from("<I", body, pos)
            pos += 4
            out = body[pos : pos + n]
            if len(out) != n:
                raise CorruptArchiveError("string runs past end of db")
            pos += n
            return out.decode("utf-8")

        try:
            for _ in range(count):
                sid = text()
                enrolled, n_ids = struct.unpack_from("<II", body, pos)
                pos += 8
                tids = tuple(text() for _ in range(n_ids))
                ref = np.frombuffer(body, dtype="<f4", count=dim, offset=pos).astype(np.float32)
                pos += 4 * dim
                profiles[sid] = SingerProfile(sid, ref, enrolled, tids)
        except (struct.error, ValueError, UnicodeDecodeError, InvalidArgumentError) as exc:
            raise CorruptArchiveError(f"malformed profile db: {exc}") from exc
        if pos != len(body):
            raise CorruptArchiveError(f"{len(body) - pos} trailing bytes after last profile")
        db._profiles = profiles
        return db

    def save(self, path) -> None:
        with self._lock:
            write_atomic(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "ProfileDB":
        return cls.from_bytes(Path(path).read_bytes())


def enroll(singer_id: str, clips: list[AudioClip], embedder, db: ProfileDB,
           n: int = 5, dur_s: float = 10.0) -> SingerProfile:
    """Replace ``singer_id``'s profile with the normalized mean of its track embeddings."""
    if not clips:
        raise InvalidArgumentError(f"no clips to enroll for {singer_id!r}")
    fp = getattr(embedder, "fingerprint", None)
    if len(db):
        # fail before doing any embedding work
        db._check(fp, embedder.dim)
    return db.enroll_embeddings(singer_id, [embed_track(c, embedder, n, dur_s) for c in clips])


def rank_profiles(embedding, db: ProfileDB) -> list[tuple[str, float]]:
    """All profiles as (singer_id, distance), ascending, ties by singer_id."""
    snapshot = db.profiles
    if not snapshot:
        raise NoReferencesError("profile db is empty")
    if isinstance(embedding, Embedding):
        db._check(embedding.fingerprint, embedding.dim)
    scored = [(sid, cosine_distance(embedding, p.reference.astype(np.float64))) for sid, p in snapshot.items()]
    return sorted(scored, key=lambda t: (t[1], t[0]))


def identify(clip: AudioClip, embedder, db: ProfileDB, n: int = 5, dur_s: float = 10.0) -> list[tuple[str, float]]:
    if not len(db):
        raise NoReferencesError("profile db is empty")
    return rank_profiles(embed_track(clip, embedder, n, dur_s), db)


@dataclass
class TrackVerdict:
    track_id: str
    stage1_score: float | None = None
    stage1_label: str | None = None
    predicted_singer: str | None = None
    distance_to_best: float | None = None
    distances: dict = field(default_factory=dict)
    windows_used: int = 0
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "track_id": self.track_id,
            "stage1_score": self.stage1_score,
            "stage1_label": self.stage1_label,
            "predicted_singer": self.predicted_singer,
            "distance_to_best": self.distance_to_best,
            "distances": dict(sorted(self.distances.items())),
            "windows_used": self.windows_used,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrackVerdict":
        return cls(**{k: d.get(k) for k in ("track_id", "stage1_score", "stage1_label", "predicted_singer",
                                             "distance_to_best", "error")},
                   distances=dict(d.get("distances") or {}), windows_used=int(d.get("windows_used") or 0))
