"""Dataset handling: CSV ingest, sample construction, per-session splits,
class weights, normalization and a synthetic stand-in generator.

Frames are 8x8 temperature grids labeled with a people count; a violation
is any frame whose count is >= 2. Samples are either one frame (8,8,1) or a
sliding window of W consecutive frames stacked as channels (8,8,W), labeled
by the last frame of the window. Frames flagged hard-to-label never reach
training or evaluation: any window touching one is dropped.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .rng import Rng

log = logging.getLogger(__name__)

GRID = 8
VIOLATION_COUNT = 2
PIXEL_RANGE = (0.0, 60.0)  # plausible indoor temperatures, deg C
CACHE_VERSION = 1


class DatasetFormatError(ValueError):
    """Input file does not match the expected schema."""


@dataclass
class Frame:
    session_id: int
    frame_index: int
    pixels: np.ndarray  # (8, 8) float32
    people_count: int
    hard_to_label: bool = False

    @property
    def violation(self) -> bool:
        return self.people_count >= VIOLATION_COUNT


def _validate_pixels(pixels: np.ndarray, where: str) -> np.ndarray:
    arr = np.asarray(pixels, dtype=np.float32)
    if arr.shape != (GRID, GRID):
        raise DatasetFormatError(f"{where}: expected {GRID}x{GRID} pixels, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DatasetFormatError(f"{where}: non-finite pixel value")
    lo, hi = PIXEL_RANGE
    if arr.min() < lo or arr.max() > hi:
        raise DatasetFormatError(
            f"{where}: pixel outside plausible range [{lo}, {hi}] degC"
        )
    return arr


@dataclass
class Sample:
    input: np.ndarray  # (8, 8, W) float32
    label: bool
    session_id: int
    first_index: int
    last_index: int


@dataclass(frozen=True)
class SplitSpec:
    train_sessions: frozenset[int] = frozenset({1})
    test_sessions: frozenset[int] = frozenset({2, 3, 4, 5, 6})
    val_fraction: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "train_sessions", frozenset(self.train_sessions))
        object.__setattr__(self, "test_sessions", frozenset(self.test_sessions))
        if self.train_sessions & self.test_sessions:
            raise ValueError("train and test sessions must be disjoint")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")


@dataclass(frozen=True)
class ColumnMapping:
    """Adapter between a CSV's headers and the fields we need.

    The published dataset's exact headers are configuration, not code: remap
    via a config file or CLI flags if they differ from these defaults.
    `pixel_prefix` expects 64 columns <prefix>0 .. <prefix>63 in row-major
    order; `frame_index=None` numbers frames by file order within a session.
    """

    session: str = "session"
    people_count: str = "people_count"
    hard_to_label: str | None = "hard_to_label"
    pixel_prefix: str = "pixel_"
    frame_index: str | None = None

    def pixel_columns(self) -> list[str]:
        return [f"{self.pixel_prefix}{i}" for i in range(GRID * GRID)]


_TRUE_STRINGS = {"1", "true", "yes", "y"}


def load_dataset(path, mapping: ColumnMapping = ColumnMapping()) -> list[Frame]:
    """Read frames from a CSV file, grouped by session and ordered in time."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            log.warning("dataset file %s is empty", path)
            return []
        headers = set(reader.fieldnames)
        needed = [mapping.session, mapping.people_count] + mapping.pixel_columns()
        if mapping.hard_to_label is not None:
            needed.append(mapping.hard_to_label)
        if mapping.frame_index is not None:
            needed.append(mapping.frame_index)
        for col in needed:
            if col not in headers:
                raise DatasetFormatError(f"required column {col!r} not found in {path}")

        rows = []
        pixel_cols = mapping.pixel_columns()
        for lineno, row in enumerate(reader, start=2):
            where = f"{path}:{lineno}"
            try:
                session = int(row[mapping.session])
                count = int(float(row[mapping.people_count]))
            except ValueError as exc:
                raise DatasetFormatError(f"{where}: bad session/count value ({exc})") from None
            try:
                pixels = np.array([float(row[c]) for c in pixel_cols], dtype=np.float32)
            except ValueError:
                raise DatasetFormatError(f"{where}: non-numeric pixel value") from None
            hard = False
            if mapping.hard_to_label is not None:
                hard = row[mapping.hard_to_label].strip().lower() in _TRUE_STRINGS
            index = lineno
            if mapping.frame_index is not None:
                index = int(float(row[mapping.frame_index]))
            rows.append((session, index, pixels, count, hard, where))

    if not rows:
        log.warning("dataset file %s has a header but no rows", path)
        return []

    rows.sort(key=lambda r: (r[0], r[1]))
    frames: list[Frame] = []
    per_session: dict[int, int] = {}
    last_index: dict[int, int] = {}
    for session, index, pixels, count, hard, where in rows:
        if count < 0:
            raise DatasetFormatError(f"{where}: negative people count")
        pix = _validate_pixels(pixels.reshape(GRID, GRID), where)
        if mapping.frame_index is not None and session in last_index:
            if index <= last_index[session]:
                raise DatasetFormatError(
                    f"{where}: frame_index not strictly increasing in session {session}"
                )
        last_index[session] = index
        ordinal = per_session.get(session, 0)
        per_session[session] = ordinal + 1
        frames.append(
            Frame(
                session_id=session,
                frame_index=index if mapping.frame_index is not None else ordinal,
                pixels=pix,
                people_count=count,
                hard_to_label=hard,
            )
        )
    return frames


def _by_session(frames: list[Frame]) -> dict[int, list[Frame]]:
    sessions: dict[int, list[Frame]] = {}
    for f in frames:
        sessions.setdefault(f.session_id, []).append(f)
    for sid in sessions:
        sessions[sid].sort(key=lambda f: f.frame_index)
    return sessions


def make_samples(frames: list[Frame], window: int = 1) -> list[Sample]:
    """Build model inputs: window=1 gives one sample per clean frame, larger
    windows slide over W consecutive frames (stride 1) within a session.

    Windows must cover consecutive frame_index values; any window touching a
    hard-to-label frame is dropped entirely.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    samples: list[Sample] = []
    sessions = _by_session(frames)
    for sid in sorted(sessions):
        sess = sessions[sid]
        for start in range(len(sess) - window + 1):
            run = sess[start : start + window]
            if any(f.hard_to_label for f in run):
                continue
            if run[-1].frame_index - run[0].frame_index != window - 1:
                continue  # gap in the recording
            stacked = np.stack([f.pixels for f in run], axis=-1)
            samples.append(
                Sample(
                    input=np.ascontiguousarray(stacked),
                    label=run[-1].violation,
                    session_id=sid,
                    first_index=run[0].frame_index,
                    last_index=run[-1].frame_index,
                )
            )
    return samples


def class_weights(train_samples: list[Sample]) -> tuple[float, float]:
    """Inverse class probabilities measured on the training samples."""
    n = len(train_samples)
    pos = sum(1 for s in train_samples if s.label)
    if pos == 0 or pos == n:
        raise ValueError("training set must contain both classes")
    p_pos = pos / n
    return 1.0 / p_pos, 1.0 / (1.0 - p_pos)


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float
    degenerate: bool = False

    def apply(self, x: np.ndarray) -> np.ndarray:
        return ((x - self.mean) / self.std).astype(np.float32)


def compute_norm_stats(samples: list[Sample]) -> NormStats:
    """Scalar mean/std over every pixel of the given (training) samples."""
    if not samples:
        raise ValueError("cannot compute normalization stats on no samples")
    flat = np.concatenate([s.input.reshape(-1) for s in samples]).astype(np.float64)
    mean = float(flat.mean())
    std = float(flat.std())
    if std < 1e-12:
        return NormStats(mean, 1.0, degenerate=True)
    return NormStats(mean, std)


def apply_normalization(samples: list[Sample], stats: NormStats) -> list[Sample]:
    return [replace(s, input=stats.apply(s.input)) for s in samples]


def normalize(samples: list[Sample]) -> tuple[NormStats, list[Sample]]:
    """Standardize using these samples' own statistics (training subset)."""
    stats = compute_norm_stats(samples)
    return stats, apply_normalization(samples, stats)


def _stack(samples: list[Sample]) -> tuple[np.ndarray, np.ndarray]:
    if not samples:
        w = 1
        return np.zeros((0, GRID, GRID, w), dtype=np.float32), np.zeros(0, dtype=bool)
    x = np.stack([s.input for s in samples]).astype(np.float32)
    y = np.array([s.label for s in samples], dtype=bool)
    return x, y


@dataclass
class DatasetSplit:
    """Train/val/test samples with class weights and normalization applied.

    Validation is the chronological tail of each training session's samples
    (windowed samples are assigned by their last, labeled frame); weights and
    normalization statistics come from the training subset only.
    """

    train: list[Sample]
    val: list[Sample]
    test: list[Sample]
    w_pos: float
    w_neg: float
    norm: NormStats
    train_x: np.ndarray = field(init=False)
    train_y: np.ndarray = field(init=False)
    val_x: np.ndarray = field(init=False)
    val_y: np.ndarray = field(init=False)
    test_x: np.ndarray = field(init=False)
    test_y: np.ndarray = field(init=False)

    def __post_init__(self):
        self.train_x, self.train_y = _stack(self.train)
        self.val_x, self.val_y = _stack(self.val)
        self.test_x, self.test_y = _stack(self.test)


def split_dataset(frames: list[Frame], spec: SplitSpec, window: int = 1) -> DatasetSplit:
    """Per-session split -> windowing -> val tail -> weights -> normalization."""
    sessions = _by_session(frames)
    present = set(sessions)
    train_ids = sorted(spec.train_sessions & present)
    test_ids = sorted(spec.test_sessions & present)
    if not train_ids:
        raise ValueError(f"no frames found for train sessions {sorted(spec.train_sessions)}")

    train_samples: list[Sample] = []
    val_samples: list[Sample] = []
    for sid in train_ids:
        sess_samples = make_samples(sessions[sid], window)
        sess_samples.sort(key=lambda s: s.last_index)
        if spec.val_fraction > 0:
            if len(sess_samples) < 2:
                raise ValueError(f"session {sid}: too few samples to carve a validation tail")
            n_val = int(round(len(sess_samples) * spec.val_fraction))
            n_val = min(max(n_val, 1), len(sess_samples) - 1)
            train_samples.extend(sess_samples[:-n_val])
            val_samples.extend(sess_samples[-n_val:])
        else:
            train_samples.extend(sess_samples)

    test_samples: list[Sample] = []
    for sid in test_ids:
        test_samples.extend(make_samples(sessions[sid], window))

    w_pos, w_neg = class_weights(train_samples)
    stats = compute_norm_stats(train_samples)
    return DatasetSplit(
        train=apply_normalization(train_samples, stats),
        val=apply_normalization(val_samples, stats),
        test=apply_normalization(test_samples, stats),
        w_pos=w_pos,
        w_neg=w_neg,
        norm=stats,
    )


def session_stats(frames: list[Frame]) -> list[dict]:
    """Per-session frame counts, violation rate and people range, plus a
    total row (session_id None)."""
    out = []
    sessions = _by_session(frames)
    for sid in sorted(sessions):
        sess = sessions[sid]
        counts = [f.people_count for f in sess]
        viol = sum(1 for f in sess if f.violation)
        out.append(
            {
                "session": sid,
                "frames": len(sess),
                "violation_pct": 100.0 * viol / len(sess),
                "people_min": min(counts),
                "people_max": max(counts),
                "hard_frames": sum(1 for f in sess if f.hard_to_label),
            }
        )
    total = len(frames)
    if total:
        out.append(
            {
                "session": None,
                "frames": total,
                "violation_pct": 100.0 * sum(1 for f in frames if f.violation) / total,
                "people_min": min(f.people_count for f in frames),
                "people_max": max(f.people_count for f in frames),
                "hard_frames": sum(1 for f in frames if f.hard_to_label),
            }
        )
    return out


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic thermal scene generator.

    People are Gaussian blobs on a per-session ambient background, moving as
    reflected random walks; the head count follows a slow birth/death chain.
    """

    sessions: int = 5
    frames_per_session: tuple[int, ...] = (1200, 300, 300, 300, 300)
    people_min: int = 0
    people_max: int = 5
    bg_mean: float = 20.0
    bg_std: float = 0.5
    noise_std: float = 0.3
    peak_min: float = 4.0
    peak_max: float = 8.0
    sigma_min: float = 0.7
    sigma_max: float = 1.2
    walk_std: float = 0.35
    count_change_prob: float = 0.04
    min_separation: float = 2.0
    hard_prob: float = 0.0

    def frames_for(self, session_index: int) -> int:
        per = self.frames_per_session
        if isinstance(per, int):
            return per
        return per[session_index % len(per)]


_ROWS, _COLS = np.meshgrid(np.arange(GRID, dtype=np.float64),
                           np.arange(GRID, dtype=np.float64), indexing="ij")
_POS_LO, _POS_HI = 0.5, GRID - 1.5


@dataclass
class _Person:
    row: float
    col: float
    amp: float
    sigma: float


def _reflect(v: float) -> float:
    while v < _POS_LO or v > _POS_HI:
        if v < _POS_LO:
            v = 2 * _POS_LO - v
        if v > _POS_HI:
            v = 2 * _POS_HI - v
    return v


def _spawn_person(r: Rng, others: list[_Person], spec: SynthSpec) -> _Person:
    for _ in range(20):
        row = r.uniform(_POS_LO, _POS_HI)
        col = r.uniform(_POS_LO, _POS_HI)
        if all(
            (p.row - row) ** 2 + (p.col - col) ** 2 >= spec.min_separation**2 for p in others
        ):
            break
    return _Person(
        row=row,
        col=col,
        amp=r.uniform(spec.peak_min, spec.peak_max),
        sigma=r.uniform(spec.sigma_min, spec.sigma_max),
    )


def synth_generate(spec: SynthSpec = SynthSpec(), seed: int = 0) -> list[Frame]:
    """Deterministic labeled synthetic dataset; same seed, same bits."""
    root = Rng(seed).derive("synth")
    frames: list[Frame] = []
    lo, hi = PIXEL_RANGE
    for s in range(spec.sessions):
        sid = s + 1
        r = root.derive("session", sid)
        ambient = r.normal(spec.bg_mean, spec.bg_std)
        count0 = spec.people_min + r.randrange(spec.people_max - spec.people_min + 1)
        people: list[_Person] = []
        for _ in range(count0):
            people.append(_spawn_person(r, people, spec))
        for t in range(spec.frames_for(s)):
            if r.uniform() < spec.count_change_prob:
                if people and (r.uniform() < 0.5 or len(people) >= spec.people_max):
                    if len(people) > spec.people_min:
                        people.pop(r.randrange(len(people)))
                elif len(people) < spec.people_max:
                    people.append(_spawn_person(r, people, spec))
            for p in people:
                p.row = _reflect(p.row + r.normal(0.0, spec.walk_std))
                p.col = _reflect(p.col + r.normal(0.0, spec.walk_std))
            pix = np.full((GRID, GRID), ambient, dtype=np.float64)
            pix += np.array(r.normals(GRID * GRID, 0.0, spec.noise_std)).reshape(GRID, GRID)
            for p in people:
                d2 = (_ROWS - p.row) ** 2 + (_COLS - p.col) ** 2
                pix += p.amp * np.exp(-d2 / (2.0 * p.sigma**2))
            hard = spec.hard_prob > 0 and r.uniform() < spec.hard_prob
            frames.append(
                Frame(
                    session_id=sid,
                    frame_index=t,
                    pixels=np.clip(pix, lo, hi).astype(np.float32),
                    people_count=len(people),
                    hard_to_label=hard,
                )
            )
    return frames


# ---------------------------------------------------------------------------
# binary cache + hashing

_CACHE_KEYS = ("version", "session_ids", "frame_indices", "pixels", "people_counts", "hard_flags")


def save_cache(frames: list[Frame], path) -> None:
    """Write frames to an .npz cache (layout documented in the README)."""
    np.savez(
        path,
        version=np.int32(CACHE_VERSION),
        session_ids=np.array([f.session_id for f in frames], dtype=np.int32),
        frame_indices=np.array([f.frame_index for f in frames], dtype=np.int64),
        pixels=np.stack([f.pixels for f in frames]) if frames else np.zeros((0, GRID, GRID), np.float32),
        people_counts=np.array([f.people_count for f in frames], dtype=np.int32),
        hard_flags=np.array([f.hard_to_label for f in frames], dtype=bool),
    )


def load_cache(path) -> list[Frame]:
    with np.load(path) as z:
        for key in _CACHE_KEYS:
            if key not in z:
                raise DatasetFormatError(f"{path}: not a dataset cache (missing {key!r})")
        if int(z["version"]) != CACHE_VERSION:
            raise DatasetFormatError(f"{path}: unsupported cache version {int(z['version'])}")
        n = len(z["session_ids"])
        return [
            Frame(
                session_id=int(z["session_ids"][i]),
                frame_index=int(z["frame_indices"][i]),
                pixels=_validate_pixels(z["pixels"][i], f"{path}[{i}]"),
                people_count=int(z["people_counts"][i]),
                hard_to_label=bool(z["hard_flags"][i]),
            )
            for i in range(n)
        ]


def load_frames(path, mapping: ColumnMapping = ColumnMapping()) -> list[Frame]:
    """Load either a CSV dataset or an .npz cache, by extension."""
    if str(path).endswith(".npz"):
        return load_cache(path)
    return load_dataset(path, mapping)


def dataset_hash(frames: list[Frame]) -> str:
    """Content hash of a dataset, independent of its container format."""
    h = hashlib.sha256()
    for f in frames:
        h.update(f"{f.session_id},{f.frame_index},{f.people_count},{int(f.hard_to_label)};".encode())
        h.update(np.ascontiguousarray(f.pixels, dtype=np.float32).tobytes())
    return h.hexdigest()


def verify_manifest(data_path, manifest_path) -> None:
    """Check a file's sha256 against a JSON manifest {filename: hexdigest}."""
    import os

    with open(manifest_path) as fh:
        manifest = json.load(fh)
    name = os.path.basename(str(data_path))
    if name not in manifest:
        raise DatasetFormatError(f"{name} not listed in manifest {manifest_path}")
    digest = hashlib.sha256(open(data_path, "rb").read()).hexdigest()
    if digest != manifest[name]:
        raise DatasetFormatError(
            f"{name}: sha256 {digest} does not match manifest entry {manifest[name]}"
        )
