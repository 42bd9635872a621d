"""
Sample files, fold manifests, weight containers, frame sampling and the
synthetic cross-modal dataset.

Sample file (little-endian):
    "MMAD" | u16 version | u16 label | u8 tensor count
    per tensor: u8 rank | rank x u32 extents | float32 payload
Tensors are stored in order video (t_raw, C, H, W), audio (F, T).

Weight container (little-endian):
    "MMAW" | u16 version | u32 tensor count
    per tensor: u16 name length | UTF-8 name | u8 rank | rank x u32 extents | float32 payload
"""
from __future__ import annotations

import io
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.ndimage import gaussian_filter

from .config import SynthConfig
from .errors import (BadMagicError, ConfigurationError, ContractError, SampleFormatError,
                     TruncatedPayloadError, VersionMismatchError)

logger = logging.getLogger(__name__)

SAMPLE_MAGIC = b"MMAD"
WEIGHTS_MAGIC = b"MMAW"
FORMAT_VERSION = 1
NUM_FOLDS = 5
MANIFEST_NAME = "manifest.json"
SAMPLES_DIR = "samples"

EMOTIONS_7 = ["happy", "sad", "neutral", "angry", "surprise", "disgust", "fear"]


@dataclass
class SampleRecord:
    """One labeled clip: frames (t_raw, C, H, W) and a spectrogram (F, T)"""
    id: str
    label: int
    video: np.ndarray
    audio: np.ndarray


# ============= BINARY CODEC =============

class _Reader:
    def __init__(self, payload: bytes, source: str):
        self.payload = payload
        self.offset = 0
        self.source = source

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.payload):
            raise TruncatedPayloadError(
                f"{self.source}: needed {size} bytes at offset {self.offset}, file has {len(self.payload)}"
            )
        chunk = self.payload[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def tensor(self) -> np.ndarray:
        (rank,) = self.unpack("<B")
        extents = self.unpack(f"<{rank}I") if rank else ()
        count = int(np.prod(extents, dtype=np.int64))
        data = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(extents)
        return data.astype(np.float32)

    def header(self, magic: bytes) -> None:
        found = self.take(len(magic))
        if found != magic:
            raise BadMagicError(f"{self.source}: expected magic {magic!r}, found {found!r}")
        (version,) = self.unpack("<H")
        if version != FORMAT_VERSION:
            raise VersionMismatchError(f"{self.source}: format version {version}, expected {FORMAT_VERSION}")


def _write_tensor(out: io.BytesIO, array: np.ndarray) -> None:
    array = np.asarray(array, dtype="<f4")
    if array.ndim > 255:
        raise ContractError(f"Tensor rank {array.ndim} exceeds the format limit")
    out.write(struct.pack("<B", array.ndim))
    if array.ndim:
        out.write(struct.pack(f"<{array.ndim}I", *array.shape))
    out.write(np.ascontiguousarray(array).tobytes())


def encode_sample(record: SampleRecord) -> bytes:
    """
    Serialize a record.

    Raises:
        ContractError: If the label does not fit or any value is non-finite
    """
    if not 0 <= record.label < 2**16:
        raise ContractError(f"Label {record.label} does not fit the sample format")
    for name, array in (("video", record.video), ("audio", record.audio)):
        if not np.all(np.isfinite(array)):
            raise ContractError(f"Sample {record.id}: {name} holds non-finite values")
    out = io.BytesIO()
    out.write(SAMPLE_MAGIC)
    out.write(struct.pack("<HHB", FORMAT_VERSION, record.label, 2))
    _write_tensor(out, record.video)
    _write_tensor(out, record.audio)
    return out.getvalue()


def decode_sample(payload: bytes, sample_id: str = "<memory>") -> SampleRecord:
    reader = _Reader(payload, sample_id)
    reader.header(SAMPLE_MAGIC)
    label, count = reader.unpack("<HB")
    if count != 2:
        raise SampleFormatError(f"{sample_id}: expected 2 tensors, found {count}")
    video = reader.tensor()
    audio = reader.tensor()
    return SampleRecord(id=sample_id, label=int(label), video=video, audio=audio)


def write_sample(path: Path, record: SampleRecord) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_sample(record))


def read_sample(path: Path) -> SampleRecord:
    """
    Read a sample file; the record id is the file stem.

    Raises:
        BadMagicError, VersionMismatchError, TruncatedPayloadError
    """
    path = Path(path)
    return decode_sample(path.read_bytes(), sample_id=path.stem)


def write_weights(path: Path, state: dict[str, np.ndarray]) -> None:
    """Write named tensors (sorted by name) to a ``.mmaw`` container"""
    out = io.BytesIO()
    out.write(WEIGHTS_MAGIC)
    out.write(struct.pack("<HI", FORMAT_VERSION, len(state)))
    for name in sorted(state):
        encoded = name.encode("utf-8")
        out.write(struct.pack("<H", len(encoded)))
        out.write(encoded)
        _write_tensor(out, state[name])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(out.getvalue())


def read_weights(path: Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Weight file not found: {path}")
    reader = _Reader(path.read_bytes(), path.name)
    reader.header(WEIGHTS_MAGIC)
    (count,) = reader.unpack("<I")
    state = {}
    for _ in range(count):
        (length,) = reader.unpack("<H")
        name = reader.take(length).decode("utf-8")
        state[name] = reader.tensor()
    return state


# ============= MANIFEST =============

class ManifestEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str = Field(..., min_length=1, pattern=r"^[A-Za-z0-9_.-]+$")
    label: int = Field(..., ge=0)
    fold: int = Field(..., ge=1, le=NUM_FOLDS)
    path: str = Field(..., min_length=1)


class DatasetManifest(BaseModel):
    """Class names plus one entry (label, fold, relative path) per sample id"""

    model_config = ConfigDict(extra="forbid")

    class_names: list[str] = Field(..., min_length=2)
    num_folds: Literal[5] = NUM_FOLDS
    samples: list[ManifestEntry]

    @model_validator(mode="after")
    def check_partition(self) -> "DatasetManifest":
        ids = [entry.id for entry in self.samples]
        if len(set(ids)) != len(ids):
            raise ValueError("sample ids must be unique")
        bad = [entry.id for entry in self.samples if entry.label >= len(self.class_names)]
        if bad:
            raise ValueError(f"samples {bad[:5]} carry labels outside the class list")
        return self

    def fold_ids(self, fold: int) -> list[str]:
        return [entry.id for entry in self.samples if entry.fold == fold]

    def split(self, fold: int) -> tuple[list[str], list[str]]:
        """(train ids, test ids) with ``fold`` held out"""
        if not 1 <= fold <= self.num_folds:
            raise ConfigurationError(f"Fold {fold} is outside [1, {self.num_folds}]")
        train = [entry.id for entry in self.samples if entry.fold != fold]
        return train, self.fold_ids(fold)


def assign_folds(labels: Sequence[int], num_folds: int = NUM_FOLDS) -> list[int]:
    """Round-robin per class, so every fold's class counts differ by at most one"""
    seen: dict[int, int] = {}
    folds = []
    for label in labels:
        position = seen.get(label, 0)
        folds.append(position % num_folds + 1)
        seen[label] = position + 1
    return folds


def write_manifest(directory: Path, manifest: DatasetManifest) -> Path:
    path = Path(directory) / MANIFEST_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_manifest(directory: Path) -> DatasetManifest:
    path = Path(directory) / MANIFEST_NAME
    if not path.is_file():
        raise ConfigurationError(f"Dataset manifest not found: {path}")
    return DatasetManifest.model_validate_json(path.read_text(encoding="utf-8"))


def load_dataset(directory: Path) -> tuple[DatasetManifest, dict[str, SampleRecord]]:
    """Manifest plus every record it lists, keyed by id"""
    directory = Path(directory)
    manifest = read_manifest(directory)
    records = {}
    for entry in manifest.samples:
        record = read_sample(directory / entry.path)
        if record.label != entry.label:
            raise SampleFormatError(f"{entry.id}: file label {record.label} disagrees with manifest {entry.label}")
        records[entry.id] = record
    logger.info(f"📂 Loaded {len(records)} samples from {directory}")
    return manifest, records


# ============= FRAME SAMPLING =============

def sample_frames(total_frames: int, frames: int = 16, mode: str = "uniform",
                  seed: int | None = None) -> list[int] | tuple[list[int], list[int]]:
    """
    Frame indices for one clip.

    uniform: floor(i * F / t). two_clip: two index sets taken at 1/4 and 3/4
    of every stratum. random: a seeded position inside every stratum. With
    fewer than t frames indices repeat, clamped to the last frame.

    Raises:
        ContractError: If there are no frames or the mode is unknown
    """
    if total_frames < 1 or frames < 1:
        raise ContractError(f"Cannot sample {frames} frames from {total_frames}")
    if total_frames < frames:
        logger.debug(f"Only {total_frames} frames for clips of {frames}; repeating indices")
    strata = np.arange(frames, dtype=np.float64)

    def positions(offsets: np.ndarray) -> list[int]:
        indices = np.floor((strata + offsets) * total_frames / frames).astype(np.int64)
        return np.minimum(indices, total_frames - 1).tolist()

    if mode == "uniform":
        return positions(np.zeros(frames))
    if mode == "two_clip":
        return positions(np.full(frames, 0.25)), positions(np.full(frames, 0.75))
    if mode == "random":
        return positions(np.random.default_rng(seed).random(frames))
    raise ContractError(f"Unknown frame sampling mode '{mode}'")


# ============= SYNTHETIC DATA =============

@dataclass
class SyntheticDataset:
    records: list[SampleRecord]
    manifest: DatasetManifest
    video_templates: np.ndarray
    audio_templates: np.ndarray


def video_pattern(label: int) -> int:
    return label // 2


def audio_pattern(label: int) -> int:
    return (label + 1) // 2


def _templates(count: int, shape: tuple[int, ...], smoothing: tuple[float, ...],
               rng: np.random.Generator) -> np.ndarray:
    out = []
    for _ in range(count):
        pattern = gaussian_filter(rng.standard_normal(shape), sigma=smoothing)
        out.append(pattern / np.sqrt(np.mean(pattern * pattern)))
    return np.stack(out)


def generate_synthetic(cfg: SynthConfig, out_dir: Path | None = None) -> SyntheticDataset:
    """
    Build the cross-modal dataset.

    Class c shows video pattern c // 2 and audio pattern (c + 1) // 2, so
    classes 2j, 2j+1 share a video pattern and 2j-1, 2j share an audio
    pattern; only both modalities together identify every class. Frames are
    the template modulated by 1 + m*sin(2*pi*k/F + phase) plus Gaussian
    noise; spectrograms are the template plus noise. When ``out_dir`` is
    given the samples and manifest are written there.
    """
    rng = np.random.default_rng(cfg.seed)
    k = cfg.num_classes
    video_templates = _templates(video_pattern(k - 1) + 1, (cfg.channels, *cfg.frame_size),
                                 (0.0, cfg.smoothing, cfg.smoothing), rng)
    audio_templates = _templates(audio_pattern(k - 1) + 1, tuple(cfg.spec_size),
                                 (cfg.smoothing, cfg.smoothing), rng)

    steps = np.arange(cfg.total_frames, dtype=np.float64)
    records, labels = [], []
    for i in range(cfg.samples):
        label = i % k
        phase = rng.uniform(0.0, 2.0 * np.pi)
        envelope = 1.0 + cfg.modulation * np.sin(2.0 * np.pi * steps / cfg.total_frames + phase)
        video = envelope[:, None, None, None] * video_templates[video_pattern(label)][None]
        video = video + cfg.noise * rng.standard_normal(video.shape)
        audio = audio_templates[audio_pattern(label)] + cfg.noise * rng.standard_normal(cfg.spec_size)
        records.append(SampleRecord(id=f"s{i:05d}", label=label,
                                    video=video.astype(np.float32), audio=audio.astype(np.float32)))
        labels.append(label)

    names = EMOTIONS_7 if k == len(EMOTIONS_7) else [f"class_{c}" for c in range(k)]
    entries = [ManifestEntry(id=r.id, label=r.label, fold=fold, path=f"{SAMPLES_DIR}/{r.id}.mmad")
               for r, fold in zip(records, assign_folds(labels))]
    manifest = DatasetManifest(class_names=names, samples=entries)

    if out_dir is not None:
        out_dir = Path(out_dir)
        for record, entry in zip(records, entries):
            write_sample(out_dir / entry.path, record)
        write_manifest(out_dir, manifest)
        logger.info(f"💾 Wrote {len(records)} synthetic samples to {out_dir}")
    return SyntheticDataset(records, manifest, video_templates.astype(np.float32), audio_templates.astype(np.float32))


def template_oracle_accuracy(records: Sequence[SampleRecord], video_templates: np.ndarray,
                             audio_templates: np.ndarray, num_classes: int, modality: str = "joint") -> float:
    """
    Accuracy of the nearest-template classifier (ties to the lower class).

    Video features are the frame mean; class c is scored by its own
    pattern(s) in the chosen modality ("joint", "video" or "audio").
    """
    if not records:
        raise ContractError("Oracle needs at least one record")
    if modality not in ("joint", "video", "audio"):
        raise ContractError(f"Unknown oracle modality '{modality}'")
    correct = 0
    for record in records:
        v = record.video.astype(np.float64).mean(axis=0)
        a = record.audio.astype(np.float64)
        scores = []
        for c in range(num_classes):
            vp, ap = video_pattern(c), audio_pattern(c)
            if vp >= len(video_templates) or ap >= len(audio_templates):
                scores.append(np.inf)
                continue
            dv = float(np.sum((v - video_templates[vp]) ** 2))
            da = float(np.sum((a - audio_templates[ap]) ** 2))
            scores.append({"joint": dv + da, "video": dv, "audio": da}[modality])
        correct += int(np.argmin(scores) == record.label)
    return correct / len(records)
