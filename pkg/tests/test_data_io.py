"""
Tests for the sample format, manifests, frame sampling and synthetic data
"""
import numpy as np
import pytest

from mmadfer.config import SynthConfig
from mmadfer.data_io import (DatasetManifest, ManifestEntry, SampleRecord, assign_folds, decode_sample,
                             encode_sample, generate_synthetic, load_dataset, read_manifest, read_sample,
                             read_weights, sample_frames, template_oracle_accuracy, write_sample, write_weights)
from mmadfer.errors import (BadMagicError, ConfigurationError, ContractError, SampleFormatError,
                            TruncatedPayloadError, VersionMismatchError)
from tests.conftest import GOLDEN_DIR

GOLDEN = GOLDEN_DIR / "sample_v1.mmad"


def _golden_record() -> SampleRecord:
    return SampleRecord(id="sample_v1", label=3,
                        video=np.array([1.0, -2.0], dtype=np.float32).reshape(1, 1, 1, 2),
                        audio=np.array([[0.5, 0.25]], dtype=np.float32))


# ============= SAMPLE FORMAT =============

def test_writer_matches_golden_bytes():
    assert encode_sample(_golden_record()) == GOLDEN.read_bytes(), "byte layout of format version 1 changed"
    assert GOLDEN.read_bytes()[:4] == bytes.fromhex("4D4D4144")


def test_golden_file_decodes():
    record = read_sample(GOLDEN)
    assert record.id == "sample_v1" and record.label == 3
    assert record.video.shape == (1, 1, 1, 2) and record.video.dtype == np.float32
    assert record.video.ravel().tolist() == [1.0, -2.0]
    assert record.audio.tolist() == [[0.5, 0.25]]


def test_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    record = SampleRecord("clip_7", 6, rng.normal(size=(5, 3, 4, 4)).astype(np.float32),
                          rng.normal(size=(8, 6)).astype(np.float32))
    write_sample(tmp_path / "clip_7.mmad", record)
    loaded = read_sample(tmp_path / "clip_7.mmad")
    assert loaded.label == 6 and loaded.id == "clip_7"
    assert loaded.video.tobytes() == record.video.tobytes()
    assert loaded.audio.tobytes() == record.audio.tobytes()


@pytest.mark.parametrize("corrupt, error", [
    (lambda b: b"MMAX" + b[4:], BadMagicError),
    (lambda b: b[:4] + b"\x02\x00" + b[6:], VersionMismatchError),
    (lambda b: b[:-3], TruncatedPayloadError),
])
def test_corrupted_files_raise_distinct_errors(tmp_path, corrupt, error):
    path = tmp_path / "broken.mmad"
    path.write_bytes(corrupt(GOLDEN.read_bytes()))
    with pytest.raises(error) as info:
        read_sample(path)
    assert isinstance(info.value, SampleFormatError)
    assert info.value.exit_code == 2


def test_non_finite_values_are_not_written():
    record = _golden_record()
    record.audio[0, 0] = np.inf
    with pytest.raises(ContractError):
        encode_sample(record)


def test_wrong_tensor_count_is_rejected():
    payload = bytearray(GOLDEN.read_bytes())
    payload[8] = 3
    with pytest.raises(SampleFormatError):
        decode_sample(bytes(payload))


def test_weight_container_round_trip(tmp_path):
    state = {"b.weight": np.arange(6, dtype=np.float32).reshape(2, 3), "a": np.array([1.5], dtype=np.float32)}
    write_weights(tmp_path / "w.mmaw", state)
    loaded = read_weights(tmp_path / "w.mmaw")
    assert list(loaded) == ["a", "b.weight"], "names are stored sorted"
    assert np.array_equal(loaded["b.weight"], state["b.weight"])


def test_weight_container_checks_magic(tmp_path):
    path = tmp_path / "w.mmaw"
    path.write_bytes(GOLDEN.read_bytes())
    with pytest.raises(BadMagicError):
        read_weights(path)


# ============= FRAME SAMPLING =============

def test_uniform_sampling():
    assert sample_frames(16, 16) == list(range(16))
    assert sample_frames(32, 16) == list(range(0, 32, 2))
    assert sample_frames(4, 16) == [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3]


def test_two_clip_sampling_stays_in_strata():
    first, second = sample_frames(32, 16, "two_clip")
    assert first == [2 * i for i in range(16)]
    assert second == [2 * i + 1 for i in range(16)]
    assert sample_frames(16, 16, "two_clip") == (list(range(16)), list(range(16)))


def test_random_sampling_is_seeded_and_ordered():
    a = sample_frames(100, 16, "random", seed=3)
    assert a == sample_frames(100, 16, "random", seed=3)
    assert a == sorted(a) and 0 <= a[0] and a[-1] < 100
    assert all(int(i * 100 / 16) <= idx < int((i + 1) * 100 / 16) + 1 for i, idx in enumerate(a))


def test_sampling_rejects_bad_arguments():
    with pytest.raises(ContractError):
        sample_frames(0, 16)
    with pytest.raises(ContractError):
        sample_frames(16, 16, "middle")


# ============= MANIFEST =============

def test_folds_are_balanced_per_class():
    labels = [c for c in range(7) for _ in range(13)]
    folds = assign_folds(labels)
    for c in range(7):
        per_fold = [sum(1 for l, f in zip(labels, folds) if l == c and f == k) for k in range(1, 6)]
        assert max(per_fold) - min(per_fold) <= 1, f"class {c} is unbalanced: {per_fold}"


def test_manifest_rejects_duplicate_ids():
    entry = ManifestEntry(id="a", label=0, fold=1, path="samples/a.mmad")
    with pytest.raises(ValueError):
        DatasetManifest(class_names=["x", "y"], samples=[entry, entry])


def test_manifest_split_holds_out_one_fold(tiny_dataset_dir):
    manifest = read_manifest(tiny_dataset_dir)
    train, test = manifest.split(2)
    assert set(train).isdisjoint(test)
    assert len(train) + len(test) == 15
    with pytest.raises(ConfigurationError):
        manifest.split(6)


def test_missing_manifest(tmp_path):
    with pytest.raises(ConfigurationError):
        load_dataset(tmp_path)


# ============= SYNTHETIC DATA =============

SMALL = dict(num_classes=7, samples=70, total_frames=4, frame_size=(8, 8), spec_size=(8, 8), seed=5)


def test_synthetic_geometry(tiny_dataset_dir):
    manifest, records = load_dataset(tiny_dataset_dir)
    assert len(records) == 15
    record = records["s00000"]
    assert record.video.shape == (2, 3, 16, 16) and record.audio.shape == (16, 16)
    assert [sum(1 for e in manifest.samples if e.label == c) for c in range(3)] == [5, 5, 5]


def test_same_seed_same_files(tmp_path):
    cfg = SynthConfig(**{**SMALL, "samples": 10})
    generate_synthetic(cfg, tmp_path / "a")
    generate_synthetic(cfg, tmp_path / "b")
    for name in ("manifest.json", "samples/s00003.mmad"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_only_joint_observation_separates_classes():
    """Noise-free oracle: joint features identify every class, each modality alone only 4 of 7"""
    dataset = generate_synthetic(SynthConfig(**SMALL, noise=0.0))
    scores = {m: template_oracle_accuracy(dataset.records, dataset.video_templates, dataset.audio_templates, 7, m)
              for m in ("joint", "video", "audio")}
    assert scores["joint"] == 1.0
    assert scores["video"] == pytest.approx(4 / 7)
    assert scores["audio"] == pytest.approx(4 / 7)
