import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psvl.data import (
    DatasetManifest,
    DetectionRecord,
    DimensionMismatchError,
    FrameFeatureSequence,
    ManifestEntry,
    NonFiniteError,
    RecordParseError,
    RecordRangeError,
    SchemaError,
    SupervisionSample,
    TemporalSegment,
    load_detections,
    load_eval_samples,
    load_feature_manifest,
    load_supervision,
    load_word_embeddings,
    resample_features,
    save_detections,
    save_eval_samples,
    save_feature_manifest,
    save_supervision,
    save_word_embeddings,
    temporal_iou,
    write_feature_file,
)
from psvl.data import EvalSample


def grid_iou(a, b, bins=100_000):
    """Independent oracle: count bin-center membership over a [0,1] grid."""
    centers = (np.arange(bins) + 0.5) / bins
    in_a = (centers >= a.start) & (centers < a.end)
    in_b = (centers >= b.start) & (centers < b.end)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return np.count_nonzero(in_a & in_b) / union


segments = st.tuples(
    st.floats(0, 1, allow_nan=False), st.floats(0, 1, allow_nan=False)
).map(lambda p: TemporalSegment(min(p), max(p)))


class TestTemporalIoU:
    def test_identity(self):
        seg = TemporalSegment(0.2, 0.6)
        assert temporal_iou(seg, seg) == 1.0

    def test_disjoint(self):
        assert temporal_iou(TemporalSegment(0.0, 0.3), TemporalSegment(0.5, 0.9)) == 0.0

    def test_half_overlap(self):
        # oracle value: grid_iou gives 1/3 for [0,.5] vs [.25,.75]
        got = temporal_iou(TemporalSegment(0.0, 0.5), TemporalSegment(0.25, 0.75))
        assert got == pytest.approx(1 / 3, abs=1e-12)
        assert abs(got - grid_iou(TemporalSegment(0.0, 0.5), TemporalSegment(0.25, 0.75))) <= 2e-5

    def test_zero_length_segments(self):
        point = TemporalSegment(0.4, 0.4)
        assert temporal_iou(point, point) == 0.0
        assert temporal_iou(point, TemporalSegment(0.0, 1.0)) == 0.0

    @given(segments, segments)
    @settings(max_examples=200)
    def test_symmetric_and_bounded(self, a, b):
        assert temporal_iou(a, b) == temporal_iou(b, a)
        assert 0.0 <= temporal_iou(a, b) <= 1.0

    @given(segments)
    @settings(max_examples=100)
    def test_self_iou_is_one_for_positive_length(self, a):
        if a.end > a.start:
            assert temporal_iou(a, a) == 1.0

    def test_grid_oracle_agreement(self):
        # endpoints on the bin lattice: membership counting is then exact and
        # the 2e-5 tolerance covers floating-point error only
        rng = np.random.default_rng(7)
        for _ in range(300):
            a = TemporalSegment(*(sorted(rng.integers(0, 100_001, 2)) / np.float64(100_000)))
            b = TemporalSegment(*(sorted(rng.integers(0, 100_001, 2)) / np.float64(100_000)))
            assert abs(temporal_iou(a, b) - grid_iou(a, b)) <= 2e-5

    def test_invalid_segment_rejected(self):
        with pytest.raises(ValueError):
            TemporalSegment(0.6, 0.2)
        with pytest.raises(ValueError):
            TemporalSegment(-0.1, 0.5)


class TestResample:
    def test_identity_when_lengths_match(self, rng):
        seq = FrameFeatureSequence("v", rng.standard_normal((128, 4)).astype(np.float32))
        assert np.array_equal(resample_features(seq, 128), seq.features)

    def test_downsample_floor_indices(self):
        rows = np.arange(4, dtype=np.float32)[:, None]
        seq = FrameFeatureSequence("v", rows)
        assert resample_features(seq, 2).ravel().tolist() == [0.0, 2.0]

    def test_upsample_duplicates(self):
        rows = np.arange(2, dtype=np.float32)[:, None]
        seq = FrameFeatureSequence("v", rows)
        assert resample_features(seq, 4).ravel().tolist() == [0.0, 0.0, 1.0, 1.0]

    @given(st.integers(1, 40), st.integers(1, 40))
    @settings(max_examples=60)
    def test_output_rows_come_from_input(self, t, length):
        rows = np.arange(t, dtype=np.float32)[:, None]
        out = resample_features(FrameFeatureSequence("v", rows), length)
        assert out.shape == (length, 1)
        assert set(out.ravel().tolist()) <= set(rows.ravel().tolist())


class TestFeatureManifest:
    def _write(self, tmp_path, arrays):
        entries = []
        for vid, arr in arrays.items():
            write_feature_file(tmp_path / f"{vid}.f32", arr)
            entries.append(
                ManifestEntry(vid, f"{vid}.f32", num_frames=arr.shape[0], dim=arr.shape[1])
            )
        path = tmp_path / "manifest.json"
        save_feature_manifest(DatasetManifest(entries=tuple(entries)), path)
        return path

    def test_round_trip(self, tmp_path, rng):
        arrays = {
            "a": rng.standard_normal((10, 3)).astype(np.float32),
            "b": rng.standard_normal((7, 3)).astype(np.float32),
        }
        loaded = load_feature_manifest(self._write(tmp_path, arrays))
        assert set(loaded) == {"a", "b"}
        assert np.array_equal(loaded["a"].features, arrays["a"])

    def test_missing_file(self, tmp_path):
        path = self._write(tmp_path, {"a": np.ones((2, 2), np.float32)})
        (tmp_path / "a.f32").unlink()
        with pytest.raises(FileNotFoundError):
            load_feature_manifest(path)

    def test_dimension_mismatch(self, tmp_path):
        path = self._write(tmp_path, {"a": np.ones((9, 2), np.float32)})
        manifest = json.loads(path.read_text())
        manifest["entries"][0]["num_frames"] = 10
        path.write_text(json.dumps(manifest))
        with pytest.raises(DimensionMismatchError):
            load_feature_manifest(path)

    def test_non_finite(self, tmp_path):
        arr = np.ones((4, 2), np.float32)
        arr[1, 1] = np.nan
        write_feature_file(tmp_path / "a.f32", arr)
        save_feature_manifest(
            DatasetManifest(entries=(ManifestEntry("a", "a.f32", 4, 2),)),
            tmp_path / "m.json",
        )
        with pytest.raises(NonFiniteError):
            load_feature_manifest(tmp_path / "m.json")

    def test_duplicate_video_ids_rejected(self):
        entry = ManifestEntry("a", "a.f32", 2, 2)
        with pytest.raises(SchemaError):
            DatasetManifest(entries=(entry, entry))


class TestDetections:
    def test_grouped_and_sorted(self, tmp_path):
        recs = [
            DetectionRecord("v", 5, "dog", 0.9),
            DetectionRecord("v", 1, "cat", 0.8),
            DetectionRecord("v", 3, "dog", 0.7),
        ]
        path = tmp_path / "det.jsonl"
        save_detections(recs, path)
        loaded = load_detections(path)
        assert [r.frame_index for r in loaded["v"]] == [1, 3, 5]

    def test_empty_file(self, tmp_path):
        path = tmp_path / "det.jsonl"
        path.write_text("")
        assert load_detections(path) == {}

    def test_confidence_range_error(self, tmp_path):
        path = tmp_path / "det.jsonl"
        path.write_text('{"video_id":"v","frame_index":0,"label":"dog","confidence":1.5}\n')
        with pytest.raises(RecordRangeError) as err:
            load_detections(path)
        assert err.value.line_no == 1

    def test_malformed_record_reports_line(self, tmp_path):
        path = tmp_path / "det.jsonl"
        path.write_text(
            '{"video_id":"v","frame_index":0,"label":"dog","confidence":0.5}\n'
            "not json\n"
        )
        with pytest.raises(RecordParseError) as err:
            load_detections(path)
        assert err.value.line_no == 2


class TestSupervisionIO:
    def sample(self, i=0):
        return SupervisionSample(
            video_id=f"v{i}",
            segment=TemporalSegment(0.125, 0.875),
            nouns=("dog", "ball"),
            verbs=("run",),
        )

    def test_round_trip_single(self, tmp_path):
        path = tmp_path / "sup.jsonl"
        save_supervision([self.sample()], path)
        assert load_supervision(path) == [self.sample()]

    def test_round_trip_many_ordered(self, tmp_path):
        rng = np.random.default_rng(3)
        samples = []
        for i in range(2000):
            a, b = sorted(rng.uniform(0, 1, 2))
            samples.append(
                SupervisionSample(f"v{i % 17}", TemporalSegment(a, b), ("dog",), ("run",))
            )
        path = tmp_path / "sup.jsonl"
        save_supervision(samples, path)
        assert load_supervision(path) == samples

    def test_unknown_field_named(self, tmp_path):
        path = tmp_path / "sup.jsonl"
        row = {
            "video_id": "v",
            "start": 0.1,
            "end": 0.2,
            "nouns": ["dog"],
            "verbs": ["run"],
            "source": "pseudo",
            "surprise": 1,
        }
        path.write_text(json.dumps(row) + "\n")
        with pytest.raises(SchemaError, match="surprise"):
            load_supervision(path)

    def test_pseudo_requires_tokens(self):
        with pytest.raises(ValueError):
            SupervisionSample("v", TemporalSegment(0, 1), (), ("run",), source="pseudo")

    def test_eval_sample_round_trip(self, tmp_path):
        samples = [EvalSample("v", "the dog runs", TemporalSegment(0.25, 0.5))]
        path = tmp_path / "eval.jsonl"
        save_eval_samples(samples, path)
        assert load_eval_samples(path) == samples


class TestEmbeddings:
    def test_round_trip(self, tmp_path, rng):
        table = {"dog": rng.standard_normal(8), "run": rng.standard_normal(8)}
        path = tmp_path / "emb.txt"
        save_word_embeddings(table, path)
        loaded = load_word_embeddings(path, 8)
        assert set(loaded) == {"dog", "run"}
        assert np.allclose(loaded["dog"], table["dog"], atol=1e-5)

    def test_dim_mismatch(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("dog 1.0 2.0\n")
        with pytest.raises(RecordParseError):
            load_word_embeddings(path, 3)
