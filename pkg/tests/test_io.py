"""Tests for codecs, manifests, and the synthetic generator."""

import io as stdio

import numpy as np
import pytest

from event2vec.events import EventStream, SensorGeometry, WeightedEventStream, validate
from event2vec.io import (
    BadMagicError,
    CodecError,
    SyntheticSpec,
    TruncatedError,
    VersionError,
    DatasetManifest,
    decode_binary,
    decode_weighted,
    encode_binary,
    encode_weighted,
    generate_synthetic,
    load_manifest_streams,
    read_csv,
    read_manifest,
    synthetic_dataset,
    write_csv,
    write_manifest,
    write_synthetic_dataset,
)
from tests.test_events import random_stream


class TestBinaryCodec:
    def test_empty_stream_is_header_only(self):
        buf = stdio.BytesIO()
        n = encode_binary(EventStream.empty(), SensorGeometry(128, 128), buf)
        assert n == 20
        assert len(buf.getvalue()) == 20

    def test_single_event_record_size(self):
        buf = stdio.BytesIO()
        s = EventStream([5], [6], [7], [1])
        n = encode_binary(s, SensorGeometry(128, 128), buf)
        assert n == 20 + 13

    def test_round_trip_random(self):
        geom = SensorGeometry(640, 480)
        s = random_stream(np.random.default_rng(11), 1000, geom)
        buf = stdio.BytesIO()
        encode_binary(s, geom, buf)
        buf.seek(0)
        back, geom2 = decode_binary(buf)
        assert back.equals(s)
        assert (geom2.width, geom2.height) == (640, 480)

    def test_file_round_trip(self, tmp_path):
        geom = SensorGeometry(64, 64)
        s = random_stream(np.random.default_rng(12), 257, geom)
        path = tmp_path / "s.ev2v"
        encode_binary(s, geom, path)
        back, _ = decode_binary(path)
        assert back.equals(s)

    def test_bad_magic(self):
        with pytest.raises(BadMagicError):
            decode_binary(stdio.BytesIO(b"NOPE" + b"\x00" * 16))

    def test_version_mismatch(self):
        buf = stdio.BytesIO()
        encode_binary(EventStream.empty(), SensorGeometry(8, 8), buf)
        raw = bytearray(buf.getvalue())
        raw[4] = 99
        with pytest.raises(VersionError):
            decode_binary(stdio.BytesIO(bytes(raw)))

    def test_truncation(self):
        geom = SensorGeometry(8, 8)
        s = EventStream([1, 2], [3, 4], [5, 6], [0, 1])
        buf = stdio.BytesIO()
        encode_binary(s, geom, buf)
        raw = buf.getvalue()
        with pytest.raises(TruncatedError):
            decode_binary(stdio.BytesIO(raw[:25]))
        with pytest.raises(TruncatedError):
            decode_binary(stdio.BytesIO(raw[:10]))

    def test_rejects_invalid_stream(self):
        geom = SensorGeometry(8, 8)
        s = EventStream([9], [0], [0], [0])
        with pytest.raises(ValueError):
            encode_binary(s, geom, stdio.BytesIO())


class TestWeightedCodec:
    def test_round_trip(self):
        geom = SensorGeometry(32, 32)
        base = random_stream(np.random.default_rng(13), 100, geom)
        w = WeightedEventStream.from_events(base, np.arange(1, 101))
        buf = stdio.BytesIO()
        n = encode_weighted(w, geom, buf)
        assert n == 20 + 17 * 100
        buf.seek(0)
        back, _ = decode_weighted(buf)
        assert back.equals(w)

    def test_magic_disjoint_from_unweighted(self):
        geom = SensorGeometry(8, 8)
        buf = stdio.BytesIO()
        encode_binary(EventStream.empty(), geom, buf)
        buf.seek(0)
        with pytest.raises(BadMagicError):
            decode_weighted(buf)


class TestCsv:
    def test_single_event(self):
        s = read_csv(stdio.StringIO("x,y,t,p\n0,0,0,0\n"))
        assert len(s) == 1
        assert (s.x[0], s.y[0], s.t[0], s.p[0]) == (0, 0, 0, 0)

    def test_empty_body(self):
        assert len(read_csv(stdio.StringIO("x,y,t,p\n"))) == 0

    def test_malformed_row_reports_line(self):
        with pytest.raises(CodecError, match="line 2"):
            read_csv(stdio.StringIO("x,y,t,p\n1,2,3\n"))

    def test_round_trip(self):
        geom = SensorGeometry(100, 80)
        s = random_stream(np.random.default_rng(14), 64, geom)
        buf = stdio.StringIO()
        write_csv(s, buf)
        back = read_csv(stdio.StringIO(buf.getvalue()))
        assert back.equals(s)


class TestManifest:
    def test_round_trip(self, tmp_path):
        m = DatasetManifest((("a.ev2v", 0), ("b.ev2v", 3)), 4, SensorGeometry(64, 64))
        path = tmp_path / "manifest.txt"
        write_manifest(m, path)
        back = read_manifest(path)
        assert back.entries == m.entries
        assert back.class_count == 4
        assert back.geometry.width == 64

    def test_label_range_enforced(self):
        with pytest.raises(ValueError):
            DatasetManifest((("a", 4),), 4, SensorGeometry(8, 8))

    def test_duplicate_paths_rejected(self):
        with pytest.raises(ValueError):
            DatasetManifest((("a", 0), ("a", 1)), 4, SensorGeometry(8, 8))


class TestSynthetic:
    def test_deterministic(self):
        spec = SyntheticSpec(class_id=0, seed=77)
        s1, l1 = generate_synthetic(spec)
        s2, l2 = generate_synthetic(spec)
        assert l1 == l2 == 0
        assert s1.equals(s2)

    def test_validates_and_sorted(self):
        geom = SensorGeometry(64, 64)
        for cid in range(4):
            s, _ = generate_synthetic(SyntheticSpec(cid, seed=cid))
            assert validate(s, geom) == []
            assert np.all(np.diff(s.t) >= 0)

    def test_rightward_bar_drifts_right(self):
        s, _ = generate_synthetic(SyntheticSpec(0, noise=0.0, seed=5))
        half = len(s) // 2
        assert s.x[half:].astype(float).mean() > s.x[:half].astype(float).mean() + 10

    def test_leftward_bar_drifts_left(self):
        s, _ = generate_synthetic(SyntheticSpec(1, noise=0.0, seed=6))
        half = len(s) // 2
        assert s.x[half:].astype(float).mean() < s.x[:half].astype(float).mean() - 10

    def test_pure_noise_spatially_uniform(self):
        # chi-square over a 8x8 occupancy grid of 1e5 pure-noise events
        geom = SensorGeometry(64, 64)
        spec = SyntheticSpec(0, rate_per_ms=1000.0, duration_ms=100.0, noise=1.0, seed=8)
        s, _ = generate_synthetic(spec, geom)
        assert len(s) == 100_000
        bins = np.zeros(64)
        cell = (s.x // 8).astype(int) * 8 + (s.y // 8).astype(int)
        np.add.at(bins, cell, 1)
        expected = len(s) / 64.0
        chi2 = ((bins - expected) ** 2 / expected).sum()
        # dof = 63; p > 0.01 threshold is ~92.0, keep a seeded margin
        assert chi2 < 92.0

    def test_both_polarities_near_edges(self):
        s, _ = generate_synthetic(SyntheticSpec(0, noise=0.0, seed=9))
        frac_on = s.p.astype(float).mean()
        assert 0.4 < frac_on < 0.6

    def test_event_count_matches_rate(self):
        s, _ = generate_synthetic(SyntheticSpec(2, rate_per_ms=20.0, duration_ms=300.0, seed=1))
        assert len(s) == 6000

    def test_dataset_cycles_classes(self):
        streams, labels = synthetic_dataset(8, base_seed=3)
        assert len(streams) == 8
        np.testing.assert_array_equal(labels, [0, 1, 2, 3, 0, 1, 2, 3])

    def test_dataset_streams_distinct(self):
        streams, _ = synthetic_dataset(4, base_seed=4)
        assert not streams[0].equals(streams[1])

    def test_write_and_load_dataset(self, tmp_path):
        write_synthetic_dataset(tmp_path / "ds", 6, base_seed=5)
        streams, labels, manifest = load_manifest_streams(tmp_path / "ds" / "manifest.txt")
        assert len(streams) == 6
        assert manifest.class_count == 4
        ref, _ = synthetic_dataset(6, base_seed=5)
        assert streams[3].equals(ref[3])
