import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ingestbench.errors import DecodeError, InvalidArgument
from ingestbench.pipeline import Batch, Element
from ingestbench.workload import (
    ConsumerCost,
    CorpusSpec,
    IMGBIN_HEADER,
    ImageRecord,
    Tensor,
    consumer_step,
    decode_imgbin,
    encode_imgbin,
    generate_corpus,
    load_manifest,
    one_hot,
    resize_bilinear,
)


def record(w, h, c, pixels=None):
    if pixels is None:
        pixels = bytes((i * 31) % 256 for i in range(w * h * c))
    return ImageRecord(w, h, c, pixels)


class TestImgbinCodec:
    def test_container_length_arithmetic(self):
        # header (magic 4 + u32 w 4 + u32 h 4 + u8 c 1 = 13) + payload + crc 4
        blob = encode_imgbin(record(2, 2, 1, bytes([0, 1, 2, 3])))
        assert IMGBIN_HEADER.size == 13
        assert len(blob) == 13 + 4 + 4

    def test_payload_size_224(self):
        rec = record(224, 224, 3)
        assert len(rec.pixel_data) == 150528
        assert len(encode_imgbin(rec)) == 13 + 150528 + 4

    def test_roundtrip_identity(self):
        rec = record(1, 1, 3, bytes(3))
        assert decode_imgbin(encode_imgbin(rec)) == rec

    @given(
        w=st.integers(1, 64),
        h=st.integers(1, 64),
        c=st.sampled_from([1, 3]),
        seed=st.integers(0, 2**31),
    )
    @settings(max_examples=60, deadline=None)
    def test_roundtrip_property(self, w, h, c, seed):
        rng = np.random.default_rng(seed)
        rec = record(w, h, c, rng.integers(0, 256, w * h * c, dtype=np.uint8).tobytes())
        assert decode_imgbin(encode_imgbin(rec)) == rec

    def test_flipped_payload_byte_fails_crc(self):
        blob = bytearray(encode_imgbin(record(4, 4, 1)))
        blob[IMGBIN_HEADER.size + 5] ^= 0x01
        with pytest.raises(DecodeError, match="crc"):
            decode_imgbin(bytes(blob))

    def test_header_only_is_truncated(self):
        blob = encode_imgbin(record(4, 4, 1))
        with pytest.raises(DecodeError, match="truncated"):
            decode_imgbin(blob[:13])

    def test_bad_magic(self):
        blob = bytearray(encode_imgbin(record(2, 2, 1)))
        blob[0] = ord("X")
        with pytest.raises(DecodeError, match="magic"):
            decode_imgbin(bytes(blob))

    def test_mismatched_payload_rejected_on_encode(self):
        rec = ImageRecord(4, 4, 1, bytes(3))
        with pytest.raises(InvalidArgument):
            encode_imgbin(rec)


class TestResize:
    def test_same_size_is_identity(self):
        rec = record(7, 5, 3)
        out = resize_bilinear(rec, 7, 5)
        src = np.frombuffer(rec.pixel_data, dtype=np.uint8).reshape(5, 7, 3)
        assert out.dims == (5, 7, 3)
        assert np.array_equal(out.reshaped(), src.astype(np.float32))

    def test_constant_image_stays_constant(self):
        rec = record(2, 2, 1, bytes([9, 9, 9, 9]))
        out = resize_bilinear(rec, 1, 1)
        assert out.reshaped()[0, 0, 0] == 9.0

    def test_downsample_to_center_mean(self):
        # 2x2 pixels [[0,2],[4,6]]; the 1x1 output samples the half-pixel
        # center (0.5, 0.5) = mean of the four corners = 3.0.
        rec = record(2, 2, 1, bytes([0, 2, 4, 6]))
        out = resize_bilinear(rec, 1, 1)
        assert out.reshaped()[0, 0, 0] == pytest.approx(3.0)

    def test_linear_in_pixel_values(self):
        base = np.arange(36, dtype=np.uint8) % 50
        scaled = (base * 5).astype(np.uint8)  # stays within u8 range
        out1 = resize_bilinear(record(6, 6, 1, base.tobytes()), 4, 3).reshaped()
        out5 = resize_bilinear(record(6, 6, 1, scaled.tobytes()), 4, 3).reshaped()
        assert np.allclose(out5, out1 * 5, atol=1e-4)

    def test_upsample_shape_and_range(self):
        out = resize_bilinear(record(8, 8, 3), 224, 224)
        assert out.dims == (224, 224, 3)
        vals = out.reshaped()
        assert vals.min() >= 0.0 and vals.max() <= 255.0

    def test_zero_output_dims_rejected(self):
        with pytest.raises(InvalidArgument):
            resize_bilinear(record(2, 2, 1), 0, 1)


class TestOneHot:
    def test_first_slot(self):
        assert one_hot(0, 4).reshaped().tolist() == [1.0, 0.0, 0.0, 0.0]

    def test_last_slot_of_102(self):
        v = one_hot(101, 102).reshaped()
        assert v[101] == 1.0
        assert v.sum() == 1.0

    def test_sum_always_one(self):
        for idx, n in ((0, 1), (3, 7), (50, 102)):
            assert one_hot(idx, n).reshaped().sum() == 1.0

    def test_out_of_range_rejected(self):
        with pytest.raises(InvalidArgument):
            one_hot(4, 4)


class TestTensor:
    def test_length_consistency_enforced(self):
        with pytest.raises(InvalidArgument):
            Tensor((2, 3), "f32", np.zeros(5, dtype=np.float32))

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidArgument):
            Tensor((2,), "f32", np.array([1.0, np.inf], dtype=np.float32))

    def test_equality_is_bitwise(self):
        a = Tensor((3,), "f32", np.array([1, 2, 3], dtype=np.float32))
        b = Tensor((3,), "f32", np.array([1, 2, 3], dtype=np.float32))
        c = Tensor((3,), "f64", np.array([1, 2, 3], dtype=np.float64))
        assert a == b
        assert a != c


class TestCorpus:
    def test_exact_count_and_manifest(self, tier):
        spec = CorpusSpec(count=50, size_median_bytes=512, seed=3)
        manifest = generate_corpus(tier, spec)
        assert len(manifest.entries) == 50
        assert load_manifest(tier) == manifest.entries
        for relpath, label in manifest.entries:
            assert tier.exists(relpath)
            assert 0 <= label < spec.num_classes

    def test_empty_corpus(self, tier):
        manifest = generate_corpus(tier, CorpusSpec(count=0))
        assert manifest.entries == []
        assert load_manifest(tier) == []

    def test_corruption_floor_arithmetic(self, tier):
        spec = CorpusSpec(count=200, size_median_bytes=256, corrupt_fraction=0.05, seed=1)
        manifest = generate_corpus(tier, spec)
        assert len(manifest.corrupted) == 10
        good = bad = 0
        for relpath, _ in manifest.entries:
            try:
                decode_imgbin(tier.read_file(relpath))
                good += 1
            except DecodeError:
                bad += 1
        assert bad == 10 and good == 190

    def test_determinism_same_seed(self, tier_factory):
        spec = CorpusSpec(count=30, size_median_bytes=512, corrupt_fraction=0.1, seed=9)
        t1, t2 = tier_factory("a"), tier_factory("b")
        m1, m2 = generate_corpus(t1, spec), generate_corpus(t2, spec)
        assert m1.entries == m2.entries
        assert m1.corrupted == m2.corrupted
        for relpath, _ in m1.entries:
            assert t1.read_file(relpath) == t2.read_file(relpath)

    def test_median_size_near_target(self, tier):
        spec = CorpusSpec(count=201, size_median_bytes=8192, size_spread=1.5, seed=5)
        manifest = generate_corpus(tier, spec)
        sizes = sorted(tier.file_size(p) for p, _ in manifest.entries)
        median = sizes[len(sizes) // 2]
        assert median == pytest.approx(8192, rel=0.10)


class TestConsumerStep:
    def _batch(self):
        t = Tensor((4,), "f32", np.arange(4, dtype=np.float32))
        return Batch([Element(t, one_hot(1, 3), 0)], 0)

    def test_duration_contract(self):
        stats = consumer_step(self._batch(), ConsumerCost(duration_s=0.1))
        assert 0.1 <= stats.wall_time_s < 0.2

    def test_checksum_deterministic(self):
        a = consumer_step(self._batch(), ConsumerCost())
        b = consumer_step(self._batch(), ConsumerCost())
        assert a.checksum == b.checksum

    def test_checksum_sensitive_to_content(self):
        t = Tensor((4,), "f32", np.arange(1, 5, dtype=np.float32))
        other = Batch([Element(t, one_hot(1, 3), 0)], 0)
        assert consumer_step(self._batch(), ConsumerCost()).checksum != \
            consumer_step(other, ConsumerCost()).checksum

    def test_kernel_mode_produces_result(self):
        stats = consumer_step(self._batch(), ConsumerCost(kernel_passes=3))
        assert stats.kernel_result != 0.0

    def test_bytes_payload_supported(self):
        batch = Batch([Element(b"raw-bytes", 2, 0)], 0)
        start = time.monotonic()
        stats = consumer_step(batch, ConsumerCost())
        assert stats.checksum != 0
        assert stats.wall_time_s <= time.monotonic() - start + 1e-3
