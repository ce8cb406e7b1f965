"""Sprite generator and MSEQ container: determinism, reflection physics,
format validation with byte offsets, lossless round-trips."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
import util
from modernn.datagen import (GLYPH_COUNT, MAGIC, Dataset, SpriteSequenceSpec,
                             generate_dataset, generate_sequence, iter_dataset,
                             load_dataset, render_glyph, save_dataset,
                             step_sprite, write_dataset)
from modernn.errors import ConfigError, ContractError, FormatError


class TestGlyphs:
    def test_all_glyphs_distinct_and_binary(self):
        glyphs = [render_glyph(i, 12) for i in range(GLYPH_COUNT)]
        for g in glyphs:
            assert g.shape == (12, 12) and g.dtype == np.uint8
            assert set(np.unique(g)) <= {0, 255}
            assert g.max() == 255
        seen = {g.tobytes() for g in glyphs}
        assert len(seen) == GLYPH_COUNT

    def test_nearest_neighbor_doubling(self):
        base = render_glyph(3, 12)
        doubled = render_glyph(3, 24)
        np.testing.assert_array_equal(doubled, np.kron(base, np.ones((2, 2), dtype=np.uint8)))

    def test_bad_glyph_id(self):
        with pytest.raises(ContractError):
            render_glyph(GLYPH_COUNT, 12)


class TestStepSprite:
    def test_interior_step(self):
        pos, vel = step_sprite((3.0, 4.0), (1.5, -2.0), (10.0, 10.0))
        assert pos == (4.5, 2.0) and vel == (1.5, -2.0)

    def test_reflection_at_far_wall(self):
        pos, vel = step_sprite((10.0, 0.0), (2.0, 0.5), (10.0, 10.0))
        assert pos == (8.0, 0.5)
        assert vel == (-2.0, 0.5)

    def test_reflection_at_near_wall(self):
        pos, vel = step_sprite((1.0, 5.0), (-3.0, 0.0), (10.0, 10.0))
        assert pos == (2.0, 5.0) and vel == (3.0, 0.0)

    def test_out_of_bounds_rejected(self):
        with pytest.raises(ContractError):
            step_sprite((11.0, 0.0), (1.0, 1.0), (10.0, 10.0))

    @given(p0=st.floats(0.0, 10.0), v=st.floats(-30.0, 30.0),
           steps=st.integers(1, 60))
    def test_matches_triangle_wave_closed_form(self, p0, v, steps):
        hi = 10.0
        pos, vel = (p0, 0.0), (v, 0.0)
        for _ in range(steps):
            pos, vel = step_sprite(pos, vel, (hi, hi))
        want = oracles.sprite_position_closed_form(p0, v, steps, hi)
        assert abs(pos[0] - want) < 1e-9
        assert 0.0 <= pos[0] <= hi
        assert abs(vel[0]) == abs(v)


class TestSpecValidation:
    def test_defaults_are_valid(self):
        SpriteSequenceSpec()

    @pytest.mark.parametrize("kw", [
        dict(frame_size=1),
        dict(sprite_size=0),
        dict(sprite_size=64),
        dict(seq_len=0),
        dict(modes=()),
        dict(modes=(0,)),
        dict(speed_range=(0.0, 1.0)),
        dict(speed_range=(3.0, 2.0)),
        dict(proportions=(0.5, 0.5)),
        dict(modes=(1, 2), proportions=(0.9, 0.2)),
        dict(modes=(1, 2), proportions=(-0.1, 1.1)),
    ])
    def test_invalid_specs_rejected(self, kw):
        with pytest.raises(ConfigError):
            SpriteSequenceSpec(**kw)

    def test_mixture_uniform_by_default(self):
        np.testing.assert_allclose(SpriteSequenceSpec().mixture(), [1 / 3] * 3)


class TestGenerateSequence:
    def test_shapes_and_label(self):
        spec = util.tiny_spec()
        frames, label = generate_sequence(spec, 2, np.random.default_rng(0))
        assert frames.shape == (spec.seq_len, 1, 16, 16)
        assert frames.dtype == np.uint8
        assert label == 2

    def test_pixels_stay_binary(self):
        frames, _ = generate_sequence(util.tiny_spec(), 2, np.random.default_rng(1))
        assert set(np.unique(frames)) <= {0, 255}

    def test_every_frame_nonempty(self):
        frames, _ = generate_sequence(util.tiny_spec(seq_len=12), 1,
                                      np.random.default_rng(2))
        assert (frames.reshape(12, -1).max(axis=1) == 255).all()

    def test_mode_not_in_spec_rejected(self):
        with pytest.raises(ContractError):
            generate_sequence(util.tiny_spec(), 5, np.random.default_rng(0))


class TestGenerateDataset:
    def test_deterministic_per_seed(self):
        a = generate_dataset(util.tiny_spec(seed=3), 8)
        b = generate_dataset(util.tiny_spec(seed=3), 8)
        np.testing.assert_array_equal(a.frames, b.frames)
        np.testing.assert_array_equal(a.labels, b.labels)
        c = generate_dataset(util.tiny_spec(seed=4), 8)
        assert not np.array_equal(a.frames, c.frames)

    def test_count_prefix_stable(self):
        spec = util.tiny_spec(seed=7)
        big = generate_dataset(spec, 10)
        small = generate_dataset(spec, 6)
        np.testing.assert_array_equal(big.frames[:6], small.frames)
        np.testing.assert_array_equal(big.labels[:6], small.labels)

    def test_labels_match_modes(self):
        ds = generate_dataset(util.tiny_spec(seed=5), 20)
        assert set(np.unique(ds.labels)) <= {1, 2}
        assert ds.count == 20 and ds.seq_len == 4

    def test_proportions_respected(self):
        spec = util.tiny_spec(seed=6, modes=(1, 2), proportions=(1.0, 0.0))
        ds = generate_dataset(spec, 12)
        assert (ds.labels == 1).all()

    def test_dataset_validation(self):
        with pytest.raises(ContractError):
            Dataset(frames=np.zeros((2, 3, 1, 4, 4), np.uint8), labels=np.zeros(3, np.int64))
        with pytest.raises(ContractError):
            Dataset(frames=np.zeros((2, 3, 4, 4), np.uint8), labels=np.zeros(2, np.int64))


class TestSerialization:
    def test_save_load_roundtrip(self, tmp_path):
        ds = util.tiny_dataset(count=5)
        p = tmp_path / "d.mseq"
        save_dataset(ds, p)
        back = load_dataset(p)
        np.testing.assert_array_equal(back.frames, ds.frames)
        np.testing.assert_array_equal(back.labels, ds.labels)

    def test_save_load_save_is_byte_identical(self, tmp_path):
        ds = util.tiny_dataset(count=4)
        p1, p2 = tmp_path / "a.mseq", tmp_path / "b.mseq"
        save_dataset(ds, p1)
        save_dataset(load_dataset(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_streaming_writer_matches_in_memory(self, tmp_path):
        spec = util.tiny_spec(seed=9)
        p1, p2 = tmp_path / "mem.mseq", tmp_path / "stream.mseq"
        save_dataset(generate_dataset(spec, 7), p1)
        write_dataset(p2, spec, 7)
        assert p1.read_bytes() == p2.read_bytes()

    def test_iter_matches_load(self, tmp_path):
        ds = util.tiny_dataset(count=3)
        p = tmp_path / "d.mseq"
        save_dataset(ds, p)
        for i, (frames, label) in enumerate(iter_dataset(p)):
            np.testing.assert_array_equal(frames, ds.frames[i])
            assert label == ds.labels[i]
        assert i == 2


class TestFormatErrors:
    def _write_valid(self, tmp_path):
        p = tmp_path / "d.mseq"
        save_dataset(util.tiny_dataset(count=2), p)
        return p

    def test_bad_magic(self, tmp_path):
        p = self._write_valid(tmp_path)
        raw = bytearray(p.read_bytes())
        raw[:4] = b"XSEQ"
        p.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="magic"):
            load_dataset(p)

    def test_bad_version(self, tmp_path):
        p = self._write_valid(tmp_path)
        raw = bytearray(p.read_bytes())
        raw[4:8] = (99).to_bytes(4, "little")
        p.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="version"):
            load_dataset(p)

    def test_truncated_header(self, tmp_path):
        p = self._write_valid(tmp_path)
        p.write_bytes(p.read_bytes()[:10])
        with pytest.raises(FormatError):
            load_dataset(p)

    def test_truncated_payload_reports_offset(self, tmp_path):
        p = self._write_valid(tmp_path)
        raw = p.read_bytes()
        p.write_bytes(raw[:-7])
        with pytest.raises(FormatError, match="byte"):
            list(iter_dataset(p))

    def test_trailing_garbage_detected(self, tmp_path):
        p = self._write_valid(tmp_path)
        p.write_bytes(p.read_bytes() + b"xx")
        with pytest.raises(FormatError):
            list(iter_dataset(p))

    def test_huge_count_header_rejected_before_allocation(self, tmp_path):
        p = tmp_path / "d.mseq"
        import struct
        hdr = struct.pack("<4sIIHHHB", MAGIC, 1, 2**31, 4, 16, 16, 1)
        p.write_bytes(hdr)
        with pytest.raises(FormatError):
            load_dataset(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "d.mseq"
        p.write_bytes(b"")
        with pytest.raises(FormatError):
            load_dataset(p)
