import json
import struct

import numpy as np
import pytest

from lemon import (BadMagicError, MalformedHeaderError, ModelSpec, PlanError,
                   TruncatedPayloadError, UnsupportedVersionError,
                   random_weights, read_checkpoint, validate_header,
                   write_checkpoint)
from lemon.container import (ALIGNMENT, MAGIC, _PREFIX, load_model_config,
                             load_plan, load_schedule_spec, named_tensors,
                             read_header)
from lemon.rng import substream


def write_toy(tmp_path, name="m.lmn", dtype=np.float64, seed=1, **spec_kw):
    defaults = dict(norm_style="pre_ln", depth=2, width=8, head_dim=4,
                    mlp_ratio=2.0, vocab_or_classes=11)
    defaults.update(spec_kw)
    spec = ModelSpec(**defaults).validate()
    w = random_weights(spec, substream(seed, "ckpt"), dtype=dtype)
    path = tmp_path / name
    write_checkpoint(w, spec, path)
    return w, spec, path


def retable(blob: bytes, mutate) -> bytes:
    """Re-serialize a container with a tampered header (payload untouched)."""
    _, version, header_len = _PREFIX.unpack_from(blob)
    header = json.loads(blob[_PREFIX.size:_PREFIX.size + header_len])
    mutate(header)
    out = json.dumps(header, separators=(",", ":")).encode()
    return _PREFIX.pack(MAGIC, version, len(out)) + out + blob[_PREFIX.size + header_len:]


class TestRoundTrip:
    @pytest.mark.parametrize("dtype", (np.float32, np.float64))
    def test_bitwise_identity(self, tmp_path, dtype):
        w, spec, path = write_toy(tmp_path, dtype=dtype)
        got_w, got_spec = read_checkpoint(path)
        assert got_spec == spec
        for (na, a), (nb, b) in zip(named_tensors(w, spec),
                                    named_tensors(got_w, got_spec)):
            assert na == nb
            assert a.dtype == b.dtype
            np.testing.assert_array_equal(a, b)

    def test_depth_zero_round_trip(self, tmp_path):
        _, spec, path = write_toy(tmp_path, depth=0)
        got_w, got_spec = read_checkpoint(path)
        assert got_spec.depth == 0 and got_w.blocks == []

    @pytest.mark.parametrize("kw", (
        dict(tied_decoder=True),
        dict(norm_style="rms_pre"),
        dict(norm_style="post_res_norm"),
        dict(input_kind="vision", vocab_or_classes=9, patch_dim=6, num_patches=4),
    ))
    def test_variants_round_trip(self, tmp_path, kw):
        w, spec, path = write_toy(tmp_path, **kw)
        got_w, got_spec = read_checkpoint(path)
        assert got_spec == spec
        for (_, a), (_, b) in zip(named_tensors(w, spec),
                                  named_tensors(got_w, got_spec)):
            np.testing.assert_array_equal(a, b)

    def test_offsets_are_aligned(self, tmp_path):
        _, _, path = write_toy(tmp_path)
        blob = path.read_bytes()
        _, table = read_header(blob)
        for entry in table:
            assert entry["byte_offset"] % ALIGNMENT == 0

    def test_eps_survives(self, tmp_path):
        w, spec, path = write_toy(tmp_path, eps=0.125)
        got_w, _ = read_checkpoint(path)
        assert got_w.blocks[0].ln1.eps == 0.125


class TestCorruption:
    def test_bad_magic(self, tmp_path):
        _, _, path = write_toy(tmp_path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"XXXX"
        assert validate_header(bytes(blob))[0].code == "bad_magic"
        path.write_bytes(bytes(blob))
        with pytest.raises(BadMagicError):
            read_checkpoint(path)

    def test_future_version(self, tmp_path):
        _, _, path = write_toy(tmp_path)
        blob = bytearray(path.read_bytes())
        struct.pack_into("<I", blob, 4, 2)
        assert validate_header(bytes(blob))[0].code == "unsupported_version"
        path.write_bytes(bytes(blob))
        with pytest.raises(UnsupportedVersionError):
            read_checkpoint(path)

    def test_malformed_json(self, tmp_path):
        _, _, path = write_toy(tmp_path)
        blob = bytearray(path.read_bytes())
        blob[_PREFIX.size] = ord("X")
        assert validate_header(bytes(blob))[0].code == "malformed_header"
        path.write_bytes(bytes(blob))
        with pytest.raises(MalformedHeaderError):
            read_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        _, _, path = write_toy(tmp_path)
        blob = path.read_bytes()[:-16]
        assert any(d.code == "truncated_payload" for d in validate_header(blob))
        path.write_bytes(blob)
        with pytest.raises(TruncatedPayloadError):
            read_checkpoint(path)

    def test_truncated_header(self, tmp_path):
        _, _, path = write_toy(tmp_path)
        blob = path.read_bytes()[:_PREFIX.size + 5]
        assert validate_header(blob)[0].code == "truncated_payload"

    def test_overlapping_offsets(self, tmp_path):
        _, _, path = write_toy(tmp_path)
        blob = path.read_bytes()

        def overlap(header):
            header["tensors"][1]["byte_offset"] = header["tensors"][0]["byte_offset"]
        bad = retable(blob, overlap)
        diags = validate_header(bad)
        assert any(d.code == "malformed_header" for d in diags)
        # the diagnostic names both tensors involved
        header_len = struct.unpack_from("<4sIQ", bad)[2]
        header = json.loads(bad[_PREFIX.size:_PREFIX.size + header_len])
        names = [e["name"] for e in header["tensors"][:2]]
        overlap_msgs = [d.message for d in diags if "overlap" in d.message]
        assert overlap_msgs and all(n in overlap_msgs[0] for n in names)
        path.write_bytes(bad)
        with pytest.raises(MalformedHeaderError):
            read_checkpoint(path)

    def test_misaligned_offset(self, tmp_path):
        _, _, path = write_toy(tmp_path)

        def misalign(header):
            header["tensors"][0]["byte_offset"] += 8
        bad = retable(path.read_bytes(), misalign)
        assert any("aligned" in d.message for d in validate_header(bad))

    def test_byte_length_mismatch(self, tmp_path):
        _, _, path = write_toy(tmp_path)

        def corrupt(header):
            header["tensors"][0]["byte_length"] += 8
        bad = retable(path.read_bytes(), corrupt)
        assert any(d.code == "malformed_header" for d in validate_header(bad))

    def test_duplicate_names(self, tmp_path):
        _, _, path = write_toy(tmp_path)

        def dup(header):
            header["tensors"][1]["name"] = header["tensors"][0]["name"]
        bad = retable(path.read_bytes(), dup)
        assert any("duplicate" in d.message for d in validate_header(bad))

    def test_missing_tensor_rejected_on_read(self, tmp_path):
        _, _, path = write_toy(tmp_path)

        def drop(header):
            header["tensors"].pop()
        path.write_bytes(retable(path.read_bytes(), drop))
        with pytest.raises(MalformedHeaderError):
            read_checkpoint(path)

    def test_valid_file_passes_validator(self, tmp_path):
        _, _, path = write_toy(tmp_path)
        assert validate_header(path.read_bytes()) == []


class TestConfigParsing:
    def test_load_plan(self, tmp_path):
        path = tmp_path / "plan.json"
        path.write_text(json.dumps({"target_width": 16, "target_depth": 4,
                                    "policy": "net2net_equal", "seed": 9}))
        plan = load_plan(path)
        assert plan.target_width == 16 and plan.policy == "net2net_equal"

    def test_load_plan_unknown_field(self, tmp_path):
        path = tmp_path / "plan.json"
        path.write_text(json.dumps({"target_width": 16, "target_depth": 4,
                                    "oops": 1}))
        with pytest.raises(PlanError):
            load_plan(path)

    def test_load_model_config(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"norm_style": "pre_ln", "depth": 1,
                                    "width": 8, "head_dim": 4, "mlp_ratio": 2.0,
                                    "vocab_or_classes": 5, "dtype": "float32"}))
        spec, dtype = load_model_config(path)
        assert spec.width == 8 and dtype == np.float32

    def test_load_model_config_bad_dtype(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"norm_style": "pre_ln", "depth": 1,
                                    "width": 8, "head_dim": 4, "mlp_ratio": 2.0,
                                    "vocab_or_classes": 5, "dtype": "float16"}))
        with pytest.raises(PlanError):
            load_model_config(path)

    def test_load_schedule_spec(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps({"max_lr": 1e-3, "min_lr": 1e-5,
                                    "warmup": 5, "total": 300}))
        spec = load_schedule_spec(path)
        assert spec.total == 300
