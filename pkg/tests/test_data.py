import json
import struct

import numpy as np
import pytest

from qednet import data
from qednet.container import (
    BadMagicError,
    ChecksumError,
    HeaderError,
    TruncatedError,
    VersionError,
    fnv1a64,
    pack,
)
from qednet.data import (
    MANGROVE,
    Raster,
    SynthSpec,
    decode_mask,
    decode_raster,
    encode_mask,
    encode_raster,
    extract_patches,
    load_scene_dir,
    nearest_template,
    normalize,
    pad_even,
    read_mask,
    read_raster,
    stitch_patches,
    synth_scene,
    write_mask,
    write_raster,
)
from qednet.metrics import confusion, kappa
from qednet.qsim import ContractError


def test_fnv1a_reference_vectors():
    # published FNV-1a 64-bit test vectors
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_raster_roundtrip(tmp_path, rng):
    r = Raster(rng.uniform(size=(8, 8, 12)).astype(np.float32), scale=1.0)
    write_raster(tmp_path / "a.mqr", r)
    back = read_raster(tmp_path / "a.mqr")
    assert back.values.dtype == np.float32
    assert np.array_equal(back.values, r.values)
    assert back.band_names == r.band_names
    assert not list(tmp_path.glob(".*.tmp"))


def test_layout_is_band_sequential(rng):
    r = Raster(rng.uniform(size=(2, 3, 12)).astype(np.float32))
    blob = encode_raster(r)
    (hlen,) = struct.unpack_from("<I", blob, 8)
    header = json.loads(blob[12 : 12 + hlen])
    assert header["dtype"] == "f32le" and header["layout"] == "bsq" and header["bands"] == 12
    payload = np.frombuffer(blob[12 + hlen : -8], dtype="<f4")
    np.testing.assert_array_equal(payload[:6], r.values[..., 0].ravel())
    assert struct.unpack("<Q", blob[-8:])[0] == fnv1a64(blob[12 + hlen : -8])


def test_mask_roundtrip(tmp_path, rng):
    m = rng.integers(0, 2, (5, 7)).astype(np.uint8)
    write_mask(tmp_path / "m.mqm", m)
    assert np.array_equal(read_mask(tmp_path / "m.mqm"), m)
    with pytest.raises(ContractError):
        encode_mask(np.full((2, 2), 2))


def _blob():
    return encode_raster(Raster(np.ones((2, 2, 12), dtype=np.float32)))


def test_bad_magic():
    with pytest.raises(BadMagicError):
        decode_raster(b"GARBAGE!" + _blob()[8:])


def test_version_mismatch():
    with pytest.raises(VersionError):
        decode_raster(b"MQRASTR2" + _blob()[8:])
    header = data._header(2, 2, data.BAND_NAMES, "f32le", 1.0)
    header["version"] = 9
    with pytest.raises(VersionError):
        decode_raster(pack(data.MAGIC, header, bytes(2 * 2 * 12 * 4)))


def test_header_band_count_mismatch():
    header = data._header(2, 2, data.BAND_NAMES[:11], "f32le", 1.0)
    header["bands"] = 12
    with pytest.raises(HeaderError):
        decode_raster(pack(data.MAGIC, header, bytes(2 * 2 * 12 * 4)))


def test_truncated():
    blob = _blob()
    for cut in (10, 30, len(blob) - 20, len(blob) - 1):
        with pytest.raises(TruncatedError):
            decode_raster(blob[:cut])


def test_checksum():
    blob = bytearray(_blob())
    blob[-12] ^= 0xFF
    with pytest.raises(ChecksumError):
        decode_raster(bytes(blob))


def test_normalize_examples():
    r = Raster(np.array([10000, 15000, 2500, -5], dtype=np.float32).reshape(1, 4, 1), ["b"])
    out, clamped = normalize(r, 10000)
    np.testing.assert_array_equal(out.values.ravel(), [1.0, 1.0, 0.25, 0.0])
    assert clamped == 2
    with pytest.raises(ContractError):
        normalize(r, 0)


def test_normalize_idempotent_on_unit_data(rng):
    r = Raster(rng.uniform(size=(3, 3, 12)).astype(np.float32))
    out, clamped = normalize(r, 1.0)
    assert clamped == 0 and np.array_equal(out.values, r.values)


def test_pad_even(rng):
    r = Raster(rng.uniform(size=(5, 4, 12)))
    p = pad_even(r)
    assert p.values.shape == (6, 4, 12)
    # reflect: the new last row mirrors row 3 about row 4
    np.testing.assert_array_equal(p.values[5], r.values[3])
    with pytest.raises(ContractError):
        pad_even(Raster(np.zeros((1, 4, 12))))


def test_patch_tiling_counts(rng):
    one = extract_patches(Raster(np.zeros((256, 256, 1), np.float32), ["b"]), size=256)
    assert len(one) == 1 and one[0].valid.all()
    four = extract_patches(Raster(np.zeros((512, 512, 1), np.float32), ["b"]), size=256)
    assert len(four) == 4 and [p.origin for p in four] == [(0, 0), (0, 256), (256, 0), (256, 256)]


def test_patch_tiling_odd_size():
    r = Raster(np.zeros((257, 256, 1), np.float32), ["b"])
    patches = extract_patches(r, size=256)
    assert len(patches) == 2
    assert patches[0].valid.all()
    # only one real row lives in the second tile
    assert patches[1].valid.sum() == 256
    assert patches[1].valid[0].all() and not patches[1].valid[1:].any()


def test_patch_size_must_be_even():
    with pytest.raises(ContractError):
        extract_patches(Raster(np.zeros((8, 8, 1), np.float32), ["b"]), size=5)


def test_stitch_reproduces_padded_raster(rng):
    r = Raster(rng.uniform(size=(21, 14, 3)).astype(np.float32), ["a", "b", "c"])
    m = rng.integers(0, 2, (21, 14))
    patches = extract_patches(r, m, size=8)
    full = stitch_patches(patches)
    assert full.shape == (24, 16, 3)
    np.testing.assert_array_equal(full[:21, :14], r.values)
    np.testing.assert_array_equal(stitch_patches(patches, "mask")[:21, :14], m)
    assert stitch_patches(patches, "valid").sum() == 21 * 14


def test_synth_determinism():
    a, b = synth_scene(SynthSpec(seed=5)), synth_scene(SynthSpec(seed=5))
    assert np.array_equal(a[0].values, b[0].values) and np.array_equal(a[1], b[1])
    c = synth_scene(SynthSpec(seed=6))
    assert not np.array_equal(a[1], c[1])


def test_synth_noise_free_labels():
    spec = SynthSpec(seed=3, noise_std=0.0)
    raster, mask = synth_scene(spec)
    tmpl = np.asarray(spec.templates[MANGROVE], dtype=np.float32)
    is_mangrove = np.all(raster.values == tmpl, axis=-1)
    assert mask.any()
    assert np.array_equal(is_mangrove, mask.astype(bool))


def test_templates_well_separated():
    t = np.array(list(data.DEFAULT_TEMPLATES.values()))
    d = np.sqrt(((t[:, None] - t[None]) ** 2).sum(-1))
    assert d[np.triu_indices(len(t), 1)].min() >= 10 * 0.03


def test_nearest_template_bound():
    for seed in range(5):
        raster, mask = synth_scene(SynthSpec(seed=seed))
        assert kappa(confusion(nearest_template(raster), mask)) >= 0.99


def test_synth_rejects_bad_spec():
    with pytest.raises(ContractError):
        SynthSpec(noise_std=-1)


def test_load_scene_dir(tmp_path):
    raster, mask = synth_scene(SynthSpec(seed=1, height=8, width=8))
    write_raster(tmp_path / "s1.mqr", raster)
    write_mask(tmp_path / "s1.mqm", mask)
    scenes = load_scene_dir(tmp_path)
    assert [s[0] for s in scenes] == ["s1"]
    assert np.array_equal(scenes[0][2], mask)
    (tmp_path / "s2.mqr").write_bytes(encode_raster(raster))
    with pytest.raises(FileNotFoundError):
        load_scene_dir(tmp_path)


def test_decode_mask_rejects_raster():
    with pytest.raises(HeaderError):
        decode_mask(_blob())
