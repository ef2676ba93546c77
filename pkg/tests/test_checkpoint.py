import struct

import numpy as np
import pytest

from dspp_dlm import checkpoint, dspp, inference, nn


def test_mlp_roundtrip(tmp_path):
    model = nn.init_params(nn.MLPSpec(2, 3, 7), 5)
    p = tmp_path / "net.ckpt"
    checkpoint.save_mlp(p, model)
    loaded = checkpoint.load_mlp(p)
    assert loaded.spec == model.spec
    np.testing.assert_array_equal(loaded.params, model.params)


def test_model_roundtrip_with_adam(tmp_path):
    scheme = dspp.ObservationScheme((2.0, 4.0))
    model = inference.initial_model(
        inference.ModelConfig(2, 5, diffusion="learned", z_scale=30.0, drift_scale=25.0),
        scheme,
        9,
    )
    vec = inference.param_vector(model)
    adam = inference.AdamState(np.arange(len(vec), dtype=float), np.ones(len(vec)), t=42)
    grid = inference.TimeGrid(4.0, 60)
    p = tmp_path / "model.ckpt"
    checkpoint.save_model(p, model, grid, adam, meta={"trained": True})
    loaded, g2, a2, meta = checkpoint.load_model(p)
    assert g2 == grid
    assert meta == {"trained": True}
    assert a2.t == 42
    np.testing.assert_array_equal(a2.m, adam.m)
    np.testing.assert_array_equal(inference.param_vector(loaded), vec)
    assert loaded.sigma is not None
    assert loaded.z_scale == model.z_scale
    assert loaded.context_mode == model.context_mode


def test_checkpoint_bytes_deterministic(tmp_path):
    model = nn.init_params(nn.MLPSpec(2, 2, 4), 3)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    checkpoint.save_mlp(p1, model)
    checkpoint.save_mlp(p2, model)
    assert p1.read_bytes() == p2.read_bytes()


def test_version_error(tmp_path):
    model = nn.init_params(nn.MLPSpec(2, 1, 3), 1)
    p = tmp_path / "net.ckpt"
    checkpoint.save_mlp(p, model)
    raw = bytearray(p.read_bytes())
    raw[8:12] = struct.pack("<I", 99)
    p.write_bytes(bytes(raw))
    with pytest.raises(checkpoint.CheckpointError, match="version"):
        checkpoint.load_mlp(p)


def test_bad_magic_and_truncation(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"NOTACKPT" + b"\x00" * 16)
    with pytest.raises(checkpoint.CheckpointError, match="magic"):
        checkpoint.load_mlp(p)
    model = nn.init_params(nn.MLPSpec(2, 1, 3), 1)
    good = tmp_path / "good.ckpt"
    checkpoint.save_mlp(good, model)
    trunc = tmp_path / "trunc.ckpt"
    trunc.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(checkpoint.CheckpointError, match="truncated"):
        checkpoint.load_mlp(trunc)


def test_params_little_endian_float64(tmp_path):
    # the trailing bytes are exactly the little-endian float64 params
    model = nn.init_params(nn.MLPSpec(2, 1, 2), 8)
    p = tmp_path / "net.ckpt"
    checkpoint.save_mlp(p, model)
    raw = p.read_bytes()
    n = model.spec.n_params
    tail = np.frombuffer(raw[-8 * n :], dtype="<f8")
    np.testing.assert_array_equal(tail, model.params)
