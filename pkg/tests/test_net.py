import json
import struct

import numpy as np
import pytest
import torch

from usdespeckle.imgcore import Image, ImageError
from usdespeckle.net import (DESK_ARCH, FULL_SCALE_ARCH, MAGIC, ArchConfig, CheckpointError, build_model,
                             checkpoint_bytes, forward, load_checkpoint, param_count, save_checkpoint)

TINY = ArchConfig(n_branches=2, base_channels=2, channel_cap=1)
# desk-scale three-branch model, counted once and pinned
DESK_PARAM_COUNT = 333601


def _img(rng, n=32):
    return Image(rng.random((n, n)))


def test_build_deterministic():
    a, b = build_model(TINY, 3), build_model(TINY, 3)
    for p, q in zip(a.parameters(), b.parameters()):
        assert torch.equal(p, q)
    c = build_model(TINY, 4)
    assert any(not torch.equal(p, q) for p, q in zip(a.parameters(), c.parameters()))


def test_encoders_same_shapes_independent_values():
    m = build_model(DESK_ARCH, 0)
    e0, e1 = m.encoder_params(0), m.encoder_params(1)
    assert [p.shape for p in e0] == [p.shape for p in e1]
    assert not torch.equal(e0[0], e1[0])


def test_single_branch_is_plain_autoencoder(rng):
    m = build_model(ArchConfig(n_branches=1), 0)
    assert len(m.encoders) == 1
    assert forward(m, _img(rng)).shape == (32, 32)


def test_init_fan_in_bounds():
    from usdespeckle.net import RES_BRANCH_SCALE, ResBlock

    model = build_model(DESK_ARCH, 3)
    for m in model.modules():
        if isinstance(m, torch.nn.Conv2d):
            bound = (m.in_channels * 9) ** -0.5
            assert m.weight.abs().max().item() <= bound + 1e-7
            assert torch.all(m.bias == 0)
        if isinstance(m, ResBlock):
            bound = RES_BRANCH_SCALE * (m.conv2.in_channels * 9) ** -0.5
            assert m.conv2.weight.abs().max().item() <= bound + 1e-7


def test_param_counts():
    conv = torch.nn.Conv2d(1, 8, 3)
    assert param_count(conv) == 80
    assert param_count(build_model(DESK_ARCH, 0)) == DESK_PARAM_COUNT
    full = param_count(build_model(FULL_SCALE_ARCH, 0))
    assert abs(full - 3e6) / 3e6 < 0.2


def test_doubling_width_quadruples_weights():
    def weights(arch):
        return sum(p.numel() for n, p in build_model(arch, 0).named_parameters() if n.endswith("weight"))
    a = weights(ArchConfig(base_channels=16))
    b = weights(ArchConfig(base_channels=32))
    assert abs(b / a - 4.0) / 4.0 < 0.1


def test_arch_widths_and_validation():
    assert ArchConfig(base_channels=16, channel_cap=2).widths() == [16, 32, 32, 32]
    assert ArchConfig(channel_cap=8).widths() == [16, 32, 64, 128]
    with pytest.raises(ValueError):
        ArchConfig(base_channels=0)
    with pytest.raises(ValueError):
        ArchConfig(norm="batch")


def test_forward_shape_range_and_padding_error(rng):
    m = build_model(TINY, 0)
    out = forward(m, _img(rng, 48), branch=2)
    assert out.shape == (48, 48)
    assert out.pixels.min() > 0 and out.pixels.max() < 1
    with pytest.raises(ImageError, match="pad"):
        forward(m, Image(np.zeros((20, 32))))
    with pytest.raises(ValueError):
        forward(m, _img(rng), branch=3)


def test_zero_final_layer_gives_half(rng):
    m = build_model(TINY, 0)
    with torch.no_grad():
        m.decoder.convs[-1].weight.zero_()
        m.decoder.convs[-1].bias.zero_()
    np.testing.assert_allclose(forward(m, _img(rng)).pixels, 0.5, atol=1e-7)


# ---------------------------------------------------------- reference forward

def _conv(x, w, b, stride=1):
    c_out, c_in, k, _ = w.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    h = (x.shape[1] + 2 * pad - k) // stride + 1
    wd = (x.shape[2] + 2 * pad - k) // stride + 1
    out = np.zeros((c_out, h, wd))
    for o in range(c_out):
        acc = np.full((h, wd), b[o])
        for c in range(c_in):
            for i in range(k):
                for j in range(k):
                    acc += w[o, c, i, j] * xp[c, i:i + stride * h:stride, j:j + stride * wd:stride]
        out[o] = acc
    return out


def _relu(x):
    return np.maximum(x, 0)


def _np(p):
    return p.detach().double().numpy()


def _reference_forward(model, x, branch):
    enc = model.encoders[branch]
    h = x[None]
    for conv in enc.convs:
        h = _relu(_conv(h, _np(conv.weight), _np(conv.bias), 2))
    for blk in list(enc.res) + list(model.decoder.res):
        t = _relu(_conv(h, _np(blk.conv1.weight), _np(blk.conv1.bias)))
        h = _relu(h + _conv(t, _np(blk.conv2.weight), _np(blk.conv2.bias)))
    convs = list(model.decoder.convs)
    for i, conv in enumerate(convs):
        h = h.repeat(2, axis=1).repeat(2, axis=2)
        h = _conv(h, _np(conv.weight), _np(conv.bias))
        h = 1 / (1 + np.exp(-h)) if i == len(convs) - 1 else _relu(h)
    return h[0]


def test_forward_matches_numpy_reference(rng):
    m = build_model(TINY, 7).double()
    x = rng.random((16, 16))
    for branch in (1, 2):
        got = forward(m, Image(x), branch).pixels
        np.testing.assert_allclose(got, _reference_forward(m, x, branch - 1), atol=1e-10)


# ------------------------------------------------------------- branch sharing

def test_branch_independence_and_decoder_sharing(rng):
    m = build_model(ArchConfig(n_branches=3, base_channels=4), 1)
    img = _img(rng)
    before = [forward(m, img, k).pixels for k in (1, 2, 3)]
    with torch.no_grad():
        for p in m.encoder_params(0):
            p.add_(0.05)
    after = [forward(m, img, k).pixels for k in (1, 2, 3)]
    assert not np.array_equal(before[0], after[0])
    assert np.array_equal(before[1], after[1]) and np.array_equal(before[2], after[2])
    with torch.no_grad():
        for p in m.decoder_params():
            p.mul_(1.1)
    final = [forward(m, img, k).pixels for k in (1, 2, 3)]
    assert all(not np.array_equal(a, b) for a, b in zip(after, final))


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path):
    m = build_model(TINY, 5)
    path = tmp_path / "m.s2s"
    save_checkpoint(m, path)
    back = load_checkpoint(path, expect_arch=TINY)
    assert back.arch == TINY and back.seed == 5
    for p, q in zip(m.parameters(), back.parameters()):
        assert torch.equal(p, q)
    assert checkpoint_bytes(back) == path.read_bytes()


def test_checkpoint_layout(tmp_path):
    m = build_model(TINY, 2)
    data = checkpoint_bytes(m)
    assert data[:4] == MAGIC == b"S2S1"
    (n,) = struct.unpack("<I", data[4:8])
    head = json.loads(data[8:8 + n].decode("utf-8"))
    assert head["arch"] == TINY.to_dict() and head["seed"] == 2
    body = np.frombuffer(data[8 + n:], dtype="<f4")
    params = list(m.parameters())
    assert body.size == param_count(m)
    # encoders first (declaration order), then the decoder
    first_enc = m.encoders[0].convs[0].weight.detach().numpy().ravel()
    np.testing.assert_array_equal(body[:first_enc.size], first_enc)
    last = params[-1].detach().numpy().ravel()
    np.testing.assert_array_equal(body[-last.size:], last)
    assert params[-1] is m.decoder.convs[-1].bias


def test_corrupt_checkpoints(tmp_path):
    m = build_model(TINY, 0)
    good = checkpoint_bytes(m)
    bad = tmp_path / "bad.s2s"
    bad.write_bytes(b"XXXX" + good[4:])
    with pytest.raises(CheckpointError, match="S2S1"):
        load_checkpoint(bad)
    bad.write_bytes(good[:-4])
    with pytest.raises(CheckpointError, match="bytes"):
        load_checkpoint(bad)
    bad.write_bytes(good[:8] + b"#" + good[9:])
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    ok = tmp_path / "ok.s2s"
    ok.write_bytes(good)
    with pytest.raises(CheckpointError, match="does not match"):
        load_checkpoint(ok, expect_arch=DESK_ARCH)
