import numpy as np
import pytest
import torch

from fmrisr.errors import ConsistencyError, FormatError, NumericError, ShapeError
from fmrisr.network import (
    ModelConfig,
    backward,
    conv3d,
    forward,
    init_model,
    load_checkpoint,
    predict_residual,
    save_checkpoint,
)
from fmrisr.volume import VoxelGrid

TINY = ModelConfig(base_channels=2, growth_channels=2, num_dense_layers=2)


def randomized(config, seed=0, scale=0.3):
    model = init_model(config, np.random.default_rng(seed)).double()
    gen = np.random.default_rng(seed + 1)
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(torch.from_numpy(gen.normal(0, scale, tuple(p.shape))))
    return model


def naive_conv(x, k, b):
    """Six nested loops: output voxel (3) x input channel x kernel offsets, zero padding."""
    c_in, nx, ny, nz = x.shape
    c_out, _, kk, _, _ = k.shape
    r = kk // 2
    out = np.zeros((c_out, nx, ny, nz))
    for o in range(c_out):
        for i in range(nx):
            for j in range(ny):
                for l in range(nz):
                    acc = b[o]
                    for c in range(c_in):
                        for dx in range(kk):
                            for dy in range(kk):
                                for dz in range(kk):
                                    p, q, s = i + dx - r, j + dy - r, l + dz - r
                                    if 0 <= p < nx and 0 <= q < ny and 0 <= s < nz:
                                        acc += k[o, c, dx, dy, dz] * x[c, p, q, s]
                    out[o, i, j, l] = acc
    return out


def shift_conv(x, k, b):
    """Same-padded correlation by summing shifted copies."""
    pad = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1)))
    nx, ny, nz = x.shape[1:]
    out = np.zeros((k.shape[0], nx, ny, nz)) + b[:, None, None, None]
    for dx in range(3):
        for dy in range(3):
            for dz in range(3):
                patch = pad[:, dx : dx + nx, dy : dy + ny, dz : dz + nz]
                out += np.einsum("oc,cxyz->oxyz", k[:, :, dx, dy, dz], patch)
    return out


class TestConv:
    def test_delta_kernel(self, rng):
        x = rng.normal(size=(1, 5, 5, 5))
        k = np.zeros((1, 1, 3, 3, 3))
        k[0, 0, 1, 1, 1] = 1.0
        assert np.array_equal(conv3d(x, k, np.zeros(1)), x)

    def test_ones_kernel_interior(self):
        out = conv3d(np.ones((1, 5, 5, 5)), np.ones((1, 1, 3, 3, 3)), np.zeros(1))
        assert out[0, 2, 2, 2] == 27.0
        assert out[0, 0, 0, 0] == 8.0

    def test_matches_nested_loops(self, rng):
        x = rng.normal(size=(2, 5, 5, 5))
        k = rng.normal(size=(3, 2, 3, 3, 3))
        b = rng.normal(size=3)
        assert np.allclose(conv3d(x, k, b), naive_conv(x, k, b), atol=1e-12)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            conv3d(rng.normal(size=(2, 4, 4, 4)), rng.normal(size=(1, 3, 3, 3, 3)))


class TestModel:
    def test_fresh_model_is_identity(self, rng):
        model = init_model(ModelConfig(8, 4, 3), rng)
        grid = VoxelGrid(rng.uniform(size=(9, 10, 11)))
        assert np.array_equal(forward(model, grid).data, grid.data)

    def test_init_determinism(self):
        a = init_model(TINY, np.random.default_rng(5)).weight_arrays()
        b = init_model(TINY, np.random.default_rng(5)).weight_arrays()
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_he_std(self):
        model = init_model(ModelConfig(32, 16, 2), np.random.default_rng(0))
        w = model.fusion.weight.detach().numpy()
        assert w.size >= 10_000
        expect = np.sqrt(2.0 / (model.fusion.in_channels * 27))
        assert abs(w.std() / expect - 1) < 0.1

    @pytest.mark.parametrize("shape", [(16, 16, 16), (17, 19, 23), (32, 32, 32)])
    def test_same_padding(self, shape):
        model = randomized(ModelConfig(4, 2, 2)).float()
        out = forward(model, VoxelGrid(np.zeros(shape, dtype=np.float32)))
        assert out.dims == shape

    def test_matches_straight_line_graph(self, rng):
        model = randomized(TINY, seed=3)
        w = {n: p.detach().numpy() for n, p in model.named_parameters()}
        x = rng.uniform(size=(4, 4, 4))

        def lrelu(v):
            return np.where(v > 0, v, 0.2 * v)

        h = shift_conv(x[None], w["head.weight"], w["head.bias"])
        d0 = lrelu(shift_conv(h, w["dense.0.weight"], w["dense.0.bias"]))
        d1 = lrelu(shift_conv(np.concatenate([h, d0]), w["dense.1.weight"], w["dense.1.bias"]))
        f = shift_conv(np.concatenate([h, d0, d1]), w["fusion.weight"], w["fusion.bias"])
        y = x + shift_conv(h + 0.2 * f, w["tail.weight"], w["tail.bias"])[0]
        assert np.allclose(forward(model, VoxelGrid(x)).data, y, atol=1e-12)

    def test_non_finite_names_layer(self):
        model = randomized(TINY)
        with torch.no_grad():
            model.dense[1].weight.fill_(np.inf)
        with pytest.raises(NumericError, match="layer 2"):
            predict_residual(model, np.ones((4, 4, 4)))


class TestBackward:
    def test_identity_input_gradient(self, rng):
        model = init_model(TINY, rng).double()
        g = rng.normal(size=(5, 5, 5))
        _, gx = backward(model, rng.normal(size=(5, 5, 5)), g)
        assert np.array_equal(gx, g)

    def test_linear_in_upstream(self, rng):
        model = randomized(TINY)
        x, g = rng.normal(size=(2, 4, 4, 4))
        a, _ = backward(model, x, g)
        b, _ = backward(model, x, 2 * g)
        assert all(np.allclose(2 * p, q, rtol=1e-12, atol=0) for p, q in zip(a, b))

    def test_every_weight_matches_fd(self, rng):
        model = randomized(TINY, seed=11)
        x = rng.normal(size=(4, 4, 4))
        u = rng.normal(size=(4, 4, 4))
        grads, gx = backward(model, x, u)
        h = 1e-3

        def objective():
            with torch.no_grad():
                return float((forward(model, VoxelGrid(x)).data * u).sum())

        worst = 0.0
        checked = 0
        for p, g in zip(model.parameters(), grads):
            flat = p.data.view(-1)
            gflat = g.ravel()
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                fp = objective()
                flat[i] = orig - h
                fm = objective()
                flat[i] = orig
                fd = (fp - fm) / (2 * h)
                worst = max(worst, abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-10))
                checked += 1
        assert checked == sum(p.numel() for p in model.parameters())
        assert worst < 1e-4

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            backward(randomized(TINY), rng.normal(size=(4, 4, 4)), np.zeros((3, 3, 3)))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model = randomized(TINY).float()
        save_checkpoint(model, tmp_path / "m.ckpt")
        back = load_checkpoint(tmp_path / "m.ckpt")
        assert back.config == model.config
        assert all(a.tobytes() == b.tobytes() for a, b in zip(model.weight_arrays(), back.weight_arrays()))

    def test_truncated(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(randomized(TINY).float(), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-40])
        with pytest.raises(FormatError, match="missing 40 bytes"):
            load_checkpoint(path)
        path.write_bytes(b"XXXX" + raw[4:])
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(path)

    def test_config_weight_disagreement(self, tmp_path):
        import json, struct

        path = tmp_path / "m.ckpt"
        save_checkpoint(randomized(TINY).float(), path)
        raw = path.read_bytes()
        n = struct.unpack("<I", raw[8:12])[0]
        cfg = json.loads(raw[12 : 12 + n])
        cfg["growth_channels"] = 3
        new = json.dumps(cfg, sort_keys=True).encode()
        path.write_bytes(raw[:8] + struct.pack("<I", len(new)) + new + raw[12 + n :])
        with pytest.raises(ConsistencyError):
            load_checkpoint(path)
