import numpy as np
import pytest
import torch

from fmrisr.errors import ConfigError, DegenerateInputError, InvalidArgumentError
from fmrisr.inference import super_resolve_frame, super_resolve_series
from fmrisr.network import ModelConfig, forward, init_model
from fmrisr.volume import FrameSeries, VoxelGrid, normalize_intensity, resample

CFG = ModelConfig(base_channels=4, growth_channels=4, num_dense_layers=3)


def perturbed(seed=0, scale=0.05):
    model = init_model(CFG, np.random.default_rng(seed))
    gen = np.random.default_rng(seed + 1)
    with torch.no_grad():
        model.tail.weight.copy_(torch.from_numpy(gen.normal(0, scale, tuple(model.tail.weight.shape))))
    return model


def lr_volume(rng, shape=(12, 12, 12), vox=2.0):
    return VoxelGrid(rng.uniform(size=shape), (vox, vox, vox))


def test_zero_model_is_trilinear(rng):
    lr = lr_volume(rng)
    out = super_resolve_frame(init_model(CFG, rng), lr)
    assert np.array_equal(out.data, resample(lr, (1.0, 1.0, 1.0)).data)
    assert out.voxel_size_mm == (1.0, 1.0, 1.0)


def test_one_mm_input_is_model_forward(rng):
    model = perturbed()
    grid = VoxelGrid(rng.uniform(size=(10, 10, 10)))
    out = super_resolve_frame(model, grid)
    norm, scale = normalize_intensity(grid)
    expect = forward(model, VoxelGrid(scale.normalize(grid.data, clamp=False)))
    assert np.allclose(scale.normalize(out.data, clamp=False), expect.data, atol=1e-12)


def test_tiled_matches_untiled(rng):
    model = perturbed()
    lr = lr_volume(rng, (24, 24, 24))
    whole = super_resolve_frame(model, lr)
    tiled = super_resolve_frame(model, lr, tile=24, overlap=8)
    _, scale = normalize_intensity(resample(lr, (1.0, 1.0, 1.0)))
    diff = np.abs(whole.data - tiled.data).max() / scale.width
    assert diff <= 1e-4


def test_errors(rng):
    model = init_model(CFG, rng)
    with pytest.raises(InvalidArgumentError, match="finer"):
        super_resolve_frame(model, VoxelGrid(rng.uniform(size=(4, 4, 4)), (0.5, 0.5, 0.5)))
    with pytest.raises(ConfigError, match="receptive"):
        super_resolve_frame(model, lr_volume(rng), tile=4)
    with pytest.raises(ConfigError, match="overlap"):
        super_resolve_frame(model, lr_volume(rng), tile=16, overlap=8)


def test_series_single_frame_and_permutation(rng):
    model = perturbed()
    frames = [lr_volume(rng, (8, 8, 8)) for _ in range(4)]
    single = super_resolve_series(model, FrameSeries((frames[0],)))
    assert np.array_equal(single[0].data, super_resolve_frame(model, frames[0]).data)
    perm = [2, 0, 3, 1]
    a = super_resolve_series(model, FrameSeries(tuple(frames[i] for i in perm)))
    b = super_resolve_series(model, FrameSeries(tuple(frames)))
    for k, i in enumerate(perm):
        assert np.array_equal(a[k].data, b[i].data)


def test_series_error_names_frame(rng):
    model = init_model(CFG, rng)
    good = lr_volume(rng, (6, 6, 6))
    const = VoxelGrid(np.full((6, 6, 6), 0.5), (2.0, 2.0, 2.0))
    with pytest.raises(DegenerateInputError, match="frame 1"):
        super_resolve_series(model, FrameSeries((good, const)))
