import numpy as np
import pytest

from fmrisr.degradation import Phi2Params, apply_phi2
from fmrisr.fmri import TaskDesign, glm_selectivity_map
from fmrisr.losses import pearson
from fmrisr.phantom import (
    GRAY,
    WHITE,
    generate_selectivity_patterns,
    generate_structural_phantom,
    measure_ribbon_thickness,
    measure_stripe_period,
    synthesize_task_series,
)
from fmrisr.volume import VoxelGrid


@pytest.fixture(scope="module")
def phantom():
    return generate_structural_phantom(0, (48, 48, 48))


@pytest.fixture(scope="module")
def patterns(phantom):
    return generate_selectivity_patterns(1, phantom)


def test_seed_determinism():
    a = generate_structural_phantom(3, (32, 32, 32))
    b = generate_structural_phantom(3, (32, 32, 32))
    assert np.array_equal(a.anatomy.data, b.anatomy.data) and np.array_equal(a.labels, b.labels)


def test_tissue_contrast(phantom):
    gray = phantom.anatomy.data[phantom.labels == GRAY].mean()
    white = phantom.anatomy.data[phantom.labels == WHITE].mean()
    assert white - gray >= 0.2


@pytest.mark.parametrize("thickness", [2.0, 3.0, 4.0])
def test_ribbon_thickness(thickness):
    ph = generate_structural_phantom(2, (48, 48, 48), thickness_mm=thickness)
    assert abs(measure_ribbon_thickness(ph.labels) / thickness - 1) <= 0.2


def test_motion_colour_overlap(phantom, patterns):
    ribbon = phantom.ribbon
    both = (patterns.motion > 0.5) & (patterns.color > 0.5)
    assert both[ribbon].sum() <= 0.05 * ribbon.sum()
    assert pearson(patterns.motion[ribbon], patterns.color[ribbon]) < 0


@pytest.mark.parametrize("period", [4.0, 6.0])
def test_stripe_period(phantom, period):
    pats = generate_selectivity_patterns(1, phantom, stripe_period_mm=period)
    assert abs(measure_stripe_period(pats, phantom) / period - 1) <= 0.1


@pytest.mark.parametrize("res, lo, hi", [(1.0, 1.0, 1.0), (3.0, -0.4, 0.4)])
def test_stripe_amplitude_after_degradation(phantom, patterns, res, lo, hi):
    # amplitude = least-squares gain of the degraded stripe field on the original, inside the ribbon
    field = patterns.motion - patterns.color
    ribbon = phantom.ribbon
    out = apply_phi2(VoxelGrid(field, (1.0, 1.0, 1.0)), Phi2Params((res,) * 3, 0.0),
                     np.random.default_rng(0), clamp=False).data
    gain = (out[ribbon] * field[ribbon]).sum() / (field[ribbon] ** 2).sum()
    assert lo <= gain <= hi


def test_rois_inside_ribbon(phantom, patterns):
    assert len(patterns.rois) == 4
    for mask in patterns.rois.values():
        assert mask.sum() > 50
        assert not np.any(mask & ~phantom.ribbon)


def test_amplitude_zero_is_anatomy_plus_noise(phantom, patterns):
    design = TaskDesign.alternating(20, 5)
    series = synthesize_task_series(phantom, patterns.motion, design, amplitude=0.0, noise_sigma=0.0)
    assert all(np.array_equal(f.data, phantom.anatomy.data) for f in series)


def test_noiseless_glm_recovers_map(phantom, patterns):
    design = TaskDesign.alternating(40, 5)
    ribbon = phantom.ribbon
    # exact zero noise: every active voxel is a perfect fit and takes the sentinel
    series = synthesize_task_series(phantom, patterns.motion, design, amplitude=0.03, noise_sigma=0.0)
    tmap = glm_selectivity_map(series, design).values
    assert np.array_equal(tmap[ribbon] > 0, patterns.motion[ribbon] > 0)
    # near-noiseless: t tracks the map up to the scatter of the per-voxel sigma
    # estimate, CV 1/sqrt(2 dof); 100 frames keep that near 7%
    design = TaskDesign.alternating(100, 5)
    series = synthesize_task_series(phantom, patterns.motion, design, amplitude=0.03, noise_sigma=1e-4)
    tmap = glm_selectivity_map(series, design).values
    assert pearson(tmap[ribbon], patterns.motion[ribbon]) > 0.99


def test_default_glm_recovers_map(phantom, patterns):
    design = TaskDesign.alternating(40, 5)
    series = synthesize_task_series(phantom, patterns.motion, design, seed=4)
    tmap = glm_selectivity_map(series, design).values
    ribbon = phantom.ribbon
    assert pearson(tmap[ribbon], patterns.motion[ribbon]) > 0.7
