import numpy as np
import pytest

from fmrisr.errors import DegenerateInputError, DesignError, InvalidArgumentError
from fmrisr.fmri import (
    T_SENTINEL,
    SelectivityMap,
    TaskDesign,
    consistency_index,
    evaluate_pipeline,
    gamma_hrf,
    glm_selectivity_map,
)
from fmrisr.network import ModelConfig, init_model
from fmrisr.volume import FrameSeries, VoxelGrid


def series_from(array, tr=3.0):
    return FrameSeries(tuple(VoxelGrid(array[..., t]) for t in range(array.shape[-1])), tr)


def smap(values, masks=None):
    return SelectivityMap(VoxelGrid(values), np.zeros(values.shape, bool), masks or {})


class TestDesign:
    def test_alternating_blocks(self):
        d = TaskDesign.alternating(20, 5)
        assert d.on_blocks == [(5, 10), (15, 20)]
        assert d.boxcar().sum() == 10

    def test_invalid(self):
        with pytest.raises(DesignError):
            TaskDesign(10, [])
        with pytest.raises(DesignError):
            TaskDesign(10, [(5, 12)])

    def test_hrf(self):
        h = gamma_hrf(1.0)
        assert h.sum() == pytest.approx(1.0)
        assert int(np.argmax(h)) == 5

    def test_json_round_trip(self, tmp_path):
        d = TaskDesign.alternating(40, 5, tr_seconds=2.0)
        (tmp_path / "d.json").write_text(__import__("json").dumps(d.to_dict()))
        assert TaskDesign.from_json(tmp_path / "d.json") == d


class TestGLM:
    def test_null_calibration(self):
        rng = np.random.default_rng(0)
        design = TaskDesign.alternating(40, 5)
        series = series_from(rng.normal(size=(25, 20, 20, 40)))
        t = glm_selectivity_map(series, design).values
        assert t.size == 10_000
        # t with 37 dof: P(|t| > 3) is about 0.5%
        assert np.mean(np.abs(t) > 3) <= 0.01

    def test_perfect_fit_hits_sentinel(self):
        design = TaskDesign.alternating(20, 5)
        data = np.zeros((2, 1, 1, 20))
        data[0, 0, 0] = 5.0 + design.regressor()
        data[1, 0, 0] = 5.0
        out = glm_selectivity_map(series_from(data), design)
        assert out.values[0, 0, 0] == T_SENTINEL
        assert out.values[1, 0, 0] == 0.0
        assert out.flags[0, 0, 0] and out.flags[1, 0, 0]

    def test_t_grows_with_amplitude(self):
        rng = np.random.default_rng(1)
        design = TaskDesign.alternating(40, 5)
        noise = rng.normal(size=40)
        data = np.stack([1.0 * design.regressor() + noise, 2.0 * design.regressor() + noise])[:, None, None, :]
        t = glm_selectivity_map(series_from(data), design).values
        assert t[1, 0, 0] > t[0, 0, 0] > 0

    def test_too_few_frames(self):
        with pytest.raises(DesignError, match="8 frames"):
            glm_selectivity_map(series_from(np.zeros((1, 1, 1, 5))), TaskDesign(5, [(0, 2)]))
        with pytest.raises(DesignError, match="design has"):
            glm_selectivity_map(series_from(np.zeros((1, 1, 1, 12))), TaskDesign(10, [(0, 5)]))

    def test_rank_check(self):
        # regressor equal to the drift column up to an affine map
        design = TaskDesign(10, [(5, 10)], hrf=False)
        design.regressor = lambda: np.linspace(-1, 1, 10)  # type: ignore[method-assign]
        with pytest.raises(DesignError, match="rank"):
            glm_selectivity_map(series_from(np.random.default_rng(0).normal(size=(1, 1, 1, 10))), design)


class TestConsistency:
    def test_identities(self):
        rng = np.random.default_rng(2)
        motion = rng.normal(size=(10, 10, 1))
        # colour orthogonal to motion inside the mask
        color = rng.normal(size=(10, 10, 1))
        mask = np.ones(motion.shape, bool)
        m, c = motion[mask], color[mask]
        m0, c0 = m - m.mean(), c - c.mean()
        c0 = c0 - (c0 @ m0) / (m0 @ m0) * m0
        color[mask] = c0
        row = consistency_index(smap(motion), smap(motion), smap(color), "roi", mask)
        assert row.corr_motion == pytest.approx(1.0)
        assert row.corr_color == pytest.approx(0.0, abs=1e-12)
        assert row.consistency_index == pytest.approx(1.0)
        row = consistency_index(smap(color), smap(motion), smap(color), "roi", mask)
        assert row.consistency_index == pytest.approx(row.corr_motion - 1.0)
        assert row.consistency_index <= 0

    def test_degenerate_roi_named(self):
        values = np.random.default_rng(0).normal(size=(4, 4, 4))
        mask = np.zeros(values.shape, bool)
        mask[0, 0, :2] = True
        with pytest.raises(DegenerateInputError, match="V9"):
            consistency_index(smap(values), smap(values), smap(values), "V9", mask)
        with pytest.raises(InvalidArgumentError):
            consistency_index(smap(values), smap(values), smap(values), "nope")


class TestEvaluate:
    @pytest.fixture(scope="class")
    @staticmethod
    def setup():
        from fmrisr.phantom import generate_selectivity_patterns, generate_structural_phantom, synthesize_task_series

        ph = generate_structural_phantom(0, (32, 32, 32))
        pats = generate_selectivity_patterns(1, ph)
        design = TaskDesign.alternating(16, 4)
        motion = synthesize_task_series(ph, pats.motion, design, seed=1)
        color = glm_selectivity_map(synthesize_task_series(ph, pats.color, design, seed=2), design)
        return motion, design, pats.rois, color

    def test_one_mm_zero_model_identical(self, setup):
        motion, design, rois, color = setup
        model = init_model(ModelConfig(4, 4, 2), np.random.default_rng(0))
        report = evaluate_pipeline(model, motion, design, [1.0], rois, color)
        base, sr = report["results"]
        assert base["method"] == "baseline" and sr["method"] == "sr"
        assert base["roi"] == sr["roi"]
        assert base["frames"] == sr["frames"]
        assert base["frames"][0]["psnr_db"] == "inf"
        for row in base["roi"]:
            assert row["consistency_index"] == row["corr_motion"] - row["corr_color"]

    def test_resolution_range(self, setup):
        motion, design, rois, color = setup
        model = init_model(ModelConfig(4, 4, 2), np.random.default_rng(0))
        with pytest.raises(InvalidArgumentError):
            evaluate_pipeline(model, motion, design, [4.0], rois, color)
