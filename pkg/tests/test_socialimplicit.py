import numpy as np
import pytest

from conftest import straight_scene
from trajkit.errors import ContractError, DataError
from trajkit.nn import conv1d, conv1d_backward, conv2d, conv2d_backward
from trajkit.socialimplicit import (
    CellParams,
    LossWeights,
    ModelConfig,
    SocialImplicit,
    ZoneConfig,
    assign_zones,
    cell_backward,
    cell_forward,
    load_checkpoint,
    model_backward,
    model_forward,
    save_checkpoint,
    social_loss,
)
from trajkit.trajdata import Scene


def scene_with_speeds(speeds_mps, t_obs=8, t_pred=12, stride=0.4):
    """One agent per requested max speed, walking at that constant speed."""
    n = len(speeds_mps)
    obs = np.zeros((n, t_obs, 2))
    for a, v in enumerate(speeds_mps):
        obs[a, :, 0] = np.arange(t_obs) * v * stride
        obs[a, :, 1] = 10.0 * a  # keep agents apart
    fut = np.repeat(obs[:, -1:, :], t_pred, axis=1)
    return Scene(observed=obs, future=fut, frame_stride_seconds=stride)


class TestZones:
    def test_motionless_agent_zone_one(self):
        groups = assign_zones(scene_with_speeds([0.0]))
        assert list(groups[0]) == [0]

    def test_half_meter_per_second_zone_three(self):
        groups = assign_zones(scene_with_speeds([0.5]))
        assert list(groups[2]) == [0]

    def test_boundary_exactly_inclusive_above(self):
        # half-open intervals: exactly 0.1 m/s belongs to the third zone
        groups = assign_zones(scene_with_speeds([0.1]))
        assert list(groups[2]) == [0]

    def test_fast_agent_last_zone(self):
        groups = assign_zones(scene_with_speeds([3.0]))
        assert list(groups[3]) == [0]

    def test_partition_covers_all_agents_once(self):
        groups = assign_zones(scene_with_speeds([0.0, 0.05, 0.1, 0.5, 1.2, 5.0]))
        merged = np.concatenate(groups)
        assert sorted(merged) == list(range(6))

    def test_zone_config_validation(self):
        with pytest.raises(DataError):
            ZoneConfig(boundaries=(0.1, 0.1, 1.2))
        with pytest.raises(DataError):
            ZoneConfig(noise_sigma=(1.0, 2.0))

    def test_eth_override(self):
        assert ZoneConfig.eth().noise_sigma == (0.175, 1.5, 4.0, 8.0)
        assert ZoneConfig.eth().boundaries == ZoneConfig().boundaries


class TestParameterCount:
    def test_cell_count(self):
        assert CellParams(p=2, t_obs=8, t_pred=12).n_parameters() == 1459

    def test_model_count_5836(self):
        assert SocialImplicit().n_parameters() == 5836

    def test_scalars_and_biases_start_at_zero(self):
        cell = CellParams(rng=np.random.default_rng(0))
        for key in ("w_noise", "w_global", "w_local"):
            assert cell.tensors[key] == 0.0
        for key, value in cell.tensors.items():
            if key.endswith(".bias"):
                assert not value.any()


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):  # in-place indexing also covers 0-d scalars
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(analytic, numeric):
    return np.abs(analytic - numeric).max() / (np.abs(numeric).max() + 1e-12)


class TestConvPrimitives:
    def test_conv1d_backward_matches_fd(self, rng):
        x = rng.normal(size=(2, 8, 3))
        w = rng.normal(size=(4, 2, 3))
        b = rng.normal(size=4)
        gout = rng.normal(size=(4, 8, 3))

        gx, gw, gb = conv1d_backward(x, w, gout)
        assert rel_err(gx, numeric_grad(lambda: np.sum(conv1d(x, w, b) * gout), x)) < 1e-6
        assert rel_err(gw, numeric_grad(lambda: np.sum(conv1d(x, w, b) * gout), w)) < 1e-6
        assert rel_err(gb, numeric_grad(lambda: np.sum(conv1d(x, w, b) * gout), b)) < 1e-6

    def test_conv2d_backward_matches_fd(self, rng):
        x = rng.normal(size=(2, 5, 4))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        gout = rng.normal(size=(3, 5, 4))

        gx, gw, gb = conv2d_backward(x, w, gout)
        assert rel_err(gx, numeric_grad(lambda: np.sum(conv2d(x, w, b) * gout), x)) < 1e-6
        assert rel_err(gw, numeric_grad(lambda: np.sum(conv2d(x, w, b) * gout), w)) < 1e-6
        assert rel_err(gb, numeric_grad(lambda: np.sum(conv2d(x, w, b) * gout), b)) < 1e-6


def random_cell(seed, t_obs=4, t_pred=3):
    rng = np.random.default_rng(seed)
    cell = CellParams(p=2, t_obs=t_obs, t_pred=t_pred, rng=rng)
    for key in cell.tensors:  # make every path active, including biases/scalars
        cell.tensors[key] = np.array(
            cell.tensors[key] + rng.normal(0.0, 0.3, size=cell.tensors[key].shape)
        )
    return cell


class TestCellForwardBackward:
    def test_output_shape_default_config(self):
        cell = CellParams(rng=np.random.default_rng(0))
        x = np.zeros((2, 8, 5))
        out, _ = cell_forward(cell, x, np.zeros_like(x))
        assert out.shape == (2, 12, 5)

    def test_zero_weights_zero_output(self):
        cell = CellParams()  # everything zero
        x = np.random.default_rng(0).normal(size=(2, 8, 3))
        out, _ = cell_forward(cell, x, np.zeros_like(x))
        assert not out.any()

    def test_stream_scalars_get_gradients_at_zero(self, rng):
        cell = random_cell(1)
        cell.tensors["w_local"] = np.zeros(())
        cell.tensors["w_global"] = np.zeros(())
        x = rng.normal(size=(2, 4, 3))
        out, cache = cell_forward(cell, x, rng.normal(size=x.shape))
        assert not out.any()
        cell_backward(cell, cache, rng.normal(size=out.shape))
        assert cell.grads["w_local"] != 0.0
        assert cell.grads["w_global"] != 0.0

    def test_empty_group_rejected(self):
        with pytest.raises(ContractError):
            cell_forward(CellParams(), np.zeros((2, 8, 0)), np.zeros((2, 8, 0)))

    def test_zero_output_grad_zero_gradients(self, rng):
        cell = random_cell(2)
        x = rng.normal(size=(2, 4, 3))
        out, cache = cell_forward(cell, x, rng.normal(size=x.shape))
        cell_backward(cell, cache, np.zeros_like(out))
        assert all(not g.any() for g in cell.grads.values())

    def test_gradcheck_parameters_and_input(self, rng):
        cell = random_cell(3)
        x = rng.normal(size=(2, 4, 3))
        noise = rng.normal(size=x.shape)
        gout = rng.normal(size=(2, 3, 3))

        def loss():
            return np.sum(cell_forward(cell, x, noise)[0] * gout)

        out, cache = cell_forward(cell, x, noise)
        cell.zero_grads()
        g_x = cell_backward(cell, cache, gout)
        worst = rel_err(g_x, numeric_grad(loss, x, h=1e-6))
        for key in cell.tensors:
            worst = max(worst, rel_err(cell.grads[key], numeric_grad(loss, cell.tensors[key], h=1e-6)))
        assert worst < 1e-4

    def test_w_noise_gradient_is_inner_product(self, rng):
        cell = random_cell(4)
        x = rng.normal(size=(2, 4, 2))
        noise = rng.normal(size=x.shape)
        gout = rng.normal(size=(2, 3, 2))
        out, cache = cell_forward(cell, x, noise)
        cell.zero_grads()
        g_x2 = cell_backward(cell, cache, gout)
        assert cell.grads["w_noise"] == pytest.approx(np.sum(g_x2 * noise))

    def test_local_stream_is_per_agent(self, rng):
        cell = random_cell(5)
        cell.tensors["w_global"] = np.zeros(())
        x = rng.normal(size=(2, 4, 3))
        noise = rng.normal(size=x.shape)
        joint, _ = cell_forward(cell, x, noise)
        for a in range(3):
            solo, _ = cell_forward(cell, x[:, :, a : a + 1], noise[:, :, a : a + 1])
            assert np.allclose(solo[:, :, 0], joint[:, :, a], atol=1e-12)


class TestModelForward:
    def test_zero_model_predicts_stay_in_place(self):
        model = SocialImplicit()
        model.set_flat_parameters(np.zeros(model.n_parameters()))
        scene = straight_scene()
        pred, _ = model_forward(model, scene, 0)
        expected = np.repeat(scene.observed[:, -1:, :], scene.t_pred, axis=1)
        assert np.array_equal(pred, expected)

    def test_default_model_scalars_zero_stay_in_place(self):
        # conv weights are random but the three combining scalars start at 0
        model = SocialImplicit(rng_seed=3)
        scene = straight_scene()
        pred, _ = model_forward(model, scene, 0)
        expected = np.repeat(scene.observed[:, -1:, :], scene.t_pred, axis=1)
        assert np.array_equal(pred, expected)

    def test_deterministic_given_seed(self):
        model = SocialImplicit(rng_seed=1)
        vec = np.random.default_rng(2).normal(0, 0.1, size=model.n_parameters())
        model.set_flat_parameters(vec)
        scene = straight_scene(n_agents=3)
        a, _ = model_forward(model, scene, 11)
        b, _ = model_forward(model, scene, 11)
        c, _ = model_forward(model, scene, 12)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_horizon_mismatch_rejected(self):
        model = SocialImplicit()
        bad = straight_scene(t_obs=6, t_pred=12)
        with pytest.raises(ContractError):
            model_forward(model, bad, 0)

    def test_output_shape(self):
        model = SocialImplicit(rng_seed=0)
        scene = straight_scene(n_agents=4)
        pred, cache = model_forward(model, scene, 0)
        assert pred.shape == (4, 12, 2)
        assert len(cache["groups"]) == 4

    def test_model_gradcheck_through_cumsum(self):
        model = SocialImplicit(rng_seed=5)
        vec = np.random.default_rng(6).normal(0, 0.2, size=model.n_parameters())
        model.set_flat_parameters(vec)
        scene = straight_scene(n_agents=2, t_obs=8, t_pred=12)
        target = np.random.default_rng(7).normal(size=(2, 12, 2))

        def loss():
            pred, _ = model_forward(model, scene, 42)
            return 0.5 * np.sum((pred - target) ** 2)

        pred, cache = model_forward(model, scene, 42)
        model.zero_grads()
        model_backward(model, cache, pred - target)
        analytic = model.flat_grads()

        numeric = np.zeros_like(vec)
        h = 1e-6
        for i in range(0, len(vec), 97):  # spot-check a spread of coordinates
            orig = vec[i]
            vec[i] = orig + h
            model.set_flat_parameters(vec)
            fp = loss()
            vec[i] = orig - h
            model.set_flat_parameters(vec)
            fm = loss()
            vec[i] = orig
            numeric[i] = (fp - fm) / (2 * h)
        model.set_flat_parameters(vec)
        idx = np.arange(0, len(vec), 97)
        assert rel_err(analytic[idx], numeric[idx]) < 1e-4


class TestSocialLoss:
    def test_needs_three_samples(self):
        truth = np.zeros((1, 2, 2))
        with pytest.raises(ContractError):
            social_loss(np.zeros((2, 1, 2, 2)), truth)

    def test_all_identical_degenerate(self):
        truth = np.random.default_rng(0).normal(size=(1, 3, 2))
        samples = np.repeat(truth[None], 4, axis=0)
        res = social_loss(samples, truth)
        assert res.loss == 0.0
        assert res.terms == {"recon": 0.0, "triplet": 0.0, "gdist": 0.0, "gangle": 0.0}
        assert {res.closest_index, res.second_index, res.farthest_index} == {0, 1, 2}

    def test_rigid_translation_zeroes_geometry_terms(self):
        truth = np.random.default_rng(1).normal(size=(2, 4, 2))
        shifted = truth + [1.5, -2.0]
        samples = np.stack([shifted, shifted + 5.0, shifted + 10.0])
        res = social_loss(samples, truth)
        assert res.terms["gdist"] == pytest.approx(0.0, abs=1e-12)
        assert res.terms["gangle"] == pytest.approx(0.0, abs=1e-12)

    def test_triplet_hand_case(self):
        truth = np.zeros((1, 2, 2))
        s1 = truth + 0.25  # L1 distance 1 over the 4 coordinates
        s2 = truth + 0.50  # distance 2
        s3 = truth + 1.25  # distance 5
        res = social_loss(np.stack([s3, s1, s2]), truth)
        assert (res.closest_index, res.second_index, res.farthest_index) == (1, 2, 0)
        expected_triplet = np.abs(s1 - s2).sum() - np.abs(s1 - s3).sum()
        assert res.terms["triplet"] == pytest.approx(expected_triplet)
        assert res.terms["recon"] == pytest.approx(1.0)

    def test_tie_breaks_to_lowest_index(self):
        truth = np.zeros((1, 2, 2))
        near = truth + 0.1
        samples = np.stack([near, near, truth + 3.0, truth + 3.0])
        res = social_loss(samples, truth)
        assert res.closest_index == 0
        assert res.second_index == 1
        assert res.farthest_index == 2

    def test_distance_scale_invariant_selection(self):
        rng = np.random.default_rng(2)
        truth = rng.normal(size=(2, 3, 2))
        samples = truth[None] + rng.normal(0, 1, size=(5, 2, 3, 2))
        base = social_loss(samples, truth)
        scaled = social_loss(truth[None] + 3.7 * (samples - truth[None]), truth)
        assert base.closest_index == scaled.closest_index
        assert base.second_index == scaled.second_index
        assert base.farthest_index == scaled.farthest_index

    def test_geometry_terms_nonnegative(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            truth = rng.normal(size=(2, 4, 2))
            samples = rng.normal(size=(3, 2, 4, 2))
            res = social_loss(samples, truth)
            assert res.terms["gdist"] >= 0.0
            assert res.terms["gangle"] >= 0.0

    def test_sample_gradcheck(self):
        rng = np.random.default_rng(4)
        truth = rng.normal(size=(2, 4, 2))
        samples = truth[None] + rng.normal(0, 0.7, size=(4, 2, 4, 2))
        res = social_loss(samples, truth)
        h = 1e-6
        for idx, analytic in res.sample_grads.items():
            numeric = np.zeros_like(analytic)
            flat_n = numeric.ravel()
            flat_s = samples[idx].ravel()
            for i in range(flat_s.size):
                orig = flat_s[i]
                flat_s[i] = orig + h
                fp = social_loss(samples, truth).loss
                flat_s[i] = orig - h
                fm = social_loss(samples, truth).loss
                flat_s[i] = orig
                flat_n[i] = (fp - fm) / (2 * h)
            assert rel_err(analytic, numeric) < 1e-4


class TestCheckpoints:
    def test_round_trip(self, tmp_path):
        model = SocialImplicit(rng_seed=9)
        vec = np.random.default_rng(10).normal(0, 0.1, size=model.n_parameters())
        model.set_flat_parameters(vec)
        path = tmp_path / "ckpt.json"
        save_checkpoint(model, path, extra={"note": "test"})
        back = load_checkpoint(path)
        assert np.array_equal(back.flat_parameters(), model.flat_parameters())
        assert back.cfg == model.cfg
        scene = straight_scene()
        a, _ = model_forward(model, scene, 3)
        b, _ = model_forward(back, scene, 3)
        assert np.array_equal(a, b)

    def test_eth_config_round_trip(self, tmp_path):
        model = SocialImplicit(ModelConfig(zone_cfg=ZoneConfig.eth()), rng_seed=0)
        path = tmp_path / "ckpt.json"
        save_checkpoint(model, path)
        assert load_checkpoint(path).cfg.zone_cfg.noise_sigma == (0.175, 1.5, 4.0, 8.0)


class TestLossWeights:
    def test_negative_rejected(self):
        with pytest.raises(DataError):
            LossWeights(alpha_triplet=-1.0)
