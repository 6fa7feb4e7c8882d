"""
End-to-end checks of the voting -> rigid fit -> metrics pipeline and the
numerical identities the benchmark relies on.
"""

import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.spatial.transform import Rotation

from votecraft import estimate_pose_from_votes
from votecraft.fusion import (
    AttentionWeights,
    DFTrBlockWeights,
    FeatureSequence,
    concatenate,
    dftr_block,
    multi_head_attention,
    softmax,
    split_fused,
)
from votecraft.geometry import RigidTransform, apply_transform
from votecraft.losses import (
    LossConfig,
    focal_loss,
    kps_l1_loss,
    optimal_confidence,
    vecf_loss_from_terms,
)
from votecraft.metrics import add_metric, add_s_metric, auc, keypoint_rmse
from votecraft.oracles import selftest
from votecraft.pose import CorrespondenceSet, fit_rigid_transform
from votecraft.synth import SceneConfig, generate_scene

STEP = 1e-6


class TestExactRecovery:
    """
    Noise-free scenes through the whole pipeline.
    """

    @pytest.mark.parametrize("seed", range(20))
    def test_noise_free_scene(self, seed):
        """
        Test keypoint RMSE and ADD below 1e-9 m on a noise-free scene.
        """
        scene = generate_scene(SceneConfig(seed=seed, point_count=1000, keypoint_count=8))
        pose, keypoints = estimate_pose_from_votes(
            scene.problem.points, scene.problem.vector_fields, scene.problem.weights,
            scene.model_keypoints.keypoints)
        assert keypoint_rmse(keypoints, scene.truth_keypoints_camera) < 1e-9
        assert add_metric(scene.model, pose, scene.truth_pose) < 1e-9

    def test_weight_mass_weighting(self, small_scene_config):
        """
        Test that weight-mass keypoint weights give the same exact pose.
        """
        scene = generate_scene(small_scene_config)
        pose, _ = estimate_pose_from_votes(
            scene.problem.points, scene.problem.vector_fields, scene.problem.weights,
            scene.model_keypoints.keypoints, weighting="weight_mass")
        assert add_metric(scene.model, pose, scene.truth_pose) < 1e-9


class TestOracleEquivalence:
    """
    Closed-form solvers against brute-force references.
    """

    def test_selftest_hundred_instances(self):
        """
        Test the full hundred-instance oracle comparison.
        """
        report = selftest(instances=100, seed=0)
        assert report.passed, report.failures
        assert report.max_objective_gap <= 1e-8
        assert report.max_position_gap <= 1e-6


class TestRigidFitRecovery:
    """
    Generate-and-recover checks for the rigid fit.
    """

    def test_thousand_transforms(self):
        """
        Test recovery of 1000 random transforms from 3 to 16 correspondences.
        """
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            truth = RigidTransform(Rotation.random(random_state=rng).as_matrix(),
                                   rng.normal(0.0, 1.0, 3))
            model = rng.uniform(-1.0, 1.0, (int(rng.integers(3, 17)), 3))
            fit = fit_rigid_transform(CorrespondenceSet(model, apply_transform(truth, model)))
            assert np.max(np.abs(fit.transform.rotation - truth.rotation)) <= 1e-9
            assert np.linalg.norm(fit.transform.translation - truth.translation) <= 1e-9

            mirrored = fit_rigid_transform(CorrespondenceSet(model, -model))
            assert np.linalg.det(mirrored.transform.rotation) == pytest.approx(1.0, abs=1e-9)


class TestMetricIdentities:
    """
    Identities between the pose metrics.
    """

    def test_add_s_bounded_by_add(self):
        """
        Test ADD-S <= ADD on 1000 random model/pose pairs.
        """
        rng = np.random.default_rng(7)
        for _ in range(1000):
            model = rng.normal(0.0, 0.05, (int(rng.integers(1, 60)), 3))
            a = RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.normal(size=3))
            b = RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.normal(size=3))
            assert add_s_metric(model, a, b) <= add_metric(model, a, b) + 1e-15

    def test_tree_equals_brute_force(self):
        """
        Test the k-d tree ADD-S against all pairs at N = 500.
        """
        rng = np.random.default_rng(8)
        model = rng.normal(0.0, 0.05, (500, 3))
        for _ in range(20):
            a = RigidTransform(Rotation.random(random_state=rng).as_matrix(),
                               rng.normal(0.0, 0.01, 3))
            b = RigidTransform(Rotation.random(random_state=rng).as_matrix(),
                               rng.normal(0.0, 0.01, 3))
            tree = add_s_metric(model, a, b, method="tree")
            brute = add_s_metric(model, a, b, method="brute")
            assert abs(tree - brute) <= 1e-12

    def test_auc_matches_threshold_integral(self):
        """
        Test the closed-form AUC against a fine numerical integral of the accuracy curve.
        """
        rng = np.random.default_rng(9)
        errors = rng.uniform(0.0, 0.15, 40)
        thresholds = np.linspace(0.0, 0.1, 200001)
        accuracy = (errors[None, :] < thresholds[:, None]).mean(axis=1)
        integral = trapezoid(accuracy, thresholds) / 0.1
        assert auc(errors) == pytest.approx(integral, abs=1e-4)
        assert auc([0.02, 0.06]) == pytest.approx(0.6, abs=1e-12)


class TestLossGradients:
    """
    Analytic loss gradients against central differences.
    """

    def test_focal_gradient(self):
        """
        Test the focal derivative on 1000 random probabilities to 1e-4 relative.
        """
        rng = np.random.default_rng(10)
        for _ in range(1000):
            config = LossConfig(focal_gamma=float(rng.uniform(0.0, 3.0)),
                                focal_alpha=float(rng.uniform(0.1, 1.0)))
            p = float(rng.uniform(0.02, 0.98))
            label = bool(rng.integers(2))
            _, grad = focal_loss(p, label, config)
            numeric = (focal_loss(p + STEP, label, config)[0]
                       - focal_loss(p - STEP, label, config)[0]) / (2 * STEP)
            assert grad == pytest.approx(numeric, rel=1e-4, abs=1e-8)

    def test_l1_gradient_along_sphere(self):
        """
        Test the L1 gradient along tangent directions of the unit sphere.
        """
        rng = np.random.default_rng(11)
        checked = 0
        while checked < 1000:
            predicted = rng.normal(size=3)
            predicted /= np.linalg.norm(predicted)
            target = rng.normal(size=3)
            target /= np.linalg.norm(target)
            if np.min(np.abs(predicted - target)) < 1e-3:
                continue
            tangent = np.cross(predicted, rng.normal(size=3))
            tangent /= np.linalg.norm(tangent)
            value = kps_l1_loss(predicted, target)
            numeric = (kps_l1_loss(predicted + STEP * tangent, target).loss
                       - kps_l1_loss(predicted - STEP * tangent, target).loss) / (2 * STEP)
            assert value.gradient @ tangent == pytest.approx(numeric, rel=1e-4, abs=1e-8)
            checked += 1

    def test_vecf_gradient(self):
        """
        Test the vector-field loss gradient on 1000 random terms.
        """
        rng = np.random.default_rng(12)
        config = LossConfig()
        l1 = rng.uniform(0.0, 2.0, 1000)
        confidence = rng.uniform(0.05, 1.0 - 2 * STEP, 1000)
        gradient = vecf_loss_from_terms(l1, confidence, config).gradient
        for i in range(1000):
            single_l1, single_c = l1[i:i + 1], confidence[i:i + 1]
            numeric = (vecf_loss_from_terms(single_l1, single_c + STEP, config).loss
                       - vecf_loss_from_terms(single_l1, single_c - STEP, config).loss) / (2 * STEP)
            assert gradient[i] * 1000 == pytest.approx(numeric, rel=1e-4, abs=1e-8)

    def test_stationarity(self):
        """
        Test that the gradient vanishes at c* = w / l to 1e-10.
        """
        config = LossConfig()
        for l1 in (0.02, 0.1, 0.5, 1.7):
            best = optimal_confidence(l1, config)
            assert abs(vecf_loss_from_terms([l1], [best], config).gradient[0]) <= 1e-10


class TestFusionInvariants:
    """
    Invariants of the fusion block on random configurations.
    """

    def test_softmax_rows(self):
        """
        Test attention row sums over 100 random configurations.
        """
        rng = np.random.default_rng(13)
        for _ in range(100):
            scores = rng.normal(0.0, 10.0, (int(rng.integers(1, 20)), int(rng.integers(1, 50))))
            np.testing.assert_allclose(softmax(scores).sum(axis=1), 1.0, atol=1e-6)

    def test_lengths_and_round_trip(self):
        """
        Test fused length H·W + N and an exact round trip with zero updates.
        """
        rng = np.random.default_rng(14)
        rgb = FeatureSequence.from_feature_map(rng.normal(size=(3, 5, 8)))
        geo = FeatureSequence(rng.normal(size=(7, 8)), "geometry")
        assert concatenate(rgb, geo).length == 3 * 5 + 7

        zero = AttentionWeights(*(np.zeros((8, 8)) for _ in range(4)))
        weights = DFTrBlockWeights(zero, zero, ())
        out_rgb, out_geo = dftr_block(rgb, geo, weights)
        np.testing.assert_array_equal(out_rgb.data, rgb.data)
        np.testing.assert_array_equal(out_geo.data, geo.data)

        fused_rgb, fused_geo = split_fused(concatenate(rgb, geo))
        np.testing.assert_array_equal(fused_rgb.data, rgb.data)
        np.testing.assert_array_equal(fused_geo.data, geo.data)

        random_rgb, random_geo = dftr_block(
            rgb, geo, DFTrBlockWeights.random(8, rgb.length, geo.length, heads=4, layers=2, seed=1))
        assert (random_rgb.length, random_geo.length) == (15, 7)

    def test_attention_over_single_token(self):
        """
        Test that attending over one token returns its projected value.
        """
        rng = np.random.default_rng(15)
        weights = AttentionWeights.random(4, 2, rng)
        token = rng.normal(size=(1, 4))
        out = multi_head_attention(rng.normal(size=(3, 4)), token, weights)
        np.testing.assert_allclose(out, np.repeat(token @ weights.w_v @ weights.w_o, 3, axis=0),
                                   atol=1e-12)
