import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from votecraft.errors import DegenerateProblem, InvalidInput, ShapeError
from votecraft.oracles import brute_force_keypoint, random_vote_instance
from votecraft.voting import (
    Frame,
    KeypointSet,
    VectorVoteProblem,
    accumulate_normal_system,
    solve_keypoint,
    vote_all_keypoints,
    vote_keypoint,
    vote_objective,
)


def naive_system(points, vectors, weights):
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for p, v, c in zip(points, vectors, weights):
        projector = np.eye(3) - np.outer(v, v)
        A += c * projector
        b += c * projector @ p
    return A, b


def well_posed_instance(rng, min_points=20):
    problem = random_vote_instance(rng)
    while problem.point_count < min_points:
        problem = random_vote_instance(rng)
    return problem


class TestAccumulateNormalSystem:
    """
    Tests for building the 3×3 normal system.
    """

    def test_single_projector(self):
        """
        Test one ray along z through the origin.
        """
        system = accumulate_normal_system([[0.0, 0.0, 0.0]], [[0.0, 0.0, 1.0]], [1.0])
        np.testing.assert_array_equal(system.A, np.diag([1.0, 1.0, 0.0]))
        np.testing.assert_array_equal(system.b, np.zeros(3))

    def test_orthogonal_rays_through_origin(self):
        """
        Test two orthogonal rays meeting at the origin.
        """
        system = accumulate_normal_system(
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]],
            [1.0, 1.0],
        )
        np.testing.assert_allclose(system.A, np.diag([1.0, 1.0, 2.0]), atol=1e-15)
        np.testing.assert_allclose(system.b, np.zeros(3), atol=1e-15)

    def test_matches_naive_summation(self, rng):
        """
        Test entrywise agreement with a per-point summation loop.
        """
        points = rng.normal(size=(20, 3))
        vectors = rng.normal(size=(20, 3))
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
        weights = rng.uniform(0.0, 1.0, 20)
        A, b = naive_system(points, vectors, weights)
        system = accumulate_normal_system(points, vectors, weights)
        np.testing.assert_allclose(system.A, A, atol=1e-12)
        np.testing.assert_allclose(system.b, b, atol=1e-12)
        np.testing.assert_allclose(system.A, system.A.T, atol=1e-10)
        assert np.linalg.eigvalsh(system.A).min() >= -1e-10

    def test_compensated_matches_plain(self, rng):
        """
        Test that extended-precision sums agree with float64 sums on moderate input.
        """
        points = rng.normal(size=(500, 3))
        vectors = rng.normal(size=(500, 3))
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
        weights = rng.uniform(0.0, 1.0, 500)
        plain = accumulate_normal_system(points, vectors, weights, compensated=False)
        compensated = accumulate_normal_system(points, vectors, weights, compensated=True)
        np.testing.assert_allclose(plain.A, compensated.A, atol=1e-10)
        np.testing.assert_allclose(plain.b, compensated.b, atol=1e-10)

    def test_length_mismatch(self):
        """
        Test that mismatched lengths raise ShapeError.
        """
        with pytest.raises(ShapeError):
            accumulate_normal_system(np.zeros((3, 3)), np.ones((2, 3)), np.ones(3))

    def test_all_zero_weights(self):
        """
        Test that zero total weight raises DegenerateProblem.
        """
        with pytest.raises(DegenerateProblem):
            accumulate_normal_system(np.zeros((2, 3)), [[1.0, 0, 0], [0, 1.0, 0]], [0.0, 0.0])

    @pytest.mark.parametrize("vectors", [
        [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        [[np.nan, 0.0, 0.0], [0.0, 1.0, 0.0]],
    ])
    def test_vectors_must_be_unit_and_finite(self, vectors):
        """
        Test that non-unit or non-finite vectors raise InvalidInput.
        """
        with pytest.raises(InvalidInput):
            accumulate_normal_system(np.zeros((2, 3)), vectors, [1.0, 1.0])


class TestSolveKeypoint:
    """
    Tests for the pseudoinverse solve of the normal system.
    """

    def test_zero_right_hand_side(self):
        """
        Test that b = 0 gives the origin at full rank.
        """
        estimate = solve_keypoint(np.diag([1.0, 1.0, 2.0]), np.zeros(3))
        np.testing.assert_array_equal(estimate.position, np.zeros(3))
        assert estimate.normal_matrix_rank == 3

    def test_parallel_rays_minimum_norm(self):
        """
        Test that parallel rays give rank 2 and the projected weighted mean.
        """
        v = np.array([0.0, 0.0, 1.0])
        points = np.array([[1.0, 0.0, 5.0], [0.0, 1.0, -2.0], [1.0, 1.0, 3.0]])
        weights = np.array([1.0, 2.0, 1.0])
        system = accumulate_normal_system(points, np.tile(v, (3, 1)), weights)
        estimate = solve_keypoint(system.A, system.b)
        mean = weights @ points / weights.sum()
        expected = mean - (mean @ v) * v
        assert estimate.normal_matrix_rank == 2
        np.testing.assert_allclose(estimate.position, expected, atol=1e-12)

    def test_non_finite_input(self):
        """
        Test that NaN in A or b raises InvalidInput.
        """
        with pytest.raises(InvalidInput):
            solve_keypoint(np.full((3, 3), np.nan), np.zeros(3))
        with pytest.raises(InvalidInput):
            solve_keypoint(np.eye(3), [np.inf, 0.0, 0.0])

    def test_matches_brute_force_oracle(self, rng):
        """
        Test agreement with the grid + line-search minimizer of the objective.
        """
        problem = well_posed_instance(rng, 50)
        vectors = problem.vector_fields[0]
        estimate = vote_keypoint(problem, 0)
        oracle = brute_force_keypoint(problem.points, vectors, problem.weights)
        np.testing.assert_allclose(estimate.position, oracle, atol=1e-6)

    def test_residual_is_objective_at_solution(self, rng):
        """
        Test that the reported residual equals D evaluated directly.
        """
        problem = random_vote_instance(rng)
        estimate = vote_keypoint(problem, 0)
        direct = vote_objective(problem.points, problem.vector_fields[0],
                                problem.weights, estimate.position)
        assert estimate.residual == pytest.approx(direct, rel=1e-8, abs=1e-12)
        assert estimate.residual >= 0

    def test_residual_needs_the_constant(self, rng):
        """
        Test that the residual is D only when the constant term is passed.
        """
        problem = random_vote_instance(rng)
        system = accumulate_normal_system(problem.points, problem.vector_fields[0],
                                          problem.weights)
        with_constant = solve_keypoint(system.A, system.b, constant=system.constant)
        without = solve_keypoint(system.A, system.b)
        direct = vote_objective(problem.points, problem.vector_fields[0],
                                problem.weights, with_constant.position)
        assert with_constant.residual == pytest.approx(direct, rel=1e-8, abs=1e-12)
        assert without.residual == 0.0
        np.testing.assert_array_equal(without.position, with_constant.position)


class TestVoteAllKeypoints:
    """
    Tests for voting every keypoint of a problem.
    """

    def test_exact_recovery(self, rng):
        """
        Test that consistent rays to eight keypoints recover them to 1e-9.
        """
        keypoints = rng.uniform(-0.1, 0.1, (8, 3)) + [0.0, 0.0, 1.0]
        points = rng.uniform(-0.1, 0.1, (300, 3)) + [0.0, 0.0, 1.0]
        fields = keypoints[:, None, :] - points[None, :, :]
        problem = VectorVoteProblem(points, fields, np.ones(300))
        estimates = vote_all_keypoints(problem)
        assert len(estimates) == 8
        for estimate, truth in zip(estimates, keypoints):
            assert estimate.is_full_rank
            np.testing.assert_allclose(estimate.position, truth, atol=1e-9)

    def test_rank_deficient_is_flagged_not_raised(self):
        """
        Test that three coplanar parallel rays give a rank-2 estimate.
        """
        points = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
        fields = [[[0.0, 0.0, 1.0]] * 3]
        estimates = vote_all_keypoints(VectorVoteProblem(points, fields, np.ones(3)))
        assert estimates[0].normal_matrix_rank == 2
        assert not estimates[0].is_full_rank

    def test_threaded_matches_sequential(self, rng):
        """
        Test that thread-parallel voting is bit-identical and order-stable.
        """
        points = rng.normal(size=(100, 3))
        fields = rng.normal(size=(6, 100, 3))
        problem = VectorVoteProblem(points, fields, rng.uniform(0.1, 1.0, 100))
        sequential = vote_all_keypoints(problem)
        threaded = vote_all_keypoints(problem, max_workers=4)
        for a, b in zip(sequential, threaded):
            np.testing.assert_array_equal(a.position, b.position)

    def test_empty_problem(self):
        """
        Test that a problem with no points is rejected as degenerate.
        """
        with pytest.raises(DegenerateProblem):
            VectorVoteProblem(np.empty((0, 3)), np.empty((2, 0, 3)), np.empty(0))

    def test_weight_scaling_invariance(self, rng):
        """
        Test that scaling every weight leaves the solution unchanged.
        """
        problem = random_vote_instance(rng)
        base = vote_all_keypoints(problem)[0].position
        scaled = vote_all_keypoints(problem.with_weights(problem.weights * 37.5))[0].position
        np.testing.assert_allclose(scaled, base, atol=1e-10)

    def test_translation_and_rotation_equivariance(self, rng):
        """
        Test that moving the rays moves the solution the same way.
        """
        problem = well_posed_instance(rng)
        base = vote_all_keypoints(problem)[0].position
        shift = np.array([0.3, -1.2, 2.0])
        rotation = Rotation.random(random_state=rng).as_matrix()

        shifted = VectorVoteProblem(problem.points + shift, problem.vector_fields, problem.weights)
        np.testing.assert_allclose(vote_all_keypoints(shifted)[0].position, base + shift, atol=1e-9)

        rotated = VectorVoteProblem(problem.points @ rotation.T,
                                    problem.vector_fields @ rotation.T, problem.weights)
        np.testing.assert_allclose(vote_all_keypoints(rotated)[0].position, rotation @ base,
                                   atol=1e-9)

    def test_zero_weight_transparency(self, rng):
        """
        Test that zero-weight points do not affect the solution.
        """
        problem = random_vote_instance(rng)
        weights = problem.weights.copy()
        weights[::3] = 0.0
        keep = weights > 0
        with_zeros = vote_all_keypoints(problem.with_weights(weights))[0].position
        removed = vote_all_keypoints(VectorVoteProblem(
            problem.points[keep], problem.vector_fields[:, keep], weights[keep]))[0].position
        np.testing.assert_allclose(with_zeros, removed, atol=1e-10)


class TestKeypointSet:
    """
    Tests for KeypointSet.
    """

    def test_frame_tag(self):
        """
        Test that frames are parsed from strings and the array is read-only.
        """
        keypoints = KeypointSet(np.zeros((3, 3)), "object")
        assert keypoints.frame is Frame.OBJECT
        assert len(keypoints) == 3
        with pytest.raises(ValueError):
            keypoints.keypoints[0, 0] = 1.0
