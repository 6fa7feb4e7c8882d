import numpy as np
import pytest
from scipy.spatial.distance import pdist
from scipy.spatial.transform import Rotation

from votecraft.errors import InvalidInput, InvalidMatrix, ShapeError
from votecraft.geometry import (
    RigidTransform,
    apply_transform,
    as_point,
    as_point_cloud,
    compose,
    farthest_point_indices,
    normalize_rows,
    orthonormalize,
    pseudoinverse_3x3,
    unit_vector,
)


class TestValueConstructors:
    """
    Tests for the validating point / vector constructors.
    """

    def test_as_point_rejects_bad_shape_and_nan(self):
        """
        Test that a point must be a finite 3-vector.
        """
        with pytest.raises(ShapeError):
            as_point([1.0, 2.0])
        with pytest.raises(InvalidInput):
            as_point([1.0, np.nan, 0.0])

    def test_point_cloud_empty_only_when_allowed(self):
        """
        Test that empty clouds are rejected unless explicitly allowed.
        """
        with pytest.raises(ShapeError):
            as_point_cloud(np.empty((0, 3)))
        assert as_point_cloud(np.empty((0, 3)), allow_empty=True).shape == (0, 3)

    def test_unit_vector(self):
        """
        Test normalization and the zero-length error.
        """
        np.testing.assert_allclose(unit_vector([0.0, 3.0, 4.0]), [0.0, 0.6, 0.8])
        with pytest.raises(InvalidInput):
            unit_vector([0.0, 0.0, 0.0])
        with pytest.raises(InvalidInput):
            normalize_rows([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


class TestPseudoinverse:
    """
    Tests for the 3×3 Moore–Penrose pseudoinverse.
    """

    def test_identity(self):
        """
        Test that the identity is its own pseudoinverse with full rank.
        """
        pinv, rank = pseudoinverse_3x3(np.eye(3))
        np.testing.assert_allclose(pinv, np.eye(3), atol=1e-15)
        assert rank == 3

    def test_rank_two_projector(self):
        """
        Test that a rank-2 projector is its own pseudoinverse.
        """
        pinv, rank = pseudoinverse_3x3(np.diag([1.0, 1.0, 0.0]))
        np.testing.assert_allclose(pinv, np.diag([1.0, 1.0, 0.0]), atol=1e-15)
        assert rank == 2

    def test_zero_matrix(self):
        """
        Test that the zero matrix maps to zero with rank 0.
        """
        pinv, rank = pseudoinverse_3x3(np.zeros((3, 3)))
        np.testing.assert_array_equal(pinv, np.zeros((3, 3)))
        assert rank == 0

    def test_penrose_conditions(self, rng):
        """
        Test the four Penrose identities on random symmetric rank-deficient matrices.
        """
        for _ in range(20):
            basis = rng.normal(size=(3, 2))
            m = basis @ basis.T
            pinv, rank = pseudoinverse_3x3(m)
            assert rank == 2
            np.testing.assert_allclose(m @ pinv @ m, m, atol=1e-10)
            np.testing.assert_allclose(pinv @ m @ pinv, pinv, atol=1e-10)
            np.testing.assert_allclose((m @ pinv).T, m @ pinv, atol=1e-10)
            np.testing.assert_allclose((pinv @ m).T, pinv @ m, atol=1e-10)

    def test_non_finite_raises(self):
        """
        Test that NaN entries raise InvalidMatrix.
        """
        m = np.eye(3)
        m[1, 2] = np.nan
        with pytest.raises(InvalidMatrix):
            pseudoinverse_3x3(m)


class TestRigidTransform:
    """
    Tests for RigidTransform and its helpers.
    """

    def test_rejects_reflection(self):
        """
        Test that a determinant −1 matrix is not accepted as a rotation.
        """
        with pytest.raises(InvalidMatrix):
            RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_rejects_non_orthonormal(self):
        """
        Test that a scaled matrix is rejected.
        """
        with pytest.raises(InvalidMatrix):
            RigidTransform(2.0 * np.eye(3), np.zeros(3))

    def test_inverse_composes_to_identity(self, random_transform):
        """
        Test that a transform composed with its inverse is the identity.
        """
        identity = compose(random_transform, random_transform.inverse())
        np.testing.assert_allclose(identity.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(identity.translation, np.zeros(3), atol=1e-12)

    def test_apply_single_point_and_cloud(self, random_transform, rng):
        """
        Test that a single point and a cloud are transformed consistently.
        """
        cloud = rng.normal(size=(5, 3))
        moved = apply_transform(random_transform, cloud)
        np.testing.assert_allclose(moved[2], apply_transform(random_transform, cloud[2]))
        with pytest.raises(ShapeError):
            apply_transform(random_transform, np.zeros((3, 2)))

    def test_apply_preserves_distances(self, random_transform, rng):
        """
        Test that transforming a cloud keeps every pairwise distance.
        """
        cloud = rng.normal(0.0, 0.1, (30, 3))
        np.testing.assert_allclose(pdist(apply_transform(random_transform, cloud)), pdist(cloud),
                                   atol=1e-12)

    def test_quaternion_codec(self, random_transform):
        """
        Test the scalar-last quaternion view and rebuilding from it.
        """
        quat = random_transform.as_quaternion()
        assert quat[3] >= 0
        rebuilt = RigidTransform.from_quaternion(quat, random_transform.translation)
        np.testing.assert_allclose(rebuilt.rotation, random_transform.rotation, atol=1e-12)

    def test_homogeneous_matrix(self, random_transform):
        """
        Test the 4×4 export and import.
        """
        matrix = random_transform.as_matrix()
        assert matrix.shape == (4, 4)
        np.testing.assert_array_equal(matrix[3], [0.0, 0.0, 0.0, 1.0])
        rebuilt = RigidTransform.from_matrix(matrix)
        np.testing.assert_array_equal(rebuilt.translation, random_transform.translation)

    def test_arrays_are_read_only(self, random_transform):
        """
        Test that a transform cannot be mutated through its arrays.
        """
        with pytest.raises(ValueError):
            random_transform.translation[0] = 5.0

    def test_orthonormalize_repairs_drift(self):
        """
        Test that a slightly perturbed rotation is projected back onto SO(3).
        """
        rotation = Rotation.from_euler("xyz", [0.3, -0.2, 0.1]).as_matrix()
        repaired = orthonormalize(rotation + 1e-6)
        np.testing.assert_allclose(repaired.T @ repaired, np.eye(3), atol=1e-12)
        assert np.linalg.det(repaired) == pytest.approx(1.0)


class TestFarthestPointIndices:
    """
    Tests for greedy farthest point sampling.
    """

    def test_segment_endpoints(self):
        """
        Test that two samples on a segment with its midpoint are the endpoints.
        """
        cloud = np.array([[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [1.0, 0.0, 0.0]])
        assert sorted(farthest_point_indices(cloud, 2, start=0)) == [0, 2]

    def test_all_points_distinct(self, rng):
        """
        Test that k = N selects every point exactly once.
        """
        cloud = rng.normal(size=(12, 3))
        assert sorted(farthest_point_indices(cloud, 12)) == list(range(12))

    def test_too_many_raises(self, rng):
        """
        Test that asking for more points than exist raises InvalidInput.
        """
        with pytest.raises(InvalidInput):
            farthest_point_indices(rng.normal(size=(4, 3)), 5)
