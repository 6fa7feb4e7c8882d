import numpy as np
import pytest

from votecraft.errors import InvalidInput
from votecraft.oracles import (
    SelftestReport,
    brute_force_keypoint,
    random_vote_instance,
    selftest,
)
from votecraft.voting import vote_objective


class TestBruteForceKeypoint:
    """
    Tests for the grid + line-search voting oracle.
    """

    def test_consistent_rays(self, consistent_rays):
        """
        Test that exact rays lead the oracle to their common point.
        """
        points, vectors, keypoint = consistent_rays
        found = brute_force_keypoint(points, vectors, np.ones(len(points)))
        np.testing.assert_allclose(found, keypoint, atol=1e-6)
        assert vote_objective(points, vectors, np.ones(len(points)), found) < 1e-10

    def test_random_instance_shape(self, rng):
        """
        Test that random instances hold one keypoint and 3 to 200 points.
        """
        for _ in range(10):
            problem = random_vote_instance(rng)
            assert problem.keypoint_count == 1
            assert 3 <= problem.point_count <= 200


class TestSelftest:
    """
    Tests for the oracle-equivalence self-test.
    """

    def test_small_run_passes(self):
        """
        Test that a short self-test reports no failures and small gaps.
        """
        report = selftest(instances=5, seed=3)
        assert report.passed
        assert report.instances == 5
        assert report.max_position_gap <= 1e-6
        assert report.max_pose_error <= 1e-9
        assert report.max_metric_gap <= 1e-12

    def test_failures_mark_report_failed(self):
        """
        Test that any recorded failure flips passed.
        """
        report = SelftestReport(instances=1)
        assert report.passed
        report.failures.append("instance 0: broken")
        assert not report.passed

    def test_needs_instances(self):
        """
        Test that zero instances raise InvalidInput.
        """
        with pytest.raises(InvalidInput):
            selftest(instances=0)
