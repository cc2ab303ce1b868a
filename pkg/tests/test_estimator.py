import math

import numpy as np
import pytest

from auvfleet.estimator import (EstimatorConfig, FactorGraph, FactorKind,
                                NavigationEstimator, whitened_cost)
from auvfleet.geometry import Pose6, wrap_pi
from auvfleet.sensors import Measurement, SensorKind

from oracles import batch_gauss_newton, circle_dead_reckoning


def dvl(t, vx, vy=0.0, vz=0.0):
    return Measurement(SensorKind.DVL, t, (vx, vy, vz))


def imu(t, roll=0.0, pitch=0.0, yaw=0.0):
    return Measurement(SensorKind.IMU, t, (roll, pitch, yaw))


def depth(t, z):
    return Measurement(SensorKind.DEPTH, t, (z,))


def gps(t, x, y):
    return Measurement(SensorKind.GPS, t, (x, y))


def noiseless_config(**kwargs):
    return EstimatorConfig(prior_sigma=(0.0,) * 6, dvl_sigma=(0.0,) * 3,
                           imu_sigma=(0.0,) * 3, depth_sigma=0.0,
                           gps_sigma=(0.0, 0.0), **kwargs)


class TestOnDvl:
    def test_first_dvl_creates_prior_node_at_prior_value(self):
        start = Pose6(2.0, -1.0, 0.5, 0.0, 0.0, 0.3)
        est = NavigationEstimator(start, EstimatorConfig())
        events = est.feed(dvl(0.0, 1.0))
        kinds = [e["kind"] for e in events]
        assert kinds[0] == "node" and "estimate" in kinds
        assert len(est.graph) == 1
        factors = est.graph.factor_list()
        assert [f.kind for f in factors] == [FactorKind.PRIOR]
        pose, t = est.current_estimate()
        assert t == 0.0
        assert pose.as_array() == pytest.approx(start.as_array(), abs=1e-9)

    def test_constant_velocity_straight_line(self):
        # 10 nodes at 4 Hz, 1 m/s along x: node 9 sits at 9 * 0.25 m.
        est = NavigationEstimator(Pose6(), noiseless_config())
        for k in range(10):
            t = 0.25 * k
            est.feed(imu(t))
            est.feed(dvl(t, 1.0))
        pose, t = est.current_estimate()
        assert t == pytest.approx(2.25)
        assert pose.x == pytest.approx(2.25, abs=1e-9)
        assert pose.y == pytest.approx(0.0, abs=1e-9)
        assert pose.z == pytest.approx(0.0, abs=1e-9)

    def test_out_of_order_dvl_rejected(self):
        est = NavigationEstimator(Pose6(), EstimatorConfig())
        est.feed(dvl(0.0, 1.0))
        est.feed(dvl(0.25, 1.0))
        events = est.feed(dvl(0.1, 1.0))
        assert events == [{"kind": "estimator_reject", "reason": "out_of_order_dvl", "t_meas": 0.1}]
        assert est.stats.rejected_out_of_order == 1
        assert len(est.graph) == 2

    def test_circle_matches_closed_form_sum(self):
        # Constant speed, constant yaw-rate ramp sampled at 10 Hz: the smoothed
        # track must equal the analytic rotation-series sum to float precision.
        dt, speed, yaw_rate, n = 0.1, 1.2, 0.35, 200
        est = NavigationEstimator(Pose6(), noiseless_config())
        for k in range(n + 1):
            t = dt * k
            est.feed(imu(t, yaw=wrap_pi(yaw_rate * t)))
            est.feed(dvl(t, speed))
        x_exp, y_exp = circle_dead_reckoning(n, 0.0, yaw_rate * dt, speed, dt)
        pose, _ = est.current_estimate()
        assert pose.x == pytest.approx(x_exp, abs=1e-6)
        assert pose.y == pytest.approx(y_exp, abs=1e-6)


class TestAssociate:
    def test_exact_time_match_assigned_offset_zero(self):
        est = NavigationEstimator(Pose6(), EstimatorConfig())
        est.feed(dvl(0.0, 1.0))
        est.feed(depth(0.25, 1.0))
        est.feed(dvl(0.25, 1.0))
        factors = [f for f in est.graph.factor_list() if f.kind is FactorKind.DEPTH]
        assert len(factors) == 1
        assert factors[0].nodes == (1,)

    def test_equidistant_measurement_goes_to_newer_node(self):
        est = NavigationEstimator(Pose6(), EstimatorConfig(match_tolerance=0.125))
        est.feed(dvl(0.0, 1.0))
        est.feed(depth(0.125, 3.0))  # exactly between node 0 (t=0) and node 1 (t=0.25)
        est.feed(dvl(0.25, 1.0))
        factors = [f for f in est.graph.factor_list() if f.kind is FactorKind.DEPTH]
        assert len(factors) == 1
        assert factors[0].nodes == (1,)

    def test_offset_beyond_tolerance_discarded_and_counted(self):
        # Nodes 0.5 s apart with tolerance 0.125 s leave a dead zone in the
        # middle: a measurement 0.3 s older than the current node matches
        # neither and is discarded. Enumerating offsets around the boundary
        # confirms the rule flips exactly at the tolerance.
        def outcome(offset):
            est = NavigationEstimator(Pose6(), EstimatorConfig(match_tolerance=0.125))
            est.feed(dvl(0.0, 1.0))
            est.feed(depth(1.0 - offset, 5.0))
            est.feed(dvl(1.0, 1.0))
            n_depth = sum(f.kind is FactorKind.DEPTH for f in est.graph.factor_list())
            return n_depth, est.stats.discarded["depth"]

        assert outcome(0.3) == (0, 1)
        assert outcome(0.1251) == (0, 1)
        assert outcome(0.1249) == (1, 0)
        assert outcome(0.125) == (1, 0)

    def test_future_measurement_retained_for_next_node(self):
        est = NavigationEstimator(Pose6(), EstimatorConfig(match_tolerance=0.125))
        est.feed(dvl(0.0, 1.0))
        est.feed(dvl(0.25, 1.0))
        est.feed(depth(0.45, 2.0))  # closer to the upcoming node at 0.5
        est.feed(dvl(0.5, 1.0))
        factors = [f for f in est.graph.factor_list() if f.kind is FactorKind.DEPTH]
        assert len(factors) == 1
        assert factors[0].nodes == (2,)
        assert est.stats.discarded["depth"] == 0

    def test_duplicate_kind_keeps_smaller_offset(self):
        est = NavigationEstimator(Pose6(), EstimatorConfig(match_tolerance=0.125))
        est.feed(dvl(0.0, 1.0))
        est.feed(depth(0.30, 7.0))   # offset 0.05 from node at 0.25
        est.feed(depth(0.26, 9.0))   # offset 0.01: wins despite arriving later
        est.feed(dvl(0.25, 1.0))
        factors = [f for f in est.graph.factor_list() if f.kind is FactorKind.DEPTH]
        assert len(factors) == 1
        assert factors[0].value[0] == pytest.approx(9.0)
        # The displaced sample is newer than the node, so it is requeued for
        # the next node rather than discarded...
        assert len(est._queues[SensorKind.DEPTH]) == 1
        # ...and on the next node (t=0.5) it is too far from either to match.
        est.feed(dvl(0.5, 1.0))
        assert est.stats.discarded["depth"] == 1

    def test_association_totality(self):
        # Every queued measurement ends up assigned exactly once or counted.
        rng = np.random.default_rng(11)
        est = NavigationEstimator(Pose6(), EstimatorConfig(match_tolerance=0.125))
        fed = 0
        for k in range(40):
            t = 0.25 * k
            for dt in sorted(rng.uniform(-0.2, 0.2, size=2)):
                if 0 <= t + dt:
                    est.feed(depth(t + dt + 1e-4 * rng.standard_normal(), 1.0))
                    fed += 1
            est.feed(dvl(t, 1.0))
        # Flush: one more node far in the future forces stale eviction.
        est.feed(dvl(0.25 * 45, 1.0))
        est.feed(dvl(0.25 * 50, 1.0))
        assigned = sum(f.kind is FactorKind.DEPTH for f in est.graph.factor_list())
        discarded = est.stats.discarded["depth"]
        pending = len(est._queues[SensorKind.DEPTH])
        assert assigned + discarded + pending == fed
        assert pending == 0


class TestOptimize:
    def test_prior_only_zero_residual(self):
        est = NavigationEstimator(Pose6(1.0, 2.0, 3.0), EstimatorConfig())
        est.feed(dvl(0.0, 0.0))
        assert whitened_cost(est.graph, est.estimates()) == pytest.approx(0.0, abs=1e-18)

    def test_unconstrained_chain_composes_exactly(self):
        est = NavigationEstimator(Pose6(), EstimatorConfig())
        est.feed(dvl(0.0, 1.0))
        est.feed(dvl(0.25, 1.0))
        assert whitened_cost(est.graph, est.estimates()) == pytest.approx(0.0, abs=1e-15)
        pose, _ = est.current_estimate()
        assert pose.x == pytest.approx(0.25, abs=1e-12)

    def test_gps_pull_matches_hand_weighted_mean(self):
        # One interval of 1 m/s odometry (predicts x=0.25), then GPS reads
        # x=1.25 (1 m ahead). With prior sigma 0.1 on node 0, odometry sigma
        # 0.02*0.25 m, GPS sigma 1.0: solving the 2-node normal equations by
        # hand for the x component:
        #   minimize (x0/0.1)^2 + ((x1-x0-0.25)/0.005)^2 + ((x1-1.25)/1.0)^2
        # gives x1 = 0.25 + 1.0 * (0.1^2 + 0.005^2) / (0.1^2 + 0.005^2 + 1.0^2)
        cfg = EstimatorConfig(prior_sigma=(0.1,) * 6, dvl_sigma=(0.02,) * 3,
                              imu_sigma=(0.01,) * 3, gps_sigma=(1.0, 1.0))
        est = NavigationEstimator(Pose6(), cfg)
        est.feed(dvl(0.0, 1.0))
        est.feed(gps(0.25, 1.25, 0.0))
        est.feed(dvl(0.25, 1.0))
        s_chain = 0.1 ** 2 + 0.005 ** 2
        expected_x1 = 0.25 + 1.0 * s_chain / (s_chain + 1.0)
        pose, _ = est.current_estimate()
        assert pose.x == pytest.approx(expected_x1, abs=1e-9)

    def test_depth_factor_weighted_mean_with_prior(self):
        # Single node with prior z=0 (sigma 0.1) and depth z=2 (sigma 0.05):
        # optimum is the precision-weighted mean.
        cfg = EstimatorConfig(prior_sigma=(0.1,) * 6, depth_sigma=0.05)
        est = NavigationEstimator(Pose6(), cfg)
        est.feed(depth(0.0, 2.0))
        est.feed(dvl(0.0, 0.0))
        w_prior, w_depth = 1 / 0.1 ** 2, 1 / 0.05 ** 2
        expected = (w_prior * 0.0 + w_depth * 2.0) / (w_prior + w_depth)
        pose, _ = est.current_estimate()
        assert pose.z == pytest.approx(expected, abs=1e-12)

    def test_incremental_matches_batch_oracle_on_random_graphs(self):
        rng = np.random.default_rng(7)
        for trial in range(5):
            est = _random_graph_estimator(rng, n_nodes=60)
            batch = batch_gauss_newton(est.graph.factor_list(), len(est.graph),
                                       _composed_initial(est))
            inc = est.estimates()
            assert np.max(np.abs(inc[:, :3] - batch[:, :3])) < 1e-6
            assert np.max(np.abs(wrap_pi(inc[:, 3:] - batch[:, 3:]))) < 1e-6

    def test_iterations_never_increase_cost(self):
        rng = np.random.default_rng(3)
        est = _random_graph_estimator(rng, n_nodes=30)
        cost_before = whitened_cost(est.graph, est.estimates())
        est.optimize()
        cost_after = whitened_cost(est.graph, est.estimates())
        assert cost_after <= cost_before + 1e-9


class TestCurrentEstimate:
    def test_query_between_nodes_returns_last_node_unchanged(self):
        est = NavigationEstimator(Pose6(), noiseless_config())
        est.feed(imu(0.0))
        est.feed(dvl(0.0, 1.0))
        est.feed(imu(0.25))
        est.feed(dvl(0.25, 1.0))
        p1, t1 = est.current_estimate()
        est.feed(imu(0.4))  # mid-interval sensor data does not move the estimate
        est.feed(depth(0.4, 0.5))
        p2, t2 = est.current_estimate()
        assert t1 == t2
        assert p1.as_array() == pytest.approx(p2.as_array())

    def test_gps_gating_no_gps_factor_when_disabled(self):
        cfg = EstimatorConfig(use_gps=False)
        est = NavigationEstimator(Pose6(), cfg)
        est.feed(dvl(0.0, 1.0))
        est.feed(gps(0.25, 5.0, 5.0))
        est.feed(dvl(0.25, 1.0))
        assert all(f.kind is not FactorKind.GPS for f in est.graph.factor_list())
        assert est.stats.discarded["gps"] == 1


def _composed_initial(est: NavigationEstimator) -> np.ndarray:
    """Odometry-composed initial guess, the same start the estimator used."""
    nodes = est.graph.nodes
    init = np.zeros((len(nodes), 6))
    odoms = {f.nodes[1]: f for f in est.graph.factor_list() if f.kind is FactorKind.DVL_ODOM}
    prior = next(f for f in est.graph.factor_list() if f.kind is FactorKind.PRIOR)
    init[0] = prior.value
    for i in range(1, len(nodes)):
        init[i] = init[i - 1] + odoms[i].value
    return init


def _random_graph_estimator(rng, n_nodes=60) -> NavigationEstimator:
    """Mixed-factor random chain: odometry vs conflicting GPS plus unaries."""
    cfg = EstimatorConfig(prior_sigma=(0.1,) * 3 + (0.05,) * 3,
                          dvl_sigma=(0.05, 0.05, 0.05), imu_sigma=(0.02, 0.02, 0.02),
                          depth_sigma=0.05, gps_sigma=(0.8, 0.8), match_tolerance=0.13)
    est = NavigationEstimator(Pose6(), cfg)
    t = 0.0
    yaw = 0.0
    for k in range(n_nodes):
        yaw = wrap_pi(yaw + rng.uniform(-0.3, 0.3))
        est.feed(imu(t, rng.normal(0, 0.05), rng.normal(0, 0.1), yaw))
        if rng.random() < 0.7:
            est.feed(depth(t, rng.normal(1.0, 0.5)))
        if rng.random() < 0.3:
            est.feed(gps(t, rng.normal(0.0, 3.0), rng.normal(0.0, 3.0)))
        est.feed(dvl(t, rng.normal(1.0, 0.3), rng.normal(0, 0.1), rng.normal(0, 0.1)))
        t += 0.25
    return est
