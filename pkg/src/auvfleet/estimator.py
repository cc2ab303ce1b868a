"""Factor-graph dead-reckoning smoother with nearest-neighbor time association.

Pose nodes are created at DVL measurement timestamps. Five factor types
constrain them:

    PRIOR     anchors node 0 at the configured deployment pose,
    DVL_ODOM  ties consecutive nodes with a world-frame translation delta
              (body velocity x dt, rotated by the previous node's orientation
              estimate at creation time) and an orientation delta taken from
              the two most recent IMU samples,
    IMU_ORI   absolute roll/pitch/yaw on one node,
    DEPTH     absolute z on one node,
    GPS       absolute horizontal x, y on one node (surface fixes only).

Because the odometry translation is rotated into the world frame when the
factor is built, every residual is linear in exactly one state component
(x, y, z, roll, pitch or yaw, with angle measurements re-expressed near the
current estimate so wrapping never activates at the optimum). The normal
equations therefore split into six independent tridiagonal systems along the
node chain, which are solved exactly on every update; this one-shot solve is
the Gauss-Newton step of the (piecewise-) linear problem and is verified
against a generic dense batch solver in the test suite.

Other sensor measurements are queued and associated to nodes by comparing
their timestamps against the current and previous node: assigned to the
closer node when within the match tolerance (ties go to the newer node, one
factor per kind per node), retained when newer than the current node, and
discarded otherwise.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solveh_banded

from .geometry import Pose6, rotation_matrix_rpy, wrap_pi
from .sensors import Measurement, SensorKind

TWO_PI = 2.0 * math.pi

# Weight floor: zero configured noise still yields a finite, well-conditioned
# information matrix (used by noiseless consistency runs).
SIGMA_FLOOR = 1e-4


class FactorKind(enum.Enum):
    PRIOR = "prior"
    DVL_ODOM = "dvl_odom"
    IMU_ORI = "imu_ori"
    DEPTH = "depth"
    GPS = "gps"


# State component indices touched by each factor kind, in value order.
FACTOR_COMPONENTS = {
    FactorKind.PRIOR: (0, 1, 2, 3, 4, 5),
    FactorKind.DVL_ODOM: (0, 1, 2, 3, 4, 5),
    FactorKind.IMU_ORI: (3, 4, 5),
    FactorKind.DEPTH: (2,),
    FactorKind.GPS: (0, 1),
}
ANGLE_COMPONENTS = (3, 4, 5)


@dataclass(frozen=True)
class PoseNode:
    """One pose variable, timestamped by the DVL sample that created it."""

    index: int
    t: float
    value: Pose6  # initial guess at creation; optimized values live in the solution


@dataclass(frozen=True)
class Factor:
    """One measurement constraint; unary factors reference a single node."""

    kind: FactorKind
    nodes: tuple
    value: np.ndarray
    sigma: np.ndarray


class FactorGraph:
    """Chain-structured pose graph with columnar factor storage.

    DVL_ODOM factors must connect consecutive nodes (i-1, i); unary factors
    must reference an existing node. Angle measurements are stored re-expressed
    near the node estimate current at insertion time, which keeps the problem
    linear; `factor_list` exposes plain Factor records for independent solvers.
    Factors can be retired (duplicate-kind replacement); retired entries keep
    their index but drop out of `factor_list` and the cost.
    """

    def __init__(self):
        self.nodes: list[PoseNode] = []
        self._kinds: list[FactorKind] = []
        self._nodes_per_factor: list[tuple] = []
        self._values: list[np.ndarray] = []
        self._sigmas: list[np.ndarray] = []
        self._alive: list[bool] = []

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def n_factors(self) -> int:
        return sum(self._alive)

    def add_node(self, t: float, value: Pose6) -> int:
        if self.nodes and t <= self.nodes[-1].t:
            raise ValueError("node timestamps must be strictly increasing")
        index = len(self.nodes)
        self.nodes.append(PoseNode(index=index, t=t, value=value))
        return index

    def add_factor(self, kind: FactorKind, nodes: tuple, value, sigma) -> int:
        value = np.asarray(value, dtype=float).copy()
        sigma = np.asarray(sigma, dtype=float)
        comps = FACTOR_COMPONENTS[kind]
        if value.shape != (len(comps),) or sigma.shape != (len(comps),):
            raise ValueError(f"{kind.value} factor expects {len(comps)} entries")
        if kind is FactorKind.DVL_ODOM:
            if len(nodes) != 2 or nodes[1] != nodes[0] + 1:
                raise ValueError("DVL_ODOM must connect consecutive nodes (i-1, i)")
        elif len(nodes) != 1:
            raise ValueError(f"{kind.value} factor is unary")
        for n in nodes:
            if not 0 <= n < len(self.nodes):
                raise ValueError(f"factor references unknown node {n}")
        self._kinds.append(kind)
        self._nodes_per_factor.append(tuple(nodes))
        self._values.append(value)
        self._sigmas.append(sigma)
        self._alive.append(True)
        return len(self._kinds) - 1

    def retire_factor(self, index: int) -> None:
        self._alive[index] = False

    def factor_list(self) -> list[Factor]:
        return [Factor(kind=k, nodes=n, value=v.copy(), sigma=s.copy())
                for k, n, v, s, alive in zip(self._kinds, self._nodes_per_factor,
                                             self._values, self._sigmas, self._alive)
                if alive]

    def factor(self, i: int) -> Factor:
        return Factor(self._kinds[i], self._nodes_per_factor[i],
                      self._values[i].copy(), self._sigmas[i].copy())


def whitened_cost(graph: FactorGraph, estimates: np.ndarray) -> float:
    """Sum of squared whitened residuals of `estimates` (n x 6) over the graph."""
    total = 0.0
    for f in graph.factor_list():
        comps = FACTOR_COMPONENTS[f.kind]
        if f.kind is FactorKind.DVL_ODOM:
            pred = estimates[f.nodes[1], list(comps)] - estimates[f.nodes[0], list(comps)]
        else:
            pred = estimates[f.nodes[0], list(comps)]
        res = pred - f.value
        for j, c in enumerate(comps):
            if c in ANGLE_COMPONENTS:
                res[j] = wrap_pi(res[j])
        total += float(np.sum((res / np.maximum(f.sigma, SIGMA_FLOOR)) ** 2))
    return total


@dataclass
class EstimatorConfig:
    """Factor noise models and association settings.

    Sigmas default to the generating sensor sigmas in the scenario config;
    odometry sigmas are derived per factor (translation: DVL sigma x dt,
    rotation: sqrt(2) x IMU sigma, the delta of two samples).
    """

    prior_sigma: tuple = (0.01, 0.01, 0.01, 0.005, 0.005, 0.005)
    dvl_sigma: tuple = (0.02, 0.02, 0.02)
    imu_sigma: tuple = (0.01, 0.01, 0.01)
    depth_sigma: float = 0.02
    gps_sigma: tuple = (1.0, 1.0)
    match_tolerance: float = 0.125  # s; default half of the 4 Hz DVL period
    use_gps: bool = True
    max_iterations: int = 8


@dataclass
class EstimatorStats:
    nodes: int = 0
    factors: int = 0
    rejected_out_of_order: int = 0
    discarded: dict = field(default_factory=lambda: {k.value: 0 for k in
                                                     (SensorKind.IMU, SensorKind.DEPTH, SensorKind.GPS)})
    degraded_solves: int = 0


class _AngleIndex:
    """Flat index of absolute-angle factor entries for vectorized wrap checks."""

    def __init__(self, capacity: int = 64):
        self._cap = capacity
        self.fi = np.zeros(capacity, dtype=np.int64)
        self.node = np.zeros(capacity, dtype=np.int64)
        self.comp = np.zeros(capacity, dtype=np.int64)
        self.value = np.zeros(capacity)
        self.alive = np.zeros(capacity, dtype=bool)
        self.n = 0

    def append(self, fi: int, node: int, comp: int, value: float) -> None:
        if self.n == self._cap:
            self._cap *= 2
            for name in ("fi", "node", "comp", "value", "alive"):
                arr = getattr(self, name)
                grown = np.zeros(self._cap, dtype=arr.dtype)
                grown[:self.n] = arr
                setattr(self, name, grown)
        self.fi[self.n] = fi
        self.node[self.n] = node
        self.comp[self.n] = comp
        self.value[self.n] = value
        self.alive[self.n] = True
        self.n += 1

    def retire(self, fi: int) -> None:
        self.alive[:self.n] &= self.fi[:self.n] != fi

    def wrapped_entries(self, estimates: np.ndarray) -> np.ndarray:
        """Positions whose residual exceeds pi (a new 2*pi representative is due)."""
        n = self.n
        if n == 0:
            return np.empty(0, dtype=np.int64)
        residual = estimates[self.node[:n], self.comp[:n]] - self.value[:n]
        mask = (np.abs(residual) > math.pi) & self.alive[:n]
        return np.nonzero(mask)[0]


class _ChainInformation:
    """Six independent tridiagonal normal-equation systems along the chain."""

    def __init__(self, capacity: int = 64):
        self._cap = capacity
        self.diag = np.zeros((6, capacity))
        self.off = np.zeros((6, capacity))  # off[c, i] couples nodes i and i+1
        self.rhs = np.zeros((6, capacity))
        self.n = 0

    def grow_to(self, n: int) -> None:
        if n > self._cap:
            new_cap = max(n, self._cap * 2)
            for name in ("diag", "off", "rhs"):
                arr = getattr(self, name)
                grown = np.zeros((6, new_cap))
                grown[:, :self._cap] = arr
                setattr(self, name, grown)
            self._cap = new_cap
        self.n = max(self.n, n)

    def add_unary(self, node: int, comp: int, value: float, weight: float) -> None:
        self.diag[comp, node] += weight
        self.rhs[comp, node] += weight * value

    def shift_unary(self, node: int, comp: int, delta_value: float, weight: float) -> None:
        self.rhs[comp, node] += weight * delta_value

    def add_delta(self, i: int, comp: int, delta: float, weight: float) -> None:
        """Constraint x[i] - x[i-1] = delta."""
        self.diag[comp, i - 1] += weight
        self.diag[comp, i] += weight
        self.off[comp, i - 1] -= weight
        self.rhs[comp, i - 1] -= weight * delta
        self.rhs[comp, i] += weight * delta

    def solve(self) -> np.ndarray:
        n = self.n
        if n == 1:
            return (self.rhs[:, :1] / self.diag[:, :1]).T.copy()
        out = np.empty((n, 6))
        ab = np.zeros((2, n))
        for c in range(6):
            ab[0, 1:] = self.off[c, :n - 1]
            ab[1, :] = self.diag[c, :n]
            out[:, c] = solveh_banded(ab, self.rhs[c, :n])
        return out


def _weights(sigma) -> np.ndarray:
    return 1.0 / np.maximum(np.asarray(sigma, dtype=float), SIGMA_FLOOR) ** 2


class NavigationEstimator:
    """Single-vehicle smoother: feed measurements, read back optimized poses."""

    def __init__(self, initial_pose: Pose6, config: EstimatorConfig | None = None):
        self.config = config or EstimatorConfig()
        self.graph = FactorGraph()
        self.stats = EstimatorStats()
        self._info = _ChainInformation()
        self._estimates = np.zeros((0, 6))
        self._initial_pose = initial_pose
        self._queues: dict[SensorKind, list[Measurement]] = {
            SensorKind.IMU: [], SensorKind.DEPTH: [], SensorKind.GPS: []}
        # per node: FactorKind -> (factor index, |dt|, source measurement)
        self._node_factors: list[dict] = []
        self._last_imu: list[Measurement] = []  # up to two most recent samples
        self._angles = _AngleIndex()
        self.degraded = False

    # ------------------------------------------------------------------ feed

    def feed(self, m: Measurement) -> list[dict]:
        """Ingest one measurement; returns loggable estimator events."""
        if m.kind is SensorKind.DVL:
            return self.on_dvl(m)
        if m.kind is SensorKind.GPS and not self.config.use_gps:
            events: list[dict] = []
            self._discard(SensorKind.GPS, m, events, "disabled")
            return events
        if m.kind is SensorKind.IMU:
            self._last_imu = (self._last_imu + [m])[-2:]
        self._queues[m.kind].append(m)
        return []

    def on_dvl(self, m: Measurement) -> list[dict]:
        """Create a pose node at the DVL timestamp, associate, and optimize."""
        events: list[dict] = []
        if self.graph.nodes and m.t <= self.graph.nodes[-1].t:
            self.stats.rejected_out_of_order += 1
            return [{"kind": "estimator_reject", "reason": "out_of_order_dvl", "t_meas": m.t}]

        if not self.graph.nodes:
            index = self._init_first_node(m.t)
        else:
            index = self._append_node(m)
        events.append({"kind": "node", "index": index, "t_node": m.t})

        events.extend(self.associate())
        self.optimize()
        pose, t = self.current_estimate()
        events.append({"kind": "estimate", "index": index, "t_node": t,
                       "pose": [pose.x, pose.y, pose.z, pose.roll, pose.pitch, pose.yaw]})
        return events

    def _init_first_node(self, t: float) -> int:
        pose = self._initial_pose
        index = self.graph.add_node(t, pose)
        fi = self.graph.add_factor(FactorKind.PRIOR, (index,), pose.as_array(),
                                   np.asarray(self.config.prior_sigma, dtype=float))
        self._node_factors.append({FactorKind.PRIOR: (fi, 0.0, None)})
        w = _weights(self.config.prior_sigma)
        self._info.grow_to(1)
        for c in range(6):
            self._info.add_unary(0, c, pose.as_array()[c], w[c])
            if c in ANGLE_COMPONENTS:
                self._angles.append(fi, 0, c, pose.as_array()[c])
        self._estimates = pose.as_array().reshape(1, 6)
        self.stats.nodes += 1
        self.stats.factors += 1
        return index

    def _append_node(self, m: Measurement) -> int:
        prev = self.graph.nodes[-1]
        prev_est = self._estimates[prev.index]
        dt = m.t - prev.t

        rot = rotation_matrix_rpy(*prev_est[3:6])
        delta_pos = rot @ m.array() * dt
        if len(self._last_imu) == 2:
            delta_rpy = wrap_pi(self._last_imu[-1].array() - self._last_imu[-2].array())
        else:
            delta_rpy = np.zeros(3)
        delta = np.concatenate([delta_pos, delta_rpy])
        sigma = np.concatenate([np.asarray(self.config.dvl_sigma) * dt,
                                math.sqrt(2.0) * np.asarray(self.config.imu_sigma)])

        guess = prev_est + delta
        index = self.graph.add_node(m.t, Pose6.from_array(guess))
        self.graph.add_factor(FactorKind.DVL_ODOM, (index - 1, index), delta, sigma)
        self._node_factors.append({})
        self._info.grow_to(index + 1)
        w = _weights(sigma)
        for j, c in enumerate(FACTOR_COMPONENTS[FactorKind.DVL_ODOM]):
            self._info.add_delta(index, c, delta[j], w[j])
        self._estimates = np.vstack([self._estimates, guess])
        self.stats.nodes += 1
        self.stats.factors += 1
        return index

    # ----------------------------------------------------------- association

    def associate(self) -> list[dict]:
        """Assign queued measurements to the current or previous node.

        Candidates are attached closest-offset first so the best sample of each
        kind wins its node; a closer latecomer replaces an earlier factor and
        the displaced measurement is requeued when it could still match a
        future node, otherwise counted discarded.
        """
        events: list[dict] = []
        if not self.graph.nodes:
            return events
        cur = self.graph.nodes[-1]
        prev = self.graph.nodes[-2] if len(self.graph.nodes) > 1 else None
        period = cur.t - prev.t if prev is not None else self.config.match_tolerance * 2.0
        tol = self.config.match_tolerance

        for kind, queue in self._queues.items():
            keep: list[Measurement] = []
            candidates: list[tuple] = []  # (offset, -t, target node, measurement)
            for m in queue:
                if m.t > cur.t + tol:
                    keep.append(m)  # can only match a future node
                    continue
                if m.t < cur.t - 2.0 * period:
                    self._discard(kind, m, events, "stale")
                    continue
                off_cur = abs(m.t - cur.t)
                target, offset = cur, off_cur
                if prev is not None:
                    off_prev = abs(m.t - prev.t)
                    if off_prev < off_cur:  # tie goes to the newer node
                        target, offset = prev, off_prev
                if offset > tol:
                    if m.t > cur.t:
                        keep.append(m)
                    else:
                        self._discard(kind, m, events, "no_match")
                    continue
                candidates.append((offset, -m.t, target.index, m))
            for offset, _, node, m in sorted(candidates, key=lambda c: (c[0], c[1])):
                displaced = self._attach(kind, node, m, offset)
                if displaced is not None:
                    if displaced.t > cur.t:
                        keep.append(displaced)
                    else:
                        self._discard(kind, displaced, events, "duplicate")
            queue[:] = keep
        return events

    def _discard(self, kind: SensorKind, m: Measurement, events: list, reason: str) -> None:
        self.stats.discarded[kind.value] += 1
        events.append({"kind": "estimator_discard", "sensor": kind.value,
                       "t_meas": m.t, "reason": reason})

    def _attach(self, kind: SensorKind, node: int, m: Measurement, offset: float):
        """Add a unary factor for `m` on `node`; returns the displaced
        measurement when the node already carries a sample of this kind
        (whichever of the two sits further from the node time)."""
        factor_kind = {SensorKind.IMU: FactorKind.IMU_ORI,
                       SensorKind.DEPTH: FactorKind.DEPTH,
                       SensorKind.GPS: FactorKind.GPS}[kind]
        existing = self._node_factors[node].get(factor_kind)
        if existing is not None:
            old_fi, old_offset, old_m = existing
            if offset >= old_offset:
                return m  # keep the closer existing factor; displace the newcomer
            self._retire_unary(old_fi, node)
            del self._node_factors[node][factor_kind]
            displaced = old_m
        else:
            displaced = None

        values = m.array().astype(float).copy()
        sigma = {SensorKind.IMU: np.asarray(self.config.imu_sigma, dtype=float),
                 SensorKind.DEPTH: np.asarray([self.config.depth_sigma], dtype=float),
                 SensorKind.GPS: np.asarray(self.config.gps_sigma, dtype=float)}[kind]
        comps = FACTOR_COMPONENTS[factor_kind]
        for j, c in enumerate(comps):
            if c in ANGLE_COMPONENTS:
                est = self._estimates[node, c]
                values[j] = est + wrap_pi(values[j] - est)
        fi = self.graph.add_factor(factor_kind, (node,), values, sigma)
        self._node_factors[node][factor_kind] = (fi, offset, m)
        w = _weights(sigma)
        for j, c in enumerate(comps):
            self._info.add_unary(node, c, values[j], w[j])
            if c in ANGLE_COMPONENTS:
                self._angles.append(fi, node, c, values[j])
        self.stats.factors += 1
        return displaced

    def _retire_unary(self, fi: int, node: int) -> None:
        """Back a unary factor's contribution out of the normal equations."""
        f = self.graph.factor(fi)
        self.graph.retire_factor(fi)
        w = _weights(f.sigma)
        for j, c in enumerate(FACTOR_COMPONENTS[f.kind]):
            self._info.add_unary(node, c, f.value[j], -w[j])
        self._angles.retire(fi)
        self.stats.factors -= 1

    # ------------------------------------------------------------- optimize

    def optimize(self) -> np.ndarray:
        """Solve the normal equations exactly; re-express wrapped angles if needed.

        The solve is the Gauss-Newton step of the linear(-ized) problem, so a
        single iteration reaches the optimum; extra iterations only run when an
        absolute angle measurement needs a new 2*pi representative. Non-finite
        results leave the previous estimate in place and flag the solve degraded.
        """
        self.degraded = False
        for _ in range(max(1, self.config.max_iterations)):
            solution = self._info.solve()
            if not np.all(np.isfinite(solution)):
                self.stats.degraded_solves += 1
                self.degraded = True
                return self._estimates
            self._estimates = solution
            if not self._reexpress_angles():
                return self._estimates
        self.stats.degraded_solves += 1
        self.degraded = True
        return self._estimates

    def _reexpress_angles(self) -> bool:
        """Shift absolute angle measurements by 2*pi multiples toward the
        estimate; returns True when anything changed (another solve needed)."""
        changed = False
        for pos in self._angles.wrapped_entries(self._estimates):
            fi = int(self._angles.fi[pos])
            node = int(self._angles.node[pos])
            c = int(self._angles.comp[pos])
            j = FACTOR_COMPONENTS[self.graph._kinds[fi]].index(c)
            value = self.graph._values[fi]
            residual = self._estimates[node, c] - value[j]
            shift = round(residual / TWO_PI) * TWO_PI
            if shift != 0.0:
                w = _weights(self.graph._sigmas[fi])[j]
                self._info.shift_unary(node, c, shift, w)
                value[j] += shift
                self._angles.value[pos] = value[j]
                changed = True
        return changed

    # -------------------------------------------------------------- queries

    def current_estimate(self) -> tuple[Pose6, float]:
        """Latest node's optimized pose (angles wrapped) and its timestamp."""
        if not self.graph.nodes:
            return self._initial_pose, 0.0
        node = self.graph.nodes[-1]
        est = self._estimates[node.index]
        return Pose6(est[0], est[1], est[2],
                     wrap_pi(est[3]), est[4], wrap_pi(est[5])), node.t

    def estimates(self) -> np.ndarray:
        """Optimized (n x 6) state matrix; rows follow node indices."""
        return self._estimates.copy()

    def full_trajectory(self) -> list[tuple[float, Pose6]]:
        return [(node.t, Pose6.from_array(self._estimates[node.index]))
                for node in self.graph.nodes]
