"""Deterministic 2D highway world.

Pure-function simulation core: single-track ego kinematics, constant-speed
obstacle cars, two road walls, 13 ray-cast range sensors, rectangle collision
tests, and episode stepping. Every trajectory is a deterministic function of
(scenario seed, action sequence); all randomness is confined to
spawn_scenario.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum, IntEnum

import numpy as np

TWO_PI = 2.0 * math.pi

_STEER_DELTAS = (0.0, math.pi / 12.0, -math.pi / 12.0)


class SteerAction(IntEnum):
    """Steering commands: hold course, steer left 15 deg, steer right 15 deg."""

    STRAIGHT = 0
    LEFT = 1
    RIGHT = 2

    @property
    def delta(self) -> float:
        """Steering angle in radians (+pi/12 for left, -pi/12 for right)."""
        return _STEER_DELTAS[int(self)]


class Terminal(Enum):
    """Episode termination flags, in check-priority order."""

    NONE = "none"
    COLLISION_WALL = "collision_wall"
    COLLISION_CAR = "collision_car"
    END_OF_ROAD = "end_of_road"
    HORIZON = "horizon_reached"

    @property
    def is_collision(self) -> bool:
        return self in (Terminal.COLLISION_WALL, Terminal.COLLISION_CAR)


@dataclass(frozen=True)
class WorldConfig:
    """World geometry and episode parameters.

    The defaults define the canonical environment: a 100-unit road of three
    4-unit lanes bounded by walls at y=0 and y=12, a 4x2 ego vehicle with a
    2.5 wheelbase moving 1 unit per step at constant speed, up to two slower
    obstacle cars, and 13 range sensors with a 64-unit reach (64% of the road
    length) binned into 16 intervals of 4 units each.
    """

    env_length: float = 100.0
    lane_width: float = 4.0
    num_lanes: int = 3
    vehicle_length: float = 4.0
    vehicle_width: float = 2.0
    wheelbase: float = 2.5
    dt: float = 1.0
    ego_speed: float = 1.0
    max_obstacles: int = 2
    obstacle_speed: float = 0.5
    spawn_min_x: float = 20.0
    spawn_max_x: float = 80.0
    sensor_range: float = 64.0
    num_sensors: int = 13
    num_bins: int = 16
    horizon: int = 100

    def __post_init__(self):
        if self.dt <= 0 or self.wheelbase <= 0:
            raise ValueError("dt and wheelbase must be positive")
        if self.num_lanes != 3:
            raise ValueError("the world is defined for exactly 3 lanes")
        if self.max_obstacles > 2 or self.max_obstacles < 0:
            raise ValueError("max_obstacles must be in 0..2")
        if self.num_sensors != 13:
            raise ValueError("the sensor pose table is defined for 13 sensors")
        if abs(self.sensor_range - 0.64 * self.env_length) > 1e-9:
            raise ValueError("sensor_range must be 64% of env_length")
        if self.obstacle_speed > self.ego_speed:
            raise ValueError("obstacles may not be faster than the ego car")

    @property
    def road_width(self) -> float:
        return self.num_lanes * self.lane_width

    @property
    def bin_width(self) -> float:
        return self.sensor_range / self.num_bins

    @property
    def feature_dim(self) -> int:
        return self.num_sensors * self.num_bins

    def lane_center(self, lane: int) -> float:
        return (lane + 0.5) * self.lane_width

    def nearest_lane(self, y: float) -> int:
        lane = int(math.floor(y / self.lane_width))
        return min(max(lane, 0), self.num_lanes - 1)


# Sensor pose table: sensor 0 points straight ahead; sensors 1..6 sweep the
# right side in 15-degree steps down to -90 (sensor 6 is the right-perpendicular
# side sensor that reads the wall); sensors 7..12 mirror 1..6 on the left.
SENSOR_OFFSETS = tuple(
    [0.0]
    + [-k * math.pi / 12.0 for k in range(1, 7)]
    + [k * math.pi / 12.0 for k in range(1, 7)]
)

# Cars are detected sonar-style within a sector of this half-width around the
# sensor axis; the 13 sectors tile the frontal field with no blind wedge.
# Walls are measured along the center ray only (a wall always subtends every
# sector, so sector-min readings would collapse to the perpendicular wall
# distance for all sensors and erase the pose information).
SENSOR_HALF_WIDTH = math.pi / 24.0

# Index permutation applied to sensor readings when a scenario is reflected
# across the road centerline.
MIRROR_SENSOR_PERMUTATION = (0, 7, 8, 9, 10, 11, 12, 1, 2, 3, 4, 5, 6)

MIRROR_ACTION_PERMUTATION = (0, 2, 1)


def _wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    t = math.remainder(theta, TWO_PI)
    return t + TWO_PI if t <= -math.pi else t


@dataclass(frozen=True)
class VehicleState:
    """Pose and (constant) speed of the ego car."""

    x: float
    y: float
    theta: float
    v: float

    def __post_init__(self):
        object.__setattr__(self, "theta", _wrap_angle(self.theta))


@dataclass(frozen=True)
class Obstacle:
    """An obstacle car: axis-aligned, lane-centered, constant forward speed."""

    x: float
    lane: int
    speed: float

    def y(self, cfg: WorldConfig) -> float:
        return cfg.lane_center(self.lane)

    def rect(self, cfg: WorldConfig) -> tuple[float, float, float, float]:
        """Axis-aligned extent (xmin, xmax, ymin, ymax)."""
        hl = cfg.vehicle_length / 2.0
        hw = cfg.vehicle_width / 2.0
        y = self.y(cfg)
        return (self.x - hl, self.x + hl, y - hw, y + hw)


@dataclass(frozen=True)
class Scenario:
    """A world snapshot. Value-like: stepping returns a new Scenario."""

    ego: VehicleState
    obstacles: tuple[Obstacle, ...]
    seed: int
    step: int = 0


@dataclass(frozen=True)
class StepOutcome:
    next: Scenario
    sensor_readings: np.ndarray
    terminal: Terminal


def step_vehicle(state: VehicleState, action: SteerAction, cfg: WorldConfig) -> VehicleState:
    """Advance the ego one step under the single-track kinematic model.

    Position is updated with the pre-steer heading; the heading update uses
    tan(steering angle) scaled by speed over wheelbase.
    """
    action = SteerAction(action)
    x = state.x + state.v * math.cos(state.theta) * cfg.dt
    y = state.y + state.v * math.sin(state.theta) * cfg.dt
    theta = state.theta + (state.v / cfg.wheelbase) * math.tan(action.delta) * cfg.dt
    return VehicleState(x, y, theta, state.v)


def spawn_scenario(seed: int, cfg: WorldConfig) -> Scenario:
    """Seeded scenario generator.

    The ego starts at x=0 in the middle-lane center heading straight; 0..2
    obstacles are placed in distinct lanes at longitudinal offsets in
    [spawn_min_x, spawn_max_x].
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(0, cfg.max_obstacles + 1))
    lanes = rng.choice(cfg.num_lanes, size=n, replace=False)
    xs = rng.uniform(cfg.spawn_min_x, cfg.spawn_max_x, size=n)
    obstacles = tuple(
        Obstacle(float(x), int(lane), cfg.obstacle_speed) for x, lane in zip(xs, lanes)
    )
    ego = VehicleState(0.0, cfg.lane_center(cfg.num_lanes // 2), 0.0, cfg.ego_speed)
    return Scenario(ego=ego, obstacles=obstacles, seed=int(seed), step=0)


def _ray_aabb(ox, oy, dx, dy, xmin, xmax, ymin, ymax):
    """Slab-method ray/axis-aligned-rectangle intersection.

    Returns the entry distance along the ray (0 if the origin is inside), or
    None when the ray misses.
    """
    tmin, tmax = 0.0, math.inf
    for o, d, lo, hi in ((ox, dx, xmin, xmax), (oy, dy, ymin, ymax)):
        if abs(d) < 1e-15:
            if o < lo or o > hi:
                return None
        else:
            t1 = (lo - o) / d
            t2 = (hi - o) / d
            if t1 > t2:
                t1, t2 = t2, t1
            tmin = max(tmin, t1)
            tmax = min(tmax, t2)
            if tmin > tmax:
                return None
    return tmin


def _angle_within(angle: float, center: float, half_width: float) -> bool:
    return abs(math.remainder(angle - center, TWO_PI)) <= half_width + 1e-12


def _sector_aabb_distance(ox, oy, center, half_width, rect):
    """Distance from the origin to the nearest rectangle point whose bearing
    lies within the sector, or None when the sector misses the rectangle.

    The minimizer of the (convex) distance over rect-intersect-sector is
    either the rectangle's globally nearest point (when its bearing is inside
    the sector), a corner inside the sector, or the entry point of a sector
    boundary ray.
    """
    xmin, xmax, ymin, ymax = rect
    nx = min(max(ox, xmin), xmax)
    ny = min(max(oy, ymin), ymax)
    if nx == ox and ny == oy:
        return 0.0
    best = None
    candidates = [(nx, ny), (xmin, ymin), (xmin, ymax), (xmax, ymin), (xmax, ymax)]
    for px, py in candidates:
        if _angle_within(math.atan2(py - oy, px - ox), center, half_width):
            d = math.hypot(px - ox, py - oy)
            if best is None or d < best:
                best = d
    for boundary in (center - half_width, center + half_width):
        t = _ray_aabb(ox, oy, math.cos(boundary), math.sin(boundary), *rect)
        if t is not None and (best is None or t < best):
            best = t
    return best


def cast_sensor(scenario: Scenario, sensor_index: int, cfg: WorldConfig) -> float:
    """Range reading of one sensor.

    Obstacle cars are detected within the sensor's 15-degree sector (the
    nearest car point in the sector); the walls are measured along the
    sensor's center ray. The reading is clamped to sensor_range and equals
    sensor_range exactly when nothing is sensed.
    """
    if not 0 <= sensor_index < cfg.num_sensors:
        raise ValueError(f"sensor index out of range: {sensor_index}")
    ego = scenario.ego
    angle = ego.theta + SENSOR_OFFSETS[sensor_index]
    dy = math.sin(angle)
    best = cfg.sensor_range
    if abs(dy) > 1e-15:
        for wall_y in (0.0, cfg.road_width):
            t = (wall_y - ego.y) / dy
            if 0.0 <= t < best:
                best = t
    for ob in scenario.obstacles:
        d = _sector_aabb_distance(ego.x, ego.y, angle, SENSOR_HALF_WIDTH, ob.rect(cfg))
        if d is not None and d < best:
            best = d
    return best


def sense_all(scenario: Scenario, cfg: WorldConfig) -> np.ndarray:
    """All 13 sensor readings as a float array."""
    return np.array(
        [cast_sensor(scenario, k, cfg) for k in range(cfg.num_sensors)], dtype=float
    )


def ego_corners(ego: VehicleState, cfg: WorldConfig) -> list[tuple[float, float]]:
    """Corners of the oriented ego rectangle (counter-clockwise)."""
    hl = cfg.vehicle_length / 2.0
    hw = cfg.vehicle_width / 2.0
    c = math.cos(ego.theta)
    s = math.sin(ego.theta)
    return [
        (ego.x + fx * c - fy * s, ego.y + fx * s + fy * c)
        for fx, fy in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))
    ]


def _rect_corners(rect) -> list[tuple[float, float]]:
    xmin, xmax, ymin, ymax = rect
    return [(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)]


def polygons_overlap(a, b) -> bool:
    """Separating-axis test for two convex polygons. Touching counts as overlap."""
    for poly, other in ((a, b), (b, a)):
        n = len(poly)
        for i in range(n):
            x1, y1 = poly[i]
            x2, y2 = poly[(i + 1) % n]
            ax, ay = y2 - y1, x1 - x2
            pa = [px * ax + py * ay for px, py in poly]
            pb = [px * ax + py * ay for px, py in other]
            if max(pa) < min(pb) or max(pb) < min(pa):
                return False
    return True


def check_collision(scenario: Scenario, cfg: WorldConfig) -> Terminal:
    """Collision flag for the current snapshot. Boundary contact collides."""
    corners = ego_corners(scenario.ego, cfg)
    ys = [p[1] for p in corners]
    if min(ys) <= 0.0 or max(ys) >= cfg.road_width:
        return Terminal.COLLISION_WALL
    for ob in scenario.obstacles:
        if polygons_overlap(corners, _rect_corners(ob.rect(cfg))):
            return Terminal.COLLISION_CAR
    return Terminal.NONE


def terminal_state(scenario: Scenario, cfg: WorldConfig) -> Terminal:
    """Termination flag, checked in order: collision, end of road, horizon."""
    collision = check_collision(scenario, cfg)
    if collision is not Terminal.NONE:
        return collision
    if scenario.ego.x >= cfg.env_length:
        return Terminal.END_OF_ROAD
    if scenario.step >= cfg.horizon:
        return Terminal.HORIZON
    return Terminal.NONE


def step_world(scenario: Scenario, action: SteerAction, cfg: WorldConfig) -> StepOutcome:
    """Advance the whole world one step and re-sense.

    Raises ValueError when called on an already-terminal scenario.
    """
    if terminal_state(scenario, cfg) is not Terminal.NONE:
        raise ValueError("cannot step a terminal scenario")
    ego = step_vehicle(scenario.ego, action, cfg)
    obstacles = tuple(
        replace(ob, x=ob.x + ob.speed * cfg.dt) for ob in scenario.obstacles
    )
    nxt = Scenario(ego=ego, obstacles=obstacles, seed=scenario.seed, step=scenario.step + 1)
    readings = sense_all(nxt, cfg)
    return StepOutcome(next=nxt, sensor_readings=readings, terminal=terminal_state(nxt, cfg))


def mirror_scenario(scenario: Scenario, cfg: WorldConfig) -> Scenario:
    """Reflect a scenario across the road centerline (y -> road_width - y)."""
    ego = scenario.ego
    mirrored_ego = VehicleState(ego.x, cfg.road_width - ego.y, -ego.theta, ego.v)
    obstacles = tuple(
        replace(ob, lane=cfg.num_lanes - 1 - ob.lane) for ob in scenario.obstacles
    )
    return Scenario(ego=mirrored_ego, obstacles=obstacles, seed=scenario.seed, step=scenario.step)
