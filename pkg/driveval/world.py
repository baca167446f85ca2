import enum
import json
import math
from collections import namedtuple
from dataclasses import dataclass

import networkx as nx
import numpy as np

from ._defaults import (
    default_block_length_a,
    default_block_length_b,
    default_command_window,
    default_connector_radius,
    default_curvature_lookaheads,
    default_drivable_margin,
    default_intersection_clip,
    default_lane_width,
    default_off_route_distance,
    default_path_spacing,
    default_polyline_spacing,
    default_runout_length,
)
from .errors import ArtifactIoError, FormatVersionMismatchError, OffRouteError, SameNodeError, UnreachableError
from .vehicle import Pose, wrap_angle

town_format_version = "driveval-town/1"

# rows, columns, block length (m), mirrored
_town_layouts = {
    "A": (4, 4, default_block_length_a, False),
    "B": (3, 5, default_block_length_b, True),
}


class Command(enum.Enum):
    CONTINUE = "Continue"
    STRAIGHT = "Straight"
    LEFT = "Left"
    RIGHT = "Right"

    @property
    def index(self):
        return _command_index[self]

    def one_hot(self):
        v = np.zeros(len(_commands))
        v[self.index] = 1.0
        return v

    @classmethod
    def from_index(cls, index):
        return _commands[index]


_commands = tuple(Command)
_command_index = {c: n for n, c in enumerate(_commands)}


@dataclass(frozen=True, eq=False)
class Segment:
    id: int
    start: int
    end: int
    width: float
    polyline: np.ndarray
    opposing: int
    length: float

    @property
    def direction(self):
        d = self.polyline[-1] - self.polyline[0]
        return d / np.hypot(d[0], d[1])


def _polyline_length(polyline):
    d = np.diff(polyline, axis=0)
    return float(np.sum(np.hypot(d[:, 0], d[:, 1])))


def _make_segment(seg_id, start, end, opposing, positions, width, spacing):
    p0, p1 = np.asarray(positions[start], dtype=float), np.asarray(positions[end], dtype=float)
    d = (p1 - p0) / np.hypot(*(p1 - p0))
    right = np.array([d[1], -d[0]])
    a, b = p0 + right * width / 2, p1 + right * width / 2
    n_points = int(math.ceil(np.hypot(*(b - a)) / spacing)) + 1
    polyline = a + np.linspace(0.0, 1.0, n_points)[:, None] * (b - a)
    return Segment(
        id=seg_id,
        start=start,
        end=end,
        width=width,
        polyline=polyline,
        opposing=opposing,
        length=_polyline_length(polyline),
    )


class TownMap:
    """
    Directed lane graph of a town. Nodes are intersections, edges are lanes (segments).
    Every road corridor carries two lanes with opposite directions and right-hand traffic.
    The map is not modified after construction.
    """

    def __init__(
        self,
        *,
        town_id,
        seed,
        intersections,
        segments,
        block_length,
        lane_width=default_lane_width,
        connector_radius=default_connector_radius,
    ):
        self.town_id = town_id
        self.seed = seed
        self.block_length = float(block_length)
        self.lane_width = float(lane_width)
        self.connector_radius = float(connector_radius)
        self.intersections = {int(k): (float(v[0]), float(v[1])) for k, v in intersections.items()}
        self.segments = {s.id: s for s in segments}

        self.graph = nx.DiGraph()
        self.graph.add_nodes_from(sorted(self.intersections))
        for seg_id in sorted(self.segments):
            seg = self.segments[seg_id]
            self.graph.add_edge(seg.start, seg.end, segment=seg.id, length=seg.length)

        self._node_xy = np.array([self.intersections[n] for n in sorted(self.intersections)], dtype=float)
        axes = [
            (self.intersections[s.start], self.intersections[s.end])
            for s in sorted(self.segments.values(), key=lambda s: s.id)
            if s.id < s.opposing
        ]
        self._axis_a = np.array([a for a, _ in axes], dtype=float).reshape(-1, 2)
        self._axis_ab = np.array([b for _, b in axes], dtype=float).reshape(-1, 2) - self._axis_a
        self._axis_len2 = np.maximum(np.sum(self._axis_ab**2, axis=1), 1e-12)

    @property
    def corridor_count(self):
        return len(self._axis_a)

    def node_position(self, node):
        return np.array(self.intersections[node], dtype=float)

    def segment_between(self, start, end):
        return self.segments[self.graph.edges[start, end]["segment"]]

    def off_road_distance(self, x, y, *, margin=default_drivable_margin):
        """
        Distance (m) from the point to the drivable surface, 0 for points on the surface.
        The surface consists of the corridor bands (both lanes plus ``margin``) and the
        intersection discs that hold the turn connectors.
        """
        p = np.array([x, y], dtype=float)
        t = np.clip(np.sum((p - self._axis_a) * self._axis_ab, axis=1) / self._axis_len2, 0.0, 1.0)
        q = self._axis_a + t[:, None] * self._axis_ab
        d_axis = float(np.min(np.hypot(*(p - q).T)))
        d_node = float(np.min(np.hypot(*(p - self._node_xy).T)))
        outside = min(d_axis - (self.lane_width + margin), d_node - self.connector_radius)
        return max(0.0, outside)

    def to_dict(self):
        return {
            "format": town_format_version,
            "town_id": self.town_id,
            "seed": self.seed,
            "block_length": self.block_length,
            "lane_width": self.lane_width,
            "connector_radius": self.connector_radius,
            "intersections": [{"id": n, "x": x, "y": y} for n, (x, y) in sorted(self.intersections.items())],
            "segments": [
                {
                    "id": s.id,
                    "from": s.start,
                    "to": s.end,
                    "width": s.width,
                    "polyline": s.polyline.tolist(),
                    "opposing": s.opposing,
                }
                for s in sorted(self.segments.values(), key=lambda s: s.id)
            ],
        }

    @classmethod
    def from_dict(cls, town_dict):
        version = town_dict.get("format")
        if version != town_format_version:
            raise FormatVersionMismatchError(version, town_format_version)
        segments = []
        for s in town_dict["segments"]:
            polyline = np.array(s["polyline"], dtype=float)
            segments.append(
                Segment(
                    id=int(s["id"]),
                    start=int(s["from"]),
                    end=int(s["to"]),
                    width=float(s["width"]),
                    polyline=polyline,
                    opposing=int(s["opposing"]),
                    length=_polyline_length(polyline),
                )
            )
        return cls(
            town_id=town_dict["town_id"],
            seed=town_dict["seed"],
            intersections={d["id"]: (d["x"], d["y"]) for d in town_dict["intersections"]},
            segments=segments,
            block_length=town_dict["block_length"],
            lane_width=town_dict.get("lane_width", default_lane_width),
            connector_radius=town_dict.get("connector_radius", default_connector_radius),
        )


def build_town(town_id, seed=0, *, lane_width=default_lane_width, spacing=default_polyline_spacing):
    """
    Build one of the procedural grid towns.

    Town ``A`` is a 4x4 grid with 100 m blocks. Town ``B`` is a 3x5 grid with 80 m blocks whose
    columns run in the negative x direction, which mirrors its turn geometry. The layout is fully
    determined by ``town_id``, the seed is recorded with the map.

    Parameters
    ----------
    town_id: str
        ``"A"`` or ``"B"``.
    seed: int
        Seed stored with the map.

    Returns
    -------
    TownMap
    """
    if town_id not in _town_layouts:
        raise ValueError(f"Unknown town {town_id!r}. Supported towns: {sorted(_town_layouts)}")
    rows, cols, block, mirrored = _town_layouts[town_id]
    sx = -1.0 if mirrored else 1.0

    def node_id(r, c):
        return r * cols + c

    positions = {node_id(r, c): (sx * c * block, r * block) for r in range(rows) for c in range(cols)}
    corridors = [(node_id(r, c), node_id(r, c + 1)) for r in range(rows) for c in range(cols - 1)]
    corridors += [(node_id(r, c), node_id(r + 1, c)) for r in range(rows - 1) for c in range(cols)]

    segments = []
    for k, (u, v) in enumerate(corridors):
        segments.append(_make_segment(2 * k, u, v, 2 * k + 1, positions, lane_width, spacing))
        segments.append(_make_segment(2 * k + 1, v, u, 2 * k, positions, lane_width, spacing))

    return TownMap(
        town_id=town_id,
        seed=int(seed),
        intersections=positions,
        segments=segments,
        block_length=block,
        lane_width=lane_width,
    )


def write_town(town, path):
    try:
        with open(path, "w") as f:
            json.dump(town.to_dict(), f, indent=1)
            f.write("\n")
    except OSError as ex:
        raise ArtifactIoError(f"Failed to write town file {str(path)!r}: {ex}") from ex


def read_town(path):
    try:
        with open(path) as f:
            town_dict = json.load(f)
    except (OSError, ValueError) as ex:
        raise ArtifactIoError(f"Failed to read town file {str(path)!r}: {ex}") from ex
    return TownMap.from_dict(town_dict)


PathProjection = namedtuple("PathProjection", ["s", "offset", "heading", "distance"])


class RoutePath:
    """
    Drivable centerline of a route: lane centerlines joined by circular-arc connectors,
    sampled densely and continued by a short straight run-out past the goal.
    """

    def __init__(self, points, curvature, goal_index, junction_nodes, junction_commands):
        self.points = np.asarray(points, dtype=float)
        self.curvature = np.asarray(curvature, dtype=float)
        seg = np.diff(self.points, axis=0)
        self._a = self.points[:-1]
        self._ab = seg
        self._seglen = np.hypot(seg[:, 0], seg[:, 1])
        self._len2 = np.maximum(self._seglen**2, 1e-18)
        self._heading = np.arctan2(seg[:, 1], seg[:, 0])
        self.s = np.concatenate([[0.0], np.cumsum(self._seglen)])
        self.goal_index = int(goal_index)
        self.goal_s = float(self.s[self.goal_index])

        junction_s = []
        for xy in junction_nodes:
            d = np.hypot(*(self.points[: self.goal_index + 1] - np.asarray(xy)).T)
            junction_s.append(float(self.s[int(np.argmin(d))]))
        self.junction_s = np.array(junction_s, dtype=float)
        self.junction_commands = tuple(junction_commands)

    @property
    def goal_point(self):
        return self.points[self.goal_index]

    def project(self, x, y):
        p = np.array([x, y], dtype=float)
        ap = p - self._a
        t = np.clip(np.sum(ap * self._ab, axis=1) / self._len2, 0.0, 1.0)
        q = self._a + t[:, None] * self._ab
        dq = p - q
        d2 = np.sum(dq**2, axis=1)
        i = int(np.argmin(d2))
        direction = self._ab[i] / max(self._seglen[i], 1e-12)
        offset = float(direction[0] * dq[i, 1] - direction[1] * dq[i, 0])
        s = float(self.s[i] + t[i] * self._seglen[i])
        return PathProjection(s=s, offset=offset, heading=float(self._heading[i]), distance=math.sqrt(d2[i]))

    def progress(self, x, y):
        """
        Along-path position of ``(x, y)``. Points behind the start of the path get negative
        values: the first segment is extended backwards.
        """
        s = self.project(x, y).s
        if s > 0.0:
            return s
        direction = self._ab[0] / max(self._seglen[0], 1e-12)
        return min(0.0, float(np.dot(np.array([x, y], dtype=float) - self._a[0], direction)))

    def point_at(self, s):
        return np.array([np.interp(s, self.s, self.points[:, 0]), np.interp(s, self.s, self.points[:, 1])])

    def heading_at(self, s):
        i = int(np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self._heading) - 1))
        return float(self._heading[i])

    def curvature_at(self, s):
        return float(np.interp(s, self.s, self.curvature))

    def next_junction(self, s):
        """
        Returns ``(s_junction, command)`` of the first junction ahead of ``s`` or ``None``.
        """
        n = int(np.searchsorted(self.junction_s, s, side="right"))
        if n >= len(self.junction_s):
            return None
        return float(self.junction_s[n]), self.junction_commands[n]


@dataclass(frozen=True, eq=False)
class Route:
    segments: tuple
    nodes: tuple
    length: float
    path: RoutePath

    @property
    def start(self):
        return self.nodes[0]

    @property
    def goal(self):
        return self.nodes[-1]

    @property
    def path_length(self):
        return self.path.goal_s

    def start_pose(self):
        x, y = self.path.points[0]
        return Pose(float(x), float(y), self.path.heading_at(0.0))


def _line_intersection(p, d, q, e):
    # p + a*d = q + b*e
    m = np.array([[d[0], -e[0]], [d[1], -e[1]]])
    a, _ = np.linalg.solve(m, q - p)
    return p + a * d


def _build_path(town, segments, *, spacing, radius, runout):
    points, curvature = [], []

    def append(pts, kappa):
        start = 1 if points else 0
        for pt in pts[start:]:
            points.append(pt)
            curvature.append(kappa)

    def line(a, b):
        n = max(1, int(math.ceil(np.hypot(*(b - a)) / spacing)))
        append(a + np.linspace(0.0, 1.0, n + 1)[:, None] * (b - a), 0.0)

    junction_nodes, junction_commands = [], []
    cursor = segments[0].polyline[0]
    goal_index = None
    for k, seg in enumerate(segments):
        d = seg.direction
        if k == len(segments) - 1:
            line(cursor, seg.polyline[-1])
            goal_index = len(points) - 1
            line(seg.polyline[-1], seg.polyline[-1] + runout * d)
            break

        nxt = segments[k + 1]
        e = nxt.direction
        cross = float(d[0] * e[1] - d[1] * e[0])
        dot = float(np.dot(d, e))
        junction_nodes.append(town.intersections[seg.end])
        if abs(cross) < 1e-9 and dot > 0:
            junction_commands.append(Command.STRAIGHT)
            line(cursor, seg.polyline[-1])
            cursor = seg.polyline[-1]
            continue

        theta = math.atan2(abs(cross), dot)
        if theta > math.pi - 1e-6:
            raise ValueError(f"Route reverses direction at node {seg.end!r}")
        sign = 1.0 if cross > 0 else -1.0
        junction_commands.append(Command.LEFT if sign > 0 else Command.RIGHT)

        corner = _line_intersection(seg.polyline[-1], d, nxt.polyline[0], e)
        tangent = radius * math.tan(theta / 2)
        t1, t2 = corner - tangent * d, corner + tangent * e
        line(cursor, t1)

        normal = sign * np.array([-d[1], d[0]])
        center = t1 + radius * normal
        phi0 = math.atan2(t1[1] - center[1], t1[0] - center[0])
        n = max(2, int(math.ceil(radius * theta / spacing)))
        angles = phi0 + sign * theta * np.linspace(0.0, 1.0, n + 1)
        arc = center + radius * np.column_stack([np.cos(angles), np.sin(angles)])
        append(arc, sign / radius)
        cursor = t2

    return RoutePath(points, curvature, goal_index, junction_nodes, junction_commands)


def make_route(
    town, segment_ids, *, spacing=default_path_spacing, runout=default_runout_length, radius=None
):
    """
    Build a ``Route`` from an ordered sequence of segment ids.
    """
    segments = [town.segments[i] for i in segment_ids]
    if not segments:
        raise ValueError("Route must contain at least one segment")
    for a, b in zip(segments[:-1], segments[1:]):
        if a.end != b.start:
            raise ValueError(f"Segments {a.id} and {b.id} do not share an intersection")
    radius = town.connector_radius if radius is None else radius
    path = _build_path(town, segments, spacing=spacing, radius=radius, runout=runout)
    return Route(
        segments=tuple(s.id for s in segments),
        nodes=tuple([segments[0].start] + [s.end for s in segments]),
        length=float(sum(s.length for s in segments)),
        path=path,
    )


def plan_route(town, start, goal):
    """
    Shortest route between two intersections by segment length. Among equally short
    routes, the one that takes the smallest segment id at every decision is returned.

    Raises
    ------
    SameNodeError
        ``start`` and ``goal`` are the same node.
    UnreachableError
        There is no directed path from ``start`` to ``goal``.
    """
    for node in (start, goal):
        if node not in town.graph:
            raise ValueError(f"Unknown intersection: {node!r}")
    if start == goal:
        raise SameNodeError(start)

    dist = nx.single_source_dijkstra_path_length(town.graph.reverse(copy=False), goal, weight="length")
    if start not in dist:
        raise UnreachableError(start, goal)

    segment_ids, node = [], start
    while node != goal:
        candidates = sorted(town.graph.edges[node, v]["segment"] for v in town.graph.successors(node))
        for seg_id in candidates:
            seg = town.segments[seg_id]
            if seg.end in dist and abs(seg.length + dist[seg.end] - dist[node]) <= 1e-6:
                segment_ids.append(seg_id)
                node = seg.end
                break
    return make_route(town, segment_ids)


def random_route(town, rng, *, min_length=0.0, max_length=math.inf, max_tries=1000):
    """
    Draw a route between two random intersections whose length is within
    ``[min_length, max_length]``.
    """
    nodes = sorted(town.intersections)
    for _ in range(max_tries):
        start, goal = (int(n) for n in rng.choice(nodes, size=2, replace=False))
        route = plan_route(town, start, goal)
        if min_length <= route.length <= max_length:
            return route
    raise ValueError(f"No route with length in [{min_length}, {max_length}] found after {max_tries} draws")


@dataclass(frozen=True)
class LaneFrame:
    lateral_offset: float  # m, left of the centerline is positive
    heading_error: float  # rad
    curvature_ahead: tuple  # 1/m at the route lookaheads
    dist_to_intersection: float  # m
    on_drivable: bool
    on_opposing_lane: bool
    progress: float = 0.0  # m along the route path
    route_distance: float = 0.0  # m to the route centerline
    off_road_distance: float = 0.0  # m outside the drivable surface


def lane_frame(
    town,
    route,
    pose,
    *,
    lookaheads=default_curvature_lookaheads,
    clip_distance=default_intersection_clip,
    margin=default_drivable_margin,
):
    """
    Lane-relative description of a pose: offset and heading error against the nearest point of
    the route centerline, path curvature ahead of that point, distance to the next intersection
    and drivable-surface flags.
    """
    path = route.path
    proj = path.project(pose.x, pose.y)
    curvature = tuple(path.curvature_at(proj.s + la) for la in lookaheads)

    junction = path.next_junction(proj.s)
    dist = clip_distance if junction is None else min(max(junction[0] - proj.s, 0.0), clip_distance)

    off_road = town.off_road_distance(pose.x, pose.y, margin=margin)
    on_drivable = off_road == 0.0
    return LaneFrame(
        lateral_offset=proj.offset,
        heading_error=wrap_angle(pose.yaw - proj.heading),
        curvature_ahead=curvature,
        dist_to_intersection=dist,
        on_drivable=on_drivable,
        on_opposing_lane=on_drivable and proj.offset > town.lane_width / 2,
        progress=proj.s,
        route_distance=proj.distance,
        off_road_distance=off_road,
    )


def command_at(town, route, pose, *, window=default_command_window, off_route=default_off_route_distance):
    """
    High-level command for a pose on the route: the maneuver at the next intersection when it
    is within ``window`` meters along the route, ``Command.CONTINUE`` otherwise.

    Raises
    ------
    OffRouteError
        The pose is farther than ``off_route`` meters from the route.
    """
    proj = route.path.project(pose.x, pose.y)
    if proj.distance > off_route:
        raise OffRouteError(proj.distance, off_route)
    junction = route.path.next_junction(proj.s)
    if junction is not None and junction[0] - proj.s <= window:
        return junction[1]
    return Command.CONTINUE
