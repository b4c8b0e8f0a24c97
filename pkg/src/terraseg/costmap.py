"""Traversability costmaps and least-cost path planning over class masks.

Class indices map through the schema's safety tiers to cell costs (Safe and
Caution are configurable, Obstacle cells are impassable). Planning is A* on
the 8-connected grid with step cost = destination cell cost, scaled by sqrt(2)
for diagonal moves; the Chebyshev-distance heuristic times the cheapest cell
cost keeps it admissible, so returned costs are optimal.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import (
    GoalBlocked,
    IndexOutOfRange,
    NoPath,
    SingularHomography,
    StartBlocked,
    ValidationFailure,
)
from .schema import ClassSchema, Tier

BLOCKED = math.inf
BLOCKED_PNG_VALUE = 65535

TIER_CODES = {Tier.SAFE: 0, Tier.CAUTION: 1, Tier.OBSTACLE: 2}
TIER_NAMES = {0: Tier.SAFE.value, 1: Tier.CAUTION.value, 2: Tier.OBSTACLE.value}

_SQRT2 = math.sqrt(2.0)
_NEIGHBOURS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass
class Costmap:
    cell_costs: np.ndarray  # (H, W) float64; BLOCKED (inf) marks impassable cells
    tiers: np.ndarray       # (H, W) uint8 tier codes, see TIER_CODES
    safe_cost: float = 1.0
    caution_cost: float = 10.0

    def __post_init__(self) -> None:
        self.cell_costs = np.asarray(self.cell_costs, dtype=np.float64)
        self.tiers = np.asarray(self.tiers, dtype=np.uint8)
        if self.cell_costs.shape != self.tiers.shape or self.cell_costs.ndim != 2:
            raise ValidationFailure(
                f"cost grid {self.cell_costs.shape} and tier grid "
                f"{self.tiers.shape} must be equal 2-D shapes")
        blocked = ~np.isfinite(self.cell_costs)
        if not (blocked == (self.tiers == TIER_CODES[Tier.OBSTACLE])).all():
            raise ValidationFailure("Blocked cells and Obstacle tier must coincide")

    @property
    def height(self) -> int:
        return self.cell_costs.shape[0]

    @property
    def width(self) -> int:
        return self.cell_costs.shape[1]

    def blocked_mask(self) -> np.ndarray:
        return ~np.isfinite(self.cell_costs)


@dataclass
class PathPlan:
    waypoints: list[tuple[int, int]]
    total_cost: float
    blocked_cells_adjacent: int

    def to_json_obj(self) -> dict:
        return {
            "waypoints": [[r, c] for r, c in self.waypoints],
            "total_cost": self.total_cost,
            "blocked_cells_adjacent": self.blocked_cells_adjacent,
        }


def to_costmap(mask: np.ndarray, schema: ClassSchema, safe_cost: float = 1.0,
               caution_cost: float = 10.0) -> Costmap:
    """Look every pixel's tier up in the schema and assign its cell cost."""
    if not (0 < safe_cost < caution_cost):
        raise ValidationFailure(
            f"need 0 < safe_cost < caution_cost, got {safe_cost} and {caution_cost}")
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValidationFailure(f"mask must be 2-D, got shape {mask.shape}")
    if mask.size and int(mask.max()) >= schema.num_classes:
        raise IndexOutOfRange(
            f"mask index {int(mask.max())} >= {schema.num_classes} classes")
    tier_lut = np.array([TIER_CODES[t] for t in schema.tiers], dtype=np.uint8)
    cost_lut = np.array([safe_cost, caution_cost, BLOCKED])
    tiers = tier_lut[mask]
    return Costmap(cost_lut[tiers], tiers, safe_cost, caution_cost)


def project_ground(cmap: Costmap, homography: np.ndarray,
                   out_size: tuple[int, int]) -> Costmap:
    """Inverse-warp the costmap through a 3x3 homography ((x, y, 1) order).

    Output cells sample the source nearest-neighbour; cells that map outside
    the source are Blocked.
    """
    hmat = np.asarray(homography, dtype=np.float64)
    if hmat.shape != (3, 3):
        raise ValidationFailure(f"homography must be 3x3, got {hmat.shape}")
    det = np.linalg.det(hmat)
    if abs(det) <= 1e-12:
        raise SingularHomography(f"homography determinant {det:g} too close to zero")
    inv = np.linalg.inv(hmat)
    out_h, out_w = out_size
    if out_h < 1 or out_w < 1:
        raise ValidationFailure(f"out_size must be positive, got {out_size}")
    cols, rows = np.meshgrid(np.arange(out_w), np.arange(out_h))
    ones = np.ones_like(cols, dtype=np.float64)
    src = inv @ np.stack([cols.ravel(), rows.ravel(), ones.ravel()])
    with np.errstate(divide="ignore", invalid="ignore"):
        xs = src[0] / src[2]
        ys = src[1] / src[2]
    finite = np.isfinite(xs) & np.isfinite(ys)
    xi = np.full(xs.shape, -1, dtype=np.int64)
    yi = np.full(ys.shape, -1, dtype=np.int64)
    xi[finite] = np.floor(xs[finite] + 0.5).astype(np.int64)
    yi[finite] = np.floor(ys[finite] + 0.5).astype(np.int64)
    inb = (xi >= 0) & (xi < cmap.width) & (yi >= 0) & (yi < cmap.height)

    costs = np.full(out_h * out_w, BLOCKED)
    tiers = np.full(out_h * out_w, TIER_CODES[Tier.OBSTACLE], dtype=np.uint8)
    costs[inb] = cmap.cell_costs[yi[inb], xi[inb]]
    tiers[inb] = cmap.tiers[yi[inb], xi[inb]]
    return Costmap(costs.reshape(out_h, out_w), tiers.reshape(out_h, out_w),
                   cmap.safe_cost, cmap.caution_cost)


def _check_cell(cmap: Costmap, cell: tuple[int, int], what: str) -> tuple[int, int]:
    r, c = int(cell[0]), int(cell[1])
    if not (0 <= r < cmap.height and 0 <= c < cmap.width):
        raise ValidationFailure(f"{what} ({r}, {c}) outside the {cmap.height}x"
                                f"{cmap.width} map")
    return r, c


def _astar(costs: np.ndarray, start: tuple[int, int],
           goal: tuple[int, int]) -> tuple[list[tuple[int, int]], float]:
    """Optimal 8-connected path; ties in the open set break by (row, col)."""
    h, w = costs.shape
    finite = costs[np.isfinite(costs)]
    min_cost = float(finite.min()) if finite.size else 1.0

    def heuristic(r: int, c: int) -> float:
        return max(abs(r - goal[0]), abs(c - goal[1])) * min_cost

    best = np.full((h, w), math.inf)
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    best[start] = 0.0
    open_set: list[tuple[float, int, int, float]] = []
    heapq.heappush(open_set, (heuristic(*start), start[0], start[1], 0.0))
    while open_set:
        _, r, c, g = heapq.heappop(open_set)
        if g > best[r, c]:
            continue
        if (r, c) == goal:
            path = [(r, c)]
            while path[-1] != start:
                path.append(parent[path[-1]])
            path.reverse()
            return path, g
        for dr, dc in _NEIGHBOURS:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h and 0 <= nc < w):
                continue
            step = costs[nr, nc]
            if not math.isfinite(step):
                continue
            ng = g + step * (_SQRT2 if dr and dc else 1.0)
            if ng < best[nr, nc]:
                best[nr, nc] = ng
                parent[(nr, nc)] = (r, c)
                heapq.heappush(open_set, (ng + heuristic(nr, nc), nr, nc, ng))
    raise NoPath(f"no route from {start} to {goal}")


def _adjacent_blocked(blocked: np.ndarray, waypoints: list[tuple[int, int]]) -> int:
    h, w = blocked.shape
    seen: set[tuple[int, int]] = set()
    for r, c in waypoints:
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                nr, nc = r + dr, c + dc
                if 0 <= nr < h and 0 <= nc < w and blocked[nr, nc]:
                    seen.add((nr, nc))
    return len(seen)


def plan_path(cmap: Costmap, start: tuple[int, int], goal: tuple[int, int]) -> PathPlan:
    """Least-cost 8-connected path between two non-blocked cells."""
    start = _check_cell(cmap, start, "start")
    goal = _check_cell(cmap, goal, "goal")
    if not math.isfinite(cmap.cell_costs[start]):
        raise StartBlocked(f"start cell {start} is blocked")
    if not math.isfinite(cmap.cell_costs[goal]):
        raise GoalBlocked(f"goal cell {goal} is blocked")
    waypoints, total = _astar(cmap.cell_costs, start, goal)
    return PathPlan(waypoints, total, _adjacent_blocked(cmap.blocked_mask(), waypoints))


def suggest_waypoints(plan: PathPlan, cmap: Costmap, clearance: int) -> PathPlan:
    """Replan so no waypoint comes within ``clearance`` cells of an obstacle.

    Obstacles are inflated by the Chebyshev radius and the inflated footprint
    is excluded from the search; adjacency in the returned plan is still
    counted against the original obstacles.
    """
    if clearance < 0:
        raise ValidationFailure(f"clearance must be >= 0, got {clearance}")
    start, goal = plan.waypoints[0], plan.waypoints[-1]
    if clearance == 0:
        return plan_path(cmap, start, goal)
    size = 2 * clearance + 1
    inflated = ndimage.maximum_filter(cmap.blocked_mask().astype(np.uint8),
                                      size=size, mode="constant", cval=0) > 0
    if inflated[start] or inflated[goal]:
        raise NoPath(f"clearance {clearance} swallows the start or goal cell")
    costs = cmap.cell_costs.copy()
    costs[inflated] = BLOCKED
    waypoints, total = _astar(costs, start, goal)
    return PathPlan(waypoints, total, _adjacent_blocked(cmap.blocked_mask(), waypoints))


# -- serialisation ------------------------------------------------------------

def costmap_to_png16(cmap: Costmap) -> tuple[bytes, dict]:
    """16-bit grayscale PNG (costs rounded; Blocked = 65535) plus JSON sidecar.

    Rounding makes the PNG lossy for non-integer costs; the sidecar records
    the exact tier costs and is authoritative on decode.
    """
    from .tensorio import encode_gray16

    values = np.where(
        cmap.blocked_mask(),
        float(BLOCKED_PNG_VALUE),
        np.clip(np.floor(cmap.cell_costs + 0.5), 1, BLOCKED_PNG_VALUE - 1),
    ).astype(np.uint16)
    sidecar = {
        "safe_cost": cmap.safe_cost,
        "caution_cost": cmap.caution_cost,
        "blocked_sentinel": BLOCKED_PNG_VALUE,
        "tier_legend": {str(code): name for code, name in TIER_NAMES.items()},
        "homography": None,
    }
    return encode_gray16(values), sidecar


def costmap_from_png16(png: bytes, sidecar: dict) -> Costmap:
    from .tensorio import decode_gray16

    values = decode_gray16(png)
    safe = float(sidecar.get("safe_cost", 1.0))
    caution = float(sidecar.get("caution_cost", 10.0))
    sentinel = int(sidecar.get("blocked_sentinel", BLOCKED_PNG_VALUE))
    blocked = values == sentinel
    costs = np.where(blocked, BLOCKED, values.astype(np.float64))
    # tier by nearest configured cost; exact matches dominate
    caution_like = ~blocked & (np.abs(values - caution) <= np.abs(values - safe))
    tiers = np.zeros(values.shape, dtype=np.uint8)
    tiers[caution_like] = TIER_CODES[Tier.CAUTION]
    tiers[blocked] = TIER_CODES[Tier.OBSTACLE]
    return Costmap(costs, tiers, safe, caution)
