"""Mission scripting: a carrot that moves along straight segments between waypoints."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..config import MissionConfig

LEASH = 1.0  # m, maximum lead of the carrot over the vehicle's projection


@dataclass
class Waypoint:
    position: np.ndarray
    yaw: float
    dwell: float


def build_waypoints(cfg: MissionConfig) -> list:
    """Waypoint list for the configured mission kind (start point excluded)."""
    s = np.asarray(cfg.start, float)
    yaw = cfg.start_yaw
    if cfg.kind == "Hover":
        return []
    if cfg.kind == "LineTrack":
        return [Waypoint(s + np.array([cfg.line_length, 0.0, 0.0]), yaw, 0.0)]
    if cfg.kind == "SquareTrack":
        L = cfg.square_side
        corners = [(L, 0.0), (L, L), (0.0, L), (0.0, 0.0)]
        return [Waypoint(s + np.array([cx, cy, 0.0]), yaw, 0.0) for cx, cy in corners]
    return [Waypoint(np.array(w[0:3], float), float(w[3]), float(w[4])) for w in cfg.waypoints]


class Mission:
    """Reference generator with a progress variable along the current segment.

    The carrot advances at cruise speed while the mission is active, never
    more than ``LEASH`` metres ahead of the vehicle's projection onto the
    segment. When a segment's carrot reaches its end the mission waits for
    the vehicle to enter the completion radius, dwells, then moves on.
    """

    def __init__(self, cfg: MissionConfig):
        self.cfg = cfg
        self.start = np.asarray(cfg.start, float)
        self.waypoints = build_waypoints(cfg)
        self.index = 0
        self.seg_start = self.start.copy()
        self.progress = 0.0
        self.dwell_left = None
        self.completion_time = None
        self.yaw = cfg.start_yaw
        self.elapsed = 0.0

    @property
    def done(self) -> bool:
        return self.index >= len(self.waypoints)

    def _segment(self):
        end = self.waypoints[self.index].position
        d = end - self.seg_start
        L = float(np.linalg.norm(d))
        u = d / L if L > 1e-12 else np.zeros(3)
        return end, u, L

    def resync(self, pos):
        """Restart progress from the vehicle's projection on the current segment."""
        if self.done:
            return
        _, u, L = self._segment()
        self.progress = float(min(max(np.dot(np.asarray(pos) - self.seg_start, u), 0.0), L))

    def advance(self, t: float, dt: float, pos, truth_pos=None):
        """Move the carrot forward by one tick. ``truth_pos`` scores completion."""
        self.elapsed += dt
        if self.done or self.elapsed < self.cfg.start_delay:
            return
        end, u, L = self._segment()
        wp = self.waypoints[self.index]
        if self.progress < L:
            proj = float(np.dot(np.asarray(pos) - self.seg_start, u))
            limit = max(proj, 0.0) + LEASH
            self.progress = min(L, self.progress + self.cfg.cruise_speed * dt,
                                max(limit, self.progress))
            self.yaw = wp.yaw
            return
        check = truth_pos if truth_pos is not None else pos
        if np.linalg.norm(np.asarray(check) - end) <= self.cfg.completion_radius:
            if self.dwell_left is None:
                self.dwell_left = wp.dwell
            self.dwell_left -= dt
            if self.dwell_left <= 1e-12:
                self.seg_start = end.copy()
                self.index += 1
                self.progress = 0.0
                self.dwell_left = None
                if self.done:
                    self.completion_time = t
        else:
            self.dwell_left = None

    def setpoint(self):
        """Current ``(position, yaw, velocity feed-forward)``."""
        if self.done or not self.waypoints:
            pos = self.waypoints[-1].position if self.waypoints else self.start
            return pos.copy(), self.yaw, np.zeros(3)
        end, u, L = self._segment()
        moving = self.progress < L and self.elapsed >= self.cfg.start_delay
        v_ff = u * self.cfg.cruise_speed if moving else np.zeros(3)
        return self.seg_start + u * self.progress, self.yaw, v_ff

    def reference_path(self) -> np.ndarray:
        """Polyline of the whole mission, start point first."""
        return np.vstack([self.start] + [w.position for w in self.waypoints])


def distance_to_path(points, path) -> np.ndarray:
    """Perpendicular (closest-point) distance of each point to a polyline."""
    points = np.atleast_2d(points)
    if len(path) == 1:
        return np.linalg.norm(points - path[0], axis=1)
    best = np.full(len(points), math.inf)
    for a, b in zip(path[:-1], path[1:]):
        d = b - a
        L2 = float(d @ d)
        if L2 == 0:
            dist = np.linalg.norm(points - a, axis=1)
        else:
            s = np.clip((points - a) @ d / L2, 0.0, 1.0)
            dist = np.linalg.norm(points - (a + s[:, None] * d), axis=1)
        best = np.minimum(best, dist)
    return best
