"""Black-box stage cost predictors.

The controller never sees a predictor's functional form: it submits a
trajectory segment and receives one non-negative cost per stage step (the
final state of the segment is not charged). Built-ins are synthetic fields
evaluated pointwise; all are deterministic, and counters track how much
data the controller has requested.
"""

from __future__ import annotations

import math
import threading

import numpy as np

from .costs import INFINITE_COST, barrier_transform

__all__ = [
    "Predictor",
    "ZeroPredictor",
    "GaussianBumpField",
    "RegionPenaltyField",
    "DiscBarrierField",
    "build_predictor",
]


class Predictor:
    """Base class: segment-in, per-step cost vector out, with accounting."""

    def __init__(self):
        self._lock = threading.Lock()
        self.query_count = 0
        self.sample_count = 0

    def predict_segment(self, states, inputs) -> np.ndarray:
        """Evaluate the unknown stage cost along a segment.

        ``states`` has one more row than ``inputs``; the returned vector has
        one entry per input (states[k], inputs[k]).
        """
        states = np.asarray(states, dtype=float)
        inputs = np.asarray(inputs, dtype=float)
        if states.ndim != 2 or inputs.ndim != 2:
            raise ValueError("expected 2-d state and input sequences")
        if states.shape[0] != inputs.shape[0] + 1:
            raise ValueError("need exactly one more state than inputs")
        out = self._evaluate(states[:-1], inputs)
        out = np.asarray(out, dtype=float)
        with self._lock:
            self.query_count += 1
            self.sample_count += inputs.shape[0]
        return out

    def reset_counters(self):
        with self._lock:
            self.query_count = 0
            self.sample_count = 0

    def _evaluate(self, states, inputs) -> np.ndarray:
        raise NotImplementedError


class ZeroPredictor(Predictor):
    """Predicts zero cost everywhere; the model-driven cost then dominates."""

    def _evaluate(self, states, inputs):
        return np.zeros(states.shape[0])


class GaussianBumpField(Predictor):
    """Sum of positive Gaussian bumps over the position plane.

    Each bump is (center_x, center_y, amplitude, length_scale) contributing
    amplitude * exp(-d^2 / (2 length_scale^2)). An optional exponential
    baseline ``amplitude * exp(-(direction . pos) / scale)`` can be added.
    Inputs are accepted but ignored; the field is positional.
    """

    def __init__(self, bumps, baseline=None, position_indices=(0, 1)):
        super().__init__()
        self.bumps = [tuple(float(v) for v in b) for b in bumps]
        for cx, cy, amp, ls in self.bumps:
            if amp < 0:
                raise ValueError("bump amplitudes must be non-negative")
            if ls <= 0:
                raise ValueError("length scales must be positive")
        self.baseline = None
        if baseline is not None:
            self.baseline = {
                "amplitude": float(baseline["amplitude"]),
                "direction": [float(v) for v in baseline["direction"]],
                "scale": float(baseline["scale"]),
            }
            if self.baseline["amplitude"] < 0:
                raise ValueError("baseline amplitude must be non-negative")
        self.position_indices = tuple(position_indices)

    def value_at(self, pos):
        """Field value at planar positions of shape (..., 2)."""
        pos = np.asarray(pos, dtype=float)
        px, py = pos[..., 0], pos[..., 1]
        total = np.zeros_like(px)
        for cx, cy, amp, ls in self.bumps:
            d2 = (px - cx) ** 2 + (py - cy) ** 2
            total = total + amp * np.exp(-d2 / (2.0 * ls * ls))
        if self.baseline is not None:
            wx, wy = self.baseline["direction"]
            total = total + self.baseline["amplitude"] * np.exp(
                -(wx * px + wy * py) / self.baseline["scale"]
            )
        return total

    def _evaluate(self, states, inputs):
        i, j = self.position_indices
        return self.value_at(np.stack([states[:, i], states[:, j]], axis=-1))


def _point_in_polygon(px, py, vertices):
    # even-odd rule ray casting
    inside = False
    n = len(vertices)
    for k in range(n):
        x1, y1 = vertices[k]
        x2, y2 = vertices[(k + 1) % n]
        if (y1 > py) != (y2 > py):
            x_cross = x1 + (py - y1) / (y2 - y1) * (x2 - x1)
            if px < x_cross:
                inside = not inside
    return inside


class RegionPenaltyField(Predictor):
    """Flat penalties over discs or polygons; zero outside every region.

    Regions are dicts: {"disc": {"center": [x, y], "radius": r}} or
    {"polygon": {"vertices": [[x, y], ...]}}, each with a "penalty" that may
    be the infinite sentinel. Overlapping penalties add.
    """

    def __init__(self, regions, position_indices=(0, 1)):
        super().__init__()
        self.regions = []
        for r in regions:
            penalty = float(r["penalty"])
            if penalty < 0:
                raise ValueError("penalties must be non-negative")
            if "disc" in r:
                spec = {
                    "disc": {
                        "center": [float(v) for v in r["disc"]["center"]],
                        "radius": float(r["disc"]["radius"]),
                    }
                }
            elif "polygon" in r:
                spec = {
                    "polygon": {
                        "vertices": [
                            [float(a), float(b)]
                            for a, b in r["polygon"]["vertices"]
                        ]
                    }
                }
            else:
                raise ValueError("region must define a disc or a polygon")
            spec["penalty"] = penalty
            self.regions.append(spec)
        self.position_indices = tuple(position_indices)

    def value_at(self, pos):
        pos = np.atleast_2d(np.asarray(pos, dtype=float))
        out = np.zeros(pos.shape[0])
        for r in self.regions:
            if "disc" in r:
                c = np.asarray(r["disc"]["center"])
                hit = (
                    np.linalg.norm(pos - c, axis=-1) <= r["disc"]["radius"]
                )
            else:
                verts = r["polygon"]["vertices"]
                hit = np.array(
                    [_point_in_polygon(p[0], p[1], verts) for p in pos]
                )
            out = out + np.where(hit, r["penalty"], 0.0)
        return out

    def _evaluate(self, states, inputs):
        i, j = self.position_indices
        return self.value_at(np.stack([states[:, i], states[:, j]], axis=-1))


class DiscBarrierField(Predictor):
    """Forbidden discs encoded through the barrier transform.

    The constraint value at a point is max over discs of (radius - distance
    to center): negative outside every disc, non-negative inside one. The
    returned cost is the barrier transform of that value, so it grows near
    any boundary and is the infinite sentinel inside.
    """

    def __init__(self, discs, position_indices=(0, 1)):
        super().__init__()
        self.discs = [
            ([float(v) for v in d["center"]], float(d["radius"]))
            for d in discs
        ]
        if not self.discs:
            raise ValueError("need at least one disc")
        for _, radius in self.discs:
            if radius <= 0:
                raise ValueError("disc radii must be positive")
        self.position_indices = tuple(position_indices)

    def value_at(self, pos):
        pos = np.atleast_2d(np.asarray(pos, dtype=float))
        y = np.full(pos.shape[0], -math.inf)
        for center, radius in self.discs:
            y = np.maximum(
                y, radius - np.linalg.norm(pos - np.asarray(center), axis=-1)
            )
        return np.array([barrier_transform(v) for v in y])

    def _evaluate(self, states, inputs):
        i, j = self.position_indices
        return self.value_at(np.stack([states[:, i], states[:, j]], axis=-1))


_PREDICTORS = {
    "zero": lambda spec: ZeroPredictor(),
    "gaussian_bumps": lambda spec: GaussianBumpField(
        spec["bumps"],
        baseline=spec.get("baseline"),
        position_indices=tuple(spec.get("position_indices", (0, 1))),
    ),
    "region_penalty": lambda spec: RegionPenaltyField(
        spec["regions"],
        position_indices=tuple(spec.get("position_indices", (0, 1))),
    ),
    "disc_barrier": lambda spec: DiscBarrierField(
        spec["discs"],
        position_indices=tuple(spec.get("position_indices", (0, 1))),
    ),
}


def build_predictor(spec: dict) -> Predictor:
    """Instantiate a predictor from its config description."""
    kind = spec.get("type")
    if kind not in _PREDICTORS:
        raise ValueError(f"unknown predictor type: {kind!r}")
    return _PREDICTORS[kind](spec)
