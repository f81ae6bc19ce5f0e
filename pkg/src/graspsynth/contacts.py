"""Paired hand/object contact points shared by the stepper and the refiner."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hand import LinkContact
from .mesh import SurfacePoint


@dataclass
class ContactSet:
    """Per contact i: object point p^o_i, hand point p^h_i and scaled dual lambda_i.

    ``hand`` holds the link-frame description of p^h; ``hand_points`` and
    ``hand_normals`` cache its world position and inward normal.
    """

    object_points: list  # SurfacePoint per contact
    hand: list  # LinkContact per contact
    hand_points: np.ndarray
    hand_normals: np.ndarray
    duals: np.ndarray = field(default=None)

    def __post_init__(self):
        self.hand_points = np.asarray(self.hand_points, dtype=float).reshape(-1, 3)
        self.hand_normals = np.asarray(self.hand_normals, dtype=float).reshape(-1, 3)
        if self.duals is None:
            self.duals = np.zeros_like(self.hand_points)
        m = len(self.hand)
        if not (len(self.object_points) == m == len(self.hand_points) == len(self.duals)):
            raise ValueError("contact arrays disagree in length")

    def __len__(self):
        return len(self.hand)

    @property
    def links(self):
        return [c.link for c in self.hand]

    @property
    def po(self):
        return np.array([p.position for p in self.object_points]).reshape(-1, 3)

    @property
    def targets(self):
        """Hand targets p^o - lambda."""
        return self.po - self.duals

    @property
    def gaps(self):
        """p^h - p^o per contact."""
        return self.hand_points - self.po

    def max_gap(self) -> float:
        return float(np.max(np.linalg.norm(self.gaps, axis=1)))

    def copy(self) -> "ContactSet":
        return ContactSet(
            list(self.object_points), list(self.hand), self.hand_points.copy(), self.hand_normals.copy(), self.duals.copy()
        )

    def with_hand(self, hand, points, normals) -> "ContactSet":
        return ContactSet(list(self.object_points), list(hand), points, normals, self.duals.copy())

    def with_object(self, object_points) -> "ContactSet":
        return ContactSet(list(object_points), list(self.hand), self.hand_points.copy(), self.hand_normals.copy(), self.duals.copy())


__all__ = ["ContactSet", "LinkContact", "SurfacePoint"]
