"""Analytic forward model of the simulated 3-DoF planar arm.

Joint angles are relative: each is measured against the previous link and
accumulated along the chain, so theta = (0, 0, 0) is a straight arm pointing
along +x from the shoulder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ArmConfig:
    """Shoulder anchor and link lengths of the planar arm."""

    shoulder: tuple[float, float] = (-6.0, 6.0)
    lengths: tuple[float, float, float] = (6.0, 4.0, 2.0)

    def __post_init__(self):
        if any(l <= 0 for l in self.lengths):
            raise ValueError(f"link lengths must be positive, got {self.lengths}")

    @property
    def reach(self) -> float:
        return float(sum(self.lengths))


def forward_kinematics(cfg: ArmConfig, theta: np.ndarray) -> np.ndarray:
    """End-effector position for joint angles theta (radians)."""
    phi = np.cumsum(theta)
    lengths = np.asarray(cfg.lengths)
    x = cfg.shoulder[0] + np.sum(lengths * np.cos(phi))
    y = cfg.shoulder[1] + np.sum(lengths * np.sin(phi))
    return np.array([x, y])


def jacobian(cfg: ArmConfig, theta: np.ndarray) -> np.ndarray:
    """2x3 Jacobian of the end-effector position w.r.t. joint angles.

    Column j sums the sensitivities of every link at or beyond joint j:
    d(position)/d(theta_j) = sum_{k>=j} lengths[k] * (-sin phi_k, cos phi_k).
    """
    phi = np.cumsum(theta)
    lengths = np.asarray(cfg.lengths)
    J = np.zeros((2, len(theta)))
    for j in range(len(theta)):
        J[0, j] = -np.sum(lengths[j:] * np.sin(phi[j:]))
        J[1, j] = np.sum(lengths[j:] * np.cos(phi[j:]))
    return J


def joint_positions(cfg: ArmConfig, theta: np.ndarray) -> np.ndarray:
    """Positions of shoulder, elbow, wrist and end-effector (4x2 array)."""
    phi = np.cumsum(theta)
    lengths = np.asarray(cfg.lengths)
    pts = np.zeros((len(theta) + 1, 2))
    pts[0] = cfg.shoulder
    for k in range(len(theta)):
        pts[k + 1, 0] = pts[k, 0] + lengths[k] * np.cos(phi[k])
        pts[k + 1, 1] = pts[k, 1] + lengths[k] * np.sin(phi[k])
    return pts
