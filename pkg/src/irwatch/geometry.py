"""Field-of-view arithmetic behind the binary violation formulation.

A ceiling sensor with a 60 degree view angle sees a square patch of side w
at head height. The vendor datasheet approximates w ~= 1.2 h (h being the
sensor-to-object distance); the exact value is 2 h tan(angle/2). Both modes
are exposed because they disagree slightly on whether the field-of-view
diagonal stays under the 2 m distancing rule at the tallest mounting height
— report the discrepancy, don't hide it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

APPROX_FACTOR = 1.2


@dataclass(frozen=True)
class MountSpec:
    sensor_height: float  # meters above floor
    min_head_height: float = 1.5
    view_angle: float = 60.0  # degrees

    def __post_init__(self):
        if not self.sensor_height > self.min_head_height:
            raise ValueError("sensor must be mounted above head height")
        if not 0 < self.view_angle < 180:
            raise ValueError("view_angle must be in (0, 180) degrees")

    @property
    def effective_height(self) -> float:
        return self.sensor_height - self.min_head_height


def fov_width(spec: MountSpec, mode: str = "approx") -> float:
    """Side of the square field of view at head height, meters."""
    h = spec.effective_height
    if mode == "approx":
        return APPROX_FACTOR * h
    if mode == "exact":
        return 2.0 * h * math.tan(math.radians(spec.view_angle) / 2.0)
    raise ValueError(f"mode must be 'approx' or 'exact', got {mode!r}")


def fov_diagonal(spec: MountSpec, mode: str = "approx") -> float:
    """Maximum distance between two in-frame objects."""
    return fov_width(spec, mode) * math.sqrt(2.0)


def formulation_valid(spec: MountSpec, distance_rule_m: float = 2.0, mode: str = "approx") -> bool:
    """True when every pair of people in frame is closer than the rule, i.e.
    seeing two heads implies a violation."""
    return fov_diagonal(spec, mode) <= distance_rule_m


def analyze(spec: MountSpec, distance_rule_m: float = 2.0) -> dict:
    """Both modes side by side, for reporting."""
    out: dict = {"sensor_height": spec.sensor_height, "rule_m": distance_rule_m}
    for mode in ("approx", "exact"):
        out[mode] = {
            "width_m": fov_width(spec, mode),
            "diagonal_m": fov_diagonal(spec, mode),
            "formulation_valid": formulation_valid(spec, distance_rule_m, mode),
        }
    out["modes_agree"] = out["approx"]["formulation_valid"] == out["exact"]["formulation_valid"]
    return out
