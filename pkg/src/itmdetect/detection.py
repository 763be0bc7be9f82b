"""Grounded object detections: a caption phrase tied to an image region.

Lives outside the providers package because manifests store detections too.
"""

from __future__ import annotations

from dataclasses import dataclass


def check_box(box: tuple[float, float, float, float], what: str = "box") -> tuple[float, float, float, float]:
    """Validate a normalized (x0, y0, x1, y1) box and return it as floats."""
    if len(box) != 4:
        raise ValueError(f"{what} must have four coordinates")
    x0, y0, x1, y1 = (float(v) for v in box)
    if not all(0.0 <= v <= 1.0 for v in (x0, y0, x1, y1)):
        raise ValueError(f"{what} coordinates must lie in [0, 1]: {box}")
    if not (x0 < x1 and y0 < y1):
        raise ValueError(f"{what} must satisfy x0 < x1 and y0 < y1: {box}")
    return (x0, y0, x1, y1)


@dataclass(frozen=True)
class ObjectDetection:
    """A caption phrase grounded to an image region."""

    phrase: str
    box: tuple[float, float, float, float]
    confidence: float

    def __post_init__(self):
        if not self.phrase:
            raise ValueError("detection phrase must be nonempty")
        object.__setattr__(self, "box", check_box(self.box, "detection box"))
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1]: {self.confidence}")
