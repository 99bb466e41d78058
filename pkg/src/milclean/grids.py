"""Core grid-shaped domain types.

A slide is modeled as a lattice of patches: every lattice cell carries a
feature vector, a tissue flag, and (through annotation masks) a binary
label. All arrays are indexed ``[row, col]``; ``width`` counts columns and
``height`` counts rows.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

MASK_ROLES = ("ground_truth", "coarse", "refined")


@dataclass
class PatchGrid:
    """A slide as a width x height lattice of patch feature vectors.

    features has shape (height, width, feature_dim); tissue has shape
    (height, width). patch_px and overlap_frac are lattice-geometry
    metadata and do not affect computations on an already-built grid.
    """

    features: np.ndarray
    tissue: np.ndarray
    patch_px: int = 256
    overlap_frac: float = 0.0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.tissue = np.asarray(self.tissue, dtype=bool)
        if self.features.ndim != 3:
            raise ValidationError(
                f"features must be (height, width, feature_dim), got shape {self.features.shape}"
            )
        if self.tissue.shape != self.features.shape[:2]:
            raise ValidationError(
                f"tissue shape {self.tissue.shape} does not match lattice "
                f"{self.features.shape[:2]}"
            )
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("features contain non-finite values")
        if not 0.0 <= self.overlap_frac < 1.0:
            raise ValidationError(f"overlap_frac must be in [0, 1), got {self.overlap_frac}")
        if self.patch_px <= 0:
            raise ValidationError(f"patch_px must be positive, got {self.patch_px}")

    @property
    def height(self) -> int:
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[2]


@dataclass
class AnnotationMask:
    """Binary annotation over a lattice. role says what the mask claims to be."""

    cells: np.ndarray
    role: str

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=bool)
        if self.cells.ndim != 2:
            raise ValidationError(f"mask must be 2-D, got shape {self.cells.shape}")
        if self.role not in MASK_ROLES:
            raise ValidationError(f"unknown mask role {self.role!r}; expected one of {MASK_ROLES}")

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    def with_role(self, role: str) -> "AnnotationMask":
        return AnnotationMask(self.cells.copy(), role)


@dataclass
class Heatmap:
    """Per-cell risk scores in [0, 1]; absent (non-tissue) cells hold NaN."""

    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise ValidationError(f"heatmap must be 2-D, got shape {self.scores.shape}")
        present = self.present
        vals = self.scores[present]
        if vals.size and (vals.min() < 0.0 or vals.max() > 1.0):
            raise ValidationError("heatmap scores must lie in [0, 1]")

    @property
    def present(self) -> np.ndarray:
        return np.isfinite(self.scores)

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    @property
    def width(self) -> int:
        return self.scores.shape[1]


def check_same_shape(*arrays_or_grids) -> tuple:
    """Validate that all arguments share one lattice shape; return it."""
    shapes = []
    for obj in arrays_or_grids:
        if isinstance(obj, PatchGrid):
            shapes.append((obj.height, obj.width))
        elif isinstance(obj, (AnnotationMask, Heatmap)):
            shapes.append(obj.cells.shape if isinstance(obj, AnnotationMask) else obj.scores.shape)
        else:
            shapes.append(np.asarray(obj).shape)
    first = shapes[0]
    for s in shapes[1:]:
        if s != first:
            raise ValidationError(f"lattice shape mismatch: {shapes}")
    return first
