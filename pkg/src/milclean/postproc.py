"""Heatmap binarization and morphological cleanup of refined masks.

The binarization threshold is learned from the data being refined: Otsu's
criterion applied to the scores of the cells the coarse annotation calls
positive. That population straddles true and false positives, so the
between-class split lands between the two score modes. A fixed 0.5
fallback covers degenerate score distributions.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateHistogramError, ValidationError
from .grids import AnnotationMask

FALLBACK_THRESHOLD = 0.5


@dataclass
class PostprocConfig:
    bins: int = 256
    min_hole_px: int = 100
    min_object_px: int = 100

    def __post_init__(self):
        if self.bins < 2:
            raise ValidationError("bins must be >= 2")
        if self.min_hole_px < 0 or self.min_object_px < 0:
            raise ValidationError("area thresholds must be >= 0")


def otsu_threshold(values, bins=256):
    """Between-class-variance-maximizing cut of scores in [0, 1].

    Scores are histogrammed into ``bins`` equal-width bins; the returned
    threshold is the bin boundary k/bins whose split maximizes
    n_lo * n_hi * (mean_lo - mean_hi)^2, with ties going to the lowest
    boundary. Raises when fewer than two bins are occupied, since no
    split separates anything then.
    """
    vals = np.asarray(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(vals)):
        raise ValidationError("scores must be finite")
    if vals.size and (vals.min() < 0.0 or vals.max() > 1.0):
        raise ValidationError("scores must lie in [0, 1]")
    hist = np.histogram(vals, bins=bins, range=(0.0, 1.0))[0].astype(np.float64)
    if np.count_nonzero(hist) < 2:
        raise DegenerateHistogramError("scores occupy fewer than two histogram bins")
    centers = (np.arange(bins) + 0.5) / bins
    n_lo = np.cumsum(hist)[:-1]
    m_lo = np.cumsum(hist * centers)[:-1]
    total = hist.sum()
    m_total = (hist * centers).sum()
    valid = (n_lo > 0) & (n_lo < total)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu_lo = m_lo / n_lo
        mu_hi = (m_total - m_lo) / (total - n_lo)
        between = n_lo * (total - n_lo) * (mu_lo - mu_hi) ** 2
    between[~valid] = -np.inf
    k = int(np.argmax(between))  # first max = lowest boundary on ties
    return (k + 1) / bins


@dataclass
class BinarizeResult:
    mask: AnnotationMask
    v0: float
    used_fallback: bool


def binarize(heatmap, coarse, config):
    """Threshold a heatmap at the Otsu cut of its coarse-positive scores.

    Only cells annotated positive in ``coarse`` contribute to the
    threshold; the comparison (strictly above) then applies to every
    present score. Cells without a score come out negative. When the
    positive-cell scores collapse into one histogram bin the fixed 0.5
    threshold is used and flagged.
    """
    if heatmap.scores.shape != coarse.cells.shape:
        raise ValidationError("heatmap and coarse annotation shapes differ")
    present = heatmap.present
    sel = coarse.cells & present
    if not sel.any():
        raise ValidationError("coarse annotation has no positive cell with a score")
    try:
        v0 = otsu_threshold(heatmap.scores[sel], config.bins)
        used_fallback = False
    except DegenerateHistogramError:
        v0 = FALLBACK_THRESHOLD
        used_fallback = True
    cells = np.zeros(heatmap.scores.shape, dtype=bool)
    cells[present] = heatmap.scores[present] > v0
    return BinarizeResult(AnnotationMask(cells, role="refined"), v0, used_fallback)


def morphology_clean(mask, config):
    """Fill small enclosed holes, then drop small objects.

    A hole is a 4-connected background component that does not touch the
    image border and has area below ``min_hole_px``; after filling,
    4-connected positive components with area below ``min_object_px``
    are removed. The operation is idempotent: a second pass finds no new
    holes or small objects.
    """
    cells = mask.cells
    lab, n = ndimage.label(~cells)
    if n:
        sizes = np.bincount(lab.reshape(-1))
        touches_border = np.zeros(n + 1, dtype=bool)
        touches_border[lab[0, :]] = True
        touches_border[lab[-1, :]] = True
        touches_border[lab[:, 0]] = True
        touches_border[lab[:, -1]] = True
        fill = (sizes < config.min_hole_px) & ~touches_border
        fill[0] = False
        cells = cells | fill[lab]
    lab, n = ndimage.label(cells)
    if n:
        sizes = np.bincount(lab.reshape(-1))
        keep = sizes >= config.min_object_px
        keep[0] = False
        cells = keep[lab]
    return AnnotationMask(cells, role=mask.role)
