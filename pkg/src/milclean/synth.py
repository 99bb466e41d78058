"""Synthetic slides, patch-label assignment and coarse-annotation noise.

A synthetic slide is a lattice of feature vectors drawn from two
class-conditional Gaussians (lesion cells vs the rest) over a smoothed
random tissue blob. Two noise families corrupt a ground-truth annotation
into a coarse one: uniform label flipping at fixed per-class rates, and a
geometric scheme that keeps only the largest lesion and inflates it
(dilation plus convex hull) or cuts it in half.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateHistogramError, ValidationError
from .geometry import convex_hull, dilate_disc, points_in_hull
from .grids import AnnotationMask, PatchGrid
from .postproc import otsu_threshold

MAX_GENERATION_ATTEMPTS = 50
LESION_RATIO_BOUNDS = (0.10, 0.90)
RGB_TISSUE_THRESHOLDS = (235, 210, 235)


@dataclass
class SynthSpec:
    """Recipe for one synthetic slide."""

    width: int
    height: int
    feature_dim: int
    n_lesions: int = 2
    lesion_scale: float = 8.0
    class_separation: float = 3.0
    feature_noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.width < 4 or self.height < 4:
            raise ValidationError("slide lattice must be at least 4x4")
        if self.feature_dim < 1:
            raise ValidationError("feature_dim must be >= 1")
        if self.n_lesions < 1:
            raise ValidationError("n_lesions must be >= 1")
        if self.lesion_scale <= 0:
            raise ValidationError("lesion_scale must be positive")
        if self.class_separation < 0 or self.feature_noise < 0:
            raise ValidationError("class_separation and feature_noise must be nonnegative")


@dataclass
class S1Noise:
    """Uniform flipping: rates for true-negative and true-positive cells."""

    rho0: float
    rho1: float
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.rho0 <= 1.0 and 0.0 <= self.rho1 <= 1.0):
            raise ValidationError("rho0 and rho1 must lie in [0, 1]")


@dataclass
class S2Noise:
    """Omit-small-lesions noise: keep the largest lesion, then either
    inflate it (disc dilation followed by convex hull) or cut it in half."""

    dilation_radius: float = 3.0
    cut_in_half: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.dilation_radius < 0:
            raise ValidationError("dilation_radius must be >= 0")


def _tissue_blob(rng, height, width):
    # threshold smoothed noise at its 15th percentile: ~85% coverage
    g = ndimage.gaussian_filter(rng.standard_normal((height, width)), sigma=min(height, width) / 6.0)
    return g >= np.quantile(g, 0.15)


def _star_blob(rng, height, width, cy, cx, scale):
    r0 = scale * rng.uniform(0.8, 1.2)
    lobes = int(rng.integers(3, 6))
    amp = rng.uniform(0.15, 0.30)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    yy, xx = np.mgrid[0:height, 0:width]
    dy = yy - cy
    dx = xx - cx
    dist = np.hypot(dy, dx)
    theta = np.arctan2(dy, dx)
    return dist <= r0 * (1.0 + amp * np.sin(lobes * theta + phase))


def _place_lesions(rng, tissue, spec):
    height, width = tissue.shape
    tissue_idx = np.argwhere(tissue)
    centers = []
    min_sep = 2.5 * spec.lesion_scale
    for _ in range(spec.n_lesions):
        for _ in range(100):
            cy, cx = tissue_idx[rng.integers(len(tissue_idx))]
            if all(math.hypot(cy - py, cx - px) >= min_sep for py, px in centers):
                centers.append((int(cy), int(cx)))
                break
        else:
            return None  # could not separate centers; caller retries
    mask = np.zeros_like(tissue)
    for cy, cx in centers:
        mask |= _star_blob(rng, height, width, cy, cx, spec.lesion_scale)
    return mask & tissue


def generate_synthetic_slide(spec):
    """Build one slide: tissue blob, star-shaped lesions, Gaussian features.

    Lesion geometry is redrawn until the positive cells form exactly
    ``n_lesions`` 4-connected components and the lesion share of tissue
    lies in [0.10, 0.90]; a bounded number of attempts guards against
    impossible specs. Features are isotropic Gaussians whose class means
    differ by ``class_separation`` along a fixed direction shared by all
    slides, so models transfer across slides drawn from different seeds.

    Returns the grid and the ground-truth annotation.
    """
    rng = np.random.default_rng(spec.seed)
    tissue = _tissue_blob(rng, spec.height, spec.width)
    gt = None
    for _ in range(MAX_GENERATION_ATTEMPTS):
        cand = _place_lesions(rng, tissue, spec)
        if cand is None or not cand.any():
            continue
        _, n_comp = ndimage.label(cand)
        ratio = cand.sum() / tissue.sum()
        if n_comp == spec.n_lesions and LESION_RATIO_BOUNDS[0] <= ratio <= LESION_RATIO_BOUNDS[1]:
            gt = cand
            break
    if gt is None:
        raise ValidationError(
            "could not generate %d lesions with tissue share in [%.2f, %.2f] "
            "after %d attempts; adjust lesion_scale or lattice size"
            % (spec.n_lesions, *LESION_RATIO_BOUNDS, MAX_GENERATION_ATTEMPTS)
        )
    d = spec.feature_dim
    mu1 = spec.class_separation * np.ones(d) / math.sqrt(d)
    features = rng.standard_normal((spec.height, spec.width, d)) * spec.feature_noise
    features[gt] += mu1
    grid = PatchGrid(features=features, tissue=tissue)
    return grid, AnnotationMask(gt, role="ground_truth")


def assign_patch_labels(annotation_pixels, patch_px, overlap_frac):
    """Rasterize a pixel-level annotation onto the patch lattice.

    Patches tile the image at stride ``patch_px * (1 - overlap_frac)``
    (only fully contained patches count) and each patch takes the label
    of the single pixel under its center, regardless of how much of its
    area is positive.
    """
    pix = np.asarray(annotation_pixels, dtype=bool)
    if pix.ndim != 2 or pix.size == 0:
        raise ValidationError("annotation_pixels must be a nonempty 2-d mask")
    if patch_px < 1:
        raise ValidationError("patch_px must be >= 1")
    if not 0.0 <= overlap_frac < 1.0:
        raise ValidationError("overlap_frac must lie in [0, 1)")
    stride = int(round(patch_px * (1.0 - overlap_frac)))
    if stride < 1:
        raise ValidationError("patch stride is below one pixel; reduce overlap_frac")
    ph, pw = pix.shape
    n_rows = (ph - patch_px) // stride + 1
    n_cols = (pw - patch_px) // stride + 1
    if n_rows < 1 or n_cols < 1:
        raise ValidationError("patch_px exceeds the image extent")
    half = patch_px // 2
    rows = np.arange(n_rows) * stride + half
    cols = np.arange(n_cols) * stride + half
    return AnnotationMask(pix[np.ix_(rows, cols)], role="ground_truth")


def lattice_to_pixels(mask, pixel_shape, patch_px, overlap_frac):
    """Paint lattice labels back to pixel space by nearest patch center.

    Each pixel takes the label of the patch whose center is nearest, so
    re-assigning labels at the same stride reproduces the lattice exactly.
    """
    stride = int(round(patch_px * (1.0 - overlap_frac)))
    if stride < 1:
        raise ValidationError("patch stride is below one pixel; reduce overlap_frac")
    ph, pw = pixel_shape
    half = patch_px // 2
    ry = np.clip(np.round((np.arange(ph) - half) / stride).astype(int), 0, mask.height - 1)
    rx = np.clip(np.round((np.arange(pw) - half) / stride).astype(int), 0, mask.width - 1)
    return mask.cells[np.ix_(ry, rx)]


def _tissue_or_full(mask_cells, tissue):
    if tissue is None:
        return np.ones_like(mask_cells, dtype=bool)
    tissue = np.asarray(tissue, dtype=bool)
    if tissue.shape != mask_cells.shape:
        raise ValidationError("tissue shape does not match the annotation")
    return tissue


def apply_noise_s1(gt, rho0, rho1, seed, tissue=None):
    """Flip an exact number of labels per class, uniformly without replacement.

    Exactly ``round(rho1 * |positives|)`` positive tissue cells and
    ``round(rho0 * |negatives|)`` negative tissue cells change label;
    off-tissue cells are untouched. Exact counts (rather than per-cell
    coin flips) make the injected noise rate testable deterministically.
    """
    if gt.role != "ground_truth":
        raise ValidationError("noise is injected into ground_truth masks only")
    if not (0.0 <= rho0 <= 1.0 and 0.0 <= rho1 <= 1.0):
        raise ValidationError("rho0 and rho1 must lie in [0, 1]")
    tis = _tissue_or_full(gt.cells, tissue).reshape(-1)
    cells = gt.cells.reshape(-1).copy()
    pos_idx = np.flatnonzero(tis & cells)
    neg_idx = np.flatnonzero(tis & ~cells)
    n1 = int(round(rho1 * len(pos_idx)))
    n0 = int(round(rho0 * len(neg_idx)))
    rng = np.random.default_rng(seed)
    if n1:
        cells[rng.choice(pos_idx, size=n1, replace=False)] = False
    if n0:
        cells[rng.choice(neg_idx, size=n0, replace=False)] = True
    return AnnotationMask(cells.reshape(gt.cells.shape), role="coarse")


def largest_component(cells):
    """Mask of the largest 4-connected positive component.

    Ties go to the component whose first cell in row-major order comes
    first (labeling assigns ids in raster discovery order, so that is the
    smallest qualifying label).
    """
    labels, n = ndimage.label(np.asarray(cells, dtype=bool))
    if n == 0:
        raise ValidationError("mask has no positive cells")
    sizes = np.bincount(labels.reshape(-1))[1:]
    best = int(np.flatnonzero(sizes == sizes.max())[0]) + 1
    return labels == best


def apply_noise_s2(gt, spec, tissue=None):
    """Degrade an annotation the way a quick manual outline would.

    Keeps only the largest lesion. With ``cut_in_half`` the kept lesion
    loses every cell right of its centroid column (no dilation or hull);
    otherwise it is dilated by a Euclidean disc and replaced by the
    convex hull of the dilated cells, clipped to tissue.
    """
    if gt.role != "ground_truth":
        raise ValidationError("noise is injected into ground_truth masks only")
    if not gt.cells.any():
        raise ValidationError("ground truth has no positive cells")
    tis = _tissue_or_full(gt.cells, tissue)
    comp = largest_component(gt.cells)
    if spec.cut_in_half:
        cols = np.nonzero(comp)[1]
        centroid_col = cols.mean()
        keep = comp & (np.arange(comp.shape[1])[None, :] <= centroid_col)
        return AnnotationMask(keep & tis, role="coarse")
    dilated = dilate_disc(comp, spec.dilation_radius)
    pts = np.argwhere(dilated)  # (row, col) cell centers
    hull = convex_hull(pts[:, ::-1])  # hull in (x, y) = (col, row)
    yy, xx = np.nonzero(np.ones_like(comp))
    inside = points_in_hull(hull, xx, yy).reshape(comp.shape)
    return AnnotationMask(inside & tis, role="coarse")


def apply_noise(gt, spec, tissue=None):
    """Dispatch on the noise family of ``spec``."""
    if isinstance(spec, S1Noise):
        return apply_noise_s1(gt, spec.rho0, spec.rho1, spec.seed, tissue=tissue)
    if isinstance(spec, S2Noise):
        return apply_noise_s2(gt, spec, tissue=tissue)
    raise ValidationError("unknown noise spec: %r" % (type(spec).__name__,))


def lesion_ratio(mask, tissue):
    """Share of tissue cells that are annotated positive."""
    tissue = np.asarray(tissue, dtype=bool)
    if tissue.shape != mask.cells.shape:
        raise ValidationError("tissue shape does not match the annotation")
    n_tissue = int(tissue.sum())
    if n_tissue == 0:
        raise ValidationError("tissue mask is empty")
    return float((mask.cells & tissue).sum()) / n_tissue


def tissue_mask_rgb(thumbnail, thresholds=RGB_TISSUE_THRESHOLDS):
    """Tissue = strictly darker than the background thresholds in all of
    R, G and B (white background fails every comparison)."""
    img = np.asarray(thumbnail)
    if img.ndim != 3 or img.shape[2] != 3 or img.size == 0:
        raise ValidationError("thumbnail must be a nonempty (H, W, 3) image")
    tr, tg, tb = thresholds
    return (img[..., 0] < tr) & (img[..., 1] < tg) & (img[..., 2] < tb)


def rgb_to_hsv(thumbnail):
    """Vectorized RGB (bytes) to HSV (floats in [0, 1])."""
    img = np.asarray(thumbnail, dtype=np.float64) / 255.0
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    maxc = np.maximum(np.maximum(r, g), b)
    minc = np.minimum(np.minimum(r, g), b)
    delta = maxc - minc
    v = maxc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    safe = np.where(delta > 0, delta, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.select([r == maxc, g == maxc], [bc - gc, 2.0 + rc - bc], default=4.0 + gc - rc)
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def tissue_mask_hsv_otsu(thumbnail, bins=256):
    """Tissue = above an Otsu threshold in hue AND in saturation.

    Raises naming the offending channel when either histogram collapses
    into one bin (constant-color images carry no threshold information).
    """
    img = np.asarray(thumbnail)
    if img.ndim != 3 or img.shape[2] != 3 or img.size == 0:
        raise ValidationError("thumbnail must be a nonempty (H, W, 3) image")
    hsv = rgb_to_hsv(img)
    cuts = []
    for name, channel in (("H", hsv[..., 0]), ("S", hsv[..., 1])):
        try:
            cuts.append(otsu_threshold(channel.reshape(-1), bins))
        except DegenerateHistogramError:
            raise ValidationError("degenerate %s channel: all values fall in one bin" % name)
    return (hsv[..., 0] > cuts[0]) & (hsv[..., 1] > cuts[1])
