"""On-disk formats: feature grids, PNM masks and thumbnails, CSV, JSON.

All writers are deterministic byte for byte: floats print as %.17g (which
round-trips float64 exactly), JSON keys are sorted, and binary masks use
a fixed header layout. Rerunning a pipeline with the same manifest must
reproduce identical files.
"""

import json

import numpy as np

from .errors import ValidationError
from .grids import Heatmap

FLOAT_FMT = "%.17g"


def _fmt(x):
    return FLOAT_FMT % (x,)


# feature grids: text, header "width height feature_dim", one cell per line

def write_grid(path, grid):
    h, w, d = grid.features.shape
    lines = ["%d %d %d" % (w, h, d)]
    flat = grid.features.reshape(-1, d)
    for row in flat:
        lines.append(" ".join(_fmt(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_grid(path):
    """Feature array (height, width, feature_dim) from a grid text file."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValidationError("grid header must be 'width height feature_dim'")
        w, h, d = (int(t) for t in header)
        data = np.loadtxt(fh, dtype=np.float64, ndmin=2)
    if data.shape != (w * h, d):
        raise ValidationError(
            "grid body has shape %s, expected (%d, %d)" % (data.shape, w * h, d)
        )
    return data.reshape(h, w, d)


# masks: portable graymaps, strictly {0, 255}

def write_mask(path, cells, binary=True):
    cells = np.asarray(cells, dtype=bool)
    h, w = cells.shape
    payload = (cells.astype(np.uint8) * 255)
    if binary:
        with open(path, "wb") as fh:
            fh.write(b"P5\n%d %d\n255\n" % (w, h))
            fh.write(payload.tobytes())
    else:
        lines = ["P2", "%d %d" % (w, h), "255"]
        lines.extend(" ".join(str(v) for v in row) for row in payload)
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _pnm_tokens(data, count):
    """First ``count`` header tokens of a PNM file, honoring # comments.

    Returns the tokens and the offset just past the single whitespace
    byte that terminates the last token (start of binary payload).
    """
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise ValidationError("truncated PNM header")
        c = data[i : i + 1]
        if c == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
                j += 1
            tokens.append(data[i:j])
            i = j
    if i >= len(data) or not data[i : i + 1].isspace():
        raise ValidationError("PNM header not terminated by whitespace")
    return tokens, i + 1


def read_mask(path):
    """Boolean mask from a P2/P5 graymap holding only 0 and 255."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, offset = _pnm_tokens(data, 4)
    magic = tokens[0]
    if magic not in (b"P2", b"P5"):
        raise ValidationError("mask file must be P2 or P5, got %r" % (magic,))
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValidationError("mask maxval must be 255, got %d" % maxval)
    if magic == b"P5":
        body = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=offset)
    else:
        body = np.array(data[offset:].split(), dtype=np.int64)
        if body.size != w * h:
            raise ValidationError("P2 mask holds %d values, expected %d" % (body.size, w * h))
    vals = np.unique(body)
    if not np.all(np.isin(vals, (0, 255))):
        raise ValidationError("mask values must be 0 or 255")
    return (body.reshape(h, w) == 255)


# thumbnails: portable pixmaps (P6)

def write_thumbnail(path, image):
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValidationError("thumbnail must be (H, W, 3)")
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(image.tobytes())


def read_thumbnail(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, offset = _pnm_tokens(data, 4)
    if tokens[0] != b"P6":
        raise ValidationError("thumbnail must be P6, got %r" % (tokens[0],))
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValidationError("thumbnail maxval must be 255")
    body = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=offset)
    return body.reshape(h, w, 3).copy()


# heatmaps: CSV of present cells

def write_heatmap(path, heatmap):
    lines = ["col,row,score"]
    present = heatmap.present
    for r, c in np.argwhere(present):
        lines.append("%d,%d,%s" % (c, r, _fmt(heatmap.scores[r, c])))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_heatmap(path, shape):
    scores = np.full(shape, np.nan)
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "col,row,score":
            raise ValidationError("heatmap CSV must start with 'col,row,score'")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            col, row, score = line.split(",")
            scores[int(row), int(col)] = float(score)
    return Heatmap(scores)


# loss traces: CSV step,loss,lr

def write_loss_trace(path, trace):
    lines = ["step,loss,lr"]
    lines.extend("%d,%s,%s" % (step, _fmt(loss), _fmt(lr)) for step, loss, lr in trace)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_loss_trace(path):
    trace = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "step,loss,lr":
            raise ValidationError("loss trace CSV must start with 'step,loss,lr'")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            step, loss, lr = line.split(",")
            trace.append((int(step), float(loss), float(lr)))
    return trace


# JSON documents (manifests, results, reports)

def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=2))
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
