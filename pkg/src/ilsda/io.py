"""Text formats: feature files and the model container.

Feature files are delimiter-separated (comma, tab or whitespace), one sample
per row, the first column an integer class label (``-1`` for unlabeled) and
the rest real features. A leading header row is skipped when its first token
is not numeric.

The model container is line-oriented::

    ilsda-model 1
    p 3
    beta 0.24436
    Ws 10 3
    <10 lines of 3 values>
    Wt 10 3
    ...
    M 3 3
    ...
    source_mean 1 10
    <1 line of 10 values>
    target_mean 1 10
    ...

Values are written with 17 significant digits so they round-trip exactly.
"""

from __future__ import annotations

import os

import numpy as np

from .manifolds import ProductPoint
from .pipeline import UNLABELED, FeatureSet, FittedModel

MODEL_MAGIC = "ilsda-model"
MODEL_VERSION = 1
_MATRICES = ("Ws", "Wt", "M", "source_mean", "target_mean")


class FeatureFileError(ValueError):
    """Malformed feature file; the message names the offending row/column."""


class ModelFormatError(ValueError):
    """Malformed model container; the message names the offending line."""


def _split(line, delimiter):
    if delimiter is None:
        if "," in line:
            delimiter = ","
        elif "\t" in line:
            delimiter = "\t"
    parts = line.split(delimiter) if delimiter else line.split()
    return [p.strip() for p in parts]


def _is_number(token):
    try:
        float(token)
    except ValueError:
        return False
    return True


def load_features(path, domain="source", delimiter=None):
    """Parse a feature file into a :class:`FeatureSet`.

    Rows are 1-based in error messages, counting the header if any.
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    rows = [(i + 1, line) for i, line in enumerate(lines) if line.strip()]
    if not rows:
        raise FeatureFileError(f"{path}: empty file")
    first = _split(rows[0][1], delimiter)
    if not _is_number(first[0]):
        rows = rows[1:]
        if not rows:
            raise FeatureFileError(f"{path}: header but no data rows")

    labels, feats = [], []
    width = None
    for lineno, line in rows:
        cells = _split(line, delimiter)
        if width is None:
            width = len(cells)
            if width < 2:
                raise FeatureFileError(f"{path}: row {lineno}: need a label and at least one feature")
        elif len(cells) != width:
            raise FeatureFileError(
                f"{path}: row {lineno}: ragged row with {len(cells)} columns, expected {width}"
            )
        try:
            lab = int(cells[0])
        except ValueError:
            raise FeatureFileError(
                f"{path}: row {lineno}, column 1: label {cells[0]!r} is not an integer"
            ) from None
        vals = []
        for col, cell in enumerate(cells[1:], start=2):
            try:
                vals.append(float(cell))
            except ValueError:
                raise FeatureFileError(
                    f"{path}: row {lineno}, column {col}: {cell!r} is not a number"
                ) from None
        labels.append(lab)
        feats.append(vals)

    labels = np.array(labels, dtype=np.int64)
    if np.any(labels < UNLABELED):
        raise FeatureFileError(f"{path}: labels must be non-negative or {UNLABELED}")
    if np.all(labels == UNLABELED):
        labels = None
    return FeatureSet(np.array(feats, dtype=float), labels, domain)


def save_features(fs, path, delimiter=","):
    labels = fs.labels if fs.labels is not None else np.full(fs.n, UNLABELED)
    with open(path, "w", encoding="utf-8") as fh:
        for lab, row in zip(labels, fs.X):
            fh.write(delimiter.join([str(int(lab))] + [repr(float(x)) for x in row]) + "\n")


def _fmt(x):
    return format(float(x), ".17g")


def export_model(model, path):
    """Write the projections, metric, means and beta of a fitted model."""
    blocks = {
        "Ws": model.params.Ws,
        "Wt": model.params.Wt,
        "M": model.params.M,
        "source_mean": np.atleast_2d(model.source_mean),
        "target_mean": np.atleast_2d(model.target_mean),
    }
    out = [f"{MODEL_MAGIC} {MODEL_VERSION}", f"p {model.p}", f"beta {_fmt(model.beta)}"]
    for name in _MATRICES:
        A = blocks[name]
        out.append(f"{name} {A.shape[0]} {A.shape[1]}")
        out.extend(" ".join(_fmt(x) for x in row) for row in A)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")
    os.replace(tmp, path)


def import_model(path):
    """Read a container written by :func:`export_model`.

    The slack parameters are not stored; the returned model has an empty
    slack vector.
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise ModelFormatError(f"{path}: line {pos + 1}: unexpected end of file")
        pos += 1
        return pos, lines[pos - 1].split()

    def header(expected, nvals):
        lineno, tok = take()
        if len(tok) != nvals + 1 or tok[0] != expected:
            raise ModelFormatError(f"{path}: line {lineno}: expected '{expected}' header")
        return lineno, tok[1:]

    lineno, tok = take()
    if tok != [MODEL_MAGIC, str(MODEL_VERSION)]:
        raise ModelFormatError(f"{path}: line {lineno}: not an {MODEL_MAGIC} v{MODEL_VERSION} file")
    try:
        lineno, (p,) = header("p", 1)
        p = int(p)
        lineno, (beta,) = header("beta", 1)
        beta = float(beta)
    except ValueError:
        raise ModelFormatError(f"{path}: line {lineno}: malformed value") from None

    arrays = {}
    for name in _MATRICES:
        lineno, dims = header(name, 2)
        try:
            rows, cols = int(dims[0]), int(dims[1])
        except ValueError:
            raise ModelFormatError(f"{path}: line {lineno}: bad dimensions") from None
        A = np.empty((rows, cols))
        for r in range(rows):
            lineno, tok = take()
            if len(tok) != cols:
                raise ModelFormatError(
                    f"{path}: line {lineno}: expected {cols} values, found {len(tok)}"
                )
            try:
                A[r] = [float(t) for t in tok]
            except ValueError:
                raise ModelFormatError(f"{path}: line {lineno}: non-numeric value") from None
        arrays[name] = A

    Ws, Wt, M = arrays["Ws"], arrays["Wt"], arrays["M"]
    if M.shape != (p, p) or Ws.shape[1] != p or Wt.shape[1] != p:
        raise ModelFormatError(f"{path}: matrix shapes inconsistent with p={p}")
    if arrays["source_mean"].shape != (1, Ws.shape[0]) or arrays["target_mean"].shape != (
        1,
        Wt.shape[0],
    ):
        raise ModelFormatError(f"{path}: mean vectors do not match projection sizes")
    params = ProductPoint(Ws, Wt, M, np.zeros(0))
    return FittedModel.from_params(
        params, arrays["source_mean"][0], arrays["target_mean"][0], beta
    )
