"""Token graph construction from pairwise cosine similarity.

Tokens are rows of a dense real matrix (N tokens, h feature dims).  The
weighted token graph connects every token to every other with edge weight
``1 - cos(v_i, v_j)``, so weights live in [0, 2]: 0 for duplicates, 1 for
orthogonal tokens, 2 for antipodal ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError, ZeroVectorError

# A TokenMatrix is a plain 2-D float64 array, one token per row.
TokenMatrix = np.ndarray
# A SimilarityMatrix is a symmetric N x N array of clamped cosines.
SimilarityMatrix = np.ndarray


def as_token_matrix(tokens) -> TokenMatrix:
    """Coerce to a validated 2-D float64 token matrix.

    Raises ShapeMismatchError for wrong dimensionality or non-finite
    entries; the array is copied so callers cannot mutate it later.
    """
    arr = np.array(tokens, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeMismatchError(
            f"token matrix must be 2-D with N >= 1, h >= 1, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ShapeMismatchError("token matrix contains non-finite entries")
    return arr


@dataclass(frozen=True)
class WeightedGraph:
    """Dense symmetric token graph with weights 1 - cos, zero diagonal."""

    weights: np.ndarray

    def __post_init__(self):
        w = self.weights
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ShapeMismatchError(f"graph weights must be square, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ShapeMismatchError("graph weights contain non-finite entries")
        if np.max(np.abs(w - w.T)) > 1e-9:
            raise ShapeMismatchError("graph weights must be symmetric within 1e-9")
        if w.min() < -1e-9 or w.max() > 2.0 + 1e-9:
            raise ShapeMismatchError("graph weights must lie in [0, 2]")
        if np.max(np.abs(np.diag(w))) > 1e-9:
            raise ShapeMismatchError("token graph diagonal must be zero")

    @property
    def node_count(self) -> int:
        return self.weights.shape[0]


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between two vectors, clamped to [-1, 1].

    Clamping absorbs the ~1e-16 excursions floating point produces for
    near-parallel vectors.  Zero-norm input is an error, not similarity 0:
    the quantity is undefined and silent defaults hide upstream bugs.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ShapeMismatchError(
            f"vectors must share one dimension, got {u.shape} and {v.shape}"
        )
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVectorError("cosine similarity of a zero vector is undefined")
    return float(min(1.0, max(-1.0, float(u @ v) / (nu * nv))))


def _normalized_rows(tokens: TokenMatrix) -> np.ndarray:
    norms = np.linalg.norm(tokens, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        idx = int(zero[0])
        raise ZeroVectorError(f"token row {idx} has zero norm", row_index=idx)
    return tokens / norms[:, None]


def pairwise_cosine(tokens) -> SimilarityMatrix:
    """All-pairs cosine similarity.

    One triangle is computed and mirrored so the result is exactly
    symmetric regardless of BLAS summation order.
    """
    tm = as_token_matrix(tokens)
    xn = _normalized_rows(tm)
    sim = np.clip(xn @ xn.T, -1.0, 1.0)
    upper = np.triu(sim)
    return upper + np.triu(sim, 1).T


def build_weighted_graph(tokens) -> WeightedGraph:
    """Weighted token graph: W[i, j] = 1 - cos(v_i, v_j), diagonal 0."""
    w = 1.0 - pairwise_cosine(tokens)
    np.fill_diagonal(w, 0.0)
    return WeightedGraph(weights=w)


def load_tokens_csv(path) -> TokenMatrix:
    """Read a token matrix from CSV.

    One token per row of comma-separated decimal floats; a single leading
    line starting with '#' is skipped as a header.
    """
    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if rows or lineno > 0:
                    raise ShapeMismatchError(
                        f"unexpected header at line {lineno + 1} of {path}"
                    )
                continue
            try:
                rows.append([float(tok) for tok in line.split(",")])
            except ValueError as exc:
                raise ShapeMismatchError(
                    f"bad float at line {lineno + 1} of {path}: {exc}"
                ) from exc
    if not rows:
        raise ShapeMismatchError(f"no token rows in {path}")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ShapeMismatchError(f"ragged rows in {path}")
    return as_token_matrix(rows)


def save_tokens_csv(path, tokens, header: str | None = None) -> None:
    """Write a token matrix as CSV (17 significant digits, LF endings)."""
    tm = as_token_matrix(tokens)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header is not None:
            fh.write(f"# {header}\n")
        for row in tm:
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
