"""2-D PCA projection of embeddings or features, with CSV and SVG export."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ValidationError


def project_latent(vectors) -> np.ndarray:
    """Mean-centered PCA onto the top two components, shape (n, 2).

    Sign convention: each component's largest-magnitude loading is positive.
    Rank-deficient inputs zero-pad the missing coordinate.
    """
    data = np.asarray(vectors, dtype=float)
    if data.ndim != 2 or data.shape[0] < 3:
        raise ValidationError("need at least 3 vectors of equal dimension")
    centered = data - data.mean(axis=0)
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    coords = np.zeros((data.shape[0], 2))
    tol = max(data.shape) * np.finfo(float).eps * (singular[0] if singular.size else 0.0)
    for c in range(min(2, vt.shape[0])):
        if singular[c] <= tol:
            break
        component = vt[c]
        pivot = int(np.argmax(np.abs(component)))
        if component[pivot] < 0:
            component = -component
        coords[:, c] = centered @ component
    return coords


def projection_csv(coords: np.ndarray, labels) -> str:
    lines = ["label,x,y"]
    for label, (x, y) in zip(labels, coords):
        lines.append(f"{label},{repr(float(x))},{repr(float(y))}")
    return "\n".join(lines) + "\n"


_SVG_COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e",
               "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def projection_svg(coords: np.ndarray, labels, size: int = 480) -> str:
    """Deterministic scatter plot; one color per distinct label."""
    coords = np.asarray(coords, dtype=float)
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    margin = 24
    palette = {}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for label, (x, y) in zip(labels, coords):
        if label not in palette:
            palette[label] = _SVG_COLORS[len(palette) % len(_SVG_COLORS)]
        px = margin + (x - lo[0]) / span[0] * (size - 2 * margin)
        py = size - (margin + (y - lo[1]) / span[1] * (size - 2 * margin))
        parts.append(
            f'<circle cx="{px:.2f}" cy="{py:.2f}" r="4" fill="{palette[label]}" '
            f'fill-opacity="0.7"><title>{label}</title></circle>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def save_projection(coords: np.ndarray, labels, stem: str | Path) -> tuple[Path, Path]:
    stem = Path(stem)
    csv_path = stem.with_suffix(".csv")
    svg_path = stem.with_suffix(".svg")
    csv_path.write_text(projection_csv(coords, labels))
    svg_path.write_text(projection_svg(coords, labels))
    return csv_path, svg_path
