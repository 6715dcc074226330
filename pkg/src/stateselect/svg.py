"""Standalone SVG rendering of particle clouds, avoid regions and selections.

Hand-rolled on purpose: the output is a deterministic plain-text artifact
(no plotting toolchain in the dependency set) that tests can parse back.
"""

import numpy as np

_COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def trajectory_svg(snapshots, selected, avoid_boxes=None, width=720,
                   height=720, margin=48) -> str:
    """SVG document string.

    snapshots: list of (step, particles (L,2)) pairs; selected: list of
    (step, point (2,)) pairs drawn as squares; avoid_boxes: iterable of
    ((xlo,xhi),(ylo,yhi)) drawn cross-hatched.
    """
    pts = [p for _, p in snapshots]
    sel = [np.asarray(p, dtype=float) for _, p in selected if p is not None]
    corners = []
    for box in (avoid_boxes or ()):
        (xlo, xhi), (ylo, yhi) = box
        corners.append(np.array([[xlo, ylo], [xhi, yhi]]))
    stack = [np.asarray(a, dtype=float).reshape(-1, 2)
             for a in (pts + sel + corners) if np.size(a)]
    if stack:
        allpts = np.vstack(stack)
        lo = allpts.min(axis=0)
        hi = allpts.max(axis=0)
    else:
        lo = np.array([-1.0, -1.0])
        hi = np.array([1.0, 1.0])
    span = np.maximum(hi - lo, 1e-9)
    pad = 0.05 * span
    lo, hi = lo - pad, hi + pad
    span = hi - lo

    def sx(x):
        return margin + (x - lo[0]) / span[0] * (width - 2 * margin)

    def sy(y):
        # SVG y grows downward
        return height - margin - (y - lo[1]) / span[1] * (height - 2 * margin)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        "<defs>",
        '<pattern id="hatch" patternUnits="userSpaceOnUse" width="8" height="8" '
        'patternTransform="rotate(45)">'
        '<line x1="0" y1="0" x2="0" y2="8" stroke="#555" stroke-width="1.5"/>'
        "</pattern>",
        "</defs>",
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    for box in (avoid_boxes or ()):
        (xlo, xhi), (ylo, yhi) = box
        x, y = sx(xlo), sy(yhi)
        w, h = sx(xhi) - sx(xlo), sy(ylo) - sy(yhi)
        out.append(
            f'<rect class="avoid" x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" '
            f'height="{_fmt(h)}" fill="url(#hatch)" stroke="#333" stroke-width="1"/>'
        )
    for i, (step, particles) in enumerate(snapshots):
        color = _COLORS[i % len(_COLORS)]
        out.append(f'<g class="cloud" data-step="{step}">')
        for p in np.asarray(particles, dtype=float):
            out.append(
                f'<circle cx="{_fmt(sx(p[0]))}" cy="{_fmt(sy(p[1]))}" r="1.6" '
                f'fill="{color}" fill-opacity="0.45"/>'
            )
        out.append("</g>")
    for step, p in selected:
        if p is None:
            continue
        p = np.asarray(p, dtype=float)
        x, y = sx(p[0]) - 3.5, sy(p[1]) - 3.5
        out.append(
            f'<rect class="selected" data-step="{step}" x="{_fmt(x)}" '
            f'y="{_fmt(y)}" width="7" height="7" fill="black"/>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
