"""File emitters: sample CSVs, report CSVs and a minimal SVG scatter."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .data import write_points_csv

SVG_SIZE = 480
SVG_PAD = 24


def sample_stem(objective: str, n_inf: int, n_mf: int, seed: int, kind: str = "samples") -> str:
    return f"{kind}_{objective}_ninf{n_inf}_nmf{n_mf}_seed{seed}"


def write_samples(out_dir, points, objective, n_inf, n_mf, seed, svg=True,
                  kind="samples") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = sample_stem(objective, n_inf, n_mf, seed, kind)
    paths = [out_dir / f"{stem}.csv"]
    write_points_csv(paths[0], points)
    if svg and np.shape(points)[1] == 2:
        paths.append(out_dir / f"{stem}.svg")
        write_svg_scatter(paths[1], points, title=stem)
    return paths


def write_svg_scatter(path, points, title: str = "", radius: float = 1.2) -> None:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"scatter needs (n, 2) points, got shape {pts.shape}")
    finite = pts[np.all(np.isfinite(pts), axis=1)]
    lo = finite.min(axis=0) if len(finite) else np.zeros(2)
    hi = finite.max(axis=0) if len(finite) else np.ones(2)
    # one scale for both axes keeps circles round
    span = max(float((hi - lo).max()), 1e-12)
    scale = (SVG_SIZE - 2 * SVG_PAD) / span
    mid = (lo + hi) / 2
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" '
        f'viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">',
        f'<rect width="{SVG_SIZE}" height="{SVG_SIZE}" fill="white"/>',
    ]
    if title:
        lines.append(f'<title>{_escape(title)}</title>')
    lines.append('<g fill="#1f4e8c" fill-opacity="0.5">')
    for x, y in finite:
        cx = SVG_SIZE / 2 + (x - mid[0]) * scale
        cy = SVG_SIZE / 2 - (y - mid[1]) * scale
        lines.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{radius}"/>')
    lines += ["</g>", "</svg>"]
    Path(path).write_text("\n".join(lines) + "\n")


def _escape(text):
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_rows_csv(path, rows: list[dict]) -> None:
    if not rows:
        raise ValueError("no rows to write")
    columns = list(rows[0])
    for row in rows[1:]:
        columns += [k for k in row if k not in columns]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return v
