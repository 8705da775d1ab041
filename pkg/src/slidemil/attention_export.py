"""Attention map export: delimited text plus an optional graymap raster.

The CSV has one row per (head, instance) and appended ``mean`` rows
with the head-averaged weight per instance.  Weights are printed with
17 significant digits so parsing the file back reproduces the map
exactly.  When instance coordinates form a grid, the mean weights can
also be rasterized as a plain (P2) portable graymap with gray levels
proportional to weight over [0, max weight].
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ExportError
from .pooling import AttentionMap

CSV_HEADER = "head,instance_index,x,y,weight"


def format_weight(value: float) -> str:
    return f"{float(value):.17g}"


def export_attention_csv(amap: AttentionMap, path, coords=None) -> None:
    heads, n = amap.weights.shape
    if coords is not None and len(coords) != n:
        raise ExportError(f"{len(coords)} coordinates for {n} instances")
    lines = [CSV_HEADER]

    def coord_cells(k):
        if coords is None:
            return "", ""
        return str(int(coords[k][0])), str(int(coords[k][1]))

    for h in range(heads):
        for k in range(n):
            x, y = coord_cells(k)
            lines.append(
                f"{h},{amap.instance_ids[k]},{x},{y},{format_weight(amap.weights[h, k])}"
            )
    mean = amap.mean_over_heads()
    for k in range(n):
        x, y = coord_cells(k)
        lines.append(f"mean,{amap.instance_ids[k]},{x},{y},{format_weight(mean[k])}")

    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_attention_csv(path):
    """Read back (per-head weights, instance ids, coords or None)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ExportError(f"{path}: missing attention header")
    per_head: dict[int, list[float]] = {}
    ids: list[int] = []
    coords: list[tuple[int, int]] = []
    have_coords = False
    for line in lines[1:]:
        head, instance, x, y, weight = line.split(",")
        if head == "mean":
            continue
        h = int(head)
        per_head.setdefault(h, []).append(float(weight))
        if h == 0:
            ids.append(int(instance))
            if x != "":
                have_coords = True
                coords.append((int(x), int(y)))
    weights = np.array([per_head[h] for h in sorted(per_head)])
    return weights, ids, (np.array(coords) if have_coords else None)


def coords_form_grid(coords) -> bool:
    coords = np.asarray(coords)
    seen = {tuple(c) for c in coords.tolist()}
    return len(seen) == len(coords)


def write_graymap(values, coords, path, max_gray: int = 255) -> None:
    """Rasterize per-instance values onto the coordinate grid as plain PGM.

    Rows and columns follow the sorted unique y and x coordinates; cells
    without an instance stay black.  Gray levels scale linearly from 0
    at weight 0 to ``max_gray`` at the maximum weight.
    """
    if coords is None:
        raise ExportError("raster export requires instance coordinates")
    coords = np.asarray(coords)
    values = np.asarray(values, dtype=np.float64)
    if coords.shape[0] != values.shape[0]:
        raise ExportError(f"{coords.shape[0]} coordinates for {values.shape[0]} values")
    if not coords_form_grid(coords):
        raise ExportError("instance coordinates do not form a grid (duplicates present)")

    xs = np.unique(coords[:, 0])
    ys = np.unique(coords[:, 1])
    col = {x: i for i, x in enumerate(xs.tolist())}
    row = {y: i for i, y in enumerate(ys.tolist())}
    raster = np.zeros((len(ys), len(xs)), dtype=np.int64)
    top = float(values.max())
    if top > 0:
        for (x, y), value in zip(coords.tolist(), values.tolist()):
            raster[row[y], col[x]] = int(round(value / top * max_gray))

    lines = ["P2", f"{len(xs)} {len(ys)}", str(max_gray)]
    for r in range(len(ys)):
        lines.append(" ".join(str(v) for v in raster[r]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def export_attention(model, bag, task_id: str, out_dir, raster: bool = False):
    """Eval-mode forward of one bag, written as CSV and optionally PGM.

    Returns the written paths keyed by kind.
    """
    from .model import forward_bag

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _, amap = forward_bag(
        model, task_id, bag.features, mode="eval", instance_ids=bag.instance_ids
    )
    paths = {}
    csv_path = out_dir / f"attention_{bag.slide_id}_{task_id}.csv"
    export_attention_csv(amap, csv_path, coords=bag.coords)
    paths["csv"] = csv_path
    if raster:
        pgm_path = out_dir / f"attention_{bag.slide_id}_{task_id}.pgm"
        write_graymap(amap.mean_over_heads(), bag.coords, pgm_path)
        paths["pgm"] = pgm_path
    return paths, amap
