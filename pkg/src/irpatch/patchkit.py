"""Turning a relaxed mask into a cuttable stencil.

A stencil is the thresholded mask split into 8-connected components.  It is
exported as a P4 bitmap plus a text manifest listing, for every component,
its bounding box, area and the column spans it covers on each row::

    component 1 bbox 10 12 4 3 area 9
    row 10: 12-14
    row 11: 12-13,14-14
    ...

Component ids start at 1, spans are inclusive and rows are absolute image
rows.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .aggreg import aggregation_map
from .errors import ParameterError, PreconditionError
from .imgcore import is_binary
from .pnm import read_pbm, write_pbm

EIGHT = np.ones((3, 3), dtype=int)


@dataclass(frozen=True)
class Component:
    pixels: tuple[tuple[int, int], ...]  # row-major order
    bbox: tuple[int, int, int, int]  # row, col, height, width
    area: int


@dataclass(frozen=True)
class PatchStencil:
    grid: np.ndarray
    components: tuple[Component, ...]
    total_area: int
    aggregation_final: float


def binarize(m, threshold: float = 0.5) -> np.ndarray:
    """1 where ``m >= threshold``, else 0."""
    if not 0.0 < threshold < 1.0:
        raise ParameterError(f"threshold must lie in (0, 1), got {threshold}")
    return (np.asarray(m, dtype=np.float64) >= threshold).astype(np.float64)


def connected_components(b) -> list[Component]:
    """8-connected components, ordered by their first pixel in row-major order."""
    b = np.asarray(b)
    if not is_binary(b):
        raise PreconditionError("connected_components needs a binary mask")
    labels, n = ndimage.label(b == 1, structure=EIGHT)
    # ndimage.label numbers components in raster order of their first pixel,
    # which is exactly the ordering we promise
    out = []
    for k in range(1, n + 1):
        rows, cols = np.nonzero(labels == k)
        r0, c0 = int(rows.min()), int(cols.min())
        bbox = (r0, c0, int(rows.max()) - r0 + 1, int(cols.max()) - c0 + 1)
        pixels = tuple(zip(rows.tolist(), cols.tolist()))
        out.append(Component(pixels, bbox, len(pixels)))
    return out


def make_stencil(m, threshold: float = 0.5, support=None) -> PatchStencil:
    """Binarize ``m`` and describe the result.

    ``support`` (usually the object mask) sets the region the aggregation
    summary is averaged over.
    """
    b = binarize(m, threshold)
    comps = connected_components(b)
    agg = aggregation_map(b, support).mean_support
    return PatchStencil(b, tuple(comps), int(b.sum()), agg)


def _spans(cols: list[int]) -> list[tuple[int, int]]:
    spans = []
    start = prev = cols[0]
    for c in cols[1:]:
        if c != prev + 1:
            spans.append((start, prev))
            start = c
        prev = c
    spans.append((start, prev))
    return spans


def manifest_text(stencil: PatchStencil) -> str:
    lines = []
    for k, comp in enumerate(stencil.components, 1):
        r0, c0, h, w = comp.bbox
        lines.append(f"component {k} bbox {r0} {c0} {h} {w} area {comp.area}")
        rows: dict[int, list[int]] = {}
        for r, c in comp.pixels:
            rows.setdefault(r, []).append(c)
        for r in sorted(rows):
            spans = ",".join(f"{a}-{b}" for a, b in _spans(sorted(rows[r])))
            lines.append(f"row {r}: {spans}")
    return "".join(line + "\n" for line in lines)


def export_stencil(stencil: PatchStencil, path) -> tuple[Path, Path]:
    """Write ``<path>.pbm`` and ``<path>.txt``; returns both paths."""
    base = Path(path)
    if base.suffix in (".pbm", ".txt"):
        base = base.with_suffix("")
    pbm, txt = base.with_suffix(".pbm"), base.with_suffix(".txt")
    write_pbm(pbm, stencil.grid)
    try:
        with open(txt, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(manifest_text(stencil))
    except OSError as exc:
        raise OSError(f"cannot write manifest {os.fspath(txt)}: {exc.strerror}") from exc
    return pbm, txt


def parse_manifest(text: str, shape: tuple[int, int]) -> tuple[np.ndarray, list[tuple]]:
    """Re-rasterize a manifest.

    Returns the grid and a list of ``(id, bbox, area)`` headers.
    """
    grid = np.zeros(shape)
    headers = []
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        try:
            if fields[0] == "component":
                if len(fields) != 9 or fields[2] != "bbox" or fields[7] != "area":
                    raise ValueError("bad component header")
                headers.append((int(fields[1]), tuple(int(f) for f in fields[3:7]), int(fields[8])))
            elif fields[0] == "row":
                if not headers:
                    raise ValueError("row before any component")
                r = int(fields[1].rstrip(":"))
                for span in "".join(fields[2:]).split(","):
                    a, b = (int(v) for v in span.split("-"))
                    grid[r, a : b + 1] = 1.0
            else:
                raise ValueError(f"unknown record {fields[0]!r}")
        except (ValueError, IndexError) as exc:
            raise ValueError(f"manifest line {lineno}: {exc}") from exc
    return grid, headers


def import_stencil(path) -> tuple[np.ndarray, np.ndarray]:
    """Read back the bitmap and the grid rebuilt from the manifest."""
    base = Path(path)
    if base.suffix in (".pbm", ".txt"):
        base = base.with_suffix("")
    bitmap = read_pbm(base.with_suffix(".pbm"))
    text = base.with_suffix(".txt").read_text(encoding="utf-8")
    grid, _ = parse_manifest(text, bitmap.shape)
    return bitmap, grid
