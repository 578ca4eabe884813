"""2.5D terrain model: height grid, serialization, scenario generators.

Grids are row-major float64 arrays indexed [row, col]; NaN marks unknown
cells.  `origin` is the world xy of cell (0, 0)'s center, +x along columns,
+y along rows.  Downsampling max-pools so coarse maps stay conservative.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

DEFAULT_RESOLUTION = 0.025

# scenario feature boundaries snap to this grid so factor-2/4 pooling never
# splits a feature across coarse cells
FEATURE_ALIGN = 0.10


class HeightSample(NamedTuple):
    status: str  # "height" | "unknown" | "out_of_bounds"
    height: float | None


@dataclass
class HeightMap:
    cells: np.ndarray
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        self.cells = np.asarray(self.cells, dtype=np.float64)
        if self.cells.ndim != 2:
            raise ValueError("cells must be 2D (rows, cols)")
        if not (self.resolution > 0.0 and math.isfinite(self.resolution)):
            raise ValueError("resolution must be positive and finite")
        known = self.cells[~np.isnan(self.cells)]
        if known.size and not np.all(np.isfinite(known)):
            raise ValueError("known heights must be finite (NaN marks unknown)")

    @property
    def n_rows(self) -> int:
        return self.cells.shape[0]

    @property
    def n_cols(self) -> int:
        return self.cells.shape[1]

    @property
    def unknown_mask(self) -> np.ndarray:
        return np.isnan(self.cells)

    def world_to_grid(self, x: float, y: float) -> tuple[int, int]:
        """Nearest cell (col, row); may be out of bounds."""
        col = int(round((x - self.origin[0]) / self.resolution))
        row = int(round((y - self.origin[1]) / self.resolution))
        return col, row

    def grid_to_world(self, col: int, row: int) -> tuple[float, float]:
        return (
            self.origin[0] + col * self.resolution,
            self.origin[1] + row * self.resolution,
        )

    def in_bounds(self, col: int, row: int) -> bool:
        return 0 <= col < self.n_cols and 0 <= row < self.n_rows

    def sample(self, x: float, y: float) -> HeightSample:
        """Height at the nearest cell, tagging unknown and out-of-bounds distinctly."""
        col, row = self.world_to_grid(x, y)
        if not self.in_bounds(col, row):
            return HeightSample("out_of_bounds", None)
        h = self.cells[row, col]
        if np.isnan(h):
            return HeightSample("unknown", None)
        return HeightSample("height", float(h))

    def height_at(self, x: float, y: float, default: float = math.nan) -> float:
        s = self.sample(x, y)
        return s.height if s.status == "height" else default

    def extent(self) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max) of covered area, cell edges."""
        half = self.resolution / 2.0
        return (
            self.origin[0] - half,
            self.origin[1] - half,
            self.origin[0] + (self.n_cols - 0.5) * self.resolution,
            self.origin[1] + (self.n_rows - 0.5) * self.resolution,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HeightMap):
            return NotImplemented
        if self.resolution != other.resolution or self.origin != other.origin:
            return False
        if self.cells.shape != other.cells.shape:
            return False
        a, b = self.cells, other.cells
        both_nan = np.isnan(a) & np.isnan(b)
        return bool(np.all(both_nan | (a == b)))


# --------------------------------------------------------------------------
# serialization
#
# Format A: binary 16-bit PGM (P5) with metadata comment lines.  Pixel 0 is
# reserved for unknown; height = (value - 1) * scale + offset.
# Format B: JSON grid, unknown as null, bit-exact for any float64 heights.
# --------------------------------------------------------------------------

PGM_MAXVAL = 65535


def save_pgm(m: HeightMap, path: str | Path, scale: float = 0.001) -> None:
    known = m.cells[~np.isnan(m.cells)]
    offset = float(known.min()) if known.size else 0.0
    values = np.zeros(m.cells.shape, dtype=np.uint16)
    if known.size:
        q = np.round((m.cells - offset) / scale)
        q = np.where(np.isnan(m.cells), -1.0, q)
        if q.max() > PGM_MAXVAL - 1:
            raise ValueError(
                f"height span {known.max() - offset:.3f} m exceeds 16-bit range at scale {scale}"
            )
        values = np.where(np.isnan(m.cells), 0, q.astype(np.int64) + 1).astype(np.uint16)
    header = (
        b"P5\n"
        + f"# resolution {m.resolution!r}\n".encode()
        + f"# origin {m.origin[0]!r} {m.origin[1]!r}\n".encode()
        + f"# scale {scale!r}\n".encode()
        + f"# offset {offset!r}\n".encode()
        + f"{m.n_cols} {m.n_rows}\n{PGM_MAXVAL}\n".encode()
    )
    Path(path).write_bytes(header + values.astype(">u2").tobytes())


def load_pgm(path: str | Path) -> HeightMap:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise ValueError("not a binary PGM (P5) file")
    meta: dict[str, str] = {}
    pos = 2
    tokens: list[bytes] = []
    while len(tokens) < 3:
        # skip whitespace, collect comments, then one token
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise ValueError("truncated PGM header")
        if raw[pos : pos + 1] == b"#":
            end = raw.index(b"\n", pos)
            comment = raw[pos + 1 : end].decode("ascii", "replace").strip()
            m = re.match(r"(\w+)\s+(.*)", comment)
            if m:
                meta[m.group(1)] = m.group(2)
            pos = end + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval per PGM spec
    n_cols, n_rows = int(tokens[0]), int(tokens[1])
    maxval = int(tokens[2])
    if maxval != PGM_MAXVAL:
        raise ValueError(f"expected 16-bit PGM (maxval {PGM_MAXVAL}), got {maxval}")
    for key in ("resolution", "scale", "offset"):
        if key not in meta:
            raise ValueError(f"missing '# {key}' metadata comment")
    if "origin" not in meta:
        raise ValueError("missing '# origin' metadata comment")
    values = np.frombuffer(raw, dtype=">u2", count=n_cols * n_rows, offset=pos)
    values = values.reshape(n_rows, n_cols).astype(np.int64)
    scale = float(meta["scale"])
    offset = float(meta["offset"])
    cells = (values - 1) * scale + offset
    cells[values == 0] = np.nan
    ox, oy = (float(v) for v in meta["origin"].split())
    return HeightMap(cells, float(meta["resolution"]), (ox, oy))


def save_json(m: HeightMap, path: str | Path) -> None:
    cells = [None if math.isnan(v) else v for v in m.cells.ravel().tolist()]
    doc = {
        "resolution": m.resolution,
        "origin": [m.origin[0], m.origin[1]],
        "n_cols": m.n_cols,
        "n_rows": m.n_rows,
        "cells": cells,
    }
    Path(path).write_text(json.dumps(doc))


def map_to_dict(m: HeightMap) -> dict:
    return {
        "resolution": m.resolution,
        "origin": [m.origin[0], m.origin[1]],
        "n_cols": m.n_cols,
        "n_rows": m.n_rows,
        "cells": [None if math.isnan(v) else v for v in m.cells.ravel().tolist()],
    }


def map_from_dict(doc: dict) -> HeightMap:
    n_cols, n_rows = int(doc["n_cols"]), int(doc["n_rows"])
    cells = np.array(
        [np.nan if v is None else float(v) for v in doc["cells"]], dtype=np.float64
    )
    if cells.size != n_cols * n_rows:
        raise ValueError("cell count does not match n_cols * n_rows")
    ox, oy = doc["origin"]
    return HeightMap(cells.reshape(n_rows, n_cols), float(doc["resolution"]), (float(ox), float(oy)))


def load_json(path: str | Path) -> HeightMap:
    return map_from_dict(json.loads(Path(path).read_text()))


def save(m: HeightMap, path: str | Path, **kw) -> None:
    p = Path(path)
    if p.suffix == ".pgm":
        save_pgm(m, p, **kw)
    elif p.suffix == ".json":
        save_json(m, p)
    else:
        raise ValueError(f"unsupported map extension {p.suffix!r} (use .pgm or .json)")


def load(path: str | Path) -> HeightMap:
    p = Path(path)
    if p.suffix == ".pgm":
        return load_pgm(p)
    if p.suffix == ".json":
        return load_json(p)
    raise ValueError(f"unsupported map extension {p.suffix!r} (use .pgm or .json)")


# --------------------------------------------------------------------------
# downsampling
# --------------------------------------------------------------------------


def downsample(m: HeightMap, factor: int) -> HeightMap:
    """Max-pool by `factor` (2 or 4).  Ragged edges pad with unknown; a coarse
    cell is unknown only when every covered fine cell is."""
    if factor not in (2, 4):
        raise ValueError("factor must be 2 or 4")
    rows = -(-m.n_rows // factor) * factor
    cols = -(-m.n_cols // factor) * factor
    padded = np.full((rows, cols), np.nan)
    padded[: m.n_rows, : m.n_cols] = m.cells
    blocks = padded.reshape(rows // factor, factor, cols // factor, factor)
    blocks = blocks.transpose(0, 2, 1, 3).reshape(rows // factor, cols // factor, -1)
    known = ~np.isnan(blocks)
    filled = np.where(known, blocks, -np.inf)
    coarse = filled.max(axis=2)
    coarse[~known.any(axis=2)] = np.nan
    origin = (
        m.origin[0] + (factor - 1) / 2.0 * m.resolution,
        m.origin[1] + (factor - 1) / 2.0 * m.resolution,
    )
    return HeightMap(coarse, m.resolution * factor, origin)


# --------------------------------------------------------------------------
# scenario generation
# --------------------------------------------------------------------------

SCENARIO_KINDS = ("flat", "ramp", "gap", "stairs", "step_field", "walls_and_poles")


@dataclass
class ScenarioSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}; pick from {SCENARIO_KINDS}")

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "params": self.params})

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        doc = json.loads(text)
        return cls(doc["kind"], dict(doc.get("params", {})))

    @classmethod
    def parse(cls, text: str) -> "ScenarioSpec":
        """Parse 'name' or 'name:key=val,key=val' (CLI shorthand)."""
        name, _, rest = text.partition(":")
        params: dict = {}
        if rest:
            for pair in rest.split(","):
                key, _, val = pair.partition("=")
                if not _:
                    raise ValueError(f"bad scenario parameter {pair!r} (want key=val)")
                try:
                    params[key.strip()] = json.loads(val)
                except json.JSONDecodeError:
                    params[key.strip()] = val
        return cls(name.strip(), params)


def _aligned(value: float, name: str) -> float:
    snapped = round(value / FEATURE_ALIGN) * FEATURE_ALIGN
    if abs(snapped - value) > 1e-9:
        raise ValueError(f"{name}={value} must be a multiple of {FEATURE_ALIGN} m")
    return snapped


def _grid(length: float, width: float, resolution: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n_cols = int(round(length / resolution))
    n_rows = int(round(width / resolution))
    cells = np.zeros((n_rows, n_cols))
    xs = np.arange(n_cols) * resolution  # cell-center x per column
    ys = np.arange(n_rows) * resolution
    return cells, xs, ys


def generate_scenario(spec: ScenarioSpec, resolution: float = DEFAULT_RESOLUTION) -> HeightMap:
    p = dict(spec.params)
    resolution = float(p.pop("resolution", resolution))
    kind = spec.kind

    if kind == "flat":
        length = _aligned(float(p.pop("length", 7.0)), "length")
        width = _aligned(float(p.pop("width", 4.0)), "width")
        _reject_extras(kind, p)
        cells, _, _ = _grid(length, width, resolution)
        return HeightMap(cells, resolution)

    if kind == "ramp":
        incline = float(p.pop("incline_deg", 20.0))
        ramp_len = _aligned(float(p.pop("ramp_length", 1.2)), "ramp_length")
        approach = _aligned(float(p.pop("approach", 2.5)), "approach")
        platform = _aligned(float(p.pop("platform", 2.5)), "platform")
        width = _aligned(float(p.pop("width", 4.0)), "width")
        _reject_extras(kind, p)
        cells, xs, _ = _grid(approach + ramp_len + platform, width, resolution)
        slope = math.tan(math.radians(incline))
        h = np.clip(xs - approach, 0.0, ramp_len) * slope
        cells[:] = h[np.newaxis, :]
        return HeightMap(cells, resolution)

    if kind == "gap":
        # deep enough that neither wheels nor feet can use the trench floor
        gap_w = _aligned(float(p.pop("width", 0.30)), "width")
        depth = float(p.pop("depth", 0.50))
        approach = _aligned(float(p.pop("approach", 2.5)), "approach")
        runout = _aligned(float(p.pop("runout", 2.5)), "runout")
        map_width = _aligned(float(p.pop("map_width", 4.0)), "map_width")
        _reject_extras(kind, p)
        cells, xs, _ = _grid(approach + gap_w + runout, map_width, resolution)
        in_gap = (xs >= approach - 1e-12) & (xs < approach + gap_w - 1e-12)
        cells[:, in_gap] = -depth
        return HeightMap(cells, resolution)

    if kind == "stairs":
        steps = int(p.pop("steps", 3))
        rise = float(p.pop("rise", 0.20))
        run = _aligned(float(p.pop("run", 0.30)), "run")
        approach = _aligned(float(p.pop("approach", 2.5)), "approach")
        platform = _aligned(float(p.pop("platform", 2.5)), "platform")
        map_width = _aligned(float(p.pop("map_width", 4.0)), "map_width")
        width = p.pop("width", None)  # stair structure width; None = full map
        _reject_extras(kind, p)
        cells, xs, ys = _grid(approach + steps * run + platform, map_width, resolution)
        # column heights: 0 before, i*rise on tread i, steps*rise on the platform
        tread_index = np.clip(np.floor((xs - approach) / run + 1e-9) + 1, 0, steps)
        h = np.where(xs < approach - 1e-12, 0.0, tread_index * rise)
        cells[:] = h[np.newaxis, :]
        if width is not None:
            width = _aligned(float(width), "width")
            y_c = (ys[0] + ys[-1]) / 2.0
            outside = np.abs(ys - y_c) > width / 2.0 + 1e-12
            cells[outside, :] = 0.0
        return HeightMap(cells, resolution)

    if kind == "step_field":
        # the field is a centered patch, not a full-width barrier: footholds
        # inside it are two cells wide, so a barrier that forces all four
        # wheels through it is unsolvable for a longitudinal-step gait
        length = _aligned(float(p.pop("length", 2.0)), "length")
        width = _aligned(float(p.pop("width", 1.2)), "width")
        block = _aligned(float(p.pop("block", 0.20)), "block")
        block_h = float(p.pop("block_height", 0.10))
        seed = int(p.pop("seed", 0))
        approach = _aligned(float(p.pop("approach", 2.5)), "approach")
        runout = _aligned(float(p.pop("runout", 2.5)), "runout")
        map_width = _aligned(float(p.pop("map_width", 4.0)), "map_width")
        _reject_extras(kind, p)
        cells, xs, ys = _grid(approach + length + runout, map_width, resolution)
        n_bx = int(round(length / block))
        n_by = int(round(width / block))
        y_lo = _aligned((map_width - width) / 2.0, "field edge")
        rng = np.random.default_rng(seed)
        pattern = rng.integers(0, 2, size=(n_by, n_bx)).astype(float) * block_h
        bx = np.floor((xs - approach) / block + 1e-9).astype(int)
        by = np.floor((ys - y_lo) / block + 1e-9).astype(int)
        in_x = (bx >= 0) & (bx < n_bx)
        in_y = (by >= 0) & (by < n_by)
        field_cols = np.where(in_x)[0]
        field_rows = np.where(in_y)[0]
        sub = pattern[np.clip(by[field_rows], 0, n_by - 1)][:, bx[field_cols]]
        cells[np.ix_(field_rows, field_cols)] = sub
        return HeightMap(cells, resolution)

    if kind == "walls_and_poles":
        # demo terrain: corridor between two walls, a side ramp, two poles,
        # and an unknown shadow patch behind the far wall
        _reject_extras(kind, p)
        length, width = 8.0, 6.0
        cells, xs, ys = _grid(length, width, resolution)
        X, Y = np.meshgrid(xs, ys)
        wall = 0.5
        cells[(X >= 2.0) & (X < 2.2) & (Y < 2.4)] = wall
        cells[(X >= 4.0) & (X < 4.2) & (Y >= 3.6)] = wall
        ramp_mask = (X >= 5.5) & (X < 6.7) & (Y < 1.5)
        cells[ramp_mask] = ((X - 5.5) * math.tan(math.radians(15.0)))[ramp_mask]
        for px, py in ((3.1, 4.8), (5.2, 2.6)):
            cells[(np.abs(X - px) <= 0.05) & (np.abs(Y - py) <= 0.05)] = wall
        cells[(X >= 4.2) & (X < 4.6) & (Y >= 4.4)] = np.nan
        return HeightMap(cells, resolution)

    raise AssertionError(f"unhandled kind {kind}")


def _reject_extras(kind: str, leftover: dict) -> None:
    if leftover:
        raise ValueError(f"unknown {kind} parameters: {sorted(leftover)}")
