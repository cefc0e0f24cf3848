"""Procedurally generated random-uniform heightfields with continuous queries.

A heightfield is a regular grid of node heights sampled on a quantized noise
lattice. The field is split into a 2x2 grid of segments; each segment is
assigned one sub-terrain (sampled by proportion) whose noise parameters govern
the heights inside it. Near internal segment edges, heights blend linearly
toward the neighboring segment's edge heights over the sub-terrain's border
width, then are re-quantized onto the owning sub-terrain's lattice so every
stored height stays an exact lattice point.

Heights are stored internally as integer multiples of ``vertical_scale``;
everything downstream sees float64 meters. Generation is bitwise-deterministic
for a fixed config: one Philox stream keyed by the terrain seed first draws the
four segment assignments (uniform doubles, segment order (0,0),(0,1),(1,0),
(1,1) over (x-half, y-half)), then one row-major uint64 matrix that indexes
each node's lattice value by modulo reduction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod

SEGMENTS_PER_AXIS = 2


class TerrainConfigError(ValueError):
    """Invalid terrain configuration."""


class TerrainQueryError(ValueError):
    """Height query outside the field's planar extent."""


@dataclass(frozen=True)
class SubTerrainConfig:
    proportion: float = 0.5
    noise_min: float = 0.03
    noise_max: float = 0.07
    noise_step: float = 0.01
    border_width: float = 0.01

    def lattice_size(self) -> int:
        """Number of admissible heights: noise_min, +step, ... while <= noise_max."""
        return int(math.floor((self.noise_max - self.noise_min) / self.noise_step + 1e-9)) + 1


def default_sub_terrains() -> tuple[SubTerrainConfig, SubTerrainConfig]:
    return (
        SubTerrainConfig(proportion=0.5, noise_min=0.03, noise_max=0.07,
                         noise_step=0.01, border_width=0.01),
        SubTerrainConfig(proportion=0.5, noise_min=0.03, noise_max=0.07,
                         noise_step=0.25, border_width=0.25),
    )


@dataclass(frozen=True)
class TerrainConfig:
    vertical_scale: float = 0.005
    horizontal_scale: float = 0.1
    slope_threshold: float = 0.75
    size_x: float = 15.0
    size_y: float = 15.0
    sub_terrains: tuple[SubTerrainConfig, ...] = field(default_factory=default_sub_terrains)
    seed: int = 0

    def validate(self) -> None:
        if self.vertical_scale <= 0 or self.horizontal_scale <= 0:
            raise TerrainConfigError("vertical_scale and horizontal_scale must be > 0")
        if self.slope_threshold <= 0:
            raise TerrainConfigError("slope_threshold must be > 0")
        if self.size_x <= 0 or self.size_y <= 0:
            raise TerrainConfigError("terrain size must be > 0")
        if not self.sub_terrains:
            raise TerrainConfigError("at least one sub-terrain is required")
        total = sum(s.proportion for s in self.sub_terrains)
        if abs(total - 1.0) > 1e-9:
            raise TerrainConfigError(f"sub-terrain proportions sum to {total!r}, expected 1.0")
        for i, s in enumerate(self.sub_terrains):
            if not (0.0 <= s.proportion <= 1.0):
                raise TerrainConfigError(f"sub-terrain {i}: proportion outside [0, 1]")
            if not (0.0 <= s.noise_min <= s.noise_max):
                raise TerrainConfigError(f"sub-terrain {i}: need 0 <= noise_min <= noise_max")
            if s.noise_step <= 0:
                raise TerrainConfigError(f"sub-terrain {i}: noise_step must be > 0")
            if s.border_width < 0:
                raise TerrainConfigError(f"sub-terrain {i}: border_width must be >= 0")
            # Integer-unit storage is exact only when the noise lattice sits on
            # multiples of vertical_scale.
            for name, value in (("noise_min", s.noise_min), ("noise_step", s.noise_step)):
                units = value / self.vertical_scale
                if abs(units - round(units)) > 1e-9:
                    raise TerrainConfigError(
                        f"sub-terrain {i}: {name}={value!r} is not an integer multiple "
                        f"of vertical_scale={self.vertical_scale!r}")


@dataclass(frozen=True)
class Heightfield:
    """Node heights on a regular grid. heights[i, j] sits at planar position
    (origin[0] + i*cell_size, origin[1] + j*cell_size)."""

    heights: np.ndarray
    cell_size: float
    origin: tuple[float, float]

    @property
    def nx(self) -> int:
        return self.heights.shape[0]

    @property
    def ny(self) -> int:
        return self.heights.shape[1]

    def extent(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        return (x0, y0, x0 + (self.nx - 1) * self.cell_size, y0 + (self.ny - 1) * self.cell_size)

    def contains(self, x: float, y: float) -> bool:
        x0, y0, x1, y1 = self.extent()
        eps = 1e-7 * self.cell_size
        return (x0 - eps) <= x <= (x1 + eps) and (y0 - eps) <= y <= (y1 + eps)


def _grid_nodes(cfg: TerrainConfig) -> tuple[int, int]:
    cells_x = round(cfg.size_x / cfg.horizontal_scale)
    cells_y = round(cfg.size_y / cfg.horizontal_scale)
    if cells_x < 2 or cells_y < 2:
        raise TerrainConfigError(
            f"degenerate grid: {cells_x}x{cells_y} cells (need at least 2 per axis)")
    return cells_x + 1, cells_y + 1


def _pick_sub_terrain(u: float, cum: list[float]) -> int:
    for k, edge in enumerate(cum):
        if u < edge:
            return k
    return len(cum) - 1


def _requantize(values_m: np.ndarray, sub: SubTerrainConfig, vs: float) -> np.ndarray:
    """Snap heights in meters onto sub's lattice, returning integer vs-units."""
    min_u = round(sub.noise_min / vs)
    step_u = round(sub.noise_step / vs)
    k = np.rint((values_m - sub.noise_min) / sub.noise_step)
    k = np.clip(k, 0, sub.lattice_size() - 1).astype(np.int64)
    return min_u + k * step_u


def generate_heightfield(cfg: TerrainConfig) -> Heightfield:
    """Sample a heightfield from the config; deterministic in cfg (incl. seed)."""
    cfg.validate()
    nx, ny = _grid_nodes(cfg)
    vs = cfg.vertical_scale
    cell = cfg.horizontal_scale
    gen = rngmod.stream(cfg.seed, rngmod.TERRAIN)

    cum: list[float] = []
    acc = 0.0
    for s in cfg.sub_terrains:
        acc += s.proportion
        cum.append(acc)
    seg_u = gen.random(SEGMENTS_PER_AXIS * SEGMENTS_PER_AXIS)
    seg_sub = [[_pick_sub_terrain(seg_u[2 * si + sj], cum) for sj in range(SEGMENTS_PER_AXIS)]
               for si in range(SEGMENTS_PER_AXIS)]

    raw = gen.integers(0, 1 << 64, size=(nx, ny), dtype=np.uint64, endpoint=False)

    bx, by = nx // 2, ny // 2  # first node index of the upper segment per axis
    units = np.empty((nx, ny), dtype=np.int64)
    for si, xsl in ((0, slice(0, bx)), (1, slice(bx, nx))):
        for sj, ysl in ((0, slice(0, by)), (1, slice(by, ny))):
            sub = cfg.sub_terrains[seg_sub[si][sj]]
            k = (raw[xsl, ysl] % np.uint64(sub.lattice_size())).astype(np.int64)
            units[xsl, ysl] = round(sub.noise_min / vs) + k * round(sub.noise_step / vs)

    _blend_borders(units, cfg, seg_sub, bx, by)

    heights = units.astype(np.float64) * vs
    return Heightfield(heights=heights, cell_size=cell,
                       origin=(-cfg.size_x / 2.0, -cfg.size_y / 2.0))


def _blend_borders(units: np.ndarray, cfg: TerrainConfig,
                   seg_sub: list[list[int]], bx: int, by: int) -> None:
    """Blend node heights toward the neighboring segment's edge heights within
    each sub-terrain's border width of the internal segment boundaries, then
    re-quantize to the owning lattice. x-direction pass first, then y, the
    second pass reading the output of the first."""
    nx, ny = units.shape
    vs = cfg.vertical_scale
    cell = cfg.horizontal_scale

    def blend_axis(axis: int, boundary: int, n_along: int) -> None:
        src = units.astype(np.float64) * vs
        for idx in range(n_along):
            si_here = 0 if idx < boundary else 1
            # distance from the node to the boundary plane between segments
            t = (abs(idx - (boundary - 0.5))) * cell
            edge_idx = boundary - 1 if si_here == 1 else boundary
            for sj, osl in ((0, slice(0, by if axis == 0 else bx)),
                            (1, slice(by if axis == 0 else bx, ny if axis == 0 else nx))):
                sub = (cfg.sub_terrains[seg_sub[si_here][sj]] if axis == 0
                       else cfg.sub_terrains[seg_sub[sj][si_here]])
                if t >= sub.border_width:
                    continue
                alpha = t / sub.border_width
                if axis == 0:
                    mixed = (1.0 - alpha) * src[edge_idx, osl] + alpha * src[idx, osl]
                    units[idx, osl] = _requantize(mixed, sub, vs)
                else:
                    mixed = (1.0 - alpha) * src[osl, edge_idx] + alpha * src[osl, idx]
                    units[osl, idx] = _requantize(mixed, sub, vs)

    blend_axis(0, bx, nx)
    blend_axis(1, by, ny)


def height_at(hf: Heightfield, x: float, y: float) -> float:
    """Bilinear interpolation of the four surrounding node heights; exact at nodes."""
    gx = (x - hf.origin[0]) / hf.cell_size
    gy = (y - hf.origin[1]) / hf.cell_size
    nx, ny = hf.nx, hf.ny
    eps = 1e-7
    if gx < -eps or gx > nx - 1 + eps or gy < -eps or gy > ny - 1 + eps:
        raise TerrainQueryError(f"query ({x!r}, {y!r}) outside field extent {hf.extent()}")
    gx = min(max(gx, 0.0), float(nx - 1))
    gy = min(max(gy, 0.0), float(ny - 1))
    i0 = min(int(gx), nx - 2)
    j0 = min(int(gy), ny - 2)
    tx = gx - i0
    ty = gy - j0
    h = hf.heights
    return ((1.0 - tx) * (1.0 - ty) * h[i0, j0]
            + tx * (1.0 - ty) * h[i0 + 1, j0]
            + (1.0 - tx) * ty * h[i0, j0 + 1]
            + tx * ty * h[i0 + 1, j0 + 1])


def _slope_violators(h: np.ndarray, lim: float) -> np.ndarray:
    """Mark the higher node of every adjacent pair whose measured difference
    exceeds lim. Measured means computed by subtraction, exactly as a
    compliance scan would."""
    bad = np.zeros(h.shape, dtype=bool)
    d = h[1:, :] - h[:-1, :]
    bad[1:, :] |= d > lim
    bad[:-1, :] |= -d > lim
    d = h[:, 1:] - h[:, :-1]
    bad[:, 1:] |= d > lim
    bad[:, :-1] |= -d > lim
    return bad


def clamp_slopes(hf: Heightfield, threshold: float) -> Heightfield:
    """Limit adjacent-node height differences to threshold*cell_size by
    iteratively lowering offending nodes until no pair violates; idempotent
    (bitwise) on already-compliant fields."""
    if threshold <= 0:
        raise TerrainConfigError("slope threshold must be > 0")
    lim = threshold * hf.cell_size
    h = hf.heights.copy()
    while True:
        bad = _slope_violators(h, lim)
        if not bad.any():
            break
        cap = np.full_like(h, np.inf)
        np.minimum(cap[1:, :], h[:-1, :] + lim, out=cap[1:, :])
        np.minimum(cap[:-1, :], h[1:, :] + lim, out=cap[:-1, :])
        np.minimum(cap[:, 1:], h[:, :-1] + lim, out=cap[:, 1:])
        np.minimum(cap[:, :-1], h[:, 1:] + lim, out=cap[:, :-1])
        nh = h.copy()
        nh[bad] = np.minimum(h[bad], cap[bad])
        if np.array_equal(nh, h):
            # capping made no progress (rounding edge); shave one ulp instead
            nh[bad] = np.nextafter(nh[bad], -np.inf)
        h = nh
    return Heightfield(heights=h, cell_size=hf.cell_size, origin=hf.origin)


def write_csv(hf: Heightfield, fp) -> None:
    """Grid CSV: a metadata header (grid sample counts and cell size) followed
    by one line per grid row (fixed i), columns over j."""
    fp.write("x_cells,y_cells,cell_size\n")
    fp.write(f"{hf.nx},{hf.ny},{hf.cell_size!r}\n")
    for i in range(hf.nx):
        fp.write(",".join(repr(v) for v in hf.heights[i].tolist()))
        fp.write("\n")


def write_pgm(hf: Heightfield, fp) -> None:
    """8-bit grayscale preview (plain PGM), heights scaled to [0, 255]."""
    h = hf.heights
    lo, hi = float(h.min()), float(h.max())
    if hi > lo:
        scaled = np.rint((h - lo) / (hi - lo) * 255.0).astype(np.int64)
    else:
        scaled = np.zeros_like(h, dtype=np.int64)
    fp.write(f"P2\n{hf.ny} {hf.nx}\n255\n")
    for i in range(hf.nx):
        fp.write(" ".join(str(v) for v in scaled[i].tolist()))
        fp.write("\n")
