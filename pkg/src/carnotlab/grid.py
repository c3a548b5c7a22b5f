"""Rectilinear spatial grids and time-dependent grid functions."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .exact import as_fraction, rational_gcd
from .group import CarnotGroup
from .poly import GradedPoly


@dataclass(frozen=True)
class Grid:
    """Uniform box grid; node ``i`` on axis ``k`` sits at ``lower[k] + i * spacing[k]``."""

    lower: tuple[float, ...]
    spacing: tuple[float, ...]
    shape: tuple[int, ...]
    group_name: str = ""

    def __post_init__(self):
        if not (len(self.lower) == len(self.spacing) == len(self.shape)):
            raise ValueError("lower, spacing and shape must have equal length")
        if any(h <= 0 for h in self.spacing) or any(n < 1 for n in self.shape):
            raise ValueError("spacings must be positive and shapes at least 1")

    @classmethod
    def symmetric(cls, half_extent: Sequence[float], spacing: Sequence[float], group_name: str = "") -> "Grid":
        """Smallest node-centred box with a node at 0 covering ``[-half, half]`` per axis."""
        lower, shape = [], []
        for a, h in zip(half_extent, spacing):
            n = int(math.ceil(a / h - 1e-9))
            lower.append(-n * h)
            shape.append(2 * n + 1)
        return cls(tuple(lower), tuple(float(h) for h in spacing), tuple(shape), group_name)

    @classmethod
    def for_cylinder(
        cls,
        g: CarnotGroup,
        radius: float,
        h: float,
        margin: int = 2,
        spacing: Sequence[float] | None = None,
    ) -> "Grid":
        """Box around the gauge ball of ``radius`` plus ``margin`` cells per axis.

        The coordinate of weight ``w`` ranges over ``|x| <= radius**w``.  By
        default spacings come from :func:`lattice_spacings`.
        """
        if spacing is None:
            spacing = lattice_spacings(g, h)
        half = [radius**w + margin * hk for w, hk in zip(g.weights, spacing)]
        return cls.symmetric(half, spacing, g.name)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def upper(self) -> tuple[float, ...]:
        return tuple(lo + (n - 1) * h for lo, h, n in zip(self.lower, self.spacing, self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self) -> list[np.ndarray]:
        return [lo + h * np.arange(n) for lo, h, n in zip(self.lower, self.spacing, self.shape)]

    def nodes(self) -> np.ndarray:
        """All nodes as an ``(size, ndim)`` array in C order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def fractional_index(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return (pts - np.asarray(self.lower)) / np.asarray(self.spacing)

    def contains(self, pts, tol: float = 1e-9) -> np.ndarray:
        f = self.fractional_index(pts)
        return np.all((f >= -tol) & (f <= np.asarray(self.shape) - 1 + tol), axis=-1)

    def subgrid(self, slices: Sequence[slice]) -> "Grid":
        lower, shape = [], []
        for s, lo, h, n in zip(slices, self.lower, self.spacing, self.shape):
            start, stop, step = s.indices(n)
            if step != 1:
                raise ValueError("subgrid slices must have unit step")
            lower.append(lo + start * h)
            shape.append(stop - start)
        return Grid(tuple(lower), self.spacing, tuple(shape), self.group_name)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "spacing": list(self.spacing), "shape": list(self.shape), "group": self.group_name}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls(tuple(d["lower"]), tuple(d["spacing"]), tuple(d["shape"]), d.get("group", ""))


def translation_shift_polys(g: CarnotGroup, direction: Sequence) -> list[GradedPoly]:
    """``x . exp(h v) - x`` as polynomials in ``(x, h)``; ``h`` is the last variable (weight 1).

    ``v`` may list only the leading (horizontal) components.
    """
    w = g.weights + (1,)
    n = g.N
    hvar = GradedPoly.variable(w, n)
    direction = list(direction) + [0] * (n - len(direction))
    subs = [GradedPoly.variable(w, j) for j in range(n)] + [hvar * as_fraction(v) for v in direction]
    return [t.compose(subs) - GradedPoly.variable(w, j) for j, t in enumerate(g.bch)]


def lattice_spacings(g: CarnotGroup, h: float, directions: Sequence[Sequence] | None = None) -> tuple[float, ...]:
    """Spacings ``kappa_k h^w_k`` so that translating a node by ``exp(+-h v)`` lands on a node.

    ``directions`` defaults to the horizontal axes and their pairwise sums and
    differences.  Layer-1 spacing is ``h``; each higher coordinate gets the
    rational gcd of every shift coefficient (scaled by the spacings already
    chosen), which makes all shifts integer multiples of the spacing.
    """
    if directions is None:
        directions = default_directions(g.m1)
    n = g.N
    kappa: list[Fraction] = [Fraction(1) if w == 1 else None for w in g.weights]
    shifts = [translation_shift_polys(g, v) for v in directions]
    shifts += [translation_shift_polys(g, [-c for c in v]) for v in directions]
    for layer in range(2, g.step + 1):
        for c in range(n):
            if g.weights[c] != layer:
                continue
            vals = []
            for sp in shifts:
                for e, coef in sp[c].terms.items():
                    s = as_fraction(coef)
                    for j in range(n):
                        if e[j]:
                            s *= kappa[j] ** e[j]
                    vals.append(s)
            kap = rational_gcd(vals)
            kappa[c] = kap if kap != 0 else Fraction(1)
    return tuple(float(k) * h**w for k, w in zip(kappa, g.weights))


def default_directions(m1: int) -> list[tuple[int, ...]]:
    """Horizontal unit vectors then ``e_i + e_j`` and ``e_i - e_j`` for ``i < j``."""
    dirs = []
    for i in range(m1):
        v = [0] * m1
        v[i] = 1
        dirs.append(tuple(v))
    for i in range(m1):
        for j in range(i + 1, m1):
            v = [0] * m1
            v[i], v[j] = 1, 1
            dirs.append(tuple(v))
            v = [0] * m1
            v[i], v[j] = 1, -1
            dirs.append(tuple(v))
    return dirs


@dataclass
class GridFunction:
    """Values on ``grid`` at the time levels ``times``; ``values`` has shape ``(T, *grid.shape)``."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.values = np.asarray(self.values, dtype=float)
        want = (len(self.times),) + tuple(self.grid.shape)
        if self.values.shape != want:
            raise ValueError(f"values shape {self.values.shape} does not match grid/time shape {want}")

    @classmethod
    def from_callable(cls, grid: Grid, times, fn, meta=None) -> "GridFunction":
        """Sample ``fn(points)`` with points of shape ``(size, ndim + 1)``."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        nodes = grid.nodes()
        vals = []
        for t in times:
            pts = np.concatenate([nodes, np.full((len(nodes), 1), t)], axis=1)
            vals.append(np.asarray(fn(pts), dtype=float).reshape(grid.shape))
        return cls(grid, times, np.stack(vals), dict(meta or {}))

    @property
    def n_levels(self) -> int:
        return len(self.times)

    def level(self, i: int) -> np.ndarray:
        return self.values[i]

    def spacetime_nodes(self) -> np.ndarray:
        """All (node, time) pairs as ``(T * size, ndim + 1)``, level-major."""
        nodes = self.grid.nodes()
        out = np.empty((self.n_levels, len(nodes), self.grid.ndim + 1))
        out[:, :, :-1] = nodes
        out[:, :, -1] = self.times[:, None]
        return out.reshape(-1, self.grid.ndim + 1)

    def interpolator(self):
        from scipy.interpolate import RegularGridInterpolator

        axes = self.grid.axes()
        if self.n_levels == 1:
            return RegularGridInterpolator(axes, self.values[0], bounds_error=True)
        return RegularGridInterpolator([self.times] + axes, self.values, bounds_error=True)

    def evaluate(self, pts) -> np.ndarray:
        """Multilinear interpolation at space-time points ``(..., ndim + 1)``."""
        pts = np.asarray(pts, dtype=float)
        interp = self.interpolator()
        flat = pts.reshape(-1, pts.shape[-1])
        if self.n_levels == 1:
            out = interp(flat[:, :-1])
        else:
            out = interp(np.concatenate([flat[:, -1:], flat[:, :-1]], axis=1))
        return out.reshape(pts.shape[:-1])

    __call__ = evaluate

    # -- persistence ----------------------------------------------------------
    def save(self, path) -> tuple[Path, Path]:
        """Write ``<path>.json`` (header) and ``<path>.bin`` (little-endian float64)."""
        path = Path(path)
        head = path.with_suffix(".json")
        data = path.with_suffix(".bin")
        header = {
            "grid": self.grid.to_dict(),
            "times": [float(t) for t in self.times],
            "shape": list(self.values.shape),
            "dtype": "<f8",
            "meta": self.meta,
        }
        head.write_text(json.dumps(header, indent=2, sort_keys=True))
        self.values.astype("<f8").tofile(data)
        return head, data

    @classmethod
    def load(cls, path) -> "GridFunction":
        path = Path(path)
        header = json.loads(path.with_suffix(".json").read_text())
        vals = np.fromfile(path.with_suffix(".bin"), dtype=header["dtype"]).reshape(header["shape"])
        return cls(Grid.from_dict(header["grid"]), np.asarray(header["times"]), vals, header.get("meta", {}))

    def export_csv_slice(self, path, level: int = -1, fixed: dict[int, int] | None = None) -> Path:
        """CSV of one time level; axes listed in ``fixed`` are pinned to a node index."""
        import csv

        fixed = fixed or {}
        idx = tuple(fixed.get(k, slice(None)) for k in range(self.grid.ndim))
        sub = self.values[level][idx]
        axes = [a for k, a in enumerate(self.grid.axes()) if k not in fixed]
        free = [k for k in range(self.grid.ndim) if k not in fixed]
        mesh = np.meshgrid(*axes, indexing="ij")
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{k + 1}" for k in free] + ["value"])
            for row in zip(*(m.ravel() for m in mesh), sub.ravel()):
                w.writerow([repr(float(v)) for v in row])
        return path
