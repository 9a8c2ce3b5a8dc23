"""Uniform cell-centred velocity grids carrying nonnegative distributions."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

GRID_FORMAT_VERSION = 1


@dataclass
class GridDistribution:
    dimension: int
    M: int
    V_max: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.M,) * self.dimension:
            raise ValueError(f"values shape {self.values.shape} != {(self.M,) * self.dimension}")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite and nonnegative")

    @property
    def h(self):
        return 2.0 * self.V_max / self.M

    @property
    def cell_volume(self):
        return self.h ** self.dimension

    def axis(self):
        return axis_nodes(self.M, self.V_max)

    def velocities(self):
        """Array of shape (M,)*N + (N,)."""
        ax = self.axis()
        return np.stack(np.meshgrid(*([ax] * self.dimension), indexing="ij"), axis=-1)

    def speed2(self):
        ax2 = self.axis() ** 2
        out = np.zeros((self.M,) * self.dimension)
        for d in range(self.dimension):
            shape = [1] * self.dimension
            shape[d] = self.M
            out = out + ax2.reshape(shape)
        return out

    def mass(self):
        return float(self.values.sum() * self.cell_volume)

    def with_values(self, values):
        return GridDistribution(self.dimension, self.M, self.V_max, values)

    @classmethod
    def from_function(cls, fn, dimension, M, V_max):
        """fn maps an (..., N) velocity array to values."""
        ax = axis_nodes(M, V_max)
        v = np.stack(np.meshgrid(*([ax] * dimension), indexing="ij"), axis=-1)
        return cls(dimension, M, V_max, np.asarray(fn(v), dtype=float))


def axis_nodes(M, V_max):
    h = 2.0 * V_max / M
    return -V_max + (np.arange(M) + 0.5) * h


def maxwellian(v, rho=1.0, theta=1.0, center=None):
    v = np.asarray(v, dtype=float)
    N = v.shape[-1]
    d = v if center is None else v - np.asarray(center, dtype=float)
    s2 = np.sum(d * d, axis=-1)
    return rho * np.exp(-s2 / (2.0 * theta)) / (2.0 * math.pi * theta) ** (N / 2.0)


def save_grid(grid, path):
    header = {"format_version": GRID_FORMAT_VERSION, "dimension": grid.dimension,
              "M": grid.M, "V_max": grid.V_max, "dtype": "<f8", "order": "C"}
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(np.ascontiguousarray(grid.values, dtype="<f8").tobytes())


def load_grid(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("format_version") != GRID_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported grid format_version {header.get('format_version')}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    N, M = int(header["dimension"]), int(header["M"])
    return GridDistribution(N, M, float(header["V_max"]), data.reshape((M,) * N).copy())


def local_functionals(f: GridDistribution, p=None, weight_exponent=2.0):
    """Midpoint-rule rho, e, e', h, L^p norm and the W^{2,inf} surrogate w.

    e' uses the weight |v|^{weight_exponent} (pass gamma_tilde of the kernel).
    """
    vals = f.values
    dv = f.cell_volume
    s2 = f.speed2()
    rho = float(vals.sum() * dv)
    e = float((vals * s2).sum() * dv)
    eprime = float((vals * s2 ** (weight_exponent / 2.0)).sum() * dv)
    pos = vals > 0
    h = float(-(vals[pos] * np.log(vals[pos])).sum() * dv)
    out = {"rho": rho, "e": e, "eprime": eprime, "h": h, "w": w_surrogate(f)}
    if p is not None:
        out["lp"] = float(((vals ** p).sum() * dv) ** (1.0 / p))
        out["p"] = float(p)
    return out


def w_surrogate(f: GridDistribution):
    """max|f| + max of all first and second centred differences (one-cell stencil)."""
    vals = f.values
    h = f.h
    N = f.dimension
    w = float(vals.max()) if vals.size else 0.0
    if f.M < 3:
        return w
    first = 0.0
    second = 0.0
    for i in range(N):
        fi = np.moveaxis(vals, i, 0)
        d1 = (fi[2:] - fi[:-2]) / (2 * h)
        first = max(first, float(np.abs(d1).max()))
        d2 = (fi[2:] - 2 * fi[1:-1] + fi[:-2]) / h ** 2
        second = max(second, float(np.abs(d2).max()))
        for j in range(i + 1, N):
            g = np.moveaxis(vals, (i, j), (0, 1))
            dij = (g[2:, 2:] - g[2:, :-2] - g[:-2, 2:] + g[:-2, :-2]) / (4 * h * h)
            second = max(second, float(np.abs(dij).max()))
    return w + first + second
