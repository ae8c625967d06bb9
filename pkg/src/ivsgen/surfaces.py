"""Core grid and surface types plus the ``.ivsd`` file format.

A surface lives on a fixed (log-moneyness x maturity) grid.  The
normative flat layout of a surface is row-major with the maturity index
outer and the moneyness index inner; every other module relies on that
ordering.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ivsgen.errors import FormatError

IVSD_VERSION = 1

# Default grid: 28 x 28 nodes, m in [-0.27, 0.27], tau in [0.1, 0.6].
DEFAULT_N = 28
DEFAULT_M_RANGE = (-0.27, 0.27)
DEFAULT_TAU_RANGE = (0.1, 0.6)


@dataclass(frozen=True)
class GridSpec:
    """Ordered log-moneyness and maturity axes of a surface grid."""

    m_values: np.ndarray
    tau_values: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m_values, dtype=np.float64)
        tau = np.asarray(self.tau_values, dtype=np.float64)
        m.setflags(write=False)
        tau.setflags(write=False)
        object.__setattr__(self, "m_values", m)
        object.__setattr__(self, "tau_values", tau)
        if m.ndim != 1 or tau.ndim != 1:
            raise ValueError("grid axes must be 1-D")
        if np.any(np.diff(m) <= 0):
            raise ValueError("m_values must be strictly increasing")
        if np.any(np.diff(tau) <= 0):
            raise ValueError("tau_values must be strictly increasing")
        if tau[0] <= 0:
            raise ValueError("all tau must be positive")

    @property
    def n_m(self) -> int:
        return self.m_values.size

    @property
    def n_tau(self) -> int:
        return self.tau_values.size

    @property
    def size(self) -> int:
        return self.n_m * self.n_tau

    def __eq__(self, other) -> bool:
        if not isinstance(other, GridSpec):
            return NotImplemented
        return np.array_equal(self.m_values, other.m_values) and np.array_equal(
            self.tau_values, other.tau_values
        )

    def __hash__(self):
        return hash((self.m_values.tobytes(), self.tau_values.tobytes()))


def make_grid(
    n_m: int = DEFAULT_N,
    m_min: float = DEFAULT_M_RANGE[0],
    m_max: float = DEFAULT_M_RANGE[1],
    n_tau: int = DEFAULT_N,
    tau_min: float = DEFAULT_TAU_RANGE[0],
    tau_max: float = DEFAULT_TAU_RANGE[1],
) -> GridSpec:
    """Build a uniformly spaced grid with endpoints included.

    Counts below 4 are rejected: derivative stencils need at least three
    interior relations per axis.
    """
    if n_m < 4 or n_tau < 4:
        raise ValueError("grid needs at least 4 points per axis")
    if not m_min < m_max:
        raise ValueError("m_min must be < m_max")
    if not 0 < tau_min < tau_max:
        raise ValueError("need 0 < tau_min < tau_max")
    return GridSpec(
        m_values=np.linspace(m_min, m_max, n_m),
        tau_values=np.linspace(tau_min, tau_max, n_tau),
    )


@dataclass(frozen=True)
class IVSurface:
    """Implied volatilities sigma(m_i, tau_j) on a grid.

    ``values`` has shape (n_tau, n_m); rows index maturity.
    """

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if v.shape != (self.grid.n_tau, self.grid.n_m):
            raise ValueError(
                f"values shape {v.shape} does not match grid "
                f"({self.grid.n_tau}, {self.grid.n_m})"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("surface values must be finite")
        if np.any(v <= 0):
            raise ValueError("surface values must be positive")

    def flatten(self) -> np.ndarray:
        """Normative x-vector: tau outer, m inner (row-major)."""
        return self.values.ravel()


def surface_from_flat(grid: GridSpec, flat: np.ndarray) -> IVSurface:
    """Inverse of :meth:`IVSurface.flatten`."""
    flat = np.asarray(flat, dtype=np.float64)
    if flat.shape != (grid.size,):
        raise ValueError(f"expected flat length {grid.size}, got {flat.shape}")
    return IVSurface(grid=grid, values=flat.reshape(grid.n_tau, grid.n_m))


@dataclass(frozen=True)
class TotalVarianceSurface:
    """Total implied variance w(m, tau) = sigma^2(m, tau) * tau."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if v.shape != (self.grid.n_tau, self.grid.n_m):
            raise ValueError("values shape does not match grid")
        if np.any(v <= 0):
            raise ValueError("total variance must be positive")


def total_variance(s: IVSurface) -> TotalVarianceSurface:
    """Pointwise w = sigma^2 * tau."""
    w = s.values**2 * s.grid.tau_values[:, None]
    return TotalVarianceSurface(grid=s.grid, values=w)


# --------------------------------------------------------------------------
# .ivsd serialization: manifest.json + data.bin (little-endian f64) in a dir.
# --------------------------------------------------------------------------


def write_surface_set(path, surfaces, labels=None) -> None:
    """Write surfaces (and optional feature labels) losslessly to ``path``.

    ``labels`` is a list of :class:`ivsgen.features.FeatureVector` aligned
    with ``surfaces``; all labels must share one feature-name set.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if surfaces:
        grid = surfaces[0].grid
        for s in surfaces:
            if s.grid != grid:
                raise ValueError("all surfaces must share one grid")
    else:
        grid = make_grid()

    feature_names: list[str] = []
    blocks = [s.flatten() for s in surfaces]
    if labels is not None:
        if len(labels) != len(surfaces):
            raise ValueError("labels must align with surfaces")
        if labels:
            feature_names = list(labels[0].names)
            for lab in labels:
                if list(lab.names) != feature_names:
                    raise ValueError("all labels must share one feature set")
            blocks.append(np.concatenate([lab.values for lab in labels]))

    blob = (
        np.concatenate(blocks).astype("<f8") if blocks else np.empty(0, dtype="<f8")
    )
    manifest = {
        "version": IVSD_VERSION,
        "grid": {
            "m_values": grid.m_values.tolist(),
            "tau_values": grid.tau_values.tolist(),
        },
        "count": len(surfaces),
        "feature_names": feature_names,
        "float_format": "f64le",
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))
    (path / "data.bin").write_bytes(blob.tobytes())


def read_surface_set(path):
    """Read a ``.ivsd`` directory back into (surfaces, labels-or-None)."""
    from ivsgen.features import FeatureVector  # cycle-free at call time

    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"no manifest.json under {path}") from exc
    if manifest.get("version") != IVSD_VERSION:
        raise FormatError(
            f"unsupported version {manifest.get('version')!r}, expected {IVSD_VERSION}"
        )
    if manifest.get("float_format") != "f64le":
        raise FormatError(f"unsupported float format {manifest.get('float_format')!r}")
    grid = GridSpec(
        m_values=np.array(manifest["grid"]["m_values"]),
        tau_values=np.array(manifest["grid"]["tau_values"]),
    )
    count = int(manifest["count"])
    feature_names = list(manifest["feature_names"])

    raw = (path / "data.bin").read_bytes()
    expected = 8 * (count * grid.size + count * len(feature_names))
    if len(raw) != expected:
        raise FormatError(
            f"data.bin has {len(raw)} bytes, expected {expected} "
            f"({count} surfaces of {grid.size} nodes, {len(feature_names)} features)"
        )
    data = np.frombuffer(raw, dtype="<f8")
    if np.any(np.isnan(data)):
        raise FormatError("NaN detected in data.bin")

    surf_block = data[: count * grid.size].reshape(count, grid.size)
    surfaces = [surface_from_flat(grid, row) for row in surf_block]
    labels = None
    if feature_names:
        lab_block = data[count * grid.size :].reshape(count, len(feature_names))
        labels = [
            FeatureVector(names=tuple(feature_names), values=row.copy())
            for row in lab_block
        ]
    return surfaces, labels
