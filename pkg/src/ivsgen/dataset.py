"""Labeled training-corpus manufacture.

Heston surfaces are priced with the Fourier-cosine expansion and
inverted node by node; SABR surfaces come straight from the Hagan
approximation.  Parameters are drawn uniformly inside per-model boxes;
each sample owns an RNG stream derived from (seed, index) so builds are
deterministic regardless of scheduling.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ivsgen import pricing
from ivsgen.errors import NumericalError
from ivsgen.features import FEATURE_NAMES, FeatureVector, extract_features_matrix
from ivsgen.surfaces import GridSpec, IVSurface, make_grid, write_surface_set

log = logging.getLogger(__name__)

# Parameter boxes for the default corpus (rate fixed at 0, s0 = 1).
HESTON_BOX = {
    "rho": (-0.9, -0.1),
    "v_bar": (0.1, 0.3),
    "kappa": (1.0, 2.0),
    "gamma": (0.1, 0.9),
}
SABR_BOX = {
    "beta": (0.1, 1.0),
    "alpha": (0.1, 0.5),
    "rho": (-0.9, 0.9),
    "gamma": (0.1, 0.9),
}

MAX_RETRIES = 10


@dataclass
class SamplerConfig:
    n_heston: int = 1000
    n_sabr: int = 1000
    heston_box: dict = field(default_factory=lambda: dict(HESTON_BOX))
    sabr_box: dict = field(default_factory=lambda: dict(SABR_BOX))
    grid: GridSpec = field(default_factory=make_grid)
    seed: int = 0

    def __post_init__(self):
        if self.n_heston + self.n_sabr < 1:
            raise ValueError("need at least one sample")
        if self.n_heston < 0 or self.n_sabr < 0:
            raise ValueError("sample counts must be non-negative")


def sample_heston_surface(p: pricing.HestonParams, grid: GridSpec) -> IVSurface:
    """COS prices then implied vol at every node."""
    prices = pricing.heston_call_surface(p, grid)
    strikes = p.s0 * np.exp(grid.m_values)[None, :]
    taus = grid.tau_values[:, None]
    try:
        vols = pricing.implied_vol_vector(prices, p.s0, strikes, p.rate, taus)
    except (ValueError, NumericalError) as exc:
        raise NumericalError(f"Heston surface inversion failed: {exc}") from exc
    return IVSurface(grid=grid, values=vols)


def sample_sabr_surface(p: pricing.SabrParams, grid: GridSpec) -> IVSurface:
    """Pointwise Hagan evaluation with strikes K = f0 * e^m."""
    strikes = p.f0 * np.exp(grid.m_values)
    vols = np.stack(
        [pricing.sabr_implied_vol(p, strikes, float(tau)) for tau in grid.tau_values]
    )
    return IVSurface(grid=grid, values=vols)


def _draw_heston(rng, box) -> pricing.HestonParams:
    draw = {k: rng.uniform(*bounds) for k, bounds in box.items()}
    # table omits v0: stationary start v0 = v_bar
    return pricing.HestonParams(
        s0=1.0, v0=draw["v_bar"], kappa=draw["kappa"], v_bar=draw["v_bar"],
        gamma=draw["gamma"], rho=draw["rho"], rate=0.0,
    )


def _draw_sabr(rng, box) -> pricing.SabrParams:
    draw = {k: rng.uniform(*bounds) for k, bounds in box.items()}
    return pricing.SabrParams(
        f0=1.0, alpha=draw["alpha"], beta=draw["beta"], rho=draw["rho"],
        gamma=draw["gamma"],
    )


@dataclass
class DatasetBuildResult:
    surfaces: list[IVSurface]
    labels: list[FeatureVector]
    stats: dict
    retries: int


def build_dataset(cfg: SamplerConfig, out_dir=None) -> DatasetBuildResult:
    """Sample, price, invert, label; optionally persist as ``.ivsd``.

    Per-sample failures are logged and the sample redrawn (at most
    MAX_RETRIES times) from the same stream, so the build stays
    deterministic.  Writes ``stats.json`` next to the dataset when
    ``out_dir`` is given.
    """
    surfaces: list[IVSurface] = []
    retries = 0
    total = cfg.n_heston + cfg.n_sabr
    for index in range(total):
        rng = np.random.default_rng([cfg.seed, index])
        is_heston = index < cfg.n_heston
        for attempt in range(MAX_RETRIES + 1):
            try:
                if is_heston:
                    surfaces.append(
                        sample_heston_surface(_draw_heston(rng, cfg.heston_box), cfg.grid)
                    )
                else:
                    surfaces.append(
                        sample_sabr_surface(_draw_sabr(rng, cfg.sabr_box), cfg.grid)
                    )
                break
            except (ValueError, NumericalError) as exc:
                retries += 1
                log.warning("sample %d attempt %d failed: %s", index, attempt, exc)
        else:
            raise NumericalError(
                f"sample {index} failed after {MAX_RETRIES} retries"
            )

    flat = np.stack([s.flatten() for s in surfaces])
    feat = extract_features_matrix(flat, cfg.grid, FEATURE_NAMES)
    labels = [FeatureVector(names=FEATURE_NAMES, values=row) for row in feat]
    stats = {
        "count": total,
        "retries": retries,
        "features": {
            name: {
                "min": float(feat[:, k].min()),
                "mean": float(feat[:, k].mean()),
                "max": float(feat[:, k].max()),
                "sd": float(feat[:, k].std()),
            }
            for k, name in enumerate(FEATURE_NAMES)
        },
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        write_surface_set(out_dir, surfaces, labels)
        (out_dir / "stats.json").write_text(json.dumps(stats, indent=2))
    return DatasetBuildResult(surfaces=surfaces, labels=labels, stats=stats, retries=retries)
