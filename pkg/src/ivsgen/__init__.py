"""Controllable implied-volatility-surface generation toolkit.

Synthesizes IVS datasets from Heston/SABR pricing, trains a
feature-controllable VAE over them, audits static-arbitrage conditions
and repairs violating surfaces by latent-space optimization.
"""

from ivsgen.surfaces import GridSpec, IVSurface, TotalVarianceSurface, make_grid

__all__ = ["GridSpec", "IVSurface", "TotalVarianceSurface", "make_grid"]
