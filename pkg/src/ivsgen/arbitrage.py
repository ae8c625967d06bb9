"""Static-arbitrage detection on grids and the differentiable penalties.

Calendar-spread: total variance w must be non-decreasing in maturity.
Butterfly: the density-positivity function

    f = (1 - m w_m / (2w))^2 - w_m^2/4 (1/w + 1/4) + w_mm / 2

must stay non-negative along every maturity slice.  Derivatives use
spacing-aware stencils: central differences in the interior, first-order
one-sided at the edges.  Everything here is written so the penalty
gradients with respect to the surface values are available analytically
(the repair optimizer differentiates through them).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ivsgen.surfaces import IVSurface, total_variance

GRAD_TOL = 1e-10


def _diff_matrix(points: tuple[float, ...]) -> np.ndarray:
    """First-derivative operator D so that (D @ v) estimates dv/dx.

    Weighted central differences in the interior (exact for quadratics on
    nonuniform grids), first-order one-sided rows at the two edges.
    """
    x = np.asarray(points)
    n = x.size
    d = np.zeros((n, n))
    d[0, 0] = -1.0 / (x[1] - x[0])
    d[0, 1] = 1.0 / (x[1] - x[0])
    d[-1, -2] = -1.0 / (x[-1] - x[-2])
    d[-1, -1] = 1.0 / (x[-1] - x[-2])
    for i in range(1, n - 1):
        hs = x[i] - x[i - 1]
        hd = x[i + 1] - x[i]
        d[i, i - 1] = -hd / (hs * (hs + hd))
        d[i, i] = (hd - hs) / (hs * hd)
        d[i, i + 1] = hs / (hd * (hs + hd))
    return d


@lru_cache(maxsize=32)
def _axis_operators(points: tuple[float, ...]):
    d1 = _diff_matrix(points)
    return d1, d1 @ d1


def _grid_ops(grid):
    d_tau, _ = _axis_operators(tuple(grid.tau_values.tolist()))
    d_m, d_mm = _axis_operators(tuple(grid.m_values.tolist()))
    return d_tau, d_m, d_mm


@dataclass(frozen=True)
class ViolationReport:
    """Per-node diagnostics plus aggregate penalties for one surface."""

    calendar_violations: tuple[tuple[int, int, float], ...]
    butterfly_violations: tuple[tuple[int, int, float], ...]
    l_calendar: float
    l_butterfly: float

    @property
    def is_free(self) -> bool:
        return not self.calendar_violations and not self.butterfly_violations

    def to_dict(self) -> dict:
        return {
            "is_free": self.is_free,
            "l_calendar": self.l_calendar,
            "l_butterfly": self.l_butterfly,
            "calendar_violations": [list(v) for v in self.calendar_violations],
            "butterfly_violations": [list(v) for v in self.butterfly_violations],
        }


def calendar_derivatives(s: IVSurface) -> np.ndarray:
    """dw/dtau estimates at every node, shape (n_tau, n_m)."""
    if s.grid.n_tau < 3:
        raise ValueError("calendar check needs at least 3 maturities")
    w = total_variance(s).values
    d_tau, _, _ = _grid_ops(s.grid)
    return d_tau @ w


def _hinge(x: np.ndarray) -> np.ndarray:
    """max(0, -x) with the detection tolerance absorbed (zero iff no violation)."""
    return np.where(x < -GRAD_TOL, -x, 0.0)


def check_calendar(s: IVSurface):
    """(dw/dtau array, violation list); violation where estimate < -tol."""
    dw = calendar_derivatives(s)
    viol = [
        (int(i_m), int(j_tau), float(-dw[j_tau, i_m]))
        for j_tau, i_m in zip(*np.where(dw < -GRAD_TOL))
    ]
    return dw, viol


def butterfly_values(s: IVSurface) -> np.ndarray:
    """The density-positivity function f at every node, shape (n_tau, n_m)."""
    if s.grid.n_m < 3:
        raise ValueError("butterfly check needs at least 3 strikes")
    w = total_variance(s).values
    if np.any(w <= 0):
        raise ValueError("total variance must be positive everywhere")
    _, d_m, d_mm = _grid_ops(s.grid)
    w_m = w @ d_m.T
    w_mm = w @ d_mm.T
    m = s.grid.m_values[None, :]
    return (
        (1.0 - m * w_m / (2.0 * w)) ** 2
        - 0.25 * w_m**2 * (1.0 / w + 0.25)
        + 0.5 * w_mm
    )


def check_butterfly(s: IVSurface):
    """(f array, violation list); violation where f < -tol."""
    f = butterfly_values(s)
    viol = [
        (int(i_m), int(j_tau), float(-f[j_tau, i_m]))
        for j_tau, i_m in zip(*np.where(f < -GRAD_TOL))
    ]
    return f, viol


def penalties(s: IVSurface) -> tuple[float, float]:
    """(l_calendar, l_butterfly): grand means of the hinge violations."""
    dw = calendar_derivatives(s)
    f = butterfly_values(s)
    return float(_hinge(dw).mean()), float(_hinge(f).mean())


def audit(s: IVSurface) -> ViolationReport:
    dw, cal_viol = check_calendar(s)
    f, but_viol = check_butterfly(s)
    return ViolationReport(
        calendar_violations=tuple(cal_viol),
        butterfly_violations=tuple(but_viol),
        l_calendar=float(_hinge(dw).mean()),
        l_butterfly=float(_hinge(f).mean()),
    )


def penalties_with_grad(sigma: np.ndarray, grid):
    """Penalties and their gradient with respect to the vol values.

    Returns (l_calendar, l_butterfly, d(l_cal + l_but)/d sigma).  The
    hinge max(0, .) uses subgradient 0 at the kink.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    tau = grid.tau_values[:, None]
    m = grid.m_values[None, :]
    w = sigma**2 * tau
    d_tau, d_m, d_mm = _grid_ops(grid)

    # calendar
    dw_tau = d_tau @ w
    l_cal = float(_hinge(dw_tau).mean())
    g_dw = -(dw_tau < -GRAD_TOL).astype(float) / dw_tau.size
    grad_w = d_tau.T @ g_dw

    # butterfly
    w_m = w @ d_m.T
    w_mm = w @ d_mm.T
    q = 1.0 - m * w_m / (2.0 * w)
    f = q**2 - 0.25 * w_m**2 * (1.0 / w + 0.25) + 0.5 * w_mm
    l_but = float(_hinge(f).mean())
    g_f = -(f < -GRAD_TOL).astype(float) / f.size
    # f partials: df/dw, df/dw_m, df/dw_mm
    df_dw = 2.0 * q * (m * w_m / (2.0 * w**2)) + 0.25 * w_m**2 / w**2
    df_dwm = 2.0 * q * (-m / (2.0 * w)) - 0.5 * w_m * (1.0 / w + 0.25)
    df_dwmm = 0.5
    grad_w += g_f * df_dw
    grad_w += (g_f * df_dwm) @ d_m
    grad_w += (g_f * df_dwmm) @ d_mm

    grad_sigma = grad_w * 2.0 * sigma * tau
    return l_cal, l_but, grad_sigma
