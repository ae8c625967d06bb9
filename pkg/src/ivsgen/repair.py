"""Post-generation latent-space correction of arbitrage violations.

The residual latent z is adjusted by L-BFGS (strong-Wolfe line search)
to minimize calendar + butterfly penalties plus mean-squared proximity
to the original decoded surface, holding the controllable features y
fixed.  The penalty hinges make the objective only piecewise smooth; the
optimizer proceeds with the one-sided gradient and outcomes are
best-effort.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import line_search
from scipy.optimize._linesearch import LineSearchWarning

from ivsgen import arbitrage, cvae
from ivsgen.features import FeatureVector, extract_features
from ivsgen.surfaces import IVSurface, surface_from_flat


@dataclass
class RepairConfig:
    max_iters: int = 200
    lbfgs_memory: int = 10
    grad_tol: float = 1e-6
    loss_change_tol: float = 1e-10
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    calendar_weight: float = 1.0
    butterfly_weight: float = 1.0
    mse_weight: float = 1.0
    time_budget: float | None = None  # wall-clock seconds; None = unlimited

    def __post_init__(self):
        if self.grad_tol <= 0 or self.loss_change_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")


@dataclass
class RepairResult:
    z_optimized: np.ndarray
    surface: IVSurface
    before_report: arbitrage.ViolationReport
    after_report: arbitrage.ViolationReport
    before_features: FeatureVector
    after_features: FeatureVector
    iterations: int
    converged: bool

    @property
    def repaired(self) -> bool:
        return self.after_report.is_free

    @property
    def feature_drift(self) -> dict[str, float]:
        return {
            n: float(a - b)
            for n, a, b in zip(
                self.after_features.names,
                self.after_features.values,
                self.before_features.values,
            )
        }


def repair_loss(model: cvae.CvaeModel, y: FeatureVector, z: np.ndarray, x_original: np.ndarray,
                cfg: RepairConfig | None = None):
    """Total loss and components at z; x_original is the flat violating surface."""
    cfg = cfg or RepairConfig()
    total, parts, _ = _loss_and_grad(model, y.values, z, x_original, cfg)
    return total, parts


def _loss_and_grad(model, y_arr, z, x_original, cfg):
    """Objective value, components and gradient with respect to z."""
    y_norm = cvae._norm_y(model, y_arr)[None, :]
    z = np.asarray(z, dtype=np.float64)
    dec_in = np.concatenate([z[None, :], y_norm], axis=1)
    (xhat_norm,), cache = model.decoder.forward(dec_in)
    raw = xhat_norm[0] * model.x_std + model.x_mean
    floor_mask = raw > cvae.DECODE_FLOOR
    sigma_flat = np.maximum(raw, cvae.DECODE_FLOOR)
    sigma = sigma_flat.reshape(model.grid.n_tau, model.grid.n_m)

    l_cal, l_but, grad_sigma = arbitrage.penalties_with_grad(sigma, model.grid)
    d = sigma_flat - x_original
    l_mse = float(np.mean(d**2))
    total = cfg.calendar_weight * l_cal + cfg.butterfly_weight * l_but + cfg.mse_weight * l_mse

    # penalties_with_grad returns the combined calendar+butterfly gradient,
    # so the two penalty weights must agree
    if cfg.calendar_weight != cfg.butterfly_weight:
        raise NotImplementedError("unequal penalty weights not supported")
    grad_flat = cfg.calendar_weight * grad_sigma.ravel() + cfg.mse_weight * 2.0 * d / d.size
    grad_raw = grad_flat * floor_mask
    grad_norm_out = grad_raw * model.x_std
    _, d_dec_in = model.decoder.backward(cache, [grad_norm_out[None, :]])
    grad_z = d_dec_in[0, : model.d_z]
    return total, {"calendar": l_cal, "butterfly": l_but, "mse": l_mse}, grad_z


def lbfgs_minimize(f, x0: np.ndarray, cfg: RepairConfig | None = None):
    """Limited-memory BFGS with strong-Wolfe line search.

    ``f(x) -> (value, gradient)``.  Terminates on the gradient norm,
    the loss-change tolerance, or the iteration cap; line-search failure
    returns the best iterate with ``converged = False``.
    Returns (x_best, f_best, iterations, converged).
    """
    cfg = cfg or RepairConfig()
    x = np.asarray(x0, dtype=np.float64).copy()
    fx, gx = f(x)
    if cfg.max_iters == 0:
        return x, fx, 0, False
    deadline = None if cfg.time_budget is None else time.monotonic() + cfg.time_budget
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iters + 1):
        if deadline is not None and time.monotonic() > deadline:
            iterations -= 1
            break
        if np.linalg.norm(gx) < cfg.grad_tol:
            converged = True
            iterations -= 1
            break
        # two-loop recursion
        q = gx.copy()
        alphas = []
        for s, yv in zip(reversed(s_hist), reversed(y_hist)):
            rho = 1.0 / (yv @ s)
            a = rho * (s @ q)
            alphas.append((a, rho, s, yv))
            q -= a * yv
        if y_hist:
            gamma = (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
            q *= gamma
        for a, rho, s, yv in reversed(alphas):
            b = rho * (yv @ q)
            q += (a - b) * s
        direction = -q
        if direction @ gx >= 0:  # not a descent direction: reset
            direction = -gx
            s_hist.clear()
            y_hist.clear()

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LineSearchWarning)
            ls = line_search(
                lambda v: f(v)[0], lambda v: f(v)[1], x, direction, gfk=gx,
                old_fval=fx, c1=cfg.wolfe_c1, c2=cfg.wolfe_c2, maxiter=30,
            )
        alpha = ls[0]
        if alpha is None:
            break
        x_new = x + alpha * direction
        f_new, g_new = f(x_new)
        s = x_new - x
        yv = g_new - gx
        if yv @ s > 1e-12:
            s_hist.append(s)
            y_hist.append(yv)
            if len(s_hist) > cfg.lbfgs_memory:
                s_hist.pop(0)
                y_hist.pop(0)
        delta = abs(fx - f_new)
        x, fx, gx = x_new, f_new, g_new
        if delta < cfg.loss_change_tol:
            converged = True
            break
        if np.linalg.norm(gx) < cfg.grad_tol:
            converged = True
            break
    return x, fx, iterations, converged


def repair_surface(model: cvae.CvaeModel, y: FeatureVector, z_initial: np.ndarray,
                   cfg: RepairConfig | None = None) -> RepairResult:
    """Adjust z to remove arbitrage while keeping y fixed.

    Surfaces that already pass both checks return unchanged with zero
    iterations.  Optimizer failure is reported via ``converged``; no
    exception escapes.
    """
    cfg = cfg or RepairConfig()
    z_initial = np.asarray(z_initial, dtype=np.float64)
    before_surface = cvae.decode(model, y, z_initial)
    before_report = arbitrage.audit(before_surface)
    before_features = extract_features(before_surface, which=y.names)
    if before_report.is_free:
        return RepairResult(
            z_optimized=z_initial.copy(),
            surface=before_surface,
            before_report=before_report,
            after_report=before_report,
            before_features=before_features,
            after_features=before_features,
            iterations=0,
            converged=True,
        )

    x_original = before_surface.flatten()

    def objective(z):
        total, _, grad = _loss_and_grad(model, y.values, z, x_original, cfg)
        return total, grad

    z_opt, _, iterations, converged = lbfgs_minimize(objective, z_initial, cfg)
    after_surface = cvae.decode(model, y, z_opt)
    return RepairResult(
        z_optimized=z_opt,
        surface=after_surface,
        before_report=before_report,
        after_report=arbitrage.audit(after_surface),
        before_features=before_features,
        after_features=extract_features(after_surface, which=y.names),
        iterations=iterations,
        converged=converged,
    )
