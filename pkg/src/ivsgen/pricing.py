"""Option-pricing kernels used to manufacture training surfaces.

Black-Scholes calls plus implied-vol inversion, a Fourier-cosine Heston
pricer with a Monte-Carlo oracle, and the Hagan lognormal SABR smile
approximation.  All functions are pure; array-valued strike/maturity
inputs broadcast where noted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from ivsgen.errors import DomainError, NumericalError

VOL_LO = 1e-6
VOL_HI = 5.0


@dataclass(frozen=True)
class BsInputs:
    spot: float
    strike: float
    rate: float
    tau: float
    sigma: float

    def __post_init__(self):
        if self.spot <= 0 or self.strike <= 0 or self.sigma <= 0:
            raise ValueError("spot, strike and sigma must be positive")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


@dataclass(frozen=True)
class HestonParams:
    s0: float
    v0: float
    kappa: float
    v_bar: float
    gamma: float
    rho: float
    rate: float = 0.0

    def __post_init__(self):
        if min(self.s0, self.v0, self.kappa, self.v_bar, self.gamma) <= 0:
            raise ValueError("s0, v0, kappa, v_bar, gamma must be positive")
        if not -1 < self.rho < 1:
            raise ValueError("rho must lie in (-1, 1)")


@dataclass(frozen=True)
class SabrParams:
    f0: float
    alpha: float
    beta: float
    rho: float
    gamma: float

    def __post_init__(self):
        if min(self.f0, self.alpha, self.gamma) <= 0:
            raise ValueError("f0, alpha, gamma must be positive")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if not -1 < self.rho < 1:
            raise ValueError("rho must lie in (-1, 1)")


# --------------------------------------------------------------------------
# Black-Scholes
# --------------------------------------------------------------------------


def _bs_call(spot, strike, rate, tau, sigma):
    """Vectorized BS call price; overflow-safe via scipy's normal CDF."""
    sqrt_tau = np.sqrt(tau)
    d1 = (np.log(spot / strike) + (rate + 0.5 * sigma**2) * tau) / (sigma * sqrt_tau)
    d2 = d1 - sigma * sqrt_tau
    return spot * norm.cdf(d1) - strike * np.exp(-rate * tau) * norm.cdf(d2)


def bs_call_price(inputs: BsInputs) -> float:
    return float(
        _bs_call(inputs.spot, inputs.strike, inputs.rate, inputs.tau, inputs.sigma)
    )


def _bs_vega(spot, strike, rate, tau, sigma):
    sqrt_tau = np.sqrt(tau)
    d1 = (np.log(spot / strike) + (rate + 0.5 * sigma**2) * tau) / (sigma * sqrt_tau)
    return spot * sqrt_tau * norm.pdf(d1)


def implied_vol_vector(price, spot, strike, rate, tau, price_tol=1e-12, max_iter=100):
    """Invert BS for arrays of prices/strikes/maturities elementwise.

    Safeguarded root-finding: Newton steps with the analytic vega,
    falling back to bisection on the bracket [VOL_LO, VOL_HI] whenever a
    step leaves the bracket or fails to reduce the residual.
    """
    price = np.asarray(price, dtype=np.float64)
    spot, strike, rate, tau = np.broadcast_arrays(
        *(np.asarray(a, dtype=np.float64) for a in (spot, strike, rate, tau))
    )
    price, spot, strike, rate, tau = np.broadcast_arrays(price, spot, strike, rate, tau)

    intrinsic = np.maximum(spot - strike * np.exp(-rate * tau), 0.0)
    if np.any(price <= intrinsic) or np.any(price >= spot):
        bad = np.argwhere((price <= intrinsic) | (price >= spot))
        raise DomainError(
            f"price outside the no-arbitrage band (max(S-Ke^-rt,0), S) at "
            f"flat indices {bad[:5].tolist()}"
        )

    lo = np.full(price.shape, VOL_LO)
    hi = np.full(price.shape, VOL_HI)
    sigma = np.full(price.shape, 0.2)
    converged = np.zeros(price.shape, dtype=bool)
    # Iterate to sigma-convergence (not just the price tolerance): for
    # tiny out-of-the-money prices many sigmas satisfy |f| < price_tol
    # in absolute terms, but Newton's f/vega ratio stays well scaled and
    # pins the root to full relative precision.
    step_tol = 1e-12
    for _ in range(max_iter):
        f = _bs_call(spot, strike, rate, tau, sigma) - price
        converged |= f == 0
        if np.all(converged):
            break
        # price is increasing in sigma: shrink the bracket
        lo = np.where(f < 0, sigma, lo)
        hi = np.where(f > 0, sigma, hi)
        vega = _bs_vega(spot, strike, rate, tau, sigma)
        # Newton on log-prices: equivalent near the root, but in the
        # far out-of-the-money tail the price is log-linear in sigma and
        # plain Newton creeps (step ~ bs/vega regardless of the target).
        bs = f + price
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = sigma - (np.log(bs) - np.log(price)) * bs / vega
        ok = np.isfinite(newton) & (newton > lo) & (newton < hi)
        proposal = np.where(ok, newton, 0.5 * (lo + hi))
        move = np.abs(proposal - sigma)
        sigma = np.where(converged, sigma, proposal)
        converged |= move < step_tol * np.maximum(sigma, 1.0)
    f = _bs_call(spot, strike, rate, tau, sigma) - price
    if np.any(np.abs(f) >= price_tol):
        worst = int(np.argmax(np.abs(f)))
        raise NumericalError(
            f"implied vol did not converge after {max_iter} iterations; "
            f"worst residual {np.abs(f).max():.3e} with bracket "
            f"[{lo.flat[worst]:.6g}, {hi.flat[worst]:.6g}]"
        )
    return sigma


def implied_vol(price: float, spot: float, strike: float, rate: float, tau: float) -> float:
    """BS^-1: the sigma at which the BS call reproduces ``price``."""
    return float(implied_vol_vector(price, spot, strike, rate, tau))


# --------------------------------------------------------------------------
# Heston: COS pricer + full-truncation Euler Monte Carlo oracle
# --------------------------------------------------------------------------

COS_N = 256
COS_L = 12.0


def _heston_cf(u, p: HestonParams, tau: float):
    """Characteristic function of log S_tau (branch-cut-safe form)."""
    iu = 1j * u
    xi = p.kappa - p.gamma * p.rho * iu
    d = np.sqrt(xi**2 + p.gamma**2 * (iu + u**2))
    g = (xi - d) / (xi + d)
    e = np.exp(-d * tau)
    c = (p.v_bar * p.kappa / p.gamma**2) * (
        (xi - d) * tau - 2.0 * np.log((1 - g * e) / (1 - g))
    )
    dterm = (p.v0 / p.gamma**2) * (xi - d) * (1 - e) / (1 - g * e)
    return np.exp(iu * (math.log(p.s0) + p.rate * tau) + c + dterm)


def _heston_cumulants(p: HestonParams, tau: float):
    """First and second cumulants of log S_tau (fourth taken as zero)."""
    k, vb, g, r, v0, rho = p.kappa, p.v_bar, p.gamma, p.rho, p.v0, p.rho
    ekt = math.exp(-k * tau)
    c1 = math.log(p.s0) + p.rate * tau + (1 - ekt) * (vb - v0) / (2 * k) - 0.5 * vb * tau
    c2 = (
        1.0
        / (8 * k**3)
        * (
            g * tau * k * ekt * (v0 - vb) * (8 * k * rho - 4 * g)
            + k * rho * g * (1 - ekt) * (16 * vb - 8 * v0)
            + 2 * vb * k * tau * (-4 * k * rho * g + g**2 + 4 * k**2)
            + g**2 * ((vb - 2 * v0) * math.exp(-2 * k * tau) + vb * (6 * ekt - 7) + 2 * v0)
            + 8 * k**2 * (v0 - vb) * (1 - ekt)
        )
    )
    return c1, max(c2, 1e-12)


def _cos_call_prices(p: HestonParams, strikes: np.ndarray, tau: float, n_terms: int = COS_N):
    """COS-expansion call prices for a vector of strikes at one maturity."""
    strikes = np.atleast_1d(np.asarray(strikes, dtype=np.float64))
    c1, c2 = _heston_cumulants(p, tau)
    # truncation interval around the log-price mean, in log-strike units
    half = COS_L * math.sqrt(c2)  # c4 taken as 0 in the cumulant rule
    x = np.log(p.s0 / strikes) + p.rate * tau  # forward log-moneyness
    a = (c1 - math.log(p.s0) - p.rate * tau) - half
    b = (c1 - math.log(p.s0) - p.rate * tau) + half

    k = np.arange(n_terms)
    u = k * math.pi / (b - a)
    # payoff cosine coefficients for a call on [0, b]
    def chi(c, d):
        factor = 1.0 / (1.0 + u**2)
        return factor * (
            np.cos(u * (d - a)) * math.exp(d)
            - np.cos(u * (c - a)) * math.exp(c)
            + u * np.sin(u * (d - a)) * math.exp(d)
            - u * np.sin(u * (c - a)) * math.exp(c)
        )

    def psi(c, d):
        out = np.empty_like(u)
        out[0] = d - c
        out[1:] = (np.sin(u[1:] * (d - a)) - np.sin(u[1:] * (c - a))) / u[1:]
        return out

    v_k = 2.0 / (b - a) * (chi(0.0, b) - psi(0.0, b))
    cf = _heston_cf(u, p, tau) * np.exp(-1j * u * (math.log(p.s0) + p.rate * tau))
    weights = np.ones(n_terms)
    weights[0] = 0.5
    # price = K e^{-r tau} * sum' Re[cf * exp(i u (x - a))] V_k
    phase = np.exp(1j * np.outer(x, u) - 1j * np.outer(np.ones_like(x), u * a))
    series = phase * (weights * cf * v_k)
    prices = strikes * math.exp(-p.rate * tau) * np.real(series.sum(axis=1))
    return prices


def heston_call_price(p: HestonParams, strike: float, tau: float, n_terms: int = COS_N):
    """Fourier-cosine Heston call price.

    Returns the price; diagnostics (terms used, tail estimate from the
    last expansion term) are available via :func:`heston_cos_diagnostics`.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    return float(_cos_call_prices(p, np.array([strike]), tau, n_terms)[0])


def heston_cos_diagnostics(p: HestonParams, strike: float, tau: float, n_terms: int = COS_N):
    """Series-truncation diagnostics: (terms used, |last-term| tail estimate)."""
    full = _cos_call_prices(p, np.array([strike]), tau, n_terms)[0]
    short = _cos_call_prices(p, np.array([strike]), tau, n_terms - 1)[0]
    return {"terms": n_terms, "tail_estimate": abs(full - short)}


def heston_call_surface(p: HestonParams, grid, strikes_from_m=True):
    """Price the call at every grid node (strike K = s0 * e^m)."""
    strikes = p.s0 * np.exp(grid.m_values)
    out = np.empty((grid.n_tau, grid.n_m))
    for j, tau in enumerate(grid.tau_values):
        out[j] = _cos_call_prices(p, strikes, float(tau))
    return out


def heston_mc_price(
    p: HestonParams,
    strike: float,
    tau: float,
    n_paths: int = 200_000,
    n_steps: int = 500,
    seed: int = 0,
):
    """Full-truncation Euler Monte-Carlo call price and its standard error.

    The variance entering drift and diffusion is floored at zero;
    deterministic given the seed.
    """
    rng = np.random.default_rng(seed)
    dt = tau / n_steps
    sqrt_dt = math.sqrt(dt)
    log_s = np.full(n_paths, math.log(p.s0))
    v = np.full(n_paths, p.v0)
    for _ in range(n_steps):
        z1 = rng.standard_normal(n_paths)
        z2 = p.rho * z1 + math.sqrt(1 - p.rho**2) * rng.standard_normal(n_paths)
        v_plus = np.maximum(v, 0.0)
        sqrt_v = np.sqrt(v_plus)
        log_s += (p.rate - 0.5 * v_plus) * dt + sqrt_v * sqrt_dt * z1
        v += p.kappa * (p.v_bar - v_plus) * dt + p.gamma * sqrt_v * sqrt_dt * z2
    payoff = np.maximum(np.exp(log_s) - strike, 0.0) * math.exp(-p.rate * tau)
    price = float(payoff.mean())
    std_error = float(payoff.std(ddof=1) / math.sqrt(n_paths))
    return price, std_error


# --------------------------------------------------------------------------
# SABR (Hagan lognormal approximation)
# --------------------------------------------------------------------------

ATM_LOG_TOL = 1e-8


def sabr_implied_vol(p: SabrParams, strike, tau: float):
    """Hagan approximate implied vol; the ATM branch handles K ~ f0.

    ``strike`` may be an array; elements within |log(f0/K)| < 1e-8 of the
    money use the ATM expansion (removable singularity of the general
    formula).
    """
    strike = np.asarray(strike, dtype=np.float64)
    scalar = strike.ndim == 0
    strike = np.atleast_1d(strike)
    if np.any(strike <= 0):
        raise ValueError("strikes must be positive")
    if tau <= 0:
        raise ValueError("tau must be positive")

    f0, alpha, beta, rho, gamma = p.f0, p.alpha, p.beta, p.rho, p.gamma
    log_fk = np.log(f0 / strike)
    atm = np.abs(log_fk) < ATM_LOG_TOL

    out = np.empty_like(strike)

    # ATM branch
    f_pow = f0 ** (1.0 - beta)
    corr_atm = 1.0 + (
        (1 - beta) ** 2 / 24.0 * alpha**2 / f0 ** (2 - 2 * beta)
        + 0.25 * rho * beta * alpha * gamma / f_pow
        + (2 - 3 * rho**2) / 24.0 * gamma**2
    ) * tau
    out[atm] = alpha / f_pow * corr_atm

    # general branch
    if np.any(~atm):
        k = strike[~atm]
        lfk = log_fk[~atm]
        fk_pow = (f0 * k) ** ((1.0 - beta) / 2.0)
        a_hat = alpha / (
            fk_pow
            * (1.0 + (1 - beta) ** 2 / 24.0 * lfk**2 + (1 - beta) ** 4 / 1920.0 * lfk**4)
        )
        c_hat = gamma / alpha * f0 ** ((1.0 - beta) / 2.0) * lfk
        g = np.log((np.sqrt(1.0 - 2.0 * rho * c_hat + c_hat**2) + c_hat - rho) / (1.0 - rho))
        corr = 1.0 + (
            (1 - beta) ** 2 / 24.0 * alpha**2 / (f0 * k) ** (1 - beta)
            + 0.25 * rho * beta * gamma * alpha / fk_pow
            + (2 - 3 * rho**2) / 24.0 * gamma**2
        ) * tau
        out[~atm] = a_hat * c_hat / g * corr

    return float(out[0]) if scalar else out
