"""Waiting-time distributions and their relation to g².

``W(τ)`` is the density of the delay between *consecutive* detected photons.
Unlike g², it depends on how many photons are lost, so the two-level form
carries the collection efficiency ``C`` explicitly. Renewal sums
(``a + a∗h + a∗h∗h + …`` and ``W + W∗W + …``) are evaluated by discrete
convolution on a uniform grid and truncated once the next term is
negligible.

All rates are in s⁻¹ and times in seconds.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from .errors import DomainError, ExtentError, GridError

DEGENERATE_DISCRIMINANT = 1e-6
SERIES_RTOL = 1e-10
GRID_TOL = 1e-4
EXTENT_TOL = 1e-3
MAX_TERMS = 100_000


@dataclass
class WaitingCurve:
    """``W`` sampled on a uniform grid starting at τ = 0."""

    tau: np.ndarray
    W: np.ndarray
    collection: float = 1.0
    rates: dict = field(default_factory=dict)
    model: str = "two-level"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        self.W = np.asarray(self.W, dtype=float)
        if self.tau.shape != self.W.shape:
            raise DomainError("tau and W must have the same shape")

    @property
    def dt(self) -> float:
        return float(self.tau[1] - self.tau[0])

    def integral(self) -> float:
        """Probability mass captured by the grid (trapezoid rule)."""
        return float(np.trapezoid(self.W, self.tau))

    def mean(self) -> float:
        """Mean waiting time over the grid, conditioned on the captured mass."""
        return float(np.trapezoid(self.tau * self.W, self.tau) / self.integral())

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau_s", "W_per_s"])
            for t, v in zip(self.tau, self.W):
                w.writerow([repr(float(t)), repr(float(v))])
        return path


@dataclass
class ReconstructedG2:
    """g² rebuilt from a waiting-time curve by the renewal series."""

    tau: np.ndarray
    g2: np.ndarray
    detected_rate: float
    n_terms: int


def uniform_grid(t_max: float, n: int | None = None, dt: float | None = None) -> np.ndarray:
    """Uniform delay grid ``[0, t_max]`` from either a point count or a step."""
    if not t_max > 0:
        raise DomainError("t_max must be > 0")
    if (n is None) == (dt is None):
        raise DomainError("give exactly one of n or dt")
    if dt is not None:
        if not dt > 0:
            raise DomainError("dt must be > 0")
        n = int(round(t_max / dt)) + 1
    if n < 3:
        raise GridError("a grid needs at least 3 points")
    return np.linspace(0.0, t_max, int(n))


def _check_grid(grid) -> np.ndarray:
    tau = np.asarray(grid, dtype=float).reshape(-1)
    if tau.size < 3:
        raise GridError("a grid needs at least 3 points")
    if tau[0] != 0.0:
        raise GridError("the grid must start at tau = 0")
    steps = np.diff(tau)
    if not np.all(steps > 0) or np.ptp(steps) > 1e-9 * steps.mean():
        raise GridError("the grid must be uniform and increasing")
    return tau


def _positive(**rates):
    for name, value in rates.items():
        if not (np.isfinite(value) and value > 0):
            raise DomainError(f"{name} must be a positive finite rate, got {value!r}")


def alpha(gamma_ge: float, gamma_eg: float) -> float:
    """Pump/decay asymmetry ``|Γ_eg − Γ_ge| / (Γ_eg + Γ_ge)``, in [0, 1)."""
    _positive(gamma_ge=gamma_ge, gamma_eg=gamma_eg)
    return abs(gamma_eg - gamma_ge) / (gamma_eg + gamma_ge)


def _sinhc_series(x):
    x2 = x * x
    return 1.0 + x2 / 6.0 * (1.0 + x2 / 20.0 * (1.0 + x2 / 42.0))


def waiting_two_level(gamma_ge: float, gamma_eg: float, collection: float, grid) -> WaitingCurve:
    """Two-level waiting-time density at collection efficiency ``C``.

    ``W(τ) = (2CΓ_egΓ_ge/√Δ) e^{−Sτ/2} sinh(√Δ τ/2)`` with ``S = Γ_eg + Γ_ge``
    and ``Δ = S² − 4CΓ_egΓ_ge``. At ``C = 1`` this is the difference of two
    exponentials; when ``Δ`` is tiny relative to ``S²`` (equal rates at
    ``C = 1``) a series for ``sinh(x)/x`` is used instead, which tends to
    ``Γ²τe^{−Γτ}``.

    Examples
    --------
    >>> tau = uniform_grid(1e-6, n=5)
    >>> waiting_two_level(25e6, 50e6, 1.0, tau).W[0]
    0.0
    """
    _positive(gamma_ge=gamma_ge, gamma_eg=gamma_eg)
    if not 0.0 < collection <= 1.0:
        raise DomainError("collection efficiency must lie in (0, 1]")
    tau = _check_grid(grid)
    S = gamma_eg + gamma_ge
    prod = collection * gamma_eg * gamma_ge
    disc = S * S - 4.0 * prod
    a = 0.5 * np.sqrt(max(disc, 0.0))
    if abs(disc) < DEGENERATE_DISCRIMINANT * S * S:
        # W = Cγγ τ e^{-Sτ/2} sinh(aτ)/(aτ)
        x = a * tau
        W = prod * tau * np.exp(-0.5 * S * tau) * _sinhc_series(x)
        branch = "series"
    else:
        # e^{-Sτ/2} sinh(aτ)/a = e^{-(S/2 - a)τ} (1 - e^{-2aτ}) / (2a)
        W = prod / a * np.exp(-(0.5 * S - a) * tau) * (-np.expm1(-2.0 * a * tau)) * 0.5
        branch = "closed"
    W[0] = 0.0
    rates = {"gamma_ge": gamma_ge, "gamma_eg": gamma_eg}
    return WaitingCurve(tau, W, collection, rates, "two-level", {"branch": branch})


class _Convolver:
    """Repeated convolution against one fixed kernel, reusing its spectrum."""

    def __init__(self, kernel, dt):
        self.n = kernel.size
        self.size = 1 << int(np.ceil(np.log2(2 * self.n)))
        self.kernel = kernel
        self.spectrum = np.fft.rfft(kernel, self.size)
        self.dt = dt

    def __call__(self, f):
        full = np.fft.irfft(np.fft.rfft(f, self.size) * self.spectrum, self.size)[: self.n]
        return self.dt * (full - 0.5 * (f[0] * self.kernel + f * self.kernel[0]))


def _renewal_sum(first, kernel, dt, max_terms=MAX_TERMS):
    """``first + first∗k + first∗k∗k + …`` truncated at ``SERIES_RTOL``."""
    conv = _Convolver(kernel, dt)
    total = first.copy()
    term = first
    for k in range(1, max_terms + 1):
        term = conv(term)
        total += term
        if np.max(np.abs(term)) < SERIES_RTOL * np.max(np.abs(total)):
            return total, k + 1
    raise ExtentError(f"renewal series did not converge within {max_terms} terms")


def _absorption_density(Q, exit_rates, start, tau):
    """Density of leaving a transient chain through ``exit_rates``, sampled on ``tau``.

    ``Q`` is the sub-generator among transient states (columns = source) and
    the chain starts in state ``start``. Propagation uses the exact one-step
    matrix exponential, so the samples carry no discretisation error.
    """
    step = expm(Q * (tau[1] - tau[0]))
    p = np.zeros(Q.shape[0])
    p[start] = 1.0
    out = np.empty(tau.size)
    for k in range(tau.size):
        out[k] = exit_rates @ p
        p = step @ p
    return np.clip(out, 0.0, None)


def _three_level_densities(rates, tau):
    ge, eg, em, mg = rates["gamma_ge"], rates["gamma_eg"], rates["gamma_em"], rates["gamma_mg"]
    out_e = eg + em
    # radiative loop g -> e -> g(photon); states (g, e)
    Q_r = np.array([[-ge, 0.0], [ge, -out_e]])
    a = _absorption_density(Q_r, np.array([0.0, eg]), 0, tau)
    # dark loop g -> e -> m -> g; states (g, e, m)
    Q_h = np.array([[-ge, 0.0, 0.0], [ge, -out_e, 0.0], [0.0, em, -mg]])
    h = _absorption_density(Q_h, np.array([0.0, 0.0, mg]), 0, tau)
    return a, h


def waiting_three_level(rates: dict, grid) -> WaitingCurve:
    """Three-level (g, e, m) waiting-time density at unit collection efficiency.

    ``W = a + a∗h + a∗h∗h + …`` where ``a`` is the density of a
    ``g → e → g`` cycle ending in a photon and ``h`` that of a dark
    ``g → e → m → g`` cycle. Branch densities account for the competition
    between ``e → g`` and ``e → m``, so ``∫a + ∫h = 1`` and ``∫W → 1``.

    Parameters
    ----------
    rates : dict
        ``gamma_ge``, ``gamma_eg``, ``gamma_em``, ``gamma_mg`` in s⁻¹. A zero
        ``gamma_em`` collapses to the two-level form.

    Raises
    ------
    GridError
        If halving the resolution changes ``W`` by more than ``1e-4`` of its
        peak (Richardson estimate), i.e. the grid is too coarse.
    """
    keys = ("gamma_ge", "gamma_eg", "gamma_em", "gamma_mg")
    missing = set(keys) - set(rates)
    if missing:
        raise DomainError(f"missing rates: {sorted(missing)}")
    extra = set(rates) - set(keys)
    if extra:
        raise DomainError(f"unknown rates: {sorted(extra)}")
    rates = {k: float(rates[k]) for k in keys}
    _positive(gamma_ge=rates["gamma_ge"], gamma_eg=rates["gamma_eg"], gamma_mg=rates["gamma_mg"])
    if not (np.isfinite(rates["gamma_em"]) and rates["gamma_em"] >= 0):
        raise DomainError("gamma_em must be >= 0")
    tau = _check_grid(grid)
    dt = tau[1] - tau[0]
    a, h = _three_level_densities(rates, tau)
    if rates["gamma_em"] == 0.0:
        W, n_terms, err = a, 1, 0.0
    else:
        W, n_terms = _renewal_sum(a, h, dt)
        err = _richardson_error(W, a, h, dt)
        if err > GRID_TOL:
            raise GridError(f"grid too coarse: estimated convolution error {err:.2e} of the peak "
                            f"exceeds {GRID_TOL:g}; reduce the step")
    W[0] = 0.0
    return WaitingCurve(tau, W, 1.0, rates, "three-level",
                        {"n_terms": n_terms, "grid_error": err})


def _richardson_error(W, a, h, dt):
    """Relative sup-norm error estimate from a doubled step (second-order rule)."""
    coarse, _ = _renewal_sum(a[::2], h[::2], 2.0 * dt)
    peak = np.max(np.abs(W))
    return float(np.max(np.abs(W[::2] - coarse)) / 3.0 / peak) if peak > 0 else 0.0


def g2_from_waiting(curve: WaitingCurve) -> ReconstructedG2:
    """Rebuild g² as ``(W + W∗W + …) / R`` with ``R = 1 / ⟨τ⟩`` the detected rate.

    Raises
    ------
    ExtentError
        If ``W`` vanishes or the grid captures less than ``1 − 1e-3`` of its
        mass, in which case neither the series nor ``R`` can be trusted.
    """
    tau = _check_grid(curve.tau)
    W = np.asarray(curve.W, dtype=float)
    if not np.any(W > 0):
        raise ExtentError("waiting-time curve is identically zero")
    mass = curve.integral()
    if mass < 1.0 - EXTENT_TOL:
        raise ExtentError(f"grid holds only {mass:.6f} of the waiting-time mass; extend t_max")
    rate = 1.0 / curve.mean()
    density, n_terms = _renewal_sum(W, W, tau[1] - tau[0])
    return ReconstructedG2(tau, density / rate, rate, n_terms)


def two_level_g2(gamma_ge: float, gamma_eg: float, tau) -> np.ndarray:
    """Closed-form two-level ``g²(τ) = 1 − e^{−(Γ_ge+Γ_eg)τ}``."""
    _positive(gamma_ge=gamma_ge, gamma_eg=gamma_eg)
    return -np.expm1(-(gamma_ge + gamma_eg) * np.asarray(tau, dtype=float))


def shape_distance(curve: WaitingCurve, window: float | None = None) -> float:
    """Sup-distance between ``W / (C I)`` and the two-level g² on ``[0, window]``.

    ``I = Γ_geΓ_eg/(Γ_ge+Γ_eg)`` is the emission rate, so ``C I`` is the
    detected rate and ``W / (C I) → g²`` at short delays as ``C → 0``.
    ``window`` defaults to five antibunching times ``5/(Γ_ge+Γ_eg)``.
    """
    if curve.model != "two-level":
        raise DomainError("shape_distance compares against the two-level g²")
    ge, eg = curve.rates["gamma_ge"], curve.rates["gamma_eg"]
    if window is None:
        window = 5.0 / (ge + eg)
    sel = curve.tau <= window
    emission = ge * eg / (ge + eg)
    scaled = curve.W[sel] / (curve.collection * emission)
    return float(np.max(np.abs(scaled - two_level_g2(ge, eg, curve.tau[sel]))))


def consecutive_delays(record) -> np.ndarray:
    """Delays (s) between consecutive detected photons on both channels merged."""
    ticks = np.sort(np.concatenate([record.channel_a.timestamps, record.channel_b.timestamps]))
    return np.diff(ticks) * record.tick_resolution
