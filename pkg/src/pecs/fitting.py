"""Empirical multi-exponential fits of g2(tau) and information-criterion selection.

The n-level empirical model is::

    g2(tau) = 1 - C_1 exp(-|tau|/tau_1) + sum_{i=2}^{n-1} C_i exp(-|tau|/tau_i)

with one antibunching term and ``n - 2`` bunching terms, ``p = 2(n - 1)``
free parameters, all positive. A signed variant with unconstrained
amplitudes is available for curves with several antibunching rates.

When bin edges are known the model is averaged over each bin exactly
rather than sampled at the centre, which matters on logarithmic axes.
Goodness of fit uses error-weighted residuals ``x_i = (data - model)/sigma``
and the Gaussian maximum-likelihood log-likelihood

    ln L = -(N/2) (ln 2 pi + 1 - ln N + ln sum x_i^2)

so that ``AIC = 2p - 2 ln L``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .corrections import IrfHistogram, convolve_with_irf
from .errors import BoundaryWarning, DomainError, FitError, GridError, PecsWarning

N_STARTS = 5
DEFAULT_SEED = 0


# --------------------------------------------------------------------------
# Model
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EmpiricalModel:
    """Amplitudes and timescales of the empirical correlation model.

    ``amplitudes[0]`` and ``timescales[0]`` are the antibunching term; the
    remaining entries are bunching terms. With ``signed=True`` the curve is
    ``1 + sum a_i exp(-|tau|/tau_i)`` and amplitudes carry their own sign.
    """

    amplitudes: np.ndarray
    timescales: np.ndarray
    signed: bool = False

    def __post_init__(self):
        a = np.array(self.amplitudes, dtype=float).reshape(-1)
        t = np.array(self.timescales, dtype=float).reshape(-1)
        if a.size != t.size or a.size < 1:
            raise DomainError("need one timescale per amplitude and at least one term")
        if np.any(~(t > 0)) or not np.all(np.isfinite(t)):
            raise DomainError("timescales must be positive")
        if not self.signed and np.any(a < 0):
            raise DomainError("amplitudes must be non-negative")
        a.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "timescales", t)

    @classmethod
    def from_parameters(cls, C1, tau1, bunching=(), signed=False):
        amps = [C1] + [c for c, _ in bunching]
        taus = [tau1] + [t for _, t in bunching]
        return cls(amps, taus, signed)

    @classmethod
    def three_level(cls, C2, tau1, tau2):
        """``1 - (1 + C2) e^{-|tau|/tau1} + C2 e^{-|tau|/tau2}``, i.e. g2(0) = 0."""
        return cls([1.0 + C2, C2], [tau1, tau2])

    @property
    def n_levels(self) -> int:
        return self.amplitudes.size + 1

    @property
    def n_params(self) -> int:
        return 2 * self.amplitudes.size

    @property
    def signs(self) -> np.ndarray:
        if self.signed:
            return np.ones(self.amplitudes.size)
        s = np.ones(self.amplitudes.size)
        s[0] = -1.0
        return s

    def __call__(self, tau, edges=None):
        return evaluate_model(self, tau, edges)

    def to_dict(self):
        return {
            "n_levels": self.n_levels,
            "signed": self.signed,
            "amplitudes": self.amplitudes.tolist(),
            "timescales_s": self.timescales.tolist(),
        }


def _basis(t, tau=None, edges=None):
    """exp(-|tau|/t) sampled at ``tau`` or averaged over bins ``edges``; with d/dt."""
    if edges is None:
        x = np.abs(np.asarray(tau, dtype=float))
        e = np.exp(-x / t)
        return e, e * x / t**2
    a = np.asarray(edges[:-1], dtype=float)
    b = np.asarray(edges[1:], dtype=float)
    w = b - a
    val = np.empty(a.size)
    der = np.empty(a.size)
    same = (a >= 0) | (b <= 0)
    # same-sign bins: near end n, far end f, both measured in |tau|
    n = np.where(b <= 0, -b, a)[same]
    ws = w[same]
    en = np.exp(-n / t)
    q = -np.expm1(-ws / t)
    val[same] = en * t * q / ws
    der[same] = en * ((n / t) * q + q - (ws / t) * np.exp(-ws / t)) / ws
    cross = ~same
    if np.any(cross):
        u, v = -a[cross], b[cross]
        eu, ev = np.exp(-u / t), np.exp(-v / t)
        val[cross] = t * (2.0 - eu - ev) / w[cross]
        der[cross] = ((1 - eu - (u / t) * eu) + (1 - ev - (v / t) * ev)) / w[cross]
    return val, der


def evaluate_model(model: EmpiricalModel, tau, edges=None):
    """Evaluate the model at ``|tau|`` or, when ``edges`` are given, as bin averages."""
    out = np.ones(np.shape(tau) if edges is None else (len(edges) - 1,))
    for s, c, t in zip(model.signs, model.amplitudes, model.timescales):
        out = out + s * c * _basis(t, tau, edges)[0]
    return out


# --------------------------------------------------------------------------
# Likelihood and information criteria
# --------------------------------------------------------------------------

def log_likelihood(residuals) -> float:
    x = np.asarray(residuals, dtype=float)
    N = x.size
    S = float(np.sum(x * x))
    if S == 0.0:
        warnings.warn("residuals are exactly zero; log-likelihood is unbounded", PecsWarning,
                      stacklevel=2)
        return math.inf
    return -0.5 * N * (math.log(2 * math.pi) + 1.0 - math.log(N) + math.log(S))


def aic_value(n_params, lnL) -> float:
    return 2.0 * n_params - 2.0 * lnL


def relative_likelihood(aics) -> np.ndarray:
    a = np.asarray(aics, dtype=float)
    if a.size == 0:
        raise DomainError("no AIC values given")
    best = np.min(a)
    if not np.isfinite(best):
        return np.where(a == best, 1.0, 0.0)
    return np.exp((best - a) / 2.0)


# --------------------------------------------------------------------------
# Fitting
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FitResult:
    model: EmpiricalModel
    parameters: np.ndarray
    covariance: np.ndarray
    residuals: np.ndarray
    chi2: float
    n_points: int
    log_likelihood: float
    at_bound: tuple = ()
    message: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def n_levels(self) -> int:
        return self.model.n_levels

    @property
    def n_params(self) -> int:
        return self.model.n_params

    @property
    def dof(self) -> int:
        return self.n_points - self.n_params

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else math.nan

    @property
    def aic(self) -> float:
        return aic_value(self.n_params, self.log_likelihood)

    @property
    def errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    @property
    def amplitude_errors(self):
        return self.errors[0::2]

    @property
    def timescale_errors(self):
        return self.errors[1::2]

    def to_dict(self):
        return {
            **self.model.to_dict(),
            "amplitude_errors": self.amplitude_errors.tolist(),
            "timescale_errors_s": self.timescale_errors.tolist(),
            "chi2": self.chi2,
            "reduced_chi2": self.reduced_chi2,
            "n_points": self.n_points,
            "n_params": self.n_params,
            "log_likelihood": self.log_likelihood,
            "aic": self.aic,
            "at_bound": list(self.at_bound),
        }


def aic(fitresult: FitResult) -> float:
    """Akaike information criterion ``2p - 2 ln L`` of a fit."""
    res = np.asarray(fitresult.residuals)
    if not np.all(np.isfinite(res)):
        raise DomainError("residuals must be finite")
    if not np.any(res):
        warnings.warn("residuals are exactly zero (overfit); AIC is -inf", PecsWarning, stacklevel=2)
        return -math.inf
    return aic_value(fitresult.n_params, log_likelihood(res))


@dataclass(frozen=True)
class RankedFit:
    fit: FitResult
    aic: float
    delta_aic: float
    relative_likelihood: float
    reduced_chi2: float


def compare_models(fits) -> list[RankedFit]:
    """Rank fits of the same data by AIC, best first."""
    fits = list(fits)
    if not fits:
        raise DomainError("no fits to compare")
    values = [aic(f) for f in fits]
    rel = relative_likelihood(values)
    best = min(values)
    order = sorted(range(len(fits)), key=lambda i: values[i])
    return [RankedFit(fits[i], values[i], values[i] - best, float(rel[i]), fits[i].reduced_chi2)
            for i in order]


class _Objective:
    """Residual and Jacobian of the model in internal (log) coordinates."""

    def __init__(self, tau, y, sigma, n_terms, signed, edges, irf_plan):
        self.tau, self.y, self.sigma = tau, y, sigma
        self.n_terms, self.signed = n_terms, signed
        self.edges, self.irf_plan = edges, irf_plan
        self.signs = np.ones(n_terms)
        if not signed:
            self.signs[0] = -1.0

    def natural(self, x):
        x = np.asarray(x, dtype=float)
        amps = x[0::2].copy() if self.signed else np.exp(x[0::2])
        return amps, np.exp(x[1::2])

    def _curve(self, amps, taus):
        plan = self.irf_plan
        edges = self.edges if plan is None else plan["edges"]
        tau = self.tau if plan is None else None
        vals, dvals = [], []
        for t in taus:
            v, d = _basis(t, tau, edges)
            vals.append(v)
            dvals.append(d)
        vals, dvals = np.array(vals), np.array(dvals)
        model = 1.0 + np.einsum("i,i,ij->j", self.signs, amps, vals)
        d_amp = self.signs[:, None] * vals
        d_tau = (self.signs * amps)[:, None] * dvals
        if plan is not None:
            conv = lambda v: convolve_with_irf(v, plan["irf"])[plan["window"]]  # noqa: E731
            model = conv(model)
            d_amp = np.array([conv(r) for r in d_amp])
            d_tau = np.array([conv(r) for r in d_tau])
        return model, d_amp, d_tau

    def model(self, x):
        return self._curve(*self.natural(x))[0]

    def residuals(self, x):
        return (self.model(x) - self.y) / self.sigma

    def jacobian(self, x):
        amps, taus = self.natural(x)
        _, d_amp, d_tau = self._curve(amps, taus)
        J = np.empty((self.y.size, 2 * self.n_terms))
        J[:, 0::2] = (d_amp if self.signed else d_amp * amps[:, None]).T
        J[:, 1::2] = (d_tau * taus[:, None]).T
        return J / self.sigma[:, None]

    def natural_jacobian(self, amps, taus):
        _, d_amp, d_tau = self._curve(amps, taus)
        J = np.empty((self.y.size, 2 * self.n_terms))
        J[:, 0::2] = d_amp.T
        J[:, 1::2] = d_tau.T
        return J / self.sigma[:, None]


def _initial_guess(tau, y, n_terms, signed):
    """Heuristic start: antibunching depth and 1/e-style crossing, bunching
    timescales log-spaced over the region where g2 exceeds 1."""
    x = np.abs(tau)
    order = np.argsort(x)
    x, y = x[order], y[order]
    positive = x[x > 0]
    x_floor = positive.min() if positive.size else 1e-9
    g0 = float(np.mean(y[: max(1, min(3, y.size))]))
    bunch = max(float(np.max(y)) - 1.0, 0.0)
    C1 = max(1.0 + bunch - g0, 0.05)
    level = 1.0 - C1 / 2.0 + bunch
    cross = np.flatnonzero(y >= level)
    tau1 = float(x[cross[0]]) if cross.size else float(np.median(x))
    tau1 = max(tau1, x_floor)
    guesses = [(C1, tau1)]
    n_b = n_terms - 1
    if n_b > 0:
        above = np.flatnonzero(y - 1.0 > bunch / np.e) if bunch > 0 else np.array([], int)
        hi = float(x[above[-1]]) if above.size else 100.0 * tau1
        lo = 3.0 * tau1
        hi = max(hi, 10.0 * lo)
        for t in np.geomspace(lo, hi, n_b):
            guesses.append((max(bunch, 0.05) / n_b, float(t)))
    amps = np.array([c for c, _ in guesses])
    taus = np.array([t for _, t in guesses])
    if signed:
        amps[0] = -amps[0]
        return np.column_stack([amps, np.log(taus)]).ravel()
    return np.column_stack([np.log(amps), np.log(taus)]).ravel()


def _irf_plan(edges, irf: IrfHistogram):
    w = np.diff(edges)
    if np.max(np.abs(w - w[0])) > 1e-6 * w[0]:
        raise GridError("IRF convolution needs a uniform (linear) delay axis")
    width = float(w[0])
    kernel = irf
    if kernel.times.size > 1 and abs(kernel.width - width) > 1e-6 * width:
        kernel = kernel.rebin(width)
    elif kernel.times.size > 1:
        kernel = IrfHistogram(np.rint(kernel.times / width) * width, kernel.weights)
    shifts = np.rint(kernel.times / width).astype(int)
    pad_lo = max(int(shifts.max()), 0)
    pad_hi = max(int(-shifts.min()), 0)
    K = w.size
    ext = edges[0] + width * np.arange(-pad_lo, K + pad_hi + 1)
    return {"edges": ext, "irf": kernel, "window": slice(pad_lo, pad_lo + K)}


def _covariance(J):
    """(J^T J)^-1 via SVD; parameters along unconstrained directions get infinite variance."""
    U, S, Vt = np.linalg.svd(J, full_matrices=False)
    tol = (S.max() if S.size else 0.0) * max(J.shape) * np.finfo(float).eps
    keep = S > tol
    V = Vt[keep].T
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        cov = (V / S[keep] ** 2) @ V.T
    null = Vt[~keep]
    if null.size:
        loose = np.any(np.abs(null) > 1e-8, axis=0)
        cov[loose, :] = np.where(np.eye(J.shape[1], dtype=bool)[loose], np.inf, np.nan)
        cov[:, loose] = np.where(np.eye(J.shape[1], dtype=bool)[:, loose], np.inf, np.nan)
    return cov


def fit_curve(tau, g2, sigma, n, edges=None, irf: IrfHistogram | None = None, init=None,
              seed=DEFAULT_SEED, starts=N_STARTS, signed=False, max_nfev=5000) -> FitResult:
    """Weighted nonlinear least-squares fit of the ``n``-level empirical model.

    Parameters
    ----------
    tau, g2, sigma : array_like
        Bin centres (s), values and symmetric uncertainties.
    n : int
        Level count; the model has ``2(n - 1)`` parameters.
    edges : array_like, optional
        Bin edges. When given the model is bin-averaged.
    irf : IrfHistogram, optional
        Instrument response; the model is convolved with it on the (uniform)
        data grid, extended past both ends by the IRF support.
    init : EmpiricalModel or sequence of (amplitude, timescale), optional
        Starting point; otherwise a data-driven guess.
    seed : int
        Seed for the jittered restarts; the result is deterministic given it.
    """
    tau = np.asarray(tau, dtype=float)
    y = np.asarray(g2, dtype=float)
    s = np.asarray(sigma, dtype=float)
    if n < 2:
        raise DomainError("n must be >= 2")
    n_terms = n - 1
    p = 2 * n_terms
    if not (tau.size == y.size == s.size):
        raise DomainError("tau, g2 and sigma must have equal length")
    if tau.size < p + 2:
        raise DomainError(f"need at least {p + 2} points for n={n}, got {tau.size}")
    if np.any(~(s > 0)) or not np.all(np.isfinite(y)):
        raise DomainError("uncertainties must be positive and data finite")
    if edges is not None:
        edges = np.asarray(edges, dtype=float)
        if edges.size != tau.size + 1:
            raise DomainError("edges must have one more entry than tau")
    plan = None
    if irf is not None:
        if edges is None:
            c = np.sort(tau)
            d = np.diff(c)
            edges = np.concatenate([[c[0] - d[0] / 2], c[:-1] + d / 2, [c[-1] + d[-1] / 2]])
        plan = _irf_plan(edges, irf)
    obj = _Objective(tau, y, s, n_terms, signed, edges, plan)

    if init is None:
        x0 = _initial_guess(tau, y, n_terms, signed)
    else:
        if isinstance(init, EmpiricalModel):
            pairs = list(zip(init.amplitudes, init.timescales))
        else:
            pairs = [tuple(v) for v in init]
        if len(pairs) != n_terms:
            raise DomainError(f"init must give {n_terms} (amplitude, timescale) pairs")
        amps = np.array([a for a, _ in pairs], dtype=float)
        taus = np.array([t for _, t in pairs], dtype=float)
        if signed:
            x0 = np.column_stack([amps, np.log(taus)]).ravel()
        else:
            x0 = np.column_stack([np.log(np.maximum(np.abs(amps), 1e-12)), np.log(taus)]).ravel()

    span = np.abs(tau)
    pos = span[span > 0]
    t_lo = math.log((pos.min() if pos.size else 1e-12) * 1e-3)
    t_hi = math.log(max(span.max(), 1e-12) * 1e3)
    lower = np.empty(p)
    upper = np.empty(p)
    lower[1::2], upper[1::2] = t_lo, t_hi
    if signed:
        lower[0::2], upper[0::2] = -1e6, 1e6
    else:
        lower[0::2], upper[0::2] = math.log(1e-12), math.log(1e6)
    x0 = np.clip(x0, lower + 1e-9, upper - 1e-9)

    rng = np.random.default_rng(seed)
    candidates = [x0]
    for _ in range(max(starts, 1) - 1):
        jitter = rng.normal(0.0, 0.5, p)
        if signed:
            jitter[0::2] = x0[0::2] * rng.normal(0.0, 0.3, n_terms)
        candidates.append(np.clip(x0 + jitter, lower + 1e-9, upper - 1e-9))

    best = None
    fallback = None
    for cand in candidates:
        try:
            sol = least_squares(obj.residuals, cand, jac=obj.jacobian, bounds=(lower, upper),
                                method="trf", x_scale="jac", xtol=1e-12, ftol=1e-12, gtol=1e-12,
                                max_nfev=max_nfev)
        except (ValueError, np.linalg.LinAlgError, FloatingPointError):
            continue
        if not np.isfinite(sol.cost):
            continue
        if sol.status > 0:
            if best is None or sol.cost < best.cost:
                best = sol
        elif fallback is None or sol.cost < fallback.cost:
            fallback = sol
    if best is None:
        if fallback is None:
            raise FitError(f"{n}-level fit failed from all {len(candidates)} starts")
        raise FitError(f"{n}-level fit did not converge from {len(candidates)} starts: "
                       f"{fallback.message}", fallback)

    amps, taus = obj.natural(best.x)
    order = np.argsort(taus) if signed else np.concatenate([[0], 1 + np.argsort(taus[1:])])
    amps, taus = amps[order], taus[order]
    x_sorted = np.column_stack([amps if signed else np.log(amps), np.log(taus)]).ravel()
    lower_s = lower.reshape(-1, 2)[order].ravel()
    upper_s = upper.reshape(-1, 2)[order].ravel()
    bound_hit = tuple(
        int(i) for i in np.flatnonzero((np.abs(x_sorted - lower_s) < 1e-6) | (np.abs(x_sorted - upper_s) < 1e-6))
    )
    if bound_hit:
        names = [("A" if i % 2 == 0 else "tau") + str(i // 2 + 1) for i in bound_hit]
        warnings.warn(f"fit parameters at their bounds: {', '.join(names)}", BoundaryWarning, stacklevel=2)

    cov = _covariance(obj.natural_jacobian(amps, taus))
    resid = obj.residuals(x_sorted)
    model = EmpiricalModel(amps, taus, signed)
    chi2 = float(resid @ resid)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PecsWarning)
        lnL = log_likelihood(resid)
    return FitResult(model, np.column_stack([amps, taus]).ravel(), cov, resid, chi2, int(y.size), lnL,
                     bound_hit, str(best.message))


def fit(data, n: int, irf: IrfHistogram | None = None, init=None, seed=DEFAULT_SEED,
        tau_range=None, **kwargs) -> FitResult:
    """Fit a :class:`~pecs.correlator.CorrelationResult`, weighting each bin by
    its symmetrised Poisson error.

    ``tau_range=(lo, hi)`` restricts the fit to bins with centres in range.
    """
    tau = np.asarray(data.tau_centers, dtype=float)
    sel = np.ones(tau.size, dtype=bool)
    if tau_range is not None:
        sel &= (tau >= tau_range[0]) & (tau <= tau_range[1])
    edges = data.tau_edges
    if edges is not None:
        idx = np.flatnonzero(sel)
        if idx.size and np.all(np.diff(idx) == 1):
            edges = edges[idx[0]: idx[-1] + 2]
        else:
            edges = None
    return fit_curve(tau[sel], np.asarray(data.g2)[sel], np.asarray(data.sigma)[sel], n,
                     edges=edges, irf=irf, init=init, seed=seed, **kwargs)
