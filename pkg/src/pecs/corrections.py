"""Background and timing-jitter corrections for measured correlation curves.

Uncorrelated background with signal fraction ``rho = I_em / (I_em + I_bg)``
maps a true curve onto ``g2_meas = 1 - rho**2 + rho**2 * g2``; this module
inverts that map. Detector jitter is handled only in the forward direction
(convolution with a measured instrument response) because deconvolution
amplifies noise.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit, least_squares

from .correlator import CorrelationResult
from .errors import (
    DomainError,
    FitError,
    GridError,
    ModelConsistencyWarning,
    PecsWarning,
    RankError,
)

METHODS = ("line-trace", "saturation", "direct-background", "given")


@dataclass(frozen=True)
class RhoEstimate:
    rho: float
    method: str = "given"
    uncertainty: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.rho <= 1.0):
            raise DomainError(f"rho must lie in (0, 1], got {self.rho!r}")
        if self.method not in METHODS:
            raise DomainError(f"unknown rho method {self.method!r}")
        if not self.uncertainty >= 0:
            raise DomainError("rho uncertainty must be >= 0")


def _as_rho(rho) -> RhoEstimate:
    if isinstance(rho, RhoEstimate):
        return rho
    rho = float(rho)
    if rho == 0:
        raise DomainError("rho = 0 leaves no signal to correct")
    return RhoEstimate(rho)


def background_apply(g2, rho):
    """Forward map from an emitter-only curve to what a detector with background sees."""
    r2 = _as_rho(rho).rho ** 2
    return 1.0 - r2 + r2 * np.asarray(g2, dtype=float)


def background_invert(g2_meas, rho):
    r2 = _as_rho(rho).rho ** 2
    return (np.asarray(g2_meas, dtype=float) - 1.0 + r2) / r2


def background_correct(g2_meas: CorrelationResult, rho) -> CorrelationResult:
    """Remove uncorrelated background from a measured curve.

    Statistical errors scale by ``1/rho**2``. The uncertainty of ``rho`` is
    reported separately as ``systematic_plus/minus``, the spread of the
    corrected curve between ``rho - sigma`` and ``rho + sigma``.
    """
    est = _as_rho(rho)
    r2 = est.rho ** 2
    g = background_invert(g2_meas.g2, est)
    err_p = g2_meas.err_plus / r2
    err_m = g2_meas.err_minus / r2
    sys_p = sys_m = np.zeros_like(g)
    if est.uncertainty > 0:
        lo = max(est.rho - est.uncertainty, 1e-12)
        hi = min(est.rho + est.uncertainty, 1.0)
        variants = np.vstack([background_invert(g2_meas.g2, RhoEstimate(lo)),
                              background_invert(g2_meas.g2, RhoEstimate(hi))])
        sys_p = np.maximum(variants.max(axis=0) - g, 0.0)
        sys_m = np.maximum(g - variants.min(axis=0), 0.0)
    if np.any(g + err_p < 0):
        warnings.warn("corrected g2 is negative beyond its error bars; rho is likely too small "
                      "for this data", ModelConsistencyWarning, stacklevel=2)
    return g2_meas.with_values(g2=g, err_plus=err_p, err_minus=err_m, rho=est.rho,
                               systematic_plus=sys_p, systematic_minus=sys_m)


def rho_from_background(total_rate, background_rate, total_err=0.0, background_err=0.0) -> RhoEstimate:
    """Signal fraction from a directly measured background rate."""
    if not total_rate > 0:
        raise DomainError("total rate must be > 0")
    if not 0 <= background_rate < total_rate:
        raise DomainError("background rate must lie in [0, total rate)")
    rho = 1.0 - background_rate / total_rate
    sigma = np.hypot(background_err / total_rate, background_rate * total_err / total_rate**2)
    return RhoEstimate(rho, "direct-background", float(sigma))


# --------------------------------------------------------------------------
# Line trace
# --------------------------------------------------------------------------

def _gauss_offset(x, amp, x0, width, offset):
    return amp * np.exp(-0.5 * ((x - x0) / width) ** 2) + offset


def _gauss(x, amp, x0, width):
    return amp * np.exp(-0.5 * ((x - x0) / width) ** 2)


@dataclass(frozen=True)
class LineTraceFit:
    amplitude: float
    center: float
    width: float
    offset: float
    covariance: np.ndarray
    rho: RhoEstimate


def fit_line_trace(position, intensity) -> LineTraceFit:
    """Gaussian plus constant fit to a spatial scan across the emitter.

    ``rho = amplitude / (amplitude + offset)``. A negative best-fit offset is
    unphysical; the fit is then repeated with the offset fixed at zero.
    """
    x = np.asarray(position, dtype=float)
    y = np.asarray(intensity, dtype=float)
    if x.size != y.size or x.size < 5:
        raise DomainError("need at least 5 (position, intensity) samples")
    order = np.argsort(x)
    x, y = x[order], y[order]
    base = float(np.min(y))
    amp0 = float(np.max(y) - base)
    x0 = float(x[np.argmax(y)])
    weights = np.clip(y - base, 0, None)
    if weights.sum() > 0:
        width0 = float(np.sqrt(np.sum(weights * (x - x0) ** 2) / weights.sum()))
    else:
        width0 = 0.0
    width0 = width0 if width0 > 0 else (x[-1] - x[0]) / 4
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, cov = curve_fit(_gauss_offset, x, y, p0=[amp0, x0, width0, base], maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"line-trace fit did not converge: {exc}") from exc
    amp, cen, wid, off = popt
    if -1e-9 * abs(amp) <= off < 0:
        off = 0.0
    if off < 0:
        warnings.warn(f"best-fit offset {off:g} is negative; clamped to 0", PecsWarning, stacklevel=2)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", OptimizeWarning)
                p3, c3 = curve_fit(_gauss, x, y, p0=[amp, cen, abs(wid)], maxfev=20000)
        except (RuntimeError, ValueError) as exc:
            raise FitError(f"line-trace fit did not converge: {exc}") from exc
        amp, cen, wid, off = p3[0], p3[1], p3[2], 0.0
        cov = np.zeros((4, 4))
        cov[:3, :3] = c3
    if not amp > 0:
        raise FitError("line-trace fit found no positive peak")
    total = amp + off
    grad = np.array([off / total**2, -amp / total**2])
    sub = cov[np.ix_([0, 3], [0, 3])]
    sigma = float(np.sqrt(max(grad @ sub @ grad, 0.0))) if np.all(np.isfinite(sub)) else 0.0
    rho = RhoEstimate(min(amp / total, 1.0), "line-trace", sigma)
    return LineTraceFit(float(amp), float(cen), float(abs(wid)), float(off), cov, rho)


# --------------------------------------------------------------------------
# Saturation curve
# --------------------------------------------------------------------------

def saturation_model(p, I_sat, p_sat, C_bg):
    p = np.asarray(p, dtype=float)
    return I_sat * p / (p_sat + p) + C_bg * p


@dataclass(frozen=True)
class SaturationFit:
    I_sat: float
    p_sat: float
    C_bg: float
    covariance: np.ndarray

    def intensity(self, p):
        return saturation_model(p, self.I_sat, self.p_sat, self.C_bg)

    def rho(self, p):
        """Emitter fraction of the total signal at power ``p``."""
        p = np.asarray(p, dtype=float)
        emit = self.I_sat * p / (self.p_sat + p)
        return emit / (emit + self.C_bg * p)

    def rho_estimate(self, p) -> RhoEstimate:
        p = float(p)
        emit = self.I_sat * p / (self.p_sat + p)
        total = emit + self.C_bg * p
        # gradient of rho with respect to (I_sat, p_sat, C_bg)
        d_emit = np.array([p / (self.p_sat + p), -self.I_sat * p / (self.p_sat + p) ** 2, 0.0])
        d_total = d_emit + np.array([0.0, 0.0, p])
        grad = (d_emit * total - emit * d_total) / total**2
        var = float(grad @ self.covariance @ grad)
        return RhoEstimate(float(self.rho(p)), "saturation", float(np.sqrt(max(var, 0.0))))


def fit_saturation(power, intensity, sigma=None) -> SaturationFit:
    """Weighted least-squares fit of ``I(p) = I_sat p / (p_sat + p) + C_bg p``.

    Without explicit ``sigma`` the residuals are relative (``sigma = I``),
    so points across several decades of power carry equal weight; the
    covariance is then scaled by the reduced chi-square.
    """
    p = np.asarray(power, dtype=float)
    y = np.asarray(intensity, dtype=float)
    if p.size != y.size or p.size < 3:
        raise DomainError("need at least 3 (power, intensity) points")
    if np.any(p <= 0) or np.any(y <= 0):
        raise DomainError("powers and intensities must be > 0")
    if np.unique(p).size < 3:
        raise RankError("saturation fit needs at least 3 distinct powers")
    s = y.copy() if sigma is None else np.broadcast_to(np.asarray(sigma, dtype=float), y.shape)
    if np.any(s <= 0):
        raise DomainError("sigma must be > 0")
    # work in scaled units so all parameters are O(1)
    ps, ys = float(np.median(p)), float(np.max(y))

    def resid(q):
        return (saturation_model(p / ps, q[0], q[1], q[2]) * ys - y) / s

    best = None
    for p_sat0 in (0.3, 1.0, 3.0):
        q0 = np.array([1.0 + 1.0 / p_sat0, p_sat0, 0.0])
        sol = least_squares(resid, q0, bounds=([0, 1e-12, 0], [np.inf, np.inf, np.inf]),
                            x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
        if best is None or sol.cost < best.cost:
            best = sol
    if not best.success:
        raise FitError(f"saturation fit failed: {best.message}", best)
    J = best.jac
    if np.linalg.matrix_rank(J) < 3:
        raise RankError("saturation data do not constrain all three parameters")
    cov = np.linalg.pinv(J.T @ J)
    if sigma is None:
        dof = max(p.size - 3, 1)
        cov = cov * (2.0 * best.cost / dof)
    conv = np.diag([ys, ps, ys / ps])
    I_sat, p_sat, C_bg = best.x * np.diag(conv)
    return SaturationFit(float(I_sat), float(p_sat), float(C_bg), conv @ cov @ conv)


# --------------------------------------------------------------------------
# Instrument response
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class IrfHistogram:
    """Timing-jitter distribution on a uniform grid of bin centres ``times``."""

    times: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float).reshape(-1)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if t.size != w.size or t.size == 0:
            raise GridError("IRF times and weights must be equal-length and non-empty")
        if np.any(w < 0) or not w.sum() > 0:
            raise DomainError("IRF weights must be >= 0 with a positive sum")
        if t.size > 1:
            d = np.diff(t)
            if np.any(d <= 0) or np.max(np.abs(d - d[0])) > 1e-6 * d[0]:
                raise GridError("IRF grid must be uniform and increasing")
        w = w / w.sum()
        t.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "weights", w)

    @property
    def width(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else float("nan")

    @property
    def mean(self) -> float:
        return float(np.sum(self.weights * self.times))

    @property
    def sigma(self) -> float:
        return float(np.sqrt(np.sum(self.weights * (self.times - self.mean) ** 2)))

    @classmethod
    def delta(cls):
        return cls([0.0], [1.0])

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1])

    def to_csv(self, path):
        np.savetxt(path, np.column_stack([self.times, self.weights]), delimiter=",",
                   header="time_s,weight", comments="", fmt="%.17g")

    def centered(self) -> "IrfHistogram":
        """Shift so the weighted mean falls in the zero-offset bin."""
        if self.times.size == 1:
            return IrfHistogram([0.0], self.weights)
        shift = np.rint(self.mean / self.width) * self.width
        return IrfHistogram(self.times - shift, self.weights)

    def rebin(self, width: float) -> "IrfHistogram":
        """Integrate onto bins of ``width`` centred on multiples of ``width``.

        Each source bin is treated as uniform density over its extent, so total
        weight is conserved.
        """
        if not width > 0:
            raise GridError("rebin width must be > 0")
        if self.times.size == 1:
            return IrfHistogram([np.rint(self.times[0] / width) * width], [1.0])
        w_old = self.width
        lo = self.times - w_old / 2
        hi = self.times + w_old / 2
        k0 = int(np.floor(lo[0] / width + 0.5))
        k1 = int(np.ceil(hi[-1] / width - 0.5))
        centers = np.arange(k0, k1 + 1) * width
        new_lo = centers - width / 2
        new_hi = centers + width / 2
        # cumulative weight of the piecewise-uniform source density
        edges = np.append(lo, hi[-1])
        cdf = np.concatenate([[0.0], np.cumsum(self.weights)])
        F = lambda x: np.interp(x, edges, cdf)  # noqa: E731
        weights = F(new_hi) - F(new_lo)
        keep = weights > 0
        return IrfHistogram(centers[keep] if keep.sum() > 1 else centers[keep], weights[keep])


def gaussian_irf(sigma: float, width: float, extent: float = 6.0) -> IrfHistogram:
    """Gaussian instrument response integrated over bins of ``width``."""
    from scipy.special import ndtr

    if not (sigma > 0 and width > 0):
        raise DomainError("sigma and width must be > 0")
    n = int(np.ceil(extent * sigma / width))
    centers = np.arange(-n, n + 1) * width
    w = ndtr((centers + width / 2) / sigma) - ndtr((centers - width / 2) / sigma)
    return IrfHistogram(centers, w)


def convolve_with_irf(model_curve, irf: IrfHistogram, width: float | None = None):
    """Convolve uniformly sampled values with the IRF.

    ``out[n] = sum_k w_k * g[n - s_k]`` where ``s_k`` is IRF bin ``k``'s offset
    in grid steps; samples beyond the ends take the boundary value. Output has
    the input's length.
    """
    g = np.asarray(model_curve, dtype=float)
    if g.ndim != 1 or g.size == 0:
        raise GridError("model curve must be a non-empty 1-D array")
    if irf.times.size == 1:
        return g.copy()
    if width is not None and abs(irf.width - width) > 1e-6 * width:
        raise GridError(f"IRF bin width {irf.width:g} s differs from model grid width {width:g} s")
    offsets = irf.times / irf.width
    shifts = np.rint(offsets).astype(np.int64)
    if np.max(np.abs(offsets - shifts)) > 1e-6:
        raise GridError("IRF bins are not aligned with the model grid; rebin it first")
    pad_lo = max(int(shifts.max()), 0)
    pad_hi = max(int(-shifts.min()), 0)
    padded = np.concatenate([np.full(pad_lo, g[0]), g, np.full(pad_hi, g[-1])])
    out = np.zeros_like(g)
    n = np.arange(g.size)
    for s, w in zip(shifts.tolist(), irf.weights.tolist()):
        out += w * padded[n - s + pad_lo]
    return out


def convolve_model(model, irf: IrfHistogram, tau):
    """Evaluate ``sum_k w_k g(tau - t_k)`` for a callable model ``g`` at arbitrary ``tau``.

    Unlike :func:`convolve_with_irf` no sampling grid is involved, so this is
    the natural way to ask what a jittered detector would report at a single
    delay, e.g. the apparent ``g2(0)``.
    """
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    shifted = tau[:, None] - irf.times[None, :]
    values = np.asarray(model(shifted.ravel()), dtype=float).reshape(shifted.shape)
    return values @ irf.weights
