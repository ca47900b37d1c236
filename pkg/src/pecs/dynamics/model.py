"""Rate-equation models of quantum emitters and their g2(tau).

Populations obey ``dP/dt = G P`` where ``G[i, j]`` (i != j) is the rate from
state j to state i and each column sums to zero. ``C[i, j]`` is the
probability that the j -> i transition yields a detected photon.

After a detection the state is ``P0_i = sum_j C_ij G_ij Pss_j / sum_ij C_ij
G_ij Pss_j`` and ``g2(tau) = R . P(tau) / R . Pss`` with ``R_j = sum_i C_ij
G_ij``. Rates are stored in s^-1.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp
from scipy.sparse.csgraph import connected_components

from ..errors import (
    ConfigError,
    DefectiveMatrixWarning,
    DomainError,
    ReducibilityError,
    SolverError,
    StabilityError,
)

MHZ = 1e6
RTOL = 1e-9
ATOL = 1e-12
DEFECTIVE_COND = 1e10


@dataclass(frozen=True, eq=False)
class RateModel:
    """Generator ``G`` (s^-1) and collection matrix ``C`` of an n-level model."""

    G: np.ndarray
    C: np.ndarray
    labels: tuple[str, ...] = ()
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        G = np.array(self.G, dtype=float)
        C = np.array(self.C, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1] or G.shape[0] < 2:
            raise DomainError("G must be a square matrix with n >= 2")
        if C.shape != G.shape:
            raise DomainError("C must have the same shape as G")
        if not np.all(np.isfinite(G)) or not np.all(np.isfinite(C)):
            raise DomainError("G and C must be finite")
        off = ~np.eye(G.shape[0], dtype=bool)
        if np.any(G[off] < 0):
            raise DomainError("off-diagonal rates must be >= 0")
        scale = max(float(np.max(np.abs(G))), 1.0)
        if np.max(np.abs(G.sum(axis=0))) > 1e-12 * scale:
            raise DomainError("columns of G must sum to zero")
        if np.any((C < 0) | (C > 1)):
            raise DomainError("collection efficiencies must lie in [0, 1]")
        if np.any((C > 0) & ~((G > 0) & off)):
            raise DomainError("C may be non-zero only on transitions with G_ij > 0")
        labels = tuple(self.labels) or tuple(f"s{i}" for i in range(G.shape[0]))
        if len(labels) != G.shape[0]:
            raise DomainError("need one label per state")
        G.setflags(write=False)
        C.setflags(write=False)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_rates(cls, labels, rates, collection=None, name="", unit=MHZ, **meta):
        """Build from ``{(src, dst): rate}`` and ``{(src, dst): efficiency}``.

        Rates are multiplied by ``unit`` (MHz by default).
        """
        labels = tuple(labels)
        index = {s: i for i, s in enumerate(labels)}
        n = len(labels)
        G = np.zeros((n, n))
        for (src, dst), k in rates.items():
            if src == dst:
                raise DomainError(f"self-transition {src} -> {dst}")
            G[index[dst], index[src]] += float(k) * unit
        G[np.diag_indices(n)] = 0.0
        G[np.diag_indices(n)] = -G.sum(axis=0)
        C = np.zeros((n, n))
        for (src, dst), c in (collection or {}).items():
            C[index[dst], index[src]] = float(c)
        return cls(G, C, labels, name, dict(meta))

    @property
    def n_levels(self) -> int:
        return self.G.shape[0]

    @property
    def emission_weights(self) -> np.ndarray:
        """``R_j = sum_i C_ij G_ij``: detected-photon rate per unit population of j."""
        off = self.G * (~np.eye(self.n_levels, dtype=bool))
        return (self.C * off).sum(axis=0)

    def rate(self, src, dst) -> float:
        i, j = self.labels.index(dst), self.labels.index(src)
        return float(self.G[i, j])

    def check_irreducible(self):
        adj = (self.G > 0) & ~np.eye(self.n_levels, dtype=bool)
        n_comp, comp = connected_components(adj.astype(int), directed=True, connection="strong")
        if n_comp > 1:
            groups = [[self.labels[i] for i in np.flatnonzero(comp == c)] for c in range(n_comp)]
            raise ReducibilityError(f"transition graph is not strongly connected: components {groups}")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "labels": list(self.labels),
            "G_MHz": (self.G / MHZ).tolist(),
            "C": self.C.tolist(),
        }

    @classmethod
    def from_json(cls, data) -> "RateModel":
        """Accept ``{"labels", "G_MHz", "C"}`` or ``{"labels", "rates_MHz": [[src, dst, k]...],
        "collection": [[src, dst, c]...]}``."""
        if isinstance(data, (str, Path)):
            data = json.loads(Path(data).read_text())
        known = {"name", "labels", "G_MHz", "C", "rates_MHz", "collection", "template", "k_ex_MHz",
                 "b_amplitude_G", "b_angle_deg"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        if "template" in data:
            from .templates import build_model

            return build_model(data["template"], data.get("k_ex_MHz", 50.0),
                               b_amplitude=data.get("b_amplitude_G"), b_angle=data.get("b_angle_deg", 0.0))
        if "G_MHz" in data:
            G = np.asarray(data["G_MHz"], dtype=float) * MHZ
            G = G - np.diag(np.diag(G))
            G = G - np.diag(G.sum(axis=0))
            C = np.asarray(data.get("C", np.zeros_like(G)), dtype=float)
            return cls(G, C, tuple(data.get("labels", ())), data.get("name", ""))
        if "rates_MHz" in data:
            rates = {(s, d): k for s, d, k in data["rates_MHz"]}
            coll = {(s, d): c for s, d, c in data.get("collection", [])}
            return cls.from_rates(data["labels"], rates, coll, data.get("name", ""))
        raise ConfigError("model JSON needs 'template', 'G_MHz' or 'rates_MHz'")


def steady_state(model: RateModel) -> np.ndarray:
    """Normalised null vector of ``G``."""
    model.check_irreducible()
    G = model.G
    _, s, vt = np.linalg.svd(G)
    tol = s[0] * G.shape[0] * 1e-13
    if np.count_nonzero(s <= tol) > 1:
        raise ReducibilityError("generator has a multi-dimensional null space")
    p = vt[-1]
    p = p / p.sum()
    if np.any(p < -1e-12):
        raise ReducibilityError("null vector has mixed signs")
    return np.clip(p, 0.0, None) / np.clip(p, 0.0, None).sum()


def initial_condition(model: RateModel, p_ss=None) -> np.ndarray:
    """Population distribution immediately after a detected photon."""
    if not np.any(model.C > 0):
        raise DomainError("model has no radiative (C > 0) transitions")
    p_ss = steady_state(model) if p_ss is None else np.asarray(p_ss)
    off = model.G * (~np.eye(model.n_levels, dtype=bool))
    flux = (model.C * off) @ p_ss
    total = flux.sum()
    if not total > 0:
        raise DomainError("no detected-photon flux in the steady state")
    return flux / total


def photoluminescence(model: RateModel, p_ss=None) -> float:
    """Steady-state detected photon rate ``sum_ij C_ij G_ij Pss_j`` (s^-1)."""
    p_ss = steady_state(model) if p_ss is None else p_ss
    return float(model.emission_weights @ p_ss)


@dataclass(frozen=True, eq=False)
class EigenDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    coefficients: np.ndarray | None
    defective: bool = False

    @property
    def timescales(self) -> np.ndarray:
        """``-1/Re(lambda)`` of the non-zero modes, in eigenvalue order."""
        lam = self.eigenvalues[1:]
        with np.errstate(divide="ignore"):
            return -1.0 / lam.real

    @property
    def rates(self) -> np.ndarray:
        return -self.eigenvalues[1:].real

    def populations(self, t) -> np.ndarray:
        """``P(t) = sum_i A_i exp(lambda_i t) v_i`` for each time, shape (n, len(t))."""
        if self.coefficients is None:
            raise DomainError("no initial condition was given")
        t = np.atleast_1d(np.asarray(t, dtype=float))
        modes = np.exp(np.outer(self.eigenvalues, t)) * self.coefficients[:, None]
        return (self.eigenvectors @ modes).real

    def mode_amplitudes(self, weights) -> np.ndarray:
        """Amplitude of each mode in ``weights . P(t)``."""
        if self.coefficients is None:
            raise DomainError("no initial condition was given")
        return (np.asarray(weights) @ self.eigenvectors) * self.coefficients


def eigenrates(model: RateModel, p0=None) -> EigenDecomposition:
    """Eigen-decomposition of ``G`` ordered by decreasing real part (zero mode first).

    Conjugate pairs are kept adjacent. If ``p0`` is given the mode
    coefficients ``A`` solving ``V A = p0`` are included. A numerically
    defective matrix is flagged and a warning issued.
    """
    lam, V = np.linalg.eig(model.G)
    scale = max(float(np.max(np.abs(lam))), 1.0)
    # tidy tiny imaginary parts so conjugate pairs and real modes are exact
    lam = np.where(np.abs(lam.imag) < 1e-12 * scale, lam.real + 0j, lam)
    order = np.lexsort((lam.imag, -lam.real))
    lam, V = lam[order], V[:, order]
    zero = np.abs(lam) < 1e-9 * scale
    if np.count_nonzero(zero) != 1:
        model.check_irreducible()
        raise ReducibilityError(f"expected exactly one zero eigenvalue, found {np.count_nonzero(zero)}")
    if np.any(lam.real > 1e-9 * scale):
        raise SolverError("generator has an eigenvalue with positive real part")
    lam[0] = 0.0
    v0 = V[:, 0].real
    V[:, 0] = v0 / v0.sum()
    cond = np.linalg.cond(V)
    defective = not np.isfinite(cond) or cond > DEFECTIVE_COND
    if defective:
        warnings.warn(f"generator is (nearly) defective, cond(V)={cond:.3g}; eigen reconstruction "
                      "is unreliable", DefectiveMatrixWarning, stacklevel=2)
    coeff = None
    if p0 is not None and not defective:
        coeff = np.linalg.solve(V, np.asarray(p0, dtype=complex))
    return EigenDecomposition(lam, V, coeff, defective)


def default_time_grid(model: RateModel, n_points=400, decomposition=None) -> np.ndarray:
    """``[0]`` plus log-spaced points from 1e-2 of the fastest to 20x the slowest timescale."""
    dec = decomposition or eigenrates(model)
    rates = dec.rates
    rates = rates[rates > 0]
    fast, slow = 1.0 / rates.max(), 1.0 / rates.min()
    return np.concatenate([[0.0], np.geomspace(1e-2 * fast, 20.0 * slow, n_points - 1)])


@dataclass(frozen=True, eq=False)
class SimulationResult:
    model: RateModel
    times: np.ndarray
    populations: np.ndarray
    ode_populations: np.ndarray
    g2: np.ndarray
    steady_state: np.ndarray
    initial_state: np.ndarray
    decomposition: EigenDecomposition
    photoluminescence: float
    p_err: float
    conservation_error: float
    reconstruction_error: float
    method: str

    def g2_mode_amplitudes(self):
        """Amplitudes ``a_i`` with ``g2 = 1 + sum a_i exp(lambda_i tau)`` (zero mode excluded)."""
        R = self.model.emission_weights
        amps = self.decomposition.mode_amplitudes(R) / float(R @ self.steady_state)
        return amps[1:]

    def summary(self) -> dict:
        lam = self.decomposition.eigenvalues
        return {
            "model": self.model.name,
            "steady_state": self.steady_state.tolist(),
            "labels": list(self.model.labels),
            "eigenvalues_per_s": [[float(v.real), float(v.imag)] for v in lam],
            "I_PL_per_s": self.photoluminescence,
            "p_err": self.p_err,
            "conservation_error": self.conservation_error,
            "reconstruction_error": self.reconstruction_error,
            "method": self.method,
            "g2_0": float(self.g2[0]),
        }


def integrate(model: RateModel, p0, times) -> np.ndarray:
    """Stiff integration of ``dP/dt = G P`` with Radau; returns (n, len(times))."""
    times = np.asarray(times, dtype=float)
    G = np.asarray(model.G)
    sol = solve_ivp(lambda t, p: G @ p, (0.0, float(times[-1])), np.asarray(p0, dtype=float),
                    method="Radau", t_eval=times, jac=G, rtol=RTOL, atol=ATOL, dense_output=False)
    if not sol.success:
        raise SolverError(f"ODE integration failed ({sol.message}); try a shorter grid "
                          f"ending near {10 * np.max(default_time_grid(model, 3)):.3g} s")
    return sol.y


def simulate_g2(model: RateModel, times=None, method="eigen") -> SimulationResult:
    """Time-dependent populations and g2(tau) after a detection event.

    Both the eigen reconstruction and the ODE integration are always computed;
    ``method`` selects which supplies ``populations`` and ``g2``. A defective
    generator falls back to the ODE path.
    """
    if method not in ("eigen", "ode"):
        raise DomainError("method must be 'eigen' or 'ode'")
    p_ss = steady_state(model)
    p0 = initial_condition(model, p_ss)
    dec = eigenrates(model, p0)
    if times is None:
        times = default_time_grid(model, decomposition=dec)
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0) or times[0] < 0:
        raise DomainError("time grid must be increasing, non-negative and have >= 2 points")
    slow = float(np.max(dec.timescales))
    if times[-1] < 10 * slow:
        warnings.warn(f"grid ends at {times[-1]:.3g} s, shorter than 10x the slowest timescale "
                      f"({slow:.3g} s)", UserWarning, stacklevel=2)
    P_ode = integrate(model, p0, times)
    if np.min(P_ode) < -1e-8:
        raise StabilityError(f"negative population {np.min(P_ode):.3g} in ODE solution")
    P_eig = None if dec.coefficients is None else dec.populations(times)
    use_eigen = method == "eigen" and P_eig is not None
    P = P_eig if use_eigen else P_ode
    R = model.emission_weights
    norm = float(R @ p_ss)
    g2 = (R @ P) / norm
    recon = math.nan if P_eig is None else float(np.max(np.abs(P_eig - P_ode)))
    return SimulationResult(
        model=model,
        times=times,
        populations=P,
        ode_populations=P_ode,
        g2=g2,
        steady_state=p_ss,
        initial_state=p0,
        decomposition=dec,
        photoluminescence=norm,
        p_err=float(np.max(np.abs(p_ss - P_ode[:, -1]))),
        conservation_error=float(np.max(np.abs(P_ode.sum(axis=0) - 1.0))),
        reconstruction_error=recon,
        method="eigen" if use_eigen else "ode",
    )
