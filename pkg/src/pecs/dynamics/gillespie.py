"""Exact stochastic simulation of a rate model's photon stream.

The continuous-time Markov chain is sampled jump by jump (exponential holding
time, destination drawn in proportion to the outgoing rates). A traversal of
``j -> i`` yields a detected photon with probability ``C_ij``, and each
photon is sent to channel A or B by a fair coin (ideal beamsplitter).
"""
from __future__ import annotations

import numba
import numpy as np

from ..errors import DomainError, SizeError
from ..timetag import AcquisitionRecord
from .model import RateModel, photoluminescence, steady_state

DEFAULT_TICK = 1e-12
MAX_PHOTONS = 200_000_000
CHUNK = 1 << 20


def _jump_tables(model: RateModel):
    n = model.n_levels
    G = model.G
    dest = np.zeros((n, n), dtype=np.int64)
    cum = np.ones((n, n))
    det = np.zeros((n, n))
    ndest = np.zeros(n, dtype=np.int64)
    q = np.zeros(n)
    for j in range(n):
        targets = [i for i in range(n) if i != j and G[i, j] > 0]
        rates = np.array([G[i, j] for i in targets])
        q[j] = rates.sum()
        ndest[j] = len(targets)
        dest[j, : len(targets)] = targets
        c = np.cumsum(rates) / q[j]
        c[-1] = 1.0
        cum[j, : len(targets)] = c
        det[j, : len(targets)] = [model.C[i, j] for i in targets]
    return dest, cum, det, ndest, q


@numba.njit(nogil=True, cache=True)
def _run_chunk(state, t, duration, E, U_dest, U_det, U_ch, dest, cum, det, ndest, q, out_t, out_ch, n_out):
    cap = out_t.size
    for k in range(E.size):
        if n_out >= cap:
            return state, t, n_out, k, False
        t_next = t + E[k] / q[state]
        if t_next > duration:
            return state, t_next, n_out, k + 1, True
        t = t_next
        u = U_dest[k]
        m = 0
        while m < ndest[state] - 1 and u >= cum[state, m]:
            m += 1
        p_det = det[state, m]
        state = dest[state, m]
        if p_det > 0 and U_det[k] < p_det:
            out_t[n_out] = t
            out_ch[n_out] = 1 if U_ch[k] < 0.5 else 0
            n_out += 1
    return state, t, n_out, E.size, False


def generate_photon_stream(model: RateModel, duration: float, seed: int = 0, tick: float = DEFAULT_TICK,
                           max_photons: int = MAX_PHOTONS, dead_time: float = 0.0,
                           dark_rate: float = 0.0) -> AcquisitionRecord:
    """Simulate ``duration`` seconds of detected photons from steady state.

    Parameters
    ----------
    dead_time : float
        If > 0, photons arriving within this time of the last kept photon on
        the same channel are discarded.
    dark_rate : float
        Poisson dark-count rate added to each channel (counts/s).
    """
    if not duration > 0:
        raise DomainError("duration must be > 0")
    p_ss = steady_state(model)
    rng = np.random.default_rng(seed)
    if not np.any(model.C > 0):
        empty = np.empty(0, dtype=np.int64)
        return AcquisitionRecord.from_ticks(empty, empty, tick, duration, metadata={"seed": seed})
    expected = photoluminescence(model, p_ss) * duration
    if expected > max_photons:
        raise SizeError(f"about {expected:.3g} photons expected, above the limit of {max_photons:.3g}; "
                        "shorten the duration or lower the collection efficiency")
    dest, cum, det, ndest, q = _jump_tables(model)
    state = int(rng.choice(model.n_levels, p=p_ss))
    t = 0.0
    cap = int(expected + 10 * np.sqrt(expected) + 1024)
    out_t = np.empty(cap)
    out_ch = np.empty(cap, dtype=np.int8)
    n_out = 0
    done = False
    while not done:
        E = rng.standard_exponential(CHUNK)
        U = rng.random((3, CHUNK))
        start = 0
        while start < CHUNK:
            state, t_new, n_out, used, done = _run_chunk(
                state, t, duration, E[start:], U[0, start:], U[1, start:], U[2, start:],
                dest, cum, det, ndest, q, out_t, out_ch, n_out)
            start += used
            if done:
                break
            t = t_new
            if n_out >= out_t.size:
                out_t = np.concatenate([out_t, np.empty(out_t.size)])
                out_ch = np.concatenate([out_ch, np.empty(out_ch.size, dtype=np.int8)])
    times = out_t[:n_out]
    chans = out_ch[:n_out]
    a = _finalise(times[chans == 0], duration, tick, dead_time, dark_rate, rng)
    b = _finalise(times[chans == 1], duration, tick, dead_time, dark_rate, rng)
    meta = {"seed": seed, "model": model.name, "duration": duration, "dead_time": dead_time,
            "dark_rate": dark_rate}
    return AcquisitionRecord.from_ticks(a, b, tick, duration, metadata=meta)


def _finalise(times, duration, tick, dead_time, dark_rate, rng):
    if dark_rate > 0:
        n_dark = rng.poisson(dark_rate * duration)
        times = np.sort(np.concatenate([times, rng.uniform(0.0, duration, n_dark)]))
    ticks = np.floor(times / tick).astype(np.int64)
    if dead_time > 0:
        ticks = remove_dead_time(ticks, int(round(dead_time / tick)))
    return ticks


@numba.njit(cache=True)
def _dead_time_mask(ticks, window):
    keep = np.zeros(ticks.size, dtype=np.bool_)
    last = -(1 << 62)
    for k in range(ticks.size):
        if ticks[k] - last >= window:
            keep[k] = True
            last = ticks[k]
    return keep


def remove_dead_time(ticks, window_ticks: int):
    """Drop events closer than ``window_ticks`` to the previously kept event."""
    ticks = np.asarray(ticks, dtype=np.int64)
    if window_ticks <= 0 or ticks.size == 0:
        return ticks
    return ticks[_dead_time_mask(ticks, window_ticks)]
