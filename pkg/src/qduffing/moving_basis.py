"""Moving Fock basis: keep the truncation window centered on the state.

A trajectory wandering over the attractor would need a huge fixed Fock
basis; re-expressing the state in a frame displaced to its own phase-space
mean keeps it within a few levels of the origin. ``recenter`` applies the
displacement unitary and books the shift into the frame offset so that
global observables are unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .duffing_model import FrameOffset
from .fock_linalg import displacement, hermitize


@dataclass(frozen=True)
class RecenterPolicy:
    """When to recenter and how closely to watch the truncation boundary.

    threshold: recenter once the local mean amplitude |<a>| exceeds this.
    tail_levels: number of top Fock levels monitored for leakage.
    tail_tolerance: population above which a warning is emitted; 100x this
        aborts the trajectory.
    """

    threshold: float = 0.5
    tail_levels: int = 5
    tail_tolerance: float = 1e-6

    def __post_init__(self):
        if not (self.threshold > 0):
            raise ValueError("threshold must be > 0")
        if self.tail_levels < 1:
            raise ValueError("tail_levels must be >= 1")
        if not (0.0 < self.tail_tolerance < 1.0):
            raise ValueError("tail_tolerance must be in (0, 1)")


def local_mean_amplitude(rho: np.ndarray) -> complex:
    """<a> of the state in its own frame, from the first subdiagonal."""
    n = rho.shape[0]
    return complex(np.dot(np.sqrt(np.arange(1.0, n)), np.diagonal(rho, -1)))


def recenter(rho: np.ndarray, frame: FrameOffset,
             policy: RecenterPolicy) -> tuple[np.ndarray, FrameOffset]:
    """Displace the state back to the basis origin when it has drifted.

    If the local mean amplitude alpha_loc = (<q> + i <p>)/sqrt(2) exceeds
    policy.threshold, returns D(-alpha_loc) rho D(-alpha_loc)^dag together
    with the frame advanced by (<q>, <p>); global means, purity and all
    global observables are preserved (unitary). Otherwise returns the
    inputs unchanged.
    """
    a_loc = local_mean_amplitude(rho)
    if abs(a_loc) <= policy.threshold:
        return rho, frame
    d = displacement(-a_loc, rho.shape[0])
    rho_new = hermitize(d @ rho @ d.conj().T)
    q_loc = math.sqrt(2.0) * a_loc.real
    p_loc = math.sqrt(2.0) * a_loc.imag
    return rho_new, FrameOffset(frame.q0 + q_loc, frame.p0 + p_loc)


def tail_population(rho: np.ndarray, tail_levels: int) -> float:
    """Total population of the top ``tail_levels`` Fock levels."""
    if tail_levels >= rho.shape[0]:
        raise ValueError("tail_levels must be smaller than the basis size")
    return float(np.sum(np.diagonal(rho)[-tail_levels:]).real)
