"""Zero-delay correlation of several independent emitters."""
from __future__ import annotations

import numpy as np

from ..errors import DomainError


def multi_emitter_g2_zero(intensities) -> float:
    """``g2(0) = ((sum I)^2 - sum I^2) / (sum I)^2`` for independent ideal single-photon emitters."""
    I = np.asarray(intensities, dtype=float).reshape(-1)
    if I.size == 0:
        raise DomainError("need at least one emitter intensity")
    if np.any(~(I > 0)):
        raise DomainError("intensities must be > 0")
    total = I.sum()
    return float((total * total - np.sum(I * I)) / (total * total))
