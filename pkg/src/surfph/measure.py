"""Quantized pH measurements and datum vectors.

The microelectrode reports pH on a uniform grid with resolution ``step``
(0.02 by default).  Estimation works on the datum: the quantized trace
minus the background pH, which is zero before the experiment starts and
returns to zero as the transient dies out.  Quantization is symmetric
rounding with ties away from zero.

Both quantized traces and data are exact multiples of the step; to keep
them exact this module rounds to integer grid indices first and multiplies
back only at the end, so a trace sitting exactly at the background pH maps
to an exactly zero datum instead of a vector of rounding dust.
"""

from __future__ import annotations

import numpy as np

from .config import Config
from .errors import EstimationError

#: relative slack absorbing FP error in y/step before the tie comparison,
#: so values that are mathematically exact ties (e.g. 7.51 / 0.02) land on
#: the tie and round away from zero
_TIE_SLACK = 8.0 * np.finfo(float).eps


def _grid_index(y, step: float):
    """Nearest-integer grid index of y/step, ties away from zero."""
    q = np.abs(y) / step
    return np.sign(y) * np.floor(q * (1.0 + _TIE_SLACK) + 0.5)


def quantize(y, step: float):
    """Quantize values onto multiples of ``step``, ties away from zero."""
    return _grid_index(np.asarray(y, dtype=float), step) * step


def make_datum(ph, cfg: Config, rng=None, allow_negative: bool = False):
    """Datum vector: quantized pH relative to the background level.

    Entries one step below background are quantization artifacts and clamp
    to zero.  Anything lower means the trace genuinely undershot the
    background, which the forward model never produces; that raises unless
    ``allow_negative`` is set (useful with additive noise enabled).

    If ``cfg.measure.noise_sigma > 0`` an ``rng`` must be supplied and
    Gaussian noise is added to the pH before quantization.
    """
    ph = np.asarray(ph, dtype=float)
    m = cfg.measure
    if m.noise_sigma > 0.0:
        if rng is None:
            raise EstimationError("noise_sigma > 0 requires an rng")
        ph = ph + m.noise_sigma * rng.standard_normal(ph.shape)
    n = _grid_index(ph, m.step) - _grid_index(m.ph_ref, m.step)
    if not allow_negative:
        bad = n < -1.0
        if np.any(bad):
            worst = float(n.min() * m.step)
            raise EstimationError(
                f"datum undershoots background by {worst:.4f} pH "
                f"(more than one quantization step); "
                "pass allow_negative=True if this is noisy data")
        n = np.where(n == -1.0, 0.0, n)
    return n * m.step


def write_datum_csv(path, t, b) -> None:
    """Write a datum trace; full double precision, reload-exact."""
    data = np.column_stack([t, b])
    np.savetxt(path, data, delimiter=",", header="t_s,datum_ph",
               comments="", fmt="%.17g")


def read_datum_csv(path):
    """Load (t, datum) written by write_datum_csv."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1]
