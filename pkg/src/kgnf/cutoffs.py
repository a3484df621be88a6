"""Smooth transition functions used for frequency and time cutoffs."""

import numpy as np

_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(64)


def _bump(s):
    out = np.zeros_like(s)
    inside = (s > 0) & (s < 1)
    si = s[inside]
    out[inside] = np.exp(-1.0 / (si * (1.0 - si)))
    return out


_BUMP_MASS = float(np.sum(_WEIGHTS * _bump(0.5 * (_NODES + 1.0))) * 0.5)


def smooth_step(tau):
    """C-infinity transition from 0 (tau <= 0) to 1 (tau >= 1).

    Normalized running integral of the bump exp(-1/(s(1-s))) on (0, 1),
    evaluated with 64-point Gauss-Legendre on [0, tau].
    """
    tau = np.asarray(tau, dtype=float)
    flat = tau.ravel()
    out = np.where(flat >= 1.0, 1.0, 0.0)
    mid = (flat > 0.0) & (flat < 1.0)
    if np.any(mid):
        t = flat[mid]
        # symmetric bump: integrate over the shorter side for accuracy
        short = np.minimum(t, 1.0 - t)
        s = 0.5 * short[:, None] * (_NODES[None, :] + 1.0)
        part = 0.5 * short * np.sum(_WEIGHTS[None, :] * _bump(s), axis=1) / _BUMP_MASS
        out[mid] = np.where(t <= 0.5, part, 1.0 - part)
    return out.reshape(tau.shape) if tau.ndim else float(out[0])


def low_pass_profile(r):
    """Radial profile equal to 1 on |r| <= 1 and 0 on |r| >= 2."""
    return 1.0 - smooth_step(np.abs(r) - 1.0)


def plateau(x, inner, outer):
    """Even cutoff equal to 1 on |x| <= inner and 0 on |x| >= outer."""
    if outer <= inner:
        raise ValueError("outer must exceed inner")
    return 1.0 - smooth_step((np.abs(x) - inner) / (outer - inner))
