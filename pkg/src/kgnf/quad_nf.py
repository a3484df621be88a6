"""Quadratic normal form N_quad = rho^(-1/2) (K0[u,u] + K2[u_dot,u_dot]) and its error terms.

With G = (Box_H + 1) u,

    (Box_H + 1) N_quad = T1 + T2 + T3 - rho^-2 N_quad / 4,

and the symbols k0, k2 are chosen so that T1 = rho^(-1/2) alpha0 u^2 exactly.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .bilinear_psdo import apply, frozen_rho_derivative, frozen_rho_derivative2, shatah_symbols
from .errors import StencilError
from .hypergrid import Field
from .solver import HyperbolicModel, Trajectory
from .spectral import (apply_multiplier, dealiased_product, dy, frequencies, l2_norm, linf_norm,
                       norm_n, norm_s)


def _d2p1(u: Field) -> Field:
    """(D_y^2 + 1) u."""
    return apply_multiplier(u, frequencies(u.grid, u.rho) ** 2 + 1.0)


def n_quad(u: Field, udot: Field, alpha0: float) -> Field:
    if alpha0 == 0:
        return Field.zeros(u.grid, u.rho)
    k0, k2 = shatah_symbols(alpha0)
    return (apply(k0, u, u) + apply(k2, udot, udot)) * u.rho**-0.5


def t1(u: Field, udot: Field, alpha0: float) -> Field:
    """The six-term bracket that the symbol choice collapses to rho^(-1/2) alpha0 u^2."""
    u.check_compatible(udot)
    if alpha0 == 0:
        return Field.zeros(u.grid, u.rho)
    k0, k2 = shatah_symbols(alpha0)
    w = _d2p1(u)
    du, dud = dy(u), dy(udot)
    s = (2 * apply(k2, w, w) + 2 * apply(k0, du, du) + 2 * apply(k2, dud, dud)
         - apply(k0, u, u) + 2 * apply(k0, udot, udot) - apply(k2, udot, udot))
    return s * u.rho**-0.5


def quadratic_source(u: Field, alpha0: float) -> Field:
    """rho^(-1/2) alpha0 u^2 (dealiased)."""
    return dealiased_product(u, u) * (alpha0 * u.rho**-0.5)


def t1_cancellation_residual(u: Field, udot: Field, alpha0: float) -> float:
    """sup|T1 - rho^(-1/2) alpha0 u^2| / sup|rho^(-1/2) alpha0 u^2| (0 when both vanish)."""
    target = quadratic_source(u, alpha0)
    diff = linf_norm(t1(u, udot, alpha0) - target)
    scale = linf_norm(target)
    if scale == 0:
        return diff
    return diff / scale


def t2(u: Field, udot: Field, G: Field, Gdot: Field, alpha0: float) -> Field:
    """rho^(-1/2) [2K0[G,u] + 2K2[G,G] + 2K2[G_dot,u_dot] - 4K2[(D^2+1)u,G] - rho^-2 K2[G,u]]."""
    if alpha0 == 0:
        return Field.zeros(u.grid, u.rho)
    k0, k2 = shatah_symbols(alpha0)
    rho = u.rho
    s = (2 * apply(k0, G, u) + 2 * apply(k2, G, G) + 2 * apply(k2, Gdot, udot)
         - 4 * apply(k2, _d2p1(u), G) - apply(k2, G, u) / rho**2)
    return s * rho**-0.5


def rho_commutator(K, u: Field, v: Field, udot: Field, vdot: Field) -> Field:
    """[d_rho^2, rho^(-1/2) K][u, v] = L''[u,v] + 2 L'[u_dot,v] + 2 L'[u,v_dot], L = rho^(-1/2) K.

    Primes are rho-derivatives of the operator with inputs frozen, computed from
    closed-form symbol partials.
    """
    rho = u.rho
    a, da, dda = rho**-0.5, -0.5 * rho**-1.5, 0.75 * rho**-2.5

    def lprime(p, q):
        return apply(K, p, q) * da + frozen_rho_derivative(K, p, q) * a

    l2 = (apply(K, u, v) * dda + frozen_rho_derivative(K, u, v) * (2 * da)
          + frozen_rho_derivative2(K, u, v) * a)
    return l2 + 2 * lprime(udot, v) + 2 * lprime(u, vdot)


def t3(u: Field, udot: Field, uddot: Field, alpha0: float) -> Field:
    """Commutator terms plus the listed lower-order K2 terms.

    ``uddot`` is the second rho-derivative of u (taken from the equation), which
    the K2[u_dot, u_dot] commutator needs.
    """
    if uddot is None:
        raise StencilError("t3 needs the second rho-derivative of u")
    if alpha0 == 0:
        return Field.zeros(u.grid, u.rho)
    k0, k2 = shatah_symbols(alpha0)
    rho = u.rho
    out = rho_commutator(k0, u, u, udot, udot) + rho_commutator(k2, udot, udot, uddot, uddot)
    out = out + apply(k2, dy(u, 2), udot) * (4 * rho**-1.5)
    out = out + apply(k2, u, udot) * rho**-3.5
    out = out + apply(k2, _d2p1(u), u) * rho**-2.5
    out = out + apply(k2, u, u) * (rho**-4.5 / 8)
    return out


def cubic_correction(u: Field, udot: Field, alpha0: float) -> Field:
    """rho^-1 (2 alpha0^2 u^3 - 8/3 alpha0^2 u_dot^2 u)."""
    c = alpha0**2 / u.rho
    return dealiased_product(u, u, u) * (2 * c) - dealiased_product(udot, udot, u) * (8.0 / 3.0 * c)


@dataclass
class QuadNFState:
    rho: float
    n_quad: Field
    t1: Field
    t2: Field
    t3: Field
    r_quad: Field
    r_quad_tilde: Field
    box_n: Field | None = None

    @property
    def identity_residual(self) -> Field | None:
        if self.box_n is None:
            return None
        return self.box_n - self.t1 - self.r_quad


def quad_state(model: HyperbolicModel, u: Field, udot: Field) -> QuadNFState:
    """All quadratic normal-form pieces at one time, with G and G_dot from the equation."""
    a0 = model.coefficients.alpha0
    rho = u.rho
    G = u.with_values(model.nonlinear(u.values, rho))
    Gd = u.with_values(model.nonlinear_drho(u.values, udot.values, rho))
    udd = u.with_values(model.accel(u.values, udot.values, rho))
    nq = n_quad(u, udot, a0)
    T1, T2, T3 = t1(u, udot, a0), t2(u, udot, G, Gd, a0), t3(u, udot, udd, a0)
    r = T2 + T3 - nq * (0.25 / rho**2)
    return QuadNFState(rho, nq, T1, T2, T3, r, r + cubic_correction(u, udot, a0))


def box_plus_one(values_m, values_0, values_p, h, field0: Field) -> Field:
    """(Box_H + 1) applied to a three-point rho-stencil of values (centered second difference)."""
    d2 = (values_p - 2 * values_0 + values_m) / h**2
    rho = field0.rho
    spatial = apply_multiplier(field0, frequencies(field0.grid, rho) ** 2 + 1.0 + 0.25 / rho**2)
    return spatial + d2


def quad_identity_residual(traj: Trajectory, rhos, h: float = 0.05, substeps: int = 8):
    """Residual of (Box_H+1)N_quad = rho^(-1/2) alpha0 u^2 + R_quad at each requested rho.

    Returns a list of dict rows with the identity residual in L2 + Linf, the T1
    residual, the N norm of R_quad and the S norm of rho^(1/2) N_quad.
    """
    model = traj.model
    a0 = traj.coefficients.alpha0
    rows = []
    for rho in rhos:
        lo, mid, hi = traj.stencil(rho, h, substeps=substeps)
        st = quad_state(model, mid.u, mid.udot)
        nm = n_quad(lo.u, lo.udot, a0).values
        np_ = n_quad(hi.u, hi.udot, a0).values
        st.box_n = box_plus_one(nm, st.n_quad.values, np_, h, st.n_quad)
        res = st.identity_residual
        target = quadratic_source(mid.u, a0)
        rows.append({
            "rho": float(rho),
            "t1_residual": t1_cancellation_residual(mid.u, mid.udot, a0) if a0 else 0.0,
            "identity_residual_L2": l2_norm(res),
            "identity_residual_Linf": linf_norm(res),
            "identity_residual": l2_norm(res) + linf_norm(res),
            "source_scale": l2_norm(target) + linf_norm(target),
            "r_quad_N_norm": norm_n(st.r_quad, 0.05).n_norm,
            "n_quad_S_norm": norm_s(st.n_quad * rho**0.5, Field.zeros(mid.grid, rho), 0.05).s_norm,
        })
    return rows


CSV_FIELDS = ["rho", "t1_residual", "identity_residual_L2", "identity_residual_Linf",
              "r_quad_N_norm", "n_quad_S_norm"]


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{r[k]:.12e}" if isinstance(r[k], float) else r[k]) for k in CSV_FIELDS})
    return buf.getvalue()
