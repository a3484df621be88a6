"""Oscillatory double integrals

    I_pm(t, x) = int_1^t int exp(i(pm (t - s)<xi> + 3 s + x xi)) h_lambda(s) phi(xi) dxi ds

and the inside/outside light-cone dichotomy they exhibit.

The phase splits as exp(i(pm t<xi> + x xi)) * exp(i s (3 -+ <xi>)), so the
s-integral is computed once per upper limit min(t, 2 lambda) as a vector over
the xi-nodes and reused for every x.  Both directions use Gauss-Legendre
panels sized so that each period of the fastest phase gets at least
``nodes_per_period`` nodes; the error estimate compares against a run with
twice that density.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cutoffs import smooth_step
from .errors import BudgetExceededError, DomainError

SQRT8 = math.sqrt(8.0)
_GL = np.polynomial.legendre.leggauss(16)
_XI_BLOCK = 2048


def time_bump(s, lam):
    """Mollified indicator of [3 lam/4, 3 lam/2], supported in [lam/2, 2 lam]."""
    s = np.asarray(s, float)
    return smooth_step((s - 0.5 * lam) / (0.25 * lam)) * (1.0 - smooth_step((s - 1.5 * lam) / (0.5 * lam)))


def freq_bump(xi, center=SQRT8, halfwidth=1.0):
    """exp(1 - 1/(1 - r^2)) with r = (xi - center)/halfwidth; equals 1 at the center."""
    r = (np.asarray(xi, float) - center) / halfwidth
    out = np.zeros_like(r)
    inside = np.abs(r) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
    return out


@dataclass(frozen=True)
class OscIntegrand:
    """Temporal scale lam, sign of the <xi> phase and the amplitude phi.

    ``phi`` defaults to a bump of half-width 1 around sqrt(8); a custom callable
    must vanish outside ``phi_support``.
    """

    lam: float
    sign: int = 1
    phi: Callable | None = None
    phi_support: tuple = (SQRT8 - 1.0, SQRT8 + 1.0)

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise DomainError("sign must be +1 or -1")
        if not self.lam > 2:
            raise DomainError("lam must exceed 2 so that supp h_lam lies in s >= 1")
        if not self.phi_support[1] > self.phi_support[0]:
            raise DomainError("phi_support must be an increasing pair")

    @property
    def h_support(self):
        return (0.5 * self.lam, 2.0 * self.lam)

    def h(self, s):
        return time_bump(s, self.lam)

    def amplitude(self, xi):
        if self.phi is None:
            c = 0.5 * (self.phi_support[0] + self.phi_support[1])
            return freq_bump(xi, c, 0.5 * (self.phi_support[1] - self.phi_support[0]))
        return np.asarray(self.phi(xi), dtype=complex)

    def with_sign(self, sign):
        return OscIntegrand(self.lam, sign, self.phi, self.phi_support)

    def to_dict(self):
        return {"lambda": self.lam, "sign": self.sign, "phi_support": list(self.phi_support),
                "phi": "bump" if self.phi is None else "custom"}


def _nodes(a, b, speed, per_period):
    """Composite 16-point Gauss-Legendre nodes on [a, b] resolving exp(i speed s)."""
    if b <= a:
        return np.empty(0), np.empty(0)
    periods = (b - a) * max(speed, 1.0) / (2 * np.pi)
    npan = max(1, math.ceil(periods * per_period / 16))
    edges = np.linspace(a, b, npan + 1)
    half = 0.5 * np.diff(edges)
    x, w = _GL
    nodes = (edges[:-1, None] + half[:, None] * (x[None, :] + 1.0)).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _evaluate(integ: OscIntegrand, t, x, per_period):
    t = np.asarray(t, float)
    x = np.asarray(x, float)
    out = np.zeros(t.shape, complex)
    lo, hi = integ.h_support
    lo = max(lo, 1.0)
    xa, xb = integ.phi_support
    bracket_max = math.sqrt(1 + max(xa * xa, xb * xb))
    s_speed = 3.0 + bracket_max
    nodes = 0
    for tv in np.unique(t):
        upper = min(tv, hi)
        if upper <= lo:
            continue
        idx = np.nonzero(t == tv)[0]
        s, ws = _nodes(lo, upper, s_speed, per_period)
        xi_speed = (tv - lo) + float(np.max(np.abs(x[idx])))
        xi, wx = _nodes(xa, xb, xi_speed, per_period)
        gs = ws * integ.h(s) * np.exp(3j * s)
        for blk in range(0, xi.size, _XI_BLOCK):
            xb_, wb = xi[blk:blk + _XI_BLOCK], wx[blk:blk + _XI_BLOCK]
            br = np.sqrt(1 + xb_ * xb_)
            A = gs @ np.exp(-1j * integ.sign * np.outer(s, br))
            coef = wb * integ.amplitude(xb_) * A * np.exp(1j * integ.sign * tv * br)
            out[idx] += np.exp(1j * np.outer(x[idx], xb_)) @ coef
        nodes += s.size * xi.size + idx.size * xi.size
    return out, nodes


@dataclass
class OscResult:
    value: np.ndarray
    est_error: np.ndarray
    nodes_per_period: int
    work: int


def eval_I(t, x, integrand: OscIntegrand, tol: float = 1e-8, nodes_per_period: int = 10,
           budget: float = 5e8) -> OscResult:
    """I_pm at the points (t, x) (broadcast), with an error estimate per point.

    The node density doubles until every estimate is below ``tol``; exceeding
    ``budget`` evaluations raises BudgetExceededError carrying the best result.
    """
    t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
    if np.any(t <= 1):
        raise DomainError("t must exceed 1")
    p = max(int(nodes_per_period), 10)
    coarse, work = _evaluate(integrand, t.ravel(), x.ravel(), p)
    total = work
    while True:
        fine, work = _evaluate(integrand, t.ravel(), x.ravel(), 2 * p)
        total += work
        err = np.abs(fine - coarse)
        if np.all(err <= tol):
            return OscResult(fine.reshape(t.shape), err.reshape(t.shape), 2 * p, total)
        if total > budget:
            err_obj = BudgetExceededError(f"tolerance {tol:g} not reached within {budget:g} evaluations")
            err_obj.best = OscResult(fine.reshape(t.shape), err.reshape(t.shape), 2 * p, total)
            raise err_obj
        coarse, p = fine, 2 * p


def stationary_points(t: float, x: float):
    """(xi_plus, xi_minus, s_plus, s_minus) with xi = pm sqrt(8) and s = t pm 3x/sqrt(8)."""
    if not abs(x) < t:
        raise DomainError(f"(t, x) = ({t}, {x}) is not inside the light cone")
    shift = 3.0 * x / SQRT8
    return SQRT8, -SQRT8, t + shift, t - shift


def bump_derivative_constants(lam: float, orders=(1, 2, 3), samples: int = 20001):
    """max |d^n h_lam| * lam^n for the reference time bump (finite differences on a fine grid)."""
    s = np.linspace(0.45 * lam, 2.05 * lam, samples)
    h = time_bump(s, lam)
    ds = s[1] - s[0]
    out = {}
    d = h
    for n in range(1, max(orders) + 1):
        d = np.gradient(d, ds)
        if n in orders:
            out[n] = float(np.max(np.abs(d)) * lam**n)
    return out


def _power_fit(r, a):
    r = np.asarray(r, float)
    a = np.asarray(a, float)
    if r.size < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(r), np.log(a), 1)
    return float(slope)


def cone_dichotomy_scan(integrand: OscIntegrand, t_values, x_over_t_values, eps: float = 0.02,
                        tol: float = 1e-10, noise_factor: float = 10.0,
                        fit_from: float | None = None) -> dict:
    """|I_+| and |I_-| over a (t, x/t) grid with the three dichotomy checks.

    (a) max |I_-| inside |x/t| <= 1 - eps relative to max |I_+| there,
    (b) max |I_+| inside (the uniform bound),
    (c) falloff for |x/t| >= 1 - eps/2 and t >= fit_from (default 8 lambda, i.e.
        four times the end of the source window): at each t the largest |I_+|
        over the outside rays, kept when above ``noise_factor`` times its error
        estimate, is fitted as a power of <(t, x)>.
    """
    lam = integrand.lam
    fit_from = 8.0 * lam if fit_from is None else fit_from
    t_values = np.asarray(t_values, float)
    ratios = np.asarray(x_over_t_values, float)
    T, R = np.meshgrid(t_values, ratios, indexing="ij")
    X = T * R
    inside = np.abs(R) <= 1 - eps
    outside = (np.abs(R) >= 1 - eps / 2) & (T >= fit_from)
    wanted = inside | outside
    plus_val = np.zeros(T.shape, complex)
    plus_err = np.zeros(T.shape)
    minus_val = np.full(T.shape, np.nan + 0j)
    minus_err = np.full(T.shape, np.nan)
    if wanted.any():
        res = eval_I(T[wanted], X[wanted], integrand.with_sign(1), tol)
        plus_val[wanted], plus_err[wanted] = res.value, res.est_error
    if inside.any():
        res = eval_I(T[inside], X[inside], integrand.with_sign(-1), tol)
        minus_val[inside], minus_err[inside] = res.value, res.est_error
    ap, am = np.abs(plus_val), np.abs(minus_val)
    max_plus = float(ap[inside].max()) if inside.any() else 0.0
    max_minus = float(am[inside].max()) if inside.any() else 0.0
    fit_r, fit_a = [], []
    for i in range(T.shape[0]):
        row = outside[i]
        if not row.any():
            continue
        j = int(np.argmax(np.where(row, ap[i], -1.0)))
        if ap[i, j] > noise_factor * plus_err[i, j] and ap[i, j] > 0:
            fit_r.append(math.sqrt(1 + T[i, j] ** 2 + X[i, j] ** 2))
            fit_a.append(float(ap[i, j]))
    rows = []
    for i, j in zip(*np.nonzero(wanted)):
        for sign, val, err in ((1, plus_val, plus_err), (-1, minus_val, minus_err)):
            v = val[i, j]
            if np.isnan(v):
                continue
            rows.append({"t": float(T[i, j]), "x": float(X[i, j]), "x_over_t": float(R[i, j]),
                         "sign": sign, "re_I": float(v.real), "im_I": float(v.imag),
                         "abs_I": float(abs(v)), "est_error": float(err[i, j])})
    return {
        "integrand": integrand.to_dict(), "eps": eps, "fit_from": fit_from,
        "inside_max_plus": max_plus, "inside_max_minus": max_minus,
        "minus_to_plus": max_minus / max_plus if max_plus > 0 else float("nan"),
        "outside_exponent": _power_fit(fit_r, fit_a), "outside_points": len(fit_r),
        "outside_r": fit_r, "outside_abs": fit_a,
        "rows": rows,
    }


def lambda_uniformity(lams=(32, 64, 128), t_factors=(0.75, 1.0, 1.5, 2.0, 3.0, 4.0),
                      x_over_t_values=None, eps: float = 0.02, tol: float = 1e-10) -> dict:
    """Inside-cone sup |I_+| for each lambda, with t scaled by lambda."""
    if x_over_t_values is None:
        x_over_t_values = np.linspace(-(1 - eps), 1 - eps, 37)
    sups = {}
    for lam in lams:
        integ = OscIntegrand(float(lam), 1)
        T, R = np.meshgrid(lam * np.asarray(t_factors, float), np.asarray(x_over_t_values, float),
                           indexing="ij")
        sups[float(lam)] = float(np.abs(eval_I(T, T * R, integ, tol).value).max())
    v = np.array(list(sups.values()))
    return {"sup_by_lambda": sups, "spread": float(v.max() / v.min())}


CSV_FIELDS = ["t", "x", "x_over_t", "sign", "re_I", "im_I", "abs_I", "est_error"]


def scan_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in report["rows"]:
        w.writerow({k: (f"{r[k]:.12e}" if isinstance(r[k], float) else r[k]) for k in CSV_FIELDS})
    return buf.getvalue()


def scan_summary_json(report: dict) -> str:
    keep = {k: v for k, v in report.items() if k != "rows"}
    return json.dumps(keep, indent=1, sort_keys=True, default=float)
