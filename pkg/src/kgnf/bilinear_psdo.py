"""Bilinear pseudodifferential operators K(D_y, D_y)[u, v] on the semiclassical lattice.

K[u, v](y) = (4 pi^2)^-1 int int k(xi, eta) exp(i rho y (xi + eta)) u_hat(xi) v_hat(eta) dxi deta.

The reference implementation sums the symbol over all lattice pairs (xi_j, eta_l)
and bins the products by output frequency j + l.  Output modes outside the
grid's band are dropped, which is the same as zero-padding the inputs 2x and
truncating the product back.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import ConfigError, GridMismatchError, StencilError
from .hypergrid import Field
from .spectral import dealiased_product, dy, frequencies, lp_project, apply_multiplier

FD_STEP = 1e-5


def _jp(x):
    return np.sqrt(1.0 + x * x)


@dataclass(frozen=True, eq=False)
class BilinearSymbol:
    """A symbol k(xi, eta) with class metadata for S^{a,b;c}.

    ``terms`` optionally lists separable pieces [(a_i, b_i)] with
    k = sum a_i(xi) b_i(eta); when present ``apply`` can use the fast path.
    """

    evaluate: Callable
    order_a: float = 0.0
    order_b: float = 0.0
    order_c: float = 0.0
    vanishes_at_origin: bool = False
    d_xi: Callable | None = None
    d_eta: Callable | None = None
    name: str = "symbol"
    terms: tuple | None = None

    def __call__(self, xi, eta):
        return self.evaluate(np.asarray(xi, float), np.asarray(eta, float))

    def partial(self, axis: int):
        """Closed-form partial if registered, else a centered difference with step 1e-5."""
        closed = self.d_xi if axis == 1 else self.d_eta
        if closed is not None:
            return closed

        def fd(xi, eta):
            xi = np.asarray(xi, float)
            eta = np.asarray(eta, float)
            if axis == 1:
                h = FD_STEP * np.maximum(1.0, np.abs(xi))
                return (self.evaluate(xi + h, eta) - self.evaluate(xi - h, eta)) / (2 * h)
            h = FD_STEP * np.maximum(1.0, np.abs(eta))
            return (self.evaluate(xi, eta + h) - self.evaluate(xi, eta - h)) / (2 * h)

        return fd

    def partial_symbol(self, axis: int) -> "BilinearSymbol":
        return BilinearSymbol(self.partial(axis), name=f"d{axis} {self.name}")

    def envelope(self, xi, eta):
        jx, je = _jp(np.asarray(xi, float)), _jp(np.asarray(eta, float))
        return jx**self.order_a * je**self.order_b / (jx + je) ** self.order_c

    @cached_property
    def class_constant(self) -> float:
        """Fitted C in |k| <= C <xi>^a <eta>^b / (<xi> + <eta>)^c on a log lattice."""
        grid = np.concatenate([-np.logspace(-2, 3, 61)[::-1], [0.0], np.logspace(-2, 3, 61)])
        X, Y = np.meshgrid(grid, grid, indexing="ij")
        return float(np.max(np.abs(self(X, Y)) / self.envelope(X, Y)))

    def check_class(self, C=None, samples=None) -> bool:
        C = self.class_constant if C is None else C
        if samples is None:
            samples = np.random.default_rng(0).normal(scale=30.0, size=(2, 2000))
        xi, eta = samples
        return bool(np.all(np.abs(self(xi, eta)) <= C * self.envelope(xi, eta) * (1 + 1e-12)))


# --- catalogue ---------------------------------------------------------------

def shatah_denominator(xi, eta):
    """q = 4 xi^2 + 4 eta^2 + 4 xi eta + 3  (>= 3 everywhere)."""
    return 4 * xi * xi + 4 * eta * eta + 4 * xi * eta + 3.0


def shatah_symbols(alpha0: float):
    """The pair (k0, k2) = (alpha0 (1 - 2 xi eta) / q, 2 alpha0 / q)."""
    a = float(alpha0)

    def k0(xi, eta):
        return a * (1 - 2 * xi * eta) / shatah_denominator(xi, eta)

    def k2(xi, eta):
        return 2 * a / shatah_denominator(xi, eta)

    def k0_dxi(xi, eta):
        q = shatah_denominator(xi, eta)
        return a * (-2 * eta * q - (1 - 2 * xi * eta) * (8 * xi + 4 * eta)) / q**2

    def k0_deta(xi, eta):
        return k0_dxi(eta, xi)

    def k2_dxi(xi, eta):
        q = shatah_denominator(xi, eta)
        return -2 * a * (8 * xi + 4 * eta) / q**2

    def k2_deta(xi, eta):
        return k2_dxi(eta, xi)

    sym0 = BilinearSymbol(k0, 1, 1, 2, False, k0_dxi, k0_deta, "shatah_k0")
    sym2 = BilinearSymbol(k2, 0, 0, 2, False, k2_dxi, k2_deta, "shatah_k2")
    return sym0, sym2


def _one(xi, eta):
    return np.ones(np.broadcast(xi, eta).shape)


def _zero(xi, eta):
    return np.zeros(np.broadcast(xi, eta).shape)


ONE = BilinearSymbol(_one, 0, 0, 0, False, _zero, _zero, "one",
                     terms=((lambda x: np.ones_like(x), lambda x: np.ones_like(x)),))

_ALLOWED_NAMES = {"xi", "eta", "jxi", "jeta", "pi"}
_ALLOWED_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name, ast.Load,
                  ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)


def parse_symbol(expr: str, name: str | None = None, orders=(0.0, 0.0, 0.0)) -> BilinearSymbol:
    """Symbol from an arithmetic expression in xi, eta, <xi>, <eta>.

    Accepts + - * / and powers (^ or **), numeric constants, parentheses, and
    the unicode spellings of the variables.
    """
    text = expr
    for old, new in (("⟨ξ⟩", "jxi"), ("⟨η⟩", "jeta"), ("<xi>", "jxi"), ("<eta>", "jeta"),
                     ("ξ", "xi"), ("η", "eta"), ("^", "**"), ("×", "*"), ("−", "-")):
        text = text.replace(old, new)
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse symbol {expr!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ConfigError(f"symbol {expr!r} uses unsupported syntax {type(node).__name__}")
        if isinstance(node, ast.Name) and node.id not in _ALLOWED_NAMES:
            raise ConfigError(f"unknown name {node.id!r} in symbol {expr!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigError(f"non-numeric constant in symbol {expr!r}")
    code = compile(tree, "<symbol>", "eval")

    def evaluate(xi, eta):
        env = {"xi": xi, "eta": eta, "jxi": _jp(xi), "jeta": _jp(eta), "pi": np.pi}
        val = eval(code, {"__builtins__": {}}, env)  # noqa: S307 - whitelisted AST
        return val * np.ones(np.broadcast(xi, eta).shape)

    a, b, c = orders
    vanishes = abs(complex(evaluate(np.array(0.0), np.array(0.0)))) < 1e-14
    return BilinearSymbol(evaluate, a, b, c, vanishes, name=name or expr)


def get_symbol(name: str, alpha0: float = 1.0) -> BilinearSymbol:
    """Catalogue lookup: "shatah_k0", "shatah_k2", "one", or an expression."""
    if name == "shatah_k0":
        return shatah_symbols(alpha0)[0]
    if name == "shatah_k2":
        return shatah_symbols(alpha0)[1]
    if name == "one":
        return ONE
    return parse_symbol(name)


# --- application ---------------------------------------------------------------

def _check_pair(u: Field, v: Field):
    if u.grid != v.grid:
        raise GridMismatchError("apply needs both fields on the same grid")
    if abs(u.rho - v.rho) > 1e-12:
        raise GridMismatchError(f"apply needs a common rho ({u.rho} vs {v.rho})")


def apply_reference(K: BilinearSymbol, u: Field, v: Field, row_block: int = 512) -> Field:
    """O(N^2) lattice double sum, output truncated to the grid's band."""
    _check_pair(u, v)
    g = u.grid
    n = g.n_points
    xi = frequencies(g, u.rho)
    idx = g.mode_index
    uf = np.fft.fft(u.values)
    vf = np.fft.fft(v.values)
    out_re = np.zeros(2 * n)
    out_im = np.zeros(2 * n)
    for start in range(0, n, row_block):
        rows = slice(start, min(start + row_block, n))
        kmat = K(xi[rows][:, None], xi[None, :])
        prod = kmat * np.outer(uf[rows], vf)
        m = (idx[rows][:, None] + idx[None, :]).ravel() + n
        out_re += np.bincount(m, weights=prod.real.ravel(), minlength=2 * n)
        out_im += np.bincount(m, weights=prod.imag.ravel(), minlength=2 * n)
    total = out_re + 1j * out_im
    # keep output modes in [-n/2, n/2)
    hat = np.zeros(n, complex)
    hat[idx >= 0] = total[idx[idx >= 0] + n]
    hat[idx < 0] = total[idx[idx < 0] + n]
    # DFT normalisation: product of two inverse DFTs
    return u.with_values(np.fft.ifft(hat) / n)


def apply_fast(K: BilinearSymbol, u: Field, v: Field) -> Field:
    """Separable fast path: sum_i (a_i(D) u)(b_i(D) v), dealiased."""
    if K.terms is None:
        raise ConfigError(f"symbol {K.name} has no separable representation")
    _check_pair(u, v)
    xi = frequencies(u.grid, u.rho)
    out = Field.zeros(u.grid, u.rho)
    for a, b in K.terms:
        out = out + dealiased_product(apply_multiplier(u, a(xi)), apply_multiplier(v, b(xi)))
    return out


def apply(K: BilinearSymbol, u: Field, v: Field, fast: bool | None = None) -> Field:
    """Apply K(D_y, D_y)[u, v]; uses the separable path when available unless fast=False."""
    if fast is None:
        fast = K.terms is not None
    if fast:
        return apply_fast(K, u, v)
    return apply_reference(K, u, v)


def leibniz_dy_residual(K: BilinearSymbol, u: Field, v: Field) -> float:
    """sup | D_y K[u,v] - K[D_y u, v] - K[u, D_y v] |."""
    lhs = dy(apply(K, u, v))
    rhs = apply(K, dy(u), v) + apply(K, u, dy(v))
    return float(np.max(np.abs(lhs.values - rhs.values)))


def frozen_rho_derivative(K: BilinearSymbol, u: Field, v: Field) -> Field:
    """d_rho K[u, v] with u, v held fixed as functions of y.

    Only the symbol depends on rho (xi = wavenumber / rho), which gives
    -rho^-1 (d_1 K[D_y u, v] + d_2 K[u, D_y v]).
    """
    d1 = K.partial_symbol(1)
    d2 = K.partial_symbol(2)
    return -(apply(d1, dy(u), v) + apply(d2, u, dy(v))) / u.rho


def frozen_rho_derivative2(K: BilinearSymbol, u: Field, v: Field) -> Field:
    """d_rho^2 K[u, v] with u, v held fixed.

    With E the Euler operator xi d_1 + eta d_2, the symbol derivative is
    rho^-2 (E^2 + E) k = rho^-2 (xi^2 k_11 + 2 xi eta k_12 + eta^2 k_22 + 2 E k).
    """
    d1 = K.partial_symbol(1)
    d2 = K.partial_symbol(2)
    d11, d12, d22 = d1.partial_symbol(1), d1.partial_symbol(2), d2.partial_symbol(2)
    du, dv = dy(u), dy(v)
    out = (apply(d11, dy(u, 2), v) + 2 * apply(d12, du, dv) + apply(d22, u, dy(v, 2))
           + 2 * apply(d1, du, v) + 2 * apply(d2, u, dv))
    return out / u.rho**2


def leibniz_drho_residual(K: BilinearSymbol, u_family, v_family) -> float:
    """Defect in the rho-Leibniz rule on a three-point stencil (O(h^2)).

    d_rho K[u,v] - K[u_dot, v] - K[u, v_dot] + rho^-1 d_1K[D u, v] + rho^-1 d_2K[u, D v]
    """
    if len(u_family) != 3 or len(v_family) != 3:
        raise StencilError("need three-point rho stencils")
    ul, um, uh = u_family
    vl, vm, vh = v_family
    h = 0.5 * (uh.rho - ul.rho)
    if h <= 0:
        raise StencilError("stencil must be increasing in rho")
    lhs = (apply(K, uh, vh).values - apply(K, ul, vl).values) / (2 * h)
    udot = um.with_values((uh.values - ul.values) / (2 * h))
    vdot = vm.with_values((vh.values - vl.values) / (2 * h))
    rhs = apply(K, udot, vm) + apply(K, um, vdot) + frozen_rho_derivative(K, um, vm)
    return float(np.max(np.abs(lhs - rhs.values)))


# --- dyadic kernel bounds ----------------------------------------------------

_EXPONENTS = {(2, "inf", 2), ("inf", 2, 2), ("inf", "inf", "inf"), (2, 2, 1)}


def _lp_norm(f: Field, p):
    vals = np.abs(f.values)
    if p == "inf":
        return float(vals.max())
    if p == 1:
        return float(np.sum(vals) * f.grid.spacing)
    return float(np.sqrt(np.sum(vals**2) * f.grid.spacing))


def dyadic_kernel_bound(K: BilinearSymbol, k: int, k_prime: int, p=2, q="inf", r=2,
                        grid=None, rho: float = 1.0, samples: int = 200, seed: int = 0) -> float:
    """Largest observed ||K[P_k u, P_k' v]||_r / (||P_k u||_p ||P_k' v||_q), normalized.

    The normalization is 2^(a k) 2^((b - c) k') with frequencies measured on
    the semiclassical scale (xi ~ 2^k).  Inputs are random fields projected to
    the two dyadic shells.
    """
    if k > k_prime:
        raise ConfigError("need k <= k_prime")
    p, q, r = (("inf" if x in ("inf", "infinity", np.inf) else int(x)) for x in (p, q, r))
    if (p, q, r) not in _EXPONENTS:
        raise ConfigError(f"exponent triple {(p, q, r)} is not a Holder triple in {{1,2,inf}}")
    from .hypergrid import HyperGrid

    if grid is None:
        need = 2.0 ** (k_prime + 2) * rho
        n = 256
        while np.pi * n / 12.0 < need:
            n *= 2
        grid = HyperGrid(6.0, n)
    rng = np.random.default_rng(seed)
    norm = 2.0 ** (K.order_a * k) * 2.0 ** ((K.order_b - K.order_c) * k_prime)
    best = 0.0
    for _ in range(samples):
        a = Field(rng.normal(size=grid.n_points) + 1j * rng.normal(size=grid.n_points), rho, grid)
        b = Field(rng.normal(size=grid.n_points) + 1j * rng.normal(size=grid.n_points), rho, grid)
        # localize in y as well so L^inf and L^2 norms are comparable
        env = np.exp(-(grid.y_samples / rng.uniform(0.3, 2.0)) ** 2)
        uk = lp_project(a * env, k, scale="semiclassical")
        vk = lp_project(b * env, k_prime, scale="semiclassical")
        den = _lp_norm(uk, p) * _lp_norm(vk, q)
        if den == 0:
            continue
        best = max(best, _lp_norm(apply(K, uk, vk), r) / den)
    return best / norm
