"""Time-dependent coefficients of the finite-horizon dual HJB solution.

Kim-Omberg: v(x, t) = exp(Lambda(t) - beta(t) x^2 / 2 - gamma(t) x) with

    beta'   = -alpha2 beta^2 - 2 alpha1 beta + q(1-q) mu^2 / varsigma^2
    gamma'  = -(alpha1 + alpha2 beta) gamma + alpha3 beta
    Lambda' = alpha2 gamma^2 / 2 - alpha3 gamma - sigma^2 beta / 2

all starting from 0.  beta has the standard Riccati closed form; gamma has
an integrating-factor representation whose weight is kept in log space so
nothing overflows at large horizons; Lambda is a plain integral.

Heston: v(x, t) = exp(-gamma(t) - beta(t) x); substituting into the HJB
yields the Riccati equation

    beta' = -(alpha2/2) beta^2 - beta1 beta + (q/2)(1-q) mu^2 / varsigma^2

(with alpha2 = sigma1^2 + sigma2^2/(1-q) as in Kim-Omberg) whose closed form
is the sinh/cosh display, and gamma(t) = k m_bar * integral of beta.

``riccati_oracle`` integrates the governing ODE systems with classical RK4
at a fixed step as an independent verification path for the closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .models import HESTON, KIM_OMBERG, Model, UnsupportedModelError

H_ODE = 1e-3          # fixed RK4 step of the oracle
TOL_ODE = 1e-8        # half-step Richardson gate of the oracle
QUAD_RESOLUTION = 0.01  # target quadrature step, in units of the mixing time


@dataclass(frozen=True)
class CoefficientPath:
    """Sampled coefficient functions on a strictly increasing grid from 0."""

    grid: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    Lambda: np.ndarray | None = None  # kim_omberg only
    meta: dict = field(default_factory=dict)

    def to_csv_rows(self) -> list[list]:
        header = ["t", "beta", "gamma"] + (["Lambda"] if self.Lambda is not None else [])
        rows: list[list] = [header]
        for i, t in enumerate(self.grid):
            row = [t, self.beta[i], self.gamma[i]]
            if self.Lambda is not None:
                row.append(self.Lambda[i])
            rows.append(row)
        return rows


def _mixing_rate(model: Model) -> float:
    c = model.constants
    if model.kind == KIM_OMBERG:
        return 2.0 * c.alpha4
    if model.kind == HESTON:
        return c.beta2
    raise UnsupportedModelError("no coefficient path for the complete-market model")


def ko_beta(model: Model, t):
    """Closed-form Kim-Omberg beta(t) (vectorized in t)."""
    c = model.constants
    pa = model.params
    t = np.asarray(t, dtype=float)
    n = model.q * (1.0 - model.q) * (pa.mu / pa.varsigma) ** 2
    e = np.exp(-2.0 * c.alpha4 * t)
    out = n * (1.0 - e) / (c.alpha4 + c.alpha1 + (c.alpha4 - c.alpha1) * e)
    return out if out.ndim else float(out)


def heston_beta(model: Model, t):
    """Closed-form Heston beta(t), evaluated in overflow-safe form.

    The sinh/cosh display is rewritten with exp(beta2 t / 2) factored out,
    which is exact and stable for arbitrarily large t.
    """
    c = model.constants
    pa = model.params
    t = np.asarray(t, dtype=float)
    n = model.q * (1.0 - model.q) * (pa.mu / pa.varsigma) ** 2
    e = np.exp(-c.beta2 * t)
    out = n * (1.0 - e) / (c.beta2 * (1.0 + e) + c.beta1 * (1.0 - e))
    return out if out.ndim else float(out)


def closed_beta(model: Model, t):
    if model.kind == KIM_OMBERG:
        return ko_beta(model, t)
    if model.kind == HESTON:
        return heston_beta(model, t)
    raise UnsupportedModelError("no beta coefficient for the complete-market model")


def _refined_grid(model: Model, grid: np.ndarray):
    """Split each grid interval into an even number of sub-steps <= h_quad.

    Returns (nodes, indices of the original grid points).  Grid points land
    on even refined indices, so pairwise cumulative Simpson passes through
    them, and the index map avoids any floating-point grid matching.
    """
    h_quad = QUAD_RESOLUTION / _mixing_rate(model) * 2.0
    # beta varies on the timescale 2/mixing_rate; QUAD_RESOLUTION of that
    nodes = [0.0]
    idx = [0]
    for a, b in zip(grid[:-1], grid[1:]):
        width = b - a
        m = max(2, 2 * math.ceil(width / (2.0 * h_quad)))
        sub = a + width * np.arange(1, m + 1) / m
        sub[-1] = b  # land exactly on the grid point
        nodes.extend(sub)
        idx.append(len(nodes) - 1)
    return np.asarray(nodes), np.asarray(idx)


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1 or grid[0] != 0.0:
        raise ValueError("grid must be 1-d and start at 0")
    if grid.size > 1 and not np.all(np.diff(grid) > 0):
        raise ValueError("grid must be strictly increasing")
    return grid


def ko_gamma_lambda(model: Model, grid) -> tuple[np.ndarray, np.ndarray, dict]:
    """(gamma, Lambda) sampled on ``grid`` plus quadrature metadata.

    gamma comes from the integrating-factor formula
        gamma(t) = alpha3 * exp(-L(t)) * int_0^t beta(s) exp(L(s)) ds,
        L(t) = int_0^t (alpha1 + alpha2 beta(s)) ds,
    advanced pairwise over a refined grid with composite Simpson weights;
    the weight exp(L(s) - L(t)) is assembled in log space per pair so the
    computation never overflows however large alpha1 t gets.
    """
    grid = _check_grid(grid)
    c = model.constants
    meta: dict = {}
    if grid.size > 1:
        max_step = float(np.max(np.diff(grid)))
        if max_step > 0.5 / c.alpha4:
            # internal refinement keeps the values accurate; the warning notes
            # that the returned sampling cannot resolve the transient
            meta["refinement_warning"] = (
                f"grid step {max_step:g} is coarse relative to the coefficient "
                f"timescale 1/(2 alpha4) = {0.5 / c.alpha4:g}"
            )
    nodes, idx = _refined_grid(model, grid)
    meta["n_quad_nodes"] = int(nodes.size)
    beta_n = ko_beta(model, nodes)
    g = c.alpha1 + c.alpha2 * beta_n          # integrand of L
    gam = np.empty(nodes.size)
    gam[0] = 0.0
    n_pairs_total = (nodes.size - 1) // 2
    for j in range(n_pairs_total):
        i = 2 * j
        h = nodes[i + 1] - nodes[i]           # uniform within the pair
        g0, g1, g2 = g[i], g[i + 1], g[i + 2]
        dL_full = h / 3.0 * (g0 + 4.0 * g1 + g2)          # L_{i+2} - L_i
        dL_right = h / 12.0 * (-g0 + 8.0 * g1 + 5.0 * g2)  # L_{i+2} - L_{i+1}
        w0 = math.exp(-dL_full)
        w1 = math.exp(-dL_right)
        # Simpson for int_{t_i}^{t_{i+2}} beta(s) exp(L(s) - L_{i+2}) ds
        inc = h / 3.0 * (beta_n[i] * w0 + 4.0 * beta_n[i + 1] * w1 + beta_n[i + 2])
        gam[i + 2] = w0 * gam[i] + c.alpha3 * inc
        # interior node via the left-half Newton-Cotes rule, same integrand
        inc_half = h / 12.0 * (
            5.0 * beta_n[i] * w0 / w1 + 8.0 * beta_n[i + 1] - beta_n[i + 2] / w1
        )
        gam[i + 1] = (w0 / w1) * gam[i] + c.alpha3 * inc_half
    lam_integrand = 0.5 * c.alpha2 * gam**2 - c.alpha3 * gam - 0.5 * model.params.sigma**2 * beta_n
    Lam = _cumulative_simpson(nodes, lam_integrand)
    return gam[idx], Lam[idx], meta


def heston_gamma(model: Model, grid) -> tuple[np.ndarray, dict]:
    """gamma(t) = k m_bar * int_0^t beta(s) ds by composite Simpson."""
    grid = _check_grid(grid)
    nodes, idx = _refined_grid(model, grid)
    beta_n = heston_beta(model, nodes)
    gam = model.params.k * model.params.m_bar * _cumulative_simpson(nodes, beta_n)
    return gam[idx], {"n_quad_nodes": int(nodes.size)}


def _cumulative_simpson(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Cumulative integral over pairwise-uniform nodes (odd count per pair).

    Even nodes get composite Simpson; interior nodes the half-interval
    Newton-Cotes rule through the same three points.
    """
    out = np.empty_like(y)
    out[0] = 0.0
    if x.size == 1:
        return out
    i = np.arange(0, x.size - 2, 2)
    h = x[i + 1] - x[i]
    full = h / 3.0 * (y[i] + 4.0 * y[i + 1] + y[i + 2])
    left = h / 12.0 * (5.0 * y[i] + 8.0 * y[i + 1] - y[i + 2])
    out[2::2] = np.cumsum(full)
    out[1::2] = out[0:-1:2] + left
    return out


def build_path(model: Model, grid) -> CoefficientPath:
    """Closed-form coefficient path sampled on ``grid``."""
    grid = _check_grid(grid)
    if model.kind == KIM_OMBERG:
        beta = ko_beta(model, grid)
        gamma, Lam, meta = ko_gamma_lambda(model, grid)
        return CoefficientPath(grid=grid, beta=np.atleast_1d(beta), gamma=gamma,
                               Lambda=Lam, meta=meta)
    if model.kind == HESTON:
        beta = heston_beta(model, grid)
        gamma, meta = heston_gamma(model, grid)
        return CoefficientPath(grid=grid, beta=np.atleast_1d(beta), gamma=gamma,
                               meta=meta)
    raise UnsupportedModelError("no coefficient path for the complete-market model")


# --- independent ODE oracle --------------------------------------------------

def _scalar_rhs(model: Model):
    """Scalar right-hand side of the governing coefficient ODE system.

    State layout: kim_omberg (beta, gamma, Lambda); heston (beta, gamma).
    """
    c = model.constants
    q = model.q
    pa = model.params
    n = q * (1.0 - q) * (pa.mu / pa.varsigma) ** 2
    if model.kind == KIM_OMBERG:
        a1, a2, a3 = c.alpha1, c.alpha2, c.alpha3
        sig2 = pa.sigma**2

        def rhs(s):
            b, g, _ = s
            return (
                -a2 * b * b - 2.0 * a1 * b + n,
                -(a1 + a2 * b) * g + a3 * b,
                0.5 * a2 * g * g - a3 * g - 0.5 * sig2 * b,
            )

        return rhs, 3
    if model.kind == HESTON:
        b1 = c.beta1
        a2h = c.sigma1**2 + c.sigma2**2 / (1.0 - q)
        km = pa.k * pa.m_bar

        def rhs(s):
            b, _ = s
            return (-0.5 * a2h * b * b - b1 * b + 0.5 * n, km * b)

        return rhs, 2
    raise UnsupportedModelError("no coefficient ODE for the complete-market model")


def _rk4_scalar(rhs, dim: int, grid: np.ndarray, h: float) -> np.ndarray:
    """Classical RK4 over plain floats, landing exactly on grid points."""
    state = (0.0,) * dim
    out = np.empty((grid.size, dim))
    out[0] = state
    for i in range(grid.size - 1):
        span = grid[i + 1] - grid[i]
        m = max(1, math.ceil(span / h))
        dt = span / m
        for _ in range(m):
            k1 = rhs(state)
            k2 = rhs(tuple(s + 0.5 * dt * k for s, k in zip(state, k1)))
            k3 = rhs(tuple(s + 0.5 * dt * k for s, k in zip(state, k2)))
            k4 = rhs(tuple(s + dt * k for s, k in zip(state, k3)))
            state = tuple(
                s + dt / 6.0 * (a + 2.0 * b + 2.0 * c + d)
                for s, a, b, c, d in zip(state, k1, k2, k3, k4)
            )
        out[i + 1] = state
    return out


def _rk4_on_grid(rhs, dim: int, grid: np.ndarray, h: float, batch: int) -> np.ndarray:
    """Classical RK4 with fixed step <= h, vectorized over a batch axis."""
    state = np.zeros((dim, batch))
    out = np.empty((grid.size, dim, batch))
    out[0] = state
    for i in range(grid.size - 1):
        span = grid[i + 1] - grid[i]
        m = max(1, math.ceil(span / h))
        dt = span / m
        for _ in range(m):
            k1 = rhs(state)
            k2 = rhs(state + 0.5 * dt * k1)
            k3 = rhs(state + 0.5 * dt * k2)
            k4 = rhs(state + dt * k3)
            state = state + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[i + 1] = state
    return out


def riccati_oracle(model: Model, grid, h_ode: float = H_ODE,
                   tol_ode: float = TOL_ODE) -> CoefficientPath:
    """RK4 integration of the coefficient ODEs, Richardson-gated.

    The systems are integrated at steps ``h_ode`` and ``h_ode/2``; if the two
    disagree beyond ``tol_ode`` at any grid point the step is declared too
    large and an error is raised.
    """
    grid = _check_grid(grid)
    rhs, dim = _scalar_rhs(model)
    full = _rk4_scalar(rhs, dim, grid, h_ode)
    half = _rk4_scalar(rhs, dim, grid, h_ode / 2.0)
    disagreement = float(np.max(np.abs(full - half))) if grid.size else 0.0
    if disagreement > tol_ode:
        raise ValueError(
            f"RK4 step h_ode={h_ode:g} too large: half-step disagreement "
            f"{disagreement:.3e} exceeds tol_ode={tol_ode:g}"
        )
    meta = {"h_ode": h_ode, "richardson_disagreement": disagreement}
    if model.kind == KIM_OMBERG:
        return CoefficientPath(grid=grid, beta=half[:, 0], gamma=half[:, 1],
                               Lambda=half[:, 2], meta=meta)
    return CoefficientPath(grid=grid, beta=half[:, 0], gamma=half[:, 1], meta=meta)


def _batched_rhs(models: list[Model]):
    """RHS closure for same-kind models; state shape (dim, n_models)."""
    kind = models[0].kind
    n = np.array([m.q * (1 - m.q) * (m.params.mu / m.params.varsigma) ** 2
                  for m in models])
    if kind == KIM_OMBERG:
        a1 = np.array([m.constants.alpha1 for m in models])
        a2 = np.array([m.constants.alpha2 for m in models])
        a3 = np.array([m.constants.alpha3 for m in models])
        sig2 = np.array([m.params.sigma**2 for m in models])

        def rhs(state):
            b, g, _ = state
            db = -a2 * b * b - 2.0 * a1 * b + n
            dg = -(a1 + a2 * b) * g + a3 * b
            dL = 0.5 * a2 * g * g - a3 * g - 0.5 * sig2 * b
            return np.stack([db, dg, dL])

        return rhs, 3
    b1 = np.array([m.constants.beta1 for m in models])
    a2h = np.array([m.constants.sigma1**2 + m.constants.sigma2**2 / (1 - m.q)
                    for m in models])
    km = np.array([m.params.k * m.params.m_bar for m in models])

    def rhs(state):
        b, _ = state
        db = -0.5 * a2h * b * b - b1 * b + 0.5 * n
        dg = km * b
        return np.stack([db, dg])

    return rhs, 2


def riccati_oracle_batch(models: list[Model], grid, h_ode: float = H_ODE,
                         tol_ode: float = TOL_ODE) -> list[CoefficientPath]:
    """Vectorized oracle for a sweep of same-kind parameter sets."""
    if not models:
        return []
    kind = models[0].kind
    if any(m.kind != kind for m in models):
        raise ValueError("riccati_oracle_batch needs models of one kind")
    grid = _check_grid(grid)
    rhs, dim = _batched_rhs(models)
    full = _rk4_on_grid(rhs, dim, grid, h_ode, len(models))
    half = _rk4_on_grid(rhs, dim, grid, h_ode / 2.0, len(models))
    disagreement = np.max(np.abs(full - half), axis=(0, 1))
    out = []
    for j, m in enumerate(models):
        if disagreement[j] > tol_ode:
            raise ValueError(
                f"RK4 step h_ode={h_ode:g} too large for draw {j}: "
                f"disagreement {disagreement[j]:.3e}"
            )
        vals = half[:, :, j]
        meta = {"h_ode": h_ode, "richardson_disagreement": float(disagreement[j])}
        if kind == KIM_OMBERG:
            out.append(CoefficientPath(grid=grid, beta=vals[:, 0], gamma=vals[:, 1],
                                       Lambda=vals[:, 2], meta=meta))
        else:
            out.append(CoefficientPath(grid=grid, beta=vals[:, 0], gamma=vals[:, 1],
                                       meta=meta))
    return out
