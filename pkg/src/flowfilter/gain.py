"""Poisson-equation solvers for the filter coefficients.

Every filter in the catalog needs, each step, the solution of one or two
Poisson equations against the current law rho:

  weighted (FPF / Reich):   div(rho M^{-1} grad p) = rhs * rho
  unweighted (Crisan&Xiong): lap p = rhs * rho

with rhs one of -(h - hbar), (r - rbar) with r = grad h . K, or
+-(h^2 - h2bar)/2.  Four solver routes are provided:

  * solve_exact_gaussian  - closed form for linear observation under a
    Gaussian law: constant gain P H^T, zero auxiliary potential;
  * solve_constant_gain   - the empirical-measure weak form tested against
    linear functions: K = Cov(x, h) under the sample measure;
  * solve_1d_integral     - exact cumulative quadrature of the once-
    integrated 1D equation on a grid density (shared by the FPF and the
    Crisan & Xiong routes, which coincide in 1D);
  * solve_galerkin        - basis-projected weak form with Monte-Carlo
    quadrature over the cloud (any dimension);
  * solve_fundamental_mc  - particle sum of the fundamental-solution
    gradient for the unweighted equation in d >= 2, with an epsilon
    cutoff of the singular kernel.

assemble_filter_coefficients maps a filter tag to the drift field a(x_i)
and gain field K(x_i) of its McKean-Vlasov representation.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_simpson

from . import _kernels
from .ensemble import Density1D, Ensemble, Moments, compute_moments, kde_density_1d
from .errors import (DimensionError, IllConditioned, ModelMismatch,
                     SingularCovariance, UnresolvedTail)
from .models import SystemModel

EPS_RHO = 1e-8
RIDGE = 1e-10

K_RHS_KINDS = ("fpf_phi", "crisan_beta", "reich_lambda")
DRIFT_RHS_KINDS = ("fpf_psi", "reich_omega", "crisan_alpha")


@dataclass
class GainField:
    """Per-particle gain vectors plus solver diagnostics.

    For 1D grid solvers the grid tables (gain and centred potential) are
    kept so downstream code can interpolate or differentiate the field.
    """

    at_particles: Optional[np.ndarray]      # (n, d)
    method: str
    rhs_kind: str
    aux_drift: Optional[np.ndarray] = None  # (n, d)
    diagnostics: dict = field(default_factory=dict)
    grid: Optional[np.ndarray] = None
    gain_grid: Optional[np.ndarray] = None
    potential_grid: Optional[np.ndarray] = None
    coefficients: Optional[np.ndarray] = None


def solve_exact_gaussian(moments: Moments, H) -> GainField:
    """Gaussian closed form: phi = (x - xbar)^T P H^T, so K = P H^T for
    every particle; the auxiliary psi potential is identically zero."""
    Hrow = np.asarray(H, dtype=float).reshape(-1)
    P = np.atleast_2d(moments.cov)
    if np.any(np.linalg.eigvalsh(P) <= 0):
        raise SingularCovariance(f"covariance eigenvalues {np.linalg.eigvalsh(P)}")
    K = P @ Hrow
    at = np.tile(K, (moments.n, 1))
    return GainField(at_particles=at, method="exact_gaussian", rhs_kind="fpf_phi",
                     aux_drift=np.zeros_like(at),
                     diagnostics={"residual": 0.0, "centring": 0.0})


def solve_constant_gain(moments: Moments) -> GainField:
    """Constant-gain approximation: the weak form tested against x gives
    K = Cov(x, h) under the empirical (1/n) measure."""
    K = moments.cov_xh * (moments.n - 1) / moments.n
    at = np.tile(K, (moments.n, 1))
    return GainField(at_particles=at, method="constant", rhs_kind="fpf_phi",
                     diagnostics={"residual": 0.0, "centring": 0.0})


def _cumint(y: np.ndarray, dx: float) -> np.ndarray:
    return cumulative_simpson(y, dx=dx, initial=0.0)


def solve_1d_integral(density: Density1D, model: SystemModel, rhs_kind: str,
                      particles: Optional[np.ndarray] = None,
                      h_bar: Optional[float] = None,
                      prior_gain_grid: Optional[np.ndarray] = None,
                      eps_floor: float = EPS_RHO) -> GainField:
    """Integrate the 1D Poisson equation once on the grid.

    For the gain kinds, rho(x) K(x) = -int_{-inf}^x (h - hbar) rho dy and
    the same cumulative integral serves the unweighted crisan_beta case
    since K = beta'/rho with beta'' = -(h - hbar) rho.  Drift kinds return
    the gradient field of the respective potential (grad psi, grad Omega,
    or grad alpha / rho, the last two being the same formula).
    """
    if model.dim != 1:
        raise DimensionError("solve_1d_integral requires d = 1")
    g = density.grid
    rho = density.values
    dx = density.dx
    x2 = g.reshape(-1, 1)
    h = model.obs(x2)
    rho_f = np.maximum(rho, eps_floor)
    floor_frac = float(np.mean(rho < eps_floor))

    if rhs_kind in ("fpf_phi", "crisan_beta", "reich_lambda"):
        hb = float(np.trapezoid(h * rho, g)) if h_bar is None else float(h_bar)
        I = _cumint((h - hb) * rho, dx)
        if abs(I[-1]) > 1e-6:
            raise UnresolvedTail(f"residual rhs integral {I[-1]:.3e} (grid too narrow)")
        gain_grid = -I / rho_f
        # divergence check: d/dx(rho K) + (h - hbar) rho, central differences
        resid = float(np.max(np.abs(np.gradient(-I, dx) + (h - hb) * rho)))
    elif rhs_kind == "fpf_psi":
        # integrate by parts with rbar = h2bar - hbar^2 (the weak-form value):
        # rho psi' = S - (h + hbar) I, S = int (h^2 - h2bar) rho,
        # I = int (h - hbar) rho.  Exact in 1D; the residual below checks it
        # against the direct rhs (r - rbar) rho with r = h' K.
        hb = float(np.trapezoid(h * rho, g)) if h_bar is None else float(h_bar)
        h2b = float(np.trapezoid(h * h * rho, g))
        I = _cumint((h - hb) * rho, dx)
        if abs(I[-1]) > 1e-6:
            raise UnresolvedTail(f"residual rhs integral {I[-1]:.3e} (grid too narrow)")
        S = _cumint((h * h - h2b) * rho, dx)
        rho_psi_p = S - (h + hb) * I
        gain_grid = rho_psi_p / rho_f
        if prior_gain_grid is None:
            prior_gain_grid = -I / rho_f
        r = model.obs_grad(x2)[:, 0] * prior_gain_grid
        rb = h2b - hb * hb
        resid = float(np.max(np.abs(np.gradient(rho_psi_p, dx) - (r - rb) * rho)))
    elif rhs_kind in ("reich_omega", "crisan_alpha"):
        h2b = float(np.trapezoid(h * h * rho, g))
        I = _cumint(0.5 * (h * h - h2b) * rho, dx)
        if abs(I[-1]) > 1e-6:
            raise UnresolvedTail(f"residual rhs integral {I[-1]:.3e} (grid too narrow)")
        gain_grid = I / rho_f
        resid = float(np.max(np.abs(np.gradient(I, dx) - 0.5 * (h * h - h2b) * rho)))
    else:
        raise ValueError(f"unknown rhs_kind {rhs_kind!r}")

    potential = _cumint(gain_grid, dx)
    potential -= np.trapezoid(potential * rho, g)
    centring = float(abs(np.trapezoid(potential * rho, g)))

    at = None
    if particles is not None:
        xs = np.asarray(particles, dtype=float).reshape(-1)
        at = np.interp(xs, g, gain_grid).reshape(-1, 1)
    return GainField(at_particles=at, method="integral_1d", rhs_kind=rhs_kind,
                     grid=g, gain_grid=gain_grid, potential_grid=potential,
                     diagnostics={"residual": resid, "centring": centring,
                                  "epsilon": eps_floor, "floor_frac": floor_frac})


# ---------------------------------------------------------------------------
# Galerkin route

@dataclass(frozen=True)
class BasisFunction:
    """C^1 basis element with batched value/gradient (and Hessian for the
    Ito-correction term of the continuous-time filters)."""

    name: str
    value: callable             # (n, d) -> (n,)
    grad: callable              # (n, d) -> (n, d)
    hess: Optional[callable] = None   # (n, d) -> (n, d, d)


def monomial_basis(dim: int, quadratic: bool = False):
    """Coordinate monomials x_1..x_d, optionally plus all quadratics."""
    basis = []
    for j in range(dim):
        def value(x, j=j):
            return x[:, j]

        def grad(x, j=j):
            out = np.zeros_like(x)
            out[:, j] = 1.0
            return out

        def hess(x, j=j):
            return np.zeros((x.shape[0], x.shape[1], x.shape[1]))

        basis.append(BasisFunction(f"x{j + 1}", value, grad, hess))
    if quadratic:
        for j in range(dim):
            for k in range(j, dim):
                def value(x, j=j, k=k):
                    return x[:, j] * x[:, k]

                def grad(x, j=j, k=k):
                    out = np.zeros_like(x)
                    out[:, j] += x[:, k]
                    out[:, k] += x[:, j]
                    return out

                def hess(x, j=j, k=k):
                    out = np.zeros((x.shape[0], x.shape[1], x.shape[1]))
                    out[:, j, k] += 1.0
                    out[:, k, j] += 1.0
                    return out

                basis.append(BasisFunction(f"x{j + 1}x{k + 1}", value, grad, hess))
    return basis


def solve_galerkin(ens: Ensemble, model: SystemModel, rhs_kind: str,
                   basis=None, m_inv: Optional[np.ndarray] = None,
                   prior_gain: Optional[np.ndarray] = None,
                   ridge: float = RIDGE) -> GainField:
    """Basis-projected weak form with Monte-Carlo quadrature over the cloud.

    Stiffness A_jk = mean(grad b_j . M^{-1} grad b_k); the load vector
    follows the rhs_kind.  The symmetric solve carries a 1e-10 ridge
    followed by two iterative-refinement sweeps, so the ridge stabilises
    degenerate clouds without biasing well-conditioned systems.
    """
    x = ens.particles
    n, d = x.shape
    if basis is None:
        basis = monomial_basis(d, quadratic=rhs_kind in DRIFT_RHS_KINDS)
    nb = len(basis)
    if n <= nb:
        raise ValueError("need more particles than basis functions")
    grads = [b.grad(x) for b in basis]
    vals = [b.value(x) for b in basis]
    Minv = np.eye(d) if m_inv is None else np.atleast_2d(np.asarray(m_inv, dtype=float))

    A = np.empty((nb, nb))
    mg = [g @ Minv.T for g in grads]
    for j in range(nb):
        for k in range(j, nb):
            A[j, k] = A[k, j] = np.mean(np.sum(grads[j] * mg[k], axis=1))
    cond = float(np.linalg.cond(A))
    if cond > 1e12:
        raise IllConditioned(cond)

    h = model.obs(x)
    h_bar = h.mean()
    if rhs_kind in ("fpf_phi", "reich_lambda", "crisan_beta"):
        load = np.array([np.mean((h - h_bar) * v) for v in vals])
    elif rhs_kind == "fpf_psi":
        if prior_gain is None:
            prior_gain = solve_galerkin(ens, model, "fpf_phi",
                                        basis=monomial_basis(d), m_inv=m_inv,
                                        ridge=ridge).at_particles
        r = np.sum(model.obs_grad(x) * prior_gain, axis=1)
        r_bar = r.mean()
        load = np.array([-np.mean((r - r_bar) * v) for v in vals])
    elif rhs_kind in ("reich_omega", "crisan_alpha"):
        h2_bar = (h * h).mean()
        load = np.array([-0.5 * np.mean((h * h - h2_bar) * v) for v in vals])
    else:
        raise ValueError(f"unknown rhs_kind {rhs_kind!r}")

    damped = A + ridge * np.eye(nb)
    c = np.linalg.solve(damped, load)
    for _ in range(2):                       # refine away the ridge bias
        c = c + np.linalg.solve(damped, load - A @ c)
    residual = float(np.max(np.abs(A @ c - load)))

    K = np.zeros((n, d))
    for j in range(nb):
        K += c[j] * mg[j]
    pot = np.zeros(n)
    for j in range(nb):
        pot += c[j] * vals[j]
    pot -= pot.mean()
    centring = float(abs(pot.mean()))
    return GainField(at_particles=K, method="galerkin", rhs_kind=rhs_kind,
                     coefficients=c,
                     diagnostics={"residual": residual, "centring": centring,
                                  "condition_number": cond},
                     potential_grid=None)


def galerkin_ito_drift(ens: Ensemble, model: SystemModel, fld: GainField,
                       basis=None, m_inv=None) -> np.ndarray:
    """(1/2) (grad K)^T K for a Galerkin field, from the basis Hessians."""
    x = ens.particles
    n, d = x.shape
    if basis is None:
        basis = monomial_basis(d)
    Minv = np.eye(d) if m_inv is None else np.atleast_2d(m_inv)
    K = fld.at_particles
    out = np.zeros((n, d))
    for j, b in enumerate(basis):
        if b.hess is None:
            raise ValueError(f"basis {b.name} lacks a Hessian")
        Hj = b.hess(x)                       # (n, d, d)
        out += fld.coefficients[j] * np.einsum("nij,nj->ni", Hj @ Minv.T, K)
    return 0.5 * out


# ---------------------------------------------------------------------------
# fundamental-solution route (unweighted Poisson equation, d >= 2)

def unit_sphere_area(d: int) -> float:
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


@dataclass
class FundamentalField:
    """Monte-Carlo fundamental-solution gradient field for lap u = -(m - mbar) rho."""

    sources: np.ndarray
    m_centered: np.ndarray
    epsilon: float

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = self.sources.shape[1]
        raw = _kernels.pairwise_grad_field(pts, self.sources, self.m_centered,
                                           self.epsilon)
        return raw / (self.sources.shape[0] * unit_sphere_area(d))


def solve_fundamental_mc(ens: Ensemble, m_values: np.ndarray,
                         epsilon: Optional[float] = None) -> FundamentalField:
    """grad u(x) = (1/omega_d) (1/N) sum_i (y_i - x) (m_i - mbar) / max(|x-y_i|, eps)^d.

    Self-interactions (y_i == x) are skipped; the default cutoff is
    eps = N^{-1/d} and is reported through the field object."""
    if ens.dim < 2:
        raise DimensionError("fundamental-solution route requires d >= 2 "
                             "(use solve_1d_integral in d = 1)")
    m = np.asarray(m_values, dtype=float).reshape(-1)
    if m.shape[0] != ens.n:
        raise ValueError("m_values must have one entry per particle")
    eps = float(ens.n ** (-1.0 / ens.dim)) if epsilon is None else float(epsilon)
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    return FundamentalField(sources=ens.particles, m_centered=m - m.mean(),
                            epsilon=eps)


def multivariate_kde_at_points(ens: Ensemble, points: Optional[np.ndarray] = None,
                               eps_floor: float = EPS_RHO):
    """Product-Gaussian KDE evaluated at particle locations (d >= 2 Crisan
    1/rho factor).  Returns (values, floored_values, floor_fraction)."""
    pts = ens.particles if points is None else np.atleast_2d(points)
    n, d = ens.particles.shape
    sig = np.std(ens.particles, axis=0, ddof=1)
    bw = sig * (4.0 / ((d + 2.0) * n)) ** (1.0 / (d + 4.0))
    vals = _kernels.kde_eval_points(pts, ens.particles, bw)
    floored = np.maximum(vals, eps_floor)
    return vals, floored, float(np.mean(vals < eps_floor))


# ---------------------------------------------------------------------------
# filter-coefficient assembly

@dataclass
class CoefficientSet:
    a: np.ndarray               # (n, d) drift field
    K: np.ndarray               # (n, d) gain field
    diagnostics: dict


def _exact_coefficients(ens, model, moments) -> CoefficientSet:
    if model.H is None:
        raise ModelMismatch("exact-Gaussian gain needs a stored H row")
    fld = solve_exact_gaussian(moments, model.h_row())
    K = fld.at_particles
    h = model.obs(ens.particles)
    a = -0.5 * K * (h + h.mean())[:, None]
    return CoefficientSet(a=a, K=K, diagnostics=fld.diagnostics)


def assemble_filter_coefficients(kind: str, ens: Ensemble, model: SystemModel,
                                 slope: float, method: str,
                                 mass_matrix: str = "identity",
                                 density: Optional[Density1D] = None,
                                 kde_opts: Optional[dict] = None,
                                 basis=None,
                                 eps_floor: float = EPS_RHO) -> CoefficientSet:
    """Drift field a(x_i) and gain field K(x_i) for the requested filter.

    kind in {delta_fpf, delta_reich, crisan_xiong, enkbf}; delta_reich
    additionally honours mass_matrix in {identity, rho_identity,
    cov_inverse}, where rho_identity delegates to the Crisan & Xiong
    assembly (the two filters coincide) and cov_inverse folds P into the
    weak form.  The slope enters only the Crisan & Xiong combination
    m = h * slope - h^2 / 2.
    """
    moments = compute_moments(ens, model)
    h = model.obs(ens.particles)
    h_bar = h.mean()

    if method == "exact_gaussian":
        return _exact_coefficients(ens, model, moments)
    if method == "constant":
        fld = solve_constant_gain(moments)
        K = fld.at_particles
        if kind in ("delta_fpf", "enkbf"):
            a = -0.5 * K * (h + h_bar)[:, None]     # psi contributes nothing constant
            return CoefficientSet(a=a, K=K, diagnostics=fld.diagnostics)
        raise ValueError(f"constant gain is defined for delta_fpf/enkbf, not {kind}")

    if kind == "enkbf":
        raise ModelMismatch("enkbf uses the exact-Gaussian coefficients")

    if kind == "delta_reich" and mass_matrix == "rho_identity":
        return assemble_filter_coefficients("crisan_xiong", ens, model, slope,
                                            method, density=density,
                                            kde_opts=kde_opts, basis=basis,
                                            eps_floor=eps_floor)

    if method == "integral_1d":
        if ens.dim != 1:
            raise DimensionError("integral_1d gain requires d = 1")
        if density is None:
            density = kde_density_1d(ens, **(kde_opts or {}))
        xs = ens.particles[:, 0]
        if kind in ("delta_fpf", "crisan_xiong", "delta_reich"):
            k_kind = {"delta_fpf": "fpf_phi", "crisan_xiong": "crisan_beta",
                      "delta_reich": "reich_lambda"}[kind]
            kf = solve_1d_integral(density, model, k_kind, particles=xs,
                                   eps_floor=eps_floor)
            K = kf.at_particles
            diags = dict(kf.diagnostics)
            if kind == "delta_fpf":
                # assemble a on the grid with the grid hbar, so the exact 1D
                # identity a = -(h+hbar)K/2 + grad psi/2 = grad alpha / rho
                # carries to the particles bitwise
                psif = solve_1d_integral(density, model, "fpf_psi",
                                         prior_gain_grid=kf.gain_grid,
                                         eps_floor=eps_floor)
                hg = model.obs(density.grid.reshape(-1, 1))
                hbg = float(np.trapezoid(hg * density.values, density.grid))
                a_grid = -0.5 * kf.gain_grid * (hg + hbg) + 0.5 * psif.gain_grid
                a = np.interp(xs, density.grid, a_grid).reshape(-1, 1)
                diags["psi_residual"] = psif.diagnostics["residual"]
            else:
                d_kind = "crisan_alpha" if kind == "crisan_xiong" else "reich_omega"
                df = solve_1d_integral(density, model, d_kind, particles=xs,
                                       eps_floor=eps_floor)
                a = df.at_particles
                diags["drift_residual"] = df.diagnostics["residual"]
            return CoefficientSet(a=a, K=K, diagnostics=diags)
        raise ValueError(f"unknown filter kind {kind!r}")

    if method == "galerkin":
        m_inv = moments.cov if (kind == "delta_reich" and mass_matrix == "cov_inverse") else None
        kf = solve_galerkin(ens, model, "fpf_phi", basis=basis, m_inv=m_inv)
        K = kf.at_particles
        diags = dict(kf.diagnostics)
        if kind == "delta_fpf":
            psif = solve_galerkin(ens, model, "fpf_psi", m_inv=m_inv, prior_gain=K)
            a = -0.5 * K * (h + h_bar)[:, None] + 0.5 * psif.at_particles
        elif kind == "delta_reich":
            of = solve_galerkin(ens, model, "reich_omega", m_inv=m_inv)
            a = of.at_particles
        elif kind == "crisan_xiong":
            raise ValueError("crisan_xiong uses integral_1d (d=1) or the "
                             "fundamental-solution route (d>=2)")
        else:
            raise ValueError(f"unknown filter kind {kind!r}")
        return CoefficientSet(a=a, K=K, diagnostics=diags)

    if method == "fundamental_mc":
        if ens.dim < 2:
            raise DimensionError("fundamental_mc requires d >= 2")
        beta = solve_fundamental_mc(ens, h)
        alpha = solve_fundamental_mc(ens, -0.5 * h * h)
        grad_beta = beta.evaluate(ens.particles)
        grad_alpha = alpha.evaluate(ens.particles)
        _, rho_f, floor_frac = multivariate_kde_at_points(ens, eps_floor=eps_floor)
        K = grad_beta / rho_f[:, None]
        a = grad_alpha / rho_f[:, None]
        return CoefficientSet(a=a, K=K,
                              diagnostics={"epsilon": beta.epsilon,
                                           "floor_frac": floor_frac})

    raise ValueError(f"unknown gain method {method!r}")


def continuous_gain(ens: Ensemble, model: SystemModel, method: str,
                    density: Optional[Density1D] = None,
                    kde_opts: Optional[dict] = None, basis=None,
                    rhs_kind: str = "fpf_phi",
                    eps_floor: float = EPS_RHO):
    """Gain K(x_i) and Ito drift (1/2)(grad K)^T K(x_i) for the continuous-
    time filters.  Constant fields have zero Ito drift; 1D grid fields are
    differentiated by central differences on the grid."""
    moments = compute_moments(ens, model)
    if method == "exact_gaussian":
        fld = solve_exact_gaussian(moments, model.h_row())
        return fld.at_particles, np.zeros_like(fld.at_particles), fld.diagnostics
    if method == "constant":
        fld = solve_constant_gain(moments)
        return fld.at_particles, np.zeros_like(fld.at_particles), fld.diagnostics
    if method == "integral_1d":
        if ens.dim != 1:
            raise DimensionError("integral_1d gain requires d = 1")
        if density is None:
            density = kde_density_1d(ens, **(kde_opts or {}))
        xs = ens.particles[:, 0]
        fld = solve_1d_integral(density, model, rhs_kind, particles=xs,
                                eps_floor=eps_floor)
        dK = np.gradient(fld.gain_grid, density.dx)
        ito = 0.5 * np.interp(xs, density.grid, dK * fld.gain_grid).reshape(-1, 1)
        return fld.at_particles, ito, fld.diagnostics
    if method == "galerkin":
        fld = solve_galerkin(ens, model, "fpf_phi", basis=basis)
        ito = galerkin_ito_drift(ens, model, fld, basis=basis)
        return fld.at_particles, ito, fld.diagnostics
    raise ValueError(f"unknown gain method {method!r}")


def reich_identity_continuous_drift(K: np.ndarray, h: np.ndarray,
                                    h_bar: float) -> np.ndarray:
    """d=1 exactly-integrated grad(Omega + Theta~) of the M=I Reich limit:
    the divergence-form equation integrates to -(h + hbar) K / 2."""
    return -0.5 * K * (np.asarray(h) + h_bar)[:, None]
