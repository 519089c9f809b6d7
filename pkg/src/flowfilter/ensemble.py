"""Particle cloud, empirical moments and 1D kernel density estimation.

The ensemble is the Monte-Carlo surrogate for the mean-field conditional
law: every filter coefficient is computed from its empirical statistics.
Reductions go through numpy's pairwise summation in a fixed order, so
moments do not depend on how particle work is scheduled.
"""

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .errors import DegenerateCloud
from .models import SystemModel


@dataclass(frozen=True)
class Ensemble:
    particles: np.ndarray       # (n, d)

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.particles, dtype=float))
        if p.shape[0] < 2:
            raise ValueError("ensemble needs at least 2 particles")
        if not np.all(np.isfinite(p)):
            raise ValueError("ensemble contains non-finite entries")
        object.__setattr__(self, "particles", p)

    @property
    def n(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]


@dataclass(frozen=True)
class Moments:
    """Empirical mean/covariance and observation statistics.

    cov and cov_xh carry the unbiased 1/(n-1) normalization; h_bar and
    h2_bar are plain sample means (the empirical-measure averages used in
    the weak forms).
    """

    n: int
    mean: np.ndarray            # (d,)
    cov: np.ndarray             # (d, d)
    h_bar: float
    h2_bar: float
    cov_xh: np.ndarray          # (d,)


@dataclass(frozen=True)
class Density1D:
    """Nonnegative density values on a uniform grid, unit trapezoid mass."""

    grid: np.ndarray
    values: np.ndarray
    bandwidth: Optional[float] = None

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if np.any(v < 0):
            raise ValueError("density values must be nonnegative")
        mass = np.trapezoid(v, g)
        if mass <= 0:
            raise ValueError("density has no mass on the grid")
        if abs(mass - 1.0) > 1e-8:
            v = v / mass
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    @property
    def dx(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def mass(self) -> float:
        return float(np.trapezoid(self.values, self.grid))

    def mean(self) -> float:
        return float(np.trapezoid(self.grid * self.values, self.grid))

    def var(self) -> float:
        m = self.mean()
        return float(np.trapezoid((self.grid - m) ** 2 * self.values, self.grid))


def compute_moments(ens: Ensemble, model: SystemModel) -> Moments:
    """Single pass over the cloud: mean, unbiased covariance, h statistics."""
    x = ens.particles
    n = ens.n
    mean = x.mean(axis=0)
    centred = x - mean
    cov = centred.T @ centred / (n - 1)
    h = model.obs(x)
    h_bar = float(h.mean())
    h2_bar = float((h * h).mean())
    cov_xh = centred.T @ (h - h_bar) / (n - 1)
    return Moments(n=n, mean=mean, cov=cov, h_bar=h_bar, h2_bar=h2_bar,
                   cov_xh=cov_xh)


def gaussian_fit(ens: Ensemble):
    """Mean and covariance only; covariance ridged by 1e-12 I if singular."""
    x = ens.particles
    mean = x.mean(axis=0)
    centred = x - mean
    cov = centred.T @ centred / (ens.n - 1)
    if np.linalg.matrix_rank(cov) < ens.dim:
        cov = cov + 1e-12 * np.eye(ens.dim)
    return mean, cov


def silverman_bandwidth(samples: np.ndarray) -> float:
    sigma = float(np.std(samples, ddof=1))
    return 1.06 * sigma * samples.size ** (-0.2)


def kde_density_1d(ens: Ensemble, grid_points: int = 801,
                   half_width: Optional[float] = None,
                   bandwidth=None, pad_sigmas: float = 8.0) -> Density1D:
    """Gaussian-kernel density on a uniform grid, renormalized to unit mass.

    Linear binning followed by convolution with the discretised kernel
    (kernel truncated at 8 bandwidths; truncation error ~ 1e-15 relative).
    The grid half-width defaults to max(|mean| + pad_sigmas * std, user
    value) so the tail mass off the grid is negligible for near-Gaussian
    clouds.
    """
    if ens.dim != 1:
        raise ValueError("kde_density_1d requires a 1D ensemble")
    xs = ens.particles[:, 0]
    var = float(np.var(xs, ddof=1))
    if var < 1e-14:
        raise DegenerateCloud(f"sample variance {var:.3e} below 1e-14")
    if bandwidth is None or bandwidth == "silverman":
        bw = silverman_bandwidth(xs)
    else:
        bw = float(bandwidth)
        if bw <= 0:
            raise ValueError("bandwidth must be positive")
    sigma = np.sqrt(var)
    auto_l = abs(float(np.mean(xs))) + pad_sigmas * sigma + 4.0 * bw
    half = max(auto_l, half_width) if half_width is not None else auto_l
    grid = np.linspace(-half, half, grid_points)
    dx = grid[1] - grid[0]
    counts = _kernels.deposit_linear(xs, grid[0], dx, grid_points)
    half_k = int(np.ceil(8.0 * bw / dx))
    u = np.arange(-half_k, half_k + 1) * dx
    kernel = np.exp(-0.5 * (u / bw) ** 2)
    values = np.convolve(counts, kernel, mode="same")
    values = np.maximum(values, 0.0)
    return Density1D(grid=grid, values=values, bandwidth=bw)


def density_from_function(pdf, half_width: float, grid_points: int = 4001,
                          center: float = 0.0) -> Density1D:
    """Tabulate an analytic pdf on a uniform grid (reference densities)."""
    grid = np.linspace(center - half_width, center + half_width, grid_points)
    return Density1D(grid=grid, values=np.maximum(pdf(grid), 0.0))


def save_ensemble_csv(filename, ens: Ensemble):
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["particle"] + [f"x_{j + 1}" for j in range(ens.dim)])
        for i, row in enumerate(ens.particles):
            w.writerow([i] + [format(v, ".17g") for v in row])


def save_density_csv(filename, dens: Density1D):
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "rho"])
        for x, r in zip(dens.grid, dens.values):
            w.writerow([format(x, ".17g"), format(r, ".17g")])
