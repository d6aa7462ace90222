"""Gaussian random field initial conditions.

Fields are drawn from N(0, sigma2 * (-Laplacian + tau^2 I)^(-gamma)) through a
truncated Karhunen-Loeve expansion in the Laplacian eigenbasis:

* periodic on [0, 1): orthonormal Fourier basis, eigenvalues (2 pi k)^2
* Neumann on [0, 1]^2: orthonormal cosine basis, eigenvalues pi^2 (k1^2 + k2^2)

Coefficients are drawn in order of increasing wavenumber so that the low
modes of a sample do not depend on the grid resolution.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParameterError
from .solvers.grids import GridSpec1D, GridSpec2D

BOUNDARIES = {"periodic1d": 1, "neumann2d": 2}

EIGENVALUE_CONVENTION = {
    "periodic1d": "(2*pi*k)^2 on [0,1), orthonormal Fourier basis",
    "neumann2d": "pi^2*(k1^2+k2^2) on [0,1]^2, orthonormal cosine basis",
}


@dataclass(frozen=True)
class GrfSpec:
    sigma2: float
    tau: float
    gamma: float
    boundary: str
    resolution: int
    seed: int = 0

    def __post_init__(self):
        if self.boundary not in BOUNDARIES:
            raise ParameterError(f"boundary must be one of {sorted(BOUNDARIES)}, got {self.boundary!r}")
        dim = BOUNDARIES[self.boundary]
        if not self.gamma > dim / 2:
            raise ParameterError(f"gamma must exceed dim/2 = {dim / 2}, got {self.gamma}")
        if not self.sigma2 > 0:
            raise ParameterError(f"sigma2 must be positive, got {self.sigma2}")
        if not self.tau >= 0:
            raise ParameterError(f"tau must be non-negative, got {self.tau}")
        if self.resolution < 2:
            raise ParameterError(f"resolution must be at least 2, got {self.resolution}")

    @property
    def dim(self) -> int:
        return BOUNDARIES[self.boundary]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eigenvalue_convention"] = EIGENVALUE_CONVENTION[self.boundary]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GrfSpec":
        keys = ("sigma2", "tau", "gamma", "boundary", "resolution", "seed")
        return cls(**{k: d[k] for k in keys if k in d})


@dataclass(eq=False)
class SampledField:
    values: np.ndarray
    grid: GridSpec1D | GridSpec2D


def _mode_std(spec: GrfSpec, eigenvalues: np.ndarray) -> np.ndarray:
    shifted = eigenvalues + spec.tau**2
    std = np.zeros_like(shifted)
    ok = shifted > 0
    std[ok] = np.sqrt(spec.sigma2) * shifted[ok] ** (-spec.gamma / 2)
    return std


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for sample ``index``; serial and parallel draws agree."""
    return np.random.default_rng([seed, index])


# ---------------------------------------------------------------- periodic 1D


def periodic_wavenumbers(n: int) -> np.ndarray:
    """Wavenumber of each KL coefficient slot, ordered [0, 1c, 1s, 2c, 2s, ...]."""
    k = np.empty(n, dtype=np.int64)
    k[0] = 0
    k[1:] = (np.arange(1, n) + 1) // 2
    return k


def periodic_mode_std(spec: GrfSpec, n: int | None = None) -> np.ndarray:
    n = spec.resolution if n is None else n
    k = periodic_wavenumbers(n)
    return _mode_std(spec, (2 * np.pi * k) ** 2)


def kl_coefficients_periodic_1d(spec: GrfSpec, count: int, start_index: int = 0) -> np.ndarray:
    """Scaled KL coefficients, shape ``[count, resolution]``.

    Slot 0 is the mean mode; slots (2k-1, 2k) hold the cosine and sine
    coefficients of wavenumber k. For even resolution the last slot is the
    Nyquist cosine.
    """
    if spec.boundary != "periodic1d":
        raise ParameterError("periodic sampler needs boundary='periodic1d'")
    std = periodic_mode_std(spec)
    out = np.empty((count, spec.resolution))
    for i in range(count):
        out[i] = std * sample_rng(spec.seed, start_index + i).standard_normal(spec.resolution)
    return out


def synthesize_periodic_1d(coeffs: np.ndarray, n: int) -> np.ndarray:
    """Evaluate KL expansions ``coeffs[..., m]`` on the uniform n-point grid.

    ``n`` may exceed the number of coefficients (exact spectral
    resampling); it must be large enough to represent every coefficient.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    m = coeffs.shape[-1]
    kmax = int(periodic_wavenumbers(m)[-1])
    if kmax > n // 2:
        raise ParameterError(f"grid of {n} points cannot carry wavenumber {kmax}")
    spec_ = np.zeros(coeffs.shape[:-1] + (n // 2 + 1,), dtype=np.complex128)
    spec_[..., 0] = coeffs[..., 0]
    r = np.sqrt(0.5)
    for k in range(1, kmax + 1):
        a = coeffs[..., 2 * k - 1]
        b = coeffs[..., 2 * k] if 2 * k < m else 0.0
        if 2 * k == n:
            spec_[..., k] = np.sqrt(2.0) * a
        else:
            spec_[..., k] = r * (a - 1j * b)
    return np.fft.irfft(spec_, n=n, norm="forward")


def sample_grf_periodic_1d(spec: GrfSpec, count: int) -> list[SampledField]:
    grid = GridSpec1D(spec.resolution)
    coeffs = kl_coefficients_periodic_1d(spec, count)
    values = synthesize_periodic_1d(coeffs, spec.resolution)
    return [SampledField(v, grid) for v in values]


# ---------------------------------------------------------------- Neumann 2D


def neumann_modes(n: int) -> np.ndarray:
    """Mode index pairs (k1, k2) in [0, n)^2 sorted by |k|^2, ties lexicographic."""
    k1, k2 = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    k1 = k1.ravel()
    k2 = k2.ravel()
    order = np.lexsort((k2, k1, k1**2 + k2**2))
    return np.stack([k1[order], k2[order]], axis=1)


def neumann_mode_std(spec: GrfSpec) -> tuple[np.ndarray, np.ndarray]:
    modes = neumann_modes(spec.resolution)
    lam = np.pi**2 * (modes[:, 0] ** 2 + modes[:, 1] ** 2)
    return modes, _mode_std(spec, lam.astype(np.float64))


def kl_coefficients_neumann_2d(spec: GrfSpec, count: int, start_index: int = 0) -> np.ndarray:
    """Scaled KL coefficients as ``[count, n, n]`` arrays indexed by (k1, k2)."""
    if spec.boundary != "neumann2d":
        raise ParameterError("Neumann sampler needs boundary='neumann2d'")
    n = spec.resolution
    modes, std = neumann_mode_std(spec)
    out = np.zeros((count, n, n))
    for i in range(count):
        xi = sample_rng(spec.seed, start_index + i).standard_normal(len(modes))
        out[i, modes[:, 0], modes[:, 1]] = std * xi
    return out


def cosine_basis(n_modes: int, x: np.ndarray) -> np.ndarray:
    """Orthonormal Neumann eigenfunctions on [0, 1]: ``B[j, k] = c_k cos(pi k x_j)``."""
    k = np.arange(n_modes)
    B = np.cos(np.pi * np.outer(x, k))
    B[:, 1:] *= np.sqrt(2.0)
    return B


def synthesize_neumann_2d(coeffs: np.ndarray, nx: int, ny: int | None = None) -> np.ndarray:
    ny = nx if ny is None else ny
    coeffs = np.asarray(coeffs, dtype=np.float64)
    Bx = cosine_basis(coeffs.shape[-2], np.linspace(0.0, 1.0, nx))
    By = cosine_basis(coeffs.shape[-1], np.linspace(0.0, 1.0, ny))
    return np.einsum("ik,...kl,jl->...ij", Bx, coeffs, By)


def sample_grf_neumann_2d(spec: GrfSpec, count: int) -> list[SampledField]:
    grid = GridSpec2D(spec.resolution, spec.resolution)
    if count == 0:
        return []
    coeffs = kl_coefficients_neumann_2d(spec, count)
    values = synthesize_neumann_2d(coeffs, spec.resolution)
    return [SampledField(v, grid) for v in values]


def evaluate_neumann_2d(coeffs: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate one 2D expansion at arbitrary points ``[m, 2]``."""
    Bx = cosine_basis(coeffs.shape[0], points[:, 0])
    By = cosine_basis(coeffs.shape[1], points[:, 1])
    return np.einsum("pk,kl,pl->p", Bx, coeffs, By)


def sample_grf(spec: GrfSpec, count: int) -> list[SampledField]:
    if spec.boundary == "periodic1d":
        return sample_grf_periodic_1d(spec, count)
    return sample_grf_neumann_2d(spec, count)
