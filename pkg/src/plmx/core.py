"""Shared parameter records, grids, noise spectra, elementary nonlinearities,
and the reproducible random-stream contract used by all dynamics modules.

Conventions fixed here and relied on everywhere else:

* The spatial domain is the unit-scaled interval (dim=1) or square (dim=2)
  of edge length ``length`` with zero Dirichlet boundary, discretized by
  ``n_grid`` interior nodes per dimension, spacing ``h = length/(n_grid+1)``.
* Noise spectra are diagonal on the Dirichlet sine basis; the basis functions
  are exactly orthonormal under the trapezoid quadrature weights ``h**dim``.
* Random streams are counter-based (Philox keyed by ``(seed, stream_id)``),
  so distinct trajectories draw independent sequences and any stream can be
  reproduced or resumed from a draw offset without replaying history.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri


@dataclass(frozen=True)
class ModelParams:
    """Model and discretization parameters shared by all dynamics.

    p        : nonlinearity exponent, p > 1
    dim      : spatial dimension, 1 or 2
    length   : domain edge length
    n_grid   : interior nodes per dimension
    dt       : time step
    eps_reg  : gradient regularization for the flux coefficient, >= 0
    r_order  : order of the transport distance used in experiments, >= 1
    """

    p: float
    dim: int = 1
    length: float = 1.0
    n_grid: int = 64
    dt: float = 1e-3
    eps_reg: float = 0.0
    r_order: float = 2.0

    def __post_init__(self) -> None:
        if not self.p > 1:
            raise ValueError(f"exponent p must exceed 1, got {self.p}")
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if not self.length > 0:
            raise ValueError(f"length must be positive, got {self.length}")
        if self.n_grid < 2:
            raise ValueError(f"n_grid must be >= 2, got {self.n_grid}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.eps_reg < 0:
            raise ValueError(f"eps_reg must be >= 0, got {self.eps_reg}")
        if not self.r_order >= 1:
            raise ValueError(f"r_order must be >= 1, got {self.r_order}")

    @property
    def h(self) -> float:
        """Grid spacing."""
        return self.length / (self.n_grid + 1)

    @property
    def n_nodes(self) -> int:
        """Total number of interior nodes."""
        return self.n_grid**self.dim

    @property
    def quad_weight(self) -> float:
        """Trapezoid quadrature weight per interior node (h**dim)."""
        return self.h**self.dim

    def interior_coords(self) -> np.ndarray:
        """Interior node coordinates: shape (n_grid,) in 1D, (n_nodes, 2) in 2D."""
        z = self.h * np.arange(1, self.n_grid + 1)
        if self.dim == 1:
            return z
        zz, yy = np.meshgrid(z, z, indexing="ij")
        return np.column_stack([zz.ravel(), yy.ravel()])

    def default_dt(self, x0_values: np.ndarray) -> float:
        """Stability-policy default step for data x0 (overridable by callers).

        For p > 2: 0.25 * h**p / (max face gradient + eps_reg)**(p-2);
        for p <= 2: 0.25 * h**2.
        """
        if self.p <= 2:
            return 0.25 * self.h**2
        u = np.asarray(x0_values, dtype=float)
        if self.dim == 1:
            pad = np.concatenate([[0.0], u, [0.0]])
            gmax = float(np.max(np.abs(np.diff(pad)))) / self.h
        else:
            un = u.reshape(self.n_grid, self.n_grid)
            pad = np.pad(un, 1)
            gx = np.abs(np.diff(pad, axis=0)) / self.h
            gy = np.abs(np.diff(pad, axis=1)) / self.h
            gmax = float(max(gx.max(), gy.max()))
        return 0.25 * self.h**self.p / (gmax + self.eps_reg) ** (self.p - 2)


def signed_power(z, alpha: float):
    """Odd power z |z|**(alpha-1), with 0 mapped to exactly 0.

    Works elementwise on arrays. alpha must be positive.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    nz = z != 0
    out[nz] = np.sign(z[nz]) * np.abs(z[nz]) ** alpha
    if out.ndim == 0:
        return float(out)
    return out


def mode_multi_indices(dim: int, count: int) -> list[tuple[int, ...]]:
    """First `count` Dirichlet sine mode indices, ordered by increasing
    frequency (sum of squared indices, ties broken lexicographically)."""
    if dim == 1:
        return [(k,) for k in range(1, count + 1)]
    # enumerate a generous block and sort; count is small in practice
    side = max(2, int(math.isqrt(count)) + 2)
    while side * side < count:
        side += 1
    pairs = [(k, l) for k in range(1, side + 1) for l in range(1, side + 1)]
    pairs.sort(key=lambda kl: (kl[0] ** 2 + kl[1] ** 2, kl))
    return pairs[:count]


def sine_mode(params: ModelParams, multi_index: tuple[int, ...]) -> np.ndarray:
    """Orthonormal Dirichlet sine basis function sampled on interior nodes.

    Normalized so that quad_weight * sum(e**2) == 1 exactly on the grid
    (discrete orthonormality of the sine basis under trapezoid weights).
    """
    z = params.h * np.arange(1, params.n_grid + 1)
    amp1 = math.sqrt(2.0 / params.length)
    if params.dim == 1:
        (k,) = multi_index
        return amp1 * np.sin(k * math.pi * z / params.length)
    k, l = multi_index
    ek = amp1 * np.sin(k * math.pi * z / params.length)
    el = amp1 * np.sin(l * math.pi * z / params.length)
    return np.outer(ek, el).ravel()


@dataclass(frozen=True)
class NoiseSpec:
    """Truncated spectral coefficients of the noise operator on the Dirichlet
    sine basis. The all-zero (or empty) sequence encodes the deterministic
    case; a zero entry leaves that mode unforced (degenerate noise)."""

    coeffs: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "coeffs", tuple(float(b) for b in self.coeffs))

    @property
    def truncation(self) -> int:
        return len(self.coeffs)

    @property
    def is_zero(self) -> bool:
        return all(b == 0.0 for b in self.coeffs)

    def mode_matrix(self, params: ModelParams) -> np.ndarray:
        """Rows = active basis functions scaled by their coefficients,
        shape (truncation, n_nodes)."""
        if self.truncation == 0:
            return np.zeros((0, params.n_nodes))
        idx = mode_multi_indices(params.dim, self.truncation)
        return np.array([b * sine_mode(params, mi) for b, mi in zip(self.coeffs, idx)])


def hs_norm_sq(noise: NoiseSpec) -> float:
    """Squared Hilbert-Schmidt norm of the noise operator: sum of b_k**2."""
    return float(sum(b * b for b in noise.coeffs))


def poincare_sq(params: ModelParams) -> float:
    """Smallest eigenvalue of the discrete Dirichlet Laplacian on the grid.

    Equals dim * 4 sin^2(pi h / (2 length)) / h^2 for the 3-/5-point stencil;
    converges to dim * (pi/length)^2 under refinement.
    """
    h = params.h
    lam1 = 4.0 * math.sin(math.pi * h / (2.0 * params.length)) ** 2 / h**2
    return params.dim * lam1


_BLOCK = 4  # uint64 outputs per Philox counter increment


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (seed, stream_id).

    Each standard-normal variate consumes exactly one 64-bit draw (inverse-CDF
    of a 53-bit uniform), so the draw position is a pure function of how many
    variates were generated. `skip` reproduces the stream from that offset,
    which is what checkpoint resume uses instead of replaying history.
    """

    seed: int
    stream_id: int = 0

    def _key(self) -> np.ndarray:
        return np.array(
            [self.seed % (1 << 64), self.stream_id % (1 << 64)], dtype=np.uint64
        )

    def generator(self, skip: int = 0) -> np.random.Generator:
        bg = np.random.Philox(key=self._key())
        if skip // _BLOCK:
            bg.advance(skip // _BLOCK)
        gen = np.random.Generator(bg)
        if skip % _BLOCK:
            gen.integers(0, 1 << 53, size=skip % _BLOCK, dtype=np.int64)
        return gen

    def uniforms(self, count: int, skip: int = 0) -> np.ndarray:
        """`count` uniforms in (0,1), one 64-bit draw each, midpoints of the
        2^53 lattice so the inverse normal CDF never sees 0 or 1."""
        if count < 0:
            raise ValueError(f"count must be >= 0, got {count}")
        raw = self.generator(skip).integers(0, 1 << 53, size=count, dtype=np.int64)
        return (raw + 0.5) * 2.0**-53

    def normals(self, count: int, skip: int = 0) -> np.ndarray:
        """`count` i.i.d. standard normals, reproducible per (seed, stream_id, skip)."""
        return ndtri(self.uniforms(count, skip=skip))


def gaussian_increments(stream: RngStream, count: int) -> np.ndarray:
    """Standard-normal increment block for a trajectory stream."""
    return stream.normals(count)


# Stream-id blocks: trajectory streams use ids [0, 2**48); ids above that are
# reserved for auxiliary draws so they never collide with ensemble members.
STATIONARY_STREAM = 1 << 48
PILOT_STREAM = (1 << 48) + 1
BOOTSTRAP_STREAM = (1 << 48) + 2
