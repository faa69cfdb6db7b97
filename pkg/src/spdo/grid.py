"""Periodic spatial grid, frequency lattice and spectral transforms.

Normalization convention
------------------------
The forward transform approximates the continuum integral

    u_hat(xi) = integral exp(-i x.xi) u(x) dx

so the discrete forward FFT carries a cell weight of (L/N) per axis.  The
inverse carries 1/L per axis, which is the discrete analogue of
(2 pi)^{-n} integral dxi on the frequency lattice {2 pi k / L}.  With this
pairing, symbol values multiply spectra with the same magnitudes as in the
continuum quantization, and Parseval reads

    sum_x |u|^2 (L/N)^n  ==  sum_xi |u_hat|^2 (1/L)^n .
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class RepresentationError(ValueError):
    """Raised when a field is in the wrong representation for an operation."""


@dataclass(frozen=True)
class Grid:
    """Uniform periodic lattice on the torus [0, L)^n."""

    dim: int = 1
    points_per_axis: int = 64
    period: float = 2.0 * np.pi

    def __post_init__(self):
        n, N = self.dim, self.points_per_axis
        if not 1 <= n <= 3:
            raise ValueError(f"dim must be 1..3, got {n}")
        if N < 8 or (N & (N - 1)) != 0:
            raise ValueError(f"points_per_axis must be a power of two >= 8, got {N}")
        if self.period <= 0:
            raise ValueError("period must be positive")

    @property
    def n(self) -> int:
        return self.dim

    @property
    def N(self) -> int:
        return self.points_per_axis

    @property
    def L(self) -> float:
        return self.period

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def cell_volume(self) -> float:
        return self.dx**self.dim

    @property
    def freq_cell_volume(self) -> float:
        # discrete (2 pi)^{-n} dxi^n
        return (1.0 / self.L) ** self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.dim

    def axis_points(self) -> np.ndarray:
        return np.arange(self.N) * self.dx

    def axis_freqs(self) -> np.ndarray:
        """Frequency lattice values per axis, in FFT (wrapped) order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.dx)

    def points(self) -> np.ndarray:
        """Lattice points, shape grid.shape + (n,)."""
        axes = np.meshgrid(*([self.axis_points()] * self.dim), indexing="ij")
        return np.stack(axes, axis=-1)

    def freqs(self) -> np.ndarray:
        """Frequency lattice, FFT order, shape grid.shape + (n,)."""
        axes = np.meshgrid(*([self.axis_freqs()] * self.dim), indexing="ij")
        return np.stack(axes, axis=-1)

    def freq_norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.freqs() ** 2, axis=-1))

    @property
    def max_resolved_freq(self) -> float:
        return 2.0 * np.pi * (self.N // 2) / self.L

    def torus_distance(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Geodesic distance on the torus; inputs broadcast, last axis = dim."""
        d = np.abs(np.asarray(x) - np.asarray(y))
        d = np.minimum(d, self.L - d)
        return np.sqrt(np.sum(d**2, axis=-1))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, T] with K steps (K + 1 nodes)."""

    horizon: float
    steps: int

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.steps < 2:
            raise ValueError("need at least 2 time steps")

    @property
    def T(self) -> float:
        return self.horizon

    @property
    def K(self) -> int:
        return self.steps

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)


PHYSICAL = "physical"
FREQUENCY = "frequency"


@dataclass
class SpectralField:
    """Complex field on a Grid, in physical or frequency representation."""

    grid: Grid
    values: np.ndarray
    representation: str = PHYSICAL

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} != grid shape {self.grid.shape}"
            )
        if self.representation not in (PHYSICAL, FREQUENCY):
            raise RepresentationError(f"unknown representation {self.representation!r}")

    def copy(self) -> "SpectralField":
        return SpectralField(self.grid, self.values.copy(), self.representation)


def fft_forward(f: SpectralField) -> SpectralField:
    """Physical -> frequency, carrying the (L/N)^n cell weight."""
    if f.representation != PHYSICAL:
        raise RepresentationError("fft_forward expects a physical-representation field")
    vals = np.fft.fftn(f.values) * f.grid.cell_volume
    return SpectralField(f.grid, vals, FREQUENCY)


def fft_inverse(f: SpectralField) -> SpectralField:
    """Frequency -> physical, carrying the (N/L)^n weight."""
    if f.representation != FREQUENCY:
        raise RepresentationError("fft_inverse expects a frequency-representation field")
    vals = np.fft.ifftn(f.values) * (f.grid.N / f.grid.L) ** f.grid.dim
    return SpectralField(f.grid, vals, PHYSICAL)


def to_frequency(f: SpectralField) -> SpectralField:
    return f if f.representation == FREQUENCY else fft_forward(f)


def to_physical(f: SpectralField) -> SpectralField:
    return f if f.representation == PHYSICAL else fft_inverse(f)


def l2_norm(f: SpectralField) -> float:
    if f.representation == PHYSICAL:
        return float(np.sqrt(np.sum(np.abs(f.values) ** 2) * f.grid.cell_volume))
    return float(np.sqrt(np.sum(np.abs(f.values) ** 2) * f.grid.freq_cell_volume))


def sobolev_norm(f: SpectralField, delta: float) -> float:
    """H^delta norm via the Bessel weight (1+|xi|^2)^{delta/2} on the spectrum."""
    fh = to_frequency(f)
    w = (1.0 + f.grid.freq_norms() ** 2) ** delta
    return float(np.sqrt(np.sum(w * np.abs(fh.values) ** 2) * f.grid.freq_cell_volume))


def field_from_function(grid: Grid, fn) -> SpectralField:
    """Sample fn(x) on the lattice; fn receives points of shape (..., n)."""
    return SpectralField(grid, np.asarray(fn(grid.points()), dtype=np.complex128))


def plane_wave(grid: Grid, k: tuple[int, ...] | int) -> SpectralField:
    """exp(i k.x 2 pi / L) for integer lattice mode k."""
    if np.isscalar(k):
        k = (int(k),) + (0,) * (grid.dim - 1)
    x = grid.points()
    phase = sum(2.0 * np.pi * k[a] / grid.L * x[..., a] for a in range(grid.dim))
    return SpectralField(grid, np.exp(1j * phase))


def random_band_limited(grid: Grid, rng: np.random.Generator,
                        max_mode: int | None = None) -> SpectralField:
    """Random field with iid complex Gaussian amplitudes on modes |k| <= max_mode."""
    if max_mode is None:
        max_mode = grid.N // 4
    spec = np.zeros(grid.shape, dtype=np.complex128)
    ints = np.fft.fftfreq(grid.N) * grid.N
    mask = np.ones(grid.shape, dtype=bool)
    for a in range(grid.dim):
        ka = ints.reshape((-1,) + (1,) * (grid.dim - 1 - a))
        mask &= np.abs(np.broadcast_to(ka, grid.shape)) <= max_mode
    amp = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    spec[mask] = amp[mask]
    return to_physical(SpectralField(grid, spec, FREQUENCY))
