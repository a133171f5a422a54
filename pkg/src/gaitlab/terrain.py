"""Procedural fractal heightfields.

The generator sums `octaves` layers of seeded lattice value noise. Octave k
contributes at spatial frequency ``base_frequency * lacunarity**k`` with
weight ``gain**k``; the weighted sum is renormalized to [-1, 1] and scaled by
``amplitude``, so the total height range never exceeds 2 * amplitude.
Amplitude 0 degenerates to a flat field.

Noise values come from an integer hash of (cell, seed, octave), which makes
fields bit-reproducible for a given seed on any platform.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FractalParams:
    octaves: int = 2
    lacunarity: float = 2.0
    gain: float = 0.25
    base_frequency: float = 10.0  # cycles per meter
    amplitude: float = 0.23  # meters

    def __post_init__(self):
        if self.octaves < 1:
            raise ValueError("octaves must be >= 1")
        if self.lacunarity <= 1.0:
            raise ValueError("lacunarity must be > 1")
        if not 0.0 < self.gain < 1.0:
            raise ValueError("gain must be in (0, 1)")
        if self.amplitude < 0.0:
            raise ValueError("amplitude must be >= 0")
        if self.base_frequency <= 0.0:
            raise ValueError("base_frequency must be > 0")


# Paper-scale presets: gentle field for structured gaits, sharper field for
# unstructured-gait training.
STRUCTURED = FractalParams(octaves=2, lacunarity=2.0, gain=0.25,
                           base_frequency=10.0, amplitude=0.23)
UNSTRUCTURED = FractalParams(octaves=2, lacunarity=2.0, gain=0.25,
                             base_frequency=20.0, amplitude=0.27)
FLAT = FractalParams(amplitude=0.0)


def _hash_unit(ix: np.ndarray, iy: np.ndarray, salt: int) -> np.ndarray:
    """Deterministic lattice hash -> floats in [0, 1)."""
    n = (ix.astype(np.uint32) * np.uint32(0x1F1F1F1F)) ^ \
        (iy.astype(np.uint32) * np.uint32(0x5F356495)) ^ np.uint32(salt & 0xFFFFFFFF)
    n ^= n >> np.uint32(13)
    n *= np.uint32(0x85EBCA6B)
    n ^= n >> np.uint32(16)
    return (n % np.uint32(1000003)).astype(np.float64) / 1000003.0


def _value_noise(x: np.ndarray, y: np.ndarray, salt: int) -> np.ndarray:
    """Smoothstep-interpolated lattice value noise in [-1, 1]."""
    ix = np.floor(x).astype(np.int64)
    iy = np.floor(y).astype(np.int64)
    fx = x - ix
    fy = y - iy
    v00 = _hash_unit(ix, iy, salt)
    v10 = _hash_unit(ix + 1, iy, salt)
    v01 = _hash_unit(ix, iy + 1, salt)
    v11 = _hash_unit(ix + 1, iy + 1, salt)
    sx = fx * fx * (3.0 - 2.0 * fx)
    sy = fy * fy * (3.0 - 2.0 * fy)
    top = v00 + (v10 - v00) * sx
    bot = v01 + (v11 - v01) * sx
    return 2.0 * (top + (bot - top) * sy) - 1.0


@dataclass
class TerrainField:
    """Immutable sampled heightfield with bilinear interpolation.

    Queries outside the grid extent clamp to the nearest edge value.
    """

    heightmap: np.ndarray  # (ny, nx) heights in meters
    cell_size: float
    origin: np.ndarray  # (2,) world xy of grid node [0, 0]
    seed: int
    params: FractalParams

    def __post_init__(self):
        self.heightmap = np.asarray(self.heightmap, dtype=np.float64)
        self.origin = np.asarray(self.origin, dtype=np.float64)
        if not np.all(np.isfinite(self.heightmap)):
            raise ValueError("heightmap contains non-finite values")
        self.heightmap.setflags(write=False)

    @property
    def is_flat(self) -> bool:
        return self.params.amplitude == 0.0

    def heights_at(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.is_flat:
            return np.zeros(np.broadcast(x, y).shape)
        gx = (np.asarray(x, dtype=np.float64) - self.origin[0]) / self.cell_size
        gy = (np.asarray(y, dtype=np.float64) - self.origin[1]) / self.cell_size
        ny, nx = self.heightmap.shape
        gx = np.clip(gx, 0.0, nx - 1.0)
        gy = np.clip(gy, 0.0, ny - 1.0)
        ix = np.minimum(gx.astype(np.int64), nx - 2) if nx > 1 else np.zeros_like(gx, dtype=np.int64)
        iy = np.minimum(gy.astype(np.int64), ny - 2) if ny > 1 else np.zeros_like(gy, dtype=np.int64)
        fx = gx - ix
        fy = gy - iy
        h = self.heightmap
        h00 = h[iy, ix]
        h10 = h[iy, np.minimum(ix + 1, nx - 1)]
        h01 = h[np.minimum(iy + 1, ny - 1), ix]
        h11 = h[np.minimum(iy + 1, ny - 1), np.minimum(ix + 1, nx - 1)]
        top = h00 + (h10 - h00) * fx
        bot = h01 + (h11 - h01) * fx
        return top + (bot - top) * fy

    def height_at(self, x: float, y: float) -> float:
        return float(self.heights_at(np.asarray(x), np.asarray(y)))

    def lipschitz_bound(self) -> float:
        """Upper bound on |dh/dx| from the octave construction.

        Per octave the smoothstep derivative peaks at 1.5 lattice units, so
        the slope is bounded by 1.5 * weight * frequency per axis; sqrt(2)
        covers the diagonal direction.
        """
        weights = np.array([self.params.gain ** k for k in range(self.params.octaves)])
        weights = weights / weights.sum() * self.params.amplitude
        freqs = np.array([self.params.base_frequency * self.params.lacunarity ** k
                          for k in range(self.params.octaves)])
        # factor 2: noise spans [-1, 1], so per-cell swing is twice the weight
        return float(np.sqrt(2.0) * np.sum(2.0 * 1.5 * weights * freqs))


def generate(params: FractalParams, extent: tuple[float, float],
             cell_size: float, seed: int,
             origin: tuple[float, float] = (0.0, 0.0)) -> TerrainField:
    """Sample a fractal heightfield over ``extent`` meters starting at ``origin``."""
    if cell_size <= 0.0:
        raise ValueError("cell_size must be > 0")
    nx = max(2, int(round(extent[0] / cell_size)) + 1)
    ny = max(2, int(round(extent[1] / cell_size)) + 1)
    if params.amplitude == 0.0:
        hm = np.zeros((ny, nx))
    else:
        xs = origin[0] + np.arange(nx) * cell_size
        ys = origin[1] + np.arange(ny) * cell_size
        gx, gy = np.meshgrid(xs, ys)
        total = np.zeros_like(gx)
        norm = 0.0
        freq = params.base_frequency
        amp = 1.0
        for k in range(params.octaves):
            salt = (seed * 1000003 + k * 0x9E3779B9) & 0xFFFFFFFF
            total += amp * _value_noise(gx * freq, gy * freq, salt)
            norm += amp
            amp *= params.gain
            freq *= params.lacunarity
        hm = total / norm * params.amplitude
    return TerrainField(heightmap=hm, cell_size=cell_size,
                        origin=np.asarray(origin, dtype=np.float64),
                        seed=seed, params=params)


def flat_field(extent: tuple[float, float] = (10.0, 10.0),
               cell_size: float = 0.5,
               origin: tuple[float, float] = (-2.0, -5.0)) -> TerrainField:
    return generate(FLAT, extent, cell_size, seed=0, origin=origin)


def export_csv(field: TerrainField, path: str) -> None:
    """One header line with the generation parameters, then the raw grid."""
    p = field.params
    ox, oy = float(field.origin[0]), float(field.origin[1])
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# cell_size={float(field.cell_size)!r} origin=({ox!r},{oy!r}) "
                f"seed={field.seed} octaves={p.octaves} lacunarity={p.lacunarity!r} "
                f"gain={p.gain!r} base_frequency={p.base_frequency!r} amplitude={p.amplitude!r}\n")
        np.savetxt(f, field.heightmap, delimiter=",", fmt="%.17g")


def import_csv(path: str) -> TerrainField:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline()
        if not header.startswith("# "):
            raise ValueError(f"{path}: missing terrain header line")
        fields = dict(item.split("=", 1) for item in header[2:].strip().split(" "))
        ox, oy = fields["origin"].strip("()").split(",")
        body = f.read()
    hm = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    params = FractalParams(
        octaves=int(fields["octaves"]),
        lacunarity=float(fields["lacunarity"]),
        gain=float(fields["gain"]),
        base_frequency=float(fields["base_frequency"]),
        amplitude=float(fields["amplitude"]),
    )
    return TerrainField(heightmap=hm, cell_size=float(fields["cell_size"]),
                        origin=np.array([float(ox), float(oy)]),
                        seed=int(fields["seed"]), params=params)
