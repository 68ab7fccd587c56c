"""Synthetic tubular "neuron" volumes with exact ground truth.

Randomness comes from numpy's Philox counter-based bit generator keyed by
``SynthSpec.seed``; the draw order below is part of the output contract, so
changing it changes every generated dataset.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GenerationError
from .voxel_store import LabelMap, Volume

INTERIOR = 0.8
RING = 0.1
BACKGROUND = 0.5
RING_WIDTH = 1.5
GAP = 1.0


@dataclass
class SynthSpec:
    shape: tuple = (16, 64, 64)
    object_count: int = 4
    radius_range: tuple = (4.0, 7.0)
    drift_sigma: float = 0.6
    noise_sigma: float = 0.05
    artifact_slices: tuple = ()
    seed: int = 0
    # object id -> first slice where the object is gone
    terminations: dict = field(default_factory=dict)

    def validate(self):
        z, y, x = self.shape
        if min(self.shape) < 1:
            raise GenerationError(f"bad shape {self.shape}")
        if self.object_count < 1:
            raise GenerationError("object_count must be >= 1")
        rmin, rmax = self.radius_range
        if not 0 < rmin <= rmax:
            raise GenerationError(f"bad radius range {self.radius_range}")
        if 2 * (rmax + RING_WIDTH) + 2 > min(y, x):
            raise GenerationError("radius range does not fit the frame")
        for s in self.artifact_slices:
            if not 0 <= s < z:
                raise GenerationError(f"artifact slice {s} outside [0, {z})")
        for oid in self.terminations:
            if not 1 <= int(oid) <= self.object_count:
                raise GenerationError(f"termination for unknown object {oid}")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        for key in ("shape", "radius_range", "artifact_slices"):
            if key in d:
                d[key] = tuple(d[key])
        if "terminations" in d:
            d["terminations"] = {int(k): int(v) for k, v in d["terminations"].items()}
        return cls(**d)


def _fits(centers, radii, alive, frame_shape) -> bool:
    y, x = frame_shape
    idx = np.flatnonzero(alive)
    for a in idx:
        r = radii[a] + RING_WIDTH
        if not (r <= centers[a, 0] <= y - 1 - r and r <= centers[a, 1] <= x - 1 - r):
            return False
    for i, a in enumerate(idx):
        for b in idx[i + 1:]:
            need = radii[a] + radii[b] + 2 * RING_WIDTH + GAP
            if np.hypot(*(centers[a] - centers[b])) < need:
                return False
    return True


def _initial_layout(rng, spec, radii, attempts=2000):
    _, y, x = spec.shape
    m = spec.object_count
    centers = np.zeros((m, 2))
    for o in range(m):
        r = radii[o] + RING_WIDTH
        for _ in range(attempts):
            centers[o] = (rng.uniform(r, y - 1 - r), rng.uniform(r, x - 1 - r))
            alive = np.zeros(m, bool)
            alive[: o + 1] = True
            if _fits(centers, radii, alive, (y, x)):
                break
        else:
            raise GenerationError(f"could not place object {o + 1} after {attempts} tries")
    return centers


def generate(spec: SynthSpec, max_retries: int = 50):
    """Render ``spec`` into a ``(Volume, LabelMap)`` pair.

    Tube centers follow a Gaussian random walk; radii wander slowly inside
    ``radius_range``. A proposed move that breaks disjointness is redrawn up
    to ``max_retries`` times, after which the whole frame keeps its previous
    layout (always valid).
    """
    spec.validate()
    z, y, x = spec.shape
    m = spec.object_count
    rng = np.random.Generator(np.random.Philox(spec.seed))
    rmin, rmax = spec.radius_range

    radii = rng.uniform(rmin, rmax, size=m)
    centers = _initial_layout(rng, spec, radii)
    end = np.full(m, z)
    for oid, stop in spec.terminations.items():
        end[int(oid) - 1] = min(z, int(stop))

    track_c = np.zeros((z, m, 2))
    track_r = np.zeros((z, m))
    track_c[0], track_r[0] = centers, radii
    for t in range(1, z):
        alive = end > t
        for _ in range(max_retries):
            c = track_c[t - 1] + rng.normal(0.0, spec.drift_sigma, size=(m, 2))
            r = np.clip(track_r[t - 1] + rng.normal(0.0, 0.15, size=m), rmin, rmax)
            if _fits(c, r, alive, (y, x)):
                break
        else:
            c, r = track_c[t - 1], track_r[t - 1]
        track_c[t], track_r[t] = c, r

    yy, xx = np.mgrid[0:y, 0:x].astype(np.float64)
    intensity = np.full((z, y, x), BACKGROUND)
    labels = np.zeros((z, y, x), dtype=np.uint32)
    for t in range(z):
        for o in range(m):
            if t >= end[o]:
                continue
            d = np.hypot(yy - track_c[t, o, 0], xx - track_c[t, o, 1])
            ring = (d > track_r[t, o]) & (d <= track_r[t, o] + RING_WIDTH)
            inside = d <= track_r[t, o]
            if not inside.any():
                inside[int(round(track_c[t, o, 0])), int(round(track_c[t, o, 1]))] = True
            intensity[t][ring] = RING
            intensity[t][inside] = INTERIOR
            labels[t][inside] = o + 1

    intensity += rng.normal(0.0, spec.noise_sigma, size=intensity.shape)
    np.clip(intensity, 0.0, 1.0, out=intensity)
    for s in spec.artifact_slices:
        intensity[s] = 0.0
    return Volume(intensity.astype(np.float32)), LabelMap(labels)
