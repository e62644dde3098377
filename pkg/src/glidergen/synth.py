"""Parametric glider corpus: fuselage ellipsoid, swept tapered wing, optional tail.

Each glider is an implicit union (pointwise max, positive inside) sampled on a
fine lattice and surfaced into one closed triangle mesh.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .mesh import Aabb, TriangleMesh, save_obj
from .sdf import extract_surface, perturb_zero_nodes, sample_implicit

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GliderParams:
    """Dimensions in meters (fuselage along x, up along y, span along z)."""

    fuselage_length: float = 1.0
    fuselage_radius: float = 0.07
    span: float = 0.7
    root_chord: float = 0.3
    taper: float = 0.6
    sweep_deg: float = 15.0
    wing_thickness: float = 0.14
    wing_x: float = -0.15
    wing_y: float = 0.0
    tail: bool = True
    tail_span: float = 0.3
    tail_chord: float = 0.14


def _ellipsoid(p, center, radii):
    q = (p - center) / radii
    return (1.0 - np.linalg.norm(q, axis=1)) * np.min(radii)


def _box(q, half):
    """Positive-inside box distance in local coordinates."""
    d = np.abs(q) - half
    outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
    inside = np.minimum(np.max(d, axis=1), 0.0)
    return -(outside + inside)


def _wing(p, x_root, y, span, root_chord, taper, sweep, thickness):
    z = np.abs(p[:, 2])
    frac = np.clip(z / (0.5 * span), 0.0, 1.0)
    chord = root_chord * (1.0 - (1.0 - taper) * frac)
    lead = x_root + 0.5 * root_chord - z * math.tan(sweep)
    mid = lead - 0.5 * chord
    q = np.stack([p[:, 0] - mid, p[:, 1] - y, p[:, 2]], axis=1)
    half = np.stack([0.5 * chord, np.full_like(chord, 0.5 * thickness), np.full_like(chord, 0.5 * span)], axis=1)
    return _box(q, half)


def glider_field(g: GliderParams):
    """Implicit function (points (N, 3) -> values) of a glider."""
    L = g.fuselage_length
    sweep = math.radians(g.sweep_deg)

    def field(p):
        f = _ellipsoid(p, np.zeros(3), np.array([0.5 * L, g.fuselage_radius, g.fuselage_radius]))
        f = np.maximum(f, _wing(p, g.wing_x, g.wing_y, g.span, g.root_chord, g.taper, sweep, g.wing_thickness))
        if g.tail:
            tx = -0.5 * L + 0.5 * g.tail_chord + 0.02
            f = np.maximum(f, _wing(p, tx, 0.0, g.tail_span, g.tail_chord, 0.8, sweep, g.wing_thickness))
        return f

    return field


def _solid_bounds(field, reach: float, probe: int = 49) -> Aabb:
    coarse = sample_implicit(field, (probe,) * 3, Aabb((-reach,) * 3, (reach,) * 3))
    inside = np.argwhere(coarse.values > 0)
    if len(inside) == 0:
        raise ValueError("glider parameters describe no solid")
    lo = coarse.origin + coarse.spacing * (inside.min(axis=0) - 1)
    hi = coarse.origin + coarse.spacing * (inside.max(axis=0) + 1)
    return Aabb(lo, hi)


def glider_mesh(g: GliderParams, resolution: int = 33) -> TriangleMesh:
    field = glider_field(g)
    solid = _solid_bounds(field, reach=max(g.fuselage_length, g.span))
    half = 0.5 * float(solid.extent.max()) * (resolution - 1) / (resolution - 5)
    bounds = Aabb(solid.center - half, solid.center + half)
    grid = perturb_zero_nodes(sample_implicit(field, (resolution,) * 3, bounds))
    mesh = extract_surface(grid)
    return TriangleMesh(mesh.vertices, mesh.triangles, {"glider": asdict(g)})


def random_params(rng: np.random.Generator) -> GliderParams:
    """Randomized span, chord, taper, sweep, thickness and tail; span stays
    below fuselage length so the principal axis is the fuselage."""
    span = rng.uniform(0.35, 0.9)
    root_chord = rng.uniform(0.16, 0.4)
    taper = rng.uniform(0.4, 1.0)
    wing_x = rng.uniform(-0.2, 0.15)
    # keep the swept tip ahead of the tail end of the fuselage
    room = wing_x + 0.5 * root_chord - taper * root_chord + 0.42
    max_sweep = math.degrees(math.atan(max(room, 0.0) / (0.5 * span)))
    return GliderParams(
        fuselage_length=1.0,
        fuselage_radius=rng.uniform(0.1, 0.16),
        span=span,
        root_chord=root_chord,
        taper=taper,
        sweep_deg=rng.uniform(0.0, min(35.0, max_sweep)),
        wing_thickness=rng.uniform(0.2, 0.28),
        wing_x=wing_x,
        wing_y=rng.uniform(-0.03, 0.03),
        tail=bool(rng.random() < 0.7),
        tail_span=rng.uniform(0.2, 0.45) * span / 0.7,
        tail_chord=rng.uniform(0.12, 0.18),
    )


def write_corpus(out_dir, count: int, seed: int = 0, resolution: int = 33) -> list[Path]:
    """Write ``count`` glider OBJ files named glider_0000.obj, ..."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        g = random_params(rng)
        path = out / f"glider_{i:04d}.obj"
        save_obj(glider_mesh(g, resolution), path)
        paths.append(path)
    log.info("wrote %d synthetic gliders to %s", count, out)
    return paths
