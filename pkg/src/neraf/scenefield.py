"""Radiance fields, volume rendering and the voxel grid sampler.

The grid sampler turns any radiance field into a 7-channel ``S^3`` grid
(mean RGB, alpha, voxel-center xyz) that conditions the acoustic field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .encodings import EncodingConfig, positional_encode, spherical_harmonic_encode
from .errors import InvalidInputError


class RadianceField:
    """Interface: ``query(X, d) -> (color, sigma)``.

    ``X`` holds positions in the contracted ``[0, 1]^3`` cube, ``d`` unit view
    directions, both shaped ``(..., 3)``. ``color`` is ``(..., 3)`` in
    ``[0, 1]`` and ``sigma`` is ``(...)`` and nonnegative.
    """

    def query(self, X: torch.Tensor, d: torch.Tensor):
        raise NotImplementedError

    def __call__(self, X, d):
        return self.query(X, d)


# material albedo per absorption: bright surfaces reflect more sound
def _albedo_for(absorption: float) -> tuple:
    r = 1.0 - absorption
    return (0.15 + 0.7 * r, 0.25 + 0.5 * r, 0.9 - 0.6 * r)


@dataclass
class Box:
    lo: tuple
    hi: tuple
    color: tuple = (0.6, 0.4, 0.2)


class AnalyticShoeboxField(RadianceField):
    """Procedural occupancy field of a shoebox room.

    The room (plus ``wall`` meters of solid shell) is mapped isotropically
    into ``[0, 1]^3`` and centered. Walls and boxes have density
    ``sigma_solid``; the interior and the outside are empty. Surface color
    depends on the wall's absorption and weakly on the view direction.
    """

    def __init__(self, room, wall: float = 0.25, sigma_solid: float = 1e4, boxes=(), view_gain=0.2):
        self.room = room
        self.wall = float(wall)
        self.sigma_solid = float(sigma_solid)
        self.boxes = list(boxes)
        self.view_gain = float(view_gain)
        dims = np.asarray(room.dims, dtype=float)
        extent = dims + 2 * self.wall
        self.scale = float(extent.max())
        # contracted coordinate of room corner (0, 0, 0)
        self.origin = 0.5 - 0.5 * dims / self.scale
        self.wall_colors = np.array([_albedo_for(a) for a in room.absorption])

    def to_unit(self, position) -> np.ndarray:
        return self.origin + np.asarray(position, dtype=float) / self.scale

    def query(self, X, d):
        X = torch.as_tensor(X, dtype=torch.float64)
        d = torch.as_tensor(d, dtype=torch.float64)
        X, d = torch.broadcast_tensors(X, d)
        p = (X - torch.as_tensor(self.origin)) * self.scale  # meters, room frame
        dims = torch.as_tensor(self.room.dims, dtype=torch.float64)
        w = self.wall
        inside_shell = torch.all((p > -w) & (p < dims + w), dim=-1)
        inside_room = torch.all((p >= 0) & (p <= dims), dim=-1)
        solid = inside_shell & ~inside_room

        # nearest wall decides the color: penetration depth beyond each face
        depth = torch.stack(
            [-p[..., 0], p[..., 0] - dims[0], -p[..., 1], p[..., 1] - dims[1], -p[..., 2], p[..., 2] - dims[2]],
            dim=-1,
        )
        face = torch.argmax(depth, dim=-1)
        base = torch.as_tensor(self.wall_colors)[face]
        normals = torch.zeros(6, 3, dtype=torch.float64)
        for k in range(3):
            normals[2 * k, k] = 1.0
            normals[2 * k + 1, k] = -1.0
        shade = 1.0 - self.view_gain + self.view_gain * torch.clamp(
            -(d * normals[face]).sum(-1), 0.0, 1.0
        )
        color = base * shade[..., None]

        for box in self.boxes:
            lo = torch.as_tensor(box.lo, dtype=torch.float64)
            hi = torch.as_tensor(box.hi, dtype=torch.float64)
            inb = torch.all((p >= lo) & (p <= hi), dim=-1)
            solid = solid | inb
            color = torch.where(inb[..., None], torch.as_tensor(box.color, dtype=torch.float64), color)

        sigma = torch.where(solid, torch.full_like(p[..., 0], self.sigma_solid), torch.zeros_like(p[..., 0]))
        color = torch.where(solid[..., None], color, torch.zeros_like(color))
        return color, sigma


class TrainableField(nn.Module, RadianceField):
    """Small NeRF-style MLP: positional-encoded position, SH-encoded view direction."""

    def __init__(self, width: int = 128, layers: int = 4, encoding: EncodingConfig | None = None, seed: int = 0):
        super().__init__()
        self.encoding = encoding or EncodingConfig(pe_frequencies=6, pe_max_exponent=5, sh_levels=4)
        gen = torch.Generator().manual_seed(seed)
        in_dim = self.encoding.pe_dim(3)
        trunk = []
        for i in range(layers - 1):
            trunk.append(nn.Linear(in_dim if i == 0 else width, width))
        self.trunk = nn.ModuleList(trunk)
        self.sigma_out = nn.Linear(width, 1)
        self.color_out = nn.Linear(width + self.encoding.sh_dim, 3)
        with torch.no_grad():
            for m in self.modules():
                if isinstance(m, nn.Linear):
                    bound = 1.0 / math.sqrt(m.in_features)
                    m.weight.uniform_(-bound, bound, generator=gen)
                    m.bias.zero_()

    def query(self, X, d):
        dtype = self.sigma_out.weight.dtype
        X = torch.as_tensor(X, dtype=dtype)
        d = torch.as_tensor(d, dtype=dtype)
        X, d = torch.broadcast_tensors(X, d)
        h = positional_encode(X, self.encoding)
        for layer in self.trunk:
            h = torch.relu(layer(h))
        sigma = nn.functional.softplus(self.sigma_out(h)[..., 0])
        sh = spherical_harmonic_encode(d, self.encoding.sh_levels).to(dtype)
        color = torch.sigmoid(self.color_out(torch.cat([h, sh], dim=-1)))
        return color, sigma

    def forward(self, X, d):
        return self.query(X, d)


@dataclass
class Ray:
    origin: tuple
    direction: tuple
    t_near: float
    t_far: float
    samples: int = 64

    def __post_init__(self):
        if not self.t_near < self.t_far:
            raise InvalidInputError("t_near must be smaller than t_far")
        if self.samples < 1:
            raise InvalidInputError("ray needs at least one sample")


def composite(sigma: torch.Tensor, color: torch.Tensor, deltas: torch.Tensor):
    """Alpha-composite samples along the last sample axis.

    ``sigma`` and ``deltas`` are ``(..., n)``, ``color`` is ``(..., n, 3)``.
    Returns ``(rgb, transmittance)``, the transmittance being what is left
    after the last sample.
    """
    alpha = 1.0 - torch.exp(-sigma * deltas)
    trans = torch.cumprod(1.0 - alpha, dim=-1)
    before = torch.cat([torch.ones_like(trans[..., :1]), trans[..., :-1]], dim=-1)
    weights = alpha * before
    rgb = (weights[..., None] * color).sum(dim=-2)
    return rgb, trans[..., -1]


def ray_samples(rays_o, rays_d, t_near, t_far, n, generator=None):
    """Sample positions along rays; stratified when a generator is given."""
    rays_o = torch.as_tensor(rays_o, dtype=torch.float64)
    rays_d = torch.as_tensor(rays_d, dtype=torch.float64)
    edges = torch.linspace(float(t_near), float(t_far), n + 1, dtype=rays_o.dtype)
    lo, hi = edges[:-1], edges[1:]
    if generator is None:
        t = 0.5 * (lo + hi)
        t = t.expand(*rays_o.shape[:-1], n)
    else:
        u = torch.rand(*rays_o.shape[:-1], n, generator=generator, dtype=rays_o.dtype)
        t = lo + (hi - lo) * u
    deltas = torch.full_like(t, (float(t_far) - float(t_near)) / n)
    pts = rays_o[..., None, :] + t[..., None] * rays_d[..., None, :]
    return pts, deltas


def render_ray(field: RadianceField, ray: Ray, generator=None):
    """Volume-render one ray; returns ``(rgb, transmittance)``."""
    pts, deltas = ray_samples(
        torch.as_tensor(ray.origin, dtype=torch.float64),
        torch.as_tensor(ray.direction, dtype=torch.float64),
        ray.t_near,
        ray.t_far,
        ray.samples,
        generator,
    )
    d = torch.as_tensor(ray.direction, dtype=torch.float64).expand_as(pts)
    color, sigma = field.query(pts, d)
    return composite(sigma.to(torch.float64), color.to(torch.float64), deltas)


def render_rays(field: RadianceField, rays_o, rays_d, t_near, t_far, n, generator=None):
    """Batched :func:`render_ray` that keeps autograd intact for trainable fields."""
    pts, deltas = ray_samples(rays_o, rays_d, t_near, t_far, n, generator)
    d = torch.as_tensor(rays_d, dtype=pts.dtype)[..., None, :].expand_as(pts)
    color, sigma = field.query(pts, d)
    return composite(sigma, color, deltas.to(sigma.dtype))


def voxel_view_directions(n: int = 18) -> np.ndarray:
    """Fibonacci-sphere unit vectors, ``(n, 3)``."""
    if n < 1:
        raise InvalidInputError("need at least one direction")
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * np.arange(n)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


class VoxelGrid:
    """``S^3 x 7`` scene grid: mean RGB, alpha, voxel-center xyz.

    ``values[i, j, k]`` belongs to the voxel centered at
    ``((i + .5) / S, (j + .5) / S, (k + .5) / S)``; flat voxel index is
    row-major ``(i * S + j) * S + k``.
    """

    def __init__(self, resolution: int = 128, delta: float | None = None, n_directions: int = 18):
        if resolution < 1:
            raise InvalidInputError("resolution must be >= 1")
        self.resolution = int(resolution)
        self.delta = 1.0 / resolution if delta is None else float(delta)
        self.n_directions = int(n_directions)
        S = self.resolution
        self.values = np.zeros((S, S, S, 7), dtype=np.float32)
        self.values[..., 4:] = self.centers().reshape(S, S, S, 3)

    @property
    def n_voxels(self) -> int:
        return self.resolution**3

    def centers(self, index=None) -> np.ndarray:
        """Voxel centers for flat indices (all voxels by default), ``(n, 3)``."""
        S = self.resolution
        if index is None:
            index = np.arange(S**3)
        index = np.asarray(index)
        i, rem = np.divmod(index, S * S)
        j, k = np.divmod(rem, S)
        return (np.stack([i, j, k], axis=-1) + 0.5) / S

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1, 7)

    def channels_first(self) -> np.ndarray:
        return np.ascontiguousarray(np.moveaxis(self.values, -1, 0))

    def copy(self) -> "VoxelGrid":
        g = VoxelGrid.__new__(VoxelGrid)
        g.resolution, g.delta, g.n_directions = self.resolution, self.delta, self.n_directions
        g.values = self.values.copy()
        return g

    @classmethod
    def from_values(cls, values, delta=None, n_directions=18) -> "VoxelGrid":
        v = np.asarray(values, dtype=np.float32)
        if v.ndim != 4 or v.shape[-1] != 7 or not (v.shape[0] == v.shape[1] == v.shape[2]):
            raise InvalidInputError(f"grid values must be (S, S, S, 7), got {v.shape}")
        g = cls.__new__(cls)
        g.resolution = v.shape[0]
        g.delta = 1.0 / g.resolution if delta is None else float(delta)
        g.n_directions = n_directions
        g.values = v.copy()
        return g


def sample_voxels(field: RadianceField, centers, directions, delta: float):
    """Mean color and alpha for voxel centers; differentiable for trainable fields.

    Each direction contributes the color of a one-sample ray through the
    center, ``alpha * c_j``; colors are averaged over directions.
    """
    X = torch.as_tensor(centers)
    dirs = torch.as_tensor(directions)
    n, m = X.shape[0], dirs.shape[0]
    Xq = X[:, None, :].expand(n, m, 3)
    dq = dirs[None, :, :].expand(n, m, 3)
    color, sigma = field.query(Xq, dq.to(Xq.dtype))
    # density is view independent; take the first direction's value
    sig = sigma[:, 0]
    alpha = 1.0 - torch.exp(-sig * delta)
    rgb = alpha[:, None] * color.mean(dim=1)
    return rgb, alpha


def populate_grid(field: RadianceField, grid: VoxelGrid, batch_size: int = 4096, cursor: int = 0):
    """Refresh the next ``batch_size`` voxels in row-major order, wrapping.

    Writes in place and returns ``(grid, new_cursor)``; calling repeatedly
    sweeps the whole grid.
    """
    if batch_size < 1:
        raise InvalidInputError("batch_size must be >= 1")
    n = grid.n_voxels
    idx = (cursor + np.arange(min(batch_size, n))) % n
    dirs = voxel_view_directions(grid.n_directions)
    with torch.no_grad():
        rgb, alpha = sample_voxels(field, grid.centers(idx), dirs, grid.delta)
    flat = grid.flat()
    flat[idx, 0:3] = rgb.detach().cpu().numpy()
    flat[idx, 3] = alpha.detach().cpu().numpy()
    return grid, int((cursor + batch_size) % n)


def build_grid(field: RadianceField, resolution: int = 128, batch_size: int = 4096, delta=None, n_directions=18):
    """Fully populated grid for ``field``."""
    grid = VoxelGrid(resolution, delta, n_directions)
    cursor = 0
    for _ in range(math.ceil(grid.n_voxels / batch_size)):
        grid, cursor = populate_grid(field, grid, batch_size, cursor)
    return grid


def grid_sections(grid: VoxelGrid, axis: int, indices):
    """RGB and alpha slices of ``grid`` perpendicular to ``axis``.

    Returns a list of ``{"index", "rgb" (S, S, 3), "alpha" (S, S)}`` dicts.
    """
    if axis not in (0, 1, 2):
        raise InvalidInputError("axis must be 0, 1 or 2")
    out = []
    for i in indices:
        if not 0 <= int(i) < grid.resolution:
            raise InvalidInputError(f"slice index {i} outside [0, {grid.resolution})")
        sl = np.take(grid.values, int(i), axis=axis)
        out.append({"index": int(i), "rgb": sl[..., :3].copy(), "alpha": sl[..., 3].copy()})
    return out


def save_sections(sections, out_dir, axis: int) -> list:
    """Write each section as ``rgb`` and ``alpha`` PNGs; returns the paths."""
    from PIL import Image

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in sections:
        rgb = (np.clip(s["rgb"], 0, 1) * 255).astype(np.uint8)
        alpha = (np.clip(s["alpha"], 0, 1) * 255).astype(np.uint8)
        p_rgb = out / f"axis{axis}_{s['index']:04d}_rgb.png"
        p_a = out / f"axis{axis}_{s['index']:04d}_alpha.png"
        Image.fromarray(rgb).save(p_rgb)
        Image.fromarray(alpha).save(p_a)
        paths += [p_rgb, p_a]
    return paths
