import math

import numpy as np
import pytest
import torch

from neraf.errors import InvalidInputError
from neraf.oracle import ShoeboxRoom
from neraf.scenefield import (
    AnalyticShoeboxField,
    Box,
    RadianceField,
    Ray,
    TrainableField,
    VoxelGrid,
    build_grid,
    composite,
    grid_sections,
    populate_grid,
    render_ray,
    render_rays,
    sample_voxels,
    save_sections,
    voxel_view_directions,
)


class ConstantField(RadianceField):
    def __init__(self, sigma, color):
        self.sigma, self.color = sigma, color

    def query(self, X, d):
        X = torch.as_tensor(X, dtype=torch.float64)
        s = torch.full(X.shape[:-1], float(self.sigma), dtype=torch.float64)
        c = torch.as_tensor(self.color, dtype=torch.float64).expand(*X.shape[:-1], 3)
        return c, s


def brute_force_grid(field, S, n_dirs=18):
    """Per-voxel reference: one single-sample ray per direction, centered on the voxel."""
    delta = 1.0 / S
    dirs = torch.as_tensor(voxel_view_directions(n_dirs))
    out = np.zeros((S, S, S, 4))
    for i in range(S):
        for j in range(S):
            for k in range(S):
                c = torch.tensor([(i + 0.5) / S, (j + 0.5) / S, (k + 0.5) / S], dtype=torch.float64)
                origins = c - 0.5 * delta * dirs
                rgb, trans = render_rays(field, origins, dirs, 0.0, delta, 1)
                out[i, j, k, :3] = rgb.mean(0).numpy()
                out[i, j, k, 3] = 1.0 - trans[0].item()
    return out


def test_empty_ray():
    rgb, trans = render_ray(ConstantField(0.0, (1, 1, 1)), Ray((0, 0, 0), (1, 0, 0), 0.0, 1.0, 16))
    assert torch.all(rgb == 0) and trans.item() == 1.0


def test_opaque_slab_limit():
    rgb, _ = render_ray(ConstantField(1e6, (1, 0, 0)), Ray((0, 0, 0), (1, 0, 0), 0.0, 1.0, 8))
    np.testing.assert_allclose(rgb.numpy(), [1, 0, 0], atol=1e-12)


def test_two_sample_compositing():
    sigma = torch.tensor([0.7, 2.0], dtype=torch.float64)
    color = torch.tensor([[0.2, 0.4, 0.6], [0.9, 0.1, 0.5]], dtype=torch.float64)
    deltas = torch.tensor([0.3, 0.5], dtype=torch.float64)
    rgb, trans = composite(sigma, color, deltas)
    a0 = 1 - math.exp(-0.7 * 0.3)
    a1 = 1 - math.exp(-2.0 * 0.5)
    ref = a0 * color[0] + (1 - a0) * a1 * color[1]
    np.testing.assert_allclose(rgb.numpy(), ref.numpy(), atol=1e-12)
    assert trans.item() == pytest.approx((1 - a0) * (1 - a1), abs=1e-12)


def test_ray_validation():
    with pytest.raises(InvalidInputError):
        Ray((0, 0, 0), (1, 0, 0), 1.0, 0.5)


def test_view_directions():
    d = voxel_view_directions(18)
    assert d.shape == (18, 3)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)
    cos = d @ d.T
    np.fill_diagonal(cos, -1)
    assert math.degrees(math.acos(cos.max())) > 30
    assert np.linalg.norm(d.mean(0)) < 0.15
    one = voxel_view_directions(1)
    assert one.shape == (1, 3) and np.linalg.norm(one[0]) == pytest.approx(1.0)


def test_wall_and_empty_voxels(room):
    field = AnalyticShoeboxField(room)
    c_in = torch.as_tensor(field.to_unit((2.0, 1.5, 1.2)))[None]
    c_wall = torch.as_tensor(field.to_unit((-0.1, 1.5, 1.2)))[None]
    dirs = torch.as_tensor(voxel_view_directions(18))
    rgb, alpha = sample_voxels(field, c_wall, dirs, 1 / 128)
    assert alpha.item() == pytest.approx(1 - math.exp(-1e4 / 128), abs=1e-12)
    rgb, alpha = sample_voxels(field, c_in, dirs, 1 / 128)
    assert alpha.item() == 0.0 and torch.all(rgb == 0)


@pytest.mark.parametrize("S", [16, 32])
def test_populate_grid_matches_brute_force(S):
    room = ShoeboxRoom((4, 3, 2.5), (0.3, 0.3, 0.5, 0.5, 0.1, 0.8))
    field = AnalyticShoeboxField(room, boxes=[Box((1.0, 1.0, 0.0), (1.6, 1.8, 0.9))])
    grid = build_grid(field, S, batch_size=1000)
    ref = brute_force_grid(field, S)
    assert np.max(np.abs(grid.values[..., :4] - ref)) < 1e-6
    np.testing.assert_array_equal(grid.values[..., 4:], grid.centers().reshape(S, S, S, 3).astype(np.float32))


def test_batch_size_invariance(room):
    field = AnalyticShoeboxField(room)
    S = 16
    one = build_grid(field, S, batch_size=S**3)
    halves = VoxelGrid(S)
    cursor = 0
    for _ in range(2):
        halves, cursor = populate_grid(field, halves, S**3 // 2, cursor)
    assert cursor == 0
    odd = build_grid(field, S, batch_size=777)
    assert np.array_equal(one.values, halves.values)
    assert np.array_equal(one.values, odd.values)


def test_populate_writes_each_voxel_once():
    g = VoxelGrid(4)
    g.values[..., 0] = -1
    field = ConstantField(0.0, (0, 0, 0))
    g, cur = populate_grid(field, g, 40, 0)
    assert np.sum(g.flat()[:, 0] == 0) == 40 and cur == 40
    g, cur = populate_grid(field, g, 40, cur)
    g, cur = populate_grid(field, g, 40, cur)
    assert np.all(g.flat()[:, 0] == 0) and cur == 120 % 64


def test_sections(room, tmp_path):
    S = 16
    field = AnalyticShoeboxField(room)
    grid = build_grid(field, S)
    mid = grid_sections(grid, 2, [S // 2])[0]
    a = mid["alpha"]
    # expected occupancy of the mid-height slice from the room geometry
    c = (np.arange(S) + 0.5) / S
    px = (c - field.origin[0]) * field.scale
    py = (c - field.origin[1]) * field.scale
    shell = lambda v, L: (v > -field.wall) & (v < L + field.wall)  # noqa: E731
    inside = lambda v, L: (v >= 0) & (v <= L)  # noqa: E731
    X, Y = np.meshgrid(px, py, indexing="ij")
    wall = shell(X, 4.0) & shell(Y, 3.0) & ~(inside(X, 4.0) & inside(Y, 3.0))
    assert wall.any() and (~wall).any()
    np.testing.assert_array_equal(a > 0.5, wall)
    assert a[S // 2, S // 2] == 0.0
    assert grid_sections(grid, 0, []) == []
    with pytest.raises(InvalidInputError):
        grid_sections(grid, 0, [S])
    uniform = VoxelGrid.from_values(np.full((4, 4, 4, 7), 0.5, dtype=np.float32))
    for s in grid_sections(uniform, 1, [0, 3]):
        assert np.all(s["rgb"] == 0.5)
    paths = save_sections(grid_sections(grid, 2, [2, 8]), tmp_path, 2)
    assert all(p.exists() for p in paths)


def test_trainable_field_outputs():
    f = TrainableField(width=32, layers=3, seed=0)
    X = torch.rand(5, 7, 3)
    d = torch.nn.functional.normalize(torch.randn(5, 7, 3), dim=-1)
    color, sigma = f.query(X, d)
    assert color.shape == (5, 7, 3) and sigma.shape == (5, 7)
    assert torch.all((color >= 0) & (color <= 1)) and torch.all(sigma >= 0)
    rgb, _ = render_rays(f, torch.rand(4, 3), torch.nn.functional.normalize(torch.randn(4, 3), dim=-1), 0, 0.5, 8)
    rgb.sum().backward()
    assert all(p.grad is not None for p in f.parameters())
