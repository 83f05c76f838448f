import itertools
import math

import numpy as np
import pytest

from neraf.errors import InvalidInputError, ProviderError
from neraf.oracle import (
    Pose,
    RirDataset,
    ShoeboxRoom,
    generate_dataset,
    grid_positions,
    image_source_rir,
    image_sources,
    loudness_map,
    oracle_provider,
    receiver_positions,
)


def test_direct_path_only():
    room = ShoeboxRoom((4, 3, 2.5), 1.0)
    w = image_source_rir(room, Pose((1, 1, 1)), Pose((3, 2, 1)), 48000, 0.05)
    x = w.samples[0]
    d = math.sqrt(5)
    delay = d / 343 * 48000
    assert delay / 48000 == pytest.approx(6.519e-3, abs=1e-6)
    # the fractional-delay kernel spreads the arrival; its sum is the gain
    assert x.sum() == pytest.approx(1 / d, rel=1e-3)
    assert abs(np.argmax(np.abs(x)) - delay) < 1.0
    far = np.abs(np.arange(x.size) - delay) > 9
    assert np.all(x[far] == 0)


def test_unit_distance_amplitude():
    room = ShoeboxRoom((4, 3, 2.5), 1.0)
    w = image_source_rir(room, Pose((1, 1, 1)), Pose((2, 1, 1)), 343 * 1000, 0.01)
    # integer-sample delay: the kernel collapses to a single tap
    x = w.samples[0]
    k = int(np.argmax(x))
    assert k / (343 * 1000) == pytest.approx(1 / 343, abs=1e-9)
    assert x[k] == pytest.approx(1.0, abs=1e-9)
    assert 1 / 343 == pytest.approx(2.915e-3, abs=1e-6)


def _brute_first_order(room, src, mic):
    # direct path plus one mirror image per wall
    src = np.asarray(src, float)
    out = [(np.linalg.norm(src - mic), 1.0)]
    refl = room.reflection
    for axis in range(3):
        lo = src.copy()
        lo[axis] = -src[axis]
        hi = src.copy()
        hi[axis] = 2 * room.dims[axis] - src[axis]
        out.append((np.linalg.norm(lo - mic), refl[2 * axis]))
        out.append((np.linalg.norm(hi - mic), refl[2 * axis + 1]))
    return sorted(out)


def test_first_order_matches_brute_force():
    absorb = (1.0, 0.36, 1.0, 1.0, 1.0, 1.0)
    room = ShoeboxRoom((4, 3, 2.5), absorb, max_order=1)
    src, mic = np.array([1.0, 1.2, 0.7]), np.array([2.9, 2.1, 1.6])
    dist, gains, orders = image_sources(room, src, mic)
    got = sorted(zip(dist, gains))
    ref = _brute_first_order(room, src, mic)
    assert len(got) == 7
    np.testing.assert_allclose([g[0] for g in got], [r[0] for r in ref], atol=1e-12)
    np.testing.assert_allclose([g[1] for g in got], [r[1] for r in ref], atol=1e-12)
    assert room.reflection[1] == pytest.approx(0.8)


def test_image_count_order_six(room):
    dist, gains, orders = image_sources(room, np.array([1.1, 0.9, 1.2]), np.array([2.0, 2.0, 1.5]))
    # number of lattice images with reflection order <= N: (2N+1)(2N^2+2N+3)/3
    assert len(dist) == 13 * 87 // 3
    assert orders.max() == 6


def test_pose_outside_room(room):
    with pytest.raises(InvalidInputError):
        image_source_rir(room, Pose((5, 1, 1)), Pose((1, 1, 1)))


def test_truncation_flag(room):
    w = image_source_rir(room, Pose((1, 1, 1)), Pose((3, 2, 1)), 16000, 0.005)
    assert w.meta["truncated"]
    assert not image_source_rir(ShoeboxRoom((4, 3, 2.5), 1.0), Pose((1, 1, 1)), Pose((3, 2, 1)), 16000, 0.05).meta["truncated"]


def test_dual_omni_receivers():
    r = receiver_positions(Pose((1, 1, 1), 0.0), "dual_omni", 0.2)
    np.testing.assert_allclose(r, [[1, 1.1, 1], [1, 0.9, 1]], atol=1e-12)


def test_grid_and_split_counts(room):
    pos = grid_positions(room, 0.5, 0.25)
    assert len(pos) == 35
    ds = generate_dataset(room, sources=[Pose((1.1, 0.9, 1.2))], seed=3, duration=0.02)
    assert len(ds) == 140
    assert (len(ds.train), len(ds.test)) == (126, 14)
    keys = lambda es: {(e.src, e.mic) for e in es}  # noqa: E731
    assert not keys(ds.train) & keys(ds.test)


def test_source_split_disjoint():
    room = ShoeboxRoom((4, 3, 2.5), 0.5, max_order=1)
    rng = np.random.default_rng(0)
    sources = [Pose(tuple(rng.uniform([0.3, 0.3, 0.3], [3.7, 2.7, 2.2]))) for _ in range(13)]
    ds = generate_dataset(room, spacing=1.0, orientations=(0.0,), sources=sources, split="source",
                          fraction=11 / 13, duration=0.01)
    held = {e.src_index for e in ds.test}
    assert len(held) == 2
    assert not held & {e.src_index for e in ds.train}


def test_empty_grid_rejected():
    with pytest.raises(InvalidInputError):
        generate_dataset(ShoeboxRoom((1, 1, 2)), spacing=0.5, margin=0.5, sources=[Pose((0.5, 0.5, 1))])


def test_dataset_save_load(tmp_path):
    room = ShoeboxRoom((4, 3, 2.5), 0.5, max_order=1)
    ds = generate_dataset(room, spacing=1.5, orientations=(0.0,), sources=[Pose((1, 1, 1))], duration=0.01)
    ds.save(tmp_path)
    back = RirDataset.load(tmp_path)
    assert len(back) == len(ds)
    for a, b in zip(ds.entries, back.entries):
        assert a.src == b.src and a.mic == b.mic and a.split == b.split
        np.testing.assert_allclose(a.waveform.samples, b.waveform.samples, atol=1e-6)


def test_loudness_inverse_square():
    room = ShoeboxRoom((6, 6, 3), 1.0)
    prov = oracle_provider(room, 16000, 0.05)
    src = Pose((1.0, 3.0, 1.5))
    e1 = np.sum(prov(src, Pose((2.0, 3.0, 1.5))).samples ** 2)
    e2 = np.sum(prov(src, Pose((3.0, 3.0, 1.5))).samples ** 2)
    # band-limited kernels carry slightly different energy per fractional delay
    assert e1 / e2 == pytest.approx(4.0, rel=0.02)


def test_loudness_symmetry_and_heights():
    room = ShoeboxRoom((4, 3, 2.5), 0.3, max_order=2)
    prov = oracle_provider(room, 16000, 0.05)
    src = Pose((2.0, 1.5, 1.25))
    a = loudness_map(prov, src, 0.5, [1.5], ((0, 4), (0, 3)))
    np.testing.assert_allclose(a.values, a.values[:, ::-1], rtol=1e-9, atol=0)
    b = loudness_map(prov, src, 0.5, [1.5, 1.5], ((0, 4), (0, 3)))
    np.testing.assert_allclose(a.values, b.values, rtol=1e-12)


def test_loudness_provider_error_has_cell():
    def bad(src, mic):
        raise RuntimeError("boom")

    with pytest.raises(ProviderError) as info:
        loudness_map(bad, Pose((1, 1, 1)), 1.0, [1.5], ((0, 2), (0, 2)))
    assert info.value.cell == (0.5, 0.5, 1.5)


def test_loudness_outputs(tmp_path):
    room = ShoeboxRoom((4, 3, 2.5), 0.5, max_order=1)
    lm = loudness_map(oracle_provider(room, 8000, 0.02), Pose((1, 1, 1)), 1.0, [1.5], ((0, 4), (0, 3)))
    lm.to_csv(tmp_path / "m.csv")
    lm.to_png(tmp_path / "m.png")
    assert (tmp_path / "m.png").stat().st_size > 0
    assert len((tmp_path / "m.csv").read_text().splitlines()) == 1 + lm.values.size


def test_room_validation():
    for bad in [dict(dims=(0, 1, 1)), dict(dims=(1, 1, 1), absorption=(1.5,)), dict(dims=(1, 1, 1), max_order=-1)]:
        with pytest.raises(InvalidInputError):
            ShoeboxRoom(**bad)
