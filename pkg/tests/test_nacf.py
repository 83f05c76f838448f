import numpy as np
import pytest
import torch

from neraf.dsp import StftConfig
from neraf.encodings import EncodingConfig, PoseBounds
from neraf.errors import InvalidInputError
from neraf.nacf import (
    NacfConfig,
    NeuralAcousticField,
    QueryBatch,
    analytic_parameter_count,
    pose_queries,
    render_full_stft,
    render_rir,
    time_grid,
)
from neraf.oracle import Pose
from neraf.training.optim import gradient_check


def small_cfg(**kw):
    base = dict(freq_bins=17, width=16, feature_dim=8, grid_resolution=8, extractor_channels=(4, 8),
                encoding=EncodingConfig(pe_frequencies=4, pe_max_exponent=3))
    base.update(kw)
    return NacfConfig(**base)


def queries(n, dtype=torch.float32, seed=0):
    g = torch.Generator().manual_seed(seed)
    yaw = torch.rand(n, generator=g) * 6.28
    d = torch.stack([torch.cos(yaw), torch.sin(yaw), torch.zeros(n)], -1).to(dtype)
    return QueryBatch(torch.rand(n, 3, generator=g).to(dtype), torch.rand(n, 3, generator=g).to(dtype),
                      torch.rand(n, generator=g).to(dtype), d, d)


@pytest.fixture
def bounds():
    return PoseBounds((0.25, 0.25, 1.0), (3.75, 2.75, 1.8))


def test_output_range_and_heads():
    m = NeuralAcousticField(small_cfg(output_range=10.0))
    with torch.no_grad():
        m.heads[0][-1].weight.mul_(1e4)
    grid = torch.rand(7, 8, 8, 8)
    out = m(queries(32), m.extract_features(grid))
    assert out.shape == (32, 2, 17)
    assert out.abs().max() <= 10.0
    mono = NeuralAcousticField(small_cfg(head_count=1, parametrization="monaural"))
    assert mono(queries(4), mono.extract_features(grid)).shape == (4, 1, 17)


def test_missing_direction_rejected():
    m = NeuralAcousticField(small_cfg(parametrization="binaural", grid_mode="none"))
    q = queries(3)
    q.mic_dir = None
    with pytest.raises(InvalidInputError):
        m(q)
    mono = NeuralAcousticField(small_cfg(parametrization="monaural", grid_mode="none"))
    q = queries(3)
    q.src_dir = None
    with pytest.raises(InvalidInputError):
        mono(q)


@pytest.mark.parametrize(
    "kw",
    [dict(), dict(head_layers=0), dict(head_layers=2), dict(grid_mode="none"), dict(grid_mode="zero"),
     dict(parametrization="full", head_count=1), dict(width=512, feature_dim=256, freq_bins=129)],
)
def test_parameter_count_formula(kw):
    cfg = small_cfg(**kw)
    assert NeuralAcousticField(cfg).parameter_count() == analytic_parameter_count(cfg)


def test_zero_grid_ablation_is_structural():
    real = NeuralAcousticField(small_cfg(grid_mode="grid"), seed=1)
    zero = NeuralAcousticField(small_cfg(grid_mode="zero"), seed=1)
    assert real.parameter_count() == zero.parameter_count()
    a = zero.extract_features(torch.rand(7, 8, 8, 8))
    b = zero.extract_features(torch.rand(7, 8, 8, 8))
    assert torch.equal(a, b)
    assert not torch.equal(real.extract_features(torch.rand(7, 8, 8, 8)), real.extract_features(torch.rand(7, 8, 8, 8)))


def test_zero_grid_zero_projection_gives_zero_features():
    m = NeuralAcousticField(small_cfg())
    with torch.no_grad():
        m.encoder.proj.weight.zero_()
        m.encoder.proj.bias.zero_()
    f = m.extract_features(torch.zeros(7, 8, 8, 8))
    assert torch.all(f == 0)


def test_features_deterministic_and_validated():
    m = NeuralAcousticField(small_cfg())
    g = torch.rand(7, 8, 8, 8)
    assert torch.equal(m.extract_features(g), m.extract_features(g))
    with pytest.raises(InvalidInputError):
        m.extract_features(torch.rand(7, 4, 4, 4))
    with pytest.raises(InvalidInputError):
        m.extract_features(torch.rand(6, 8, 8, 8))


def test_same_seed_same_weights():
    a = NeuralAcousticField(small_cfg(), seed=5)
    b = NeuralAcousticField(small_cfg(), seed=5)
    for p, q in zip(a.parameters(), b.parameters()):
        assert torch.equal(p, q)


def test_encoder_gradients_match_finite_differences():
    m = NeuralAcousticField(small_cfg(extractor_channels=(2, 3), feature_dim=4), seed=2).double()
    g = torch.rand(7, 8, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    w = torch.linspace(-1, 1, 4, dtype=torch.float64)
    params = dict(m.encoder.named_parameters())
    report = gradient_check(lambda: (m.extract_features(g) * w).sum() + m.extract_features(g).pow(2).sum(), params)
    assert max(report.values()) < 1e-3


def test_forward_gradients_match_finite_differences():
    m = NeuralAcousticField(small_cfg(grid_mode="none", freq_bins=5, head_layers=1), seed=3).double()
    q = queries(6, torch.float64)
    params = dict(m.named_parameters())
    report = gradient_check(lambda: (m(q) ** 2).mean(), params)
    assert max(report.values()) < 1e-3


def test_time_grid():
    np.testing.assert_allclose(time_grid(5), [0, 0.25, 0.5, 0.75, 1])
    assert time_grid(1).tolist() == [0.0]


def test_full_render_consistency(bounds):
    m = NeuralAcousticField(small_cfg())
    feats = m.extract_features(torch.rand(7, 8, 8, 8))
    mic, src = Pose((1.0, 1.0, 1.5), 0.3), Pose((3.0, 2.0, 1.2))
    one = render_full_stft(m, feats, mic, src, 1, bounds)
    with torch.no_grad():
        direct = m(pose_queries([mic], [src], [0.0], bounds), feats, row_exact=True)
    np.testing.assert_array_equal(one.values[:, :, 0], direct[0].numpy().astype(np.float64))

    full = render_full_stft(m, feats, mic, src, 9, bounds)
    cols = []
    with torch.no_grad():
        for t in time_grid(9):
            cols.append(m(pose_queries([mic], [src], [t], bounds), feats, row_exact=True)[0].numpy())
    np.testing.assert_array_equal(full.values, np.stack(cols, -1).astype(np.float64))
    assert full.values.min() >= -10 and full.values.max() <= 10


def test_render_rir_length_and_determinism(bounds):
    cfg = StftConfig(32, 32, 8)
    m = NeuralAcousticField(small_cfg(freq_bins=17))
    feats = m.extract_features(torch.rand(7, 8, 8, 8))
    mic, src = Pose((1.0, 1.0, 1.5)), Pose((3.0, 2.0, 1.2))
    a = render_rir(m, feats, mic, src, cfg, 12, bounds, gl_iterations=5)
    b = render_rir(m, feats, mic, src, cfg, 12, bounds, gl_iterations=5)
    assert a.length == cfg.istft_length(12)
    assert a.channels == 2
    assert np.array_equal(a.samples, b.samples)
