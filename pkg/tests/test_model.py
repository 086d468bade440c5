import numpy as np
import pytest
import torch

from dawsol.core import RunConfig
from dawsol.model import CAMNet, InputError, aggregate, estimate, generate_cam, normalize_maps, upsample


@pytest.fixture(scope="module")
def net():
    torch.manual_seed(0)
    return CAMNet(RunConfig(image_size=224)).eval()


def test_stride16_feature_shape(net):
    Z, z, scores = net(torch.rand(2, 3, 224, 224))
    assert Z.shape == (2, 64, 196)
    assert z.shape == (2, 64) and scores.shape == (2, 3)
    assert net.feature_shape() == (14, 14)


def test_wrong_shape_is_input_error(net):
    with pytest.raises(InputError):
        net(torch.rand(1, 3, 96, 96))
    with pytest.raises(InputError):
        net(torch.rand(1, 1, 224, 224))


def test_zero_image_is_finite(net):
    Z, z, s = net(torch.zeros(1, 3, 224, 224))
    assert torch.isfinite(Z).all() and torch.isfinite(s).all()
    assert torch.isfinite(generate_cam(net, torch.zeros(1, 3, 224, 224))).all()


def test_identical_images_identical_features(net):
    x = torch.rand(1, 3, 224, 224)
    Z, _, _ = net(torch.cat([x, x]))
    assert torch.equal(Z[0], Z[1])


def test_aggregate_examples():
    assert aggregate(np.array([[1.0, 3.0], [2.0, 2.0]])).tolist() == [2.0, 2.0]
    assert np.allclose(aggregate(np.full((4, 9), 2.5)), 2.5)
    col = np.array([[1.0], [-2.0], [7.0]])
    assert aggregate(col).tolist() == [1.0, -2.0, 7.0]
    with pytest.raises(InputError):
        aggregate(np.zeros((3, 0)))


def test_estimate_examples():
    z = np.array([[1.0], [2.0], [3.0]])
    assert np.array_equal(estimate(z, np.eye(3), np.zeros(3)), z)
    out = estimate(np.random.default_rng(0).normal(size=(3, 5)), np.zeros((2, 3)), np.array([4.0, -1.0]))
    assert np.all(out[0] == 4.0) and np.all(out[1] == -1.0)
    with pytest.raises(InputError):
        estimate(np.zeros((4, 2)), np.zeros((2, 3)), np.zeros(2))


def test_linear_commute_100_instances():
    rng = np.random.default_rng(0)
    for _ in range(100):
        c, n, k = rng.integers(1, 17), rng.integers(1, 50), rng.integers(1, 8)
        Z = rng.normal(size=(c, n))
        W, b = rng.normal(size=(k, c)), rng.normal(size=k)
        lhs = estimate(aggregate(Z)[:, None], W, b)[:, 0]
        rhs = estimate(Z, W, b).mean(1)
        np.testing.assert_allclose(lhs, rhs, atol=1e-6)


def test_forward_scores_are_mean_of_score_map(net):
    x = torch.rand(2, 3, 224, 224)
    with torch.no_grad():
        _, _, scores = net(x)
        maps = net.score_maps(x)
    torch.testing.assert_close(maps.flatten(2).mean(-1), scores, atol=1e-5, rtol=1e-5)


def test_constant_map_normalizes_to_zero():
    out = normalize_maps(torch.full((1, 2, 4, 4), 3.0))
    assert torch.equal(out, torch.zeros_like(out))


def test_normalization_range_and_idempotence():
    m = torch.randn(3, 2, 5, 7)
    n1 = normalize_maps(m)
    assert torch.allclose(n1.flatten(-2).min(-1).values, torch.zeros(3, 2))
    assert torch.allclose(n1.flatten(-2).max(-1).values, torch.ones(3, 2))
    torch.testing.assert_close(normalize_maps(n1), n1)


def _bilinear_oracle(m, size):
    # half-pixel-centre bilinear interpolation with edge clamping
    h, w = m.shape
    out = np.zeros((size, size))
    for i in range(size):
        for j in range(size):
            y = max((i + 0.5) * h / size - 0.5, 0.0)
            x = max((j + 0.5) * w / size - 0.5, 0.0)
            y0, x0 = int(y), int(x)
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            dy, dx = y - y0, x - x0
            out[i, j] = ((1 - dy) * (1 - dx) * m[y0, x0] + (1 - dy) * dx * m[y0, x1]
                         + dy * (1 - dx) * m[y1, x0] + dy * dx * m[y1, x1])
    return out


def test_upsample_matches_bilinear_oracle_and_keeps_peak_quadrant():
    m = np.array([[0.1, 0.2], [0.9, 0.3]])
    up = upsample(torch.tensor(m)[None, None], 4)[0, 0].numpy()
    np.testing.assert_allclose(up, _bilinear_oracle(m, 4), atol=1e-12)
    r, c = np.unravel_index(up.argmax(), up.shape)
    assert r >= 2 and c < 2


def test_generate_cam_shape_and_range(net):
    cam = generate_cam(net, torch.rand(2, 3, 224, 224))
    assert cam.shape == (2, 3, 224, 224)
    assert cam.min() >= 0 and cam.max() <= 1
