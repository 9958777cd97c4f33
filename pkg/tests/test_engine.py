import pytest
import numpy as np

from app.engine.avatar import SEPARATION_THRESHOLD, avatar_masks, render_avatar
from app.engine.images import DomainTag, ImageTensor
from app.engine.oracle import oracle_invert, polygon_bank
from app.engine.params import ParamVector
from app.engine.photo import PhotoNuisance, ground_truth_map, photo_seed, render_photo, sample_identity
from app.engine.polygon import expected_area, render_polygon
from app.engine.sampling import DomainSampler, SamplerKind, sample_params
from app.engine.warp import affine_warp
from app.exceptions import ContractError


# Polygon engine

def test_square_area(polygon):
    """Test a square of circumradius 15 covers about 2 * 15^2 pixels"""
    image = render_polygon(polygon.encode({"vertices": 4, "radius": 15.0, "rotation": 0.0}), 64)
    on = int((image.data > 0).sum())

    print(f"On pixels: {on}, analytic: {expected_area(4, 15.0)}")

    assert expected_area(4, 15.0) == pytest.approx(450.0)
    assert abs(on - 450) <= 0.05 * 450


def test_polygon_render_is_binary(polygon):
    """Test polygon renders are single-channel {-1, +1} rasters"""
    image = render_polygon(polygon.encode({"vertices": 6, "radius": 25.0, "rotation": 5.0}), 32)
    assert image.data.shape == (1, 32, 32)
    assert set(np.unique(image.data).tolist()) <= {-1.0, 1.0}
    assert image.domain_tag == DomainTag.ENGINE_RENDER


def test_polygon_rotation_equivariance(polygon):
    """Test rotating the parameters matches rotating the image"""
    rotated = render_polygon(polygon.encode({"vertices": 3, "radius": 30.0, "rotation": 10.0}), 64).data
    upright = render_polygon(polygon.encode({"vertices": 3, "radius": 30.0, "rotation": 0.0}), 64).data
    warped = np.where(affine_warp(upright, 10.0, fill=-1.0) > 0, 1.0, -1.0)
    differing = float((warped != rotated).mean())

    print(f"Differing pixels: {differing:.4f}")

    assert differing <= 0.02


def test_image_tensor_contract():
    """Test image tensors reject bad shapes and ranges"""
    with pytest.raises(ContractError):
        ImageTensor(np.zeros((2, 8, 8)))
    with pytest.raises(ContractError):
        ImageTensor(np.full((1, 8, 8), 2.0))


# Sprite engine

def test_avatar_render_range(sprite):
    """Test avatars are RGB images in [-1, 1]"""
    p = sample_params(sprite, DomainSampler(SamplerKind.PARAMS, 0, "avatar"), 1)[0]
    image = render_avatar(p, 32, sprite)
    assert image.data.shape == (3, 32, 32)
    assert image.data.min() >= -1.0 and image.data.max() <= 1.0


def test_avatar_needs_discrete_params(sprite):
    """Test continuous vectors are not rendered directly"""
    with pytest.raises(ContractError):
        render_avatar(ParamVector(np.zeros(sprite.total_dim)), 32, sprite)


def test_hair_colour_changes_only_hair(sprite):
    """Test two avatars differing in hair colour differ only inside the hair mask"""
    base = {s.name: 0 for s in sprite.slots}
    a = sprite.encode({**base, "hair_color": 0})
    b = sprite.encode({**base, "hair_color": 2})
    diff = np.any(render_avatar(a, 32, sprite).data != render_avatar(b, 32, sprite).data, axis=0)
    hair = avatar_masks(a, 32, sprite)["hair"]

    print(f"Changed pixels: {int(diff.sum())}, hair pixels: {int(hair.sum())}")

    assert diff.any()
    assert not (diff & ~hair).any()


def test_slot_choices_are_separated(sprite):
    """Test changing any one slot moves the render by at least the separation threshold"""
    base = {s.name: 0 for s in sprite.slots}
    reference = render_avatar(sprite.encode(base), 32, sprite).data
    for slot in sprite.slots:
        for choice in range(1, slot.width):
            other = render_avatar(sprite.encode({**base, slot.name: choice}), 32, sprite).data
            mse = float(np.mean((other - reference) ** 2))
            assert mse >= SEPARATION_THRESHOLD, f"{slot.name}={slot.labels[choice]} only moves {mse:.5f}"


# Photo domain

def test_photo_is_deterministic(sprite):
    """Test the same identity and nuisance seed give the same photo"""
    sampler = DomainSampler(SamplerKind.PHOTOS, 0, "probe")
    identity = sample_identity(sprite, sampler, 4)
    seed = photo_seed(sampler, 4, 0)
    a = render_photo(identity, seed, 32, sprite)
    b = render_photo(identity, seed, 32, sprite)
    assert np.array_equal(a.data, b.data)
    assert a.domain_tag == DomainTag.PHOTO


def test_photo_noise_bound(sprite):
    """Test additive noise stays within 4 sigma for almost every pixel"""
    sampler = DomainSampler(SamplerKind.PHOTOS, 0, "noise")
    exceed, total = 0, 0
    for j in range(12):
        identity = sample_identity(sprite, sampler, j)
        nuisance = PhotoNuisance.sample(photo_seed(sampler, j, 0))
        noisy = render_photo(identity, 0, 32, sprite, nuisance=nuisance).data
        clean = render_photo(identity, 0, 32, sprite, nuisance=nuisance.without_noise()).data
        exceed += int((np.abs(noisy - clean) > 4 * nuisance.sigma + 1e-6).sum())
        total += noisy.size
    assert exceed <= 0.001 * total


def test_ground_truth_is_identity_config(sprite):
    """Test y(x) is the identity's base configuration for every shot"""
    identity = sample_identity(sprite, DomainSampler(SamplerKind.PHOTOS, 0, "gt"), 0)
    assert ground_truth_map(identity) == identity.base_params


# Oracle inverse

def test_oracle_recovers_polygon(polygon):
    """Test an exact render is its own nearest polygon"""
    p = polygon.encode({"vertices": 5, "radius": 20.0, "rotation": -3.0})
    image = render_polygon(p, 32)
    result = oracle_invert(image, polygon)

    print(f"Recovered: {polygon.decode(result.params)} residual={result.residual}")

    assert result.residual == pytest.approx(0.0, abs=1e-9)
    assert np.array_equal(render_polygon(result.params, 32).data, image.data)
    assert polygon.decode(result.params)["vertices"] == 5


def test_oracle_blank_polygon_residual(polygon):
    """Test a blank image is closest to the smallest polygon"""
    blank = ImageTensor(np.full((1, 16, 16), -1.0, dtype=np.float32))
    result = oracle_invert(blank, polygon)
    _, renders = polygon_bank(16)
    smallest = float((renders > 0).mean(axis=1).min())
    assert result.residual == pytest.approx(smallest, rel=1e-6)
    assert result.residual > 0


def test_oracle_sprite_idempotent_sample(sprite):
    """Test oracle_invert(render_avatar(p)) == p on a sample of configurations"""
    for p in sample_params(sprite, DomainSampler(SamplerKind.PARAMS, 0, "idempotency"), 25):
        result = oracle_invert(render_avatar(p, 32, sprite), sprite)
        assert result.params == p
        assert result.residual == 0.0


@pytest.mark.slow
def test_oracle_sprite_idempotent_sweep(sprite):
    """Test the idempotency condition on 1,000 sampled configurations"""
    failures = 0
    for p in sample_params(sprite, DomainSampler(SamplerKind.PARAMS, 0, "idempotency-sweep"), 1000):
        if oracle_invert(render_avatar(p, 32, sprite), sprite).params != p:
            failures += 1
    assert failures == 0
