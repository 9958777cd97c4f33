import pytest
import numpy as np
import torch

from app.exceptions import ContractError, DivergenceError, FrozenNetError
from app.nets.layers import weights_hash
from app.nets.models import IdentityFeature
from app.services.evaluation_service import evaluation_service
from app.services.feature_service import feature_service
from app.services.surrogate_service import surrogate_service
from app.services.tos_service import TosTrainer, tos_service
from app.services.training_utils import NoisePool, TensorPool, frozen, to_tensor
from app.tos.losses import pixel_distance
from tests.conftest import random_images, rel_error


def _polygon_setup(spec, cfg, t_data=None):
    e = surrogate_service.build_e(spec, cfg)
    f = IdentityFeature(cfg.noise_dim)
    g, c, d = tos_service.build_tos_nets(spec, cfg, cfg.noise_dim, 1)
    t = t_data if t_data is not None else to_tensor(np.sign(random_images(8, channels=1)) + 0.0)
    return e, f, (g, c, d), NoisePool("s", cfg.noise_dim, cfg.seed), TensorPool("t", t, cfg.seed)


def _sprite_setup(spec, cfg):
    fm = feature_service.build_feature_map(cfg, 3)
    e = surrogate_service.build_e(spec, cfg)
    g, c, d = tos_service.build_tos_nets(spec, cfg, cfg.embed_dim, 3)
    return e, fm, (g, c, d)


def test_build_nets_are_seeded(polygon, micro_train):
    """Test the same seed builds the same g, c and d"""
    first = tos_service.build_tos_nets(polygon, micro_train, 8, 1)
    second = tos_service.build_tos_nets(polygon, micro_train, 8, 1)
    for a, b in zip(first, second):
        assert weights_hash(a) == weights_hash(b)


def test_zero_iters_is_noop(polygon, micro_train):
    """Test iters=0 leaves every network unchanged"""
    cfg = micro_train.model_copy(update={"iters": 0})
    e, f, nets, s_pool, t_pool = _polygon_setup(polygon, cfg)
    before = [weights_hash(n) for n in nets]
    result = tos_service.train_tos(cfg, e, f, s_pool, t_pool, nets)
    assert [weights_hash(n) for n in nets] == before
    assert result.report.steps == []


def test_training_keeps_frozen_maps(sprite, micro_train):
    """Test e and f are bit-identical after training g, c and d"""
    e, fm, nets = _sprite_setup(sprite, micro_train)
    s_pool = TensorPool("s", to_tensor(random_images(8)), 0)
    t_pool = TensorPool("t", to_tensor(random_images(8, seed=1)), 0)
    e_hash, f_hash, g_hash = weights_hash(e), weights_hash(fm), weights_hash(nets[0])

    result = tos_service.train_tos(micro_train, e, fm, s_pool, t_pool, nets)

    print(f"Terms: {sorted(result.report.series)}")

    assert weights_hash(e) == e_hash
    assert weights_hash(fm) == f_hash
    assert weights_hash(nets[0]) != g_hash
    assert set(result.report.series) == {"L_c", "L_GAN", "L_CONST", "L_TID", "L_TV", "composite", "d_loss"}
    for values in result.report.series.values():
        assert all(np.isfinite(values))


def test_polygon_reduction(polygon, micro_train):
    """Test with beta = gamma = delta = 0 the composite is L_c + alpha * GAN"""
    cfg = micro_train.model_copy(update={"alpha": 0.7, "beta": 0.0, "gamma": 0.0, "delta": 0.0})
    e, f, (g, c, d), s_pool, t_pool = _polygon_setup(polygon, cfg)
    trainer = TosTrainer(cfg, g, d, f, e=e, c=c)
    fs, g_out = trainer.generate(s_pool.batch(0, 4))
    terms = trainer.generator_terms(fs, g_out, t_pool.batch(0, 4))
    assert set(terms) == {"L_c", "L_GAN"}
    expected = terms["L_c"] + 0.7 * terms["L_GAN"]
    assert trainer.composite(terms).item() == pytest.approx(expected.item(), rel=1e-6)


def test_sequential_mode(polygon, micro_train):
    """Test the per-term update mode trains and reports the same terms"""
    cfg = micro_train.model_copy(update={"update_mode": "sequential", "beta": 0.0, "gamma": 0.0, "delta": 0.0})
    e, f, nets, s_pool, t_pool = _polygon_setup(polygon, cfg)
    result = tos_service.train_tos(cfg, e, f, s_pool, t_pool, nets)
    assert set(result.report.series) == {"d_loss", "L_GAN", "L_c", "composite"}
    assert result.report.steps == [0, 1, 2]


def test_minimax_variant(polygon, micro_train):
    """Test the minimax generator objective trains to finite losses"""
    cfg = micro_train.model_copy(update={"gan_variant": "minimax", "beta": 0.0, "gamma": 0.0, "delta": 0.0})
    e, f, nets, s_pool, t_pool = _polygon_setup(polygon, cfg)
    result = tos_service.train_tos(cfg, e, f, s_pool, t_pool, nets)
    assert all(np.isfinite(result.report.series["L_GAN"]))


def test_compliance_needs_both_maps(polygon, micro_train):
    """Test e without c is a contract error"""
    e, f, (g, c, d), _, _ = _polygon_setup(polygon, micro_train)
    with pytest.raises(ContractError):
        TosTrainer(micro_train, g, d, f, e=e)


def test_divergence_aborts(polygon, micro_train):
    """Test a non-finite loss stops training with the failing step"""
    t = torch.full((8, 1, 8, 8), float("nan"))
    e, f, nets, s_pool, t_pool = _polygon_setup(polygon, micro_train, t_data=t)
    with pytest.raises(DivergenceError) as exc_info:
        tos_service.train_tos(micro_train, e, f, s_pool, t_pool, nets)

    print(f"Error: {exc_info.value.detail}")

    assert exc_info.value.step == 0
    assert exc_info.value.status_code == 3


def test_frozen_guard_detects_mutation(polygon, micro_train):
    """Test modifying a frozen network is reported"""
    e = surrogate_service.build_e(polygon, micro_train)
    with pytest.raises(FrozenNetError):
        with frozen(e=e):
            with torch.no_grad():
                next(e.parameters()).add_(1.0)


def test_composite_gradient(sprite, micro_train, double_precision):
    """Test the analytic g/c gradient of the composite matches central differences"""
    e, fm, (g, c, d) = _sprite_setup(sprite, micro_train)
    for net in (e, fm, g, c, d):
        net.eval()
    trainer = TosTrainer(micro_train, g, d, fm, e=e, c=c)
    s = torch.from_numpy(random_images(3, seed=2)).double()
    t = torch.from_numpy(random_images(3, seed=3)).double()

    trainer.objective(s, t).backward()
    params = [p for p in list(g.parameters()) + list(c.parameters())]
    rng = np.random.default_rng(0)
    h = 1e-6
    for _ in range(50):
        param = params[rng.integers(len(params))]
        index = tuple(int(rng.integers(n)) for n in param.shape)
        analytic = param.grad[index].item()
        with torch.no_grad():
            original = param[index].item()
            param[index] = original + h
            plus = trainer.objective(s, t).item()
            param[index] = original - h
            minus = trainer.objective(s, t).item()
            param[index] = original
        numeric = (plus - minus) / (2 * h)
        assert rel_error(analytic, numeric) <= 1e-3, f"{index}: {analytic} vs {numeric}"


def test_forward_maps_contract(polygon, micro_train):
    """Test tied outputs are in range, deterministic and consistent with the compliance loss"""
    e, f, (g, c, _), s_pool, _ = _polygon_setup(polygon, micro_train)
    z = s_pool.batch(0, 4)
    first = tos_service.forward_maps(z, f, g, c, e)
    second = tos_service.forward_maps(z, f, g, c, e)

    assert first.params.abs().max() <= 1.0
    assert first.tied.shape == first.g_out.shape
    assert torch.equal(first.tied, second.tied)
    compliance = evaluation_service.compliance_error(first.g_out, e, c)
    assert pixel_distance(first.g_out, first.tied).item() == pytest.approx(compliance, rel=1e-6)


def test_forward_maps_shape_mismatch(polygon, micro_train):
    """Test an RGB surrogate cannot be tied to a single-channel generator"""
    _, f, (g, c, _), s_pool, _ = _polygon_setup(polygon, micro_train)
    rgb_e = surrogate_service.build_e(polygon, micro_train, channels=3)
    with pytest.raises(ContractError):
        tos_service.forward_maps(s_pool.batch(0, 2), f, g, c, rgb_e)
