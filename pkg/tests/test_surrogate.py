import pytest
import numpy as np
import torch

from app.engine.sampling import DomainSampler, SamplerKind
from app.nets.layers import weights_hash
from app.services.data_service import data_service
from app.services.persistence_service import persistence_service
from app.services.surrogate_service import HOLDOUT_RATIO_LIMIT, EngineLookup, surrogate_service
from app.services.training_utils import make_optimizer
from tests.conftest import rel_error


def _pairs(spec, n, resolution, stream="pairs"):
    return data_service.engine_pairs(spec, DomainSampler(SamplerKind.PARAMS, 0, stream), n, resolution)


def test_build_e_matches_spec(polygon, micro_train):
    """Test e takes a parameter vector and emits single-channel polygon images"""
    e = surrogate_service.build_e(polygon, micro_train)
    out = e(torch.zeros(2, polygon.total_dim))
    assert out.shape == (2, 1, 8, 8)


def test_train_e_reports_every_step(polygon, micro_train):
    """Test training logs one finite loss per step"""
    params, images = _pairs(polygon, 16, 8)
    e = surrogate_service.build_e(polygon, micro_train)
    e, report = surrogate_service.train_e(e, (params, images), micro_train)

    print(f"Losses: {report.series['mse']}")

    assert report.steps == [0, 1, 2]
    assert all(np.isfinite(report.series["mse"]))


def test_zero_iters_leaves_weights(polygon, micro_train):
    """Test iters=0 is a no-op"""
    params, images = _pairs(polygon, 8, 8)
    e = surrogate_service.build_e(polygon, micro_train)
    before = weights_hash(e)
    _, report = surrogate_service.train_e(e, (params, images), micro_train.model_copy(update={"iters": 0}))
    assert weights_hash(e) == before
    assert report.steps == []


def test_fidelity_of_exact_engine(polygon):
    """Test the true engine as its own surrogate has zero error"""
    report = surrogate_service.eval_e_fidelity(EngineLookup(polygon, 8), polygon, 6, 8)
    assert report.mse_01 == 0.0
    assert report.mse_pm1 == 0.0
    assert report.worst_case == 0.0


def test_fidelity_conventions(polygon, micro_train):
    """Test the [-1, 1] error is four times the [0, 1] error"""
    e = surrogate_service.build_e(polygon, micro_train)
    report = surrogate_service.eval_e_fidelity(e, polygon, 6, 8)
    assert report.mse_pm1 == pytest.approx(4.0 * report.mse_01)
    assert report.worst_case >= report.mse_01


def test_split_fidelity_of_exact_engine(polygon):
    """Test the true engine has zero error on both stored splits"""
    base = surrogate_service.eval_e_fidelity(EngineLookup(polygon, 8), polygon, 2, 8)
    report = surrogate_service.split_fidelity(
        base, EngineLookup(polygon, 8), _pairs(polygon, 5, 8, "pairs_train"), _pairs(polygon, 5, 8, "pairs_holdout")
    )
    assert report.train_mse_01 == 0.0
    assert report.holdout_mse_01 == 0.0
    assert report.holdout_ratio == 1.0
    assert report.mse_01 == base.mse_01


def test_split_fidelity_flags_memorized_pairs(polygon):
    """Test a surrogate exact on training pairs only gives a ratio above the limit"""
    train, holdout = _pairs(polygon, 4, 8, "pairs_train"), _pairs(polygon, 4, 8, "pairs_holdout")
    lookup = EngineLookup(polygon, 8)

    class Memorized(torch.nn.Module):
        def forward(self, p):
            known = torch.from_numpy(train[0]).to(p.dtype)
            hit = (p[:, None, :] == known[None]).all(dim=-1).any(dim=1)
            return torch.where(hit[:, None, None, None], lookup(p), torch.zeros(len(p), 1, 8, 8))

    base = surrogate_service.eval_e_fidelity(lookup, polygon, 2, 8)
    report = surrogate_service.split_fidelity(base, Memorized(), train, holdout)

    print(f"Train {report.train_mse_01}, held-out {report.holdout_mse_01}")

    assert report.train_mse_01 == 0.0
    assert report.holdout_mse_01 > 0.0
    assert report.holdout_ratio > HOLDOUT_RATIO_LIMIT


def test_surrogate_input_gradient(polygon, micro_train, double_precision):
    """Test d mean(e(p)) / dp matches central finite differences"""
    e = surrogate_service.build_e(polygon, micro_train).eval()
    p = torch.tensor([[0.1, -0.3, 0.5], [-0.6, 0.2, 0.0]], requires_grad=True)
    e(p).mean().backward()
    h = 1e-3
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            plus, minus = p.detach().clone(), p.detach().clone()
            plus[i, j] += h
            minus[i, j] -= h
            with torch.no_grad():
                numeric = (e(plus).mean() - e(minus).mean()).item() / (2 * h)
            assert rel_error(p.grad[i, j].item(), numeric) <= 1e-3


def test_resume_replays_identically(polygon, micro_train, tmp_path):
    """Test a resumed run continues with the same losses as an uninterrupted one"""
    params, images = _pairs(polygon, 16, 8)
    cfg = micro_train.model_copy(update={"iters": 4})

    _, full = surrogate_service.train_e(surrogate_service.build_e(polygon, cfg), (params, images), cfg)

    first = surrogate_service.build_e(polygon, cfg)
    opt = make_optimizer(first, cfg)
    surrogate_service.train_e(first, (params, images), cfg.model_copy(update={"iters": 2}), optimizer=opt)
    persistence_service.save_checkpoint(tmp_path / "e", "e", first, step=2, optimizers={"e": opt})

    resumed, _ = persistence_service.load_checkpoint(tmp_path / "e")
    opt = make_optimizer(resumed, cfg)
    persistence_service.restore_optimizers(tmp_path / "e", {"e": opt})
    _, tail = surrogate_service.train_e(resumed, (params, images), cfg, start_step=2, optimizer=opt)

    print(f"Full: {full.series['mse'][2:]}, resumed: {tail.series['mse']}")

    assert tail.steps == [2, 3]
    assert tail.series["mse"] == pytest.approx(full.series["mse"][2:], rel=1e-6)
