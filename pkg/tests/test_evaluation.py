import pytest
import numpy as np
import torch
import torch.nn as nn

from app.engine.oracle import polygon_bank
from app.engine.sampling import DomainSampler, SamplerKind
from app.exceptions import ContractError
from app.nets.models import IdentityFeature
from app.services.data_service import data_service
from app.services.evaluation_service import CONTINUOUS_TOLERANCE, evaluation_service
from app.services.surrogate_service import EngineLookup
from app.services.tos_service import tos_service
from tests.conftest import random_images


class Lookup(nn.Module):
    """c-double that returns fixed configurations, in batch order"""

    def __init__(self, values: np.ndarray):
        super().__init__()
        self.values = torch.from_numpy(values)

    def forward(self, x):
        return self.values[: len(x)]


def _truth(spec, n=6, stream="truth"):
    params, images = data_service.engine_pairs(spec, DomainSampler(SamplerKind.PARAMS, 0, stream), n, 8)
    return params, images


def test_recovery_of_ground_truth(sprite):
    """Test predicting the ground truth recovers every slot"""
    truth, _ = _truth(sprite)
    report = evaluation_service.recovery_from_params(truth, truth, sprite)

    print(f"Per slot: {report.per_slot}")

    assert all(v == 1.0 for v in report.per_slot.values())
    assert report.exact_match == 1.0
    assert report.chance["face_shape"] == pytest.approx(1 / 4)
    assert report.n == len(truth)


def test_recovery_through_pipeline_double(sprite):
    """Test an oracle c(g(f(x))) = y(x) scores 1.0 on every slot"""
    truth, images = _truth(sprite)
    report = evaluation_service.param_recovery_accuracy(
        Lookup(truth), nn.Identity(), nn.Identity(), images, truth, sprite
    )
    assert report.exact_match == 1.0


def test_recovery_continuous_tolerance(polygon):
    """Test continuous slots count within the tolerance and integers must match"""
    truth, _ = _truth(polygon, n=4)
    predicted = truth.copy()
    predicted[:, 1] = np.clip(predicted[:, 1] + CONTINUOUS_TOLERANCE / 2, -1, 1)
    predicted[:, 2] = np.where(truth[:, 2] > 0, -1.0, 1.0)
    report = evaluation_service.recovery_from_params(predicted, truth, polygon)
    assert report.per_slot["vertices"] == 1.0
    assert report.per_slot["radius"] == 1.0
    assert report.per_slot["rotation"] == 0.0
    assert report.exact_match == 0.0
    assert report.chance["radius"] == CONTINUOUS_TOLERANCE
    assert report.chance["vertices"] == pytest.approx(1 / 4)


def test_recovery_count_mismatch(sprite):
    """Test predictions and ground truth must pair up"""
    truth, _ = _truth(sprite)
    with pytest.raises(ContractError):
        evaluation_service.recovery_from_params(truth[:2], truth, sprite)


def test_compliance_of_fixed_point():
    """Test images already on the tied manifold have zero compliance error"""
    images = random_images(5, channels=1)
    assert evaluation_service.compliance_error(images, nn.Identity(), nn.Identity()) == 0.0
    with pytest.raises(ContractError):
        evaluation_service.compliance_error(np.zeros((0, 1, 8, 8)), nn.Identity(), nn.Identity())


def test_manifold_distance_of_renders():
    """Test exact grid polygon renders sit on the engine manifold"""
    _, renders = polygon_bank(8)
    images = renders[::97][:6].reshape(-1, 1, 8, 8)
    assert evaluation_service.engine_manifold_distance(images) == pytest.approx(0.0, abs=1e-9)
    noisy = np.clip(images + random_images(len(images), channels=1) * 0.5, -1, 1)
    assert evaluation_service.engine_manifold_distance(noisy) > 0.0


def test_engine_probe_images_match_renders(polygon):
    """Test probe images are the true renders of the discretized configuration"""
    params, images = _truth(polygon)
    assert np.array_equal(evaluation_service.engine_probe_images(polygon, params, 8), images)


def test_bound_ledger(polygon, micro_train):
    """Test the ledger adds up its computable terms"""
    params, images = _truth(polygon)
    e = EngineLookup(polygon, 8)
    _, c, _ = tos_service.build_tos_nets(polygon, micro_train, micro_train.noise_dim, 1)
    g, f = nn.Identity(), nn.Identity()
    ledger = evaluation_service.bound_term_report(e, c, g, f, polygon, images, params, images, 0.25)

    print(f"Ledger: {ledger}")

    expected = ledger.compliance_risk + ledger.tid_risk + ledger.constancy_risk + 0.25
    assert ledger.rhs_computable == pytest.approx(expected)
    assert ledger.tid_risk == 0.0
    assert ledger.constancy_risk == 0.0
    assert ledger.slack == "not estimable"
    assert ledger.lhs_within_rhs == (ledger.lhs <= ledger.rhs_computable)


def test_generate_batches(micro_train, polygon):
    """Test G(x) = g(f(x)) over a batch larger than the evaluation chunk"""
    g, _, _ = tos_service.build_tos_nets(polygon, micro_train, micro_train.noise_dim, 1)
    z = torch.rand(300, micro_train.noise_dim) * 2 - 1
    out = evaluation_service.generate(g, IdentityFeature(micro_train.noise_dim), z)
    assert out.shape == (300, 1, 8, 8)
