"""Shared test utilities: finite-difference gradients and tiny models."""

import numpy as np
import pytest

from aegm.model import AegmConfig, AegmModel, GroupedBatch


def finite_diff(loss_fn, array, h=1e-6):
    """Central finite differences of loss_fn() wrt array (perturbed in place)."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        lp = loss_fn()
        flat[i] = orig - h
        lm = loss_fn()
        flat[i] = orig
        gflat[i] = (lp - lm) / (2.0 * h)
    return grad


def assert_grad_close(analytic, numeric, rel_tol=1e-4, fd_noise=1e-8):
    """Relative error below rel_tol, with an absolute slack covering the
    central-difference roundoff floor (|loss| * eps / h ~ 1e-9 here);
    below that floor the numeric gradient carries no information."""
    np.testing.assert_allclose(np.asarray(analytic, dtype=np.float64),
                               np.asarray(numeric, dtype=np.float64),
                               rtol=rel_tol, atol=fd_noise)


def tiny_model(seed=0, input_dim=10, layers=(8, 6), bottleneck=4, sections=3,
               batch_norm=True, dtype=np.float64):
    cfg = AegmConfig(input_dim=input_dim, encoder_layers=layers,
                     bottleneck_dim=bottleneck, num_sections=sections,
                     use_batch_norm=batch_norm)
    return AegmModel(cfg, seed=seed, dtype=dtype)


def tiny_batch(model, rng, rows_per_section=3):
    m = model.cfg.num_sections
    n = rows_per_section * m
    rows = rng.normal(0.0, 0.7, size=(n, model.cfg.input_dim))
    sections = np.repeat(np.arange(m), rows_per_section)
    perm = rng.permutation(n)
    return GroupedBatch(rows=rows[perm].astype(model.dtype),
                        section_ids=sections[perm])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
