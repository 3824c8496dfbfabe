import math

import numpy as np
import pytest
import scipy.stats
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import finite_difference_grad, numeric_jacobian, randomize
from sketchebm.errors import ConfigurationError, FormatVersionError
from sketchebm.flow import CouplingFlow, load_checkpoint, log_prob_base, save_checkpoint


def _set_single_block_scale(flow, s):
    block = flow.blocks[0]
    raw = block.s_max * math.atanh(s / block.s_max)
    with torch.no_grad():
        block.scale_net[-1].bias.fill_(raw)


def test_identity_initialisation():
    flow = CouplingFlow(6, n_blocks=4, hidden=16)
    eps = torch.randn(10, 6)
    z, log_det = flow(eps)
    assert torch.equal(z, eps)
    assert torch.equal(log_det, torch.zeros(10))
    assert torch.equal(flow.inverse(eps), eps)


@torch.no_grad()
def test_single_vector_input():
    flow = randomize(CouplingFlow(3, 2, 8))
    eps = torch.randn(3)
    z, log_det = flow(eps)
    zb, ldb = flow(eps.unsqueeze(0))
    assert z.shape == (3,) and log_det.dim() == 0
    assert torch.equal(z, zb[0]) and torch.equal(log_det, ldb[0])


def test_single_block_scale_half():
    flow = CouplingFlow(2, n_blocks=1, hidden=4)
    _set_single_block_scale(flow, 0.5)
    eps = torch.tensor([0.7, -1.3])
    with torch.no_grad():
        z, log_det = flow(eps)
    jac = numeric_jacobian(lambda e: flow(e)[0], eps)
    assert float(log_det.detach()) == pytest.approx(0.5, abs=1e-12)
    assert float(torch.logdet(jac).abs()) == pytest.approx(0.5, abs=1e-8)
    # parity 0 transforms coordinate 0
    assert torch.allclose(z, torch.tensor([0.7 * math.exp(0.5), -1.3]))
    back = flow.inverse(torch.tensor([2.0, 5.0]))
    assert torch.allclose(back, torch.tensor([2.0 / math.exp(0.5), 5.0]))


def test_log_det_matches_numeric_jacobian_d4():
    flow = randomize(CouplingFlow(4, n_blocks=2, hidden=16), seed=1)
    eps = torch.randn(100, 4, generator=torch.Generator().manual_seed(2))
    with torch.no_grad():
        _, log_det = flow(eps)
    for i in range(100):
        jac = numeric_jacobian(lambda e: flow(e)[0], eps[i])
        sign, logabs = torch.linalg.slogdet(jac)
        assert abs(float(logabs) - float(log_det[i])) <= 1e-5


@torch.no_grad()
def test_round_trip_1000():
    flow = randomize(CouplingFlow(16, n_blocks=8, hidden=32), seed=3)
    eps = torch.randn(1000, 16, generator=torch.Generator().manual_seed(4))
    z, _ = flow(eps)
    assert float((flow.inverse(z) - eps).abs().max()) <= 1e-5


@settings(max_examples=100, deadline=None)
@given(dim=st.integers(1, 8), blocks=st.integers(1, 4), seed=st.integers(0, 2**31 - 1))
def test_log_det_exact_property(dim, blocks, seed):
    flow = randomize(CouplingFlow(dim, blocks, hidden=8), seed=seed, scale=0.5)
    eps = torch.randn(dim, generator=torch.Generator().manual_seed(seed + 1))
    with torch.no_grad():
        z, log_det = flow(eps)
    jac = numeric_jacobian(lambda e: flow(e)[0], eps)
    assert abs(float(torch.linalg.slogdet(jac)[1]) - float(log_det)) <= 1e-5
    with torch.no_grad():
        assert float((flow.inverse(z) - eps).abs().max()) <= 1e-5


def test_log_det_gradient_matches_finite_differences():
    flow = randomize(CouplingFlow(3, n_blocks=2, hidden=4), seed=5)
    eps = torch.randn(4, 3, generator=torch.Generator().manual_seed(6))
    params = list(flow.parameters())

    def loss():
        return flow(eps)[1].sum()

    flow.zero_grad()
    loss().backward()
    analytic = torch.cat([(p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1) for p in params])
    numeric = torch.cat([g.reshape(-1) for g in finite_difference_grad(loss, params)])
    err = (analytic - numeric).abs()
    assert float(err.max()) <= 1e-3 * max(float(analytic.abs().max()), 1e-12)
    assert float(err.norm() / analytic.norm()) <= 1e-3


def test_log_prob_base():
    assert float(log_prob_base(torch.zeros(2))) == pytest.approx(-math.log(2 * math.pi), abs=1e-15)
    assert float(log_prob_base(torch.tensor([1.0, 0.0]))) == pytest.approx(-0.5 - math.log(2 * math.pi), abs=1e-15)
    eps = np.random.default_rng(7).standard_normal(512)
    expected = scipy.stats.norm.logpdf(eps).sum()
    assert float(log_prob_base(torch.from_numpy(eps))) == pytest.approx(expected, rel=1e-9)


def test_dimension_mismatch():
    flow = CouplingFlow(4, 2, 8)
    with pytest.raises(ConfigurationError):
        flow(torch.zeros(3))
    with pytest.raises(ConfigurationError):
        flow.inverse(torch.zeros(2, 5))


@torch.no_grad()
def test_checkpoint_round_trip(tmp_path):
    flow = randomize(CouplingFlow(5, 3, 8, s_max=1.5), seed=8)
    path = tmp_path / "f.ckpt"
    save_checkpoint(path, flow, step=42, config={"a": 1}, config_fingerprint="abc")
    ckpt = load_checkpoint(path)
    assert (ckpt.step, ckpt.config, ckpt.config_fingerprint) == (42, {"a": 1}, "abc")
    assert ckpt.flow.parities == flow.parities and ckpt.flow.s_max == 1.5
    eps = torch.randn(7, 5)
    assert torch.equal(ckpt.flow(eps)[0], flow(eps)[0])
    raw = path.read_bytes()
    assert raw[:8] == b"SKEBMFLW"
    assert int.from_bytes(raw[8:12], "little") == 1


def test_checkpoint_version_mismatch(tmp_path):
    path = tmp_path / "f.ckpt"
    save_checkpoint(path, CouplingFlow(2, 1, 4))
    raw = bytearray(path.read_bytes())
    raw[8:12] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatVersionError):
        load_checkpoint(path)
    path.write_bytes(b"NOTAFLOW" + bytes(raw[8:]))
    with pytest.raises(FormatVersionError):
        load_checkpoint(path)


def test_seeded_initialisation():
    state = torch.random.get_rng_state()
    a, b = CouplingFlow(6, 2, 8, seed=3), CouplingFlow(6, 2, 8, seed=3)
    assert torch.equal(torch.random.get_rng_state(), state)
    for p, q in zip(a.parameters(), b.parameters()):
        assert torch.equal(p, q)
    c = CouplingFlow(6, 2, 8, seed=4)
    assert not torch.equal(a.blocks[0].scale_net[0].weight, c.blocks[0].scale_net[0].weight)
