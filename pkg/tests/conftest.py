import numpy as np
import pytest
import torch

from sketchebm.backends import Backends, ToyEmbedder, ToyFeatureExtractor, ToyGenerator, ToySketcher
from sketchebm.energy import build_anchors
from sketchebm.flow import CouplingFlow

torch.set_default_dtype(torch.float64)


def randomize(flow: CouplingFlow, seed: int = 0, scale: float = 0.3) -> CouplingFlow:
    """Non-identity parameters, including the zero-initialised output layers."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in flow.parameters():
            p.copy_(scale * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    return flow


@torch.no_grad()
def numeric_jacobian(fn, x, h=1e-6):
    """Central-difference Jacobian of a vector map at a single point."""
    x = x.detach().clone()
    cols = []
    for i in range(x.numel()):
        e = torch.zeros_like(x)
        e[i] = h
        cols.append((fn(x + e) - fn(x - e)) / (2 * h))
    return torch.stack(cols, dim=1)


def finite_difference_grad(loss_fn, params, h=1e-6):
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``params``."""
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat, gflat = p.view(-1), g.view(-1)
            for i in range(flat.numel()):
                old = float(flat[i])
                flat[i] = old + h
                up = float(loss_fn())
                flat[i] = old - h
                down = float(loss_fn())
                flat[i] = old
                gflat[i] = (up - down) / (2 * h)
            grads.append(g)
    return grads


@pytest.fixture(scope="session")
def toy_backends():
    g = ToyGenerator()
    g.compute_w_avg(10_000, torch.Generator().manual_seed(0))
    return Backends(g, ToyEmbedder(), ToySketcher(), ToyFeatureExtractor(), ToyFeatureExtractor(seed=3))


@pytest.fixture(scope="session")
def anchors(toy_backends):
    b = toy_backends
    return build_anchors(b.generator, b.sketcher, b.embedder, "cat")


@pytest.fixture(scope="session")
def reference_sketch(toy_backends):
    """Sketch of a specific toy render, standing in for a user drawing."""
    g = toy_backends.generator
    z = torch.randn(1, g.latent_dim, generator=torch.Generator().manual_seed(123))
    with torch.no_grad():
        return toy_backends.sketcher.sketchify(g.generate(z))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
