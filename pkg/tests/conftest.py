import numpy as np
import pytest
import torch

from crseg.config import ModelConfig
from crseg.decoder import Network

torch.set_num_threads(1)


def numeric_grad(f, x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (in place perturbation)."""
    g = torch.zeros_like(x)
    flat = x.data.view(-1)
    gflat = g.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        hi = float(f())
        flat[i] = orig - eps
        lo = float(f())
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def directional_fd(f, x: torch.Tensor, v: torch.Tensor, eps: float = 1e-5) -> float:
    orig = x.data.clone()
    x.data.copy_(orig + eps * v)
    hi = float(f())
    x.data.copy_(orig - eps * v)
    lo = float(f())
    x.data.copy_(orig)
    return (hi - lo) / (2 * eps)


def rel_err(a, b) -> float:
    a = torch.as_tensor(a, dtype=torch.float64)
    b = torch.as_tensor(b, dtype=torch.float64)
    scale = max(a.norm().item(), b.norm().item(), 1e-12)
    return (a - b).norm().item() / scale


def check_grads(f, tensors, tol=1e-4):
    """Autograd vs elementwise central differences for each tensor in ``tensors``."""
    for t in tensors:
        t.grad = None
    f().backward()
    worst = 0.0
    for t in tensors:
        analytic = t.grad.clone()
        with torch.no_grad():
            numeric = numeric_grad(f, t)
        worst = max(worst, rel_err(analytic, numeric))
    assert worst < tol, worst
    return worst


@pytest.fixture
def tiny_model_cfg():
    return ModelConfig(widths=(8, 8, 6, 4, 4), hidden_width=4, objects_per_sequence=3,
                       sequence_length=4, consistency_mode="STC")


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(1234))


def tiny_network(mode="STC", levels=5, hidden=4, m=3, n=4, seed=0, dtype=torch.float64):
    widths = (8, 8, 6, 4, 4)[-levels:]
    cfg = ModelConfig(widths=widths, levels=levels, hidden_width=hidden, objects_per_sequence=m,
                      sequence_length=n, consistency_mode=mode)
    return Network(cfg, seed=seed, dtype=dtype)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
