"""Affine-coupling flow mapping base noise to generator latents.

The flow is a stack of affine coupling blocks with alternating binary masks.
Each block transforms the coordinates selected by its mask,

    y = x * (1 - m) + m * (x * exp(s(x_c)) + t(x_c)),   x_c = x * (1 - m)

so its log-determinant is ``sum(m * s)`` and the inverse is closed form.
Scale outputs are squashed with ``s_max * tanh(raw / s_max)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .blob import read_blob, write_blob
from .errors import ConfigurationError

CHECKPOINT_MAGIC = b"SKEBMFLW"
CHECKPOINT_VERSION = 1


def _mlp(dim: int, hidden: int) -> nn.Sequential:
    net = nn.Sequential(
        nn.Linear(dim, hidden),
        nn.SiLU(),
        nn.Linear(hidden, hidden),
        nn.SiLU(),
        nn.Linear(hidden, dim),
    )
    # zero output layer: the block starts as the identity
    nn.init.zeros_(net[-1].weight)
    nn.init.zeros_(net[-1].bias)
    return net


class AffineCoupling(nn.Module):
    def __init__(self, dim: int, hidden: int, parity: int, s_max: float = 2.0):
        super().__init__()
        self.dim = dim
        self.parity = int(parity) % 2
        self.s_max = float(s_max)
        mask = (torch.arange(dim) % 2 == self.parity).to(torch.get_default_dtype())
        self.register_buffer("mask", mask)
        self.scale_net = _mlp(dim, hidden)
        self.shift_net = _mlp(dim, hidden)

    def _scale_shift(self, x_cond):
        raw = self.scale_net(x_cond)
        s = self.s_max * torch.tanh(raw / self.s_max) * self.mask
        t = self.shift_net(x_cond) * self.mask
        return s, t

    def forward(self, x):
        m = self.mask
        s, t = self._scale_shift(x * (1 - m))
        y = x * (1 - m) + m * (x * torch.exp(s) + t)
        return y, s.sum(dim=-1)

    def inverse(self, y):
        m = self.mask
        s, t = self._scale_shift(y * (1 - m))
        return y * (1 - m) + m * ((y - t) * torch.exp(-s))


class CouplingFlow(nn.Module):
    """Invertible map ``z = f(eps)`` with exact log|det df/deps|.

    Inputs are ``(batch, dim)`` or a single ``(dim,)`` vector. With ``seed``
    set, hidden-layer initialisation is reproducible and leaves the global
    RNG untouched.
    """

    def __init__(self, dim: int = 512, n_blocks: int = 8, hidden: int = 256,
                 s_max: float = 2.0, parities=None, seed: int | None = None):
        super().__init__()
        if dim < 1 or n_blocks < 1 or hidden < 1:
            raise ConfigurationError(f"invalid flow shape dim={dim} n_blocks={n_blocks} hidden={hidden}")
        if parities is None:
            parities = [k % 2 for k in range(n_blocks)]
        if len(parities) != n_blocks:
            raise ConfigurationError("need one mask parity per block")
        self.dim = dim
        self.hidden = hidden
        self.s_max = float(s_max)
        with torch.random.fork_rng(devices=[], enabled=seed is not None):
            if seed is not None:
                torch.manual_seed(seed)
            self.blocks = nn.ModuleList(
                AffineCoupling(dim, hidden, p, s_max) for p in parities
            )

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def parities(self) -> list[int]:
        return [b.parity for b in self.blocks]

    def _check(self, x):
        if x.shape[-1] != self.dim:
            raise ConfigurationError(f"expected last dimension {self.dim}, got {tuple(x.shape)}")
        if x.dim() not in (1, 2):
            raise ConfigurationError(f"expected a vector or a batch of vectors, got {tuple(x.shape)}")

    def forward(self, eps):
        self._check(eps)
        single = eps.dim() == 1
        x = eps.unsqueeze(0) if single else eps
        log_det = x.new_zeros(x.shape[0])
        for block in self.blocks:
            x, ld = block(x)
            log_det = log_det + ld
        if single:
            return x[0], log_det[0]
        return x, log_det

    def inverse(self, z):
        self._check(z)
        single = z.dim() == 1
        x = z.unsqueeze(0) if single else z
        for block in reversed(self.blocks):
            x = block.inverse(x)
        return x[0] if single else x


def log_prob_base(eps):
    """Standard-normal log-density, summed over the last dimension."""
    d = eps.shape[-1]
    return -0.5 * (eps ** 2).sum(dim=-1) - 0.5 * d * math.log(2 * math.pi)


@dataclass
class FlowCheckpoint:
    flow: CouplingFlow
    step: int
    config: dict | None
    config_fingerprint: str | None
    extra: dict


def save_checkpoint(path, flow: CouplingFlow, step: int = 0, config: dict | None = None,
                    config_fingerprint: str | None = None, extra: dict | None = None) -> None:
    state = flow.state_dict()
    arrays = {name: t.detach().cpu().double().numpy() for name, t in state.items()}
    header = {
        "dim": flow.dim,
        "n_blocks": flow.n_blocks,
        "hidden": flow.hidden,
        "s_max": flow.s_max,
        "parities": flow.parities,
        "step": int(step),
        "config": config,
        "config_fingerprint": config_fingerprint,
        "extra": extra or {},
    }
    write_blob(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, header, arrays)


def load_checkpoint(path, dtype=torch.float64) -> FlowCheckpoint:
    _, header, arrays = read_blob(path, CHECKPOINT_MAGIC, {CHECKPOINT_VERSION})
    flow = CouplingFlow(header["dim"], header["n_blocks"], header["hidden"],
                        header["s_max"], header["parities"])
    state = {name: torch.from_numpy(np.asarray(a)) for name, a in arrays.items()}
    flow.load_state_dict(state)
    flow.to(dtype)
    return FlowCheckpoint(flow, header["step"], header.get("config"),
                          header.get("config_fingerprint"), header.get("extra", {}))
