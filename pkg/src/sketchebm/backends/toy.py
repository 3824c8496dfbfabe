"""Small deterministic stand-ins for StyleGAN, CLIP, PhotoSketch and the
Inception/VGG feature networks.

They are cheap enough for exhaustive tests yet keep the structure the
method depends on: a coarse/fine layer split in the generator, unit-norm
embeddings, and a monotone edge detector.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np
import torch
import torch.nn.functional as F

from .base import Embedder, FeatureExtractor, Generator, Sketcher, freeze


def dct_basis(size: int, freqs) -> torch.Tensor:
    """Orthonormal 2-D DCT-II basis images, one row per ``(u, v)`` pair."""
    n = torch.arange(size, dtype=torch.float64)
    rows = []
    for u, v in freqs:
        cu = math.sqrt((1 if u == 0 else 2) / size) * torch.cos(math.pi * u * (n + 0.5) / size)
        cv = math.sqrt((1 if v == 0 else 2) / size) * torch.cos(math.pi * v * (n + 0.5) / size)
        rows.append(torch.outer(cu, cv).reshape(-1))
    return torch.stack(rows)


class ToyGenerator(Generator):
    """Layered generator with an exact coarse/fine separation.

    Layers ``1..coarse_layers`` write a low-frequency map into channel 0; the
    remaining layers write a high-frequency map into channel 1; channel 2 is
    their average. ``coarse_statistic`` therefore depends only on the coarse
    styles and ``fine_statistic`` only on the fine styles, bit for bit.

    ``mapping`` is ``"identity"`` or ``"affine"`` (``w = A z + b``).
    """

    def __init__(self, latent_dim=16, style_dim=16, num_layers=8, resolution=32,
                 coarse_layers=4, mapping="affine", seed=0, dtype=torch.float64):
        super().__init__()
        if mapping not in ("identity", "affine"):
            raise ValueError(f"unknown toy mapping {mapping!r}")
        if mapping == "identity" and latent_dim != style_dim:
            raise ValueError("identity mapping needs latent_dim == style_dim")
        self.latent_dim = latent_dim
        self.style_dim = style_dim
        self.num_layers = num_layers
        self.resolution = resolution
        self.coarse_layers = coarse_layers
        self.mapping_kind = mapping

        rng = np.random.default_rng(seed)
        if mapping == "affine":
            a = np.eye(style_dim, latent_dim) + 0.3 * rng.standard_normal((style_dim, latent_dim)) / math.sqrt(latent_dim)
            self.register_buffer("map_weight", torch.from_numpy(a))
            self.register_buffer("map_bias", torch.from_numpy(0.5 * rng.standard_normal(style_dim)))

        low = [(u, v) for u in range(3) for v in range(3)]
        high = [(u, v) for u in (8, 10, 12, 14) for v in (8, 10, 12, 14)]
        self.register_buffer("basis_low", dct_basis(resolution, low))
        self.register_buffer("basis_high", dct_basis(resolution, high))
        n_low, n_high = len(low), len(high)
        weights = []
        for layer in range(num_layers):
            n = n_low if layer < coarse_layers else n_high
            weights.append(rng.standard_normal((n, style_dim)) / math.sqrt(style_dim))
        self.layer_weights = torch.nn.ParameterList(torch.nn.Parameter(torch.from_numpy(w)) for w in weights)
        self.register_buffer("layer_bias", torch.from_numpy(0.1 * rng.standard_normal((num_layers, max(n_low, n_high)))))
        self.gain = 0.5 * resolution
        self.to(dtype)
        freeze(self)

    def mapping(self, z):
        if z.shape[-1] != self.latent_dim:
            raise ValueError(f"expected latent dimension {self.latent_dim}, got {z.shape[-1]}")
        if self.mapping_kind == "identity":
            return z
        return z @ self.map_weight.T + self.map_bias

    def inverse_mapping(self, w):
        """Preimage of ``w`` under the mapping (affine/identity only)."""
        if self.mapping_kind == "identity":
            return w
        return torch.linalg.solve(self.map_weight, (w - self.map_bias).T).T

    def _coefficients(self, styles, layers, n):
        total = 0
        for layer in layers:
            pre = styles[:, layer] @ self.layer_weights[layer].T + self.layer_bias[layer, :n]
            total = total + torch.tanh(pre)
        return total

    def synthesis(self, styles):
        if styles.dim() != 3 or styles.shape[1] != self.num_layers or styles.shape[2] != self.style_dim:
            raise ValueError(f"styles must be (batch, {self.num_layers}, {self.style_dim}), got {tuple(styles.shape)}")
        res = self.resolution
        n_low, n_high = self.basis_low.shape[0], self.basis_high.shape[0]
        coarse = self._coefficients(styles, range(self.coarse_layers), n_low)
        fine = self._coefficients(styles, range(self.coarse_layers, self.num_layers), n_high)
        coarse_map = 0.5 * (1 + torch.tanh(self.gain * coarse @ self.basis_low / 4))
        fine_map = 0.5 * (1 + torch.tanh(self.gain * fine @ self.basis_high / 4))
        coarse_map = coarse_map.view(-1, 1, res, res)
        fine_map = fine_map.view(-1, 1, res, res)
        return torch.cat([coarse_map, fine_map, 0.5 * (coarse_map + fine_map)], dim=1)

    def coarse_statistic(self, img):
        """Low-frequency projection of channel 0 (coarse layers only)."""
        return img[:, 0].reshape(img.shape[0], -1) @ self.basis_low.T

    def fine_statistic(self, img):
        """High-frequency projection of channel 1 (fine layers only)."""
        return img[:, 1].reshape(img.shape[0], -1) @ self.basis_high.T


class ToyEmbedder(Embedder):
    """Fixed random linear projection of preprocessed pixels, L2-normalised.

    Text maps to a unit vector drawn from a generator seeded by the string's
    SHA-256 digest.
    """

    def __init__(self, embed_dim=32, resolution=16, seed=1, dtype=torch.float64):
        super().__init__()
        self.embed_dim = embed_dim
        self.resolution = resolution
        self.mean = (0.5, 0.5, 0.5)
        self.std = (0.25, 0.25, 0.25)
        rng = np.random.default_rng(seed)
        n_in = 3 * resolution * resolution
        self.register_buffer("proj", torch.from_numpy(rng.standard_normal((embed_dim, n_in)) / math.sqrt(n_in)))
        self.text_seed = seed
        self.to(dtype)
        freeze(self)

    def _encode_pixels(self, x):
        return x.reshape(x.shape[0], -1) @ self.proj.T

    def _encode_text(self, text):
        digest = hashlib.sha256(f"{self.text_seed}:{text}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return torch.from_numpy(rng.standard_normal(self.embed_dim)).to(self.proj.dtype)


class ToySketcher(Sketcher):
    """Sobel gradient magnitude of the grey image, scaled to [0, 1] per image."""

    noise_floor = 1e-8

    def __init__(self, dtype=torch.float64):
        super().__init__()
        kx = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
        self.register_buffer("kernel", torch.stack([kx, kx.T]).unsqueeze(1))
        self.to(dtype)
        freeze(self)

    def sketchify(self, img):
        grey = img.mean(dim=1, keepdim=True)
        padded = F.pad(grey, (1, 1, 1, 1), mode="replicate")
        g = F.conv2d(padded, self.kernel.to(img.dtype))
        mag = torch.sqrt((g ** 2).sum(dim=1, keepdim=True))
        peak = mag.amax(dim=(1, 2, 3), keepdim=True)
        # flat images leave only convolution round-off; treat them as edge-free
        flat = peak <= self.noise_floor
        return torch.where(flat, torch.zeros_like(mag), mag / torch.where(flat, torch.ones_like(peak), peak))


class ToyFeatureExtractor(FeatureExtractor):
    """Fixed linear projection of the resized image plus an optional offset."""

    def __init__(self, feature_dim=16, resolution=32, seed=2, shift=None, dtype=torch.float64):
        super().__init__()
        self.feature_dim = feature_dim
        self.resolution = resolution
        rng = np.random.default_rng(seed)
        n_in = 3 * resolution * resolution
        self.register_buffer("proj", torch.from_numpy(rng.standard_normal((feature_dim, n_in)) / math.sqrt(n_in)))
        shift = np.zeros(feature_dim) if shift is None else np.asarray(shift, dtype=np.float64)
        self.register_buffer("shift", torch.from_numpy(shift))
        tag = hashlib.sha256(shift.tobytes()).hexdigest()[:8]
        self.fingerprint = f"toy-linear-d{feature_dim}-r{resolution}-s{seed}-{tag}"
        self.to(dtype)
        freeze(self)

    def extract(self, img):
        x = self.prepare(img.to(self.proj.dtype))
        return x.reshape(x.shape[0], -1) @ self.proj.T + self.shift
