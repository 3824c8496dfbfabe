"""Interfaces for the frozen networks the method consumes.

Images everywhere are float tensors shaped ``(batch, channels, H, W)`` with
values in [0, 1]. Style stacks are ``(batch, num_layers, style_dim)``.
"""

from __future__ import annotations

import hashlib

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ConfigurationError, InputError, StateError


def freeze(module: nn.Module) -> nn.Module:
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def weights_digest(module: nn.Module) -> str:
    """SHA-256 over every parameter and buffer, in state-dict order."""
    h = hashlib.sha256()
    for name, t in module.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def check_image(img, name="image"):
    if not torch.is_tensor(img) or img.dim() != 4:
        raise InputError(f"{name} must be a (batch, channels, H, W) tensor")
    if img.shape[1] not in (1, 3):
        raise InputError(f"{name} must have 1 or 3 channels, got {img.shape[1]}")
    if not torch.isfinite(img).all():
        raise InputError(f"{name} contains non-finite values")
    return img


class Generator(nn.Module):
    """Style-based generator: mapping ``z -> w`` and layered synthesis."""

    latent_dim: int
    style_dim: int
    num_layers: int
    resolution: int
    channels: int = 3

    def __init__(self):
        super().__init__()
        self._w_avg = None

    def mapping(self, z):
        raise NotImplementedError

    def synthesis(self, styles):
        raise NotImplementedError

    def broadcast(self, w):
        """Repeat a W latent across all synthesis layers (W -> W+)."""
        return w.unsqueeze(1).expand(-1, self.num_layers, -1)

    def generate(self, z):
        return self.synthesis(self.broadcast(self.mapping(z)))

    @property
    def w_avg(self):
        if self._w_avg is None:
            raise StateError("w_avg has not been computed; call compute_w_avg first")
        return self._w_avg

    @property
    def has_w_avg(self) -> bool:
        return self._w_avg is not None

    def set_w_avg(self, w_avg):
        self._w_avg = w_avg.detach().clone()

    @torch.no_grad()
    def compute_w_avg(self, n: int = 10_000, generator: torch.Generator | None = None,
                      batch_size: int = 1000):
        """Empirical mean of ``mapping`` over ``n`` standard-normal draws; cached."""
        if n < 1:
            raise ValueError("n must be at least 1")
        dtype = self.dtype
        total = torch.zeros(self.style_dim, dtype=torch.float64)
        done = 0
        while done < n:
            b = min(batch_size, n - done)
            z = torch.randn(b, self.latent_dim, generator=generator, dtype=dtype)
            total += self.mapping(z).double().sum(dim=0)
            done += b
        self._w_avg = (total / n).to(dtype)
        return self._w_avg

    @property
    def dtype(self):
        for t in list(self.parameters()) + list(self.buffers()):
            return t.dtype
        return torch.get_default_dtype()


class Embedder(nn.Module):
    """Joint image/text embedder returning unit-norm vectors.

    Subclasses implement ``_encode_pixels`` on preprocessed input and
    ``_encode_text``; this class owns the preprocessing contract: bilinear
    resize to ``resolution``, grayscale broadcast to RGB, then per-channel
    ``(x - mean) / std``.
    """

    embed_dim: int
    resolution: int
    mean: tuple = (0.5, 0.5, 0.5)
    std: tuple = (0.5, 0.5, 0.5)

    def preprocess(self, img):
        check_image(img)
        if img.shape[1] == 1:
            img = img.expand(-1, 3, -1, -1)
        if img.shape[-2:] != (self.resolution, self.resolution):
            img = F.interpolate(img, size=(self.resolution, self.resolution),
                                mode="bilinear", align_corners=False)
        mean = torch.tensor(self.mean, dtype=img.dtype).view(1, 3, 1, 1)
        std = torch.tensor(self.std, dtype=img.dtype).view(1, 3, 1, 1)
        return (img - mean) / std

    def encode_image(self, img):
        feats = self._encode_pixels(self.preprocess(img))
        return F.normalize(feats, dim=-1)

    def encode_text(self, text: str):
        if not isinstance(text, str) or not text.strip():
            raise ValueError("text must be a non-empty string")
        return F.normalize(self._encode_text(text), dim=-1)

    def _encode_pixels(self, x):
        raise NotImplementedError

    def _encode_text(self, text):
        raise NotImplementedError


class Sketcher(nn.Module):
    """Image-to-sketch network: image -> single-channel map in [0, 1]."""

    def sketchify(self, img):
        raise NotImplementedError


class FeatureExtractor(nn.Module):
    """Feature network for FID / precision-recall.

    ``fingerprint`` identifies the extractor so cached statistics computed
    with a different network are rejected.
    """

    feature_dim: int
    resolution: int
    fingerprint: str

    def prepare(self, img):
        check_image(img)
        if img.shape[1] == 1:
            img = img.expand(-1, 3, -1, -1)
        if img.shape[-2:] != (self.resolution, self.resolution):
            img = resize_clean(img, self.resolution)
        return img

    def extract(self, img):
        raise NotImplementedError


def resize_clean(img, size: int):
    """High-quality (antialiased bicubic) resize, clamped back to [0, 1]."""
    if img.shape[-2:] == (size, size):
        return img
    out = F.interpolate(img, size=(size, size), mode="bicubic", align_corners=False, antialias=True)
    return out.clamp(0.0, 1.0)


# --- conformance -----------------------------------------------------------

def check_generator(g: Generator, seed: int = 0) -> None:
    """Shape, determinism and layer-count checks every generator must pass."""
    if g.num_layers < 6:
        raise ConfigurationError(f"generator needs at least 6 synthesis layers, has {g.num_layers}")
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(2, g.latent_dim, generator=gen, dtype=g.dtype)
    w = g.mapping(z)
    if tuple(w.shape) != (2, g.style_dim):
        raise ConfigurationError(f"mapping returned {tuple(w.shape)}, expected (2, {g.style_dim})")
    img = g.synthesis(g.broadcast(w))
    expected = (2, g.channels, g.resolution, g.resolution)
    if tuple(img.shape) != expected:
        raise ConfigurationError(f"synthesis returned {tuple(img.shape)}, expected {expected}")
    if not torch.equal(img, g.synthesis(g.broadcast(g.mapping(z)))):
        raise ConfigurationError("generator is not deterministic")


def check_embedder(e: Embedder, image_size: int = 32, seed: int = 0, tol: float = 1e-6) -> None:
    gen = torch.Generator().manual_seed(seed)
    img = torch.rand(2, 3, image_size, image_size, generator=gen, dtype=torch.float64)
    emb = e.encode_image(img.to(_dtype_of(e)))
    if tuple(emb.shape) != (2, e.embed_dim):
        raise ConfigurationError(f"image embedding shape {tuple(emb.shape)}, expected (2, {e.embed_dim})")
    norms = emb.double().norm(dim=-1)
    if (norms - 1).abs().max() > tol:
        raise ConfigurationError("image embeddings are not unit norm")
    t = e.encode_text("a photo")
    if abs(float(t.double().norm()) - 1) > tol:
        raise ConfigurationError("text embeddings are not unit norm")
    if not torch.equal(t, e.encode_text("a photo")):
        raise ConfigurationError("text embedder is not deterministic")


def check_sketcher(h: Sketcher, image_size: int = 32, seed: int = 0) -> None:
    gen = torch.Generator().manual_seed(seed)
    img = torch.rand(1, 3, image_size, image_size, generator=gen, dtype=torch.float64).to(_dtype_of(h))
    out = h.sketchify(img)
    if tuple(out.shape) != (1, 1, image_size, image_size):
        raise ConfigurationError(f"sketch shape {tuple(out.shape)}, expected (1, 1, {image_size}, {image_size})")
    if out.min() < 0 or out.max() > 1:
        raise ConfigurationError("sketch values outside [0, 1]")
    if not torch.equal(out, h.sketchify(img)):
        raise ConfigurationError("sketcher is not deterministic")


def _dtype_of(module):
    for t in list(module.parameters()) + list(module.buffers()):
        return t.dtype
    return torch.get_default_dtype()
