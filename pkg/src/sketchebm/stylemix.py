"""Content/style composition over the generator's synthesis layers.

Layer indices are 1-based to match the usual "layers 1-4 / 5-last" split:
layers ``1 .. crossover_layer - 1`` read the content latent, layers
``crossover_layer .. L`` read the style latent.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigurationError


@dataclass(frozen=True)
class StyleMixSpec:
    crossover_layer: int = 5
    style_truncation: float = 0.5
    content_truncation: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.style_truncation <= 1.0:
            raise ConfigurationError(f"style_truncation must be in [0, 1], got {self.style_truncation}")
        if self.content_truncation is not None and not 0.0 <= self.content_truncation <= 1.0:
            raise ConfigurationError(f"content_truncation must be in [0, 1] or None, got {self.content_truncation}")
        if self.crossover_layer < 1:
            raise ConfigurationError(f"crossover_layer must be >= 1, got {self.crossover_layer}")

    def validate_for(self, num_layers: int) -> None:
        # L + 1 is the degenerate "all layers content" split
        if not 1 <= self.crossover_layer <= num_layers + 1:
            raise ConfigurationError(
                f"crossover_layer {self.crossover_layer} out of range for a {num_layers}-layer generator"
            )

    def to_dict(self):
        return asdict(self)


def truncate(w, phi: float, w_avg):
    return w_avg + phi * (w - w_avg)


def _as_stack(w, num_layers):
    if w.dim() == 2:
        return w.unsqueeze(1).expand(-1, num_layers, -1)
    if w.dim() == 3 and w.shape[1] == num_layers:
        return w
    raise ConfigurationError(f"expected a W (batch, dim) or W+ (batch, {num_layers}, dim) latent, got {tuple(w.shape)}")


def compose_styles(content_w, style_w, crossover_layer: int, num_layers: int):
    """Per-layer style stack plus a list naming each layer's source."""
    content = _as_stack(content_w, num_layers)
    style = _as_stack(style_w, num_layers)
    k = crossover_layer - 1
    styles = torch.cat([content[:, :k], style[:, k:]], dim=1)
    sources = ["content"] * k + ["style"] * (num_layers - k)
    return styles, sources


def sample_style(g, n: int, phi: float, rng: torch.Generator | None = None):
    """Fresh W latents from the source prior, truncated toward ``w_avg``."""
    z = torch.randn(n, g.latent_dim, generator=rng, dtype=g.dtype)
    w = g.mapping(z)
    if phi != 1.0:
        w = truncate(w, phi, g.w_avg)
    return w


def mixed_synthesize(content_w, style_w, spec: StyleMixSpec, g):
    """Render with content on the coarse layers and a truncated style on the rest."""
    spec.validate_for(g.num_layers)
    if spec.content_truncation is not None:
        content_w = truncate(content_w, spec.content_truncation, g.w_avg)
    if spec.style_truncation != 1.0:
        style_w = truncate(style_w, spec.style_truncation, g.w_avg)
    styles, _ = compose_styles(content_w, style_w, spec.crossover_layer, g.num_layers)
    return g.synthesis(styles)


def render_pair(z, g, spec: StyleMixSpec, rng: torch.Generator | None = None, style_w=None):
    """Image ``x`` from content latent ``z`` and anchor ``x_o`` from ``w_avg``,
    both rendered with the same style latent.

    ``style_w`` is the untruncated W latent; one is drawn from the prior when
    omitted. Returns ``(x, x_o, style_w)``.
    """
    if style_w is None:
        style_w = sample_style(g, z.shape[0], 1.0, rng)
    content_w = g.mapping(z)
    x = mixed_synthesize(content_w, style_w, spec, g)
    anchor_w = g.w_avg.expand_as(content_w)
    x_o = mixed_synthesize(anchor_w, style_w, spec, g)
    return x, x_o, style_w


def paired_sample(flow, g, spec: StyleMixSpec, rng: torch.Generator | None = None, eps=None, n: int = 1):
    """Draw ``eps``, push it through the flow and render a shared-style pair."""
    if eps is None:
        eps = torch.randn(n, flow.dim, generator=rng, dtype=g.dtype)
    z, _ = flow(eps)
    return render_pair(z, g, spec, rng)


@torch.no_grad()
def sample_images(flow, g, spec: StyleMixSpec, n: int, rng: torch.Generator | None = None, batch_size: int = 64):
    """``n`` style-mixed samples: untruncated content from the flow, one fresh
    style latent per sample truncated by ``spec.style_truncation``."""
    out = []
    done = 0
    while done < n:
        b = min(batch_size, n - done)
        eps = torch.randn(b, flow.dim, generator=rng, dtype=g.dtype)
        z, _ = flow(eps)
        style_w = sample_style(g, b, 1.0, rng)
        out.append(mixed_synthesize(g.mapping(z), style_w, spec, g))
        done += b
    return torch.cat(out)


def image_grid(images, cols: int | None = None) -> np.ndarray:
    """Tile ``(n, C, H, W)`` images in [0, 1] into an ``(rows*H, cols*W, C)`` uint8 array."""
    n, c, h, w = images.shape
    cols = cols or min(n, 8)
    rows = -(-n // cols)
    grid = np.zeros((rows * h, cols * w, c), dtype=np.uint8)
    arr = (images.detach().cpu().double().clamp(0, 1).numpy() * 255 + 0.5).astype(np.uint8)
    for i in range(n):
        r, col = divmod(i, cols)
        grid[r * h:(r + 1) * h, col * w:(col + 1) * w] = arr[i].transpose(1, 2, 0)
    return grid


def write_grid(path, images, metadata: dict, cols: int | None = None) -> dict:
    """Write a PNG grid and a sibling ``.json`` with layout and sampling metadata."""
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = images.shape[0]
    cols = cols or min(n, 8)
    grid = image_grid(images, cols)
    Image.fromarray(grid[..., 0] if grid.shape[2] == 1 else grid).save(path)
    meta = dict(metadata)
    meta.update({"count": n, "rows": -(-n // cols), "cols": cols,
                 "tile_height": images.shape[2], "tile_width": images.shape[3]})
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return meta
