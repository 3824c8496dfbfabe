"""Latent editing of controlled samples and real-image style injection.

Because the generator is never modified, directions found on the source
model (e.g. principal directions of W) apply unchanged to latents drawn
from the trained flow.

File formats
------------
Edit direction (``.json``)::

    {"space": "Z" | "W" | "W+", "label": str, "magnitude": float,
     "vector": [floats]}     # W+ vectors are flattened (num_layers * style_dim)

Edit direction or inverted latent (binary): the container in
:mod:`sketchebm.blob` with magic ``SKEBMDIR`` or ``SKEBMWPL``. Direction
headers carry ``space``, ``label``, ``magnitude``; the payload is one array
``vector``. W+ headers carry ``num_layers``, ``style_dim``, ``source``; the
payload is one array ``w_plus`` shaped ``(num_layers, style_dim)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .blob import read_blob, write_blob
from .errors import ConfigurationError, InputError
from .stylemix import StyleMixSpec, compose_styles, truncate

SPACES = ("Z", "W", "W+")
DIRECTION_MAGIC = b"SKEBMDIR"
WPLUS_MAGIC = b"SKEBMWPL"
FORMAT_VERSION = 1


@dataclass
class EditDirection:
    space: str
    vector: np.ndarray
    magnitude: float = 1.0
    label: str = ""

    def __post_init__(self):
        if self.space not in SPACES:
            raise ConfigurationError(f"edit space must be one of {SPACES}, got {self.space!r}")
        v = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        norm = np.linalg.norm(v)
        if not np.isfinite(norm) or norm == 0:
            raise InputError("edit direction must be a finite non-zero vector")
        self.vector = v / norm

    def expected_size(self, g) -> int:
        return {"Z": g.latent_dim, "W": g.style_dim, "W+": g.num_layers * g.style_dim}[self.space]

    def check_for(self, g) -> None:
        if self.vector.size != self.expected_size(g):
            raise ConfigurationError(
                f"{self.space} direction has {self.vector.size} entries, generator expects {self.expected_size(g)}"
            )

    def save(self, path) -> None:
        path = Path(path)
        if path.suffix == ".json":
            path.write_text(json.dumps({"space": self.space, "label": self.label,
                                        "magnitude": self.magnitude, "vector": self.vector.tolist()}))
        else:
            write_blob(path, DIRECTION_MAGIC, FORMAT_VERSION,
                       {"space": self.space, "label": self.label, "magnitude": self.magnitude},
                       {"vector": self.vector})

    @classmethod
    def load(cls, path) -> "EditDirection":
        path = Path(path)
        if path.suffix == ".json":
            d = json.loads(path.read_text())
            try:
                return cls(d["space"], d["vector"], d.get("magnitude", 1.0), d.get("label", ""))
            except KeyError as exc:
                raise InputError(f"{path}: missing key {exc}") from exc
        _, header, arrays = read_blob(path, DIRECTION_MAGIC, {FORMAT_VERSION})
        return cls(header["space"], arrays["vector"], header.get("magnitude", 1.0), header.get("label", ""))


@dataclass
class InvertedLatent:
    w_plus: torch.Tensor
    source: str = ""

    def save(self, path) -> None:
        w = self.w_plus.detach().cpu().double().numpy()
        write_blob(path, WPLUS_MAGIC, FORMAT_VERSION,
                   {"num_layers": w.shape[0], "style_dim": w.shape[1], "source": self.source},
                   {"w_plus": w})

    @classmethod
    def load(cls, path, dtype=torch.float64) -> "InvertedLatent":
        _, header, arrays = read_blob(path, WPLUS_MAGIC, {FORMAT_VERSION})
        w = arrays["w_plus"]
        if w.shape != (header["num_layers"], header["style_dim"]):
            raise InputError(f"{path}: payload shape {w.shape} disagrees with header")
        return cls(torch.from_numpy(w).to(dtype), header.get("source", ""))


def edited_styles(z, edit: EditDirection, g, spec: StyleMixSpec, style_w, magnitude: float | None = None):
    """Per-layer style stack for ``z`` after applying ``edit``.

    Z edits move ``z`` before the mapping; W edits move the content W
    latent; W+ edits are added to the final per-layer stack, so they can
    target individual layers.
    """
    edit.check_for(g)
    m = edit.magnitude if magnitude is None else magnitude
    v = torch.from_numpy(edit.vector).to(g.dtype)
    if edit.space == "Z":
        z = z + m * v
    content_w = g.mapping(z)
    if edit.space == "W":
        content_w = content_w + m * v
    if spec.content_truncation is not None:
        content_w = truncate(content_w, spec.content_truncation, g.w_avg)
    if spec.style_truncation != 1.0:
        style_w = truncate(style_w, spec.style_truncation, g.w_avg)
    spec.validate_for(g.num_layers)
    styles, _ = compose_styles(content_w, style_w, spec.crossover_layer, g.num_layers)
    if edit.space == "W+":
        styles = styles + m * v.view(g.num_layers, g.style_dim)
    return styles


@torch.no_grad()
def apply_latent_edit(z, edit: EditDirection, g, spec: StyleMixSpec, style_w, magnitude: float | None = None):
    """Render ``z`` (content) with ``style_w`` after moving along ``edit``."""
    return g.synthesis(edited_styles(z, edit, g, spec, style_w, magnitude))


def real_image_styles(content_w, inv: InvertedLatent, g, crossover_layer: int = 5):
    w_plus = inv.w_plus
    if w_plus.dim() == 2:
        w_plus = w_plus.unsqueeze(0)
    if w_plus.shape[1:] != (g.num_layers, g.style_dim):
        raise InputError(
            f"w+ latent has shape {tuple(w_plus.shape[1:])}, generator needs ({g.num_layers}, {g.style_dim})"
        )
    w_plus = w_plus.to(content_w.dtype).expand(content_w.shape[0], -1, -1)
    return compose_styles(content_w, w_plus, crossover_layer, g.num_layers)


@torch.no_grad()
def edit_real_image(inv: InvertedLatent, flow, g, rng=None, eps=None, crossover_layer: int = 5, n: int = 1):
    """Coarse layers from a flow sample, remaining layers from the inverted W+."""
    if eps is None:
        eps = torch.randn(n, flow.dim, generator=rng, dtype=g.dtype)
    z, _ = flow(eps)
    styles, _ = real_image_styles(g.mapping(z), inv, g, crossover_layer)
    return g.synthesis(styles)
