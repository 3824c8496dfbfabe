"""CLIP-space energies between generated images and a reference sketch.

Three variants are provided:

* global:      ``1 - cos(F(x), F(c))``
* directional: ``1 - cos(F(c) - F(c_o), F(x) - F(x_o))``
* NCE:         ``1 - softmax([Q.K+ / r, Q.K- / r])[0]`` with
               ``Q = F(x) - F(x_o)``, ``K+ = F(c) - F(c_o)``, ``K- = T(t_o) - F(x_o)``

Each has an embedding-level form (``*_from_embeddings``) and an image-level
form that calls the embedder. Direction vectors are differences of unit
embeddings and are not renormalised.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch
import torch.nn.functional as F

from .errors import DegenerateDirectionError, StateError

DEGENERATE_NORM = 1e-8
VARIANTS = ("global", "dir", "nce")


@dataclass(frozen=True)
class AnchorSet:
    x_o: torch.Tensor
    c_o: torch.Tensor
    e_xo: torch.Tensor
    e_co: torch.Tensor
    e_to: torch.Tensor | None
    t_o: str | None

    def with_images(self, embedder, x_o=None, c_o=None) -> "AnchorSet":
        """Anchors re-embedded after ``x_o`` and/or ``c_o`` were replaced."""
        changes = {}
        if x_o is not None:
            changes.update(x_o=x_o, e_xo=embedder.encode_image(x_o).detach())
        if c_o is not None:
            changes.update(c_o=c_o, e_co=embedder.encode_image(c_o).detach())
        return replace(self, **changes)


@torch.no_grad()
def build_anchors(g, h, e, t_o: str | None = None) -> AnchorSet:
    """Image anchor ``G(w_avg)`` (all layers), its sketch ``H(x_o)``, and the
    category text embedding."""
    if not g.has_w_avg:
        raise StateError("build_anchors needs w_avg; call compute_w_avg on the generator first")
    x_o = g.synthesis(g.broadcast(g.w_avg.unsqueeze(0)))
    c_o = h.sketchify(x_o)
    e_to = e.encode_text(t_o) if t_o is not None else None
    return AnchorSet(x_o=x_o, c_o=c_o, e_xo=e.encode_image(x_o), e_co=e.encode_image(c_o),
                     e_to=e_to, t_o=t_o)


def _cos(a, b):
    return (a * b).sum(-1) / (a.norm(dim=-1) * b.norm(dim=-1))


def global_from_embeddings(e_x, e_c):
    return 1 - F.cosine_similarity(e_x, e_c, dim=-1, eps=0.0)


def _check_direction(v, name):
    if (v.detach().norm(dim=-1) < DEGENERATE_NORM).any():
        raise DegenerateDirectionError(f"{name} has norm below {DEGENERATE_NORM:g}")


def dir_from_embeddings(e_x, e_c, e_xo, e_co):
    delta_x = e_x - e_xo
    delta_c = e_c - e_co
    _check_direction(delta_x, "image direction")
    _check_direction(delta_c, "sketch direction")
    return 1 - _cos(delta_c, delta_x)


def nce_from_logit_pair(pos, neg, temperature: float):
    """``1 - e^{pos/r} / (e^{pos/r} + e^{neg/r})``.

    Rewritten as ``sigmoid((neg - pos) / r)``, which never overflows and is
    exactly 0.5 at equal logits.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return torch.sigmoid((torch.as_tensor(neg) - torch.as_tensor(pos)) / temperature)


def nce_from_embeddings(e_x, e_c, e_xo, e_co, e_to, temperature: float):
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    q = e_x - e_xo
    k_pos = e_c - e_co
    k_neg = e_to - e_xo
    return nce_from_logit_pair((q * k_pos).sum(-1), (q * k_neg).sum(-1), temperature)


def energy_global(x, c, e):
    return global_from_embeddings(e.encode_image(x), e.encode_image(c))


def energy_dir(x, c, anchors: AnchorSet, e):
    return dir_from_embeddings(e.encode_image(x), e.encode_image(c), anchors.e_xo, anchors.e_co)


def energy_nce(x, c, anchors: AnchorSet, e, r: float = 0.1):
    if not r > 0:
        raise ValueError(f"temperature must be positive, got {r}")
    if anchors.e_to is None:
        raise StateError("NCE energy needs a category text anchor (t_o)")
    return nce_from_embeddings(e.encode_image(x), e.encode_image(c), anchors.e_xo, anchors.e_co,
                               anchors.e_to, r)


def energy(variant: str, x, c, anchors: AnchorSet, e, r: float = 0.1):
    if variant == "global":
        return energy_global(x, c, e)
    if variant == "dir":
        return energy_dir(x, c, anchors, e)
    if variant == "nce":
        return energy_nce(x, c, anchors, e, r)
    raise ValueError(f"unknown energy variant {variant!r}; expected one of {VARIANTS}")


# --- augmentation ------------------------------------------------------------

def translate(img, dx: int, dy: int):
    """Shift content by ``dx`` columns and ``dy`` rows, filling with zeros."""
    h, w = img.shape[-2:]
    pad = max(abs(dx), abs(dy))
    if pad == 0:
        return img
    padded = F.pad(img, (pad, pad, pad, pad))
    top = pad - dy
    left = pad - dx
    return padded[..., top:top + h, left:left + w]


def sample_shift(width: int, height: int, max_shift: float, rng: torch.Generator | None = None):
    if not 0.0 <= max_shift <= 0.25:
        raise ValueError(f"max_shift must be in [0, 0.25], got {max_shift}")
    sx = int(max_shift * width + 0.5)
    sy = int(max_shift * height + 0.5)
    dx = int(torch.randint(-sx, sx + 1, (1,), generator=rng)) if sx else 0
    dy = int(torch.randint(-sy, sy + 1, (1,), generator=rng)) if sy else 0
    return dx, dy


def augment_translate(imgs, max_shift: float = 0.125, rng: torch.Generator | None = None):
    """Apply one random integer translation to every image in ``imgs``.

    All images must share spatial size.
    """
    sizes = {tuple(im.shape[-2:]) for im in imgs}
    if len(sizes) != 1:
        raise ValueError(f"images must share spatial size, got {sorted(sizes)}")
    h, w = sizes.pop()
    dx, dy = sample_shift(w, h, max_shift, rng)
    return [translate(im, dx, dy) for im in imgs]
