"""Assembly of backends, anchors, flows and objectives from a RunConfig."""

from __future__ import annotations

import logging
import os
from pathlib import Path

import numpy as np
import torch

from . import backends as bk
from .config import RunConfig, fingerprint, from_dict
from .energy import build_anchors
from .errors import FingerprintMismatchError, InputError
from .flow import CouplingFlow, load_checkpoint
from .trainer import SketchEnergy

log = logging.getLogger(__name__)

CACHE_ENV = "SKETCHEBM_CACHE"


def cache_dir() -> Path:
    path = Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "sketchebm"))
    path.mkdir(parents=True, exist_ok=True)
    return path


def torch_dtype(name: str):
    return {"float32": torch.float32, "float64": torch.float64}[name]


def build_backends(cfg: RunConfig, check: bool = True) -> bk.Backends:
    dtype = torch_dtype(cfg.dtype)
    made = {role: bk.create(role, spec.kind, spec.path, spec.options, dtype)
            for role, spec in cfg.backends.items()}
    backends = bk.Backends(**made)
    if check:
        backends.check()
    return backends


def ensure_w_avg(g, n: int, seed: int = 0, use_cache: bool = True):
    """Compute (or load from the cache directory) the generator's mean W latent."""
    if g.has_w_avg:
        return g.w_avg
    path = cache_dir() / f"w_avg-{bk.weights_digest(g)[:16]}-n{n}-s{seed}.npy" if use_cache else None
    if path is not None and path.exists():
        g.set_w_avg(torch.from_numpy(np.load(path)).to(g.dtype))
        return g.w_avg
    w_avg = g.compute_w_avg(n, torch.Generator().manual_seed(seed))
    if path is not None:
        np.save(path, w_avg.double().cpu().numpy())
    return w_avg


def load_sketch(path, resolution: int, dtype=torch.float64):
    """Read a raster sketch as a ``(1, 1, R, R)`` tensor in [0, 1]."""
    from PIL import Image, UnidentifiedImageError

    try:
        im = Image.open(path).convert("L")
    except (OSError, UnidentifiedImageError) as exc:
        raise InputError(f"cannot read sketch {path}: {exc}") from exc
    if im.size != (resolution, resolution):
        im = im.resize((resolution, resolution), Image.BILINEAR)
    arr = np.asarray(im, dtype=np.float64) / 255.0
    return torch.from_numpy(arr).to(dtype).view(1, 1, resolution, resolution)


def save_image(path, img) -> None:
    """Write one ``(C, H, W)`` or ``(1, C, H, W)`` tensor in [0, 1] as PNG."""
    from PIL import Image

    if img.dim() == 4:
        img = img[0]
    arr = (img.detach().cpu().double().clamp(0, 1).numpy() * 255 + 0.5).astype(np.uint8)
    arr = arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def make_flow(cfg: RunConfig, dim: int) -> CouplingFlow:
    return CouplingFlow(dim, cfg.flow.blocks, cfg.flow.hidden, cfg.flow.s_max, seed=cfg.seed).to(torch_dtype(cfg.dtype))


def make_objective(cfg: RunConfig, backends: bk.Backends, anchors, sketch) -> SketchEnergy:
    t = cfg.train
    return SketchEnergy(backends.generator, backends.embedder, anchors, sketch, t.energy,
                        t.nce_temperature, cfg.stylemix, t.augment, t.max_shift)


def prepare(cfg: RunConfig, check: bool = True):
    """Backends with ``w_avg`` filled in, plus the anchor set."""
    backends = build_backends(cfg, check)
    ensure_w_avg(backends.generator, cfg.train.w_avg_samples, cfg.seed)
    anchors = build_anchors(backends.generator, backends.sketcher, backends.embedder, cfg.paths.category)
    return backends, anchors


def open_checkpoint(path):
    """Load a flow checkpoint and the run config embedded in it.

    The embedded fingerprint must match the embedded config.
    """
    ckpt = load_checkpoint(path)
    if ckpt.config is None:
        raise InputError(f"{path}: checkpoint carries no run configuration")
    if fingerprint(ckpt.config) != ckpt.config_fingerprint:
        raise FingerprintMismatchError(f"{path}: embedded config does not match its fingerprint")
    cfg = from_dict(ckpt.config)
    ckpt.flow.to(torch_dtype(cfg.dtype))
    return ckpt, cfg
