"""FID and k-NN precision/recall.

Sampling for evaluation follows the one-shot protocol: untruncated content
latents from the flow, each mixed with its own freshly drawn style latent,
rendered and resized to 256x256 before feature extraction.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import torch

from .backends.base import resize_clean
from .blob import read_blob, write_blob
from .errors import FingerprintMismatchError, NumericError
from .stylemix import StyleMixSpec, mixed_synthesize, sample_style

STATS_MAGIC = b"SKEBMSTA"
STATS_VERSION = 1
EVAL_RESOLUTION = 256


@dataclass
class FeatureStats:
    mu: np.ndarray
    sigma: np.ndarray
    count: int
    fingerprint: str | None = None

    @classmethod
    def from_features(cls, feats, fingerprint=None) -> "FeatureStats":
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 2:
            raise ValueError("need a (n >= 2, m) feature matrix")
        return cls(feats.mean(axis=0), np.cov(feats, rowvar=False).reshape(feats.shape[1], feats.shape[1]),
                   feats.shape[0], fingerprint)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def save(self, path) -> None:
        write_blob(path, STATS_MAGIC, STATS_VERSION,
                   {"m": self.dim, "count": int(self.count), "fingerprint": self.fingerprint},
                   {"mu": self.mu, "sigma": self.sigma})

    @classmethod
    def load(cls, path, expected_fingerprint: str | None = None) -> "FeatureStats":
        _, header, arrays = read_blob(path, STATS_MAGIC, {STATS_VERSION})
        stats = cls(arrays["mu"], arrays["sigma"], header["count"], header.get("fingerprint"))
        if expected_fingerprint is not None and stats.fingerprint != expected_fingerprint:
            raise FingerprintMismatchError(
                f"{path}: statistics were computed with extractor {stats.fingerprint!r}, "
                f"configured extractor is {expected_fingerprint!r}"
            )
        return stats


class StatsAccumulator:
    """Running sums for mean/covariance; partial accumulators merge exactly."""

    def __init__(self, dim: int):
        self.n = 0
        self.s1 = np.zeros(dim)
        self.s2 = np.zeros((dim, dim))

    def update(self, feats):
        feats = np.asarray(feats, dtype=np.float64)
        self.n += feats.shape[0]
        self.s1 += feats.sum(axis=0)
        self.s2 += feats.T @ feats
        return self

    def merge(self, other: "StatsAccumulator"):
        self.n += other.n
        self.s1 += other.s1
        self.s2 += other.s2
        return self

    def finalize(self, fingerprint=None) -> FeatureStats:
        if self.n < 2:
            raise ValueError("need at least two samples")
        mu = self.s1 / self.n
        sigma = (self.s2 - self.n * np.outer(mu, mu)) / (self.n - 1)
        return FeatureStats(mu, 0.5 * (sigma + sigma.T), self.n, fingerprint)


def _check_psd(sigma, name, tol=1e-6):
    scale = max(1.0, float(np.abs(sigma).max()))
    asym = float(np.abs(sigma - sigma.T).max())
    if asym > tol * scale:
        raise NumericError(f"{name} is not symmetric (max asymmetry {asym:.3g})")
    eig = np.linalg.eigvalsh(0.5 * (sigma + sigma.T))
    if eig[0] < -tol * scale:
        cond = eig[-1] / max(abs(eig[0]), 1e-300)
        raise NumericError(f"{name} is not positive semidefinite: min eigenvalue {eig[0]:.3g}, "
                           f"max {eig[-1]:.3g}, |max/min| {cond:.3g}")


def frechet_distance(a: FeatureStats, b: FeatureStats, jitter: float = 1e-6) -> float:
    """``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})``."""
    if a.mu.shape != b.mu.shape or a.sigma.shape != b.sigma.shape:
        raise ValueError(f"dimension mismatch: {a.mu.shape} vs {b.mu.shape}")
    if a.count < 2 or b.count < 2:
        raise ValueError("statistics must come from at least two samples")
    _check_psd(a.sigma, "first covariance")
    _check_psd(b.sigma, "second covariance")
    diff = a.mu - b.mu
    # sqrtm's residual estimate divides by |A|, which is 0 for disjoint supports
    with np.errstate(invalid="ignore", divide="ignore"):
        covmean, _ = scipy.linalg.sqrtm(a.sigma @ b.sigma, disp=False)
        if not np.isfinite(covmean).all():
            offset = np.eye(a.sigma.shape[0]) * jitter
            covmean, _ = scipy.linalg.sqrtm((a.sigma + offset) @ (b.sigma + offset), disp=False)
    if np.iscomplexobj(covmean):
        if not np.allclose(np.diagonal(covmean).imag, 0, atol=1e-3):
            raise NumericError(f"matrix square root has imaginary component {np.abs(covmean.imag).max():.3g}")
        covmean = covmean.real
    value = diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2 * np.trace(covmean)
    return max(float(value), 0.0)


# --- precision / recall ---------------------------------------------------------

def _pairwise_distances(x, y, chunk=1024):
    out = np.empty((x.shape[0], y.shape[0]))
    for i in range(0, x.shape[0], chunk):
        d = x[i:i + chunk, None, :] - y[None, :, :]
        out[i:i + chunk] = np.sqrt((d * d).sum(-1))
    return out


def knn_radii(feats, k: int):
    """Distance from each point to its k-th nearest neighbour (excluding itself)."""
    d = _pairwise_distances(feats, feats)
    return np.sort(d, axis=1)[:, k]


def manifold_coverage(ref, query, k: int) -> float:
    """Fraction of ``query`` points inside some k-NN ball of ``ref``."""
    radii = knn_radii(ref, k)
    d = _pairwise_distances(query, ref)
    return float((d <= radii[None, :]).any(axis=1).mean())


def precision_recall(gen_feats, real_feats, k: int = 3) -> tuple[float, float]:
    gen = np.asarray(gen_feats, dtype=np.float64)
    real = np.asarray(real_feats, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if gen.shape[0] < k + 1 or real.shape[0] < k + 1:
        raise ValueError(f"both sets need at least k + 1 = {k + 1} points")
    return manifold_coverage(real, gen, k), manifold_coverage(gen, real, k)


# --- sampling + reports -----------------------------------------------------------

@dataclass
class EvalReport:
    fid: float | None
    precision: float | None
    recall: float | None
    n_samples: int
    config_fingerprint: str | None = None
    metadata: dict | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


@torch.no_grad()
def sample_eval_images(flow, g, n: int, rng=None, batch_size: int = 50, style_truncation: float = 1.0,
                       crossover_layer: int = 5, resolution: int = EVAL_RESOLUTION, quantize: bool = True):
    """Yield ``(images, metadata)`` batches for evaluation.

    Content latents are never truncated; every sample gets a fresh style
    latent. Images are resized to ``resolution`` and, like images read from
    disk, quantized to 8 bits.
    """
    spec = StyleMixSpec(crossover_layer, style_truncation, None)
    meta = {"content_truncation": None, "style_truncation": style_truncation,
            "crossover_layer": crossover_layer, "resolution": resolution, "quantized": quantize}
    done = 0
    while done < n:
        b = min(batch_size, n - done)
        eps = torch.randn(b, flow.dim, generator=rng, dtype=g.dtype)
        z, _ = flow(eps)
        style_w = sample_style(g, b, 1.0, rng)
        imgs = resize_clean(mixed_synthesize(g.mapping(z), style_w, spec, g), resolution)
        if quantize:
            imgs = torch.round(imgs * 255) / 255
        meta = dict(meta, styles_drawn=done + b)
        yield imgs, meta
        done += b


@torch.no_grad()
def generated_features(flow, g, extractor, n: int, rng=None, **kwargs):
    feats, meta = [], {}
    for imgs, meta in sample_eval_images(flow, g, n, rng, **kwargs):
        feats.append(extractor.extract(imgs).double().cpu().numpy())
    return np.concatenate(feats), meta


@torch.no_grad()
def image_features(images, extractor, batch_size: int = 50, resolution: int = EVAL_RESOLUTION):
    """Features of a real image set (tensor ``(n, C, H, W)`` in [0, 1])."""
    out = []
    for i in range(0, images.shape[0], batch_size):
        batch = resize_clean(images[i:i + batch_size], resolution)
        out.append(extractor.extract(batch).double().cpu().numpy())
    return np.concatenate(out)


def eval_fid(flow, g, extractor, eval_stats: FeatureStats, n: int = 2500, rng=None, **kwargs) -> float:
    if n < 2:
        raise ValueError("FID needs at least two samples")
    if eval_stats.fingerprint is not None and eval_stats.fingerprint != extractor.fingerprint:
        raise FingerprintMismatchError(
            f"reference statistics use extractor {eval_stats.fingerprint!r}, got {extractor.fingerprint!r}"
        )
    feats, _ = generated_features(flow, g, extractor, n, rng, **kwargs)
    return frechet_distance(FeatureStats.from_features(feats), eval_stats)


def load_image_folder(path, resolution: int = EVAL_RESOLUTION):
    """Load every PNG/JPEG under ``path`` as an ``(n, 3, R, R)`` float tensor."""
    from PIL import Image

    files = sorted(p for p in Path(path).iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if not files:
        raise FileNotFoundError(f"no images in {path}")
    imgs = []
    for f in files:
        im = Image.open(f).convert("RGB")
        if im.size != (resolution, resolution):
            im = im.resize((resolution, resolution), Image.BICUBIC)
        imgs.append(torch.from_numpy(np.asarray(im, dtype=np.float64) / 255.0).permute(2, 0, 1))
    return torch.stack(imgs)
