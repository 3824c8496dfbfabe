"""Training the latent flow against the sketch energy.

Per step, with a single noise draw ``eps ~ N(0, I)`` and ``z, log_det = f(eps)``:

    l_jac    = -log_det
    l_zprior = 0.5 * |z|^2            (the (d/2) log 2pi constant is dropped)
    l_energy = E(G(z), c)
    total    = l_jac + l_zprior + lambda * l_energy
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from .energy import (VARIANTS, augment_translate, dir_from_embeddings, global_from_embeddings,
                     nce_from_embeddings)
from .errors import ConfigurationError, DegenerateDirectionError, StateError, TrainingDivergedError
from .flow import save_checkpoint
from .stylemix import StyleMixSpec, render_pair

log = logging.getLogger(__name__)

LAMBDA_GRID = (1000.0, 2000.0, 5000.0)


@dataclass
class TrainConfig:
    lambda_energy: float = 2000.0
    nce_temperature: float = 0.1
    energy: str = "nce"
    augment: bool = False
    max_shift: float = 0.125
    epochs: int = 5
    steps_per_epoch: int = 2000
    batch_size: int = 1
    grad_accumulation: int = 1
    optimizer: str = "adam"
    lr: float = 5e-4
    betas: tuple = (0.9, 0.999)
    lr_schedule: str = "constant"
    seed: int = 0
    w_avg_samples: int = 10_000
    probe_samples: int = 0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.validate()

    def validate(self):
        if self.batch_size != 1 or self.grad_accumulation != 1:
            raise ConfigurationError("batch_size and grad_accumulation must both be 1")
        if self.energy not in VARIANTS:
            raise ConfigurationError(f"energy must be one of {VARIANTS}, got {self.energy!r}")
        if self.lambda_energy < 0:
            raise ConfigurationError("lambda_energy must be non-negative")
        if not self.nce_temperature > 0:
            raise ConfigurationError("nce_temperature must be positive")
        if not 0 <= self.max_shift <= 0.25:
            raise ConfigurationError("max_shift must be in [0, 0.25]")
        if self.epochs < 1 or self.steps_per_epoch < 1:
            raise ConfigurationError("epochs and steps_per_epoch must be positive")
        if self.optimizer != "adam":
            raise ConfigurationError(f"unsupported optimizer {self.optimizer!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigurationError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.lambda_energy not in LAMBDA_GRID:
            log.info("lambda_energy=%g is outside the usual grid %s", self.lambda_energy, LAMBDA_GRID)

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class LossBreakdown:
    l_jac: float
    l_zprior: float
    l_energy: float
    total: float
    energy_skipped: bool = False

    def record(self, step: int, epoch: int) -> dict:
        return {"step": step, "epoch": epoch, "l_jac": self.l_jac, "l_zprior": self.l_zprior,
                "l_energy": self.l_energy, "total": self.total, "energy_skipped": self.energy_skipped}


class SketchEnergy:
    """Energy of a content latent against the reference sketch.

    Each call renders ``x`` and the anchor ``x_o`` with one shared style
    latent, optionally translates ``{x, x_o, c, c_o}`` by one common shift,
    and evaluates the configured energy variant. Returns one value per row
    of ``z``.
    """

    def __init__(self, generator, embedder, anchors, sketch, variant="nce", temperature=0.1,
                 spec: StyleMixSpec | None = None, augment=False, max_shift=0.125):
        if variant not in VARIANTS:
            raise ConfigurationError(f"unknown energy variant {variant!r}")
        if variant == "nce" and anchors.e_to is None:
            raise ConfigurationError("the NCE energy needs a category text (t_o)")
        self.g = generator
        self.e = embedder
        self.anchors = anchors
        self.sketch = sketch
        self.variant = variant
        self.temperature = temperature
        self.spec = spec or StyleMixSpec()
        self.augment = augment
        self.max_shift = max_shift
        with torch.no_grad():
            self._e_c = embedder.encode_image(sketch)

    def __call__(self, z, rng=None):
        x, x_o, _ = render_pair(z, self.g, self.spec, rng)
        c, c_o = self.sketch, self.anchors.c_o
        if self.augment:
            x, x_o, c, c_o = augment_translate([x, x_o, c, c_o], self.max_shift, rng)
            with torch.no_grad():
                e_c = self.e.encode_image(c)
                e_co = self.e.encode_image(c_o)
        else:
            e_c, e_co = self._e_c, self.anchors.e_co
        with torch.no_grad():
            e_xo = self.e.encode_image(x_o)
        e_x = self.e.encode_image(x)
        if self.variant == "global":
            return global_from_embeddings(e_x, e_c)
        if self.variant == "dir":
            return dir_from_embeddings(e_x, e_c, e_xo, e_co)
        return nce_from_embeddings(e_x, e_c, e_xo, e_co, self.anchors.e_to, self.temperature)


def compute_losses(flow, objective, eps, lambda_energy: float, rng=None):
    """Loss terms for one noise batch. Returns ``(total, parts, skipped)``.

    ``parts`` holds the three per-term tensors (batch means). A degenerate
    energy direction drops the energy term for this batch.
    """
    z, log_det = flow(eps)
    l_jac = -log_det.mean()
    l_zprior = 0.5 * (z ** 2).sum(dim=-1).mean()
    skipped = False
    try:
        l_energy = objective(z, rng).mean()
    except DegenerateDirectionError:
        l_energy = z.new_zeros(())
        skipped = True
    total = l_jac + l_zprior + lambda_energy * l_energy
    return total, {"l_jac": l_jac, "l_zprior": l_zprior, "l_energy": l_energy}, skipped


def training_step(flow, optimizer, objective, cfg: TrainConfig, rng=None, step: int = 0) -> LossBreakdown:
    """One update on a single noise draw. Reported losses are pre-update."""
    dtype = next(flow.parameters()).dtype
    eps = torch.randn(cfg.batch_size, flow.dim, generator=rng, dtype=dtype)
    total, parts, skipped = compute_losses(flow, objective, eps, cfg.lambda_energy, rng)
    values = {k: float(v.detach()) for k, v in parts.items()}
    values["total"] = float(total.detach())
    if not all(math.isfinite(v) for v in values.values()):
        raise TrainingDivergedError("non-finite loss", step=step, seed=cfg.seed, components=values)
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    optimizer.step()
    return LossBreakdown(values["l_jac"], values["l_zprior"], values["l_energy"], values["total"], skipped)


def make_optimizer(flow, cfg: TrainConfig):
    return torch.optim.Adam(flow.parameters(), lr=cfg.lr, betas=cfg.betas)


def _lr_at(cfg: TrainConfig, step: int, total_steps: int) -> float:
    if cfg.lr_schedule == "cosine":
        return 0.5 * cfg.lr * (1 + math.cos(math.pi * step / total_steps))
    return cfg.lr


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    probes: list = field(default_factory=list)
    best: dict | None = None


def train(flow, objective, cfg: TrainConfig, run_dir=None, *, probe=None, frozen=None,
          config: dict | None = None, fingerprint: str | None = None) -> TrainResult:
    """Run ``cfg.epochs * cfg.steps_per_epoch`` single-sample updates.

    With ``run_dir`` set, writes ``metrics.jsonl`` (deterministic for a fixed
    seed), ``timing.jsonl`` (wall-clock), ``epoch-NN.ckpt`` after each epoch,
    and ``best.json`` naming the checkpoint with the lowest probe score.
    ``probe(flow, epoch) -> float`` is an optional lower-is-better metric
    (e.g. FID). ``frozen`` is a :class:`~sketchebm.backends.Backends` whose
    weight digests must not change.
    """
    rng = torch.Generator().manual_seed(cfg.seed)
    optimizer = make_optimizer(flow, cfg)
    result = TrainResult()
    digests = frozen.digests() if frozen is not None else None
    total_steps = cfg.epochs * cfg.steps_per_epoch

    metrics_fh = timing_fh = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(run_dir / "metrics.jsonl", "w")
        timing_fh = open(run_dir / "timing.jsonl", "w")
    start = time.perf_counter()
    step = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            for _ in range(cfg.steps_per_epoch):
                for group in optimizer.param_groups:
                    group["lr"] = _lr_at(cfg, step, total_steps)
                breakdown = training_step(flow, optimizer, objective, cfg, rng, step)
                result.history.append(breakdown)
                step += 1
                if metrics_fh is not None:
                    metrics_fh.write(json.dumps(breakdown.record(step, epoch)) + "\n")
                    timing_fh.write(json.dumps({"step": step, "wall_clock": time.perf_counter() - start}) + "\n")
            if run_dir is not None:
                metrics_fh.flush()
                ckpt = run_dir / f"epoch-{epoch:02d}.ckpt"
                save_checkpoint(ckpt, flow, step, config, fingerprint, extra={"epoch": epoch})
                result.checkpoints.append(ckpt)
            if probe is not None:
                score = float(probe(flow, epoch))
                entry = {"epoch": epoch, "step": step, "score": score,
                         "checkpoint": str(result.checkpoints[-1]) if run_dir is not None else None}
                result.probes.append(entry)
                if result.best is None or score < result.best["score"]:
                    result.best = entry
                log.info("epoch %d probe %.4f", epoch, score)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
            timing_fh.close()

    if run_dir is not None:
        best = result.best or {"epoch": cfg.epochs, "step": step, "score": None,
                               "checkpoint": str(result.checkpoints[-1])}
        (run_dir / "best.json").write_text(json.dumps({**best, "config_fingerprint": fingerprint},
                                                      indent=2, sort_keys=True))
    if digests is not None and frozen.digests() != digests:
        raise StateError("backend weights changed during training")
    return result
