"""Backend handles and the factory registry used by configuration files.

A backend block in a config names a ``kind`` and optionally a weight
``path`` plus free-form ``options``. ``kind`` is either a registered name
(``"toy"``) or an import path ``"package.module:factory"``; factories are
called as ``factory(path=..., dtype=..., **options)``.
"""

from __future__ import annotations

import importlib
from dataclasses import dataclass

import torch

from ..errors import BackendError, ConfigurationError
from .base import (Embedder, FeatureExtractor, Generator, Sketcher, check_embedder,
                   check_generator, check_image, check_sketcher, freeze, resize_clean,
                   weights_digest)
from .toy import ToyEmbedder, ToyFeatureExtractor, ToyGenerator, ToySketcher, dct_basis

ROLES = ("generator", "embedder", "sketcher", "fid_extractor", "pr_extractor")

_REGISTRY = {
    "generator": {"toy": ToyGenerator},
    "embedder": {"toy": ToyEmbedder},
    "sketcher": {"toy": ToySketcher},
    "fid_extractor": {"toy": ToyFeatureExtractor},
    "pr_extractor": {"toy": lambda **kw: ToyFeatureExtractor(**{"seed": 3, **kw})},
}


def register(role: str, kind: str, factory) -> None:
    if role not in _REGISTRY:
        raise ConfigurationError(f"unknown backend role {role!r}")
    _REGISTRY[role][kind] = factory


def _resolve(role, kind):
    if kind in _REGISTRY[role]:
        return _REGISTRY[role][kind]
    if ":" in kind:
        module_name, _, attr = kind.partition(":")
        try:
            return getattr(importlib.import_module(module_name), attr)
        except (ImportError, AttributeError) as exc:
            raise BackendError(f"cannot import {role} factory {kind!r}: {exc}") from exc
    raise ConfigurationError(f"unknown {role} kind {kind!r}; known: {sorted(_REGISTRY[role])}")


def create(role: str, kind: str, path=None, options=None, dtype=torch.float64):
    factory = _resolve(role, kind)
    kwargs = dict(options or {})
    if path is not None:
        kwargs["path"] = path
    try:
        return factory(dtype=dtype, **kwargs)
    except (ConfigurationError, BackendError):
        raise
    except Exception as exc:  # weight loading, bad options, ...
        raise BackendError(f"failed to build {role} backend {kind!r}: {exc}") from exc


@dataclass
class Backends:
    generator: Generator
    embedder: Embedder
    sketcher: Sketcher
    fid_extractor: FeatureExtractor | None = None
    pr_extractor: FeatureExtractor | None = None

    def modules(self):
        return {role: getattr(self, role) for role in ROLES if getattr(self, role) is not None}

    def digests(self) -> dict:
        return {role: weights_digest(m) for role, m in self.modules().items()}

    def check(self) -> None:
        """Run the interface conformance suite on every handle."""
        check_generator(self.generator)
        check_embedder(self.embedder, image_size=self.generator.resolution)
        check_sketcher(self.sketcher, image_size=self.generator.resolution)


__all__ = [
    "Backends", "Embedder", "FeatureExtractor", "Generator", "ROLES", "Sketcher",
    "ToyEmbedder", "ToyFeatureExtractor", "ToyGenerator", "ToySketcher",
    "check_embedder", "check_generator", "check_image", "check_sketcher", "create",
    "dct_basis", "freeze", "register", "resize_clean", "weights_digest",
]
