"""Versioned ``.npz`` checkpoints: named parameter arrays plus a JSON header.

The header records the model configuration, the category inventory, the
vocabulary (so a checkpoint is self-contained for prediction) and the
vocabulary digest, which is re-verified on load.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Vocabulary
from .errors import DataError
from .model import ACMIMLLN, ModelConfig

FORMAT = "acmimlln-checkpoint"
VERSION = 1


@dataclass
class Checkpoint:
    model: ACMIMLLN
    vocab: Vocabulary
    categories: list[str]
    extra: dict


def save_checkpoint(path, model: ACMIMLLN, vocab: Vocabulary, categories, extra: dict | None = None) -> None:
    header = {
        "format": FORMAT,
        "version": VERSION,
        "model_config": model.config.to_dict(),
        "categories": list(categories),
        "vocabulary": vocab.tokens,
        "vocabulary_sha256": vocab.digest(),
        "extra": extra or {},
    }
    arrays = {f"param/{name}": t.data for name, t in model.params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), **arrays)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as archive:
            header = json.loads(str(archive["header"]))
            state = {key[len("param/"):]: archive[key] for key in archive.files if key.startswith("param/")}
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"{path}: not a readable checkpoint: {exc}") from None
    if header.get("format") != FORMAT or header.get("version") != VERSION:
        raise DataError(f"{path}: unsupported checkpoint format {header.get('format')!r} "
                        f"version {header.get('version')!r}")
    vocab = Vocabulary(header["vocabulary"])
    if vocab.digest() != header["vocabulary_sha256"]:
        raise DataError(f"{path}: vocabulary digest mismatch")
    config = ModelConfig(**header["model_config"])
    model = ACMIMLLN(config, np.random.default_rng(0))
    model.params.load_state_dict(state)
    return Checkpoint(model, vocab, header["categories"], header.get("extra", {}))
