"""Single-file checkpoints: named parameter arrays plus a config fingerprint.

A checkpoint stores the network and loss state dicts (named tensors carrying
their shapes), the full config as plain data, and a fingerprint hashed from
the architecture-relevant config subset.  Loading into a model built from a
different architecture fails loudly instead of misassigning weights.
"""

from __future__ import annotations

import hashlib
import json

import torch

__all__ = ["CheckpointMismatchError", "config_fingerprint", "save_checkpoint", "load_checkpoint"]

FORMAT_VERSION = 1


class CheckpointMismatchError(RuntimeError):
    """Checkpoint and config describe different architectures."""


def config_fingerprint(config) -> str:
    """Hash of the fields that fix parameter shapes and the forward graph."""
    relevant = {
        "model": config.to_dict()["model"],
        "loss_alpha": list(config.loss.alpha),
    }
    blob = json.dumps(relevant, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(path, model, loss_module, config, step: int = 0):
    payload = {
        "format_version": FORMAT_VERSION,
        "fingerprint": config_fingerprint(config),
        "config": config.to_dict(),
        "step": int(step),
        "model_state": model.state_dict(),
        "loss_state": loss_module.state_dict(),
    }
    torch.save(payload, path)


def load_checkpoint(path, model, loss_module, config):
    """Restore states in place; the config must match the stored fingerprint."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointMismatchError(
            f"unsupported checkpoint format {payload.get('format_version')!r}"
        )
    expected = config_fingerprint(config)
    if payload["fingerprint"] != expected:
        raise CheckpointMismatchError(
            "checkpoint was written for a different architecture "
            f"({payload['fingerprint'][:12]} != {expected[:12]})"
        )
    model.load_state_dict(payload["model_state"])
    loss_module.load_state_dict(payload["loss_state"])
    return payload
