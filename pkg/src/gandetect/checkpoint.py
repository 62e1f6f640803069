"""Versioned checkpoint container.

A checkpoint is a self-describing dict holding the model kind, the build
config, a hash of that config, and a payload (parameter arrays, optimizer
state, progressive stage and fade coefficient). Loading verifies the format
version and rejects mismatched latent size or maximum resolution outright.
"""

import hashlib
import json

import torch

FORMAT_VERSION = 1


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def save_checkpoint(path, kind, config, payload):
    blob = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": dict(config),
        "config_hash": config_hash(config),
        "payload": payload,
    }
    torch.save(blob, path)
    return blob


def load_checkpoint(path, expected_kind=None, expected_latent_dim=None,
                    expected_max_resolution=None):
    blob = torch.load(path, map_location="cpu", weights_only=False)
    version = blob.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version}")
    if expected_kind is not None and blob["kind"] != expected_kind:
        raise ValueError(f"checkpoint kind {blob['kind']!r} != expected {expected_kind!r}")
    cfg = blob["config"]
    if expected_latent_dim is not None and cfg.get("latent_dim") != expected_latent_dim:
        raise ValueError(
            f"checkpoint latent_dim {cfg.get('latent_dim')} != expected {expected_latent_dim}"
        )
    if expected_max_resolution is not None and cfg.get("max_resolution") != expected_max_resolution:
        raise ValueError(
            f"checkpoint max_resolution {cfg.get('max_resolution')} "
            f"!= expected {expected_max_resolution}"
        )
    return blob
