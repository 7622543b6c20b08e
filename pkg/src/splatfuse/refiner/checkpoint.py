"""Head parameter checkpoints.

Layout (little-endian)::

    "SLNW" | u32 version=1 | u32 C, h_dim, M, sh_degree, stages, heads
    | u32 n_tensors | u64 n_values | f32 values in state_dict order

Tensor shapes are implied by the config block.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import ConfigMismatch, MalformedFile
from .network import HeadConfig, HeadParams

MAGIC = b"SLNW"
VERSION = 1
_HEADER = struct.Struct("<4s7IIQ")


def _config_tuple(cfg: HeadConfig) -> tuple[int, ...]:
    return (cfg.latent_dim, cfg.h_dim, cfg.m_grow, cfg.sh_degree, cfg.stages, cfg.heads)


def save_checkpoint(params: HeadParams, path) -> None:
    state = params.state_dict()
    flat = [t.detach().cpu().numpy().astype("<f4").reshape(-1) for t in state.values()]
    values = np.concatenate(flat) if flat else np.zeros(0, "<f4")
    head = _HEADER.pack(MAGIC, VERSION, *_config_tuple(params.config), len(flat), values.size)
    Path(path).write_bytes(head + values.tobytes())


def read_checkpoint_config(path) -> HeadConfig:
    data = Path(path).read_bytes()[: _HEADER.size]
    return _parse_header(data)[0]


def _parse_header(data: bytes) -> tuple[HeadConfig, int, int]:
    if len(data) < _HEADER.size:
        raise MalformedFile("truncated checkpoint header")
    magic, version, c, h, m, deg, stages, heads, n_tensors, n_values = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MalformedFile(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise ConfigMismatch(f"checkpoint version {version}, expected {VERSION}")
    try:
        cfg = HeadConfig(latent_dim=c, h_dim=h, m_grow=m, sh_degree=deg, stages=stages, heads=heads)
    except ValueError as exc:
        raise MalformedFile(f"invalid checkpoint config: {exc}") from exc
    return cfg, n_tensors, n_values


def load_checkpoint(path, expect: HeadConfig | None = None, **overrides) -> HeadParams:
    """Load parameters; ``expect`` (if given) must agree on every shape field.

    ``overrides`` set non-shape options such as ``patch_size`` or ``curve``.
    """
    data = Path(path).read_bytes()
    cfg, n_tensors, n_values = _parse_header(data)
    if expect is not None and _config_tuple(expect) != _config_tuple(cfg):
        raise ConfigMismatch(f"checkpoint config {_config_tuple(cfg)} != expected {_config_tuple(expect)}")
    if overrides:
        cfg = cfg.with_(**overrides)
    params = HeadParams(cfg)
    state = params.state_dict()
    if n_tensors != len(state) or n_values != sum(t.numel() for t in state.values()):
        raise MalformedFile("checkpoint tensor table does not match its config")
    if len(data) != _HEADER.size + 4 * n_values:
        raise MalformedFile("checkpoint payload size mismatch")
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    off = 0
    new_state = {}
    for k, t in state.items():
        n = t.numel()
        new_state[k] = torch.from_numpy(values[off : off + n].astype(np.float32).reshape(t.shape))
        off += n
    params.load_state_dict(new_state)
    return params
