"""Policy, value, factor-encoder, and adaptation networks, plus the
versioned binary checkpoint format.

All networks are small CPU MLPs. The policy outputs a 12-dim action mean;
its Gaussian std is a state-independent learnable vector floored at 0.2 by
clamping, both in the forward pass and after optimizer steps.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np
import torch
import torch.nn as nn

from .randomize import FACTOR_DIM

OBS_DIM = 30
ACT_DIM = 12
EXTRINSICS_DIM = 8
HISTORY_STEPS = 20
STD_FLOOR = 0.2
STD_INIT = 0.5


def _mlp(dims: list[int], out_gain: float = 0.01) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i in range(len(dims) - 1):
        lin = nn.Linear(dims[i], dims[i + 1])
        nn.init.orthogonal_(lin.weight, gain=np.sqrt(2.0) if i < len(dims) - 2 else out_gain)
        nn.init.zeros_(lin.bias)
        layers.append(lin)
        if i < len(dims) - 2:
            layers.append(nn.Tanh())
    return nn.Sequential(*layers)


class PolicyNet(nn.Module):
    """3 x 128 trunk; input obs(30) + prev action(12) + extrinsics(8)
    [+ velocity code(3) for the conditioned variant]."""

    def __init__(self, extra_dims: int = 0):
        super().__init__()
        self.extra_dims = extra_dims
        self.in_dim = OBS_DIM + ACT_DIM + EXTRINSICS_DIM + extra_dims
        self.net = _mlp([self.in_dim, 128, 128, 128, ACT_DIM])
        self.std_param = nn.Parameter(torch.full((ACT_DIM,), STD_INIT))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)

    def std(self) -> torch.Tensor:
        return self.std_param.clamp(min=STD_FLOOR)

    def distribution(self, x: torch.Tensor) -> torch.distributions.Normal:
        return torch.distributions.Normal(self.net(x), self.std())

    @torch.no_grad()
    def project_std(self) -> None:
        """Post-update projection keeping the parameter itself at the floor."""
        self.std_param.clamp_(min=STD_FLOOR)


class ValueNet(nn.Module):
    """Critic with the same trunk shape and the same input as the policy."""

    def __init__(self, extra_dims: int = 0):
        super().__init__()
        self.in_dim = OBS_DIM + ACT_DIM + EXTRINSICS_DIM + extra_dims
        self.net = _mlp([self.in_dim, 128, 128, 128, 1], out_gain=1.0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x).squeeze(-1)


class EnvEncoder(nn.Module):
    """Environment factors e_t(19) -> extrinsics z(8)."""

    def __init__(self):
        super().__init__()
        self.net = _mlp([FACTOR_DIM, 64, 64, EXTRINSICS_DIM], out_gain=1.0)

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        return self.net(e)


class AdaptationModule(nn.Module):
    """History window (20 x (obs + action) = 840) -> estimated extrinsics."""

    IN_DIM = HISTORY_STEPS * (OBS_DIM + ACT_DIM)

    def __init__(self):
        super().__init__()
        self.net = _mlp([self.IN_DIM, 256, 128, EXTRINSICS_DIM], out_gain=1.0)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.net(h)


# -- checkpoint io -------------------------------------------------------------

MAGIC = b"GAITCKPT"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path: str, modules: dict[str, nn.Module], meta: dict) -> None:
    """Self-describing binary: magic, version, JSON header with tensor
    shapes, then raw little-endian float32 arrays in header order."""
    # module names are iterated sorted so the blob order matches the
    # sort_keys-serialized header exactly
    header: dict = {"meta": meta, "modules": {}}
    blobs: list[bytes] = []
    for name in sorted(modules):
        entries = []
        for key, tensor in modules[name].state_dict().items():
            arr = tensor.detach().cpu().numpy().astype("<f4")
            entries.append({"key": key, "shape": list(arr.shape)})
            blobs.append(arr.tobytes())
        header["modules"][name] = entries
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(payload)))
        f.write(payload)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path: str) -> tuple[dict[str, dict[str, np.ndarray]], dict]:
    """Returns ({module: {key: array}}, meta)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from e
    offset = 16 + hlen
    modules: dict[str, dict[str, np.ndarray]] = {}
    for name, entries in header["modules"].items():
        state = {}
        for entry in entries:
            n = int(np.prod(entry["shape"])) if entry["shape"] else 1
            count = n * 4
            if offset + count > len(data):
                raise CheckpointError(f"{path}: truncated tensor data")
            arr = np.frombuffer(data[offset:offset + count], dtype="<f4")
            state[entry["key"]] = arr.reshape(entry["shape"]).astype(np.float32)
            offset += count
        modules[name] = state
    return modules, header["meta"]


def load_into(module: nn.Module, state: dict[str, np.ndarray]) -> None:
    module.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in state.items()})
