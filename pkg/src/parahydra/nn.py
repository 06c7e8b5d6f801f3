"""Parameter containers, basic layers and the weight file format."""

from __future__ import annotations

import struct
from typing import Any, Iterator, Mapping, Optional

import numpy as np

from .tensor import Tensor, ShapeError, conv2d, deconv2d

WEIGHTS_MAGIC = b"PHWT"
WEIGHTS_VERSION = 1


class FormatError(ValueError):
    """Malformed or incompatible binary container."""


class Module:
    """Base class; parameters and submodules are discovered from attributes."""

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise FormatError(f"weight names mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for k, p in own.items():
            arr = np.asarray(state[k], dtype=p.data.dtype)
            if arr.shape != p.shape:
                raise ShapeError(f"weight {k}: file shape {arr.shape} != model shape {p.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        return self.forward(*args, **kwargs)

    def forward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError


def param(arr: np.ndarray) -> Tensor:
    return Tensor(arr, requires_grad=True)


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(
        self,
        rng: np.random.Generator,
        cin: int,
        cout: int,
        k: int,
        stride: int = 1,
        groups: int = 1,
        bias: bool = True,
        pad: Optional[int] = None,
    ) -> None:
        fan_in = (cin // groups) * k * k
        self.weight = param(uniform_init(rng, (cout, cin // groups, k, k), fan_in))
        self.bias = param(uniform_init(rng, (cout,), fan_in)) if bias else None
        self.stride, self.groups = stride, groups
        self.pad = k // 2 if pad is None else pad

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad, groups=self.groups)


class Deconv2d(Module):
    """Transposed conv; stride-2 instances exactly double the spatial size."""

    def __init__(self, rng: np.random.Generator, cin: int, cout: int, k: int, stride: int = 2) -> None:
        fan_in = cout * k * k
        self.weight = param(uniform_init(rng, (cin, cout, k, k), fan_in))
        self.bias = param(uniform_init(rng, (cout,), fan_in))
        self.stride = stride
        self.pad = k // 2
        self.output_padding = stride - 1

    def forward(self, x: Tensor) -> Tensor:
        return deconv2d(
            x, self.weight, self.bias, stride=self.stride, pad=self.pad, output_padding=self.output_padding
        )


# ---------------------------------------------------------------------------
# weight container
#
#   magic "PHWT" | version u8 | count u32
#   per record: name_len u16 | name utf-8 | ndim u8 | dims u32 * ndim | float64 LE values
# ---------------------------------------------------------------------------


def save_weights(path: str, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(serialize_weights(tensors))


def serialize_weights(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [WEIGHTS_MAGIC, struct.pack("<BI", WEIGHTS_VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def load_weights(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return deserialize_weights(f.read())


def deserialize_weights(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != WEIGHTS_MAGIC:
        raise FormatError("not a weight file (bad magic)")
    pos = 4
    try:
        version, count = struct.unpack_from("<BI", buf, pos)
        pos += 5
        if version != WEIGHTS_VERSION:
            raise FormatError(f"unsupported weight file version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            if pos + 8 * n > len(buf):
                raise FormatError(f"weight record {name!r} truncated at byte {pos}")
            out[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * n
    except struct.error as e:
        raise FormatError(f"truncated weight file at byte {pos}") from e
    return out
