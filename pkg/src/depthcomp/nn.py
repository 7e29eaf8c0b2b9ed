"""Parameter containers and initialisation shared by both networks."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor


class ParamSet:
    """Ordered mapping of parameter name to leaf tensor."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True)
        self._tensors[name] = t
        return t

    def count(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._tensors.items()}

    def to_bytes(self) -> bytes:
        return b"".join(t.data.astype("<f8").tobytes() for t in self._tensors.values())


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    s = np.sqrt(6.0 / fan_in)
    return rng.uniform(-s, s, size=shape)


def add_linear(ps: ParamSet, rng, name: str, n_in: int, n_out: int) -> None:
    ps.add(f"{name}.weight", uniform_init(rng, (n_in, n_out), n_in))
    ps.add(f"{name}.bias", np.zeros(n_out))


def add_conv(ps: ParamSet, rng, name: str, c_in: int, c_out: int, k: int = 3) -> None:
    ps.add(f"{name}.weight", uniform_init(rng, (c_out, c_in, k, k), c_in * k * k))
    ps.add(f"{name}.bias", np.zeros(c_out))
