"""Small trainable building blocks shared by the fusion stages."""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np

from . import numerics as nx
from .numerics import Tensor


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class MLP:
    """``elu(x @ W1 + b1) @ W2 + b2`` on the last axis."""

    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_hidden: int, d_out: int) -> "MLP":
        return cls(
            Tensor(uniform_init(rng, d_in, (d_in, d_hidden)), True),
            Tensor(uniform_init(rng, d_in, (d_hidden,)), True),
            Tensor(uniform_init(rng, d_hidden, (d_hidden, d_out)), True),
            Tensor(uniform_init(rng, d_hidden, (d_out,)), True),
        )

    @classmethod
    def from_arrays(cls, W1, b1, W2, b2) -> "MLP":
        return cls(*(Tensor(np.array(a, dtype=np.float64), True) for a in (W1, b1, W2, b2)))

    @classmethod
    def identity(cls, d: int, offset: float = 10.0) -> "MLP":
        """Exact identity for inputs with entries above ``-offset``.

        Shifting by ``offset`` keeps the hidden pre-activation positive, where
        ELU is the identity, and the output bias shifts it back.
        """
        eye = np.eye(d)
        return cls.from_arrays(eye, np.full(d, offset), eye, np.full(d, -offset))

    @property
    def d_in(self) -> int:
        return self.W1.shape[0]

    @property
    def d_out(self) -> int:
        return self.W2.shape[1]

    def __call__(self, x) -> Tensor:
        x = nx.as_tensor(x)
        if x.shape[-1] != self.d_in:
            raise nx.DimensionError(f"MLP expects input width {self.d_in}, got shape {x.shape}")
        hidden = nx.elu(nx.matmul(x, self.W1) + self.b1)
        return nx.matmul(hidden, self.W2) + self.b2

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for f in fields(self):
            yield f"{prefix}.{f.name}", getattr(self, f.name)
