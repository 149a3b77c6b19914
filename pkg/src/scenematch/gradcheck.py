"""Reverse-mode gradients of the full loss versus central finite differences."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .alignment import hinge_arguments
from .graph import synth_dataset
from .model import ModelParams, batch_loss

TOLERANCE = 1e-5
KINK_GUARD = 1e-4


@dataclass
class GradcheckReport:
    seed: int
    attempts: int
    max_error: float
    group_errors: dict[str, float] = field(default_factory=dict)
    worst: str = ""
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def lines(self) -> list[str]:
        out = [f"seed\t{self.seed}", f"attempts\t{self.attempts}"]
        out += [f"{group}\t{err:.3e}" for group, err in sorted(self.group_errors.items())]
        out.append(f"max_rel_error\t{self.max_error:.3e}\t(worst: {self.worst})")
        out.append(f"status\t{'PASS' if self.passed else 'FAIL'} (tolerance {self.tolerance:g})")
        return out


def relative_errors(g_ad: dict[str, np.ndarray], g_fd: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.abs(g_ad[k] - g_fd[k]) / np.maximum(1.0, np.abs(g_fd[k])) for k in g_fd}


def _group(name: str) -> str:
    head = name.split(".")
    return ".".join(head[:2]) if len(head) > 2 else name


def compare(g_ad, g_fd, seed: int, attempts: int, tolerance: float = TOLERANCE) -> GradcheckReport:
    errors = relative_errors(g_ad, g_fd)
    groups: dict[str, float] = defaultdict(float)
    worst, max_err = "", 0.0
    for name, err in errors.items():
        e = float(err.max()) if err.size else 0.0
        groups[_group(name)] = max(groups[_group(name)], e)
        if e >= max_err:
            worst, max_err = name, e
    return GradcheckReport(seed, attempts, max_err, dict(groups), worst, tolerance)


def gradcheck(seed: int = 0, n: int = 4, m: int = 5, d: int = 8, heads: int = 2, batch: int = 4,
              eps: float = 1e-5, loss: str = "full", inject_fault: bool = False,
              max_attempts: int = 10, tolerance: float = TOLERANCE) -> GradcheckReport:
    """Check the tape against finite differences on a random small instance.

    ``loss="linear"`` swaps in a fixed random linear functional of the
    parameters (finite differences are exact up to rounding there).
    ``inject_fault`` perturbs one reverse-mode entry as a negative control.
    Instances too close to a hinge or hard-negative tie are resampled with
    the next seed.
    """
    for attempt in range(max_attempts):
        s = seed + attempt
        records = synth_dataset(s, batch, n, m, d)
        params = ModelParams.init(d, heads=heads, rng=np.random.default_rng([s, 1]))
        named = params.named_parameters()

        if loss == "linear":
            coeffs = np.random.default_rng([s, 2])
            weights = {k: coeffs.standard_normal(t.shape) for k, t in named.items()}

            def objective():
                total = nx.Tensor(0.0)
                for k, t in named.items():
                    total = total + nx.sum(t * weights[k])
                return total
        elif loss == "full":
            def objective():
                return batch_loss(params, records)[0]
        else:
            raise ValueError(f"unknown loss {loss!r}")

        if loss == "full":
            _, S = batch_loss(params, records)
            S = S.value
            args = hinge_arguments(S) + params.align.margin
            top2_rows = np.sort(_off_diagonal(S), axis=1)[:, -2:]
            top2_cols = np.sort(_off_diagonal(S.T), axis=1)[:, -2:]
            gaps = np.concatenate([top2_rows[:, 1] - top2_rows[:, 0], top2_cols[:, 1] - top2_cols[:, 0]])
            if np.min(np.abs(args)) < KINK_GUARD or (batch > 2 and np.min(gaps) < KINK_GUARD):
                continue

        with nx.Tape() as tape:
            value = objective()
        g_ad = tape.backward(value, named)
        if inject_fault:
            name = next(iter(g_ad))
            g_ad[name] = g_ad[name].copy()
            g_ad[name].flat[0] += 1e-3
        g_fd = nx.finite_diff_grad(lambda: objective().value, named, eps)
        return compare(g_ad, g_fd, s, attempt + 1, tolerance)
    raise RuntimeError(f"no kink-free instance found in {max_attempts} attempts from seed {seed}")


def _off_diagonal(S: np.ndarray) -> np.ndarray:
    b = S.shape[0]
    return S[~np.eye(b, dtype=bool)].reshape(b, b - 1)
