"""Brownian path ensembles and Monte Carlo mixed norms.

The driving noise is a single scalar Brownian motion.  An ensemble stores M
sampled paths on a uniform time grid; expectation is the equal-weight path
average.  The L^p_F(0,T) norm of an adapted scalar process is the path mean
of the trapezoidal time integral of |X|^p, raised to 1/p (the raw E-integral
is also available).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .grid import TimeGrid

__all__ = [
    "BrownianEnsemble",
    "PathPrefix",
    "sample_brownian",
    "lpf_norm",
    "lpf_norm_values",
    "lpf_integral_values",
    "adaptedness_audit",
]


@dataclass(frozen=True)
class PathPrefix:
    """The Brownian path observed up to and including one time node.

    Adapted evaluators may read `times`/`values` (the history) or just
    `current`, the value W(t) at the node.
    """

    times: np.ndarray
    values: np.ndarray

    @property
    def current(self) -> float:
        return float(self.values[-1])

    @property
    def t(self) -> float:
        return float(self.times[-1])


@dataclass(frozen=True)
class BrownianEnsemble:
    """M Brownian paths W_m(t_j) on a TimeGrid, reproducible from the seed."""

    paths: np.ndarray  # (M, K+1)
    seed: int
    timegrid: TimeGrid

    def __post_init__(self):
        M, nodes = self.paths.shape
        if nodes != self.timegrid.K + 1:
            raise ValueError("path array does not match the time grid")
        if M < 1:
            raise ValueError("need at least one path")

    @property
    def M(self) -> int:
        return self.paths.shape[0]

    def prefix(self, path: int, j: int) -> PathPrefix:
        nodes = self.timegrid.nodes()
        return PathPrefix(nodes[: j + 1].copy(), self.paths[path, : j + 1].copy())

    def value(self, path: int, j: int) -> float:
        return float(self.paths[path, j])

    def truncated(self, j: int, poison: float = np.nan) -> "BrownianEnsemble":
        """Copy with all values after node j replaced by a poison marker."""
        p = self.paths.copy()
        p[:, j + 1:] = poison
        return BrownianEnsemble(p, self.seed, self.timegrid)

    def to_csv(self, path: str) -> None:
        nodes = self.timegrid.nodes()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path"] + [f"t={t:.12g}" for t in nodes])
            for m in range(self.M):
                w.writerow([m] + [f"{v:.17g}" for v in self.paths[m]])


def sample_brownian(M: int, tg: TimeGrid, seed: int = 0) -> BrownianEnsemble:
    """M paths with W(0) = 0 and independent N(0, dt) increments."""
    if M < 1:
        raise ValueError("M must be >= 1")
    rng = np.random.default_rng(seed)
    inc = rng.standard_normal((M, tg.K)) * math.sqrt(tg.dt)
    paths = np.zeros((M, tg.K + 1))
    np.cumsum(inc, axis=1, out=paths[:, 1:])
    return BrownianEnsemble(paths, int(seed), tg)


def lpf_integral_values(values: np.ndarray, nodes: np.ndarray, p: float) -> float:
    """Raw E integral_0^T |X|^p dt by trapezoid in t, mean over paths."""
    values = np.abs(np.asarray(values, dtype=np.complex128))
    integ = np.trapezoid(values**p, nodes, axis=1)
    return float(np.mean(integ.real))


def lpf_norm_values(values: np.ndarray, nodes: np.ndarray, p: float) -> float:
    """L^p_F(0,T) norm of a (path, time) array of scalar samples."""
    values = np.abs(np.asarray(values, dtype=np.complex128)).real
    if math.isinf(p):
        return float(values.max())
    integ = np.trapezoid(values**p, nodes, axis=1)
    return float(np.mean(integ) ** (1.0 / p))


def lpf_norm(process, ensemble: BrownianEnsemble, p: float,
             raw: bool = False) -> float:
    """Monte Carlo L^p_F(0,T) norm of an adapted scalar process.

    `process` is either a (M, K+1) array of samples X_m(t_j), or a callable
    (t, w) -> scalar evaluated on each (node, path value).
    """
    nodes = ensemble.timegrid.nodes()
    if callable(process):
        vals = np.empty((ensemble.M, len(nodes)), dtype=np.complex128)
        for m in range(ensemble.M):
            for j, t in enumerate(nodes):
                vals[m, j] = process(t, ensemble.paths[m, j])
    else:
        vals = np.asarray(process)
        if vals.shape != (ensemble.M, len(nodes)):
            raise ValueError("process samples must have shape (M, K+1)")
    if raw:
        if math.isinf(p):
            raise ValueError("raw integral undefined for p = inf")
        return lpf_integral_values(vals, nodes, p)
    return lpf_norm_values(vals, nodes, p)


def adaptedness_audit(evaluate, ensemble: BrownianEnsemble, j: int,
                      path: int = 0) -> bool:
    """True iff `evaluate(prefix)` at node j is bitwise unchanged when the
    path is truncated after j (future values poisoned with NaN)."""
    full = evaluate(ensemble.prefix(path, j))
    poisoned = ensemble.truncated(j)
    trial = evaluate(poisoned.prefix(path, j))
    return np.array_equal(np.asarray(full), np.asarray(trial))
