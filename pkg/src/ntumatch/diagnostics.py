"""Convergence diagnostics for MCMC output."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput


@dataclass
class PsrfResult:
    values: np.ndarray
    names: tuple[str, ...]
    degenerate: np.ndarray  # zero within-chain variance

    def share_below(self, threshold: float) -> float:
        return float(np.mean(self.values < threshold))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


def psrf(chains, split: bool = False) -> PsrfResult:
    """Gelman-Rubin potential scale reduction factor per parameter.

    ``chains`` holds equally long (L, P) draw matrices or objects with a
    ``draws`` attribute. ``split=True`` cuts every chain in half first,
    which makes a single chain usable. A parameter with zero within-chain
    variance gets +inf (or 1.0 if the chains also agree exactly) and is
    flagged in ``degenerate``.
    """
    names = getattr(chains[0], "names", None) if len(chains) else None
    mats = [np.asarray(getattr(c, "draws", c), dtype=float) for c in chains]
    mats = [m[:, None] if m.ndim == 1 else m for m in mats]
    if split:
        half = min(len(m) for m in mats) // 2
        mats = [part for m in mats for part in (m[:half], m[half:2 * half])]
    if len(mats) < 2:
        raise InvalidInput("need at least two chains (or split=True)")
    lengths = {len(m) for m in mats}
    if len(lengths) != 1:
        raise InvalidInput("chains must have equal lengths")
    n = lengths.pop()
    if n < 2:
        raise InvalidInput("chains need at least two draws")
    X = np.stack(mats)  # (m, n, P)
    m = X.shape[0]
    means = X.mean(axis=1)
    W = X.var(axis=1, ddof=1).mean(axis=0)
    B = n * means.var(axis=0, ddof=1)
    V = (n - 1) / n * W + (1 + 1 / m) * B / n
    degenerate = W <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        R = np.sqrt(V / W)
    R = np.where(degenerate, np.where(B > 0, np.inf, 1.0), R)
    # identical chains: B = 0, the estimate is (n-1)/n-deflated; report 1
    R = np.where(~degenerate & (B == 0), 1.0, R)
    if names is None:
        names = tuple(f"p{k + 1}" for k in range(X.shape[2]))
    return PsrfResult(R, tuple(names), degenerate)
