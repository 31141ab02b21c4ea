"""Moment container consumed by the fluctuation-response assembly.

The estimator needs, besides means and connected second moments, the
mixed third-order moments pairing quantities with components of the
utility gradient g = dU/dx at one or more reference goods k.  Exact
versions come from quadrature; noisy ones from chain time averages.  The
same container carries either a per-agent layout (independent agents,
one Slutsky matrix each) or a pooled layout (identical interacting
agents, same/cross blocks averaged over the population).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import DimensionMismatch

__all__ = ["FRMoments"]


@dataclass
class FRMoments:
    """Raw/connected moment bundle for fluctuation-response estimation.

    Layouts (M goods, N agents, K reference goods):

    kind="per_agent": mean_x (N,M); cov_same (N,M,M) connected;
    g_mean (K,N); xg_same (K,N,M); xxg_same (K,N,M,M); cross fields None.

    kind="pooled" (identical agents): mean_x (M,); cov_same/cov_cross
    (M,M) connected; g_mean (K,); xg_same/xg_cross (K,M);
    xxg_same/xxg_cross (K,M,M).  Cross blocks average over ordered
    agent pairs (alpha != gamma), with g attached to the second agent.

    xg/xxg entries are raw (not connected) expectations.
    """

    kind: str
    ref_goods: Tuple[int, ...]
    beta: float
    prices: np.ndarray
    num_agents: int
    mean_x: np.ndarray
    cov_same: np.ndarray
    g_mean: np.ndarray
    xg_same: np.ndarray
    xxg_same: np.ndarray
    cov_cross: Optional[np.ndarray] = None
    xg_cross: Optional[np.ndarray] = None
    xxg_cross: Optional[np.ndarray] = None

    def __post_init__(self):
        M = len(self.prices)
        K = len(self.ref_goods)
        if self.kind not in ("per_agent", "pooled"):
            raise DimensionMismatch(f"unknown layout {self.kind!r}")
        if any(not 0 <= k < M for k in self.ref_goods):
            raise DimensionMismatch("reference good out of range")
        shapes_per_agent = {
            "mean_x": (self.num_agents, M),
            "cov_same": (self.num_agents, M, M),
            "g_mean": (K, self.num_agents),
            "xg_same": (K, self.num_agents, M),
            "xxg_same": (K, self.num_agents, M, M),
        }
        shapes_pooled = {
            "mean_x": (M,),
            "cov_same": (M, M),
            "g_mean": (K,),
            "xg_same": (K, M),
            "xxg_same": (K, M, M),
            "cov_cross": (M, M),
            "xg_cross": (K, M),
            "xxg_cross": (K, M, M),
        }
        expected = shapes_per_agent if self.kind == "per_agent" else shapes_pooled
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr is None:
                raise DimensionMismatch(f"{name} required for kind={self.kind}")
            if np.asarray(arr).shape != shape:
                raise DimensionMismatch(
                    f"{name}: expected shape {shape}, got {np.asarray(arr).shape}"
                )
