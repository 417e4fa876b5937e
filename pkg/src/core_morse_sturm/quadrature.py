"""複合Gauss-Legendre求積."""

from __future__ import annotations

import functools

import numpy as np
from numpy.polynomial.legendre import leggauss


@functools.cache
def _reference_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = leggauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def composite_gauss(
    panels: int, order: int, a: float = 0.0, b: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """区間 [a, b] を等分したパネルごとにGauss-Legendre則を並べる.

    Args:
        panels: パネル数
        order: パネルあたりの節点数
        a: 区間の始点
        b: 区間の終点 (a > b でもよい。重みの符号が反転する)

    Returns:
        (nodes, weights)。節点数は panels * order
    """
    if panels < 1 or order < 1:
        raise ValueError(f"panels and order must be positive: {panels}, {order}")
    ref_nodes, ref_weights = _reference_rule(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * ref_nodes[None, :]).ravel()
    weights = (half[:, None] * ref_weights[None, :]).ravel()
    return nodes, weights
