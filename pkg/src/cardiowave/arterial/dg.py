"""Reference-element machinery for the nodal discontinuous Galerkin scheme.

One vessel segment is split into equal elements; within each element the
solution is a Lagrange polynomial on Gauss-Lobatto-Legendre (GLL) nodes.
GLL quadrature on the same nodes gives a diagonal element mass matrix, so
the semi-discrete update only needs the differentiation matrix and the
endpoint lift weights.
"""

import numpy as np
from numpy.polynomial import legendre


def gll_nodes(order):
    """GLL nodes and quadrature weights on [-1, 1] for polynomial `order`."""
    n = order + 1
    if n < 2:
        raise ValueError("polynomial order must be >= 1")
    if n == 2:
        x = np.array([-1.0, 1.0])
    else:
        # interior nodes are the roots of P'_order
        coeffs = np.zeros(n)
        coeffs[-1] = 1.0
        dcoeffs = legendre.legder(coeffs)
        x = np.concatenate(([-1.0], np.sort(legendre.legroots(dcoeffs)), [1.0]))
    pn = legendre.legval(x, np.eye(n)[-1])
    w = 2.0 / (order * n * pn**2)
    return x, w


def lagrange_diff_matrix(x):
    """Differentiation matrix D[i, j] = l_j'(x_i) for Lagrange basis on nodes x."""
    n = len(x)
    # barycentric weights
    bw = np.ones(n)
    for j in range(n):
        for k in range(n):
            if k != j:
                bw[j] /= x[j] - x[k]
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                d[i, j] = (bw[j] / bw[i]) / (x[i] - x[j])
        d[i, i] = -np.sum(d[i, :])
    return d


def lagrange_eval(x, xi):
    """Values of all Lagrange basis functions on nodes `x` at point `xi`."""
    n = len(x)
    vals = np.ones(n)
    for j in range(n):
        for k in range(n):
            if k != j:
                vals[j] *= (xi - x[k]) / (x[j] - x[k])
    return vals


class ReferenceElement:
    """Cached nodes, weights and operators for one polynomial order.

    `mass_inv` is the inverse of the exact mass matrix of the Lagrange
    basis (GLL quadrature would under-integrate it and degrade the
    scheme's order); the stiffness integrand has degree 2p-1, which GLL
    integrates exactly.
    """

    _cache = {}

    def __new__(cls, order):
        if order not in cls._cache:
            obj = super().__new__(cls)
            obj.order = order
            obj.nodes, obj.weights = gll_nodes(order)
            obj.diff = lagrange_diff_matrix(obj.nodes)
            gx, gw = np.polynomial.legendre.leggauss(order + 2)
            phi = np.array([lagrange_eval(obj.nodes, x) for x in gx])
            obj.mass = phi.T @ (gw[:, None] * phi)
            obj.mass_inv = np.linalg.inv(obj.mass)
            # minimum node spacing, used by the CFL bound
            obj.min_spacing = float(np.min(np.diff(obj.nodes)))
            cls._cache[order] = obj
        return cls._cache[order]
