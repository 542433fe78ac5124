"""Conformal-metric Hamiltonian family backing the built-in model catalog.

Every catalog model is of the form ``H(y, p) = 0.5 * c(y) * |p|^2`` with a
positive conformal factor ``c``:

* ``euclidean``            c = 1
* ``sphere``               c = (1 + |y|^2)^2 / 4   (round metric pushed to the
                           chart, cometric of g = 4/(1+|y|^2)^2 * eucl)
* ``sphere_perturbed``     c = exp(-2*eps*phi(y)) * (1 + |y|^2)^2 / 4

``phi`` is a sum of bump fields (Gaussian or cosine), flattened into a
numeric parameter vector shared verbatim with the compiled kernel.

Parameter vector layout: ``[kind, n, eps, nbumps, bump0..., bump1...]`` with
each bump occupying ``3 + n`` slots: ``[type, amplitude, width_or_phase,
center_or_wavevector (n)]``.
"""

from __future__ import annotations

import math

import numpy as np

KIND_EUCLIDEAN = 0
KIND_SPHERE = 1
KIND_PERTURBED = 2

BUMP_GAUSSIAN = 0
BUMP_COSINE = 1


def pack_params(kind: int, n: int, eps: float = 0.0, bumps=()) -> np.ndarray:
    out = [float(kind), float(n), float(eps), float(len(bumps))]
    for b in bumps:
        btype, amp, width, vec = b
        vec = np.asarray(vec, dtype=float)
        if vec.size != n:
            raise ValueError("bump vector length must equal dimension")
        out.extend([float(btype), float(amp), float(width)])
        out.extend(vec.tolist())
    return np.array(out, dtype=float)


def unpack_header(params: np.ndarray):
    kind = int(params[0])
    n = int(params[1])
    eps = float(params[2])
    nbumps = int(params[3])
    return kind, n, eps, nbumps


def phi_value_grad_hess(params: np.ndarray, y: np.ndarray):
    """Perturbation field with first and second derivatives at ``y``."""
    _, n, _, nbumps = unpack_header(params)
    val = 0.0
    grad = np.zeros(n)
    hess = np.zeros((n, n))
    off = 4
    stride = 3 + n
    eye = np.eye(n)
    for _ in range(nbumps):
        btype = int(params[off])
        amp = params[off + 1]
        width = params[off + 2]
        vec = params[off + 3:off + 3 + n]
        if btype == BUMP_GAUSSIAN:
            r = y - vec
            q = float(r @ r) / (2.0 * width * width)
            e = amp * math.exp(-q)
            val += e
            grad += e * (-r / (width * width))
            hess += e * (np.outer(r, r) / width**4 - eye / width**2)
        elif btype == BUMP_COSINE:
            ph = float(vec @ y) + width
            val += amp * math.cos(ph)
            grad += -amp * math.sin(ph) * vec
            hess += -amp * math.cos(ph) * np.outer(vec, vec)
        else:
            raise ValueError(f"unknown bump type {btype}")
        off += stride
    return val, grad, hess


def phi_value(params: np.ndarray, y: np.ndarray) -> float:
    return phi_value_grad_hess(params, y)[0]


def cfactor(params: np.ndarray, y: np.ndarray) -> float:
    """Conformal factor c(y) of the Hamiltonian 0.5*c*|p|^2."""
    kind, _, eps, _ = unpack_header(params)
    if kind == KIND_EUCLIDEAN:
        return 1.0
    s = float(y @ y)
    c_round = 0.25 * (1.0 + s) ** 2
    if kind == KIND_SPHERE:
        return c_round
    return math.exp(-2.0 * eps * phi_value(params, y)) * c_round


def cfactor_grad_hess(params: np.ndarray, y: np.ndarray):
    """(c, grad c, hess c) at ``y``."""
    kind, n, eps, _ = unpack_header(params)
    eye = np.eye(n)
    if kind == KIND_EUCLIDEAN:
        return 1.0, np.zeros(n), np.zeros((n, n))
    s = float(y @ y)
    c0 = 0.25 * (1.0 + s) ** 2
    g0 = (1.0 + s) * y
    h0 = (1.0 + s) * eye + 2.0 * np.outer(y, y)
    if kind == KIND_SPHERE:
        return c0, g0, h0
    pv, pg, ph = phi_value_grad_hess(params, y)
    w = math.exp(-2.0 * eps * pv)
    c = w * c0
    grad = w * (g0 - 2.0 * eps * c0 * pg)
    hess = w * (h0
                - 2.0 * eps * (np.outer(g0, pg) + np.outer(pg, g0))
                - 2.0 * eps * c0 * ph
                + 4.0 * eps * eps * c0 * np.outer(pg, pg))
    return c, grad, hess


def hamiltonian(params: np.ndarray, y: np.ndarray, p: np.ndarray) -> float:
    return 0.5 * cfactor(params, y) * float(p @ p)


def cfactor_batch(params: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Conformal factor on a batch of positions (rows of ``Y``)."""
    kind, n, eps, nbumps = unpack_header(params)
    Y = np.asarray(Y, dtype=float)
    if kind == KIND_EUCLIDEAN:
        return np.ones(Y.shape[0])
    s = np.einsum("ij,ij->i", Y, Y)
    c = 0.25 * (1.0 + s) ** 2
    if kind == KIND_SPHERE:
        return c
    phi = np.zeros(Y.shape[0])
    off = 4
    for _ in range(nbumps):
        btype = int(params[off])
        amp = params[off + 1]
        width = params[off + 2]
        vec = params[off + 3:off + 3 + n]
        if btype == BUMP_GAUSSIAN:
            r = Y - vec[None, :]
            phi += amp * np.exp(-np.einsum("ij,ij->i", r, r)
                                / (2.0 * width * width))
        else:
            phi += amp * np.cos(Y @ vec + width)
        off += 3 + n
    return np.exp(-2.0 * eps * phi) * c


def flow_rhs(params: np.ndarray, level: float):
    """RHS of the characteristic system with the action as extra component.

    State layout ``[y (n), p (n), a]`` with ``a' = <p, H_p> - H + level``.
    """
    n = unpack_header(params)[1]

    def rhs(t, state):
        y = state[:n]
        p = state[n:2 * n]
        c, gc, _ = cfactor_grad_hess(params, y)
        pp = float(p @ p)
        out = np.empty(2 * n + 1)
        out[:n] = c * p
        out[n:2 * n] = -0.5 * pp * gc
        out[2 * n] = 0.5 * c * pp + level
        return out

    return rhs


def frame_rhs(params: np.ndarray, base_eval):
    """RHS of the linearized system for a (2n, k) column stack.

    ``base_eval(t)`` returns the flow state ``[y, p, ...]``; columns evolve by
    ``h' = B^T h + Q v``, ``v' = -A h - B v`` with the conformal blocks
    ``Q = c I``, ``B = grad_c p^T``, ``A = 0.5 |p|^2 hess_c``.
    """
    n = unpack_header(params)[1]

    def rhs(t, flat):
        base = base_eval(t)
        y = base[:n]
        p = base[n:2 * n]
        c, gc, hc = cfactor_grad_hess(params, y)
        Y = flat.reshape(2 * n, -1)
        H = Y[:n]
        V = Y[n:]
        dH = np.outer(p, gc @ H) + c * V
        dV = -0.5 * float(p @ p) * (hc @ H) - np.outer(gc, p @ V)
        return np.concatenate([dH, dV]).ravel()

    return rhs
