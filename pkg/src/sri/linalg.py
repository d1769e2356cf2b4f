"""Real eigendecomposition of small nonsymmetric matrices.

Householder reduction to upper Hessenberg form, then Wilkinson-shifted QR
sweeps (Givens rotations) down to an upper-triangular real Schur form.
Eigenvectors come from back-substitution in the triangular factor.  Only
matrices with real, distinct eigenvalues are supported; anything else raises.
"""

from __future__ import annotations

import math

import numpy as np


class NonRealDecomposition(ArithmeticError):
    pass


class DegenerateEigenvalues(ArithmeticError):
    pass


IMAG_TOL = 1e-6


def hessenberg(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(H, Q)`` with ``a = Q @ H @ Q.T`` and ``H`` upper Hessenberg."""
    h = np.array(a, dtype=float)
    n = h.shape[0]
    q = np.eye(n)
    for k in range(n - 2):
        x = h[k + 1:, k].copy()
        alpha = -math.copysign(np.linalg.norm(x), x[0] if x[0] != 0 else 1.0)
        v = x
        v[0] -= alpha
        vnorm = np.linalg.norm(v)
        if vnorm == 0.0:
            continue
        v /= vnorm
        h[k + 1:, :] -= 2.0 * np.outer(v, v @ h[k + 1:, :])
        h[:, k + 1:] -= 2.0 * np.outer(h[:, k + 1:] @ v, v)
        q[:, k + 1:] -= 2.0 * np.outer(q[:, k + 1:] @ v, v)
        h[k + 2:, k] = 0.0
    return h, q


def _givens(a, b):
    if b == 0.0:
        return 1.0, 0.0
    r = math.hypot(a, b)
    return a / r, b / r


def _eig2(block):
    """Eigenvalues of a 2x2 block as (real1, real2) or raise on a complex pair."""
    a, b, c, d = block[0, 0], block[0, 1], block[1, 0], block[1, 1]
    mid = 0.5 * (a + d)
    disc = 0.25 * (a - d) ** 2 + b * c
    if disc < 0:
        return mid, mid, math.sqrt(-disc)
    root = math.sqrt(disc)
    return mid + root, mid - root, 0.0


def real_schur(a: np.ndarray, tol: float = 1e-14, max_iter: int = 500) -> tuple[np.ndarray, np.ndarray]:
    """Upper-triangular ``T`` and orthogonal ``Q`` with ``a = Q T Q^T``."""
    h, q = hessenberg(a)
    n = h.shape[0]
    hi = n - 1
    iters = 0
    total = 0
    while hi > 0:
        lo = hi
        while lo > 0:
            if abs(h[lo, lo - 1]) <= tol * (abs(h[lo, lo]) + abs(h[lo - 1, lo - 1]) or 1.0):
                h[lo, lo - 1] = 0.0
                break
            lo -= 1
        if lo == hi:
            hi -= 1
            iters = 0
            continue
        r1, r2, imag = _eig2(h[hi - 1:hi + 1, hi - 1:hi + 1])
        if lo == hi - 1 and imag > 0.0:
            scale = max(abs(r1), 1.0)
            if imag > IMAG_TOL * scale:
                raise NonRealDecomposition(f"complex eigenvalue pair with imaginary part {imag:.3g}")
            raise DegenerateEigenvalues("eigenvalue pair coincides to within tolerance")
        if iters and iters % 10 == 0:
            shift = h[hi, hi] + abs(h[hi, hi - 1])
        else:
            shift = r1 if abs(r1 - h[hi, hi]) < abs(r2 - h[hi, hi]) else r2
        _qr_sweep(h, q, lo, hi, shift)
        iters += 1
        total += 1
        if total > max_iter:
            raise NonRealDecomposition("QR iteration did not reach a real Schur form")
    return np.triu(h), q


def _qr_sweep(h, q, lo, hi, shift):
    for k in range(lo, hi + 1):
        h[k, k] -= shift
    rots = []
    for k in range(lo, hi):
        c, s = _givens(h[k, k], h[k + 1, k])
        rows = h[[k, k + 1], lo:].copy()
        h[k, lo:] = c * rows[0] + s * rows[1]
        h[k + 1, lo:] = -s * rows[0] + c * rows[1]
        rots.append((c, s))
    for k, (c, s) in zip(range(lo, hi), rots):
        top = min(k + 2, hi) + 1
        cols = h[:top, [k, k + 1]].copy()
        h[:top, k] = c * cols[:, 0] + s * cols[:, 1]
        h[:top, k + 1] = -s * cols[:, 0] + c * cols[:, 1]
        qc = q[:, [k, k + 1]].copy()
        q[:, k] = c * qc[:, 0] + s * qc[:, 1]
        q[:, k + 1] = -s * qc[:, 0] + c * qc[:, 1]
    for k in range(lo, hi + 1):
        h[k, k] += shift


def _check_gap(vals, gap_tol):
    if len(vals) > 1:
        diffs = np.abs(vals[:, None] - vals[None, :])[np.triu_indices(len(vals), 1)]
        gap = float(diffs.min())
        if gap < gap_tol:
            raise DegenerateEigenvalues(f"eigenvalue gap {gap:.3g} below {gap_tol:g}")


def eig_qr(a: np.ndarray, gap_tol: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and unit-norm eigenvectors (columns) via the QR algorithm."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if n == 1:
        return a[0].copy(), np.ones((1, 1))
    t, q = real_schur(a)
    vals = np.diag(t).copy()
    _check_gap(vals, gap_tol)
    vecs = np.zeros((n, n))
    for i in range(n):
        y = np.zeros(n)
        y[i] = 1.0
        for j in range(i - 1, -1, -1):
            y[j] = -(t[j, j + 1:i + 1] @ y[j + 1:i + 1]) / (t[j, j] - vals[i])
        v = q @ y
        vecs[:, i] = v / np.linalg.norm(v)
    return vals, vecs


def eig_2x2(a: np.ndarray, gap_tol: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form eigenpairs of a real 2x2 matrix via the characteristic quadratic."""
    a = np.asarray(a, dtype=float)
    r1, r2, imag = _eig2(a)
    if imag > IMAG_TOL * max(abs(r1), 1.0):
        raise NonRealDecomposition(f"complex eigenvalue pair with imaginary part {imag:.3g}")
    vals = np.array([r1, r2])
    _check_gap(vals, gap_tol)
    (p, b), (c, d) = a
    vecs = np.empty((2, 2))
    for i, lam in enumerate(vals):
        cand1 = np.array([b, lam - p])
        cand2 = np.array([lam - d, c])
        v = cand1 if np.linalg.norm(cand1) >= np.linalg.norm(cand2) else cand2
        if np.linalg.norm(v) == 0.0:
            v = np.eye(2)[i]
        vecs[:, i] = v / np.linalg.norm(v)
    return vals, vecs


def eig_real(a: np.ndarray, method: str = "auto", gap_tol: float = 1e-6):
    """Dispatch: closed form for 2x2 under ``auto``, QR algorithm otherwise."""
    a = np.asarray(a, dtype=float)
    if method == "closed" or (method == "auto" and a.shape == (2, 2)):
        return eig_2x2(a, gap_tol)
    return eig_qr(a, gap_tol)
