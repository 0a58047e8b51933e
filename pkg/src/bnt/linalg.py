"""Dense float64 linear algebra used throughout the library.

Matrices are plain 2-D numpy float64 arrays.  The everyday operations
(products, row softmax) delegate to numpy; the orthonormalization and
the symmetric eigensolver are implemented here because their exact
behavior (error cases, convergence thresholds, ordering) is part of the
library contract.
"""

from __future__ import annotations

import numpy as np

from .rng import Rng

GS_NORM_FLOOR = 1e-12
JACOBI_OFF_TOL = 1e-12
SYMMETRY_TOL = 1e-9
_MAX_SWEEPS = 60


class DegenerateBasisError(ValueError):
    """Rows passed to gram_schmidt are numerically dependent."""


class EigenConvergenceError(RuntimeError):
    """Jacobi sweeps failed to reach the off-diagonal threshold."""


def _as_matrix(a, name: str) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product a @ b with shape and finiteness checks."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    out = a @ b
    if not np.isfinite(out).all():
        raise FloatingPointError("matmul produced non-finite entries")
    return out


def softmax_lastaxis(a: np.ndarray) -> np.ndarray:
    """Softmax along the last axis, stabilized by max subtraction."""
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax of a matrix; each output row sums to 1."""
    return softmax_lastaxis(_as_matrix(m, "m"))


def xavier_uniform(rows: int, cols: int, rng: Rng) -> np.ndarray:
    """rows x cols matrix with i.i.d. uniform entries on +-sqrt(6/(rows+cols))."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be positive")
    bound = np.sqrt(6.0 / (rows + cols))
    u = rng.uniform(rows * cols)
    return (2.0 * bound * u - bound).reshape(rows, cols)


def gram_schmidt(c) -> np.ndarray:
    """Orthonormalize the rows of c with modified Gram-Schmidt.

    Parameters
    ----------
    c : array, shape (k, v), k <= v
        Rows to orthonormalize, processed in order.

    Returns
    -------
    e : ndarray, shape (k, v)
        Rows form an orthonormal set; for every prefix, the span of the
        first rows of e equals the span of the first rows of c.

    Raises
    ------
    DegenerateBasisError
        If a residual row's norm falls below 1e-12 before
        normalization, i.e. the input rows are numerically dependent.
    """
    c = _as_matrix(c, "c")
    k, v = c.shape
    if k > v:
        raise ValueError(f"need at most as many rows as columns, got {k} > {v}")
    e = c.copy()
    for i in range(k):
        row = e[i]
        # Modified variant: re-measure the projection against each
        # already-orthonormal row on the updated residual.
        for j in range(i):
            row -= (e[j] @ row) * e[j]
        norm = np.sqrt(row @ row)
        if norm < GS_NORM_FLOOR:
            raise DegenerateBasisError(
                f"row {i} is numerically dependent on earlier rows (norm {norm:.3e})"
            )
        row /= norm
    return e


def symmetric_eigendecomposition(m) -> tuple[np.ndarray, np.ndarray]:
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi.

    Sweeps of plane rotations run until the off-diagonal Frobenius norm
    drops below 1e-12.  Returns ``(eigenvalues, eigenvectors)`` with
    eigenvalues sorted descending and the matching orthonormal
    eigenvectors as columns, so ``m @ vecs[:, i] == vals[i] * vecs[:, i]``.
    """
    m = _as_matrix(m, "m")
    n, n2 = m.shape
    if n != n2:
        raise ValueError(f"matrix must be square, got {m.shape}")
    if n > 0 and np.abs(m - m.T).max() > SYMMETRY_TOL:
        raise ValueError("matrix is not symmetric within 1e-9")

    a = (m + m.T) / 2.0
    q = np.eye(n)
    if n < 2:
        return a.diagonal().copy(), q

    def off_norm(x):
        o = x - np.diag(x.diagonal())
        return np.sqrt((o * o).sum())

    for _ in range(_MAX_SWEEPS):
        if off_norm(a) < JACOBI_OFF_TOL:
            break
        for p in range(n - 1):
            for r in range(p + 1, n):
                apr = a[p, r]
                if apr == 0.0:
                    continue
                # Rotation angle choice that zeroes a[p, r] (Golub & Van Loan).
                tau = (a[r, r] - a[p, p]) / (2.0 * apr)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                if t == 0.0:  # sign(0) == 0; take the positive root
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                cth = 1.0 / np.sqrt(1.0 + t * t)
                sth = t * cth

                col_p = a[:, p].copy()
                col_r = a[:, r].copy()
                a[:, p] = cth * col_p - sth * col_r
                a[:, r] = sth * col_p + cth * col_r
                row_p = a[p, :].copy()
                row_r = a[r, :].copy()
                a[p, :] = cth * row_p - sth * row_r
                a[r, :] = sth * row_p + cth * row_r
                a[p, r] = 0.0
                a[r, p] = 0.0

                qp = q[:, p].copy()
                qr = q[:, r].copy()
                q[:, p] = cth * qp - sth * qr
                q[:, r] = sth * qp + cth * qr
    else:
        raise EigenConvergenceError(
            f"off-diagonal norm {off_norm(a):.3e} after {_MAX_SWEEPS} sweeps"
        )

    vals = a.diagonal().copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], q[:, order]


def orthonormal_rows(k: int, v: int, rng: Rng, max_retries: int = 8) -> np.ndarray:
    """k orthonormal rows in R^v from Gram-Schmidt on a fresh Xavier draw.

    Redraws on a degenerate input (measure-zero event) up to
    max_retries times before giving up.
    """
    for _ in range(max_retries):
        try:
            return gram_schmidt(xavier_uniform(k, v, rng))
        except DegenerateBasisError:
            continue
    raise DegenerateBasisError(
        f"could not draw {k} independent rows in R^{v} after {max_retries} attempts"
    )
