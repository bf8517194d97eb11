"""Dense reference computations used only by the tests."""

import numpy as np


def gauss_echelon(A, tol=1e-12):
    """Row echelon form by partial pivoting; returns (R, pivot_columns)."""
    R = np.array(A, dtype=float, copy=True)
    n_rows, n_cols = R.shape
    scale = max(np.abs(R).max(), 1.0)
    pivots = []
    row = 0
    for col in range(n_cols):
        if row >= n_rows:
            break
        p = row + int(np.argmax(np.abs(R[row:, col])))
        if abs(R[p, col]) <= tol * scale:
            continue
        R[[row, p]] = R[[p, row]]
        R[row] /= R[row, col]
        for r in range(n_rows):
            if r != row:
                R[r] -= R[r, col] * R[row]
        pivots.append(col)
        row += 1
    return R, pivots


def gauss_rank(A, tol=1e-12):
    return len(gauss_echelon(A, tol)[1])


def gauss_null_vector(A, tol=1e-12):
    """Basis vector of a one-dimensional null space, from reduced echelon form."""
    R, piv = gauss_echelon(A, tol)
    n = R.shape[1]
    free = [c for c in range(n) if c not in piv]
    assert len(free) == 1, f"null space has dimension {len(free)}"
    x = np.zeros(n)
    x[free[0]] = 1.0
    for i, c in enumerate(piv):
        x[c] = -R[i, free[0]]
    return x


def gauss_solve(A, b):
    R, piv = gauss_echelon(np.column_stack([A, b]))
    n = A.shape[1]
    assert piv == list(range(n)), "system is singular"
    return R[:n, n]
