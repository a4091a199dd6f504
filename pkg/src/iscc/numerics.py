"""Dense complex Hermitian linear algebra used by every solver module.

All decompositions are funneled through this small surface so that the
Hermitian/positive-definite checks live in exactly one place.  Matrices are
plain complex128 ndarrays; inputs are symmetrized before factorization when
the asymmetry is below tolerance and rejected otherwise.
"""

import numpy as np

HERMITIAN_TOL = 1e-10


class NotHermitian(ValueError):
    """Matrix asymmetry exceeds the Hermitian tolerance."""


class NotPositiveDefinite(ValueError):
    """Cholesky factorization hit a non-positive pivot."""


def _as_hermitian(A, tol):
    A = np.asarray(A, dtype=np.complex128)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    scale = np.linalg.norm(A) + 1.0
    asym = np.linalg.norm(A - A.conj().T)
    if asym > tol * scale:
        raise NotHermitian(f"asymmetry {asym:.3e} exceeds {tol:.1e} * scale")
    return 0.5 * (A + A.conj().T)


def hermitian_solve(A, B, tol=HERMITIAN_TOL):
    """Solve A @ X = B for Hermitian positive-definite A via Cholesky.

    Raises NotPositiveDefinite if a pivot of the factorization is not
    strictly positive.
    """
    A = _as_hermitian(A, tol)
    B = np.asarray(B, dtype=np.complex128)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    one_d = B.ndim == 1
    Bm = B[:, None] if one_d else B
    Y = np.linalg.solve(L, Bm)
    X = np.linalg.solve(L.conj().T, Y)
    return X[:, 0] if one_d else X


def hermitian_eig(A, tol=HERMITIAN_TOL):
    """Eigendecomposition of a Hermitian matrix.

    Returns (eigenvalues, eigenvectors) with real eigenvalues sorted in
    descending order and unit-norm eigenvector columns.
    """
    A = _as_hermitian(A, tol)
    vals, vecs = np.linalg.eigh(A)
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order]
