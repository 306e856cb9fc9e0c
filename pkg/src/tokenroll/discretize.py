"""Zero-order-hold discretization of continuous-time linear systems."""
import numpy as np

from .numerics import as_matrix

# Pade(6,6) coefficients for exp
_PADE6 = (1.0, 1.0 / 2, 5.0 / 44, 1.0 / 66, 1.0 / 792, 1.0 / 15840, 1.0 / 665280)


def expm(M):
    """Matrix exponential by scaling and squaring with a (6,6) Pade approximant."""
    M = as_matrix(M, name="M")
    n = M.shape[0]
    norm = np.linalg.norm(M, 1)
    s = max(0, int(np.ceil(np.log2(norm / 0.5)))) if norm > 0.5 else 0
    X = M / (2.0 ** s)
    eye = np.eye(n)
    power = eye
    num = np.zeros_like(X)
    den = np.zeros_like(X)
    for k, coef in enumerate(_PADE6):
        if k:
            power = power @ X
        num += coef * power
        den += coef * (-1) ** k * power
    E = np.linalg.solve(den, num)
    for _ in range(s):
        E = E @ E
    return E


def zero_order_hold(A, B, h):
    """Exact discretization for inputs held constant over each period ``h``.

    Uses ``expm([[A, B], [0, 0]] h) = [[A_d, B_d], [0, I]]``.
    """
    A = as_matrix(A, name="A")
    n = A.shape[0]
    B = as_matrix(B, n, name="B")
    m = B.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A
    aug[:n, n:] = B
    E = expm(aug * h)
    return E[:n, :n], E[:n, n:]
