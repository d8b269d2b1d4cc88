"""Pure-Python cyclic Jacobi eigensolver.

Same sweep order, rotation formula and stopping rule as the compiled
kernel in ``_jacobi.pyx``; row/column updates are vectorized with numpy.
"""
import math

import numpy as np


def jacobi_eigh(a_in, max_sweeps=100):
    a = np.array(a_in, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    iu = np.triu_indices(n, 1)
    for sweep in range(max_sweeps):
        if not np.any(a[iu]):
            return np.diag(a).copy(), v, sweep
        rotations = 0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                g = 100.0 * abs(apq)
                if abs(app) + g == abs(app) and abs(aqq) + g == abs(aqq):
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    continue
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
                rotations += 1
        if rotations == 0:
            return np.diag(a).copy(), v, sweep + 1
    raise ArithmeticError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")
