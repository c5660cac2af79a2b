"""Pure-Python fallback for the compiled kernels in ``_core.pyx``.

Same algorithms and tie-breaking as the extension; inner loops are vectorised
with numpy where that does not change the visiting order.
"""

import numpy as np


def linear_sum_assignment(cost):
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.ndim != 2 or cost.shape[1] != n:
        raise ValueError("cost matrix must be square")
    out = np.empty(n, dtype=np.int64)
    if n == 0:
        return out

    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.intp)
    way = np.zeros(n + 1, dtype=np.intp)
    # column 0 is the virtual source; real columns are 1..n
    padded = np.zeros((n + 1, n + 1))
    padded[1:, 1:] = cost

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = padded[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            masked = np.where(free, minv, np.inf)
            j1 = int(np.argmin(masked))
            delta = masked[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    out[p[1:] - 1] = np.arange(n)
    return out


def jacobi_eigh(a, tol=1e-14, max_sweeps=100):
    m = np.array(a, dtype=np.float64, order="C")
    n = m.shape[0]
    if m.ndim != 2 or m.shape[1] != n:
        raise ValueError("matrix must be square")
    q = np.eye(n)
    scale = np.sqrt(np.sum(m * m))
    sweep = 0
    while sweep < max_sweeps:
        off = 2.0 * np.sum(np.triu(m, 1) ** 2)
        if np.sqrt(off) <= tol * scale or scale == 0.0:
            break
        sweep += 1
        for i in range(n - 1):
            for j in range(i + 1, n):
                apq = m[i, j]
                if apq == 0.0:
                    continue
                theta = (m[j, j] - m[i, i]) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + np.sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                ri, rj = m[i].copy(), m[j].copy()
                m[i] = c * ri - s * rj
                m[j] = s * ri + c * rj
                ci, cj = m[:, i].copy(), m[:, j].copy()
                m[:, i] = c * ci - s * cj
                m[:, j] = s * ci + c * cj
                qi, qj = q[:, i].copy(), q[:, j].copy()
                q[:, i] = c * qi - s * qj
                q[:, j] = s * qi + c * qj
    w = np.diag(m).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], q[:, order], sweep
