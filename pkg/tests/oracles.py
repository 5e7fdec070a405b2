"""Dense reference computations used as independent oracles.

Everything here works on explicit matrices acting on column-major
vectorizations and shares no code with the package.
"""

import numpy as np
import cvxpy as cp


def vec(t):
    return np.asarray(t, dtype=float).ravel(order="F")


def unvec(v, dims):
    return np.asarray(v, dtype=float).reshape(dims, order="F")


def kron3(a1, a2, a3):
    return np.kron(a3, np.kron(a2, a1))


def dense_hat(b, eps=0.0):
    g = b.T @ b + eps * np.eye(b.shape[1])
    return b @ np.linalg.solve(g, b.T)


def dense_difference(ds, dw, dy):
    return kron3(ds, dw, dy)


def _solve(problem):
    problem.solve(solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    if problem.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError(f"oracle solve failed: {problem.status}")


def dense_prox(v, lam1, lam2, dmat):
    """argmin 1/2 ||x - v||^2 + lam1 ||x||_1 + lam2 ||D x||_1."""
    v = np.asarray(v, dtype=float).ravel()
    x = cp.Variable(v.size)
    obj = 0.5 * cp.sum_squares(x - v)
    if lam1:
        obj = obj + lam1 * cp.norm1(x)
    if lam2:
        obj = obj + lam2 * cp.norm1(dmat @ x)
    _solve(cp.Problem(cp.Minimize(obj)))
    return np.asarray(x.value)


def dense_decomposition(y, hat, bh, dmat, lam1, lam2):
    """Optimal value and coefficients of the profiled penalized problem.

    ``||(I - H) (y - B_h theta)||^2 + lam1 ||theta||_1 + lam2 ||D theta||_1``
    for a dense hat matrix ``H``.
    """
    y = vec(y)
    rm = np.eye(y.size) - hat
    x = cp.Variable(bh.shape[1])
    obj = cp.sum_squares(rm @ y - (rm @ bh) @ x) + lam1 * cp.norm1(x) + lam2 * cp.norm1(dmat @ x)
    prob = cp.Problem(cp.Minimize(obj))
    _solve(prob)
    return float(prob.value), np.asarray(x.value)


def cusum_path(p, d):
    """Reference CUSUM recursion written as a plain loop."""
    w, out = 0.0, []
    for x in p:
        w = max(0.0, w + x - d)
        out.append(w)
    return np.array(out)


def dense_dual_prox(v, lam1, lam2, dmat, tol=1e-10, max_iter=2_000_000):
    """Same proximal point by accelerated projected gradient on the dual.

    With ``A = [I; D]`` and box ``|z_1| <= lam1, |z_2| <= lam2`` the dual
    is ``min 1/2 ||v - A'z||^2``; iterate until the duality gap is below
    ``tol``.
    """
    v = np.asarray(v, dtype=float).ravel()
    a = np.vstack([np.eye(v.size), dmat])
    box = np.concatenate([np.full(v.size, lam1), np.full(dmat.shape[0], lam2)])
    step = 1.0 / np.linalg.norm(a, 2) ** 2
    z = np.zeros(a.shape[0])
    u, t = z.copy(), 1.0

    def gap(z):
        x = v - a.T @ z
        primal = 0.5 * np.sum((x - v) ** 2) + lam1 * np.abs(x).sum() + lam2 * np.abs(dmat @ x).sum()
        dual = 0.5 * np.sum(v**2) - 0.5 * np.sum(x**2)
        return primal - dual, x

    for it in range(max_iter):
        z_new = np.clip(u + step * (a @ (v - a.T @ u)), -box, box)
        t_new = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        u = z_new + ((t - 1.0) / t_new) * (z_new - z)
        z, t = z_new, t_new
        if it % 50 == 0:
            g, x = gap(z)
            if g <= tol:
                return x
    raise RuntimeError("dual oracle did not reach the requested gap")
