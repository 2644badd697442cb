#!/usr/bin/env python3
"""Reference data for the test suite, computed with numpy only.

Nothing here calls into ftk. Run from the repository root:

    python3 tools/oracles/make_oracles.py tests/data
"""

import sys
from pathlib import Path

import numpy as np


def poisson_dense(nx, ny, ex=1.0, ey=1.0, h=1.0):
    """Brute-force 5-point stencil, node (i, j) -> i + nx*j."""
    n = nx * ny
    a = np.zeros((n, n))
    for j in range(ny):
        for i in range(nx):
            r = i + nx * j
            a[r, r] = (2 * ex + 2 * ey) / h**2
            for di, dj, c in ((-1, 0, ex), (1, 0, ex), (0, -1, ey), (0, 1, ey)):
                ii, jj = i + di, j + dj
                if 0 <= ii < nx and 0 <= jj < ny:
                    a[r, ii + nx * jj] = -c / h**2
    return a


def write_dense(path, a):
    with open(path, "w") as f:
        f.write(f"{a.shape[0]} {a.shape[1]}\n")
        for row in a:
            f.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def write_vec(path, v):
    with open(path, "w") as f:
        for x in v:
            f.write(f"{x:.17g}\n")


def spai1_columns(a):
    """Column j minimizes ||A m - e_j|| over the pattern of column j of A."""
    n = a.shape[0]
    entries, resid = [], []
    for j in range(n):
        cols = np.nonzero(a[:, j])[0]
        rows = np.nonzero(np.any(a[:, cols] != 0, axis=1))[0]
        sub = a[np.ix_(rows, cols)]
        e = (rows == j).astype(float)
        # normal equations, as an independent route from QR
        m = np.linalg.solve(sub.T @ sub, sub.T @ e)
        full = np.zeros(n)
        full[cols] = m
        e_full = np.zeros(n)
        e_full[j] = 1.0
        resid.append(np.linalg.norm(a @ full - e_full))
        entries += [(int(c), j, float(v)) for c, v in zip(cols, m)]
    return entries, resid


def write_spai(path, n, entries, resid):
    with open(path, "w") as f:
        f.write(f"{n} {len(entries)}\n")
        for r in resid:
            f.write(f"{r:.17g}\n")
        for i, j, v in entries:
            f.write(f"{i} {j} {v:.17g}\n")


def jacobi_pcg_history(a, b, tol, maxit):
    x = np.zeros_like(b)
    r = b - a @ x
    dinv = 1.0 / np.diag(a)
    z = dinv * r
    p = z.copy()
    rho = r @ z
    ref = np.linalg.norm(r)
    hist = [ref]
    for _ in range(maxit):
        q = a @ p
        alpha = rho / (p @ q)
        x += alpha * p
        r -= alpha * q
        hist.append(np.linalg.norm(r))
        if hist[-1] <= tol * ref:
            break
        z = dinv * r
        rho_new = r @ z
        p = z + (rho_new / rho) * p
        rho = rho_new
    return hist


def a_orthogonalize(a):
    """Gram-Schmidt of the unit vectors in the A inner product: Z unit upper, D pivots."""
    n = a.shape[0]
    z = np.eye(n)
    d = np.zeros(n)
    for i in range(n):
        v = z[:, i].copy()
        for k in range(i):
            v -= (z[:, k] @ a @ v) / d[k] * z[:, k]
        z[:, i] = v
        d[i] = v @ a @ v
    return z, d


def full_weighting(nx, ny):
    """Coarse (I, J) at fine (2I+1, 2J+1), weights 1/16 [1 2 1; 2 4 2; 1 2 1]."""
    cx, cy = nx // 2, ny // 2
    r = np.zeros((cx * cy, nx * ny))
    for jj in range(cy):
        for ii in range(cx):
            fi, fj = 2 * ii + 1, 2 * jj + 1
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    i, j = fi + di, fj + dj
                    if 0 <= i < nx and 0 <= j < ny:
                        w = (2 - abs(di)) * (2 - abs(dj)) / 16.0
                        r[ii + cx * jj, i + nx * j] = w
    return r


def main(out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    write_dense(out / "poisson_4x4_aniso.txt", poisson_dense(4, 4, 1.0, 0.001))

    for n in (10, 32):
        a = poisson_dense(n, n)
        entries, resid = spai1_columns(a)
        write_spai(out / f"spai1_{n}x{n}.txt", n * n, entries, resid)

    a = poisson_dense(8, 8, 1.0, 0.01)
    b = a @ np.ones(64)
    write_vec(out / "pcg_jacobi_8x8_history.txt", jacobi_pcg_history(a, b, 1e-8, 500))

    rng = np.random.default_rng(20240611)
    g = rng.uniform(-1, 1, (50, 50))
    spd = g @ g.T + 50 * np.eye(50)
    write_dense(out / "spd_50.txt", spd)
    z, d = a_orthogonalize(spd)
    write_dense(out / "spd_50_z.txt", z)
    write_vec(out / "spd_50_d.txt", d)

    n = 12
    tri = np.diag(np.full(n, 3.0)) + np.diag(np.full(n - 1, -1.0), 1) + np.diag(np.full(n - 1, -1.0), -1)
    tri[0, 0] = 2.5
    rhs = np.arange(1, n + 1, dtype=float)
    write_dense(out / "tridiag_12.txt", tri)
    write_vec(out / "tridiag_12_rhs.txt", rhs)
    write_vec(out / "tridiag_12_x.txt", np.linalg.solve(tri, rhs))

    write_dense(out / "restriction_8x8.txt", full_weighting(8, 8))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data")
