"""Jitted inner loops for bootstrap resampling.

The paired bootstrap over a fine value grid is the one hot spot that plain
numpy cannot reach: B resamples of n values each need B*n random draws and
a grid walk per resample. The kernel below fuses draw, count, ECDF walk,
histogram-mass accumulation and moment accumulation into one pass, giving
both the L1 and the normalized Wasserstein-1 statistic per resample.

Seeding uses numba's MT19937 (np.random.seed inside nopython code), which
is deterministic across runs for a fixed seed.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def paired_boot_fine(seed, b_iters, cell_x, cell_y, vals, cell2bin, n_bins):
    """B paired bootstrap resamples over a shared sorted value grid.

    cell_x / cell_y map each original observation to its grid cell; vals
    holds the G distinct pooled values in increasing order; cell2bin maps
    grid cells onto L1 histogram bins (underflow and overflow included).
    Returns (B, 2): column 0 the L1 distance over bin masses, column 1 the
    Wasserstein-1 ECDF integral normalized by the resample's pooled
    population std.
    """
    np.random.seed(seed)
    G = vals.size
    n = cell_x.size
    m = cell_y.size
    cx = np.zeros(G, np.int64)
    cy = np.zeros(G, np.int64)
    bx = np.zeros(n_bins, np.int64)
    by = np.zeros(n_bins, np.int64)
    out = np.empty((b_iters, 2))
    for b in range(b_iters):
        cx[:] = 0
        cy[:] = 0
        bx[:] = 0
        by[:] = 0
        for _ in range(n):
            cx[cell_x[np.random.randint(0, n)]] += 1
        for _ in range(m):
            cy[cell_y[np.random.randint(0, m)]] += 1
        fx = 0
        fy = 0
        w = 0.0
        s1 = 0.0
        s2 = 0.0
        for i in range(G):
            a = cx[i]
            c = cy[i]
            v = vals[i]
            tot = a + c
            s1 += tot * v
            s2 += tot * v * v
            fx += a
            fy += c
            k = cell2bin[i]
            bx[k] += a
            by[k] += c
            if i < G - 1:
                w += abs(fx * m - fy * n) * (vals[i + 1] - v)
        w /= n * m
        big_n = n + m
        var = s2 / big_n - (s1 / big_n) ** 2
        l1 = 0.0
        for k in range(n_bins):
            l1 += abs(bx[k] / n - by[k] / m)
        out[b, 0] = 0.5 * l1
        out[b, 1] = w / np.sqrt(var) if var > 0.0 else w
    return out


def warm_up() -> None:
    """Trigger jit compilation with toy inputs (cached across processes)."""
    cell = np.zeros(2, np.int64)
    vals = np.array([0.0, 1.0])
    c2b = np.zeros(2, np.int64)
    paired_boot_fine(1, 1, cell, np.ones(2, np.int64), vals, c2b, 1)
