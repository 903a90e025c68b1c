"""Independent re-implementations used as test oracles.

These deliberately avoid the package's code paths: direction sets are
bitmasks, shortest paths come from Floyd-Warshall, and per-plot errors are
plain loops over tuples.
"""

from __future__ import annotations

import math

DIRS = ("north-west", "north-east", "south-west", "south-east")


def mask(dirs) -> int:
    m = 0
    for d in dirs:
        m |= 1 << DIRS.index(getattr(d, "value", d))
    return m


def popcount(m: int) -> int:
    return bin(m).count("1")


def jaccard_mask(a: int, b: int) -> float:
    union = popcount(a | b)
    if union == 0:
        return 0.0
    return 1.0 - popcount(a & b) / union


def npv_error(rows) -> float:
    """rows: list of (m_gt, h_gt, m_p, h_p)."""
    total = 0.0
    for m_gt, h_gt, m_p, h_p in rows:
        total += abs(m_gt - m_p) + abs(h_gt - h_p)
    return total / len(rows)


def conn_error(rows) -> float:
    """rows: list of (md_gt, hd_gt, md_p, hd_p) bitmasks."""
    total = 0.0
    for md_gt, hd_gt, md_p, hd_p in rows:
        total += jaccard_mask(md_gt, md_p) + jaccard_mask(hd_gt, hd_p)
    return total / len(rows)


def nudge_error(rows) -> float:
    """rows: list of (md_gt, hd_gt, m_p, h_p) with direction bitmasks."""
    total = 0.0
    for md_gt, hd_gt, m_p, h_p in rows:
        total += abs(popcount(md_gt) / 4 - m_p) + abs(popcount(hd_gt) / 4 - h_p)
    return total / len(rows)


def iic(areas, edges, total_area) -> float:
    """Explicit double sum with Floyd-Warshall link counts."""
    n = len(areas)
    inf = math.inf
    d = [[0 if i == j else inf for j in range(n)] for i in range(n)]
    for u, v in edges:
        d[u][v] = d[v][u] = 1
    for k in range(n):
        for i in range(n):
            for j in range(n):
                if d[i][k] + d[k][j] < d[i][j]:
                    d[i][j] = d[i][k] + d[k][j]
    s = 0.0
    for i in range(n):
        for j in range(n):
            if d[i][j] != inf:
                s += areas[i] * areas[j] / (1 + d[i][j])
    return s / total_area**2
