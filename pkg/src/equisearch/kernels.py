"""Orbit kernels over flattened edge indices.

Edge ``i = n * n_out + m`` is sent by group element ``k`` to
``in_perms[k, n] * n_out + out_perms[k, m]``; edge permutations are never
materialized. Kernels take the node-major transposes ``in_t[n, k]`` so the
loop over group elements reads contiguous memory. Each kernel returns ``(raw_assignment, raw_count, applications)``
where ``applications`` is the exact number of edge-image evaluations.

Every kernel has two implementations with identical results: a scalar loop
compiled by numba and a numpy version that vectorizes over group elements.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import _accel


def _fast_orbits_loop(in_t, out_t):
    n_in, k_total = in_t.shape
    n_out = out_t.shape[0]
    size = n_in * n_out
    visited = np.zeros(size, dtype=np.bool_)
    assign = np.arange(size)
    queue = np.empty(size, dtype=np.int64)
    c = -1
    applications = 0
    for i in range(size):
        if not visited[i]:
            visited[i] = True
            head = 0
            tail = 0
            queue[tail] = i
            tail += 1
            c += 1
            while head < tail:
                index = queue[head]
                head += 1
                assign[index] = c
                n = index // n_out
                m = index - n * n_out
                for k in range(k_total):
                    index_g = in_t[n, k] * n_out + out_t[m, k]
                    if not visited[index_g]:
                        visited[index_g] = True
                        queue[tail] = index_g
                        tail += 1
                        assign[index_g] = c
                applications += k_total
    return assign, c + 1, applications


def _basic_orbits_loop(in_t, out_t, mark_visited):
    n_in, k_total = in_t.shape
    n_out = out_t.shape[0]
    size = n_in * n_out
    visited = np.zeros(size, dtype=np.bool_)
    assign = np.arange(size)
    c = -1
    applications = 0
    for i in range(size):
        if not visited[i]:
            c += 1
            n = i // n_out
            m = i - n * n_out
            for k in range(k_total):
                index_g = in_t[n, k] * n_out + out_t[m, k]
                applications += 1
                assign[index_g] = c
                if mark_visited:
                    visited[index_g] = True
    return assign, c + 1, applications


def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


_find_nb = _accel.njit(_find)


def _merge_loop(p, q):
    size = p.size
    parent = np.arange(size)
    first_p = np.full(p.max() + 1 if size else 0, -1, dtype=np.int64)
    first_q = np.full(q.max() + 1 if size else 0, -1, dtype=np.int64)
    for i in range(size):
        a = p[i]
        if first_p[a] < 0:
            first_p[a] = i
        else:
            ra = _find_nb(parent, i)
            rb = _find_nb(parent, first_p[a])
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        b = q[i]
        if first_q[b] < 0:
            first_q[b] = i
        else:
            ra = _find_nb(parent, i)
            rb = _find_nb(parent, first_q[b])
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    out = np.empty(size, dtype=np.int64)
    for i in range(size):
        out[i] = _find_nb(parent, i)
    return out


def _canon_loop(labels, bound):
    seen = np.full(bound, -1, dtype=np.int64)
    out = np.empty(labels.size, dtype=np.int64)
    c = 0
    for i in range(labels.size):
        lab = labels[i]
        if seen[lab] < 0:
            seen[lab] = c
            c += 1
        out[i] = seen[lab]
    return out, c


_fast_orbits_nb = _accel.njit(_fast_orbits_loop)
_basic_orbits_nb = _accel.njit(_basic_orbits_loop)
_merge_nb = _accel.njit(_merge_loop)
_canon_nb = _accel.njit(_canon_loop)


# -- numpy fallbacks -----------------------------------------------------------


def _fast_orbits_np(in_t, out_t):
    n_in, k_total = in_t.shape
    n_out = out_t.shape[0]
    size = n_in * n_out
    visited = np.zeros(size, dtype=bool)
    assign = np.arange(size)
    queue = np.empty(size, dtype=np.int64)
    c = -1
    for i in range(size):
        if visited[i]:
            continue
        visited[i] = True
        queue[0] = i
        head, tail = 0, 1
        c += 1
        while head < tail:
            index = queue[head]
            head += 1
            assign[index] = c
            n, m = divmod(int(index), n_out)
            images = in_t[n] * n_out + out_t[m]
            fresh = images[~visited[images]]
            if fresh.size:
                _, first = np.unique(fresh, return_index=True)
                fresh = fresh[np.sort(first)]
                visited[fresh] = True
                assign[fresh] = c
                queue[tail:tail + fresh.size] = fresh
                tail += fresh.size
    return assign, c + 1, size * k_total


def _basic_orbits_np(in_t, out_t, mark_visited):
    n_in, k_total = in_t.shape
    n_out = out_t.shape[0]
    size = n_in * n_out
    visited = np.zeros(size, dtype=bool)
    assign = np.arange(size)
    c = -1
    applications = 0
    for i in range(size):
        if visited[i]:
            continue
        c += 1
        n, m = divmod(i, n_out)
        images = in_t[n] * n_out + out_t[m]
        applications += k_total
        assign[images] = c
        if mark_visited:
            visited[images] = True
    return assign, c + 1, applications


def _merge_np(p, q):
    size = p.size
    if size == 0:
        return np.zeros(0, dtype=np.int64)
    cp = int(p.max()) + 1
    cq = int(q.max()) + 1
    graph = coo_matrix((np.ones(size), (p, q + cp)), shape=(cp + cq, cp + cq))
    _, comp = connected_components(graph, directed=False)
    return comp[p].astype(np.int64)


# -- dispatch ------------------------------------------------------------------


def _prep(in_perms, out_perms):
    in_perms, out_perms = np.asarray(in_perms), np.asarray(out_perms)
    # node ids are small; int32 halves the memory traffic of the hot loops
    small = max(in_perms.shape[-1], out_perms.shape[-1]) < 2**31
    dt = np.int32 if small else np.int64
    return np.ascontiguousarray(in_perms.T, dtype=dt), np.ascontiguousarray(out_perms.T, dtype=dt)


def fast_orbits(in_perms: np.ndarray, out_perms: np.ndarray):
    in_t, out_t = _prep(in_perms, out_perms)
    if _accel.backend() == "numba":
        return _fast_orbits_nb(in_t, out_t)
    return _fast_orbits_np(in_t, out_t)


def basic_orbits(in_perms: np.ndarray, out_perms: np.ndarray, mark_visited: bool = False):
    in_t, out_t = _prep(in_perms, out_perms)
    if _accel.backend() == "numba":
        return _basic_orbits_nb(in_t, out_t, mark_visited)
    return _basic_orbits_np(in_t, out_t, mark_visited)


def merge_labels(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Component labels of the co-membership graph of two partitions (not canonical)."""
    p = np.ascontiguousarray(p, dtype=np.int64)
    q = np.ascontiguousarray(q, dtype=np.int64)
    if _accel.backend() == "numba":
        return _merge_nb(p, q)
    return _merge_np(p, q)


def canonical_labels(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Relabel so ids appear in order of each block's smallest member."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return np.zeros(0, dtype=np.int64), 0
    if _accel.backend() == "numba" and labels.dtype.kind in "iu":
        lo, hi = int(labels.min()), int(labels.max())
        if lo >= 0 and hi < 4 * labels.size:
            return _canon_nb(np.ascontiguousarray(labels, dtype=np.int64), hi + 1)
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    return rank[inv.reshape(-1)], int(first.size)
