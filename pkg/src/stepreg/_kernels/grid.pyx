# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Uniform-grid neighbor kernels.

Same contract as the numpy fallback backend, accelerated with a hashed
voxel grid. Squared distances accumulate as dx*dx + dy*dy + dz*dz so the
two backends agree bitwise; nearest-neighbor ties resolve to the lowest
reference index. Reference clouds below _BRUTE_THRESHOLD points skip the
grid and scan directly.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor as c_floor

cnp.import_array()

_BRUTE_THRESHOLD = 256


cdef inline double _sq3(double dx, double dy, double dz) nogil:
    return dx * dx + dy * dy + dz * dz


cdef inline Py_ssize_t _bsearch(const cnp.int64_t[::1] keys, cnp.int64_t value) nogil:
    """Index of value in sorted keys, or -1."""
    cdef Py_ssize_t lo = 0, hi = keys.shape[0] - 1, mid
    while lo <= hi:
        mid = (lo + hi) >> 1
        if keys[mid] == value:
            return mid
        if keys[mid] < value:
            lo = mid + 1
        else:
            hi = mid - 1
    return -1


class _Grid:
    """Sorted-bucket uniform grid over a reference cloud."""

    __slots__ = ("cell", "mins", "dims", "ref_sorted", "orig_index", "keys", "starts", "ends")

    def __init__(self, ref, cell):
        mins = ref.min(axis=0)
        coords = np.floor((ref - mins) / cell).astype(np.int64)
        dims = coords.max(axis=0) + 1
        if int(dims[0]) * int(dims[1]) * int(dims[2]) > 2 ** 62:
            raise OverflowError("grid too large")
        flat = (coords[:, 0] * dims[1] + coords[:, 1]) * dims[2] + coords[:, 2]
        order = np.argsort(flat, kind="stable")
        flat_sorted = flat[order]
        keys, starts = np.unique(flat_sorted, return_index=True)
        self.cell = float(cell)
        self.mins = mins
        self.dims = dims
        self.ref_sorted = np.ascontiguousarray(ref[order])
        self.orig_index = np.ascontiguousarray(order.astype(np.int64))
        self.keys = np.ascontiguousarray(keys)
        self.starts = np.ascontiguousarray(starts.astype(np.int64))
        ends = np.empty_like(self.starts)
        ends[:-1] = self.starts[1:]
        ends[-1] = ref.shape[0]
        self.ends = ends


def nearest_neighbor(query, ref):
    cdef Py_ssize_t n = query.shape[0], m = ref.shape[0]
    idx = np.empty(n, dtype=np.int64)
    sq = np.empty(n, dtype=np.float64)
    cdef const double[:, ::1] q = query
    cdef const double[:, ::1] r = ref
    cdef cnp.int64_t[::1] idx_v = idx
    cdef double[::1] sq_v = sq

    cdef double extent, h
    grid = None
    if m >= _BRUTE_THRESHOLD:
        span = ref.max(axis=0) - ref.min(axis=0)
        extent = float(span.max())
        if extent > 0.0:
            h = extent / max(1.0, round(m ** (1.0 / 3.0)))
            try:
                grid = _Grid(ref, h)
            except OverflowError:
                grid = None
    if grid is None:
        _nn_brute(q, r, idx_v, sq_v)
        return idx, sq

    cdef const double[:, ::1] rs = grid.ref_sorted
    cdef const cnp.int64_t[::1] oi = grid.orig_index
    cdef const cnp.int64_t[::1] keys = grid.keys
    cdef const cnp.int64_t[::1] starts = grid.starts
    cdef const cnp.int64_t[::1] ends = grid.ends
    cdef double cell = grid.cell
    cdef double minx = grid.mins[0], miny = grid.mins[1], minz = grid.mins[2]
    cdef cnp.int64_t nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2]

    cdef Py_ssize_t i, j, k
    cdef cnp.int64_t cx, cy, cz, ax, ay, az, rho, max_rho, key
    cdef cnp.int64_t x0, x1, y0, y1, z0, z1
    cdef double best, d, ring_min
    cdef cnp.int64_t best_i
    cdef Py_ssize_t cell_pos

    with nogil:
        for i in range(n):
            cx = <cnp.int64_t>c_floor((q[i, 0] - minx) / cell)
            cy = <cnp.int64_t>c_floor((q[i, 1] - miny) / cell)
            cz = <cnp.int64_t>c_floor((q[i, 2] - minz) / cell)
            max_rho = _max6(cx, nx - 1 - cx, cy, ny - 1 - cy, cz, nz - 1 - cz)
            best = -1.0
            best_i = -1
            for rho in range(0, max_rho + 1):
                if best_i >= 0:
                    ring_min = (rho - 1) * cell
                    if ring_min > 0 and best <= ring_min * ring_min:
                        break
                x0 = cx - rho if cx - rho > 0 else 0
                x1 = cx + rho if cx + rho < nx - 1 else nx - 1
                for ax in range(x0, x1 + 1):
                    y0 = cy - rho if cy - rho > 0 else 0
                    y1 = cy + rho if cy + rho < ny - 1 else ny - 1
                    for ay in range(y0, y1 + 1):
                        z0 = cz - rho if cz - rho > 0 else 0
                        z1 = cz + rho if cz + rho < nz - 1 else nz - 1
                        for az in range(z0, z1 + 1):
                            # shell only: skip cells whose Chebyshev radius != rho
                            if (_iabs(ax - cx) != rho and _iabs(ay - cy) != rho
                                    and _iabs(az - cz) != rho):
                                continue
                            key = (ax * ny + ay) * nz + az
                            cell_pos = _bsearch(keys, key)
                            if cell_pos < 0:
                                continue
                            for j in range(starts[cell_pos], ends[cell_pos]):
                                d = _sq3(q[i, 0] - rs[j, 0], q[i, 1] - rs[j, 1], q[i, 2] - rs[j, 2])
                                if best_i < 0 or d < best or (d == best and oi[j] < best_i):
                                    best = d
                                    best_i = oi[j]
            idx_v[i] = best_i
            sq_v[i] = best
    return idx, sq


def knn(query, ref, Py_ssize_t k):
    cdef Py_ssize_t n = query.shape[0], m = ref.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    dbuf = np.empty(k, dtype=np.float64)
    cdef const double[:, ::1] q = query
    cdef const double[:, ::1] r = ref
    cdef cnp.int64_t[:, ::1] out_v = out
    cdef double[::1] best_d = dbuf

    cdef double extent, h
    grid = None
    if m >= _BRUTE_THRESHOLD:
        span = ref.max(axis=0) - ref.min(axis=0)
        extent = float(span.max())
        if extent > 0.0:
            h = extent / max(1.0, round(m ** (1.0 / 3.0)))
            try:
                grid = _Grid(ref, h)
            except OverflowError:
                grid = None
    cdef Py_ssize_t i, j
    cdef double d
    if grid is None:
        with nogil:
            for i in range(n):
                for j in range(m):
                    d = _sq3(q[i, 0] - r[j, 0], q[i, 1] - r[j, 1], q[i, 2] - r[j, 2])
                    _k_insert(best_d, out_v, i, k, d, j)
        return out

    cdef const double[:, ::1] rs = grid.ref_sorted
    cdef const cnp.int64_t[::1] oi = grid.orig_index
    cdef const cnp.int64_t[::1] keys = grid.keys
    cdef const cnp.int64_t[::1] starts = grid.starts
    cdef const cnp.int64_t[::1] ends = grid.ends
    cdef double cell = grid.cell
    cdef double minx = grid.mins[0], miny = grid.mins[1], minz = grid.mins[2]
    cdef cnp.int64_t nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2]
    cdef cnp.int64_t cx, cy, cz, ax, ay, az, rho, max_rho, key
    cdef cnp.int64_t x0, x1, y0, y1, z0, z1
    cdef double ring_min
    cdef Py_ssize_t cell_pos, filled

    with nogil:
        for i in range(n):
            cx = <cnp.int64_t>c_floor((q[i, 0] - minx) / cell)
            cy = <cnp.int64_t>c_floor((q[i, 1] - miny) / cell)
            cz = <cnp.int64_t>c_floor((q[i, 2] - minz) / cell)
            max_rho = _max6(cx, nx - 1 - cx, cy, ny - 1 - cy, cz, nz - 1 - cz)
            filled = 0
            for j in range(k):
                best_d[j] = -1.0
                out_v[i, j] = -1
            for rho in range(0, max_rho + 1):
                if filled == k:
                    ring_min = (rho - 1) * cell
                    if ring_min > 0 and best_d[k - 1] <= ring_min * ring_min:
                        break
                x0 = cx - rho if cx - rho > 0 else 0
                x1 = cx + rho if cx + rho < nx - 1 else nx - 1
                for ax in range(x0, x1 + 1):
                    y0 = cy - rho if cy - rho > 0 else 0
                    y1 = cy + rho if cy + rho < ny - 1 else ny - 1
                    for ay in range(y0, y1 + 1):
                        z0 = cz - rho if cz - rho > 0 else 0
                        z1 = cz + rho if cz + rho < nz - 1 else nz - 1
                        for az in range(z0, z1 + 1):
                            if (_iabs(ax - cx) != rho and _iabs(ay - cy) != rho
                                    and _iabs(az - cz) != rho):
                                continue
                            key = (ax * ny + ay) * nz + az
                            cell_pos = _bsearch(keys, key)
                            if cell_pos < 0:
                                continue
                            for j in range(starts[cell_pos], ends[cell_pos]):
                                d = _sq3(q[i, 0] - rs[j, 0], q[i, 1] - rs[j, 1],
                                         q[i, 2] - rs[j, 2])
                                filled = _k_insert_count(best_d, out_v, i, k, filled, d, oi[j])
    return out


cdef inline void _k_insert(double[::1] best_d, cnp.int64_t[:, ::1] out, Py_ssize_t row,
                           Py_ssize_t k, double d, cnp.int64_t idx) nogil:
    # brute path: first k entries fill in index order, then sorted insertion
    cdef Py_ssize_t pos
    if idx < k:
        pos = idx
        best_d[pos] = d
        out[row, pos] = idx
        if idx == k - 1:
            _k_sort(best_d, out, row, k)
        return
    if d > best_d[k - 1] or (d == best_d[k - 1] and idx > out[row, k - 1]):
        return
    pos = k - 1
    while pos > 0 and (best_d[pos - 1] > d or (best_d[pos - 1] == d and out[row, pos - 1] > idx)):
        best_d[pos] = best_d[pos - 1]
        out[row, pos] = out[row, pos - 1]
        pos -= 1
    best_d[pos] = d
    out[row, pos] = idx


cdef inline void _k_sort(double[::1] best_d, cnp.int64_t[:, ::1] out, Py_ssize_t row,
                         Py_ssize_t k) nogil:
    cdef Py_ssize_t a, b
    cdef double d
    cdef cnp.int64_t ix
    for a in range(1, k):
        d = best_d[a]
        ix = out[row, a]
        b = a
        while b > 0 and (best_d[b - 1] > d or (best_d[b - 1] == d and out[row, b - 1] > ix)):
            best_d[b] = best_d[b - 1]
            out[row, b] = out[row, b - 1]
            b -= 1
        best_d[b] = d
        out[row, b] = ix


cdef inline Py_ssize_t _k_insert_count(double[::1] best_d, cnp.int64_t[:, ::1] out,
                                       Py_ssize_t row, Py_ssize_t k, Py_ssize_t filled,
                                       double d, cnp.int64_t idx) nogil:
    cdef Py_ssize_t pos
    if filled < k:
        pos = filled
        while pos > 0 and (best_d[pos - 1] > d or (best_d[pos - 1] == d and out[row, pos - 1] > idx)):
            best_d[pos] = best_d[pos - 1]
            out[row, pos] = out[row, pos - 1]
            pos -= 1
        best_d[pos] = d
        out[row, pos] = idx
        return filled + 1
    if d > best_d[k - 1] or (d == best_d[k - 1] and idx > out[row, k - 1]):
        return filled
    pos = k - 1
    while pos > 0 and (best_d[pos - 1] > d or (best_d[pos - 1] == d and out[row, pos - 1] > idx)):
        best_d[pos] = best_d[pos - 1]
        out[row, pos] = out[row, pos - 1]
        pos -= 1
    best_d[pos] = d
    out[row, pos] = idx
    return filled


cdef inline cnp.int64_t _iabs(cnp.int64_t v) nogil:
    return -v if v < 0 else v


cdef inline cnp.int64_t _max6(cnp.int64_t a, cnp.int64_t b, cnp.int64_t c,
                              cnp.int64_t d, cnp.int64_t e, cnp.int64_t f) nogil:
    cdef cnp.int64_t m = a
    if b > m: m = b
    if c > m: m = c
    if d > m: m = d
    if e > m: m = e
    if f > m: m = f
    return m


cdef void _nn_brute(const double[:, ::1] q, const double[:, ::1] r,
                    cnp.int64_t[::1] idx, double[::1] sq) nogil:
    cdef Py_ssize_t i, j
    cdef double best, d
    cdef cnp.int64_t best_i
    for i in range(q.shape[0]):
        best = _sq3(q[i, 0] - r[0, 0], q[i, 1] - r[0, 1], q[i, 2] - r[0, 2])
        best_i = 0
        for j in range(1, r.shape[0]):
            d = _sq3(q[i, 0] - r[j, 0], q[i, 1] - r[j, 1], q[i, 2] - r[j, 2])
            if d < best:
                best = d
                best_i = j
        idx[i] = best_i
        sq[i] = best


def has_neighbor(query, ref, double radius):
    cdef Py_ssize_t n = query.shape[0], m = ref.shape[0]
    out = np.zeros(n, dtype=bool)
    if m == 0:
        return out
    cdef const double[:, ::1] q = query
    cdef const double[:, ::1] r = ref
    cdef cnp.uint8_t[::1] out_v = out.view(np.uint8)
    cdef double r2 = radius * radius
    cdef Py_ssize_t i, j

    grid = None
    if m >= _BRUTE_THRESHOLD:
        try:
            grid = _Grid(ref, radius)
        except OverflowError:
            grid = None
    if grid is None:
        with nogil:
            for i in range(n):
                for j in range(m):
                    if _sq3(q[i, 0] - r[j, 0], q[i, 1] - r[j, 1], q[i, 2] - r[j, 2]) <= r2:
                        out_v[i] = 1
                        break
        return out

    cdef const double[:, ::1] rs = grid.ref_sorted
    cdef const cnp.int64_t[::1] keys = grid.keys
    cdef const cnp.int64_t[::1] starts = grid.starts
    cdef const cnp.int64_t[::1] ends = grid.ends
    cdef double cell = grid.cell
    cdef double minx = grid.mins[0], miny = grid.mins[1], minz = grid.mins[2]
    cdef cnp.int64_t nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2]
    cdef cnp.int64_t cx, cy, cz, ax, ay, az, key
    cdef Py_ssize_t cell_pos
    cdef bint found

    with nogil:
        for i in range(n):
            cx = <cnp.int64_t>c_floor((q[i, 0] - minx) / cell)
            cy = <cnp.int64_t>c_floor((q[i, 1] - miny) / cell)
            cz = <cnp.int64_t>c_floor((q[i, 2] - minz) / cell)
            found = 0
            for ax in range(cx - 1, cx + 2):
                if ax < 0 or ax >= nx or found:
                    continue
                for ay in range(cy - 1, cy + 2):
                    if ay < 0 or ay >= ny or found:
                        continue
                    for az in range(cz - 1, cz + 2):
                        if az < 0 or az >= nz or found:
                            continue
                        key = (ax * ny + ay) * nz + az
                        cell_pos = _bsearch(keys, key)
                        if cell_pos < 0:
                            continue
                        for j in range(starts[cell_pos], ends[cell_pos]):
                            if _sq3(q[i, 0] - rs[j, 0], q[i, 1] - rs[j, 1],
                                    q[i, 2] - rs[j, 2]) <= r2:
                                found = 1
                                break
            out_v[i] = found
    return out


def label_hits(query, ref, labels, Py_ssize_t n_labels, double radius):
    cdef Py_ssize_t n = query.shape[0], m = ref.shape[0]
    out = np.zeros((n, n_labels), dtype=bool)
    if m == 0:
        return out
    cdef const double[:, ::1] q = query
    cdef const double[:, ::1] r = ref
    cdef const cnp.int64_t[::1] lab = labels
    cdef cnp.uint8_t[:, ::1] out_v = out.view(np.uint8)
    cdef double r2 = radius * radius
    cdef Py_ssize_t i, j

    grid = None
    if m >= _BRUTE_THRESHOLD:
        try:
            grid = _Grid(ref, radius)
        except OverflowError:
            grid = None
    if grid is None:
        with nogil:
            for i in range(n):
                for j in range(m):
                    if _sq3(q[i, 0] - r[j, 0], q[i, 1] - r[j, 1], q[i, 2] - r[j, 2]) <= r2:
                        out_v[i, lab[j]] = 1
        return out

    lab_sorted = labels[grid.orig_index]
    cdef const double[:, ::1] rs = grid.ref_sorted
    cdef const cnp.int64_t[::1] ls = lab_sorted
    cdef const cnp.int64_t[::1] keys = grid.keys
    cdef const cnp.int64_t[::1] starts = grid.starts
    cdef const cnp.int64_t[::1] ends = grid.ends
    cdef double cell = grid.cell
    cdef double minx = grid.mins[0], miny = grid.mins[1], minz = grid.mins[2]
    cdef cnp.int64_t nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2]
    cdef cnp.int64_t cx, cy, cz, ax, ay, az, key
    cdef Py_ssize_t cell_pos

    with nogil:
        for i in range(n):
            cx = <cnp.int64_t>c_floor((q[i, 0] - minx) / cell)
            cy = <cnp.int64_t>c_floor((q[i, 1] - miny) / cell)
            cz = <cnp.int64_t>c_floor((q[i, 2] - minz) / cell)
            for ax in range(cx - 1, cx + 2):
                if ax < 0 or ax >= nx:
                    continue
                for ay in range(cy - 1, cy + 2):
                    if ay < 0 or ay >= ny:
                        continue
                    for az in range(cz - 1, cz + 2):
                        if az < 0 or az >= nz:
                            continue
                        key = (ax * ny + ay) * nz + az
                        cell_pos = _bsearch(keys, key)
                        if cell_pos < 0:
                            continue
                        for j in range(starts[cell_pos], ends[cell_pos]):
                            if _sq3(q[i, 0] - rs[j, 0], q[i, 1] - rs[j, 1],
                                    q[i, 2] - rs[j, 2]) <= r2:
                                out_v[i, ls[j]] = 1
    return out
