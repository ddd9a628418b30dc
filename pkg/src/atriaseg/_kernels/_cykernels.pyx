# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementations of the hot kernels.

Contracts match atriaseg._kernels.pykernels exactly: identical integer
outputs for labeling/reconstruction/histograms and bit-identical floats
for the CLAHE blend (same operation order and intermediate precision).
"""

import numpy as np

cimport numpy as cnp
from cpython.mem cimport PyMem_Free, PyMem_Malloc, PyMem_Realloc
from libc.math cimport INFINITY

cnp.import_array()


def tile_histograms(const cnp.int32_t[:, :, ::1] bin_idx, bounds_x, bounds_y, bounds_z, int bins):
    nz, ny, nx = bin_idx.shape[0], bin_idx.shape[1], bin_idx.shape[2]
    tile_x = np.searchsorted(np.asarray(bounds_x), np.arange(nx), side="right") - 1
    tile_y = np.searchsorted(np.asarray(bounds_y), np.arange(ny), side="right") - 1
    tile_z = np.searchsorted(np.asarray(bounds_z), np.arange(nz), side="right") - 1
    tx = len(bounds_x) - 1
    ty = len(bounds_y) - 1
    tz = len(bounds_z) - 1
    hists = np.zeros((tz, ty, tx, bins), dtype=np.int64)

    cdef cnp.int64_t[:, :, :, ::1] h = hists
    cdef cnp.int64_t[::1] lx = np.ascontiguousarray(tile_x, dtype=np.int64)
    cdef cnp.int64_t[::1] ly = np.ascontiguousarray(tile_y, dtype=np.int64)
    cdef cnp.int64_t[::1] lz = np.ascontiguousarray(tile_z, dtype=np.int64)
    cdef Py_ssize_t z, y, x
    cdef Py_ssize_t kz, ky
    for z in range(<Py_ssize_t> nz):
        kz = lz[z]
        for y in range(<Py_ssize_t> ny):
            ky = ly[y]
            for x in range(<Py_ssize_t> nx):
                h[kz, ky, lx[x], bin_idx[z, y, x]] += 1
    return hists


def clahe_blend(const cnp.int32_t[:, :, ::1] bin_idx, const cnp.float64_t[:, :, :, ::1] maps,
                const cnp.int32_t[::1] k0x, const cnp.int32_t[::1] k1x, const cnp.float64_t[::1] wx,
                const cnp.int32_t[::1] k0y, const cnp.int32_t[::1] k1y, const cnp.float64_t[::1] wy,
                const cnp.int32_t[::1] k0z, const cnp.int32_t[::1] k1z, const cnp.float64_t[::1] wz,
                double vmin, double vmax):
    cdef Py_ssize_t nz = bin_idx.shape[0], ny = bin_idx.shape[1], nx = bin_idx.shape[2]
    out_arr = np.empty((nz, ny, nx), dtype=np.float32)
    cdef cnp.float32_t[:, :, ::1] out = out_arr
    cdef double rng = vmax - vmin
    cdef Py_ssize_t z, y, x
    cdef Py_ssize_t za, zb, ya, yb, xa, xb
    cdef int b
    cdef double wzv, wza, wyv, wya, wxv, wxa, acc
    for z in range(nz):
        za = k0z[z]; zb = k1z[z]
        wzv = wz[z]; wza = 1.0 - wzv
        for y in range(ny):
            ya = k0y[y]; yb = k1y[y]
            wyv = wy[y]; wya = 1.0 - wyv
            for x in range(nx):
                xa = k0x[x]; xb = k1x[x]
                wxv = wx[x]; wxa = 1.0 - wxv
                b = bin_idx[z, y, x]
                # corner order and float op order mirror pykernels.clahe_blend
                acc = 0.0
                acc = acc + ((wxa * wya) * wza) * maps[za, ya, xa, b]
                acc = acc + ((wxv * wya) * wza) * maps[za, ya, xb, b]
                acc = acc + ((wxa * wyv) * wza) * maps[za, yb, xa, b]
                acc = acc + ((wxv * wyv) * wza) * maps[za, yb, xb, b]
                acc = acc + ((wxa * wya) * wzv) * maps[zb, ya, xa, b]
                acc = acc + ((wxv * wya) * wzv) * maps[zb, ya, xb, b]
                acc = acc + ((wxa * wyv) * wzv) * maps[zb, yb, xa, b]
                acc = acc + ((wxv * wyv) * wzv) * maps[zb, yb, xb, b]
                out[z, y, x] = <cnp.float32_t> (vmin + acc * rng)
    return out_arr


cdef inline Py_ssize_t _find(cnp.int32_t* parent, Py_ssize_t i) noexcept:
    cdef Py_ssize_t root = i, step
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:  # path compression
        step = parent[i]
        parent[i] = <cnp.int32_t> root
        i = step
    return root


def label_components(const cnp.uint8_t[:, :, ::1] mask):
    cdef Py_ssize_t nz = mask.shape[0], ny = mask.shape[1], nx = mask.shape[2]
    out_arr = np.zeros((nz, ny, nx), dtype=np.int32)
    cdef cnp.int32_t[:, :, ::1] out = out_arr
    n_fg = int(np.count_nonzero(np.asarray(mask)))
    if n_fg == 0:
        return out_arr, np.zeros(0, dtype=np.int64)

    parent_arr = np.zeros(n_fg + 1, dtype=np.int32)
    cdef cnp.int32_t[::1] parent_mv = parent_arr
    cdef cnp.int32_t* parent = &parent_mv[0]
    cdef cnp.int32_t next_label = 1
    cdef Py_ssize_t z, y, x, ra, rb
    cdef cnp.int32_t cur
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if mask[z, y, x] == 0:
                    continue
                cur = 0
                if x > 0 and out[z, y, x - 1] != 0:
                    cur = <cnp.int32_t> _find(parent, out[z, y, x - 1])
                if y > 0 and out[z, y - 1, x] != 0:
                    rb = _find(parent, out[z, y - 1, x])
                    if cur == 0:
                        cur = <cnp.int32_t> rb
                    elif rb != cur:
                        if rb < cur:
                            parent[cur] = <cnp.int32_t> rb
                            cur = <cnp.int32_t> rb
                        else:
                            parent[rb] = cur
                if z > 0 and out[z - 1, y, x] != 0:
                    rb = _find(parent, out[z - 1, y, x])
                    if cur == 0:
                        cur = <cnp.int32_t> rb
                    elif rb != cur:
                        if rb < cur:
                            parent[cur] = <cnp.int32_t> rb
                            cur = <cnp.int32_t> rb
                        else:
                            parent[rb] = cur
                if cur == 0:
                    cur = next_label
                    parent[cur] = cur
                    next_label += 1
                out[z, y, x] = cur

    # renumber roots in scan order of first occurrence and count sizes
    final_arr = np.zeros(next_label, dtype=np.int32)
    counts_arr = np.zeros(next_label, dtype=np.int64)
    cdef cnp.int32_t[::1] final = final_arr
    cdef cnp.int64_t[::1] counts = counts_arr
    cdef cnp.int32_t n_comp = 0, fid
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                cur = out[z, y, x]
                if cur == 0:
                    continue
                ra = _find(parent, cur)
                fid = final[ra]
                if fid == 0:
                    n_comp += 1
                    fid = n_comp
                    final[ra] = fid
                out[z, y, x] = fid
                counts[fid - 1] += 1
    return out_arr, counts_arr[:n_comp].copy()


cdef struct _Queue:
    cnp.int64_t* buf
    Py_ssize_t head
    Py_ssize_t tail
    Py_ssize_t cap


cdef inline int _qpush(_Queue* q, cnp.int64_t v) except -1:
    cdef cnp.int64_t* grown
    if q.tail == q.cap:
        q.cap *= 2
        grown = <cnp.int64_t*> PyMem_Realloc(q.buf, q.cap * sizeof(cnp.int64_t))
        if grown == NULL:
            raise MemoryError()
        q.buf = grown
    q.buf[q.tail] = v
    q.tail += 1
    return 0


def reconstruct_erosion(const cnp.uint8_t[:, :, ::1] marker, const cnp.uint8_t[:, :, ::1] mask):
    """Hybrid raster/anti-raster sweeps plus a FIFO queue (Vincent's
    algorithm, erosion dual)."""
    cdef Py_ssize_t nz = marker.shape[0], ny = marker.shape[1], nx = marker.shape[2]
    out_arr = np.array(marker, dtype=np.uint8, copy=True)
    cdef cnp.uint8_t[:, :, ::1] j = out_arr
    cdef const cnp.uint8_t[:, :, ::1] i_ = mask
    cdef Py_ssize_t z, y, x
    cdef cnp.int64_t flat
    cdef int m, val

    # forward raster: propagate minima from scan-order predecessors
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                m = j[z, y, x]
                if x > 0 and j[z, y, x - 1] < m:
                    m = j[z, y, x - 1]
                if y > 0 and j[z, y - 1, x] < m:
                    m = j[z, y - 1, x]
                if z > 0 and j[z - 1, y, x] < m:
                    m = j[z - 1, y, x]
                if m < i_[z, y, x]:
                    m = i_[z, y, x]
                j[z, y, x] = <cnp.uint8_t> m

    cdef _Queue q
    q.cap = 4096
    q.head = 0
    q.tail = 0
    q.buf = <cnp.int64_t*> PyMem_Malloc(q.cap * sizeof(cnp.int64_t))
    if q.buf == NULL:
        raise MemoryError()

    try:
        # backward raster + queue seeding
        for z in range(nz - 1, -1, -1):
            for y in range(ny - 1, -1, -1):
                for x in range(nx - 1, -1, -1):
                    m = j[z, y, x]
                    if x < nx - 1 and j[z, y, x + 1] < m:
                        m = j[z, y, x + 1]
                    if y < ny - 1 and j[z, y + 1, x] < m:
                        m = j[z, y + 1, x]
                    if z < nz - 1 and j[z + 1, y, x] < m:
                        m = j[z + 1, y, x]
                    if m < i_[z, y, x]:
                        m = i_[z, y, x]
                    j[z, y, x] = <cnp.uint8_t> m
                    if ((x < nx - 1 and j[z, y, x + 1] > m and j[z, y, x + 1] > i_[z, y, x + 1])
                            or (y < ny - 1 and j[z, y + 1, x] > m and j[z, y + 1, x] > i_[z, y + 1, x])
                            or (z < nz - 1 and j[z + 1, y, x] > m and j[z + 1, y, x] > i_[z + 1, y, x])):
                        _qpush(&q, (z * ny + y) * nx + x)

        while q.head != q.tail:
            flat = q.buf[q.head]
            q.head += 1
            x = flat % nx
            y = (flat // nx) % ny
            z = flat // (nx * ny)
            val = j[z, y, x]
            if x > 0:
                _maybe_lower(&q, j, i_, z, y, x - 1, val, ny, nx)
            if x < nx - 1:
                _maybe_lower(&q, j, i_, z, y, x + 1, val, ny, nx)
            if y > 0:
                _maybe_lower(&q, j, i_, z, y - 1, x, val, ny, nx)
            if y < ny - 1:
                _maybe_lower(&q, j, i_, z, y + 1, x, val, ny, nx)
            if z > 0:
                _maybe_lower(&q, j, i_, z - 1, y, x, val, ny, nx)
            if z < nz - 1:
                _maybe_lower(&q, j, i_, z + 1, y, x, val, ny, nx)
    finally:
        PyMem_Free(q.buf)
    return out_arr


cdef inline int _maybe_lower(_Queue* q, cnp.uint8_t[:, :, ::1] j, const cnp.uint8_t[:, :, ::1] i_,
                             Py_ssize_t z, Py_ssize_t y, Py_ssize_t x, int val,
                             Py_ssize_t ny, Py_ssize_t nx) except -1:
    cdef int jq = j[z, y, x]
    cdef int lowered
    if jq > val and jq != i_[z, y, x]:
        lowered = val if val > i_[z, y, x] else i_[z, y, x]
        j[z, y, x] = <cnp.uint8_t> lowered
        _qpush(q, (z * ny + y) * nx + x)
    return 0


cdef void _dt1d(double* f, double* d, cnp.int64_t* v, double* bound, Py_ssize_t n,
                double s) noexcept:
    """Exact 1D squared-distance transform with weight s per step; the
    output value at q is ((q - site) * s)**2 + f[site]."""
    cdef double w2 = s * s
    cdef Py_ssize_t k = -1, q, r
    cdef double fq, cross, t
    for q in range(n):
        fq = f[q]
        if fq == INFINITY:
            continue
        if k < 0:
            k = 0
            v[0] = q
            bound[0] = -INFINITY
            bound[1] = INFINITY
            continue
        while True:
            r = v[k]
            cross = (fq + w2 * <double> q * <double> q
                     - (f[r] + w2 * <double> r * <double> r)) \
                / (2.0 * w2 * <double> (q - r))
            if cross <= bound[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        bound[k] = cross
        bound[k + 1] = INFINITY
    if k < 0:
        for q in range(n):
            d[q] = INFINITY
        return
    k = 0
    for q in range(n):
        while bound[k + 1] < <double> q:
            k += 1
        t = <double> (q - v[k]) * s
        d[q] = t * t + f[v[k]]


def distance_to_set(const cnp.uint8_t[:, :, ::1] set_mask, double sx, double sy, double sz):
    """Anisotropic Euclidean distance (mm) from every voxel to the nearest
    set voxel centre; exact, via per-axis lower-envelope passes (x, y, z
    order so term accumulation matches a direct sum)."""
    cdef Py_ssize_t nz = set_mask.shape[0], ny = set_mask.shape[1], nx = set_mask.shape[2]
    work_arr = np.where(np.asarray(set_mask) != 0, 0.0, np.inf)
    cdef cnp.float64_t[:, :, ::1] work = work_arr
    cdef Py_ssize_t n_max = max(nx, max(ny, nz))
    cdef double* f = <double*> PyMem_Malloc(n_max * sizeof(double))
    cdef double* d = <double*> PyMem_Malloc(n_max * sizeof(double))
    cdef double* bound = <double*> PyMem_Malloc((n_max + 1) * sizeof(double))
    cdef cnp.int64_t* v = <cnp.int64_t*> PyMem_Malloc(n_max * sizeof(cnp.int64_t))
    if f == NULL or d == NULL or bound == NULL or v == NULL:
        PyMem_Free(f); PyMem_Free(d); PyMem_Free(bound); PyMem_Free(v)
        raise MemoryError()
    cdef Py_ssize_t z, y, x
    try:
        for z in range(nz):  # along x
            for y in range(ny):
                for x in range(nx):
                    f[x] = work[z, y, x]
                _dt1d(f, d, v, bound, nx, sx)
                for x in range(nx):
                    work[z, y, x] = d[x]
        for z in range(nz):  # along y
            for x in range(nx):
                for y in range(ny):
                    f[y] = work[z, y, x]
                _dt1d(f, d, v, bound, ny, sy)
                for y in range(ny):
                    work[z, y, x] = d[y]
        for y in range(ny):  # along z
            for x in range(nx):
                for z in range(nz):
                    f[z] = work[z, y, x]
                _dt1d(f, d, v, bound, nz, sz)
                for z in range(nz):
                    work[z, y, x] = d[z]
    finally:
        PyMem_Free(f); PyMem_Free(d); PyMem_Free(bound); PyMem_Free(v)
    return np.sqrt(work_arr, out=work_arr)
