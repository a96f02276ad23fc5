# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Every function here has a line-for-line twin in ``_pykernels``; the two must
stay in sync (tests/test_core_parity.py checks them against each other).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p
from libc.stdlib cimport malloc, realloc, free, calloc
from libc.stdint cimport uint64_t, int64_t, uint8_t

cnp.import_array()

cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil
    void __builtin_prefetch(const void *) nogil


# ---------------------------------------------------------------------------
# PV-DBOW
# ---------------------------------------------------------------------------

cdef inline double _log_sigmoid_neg(double f) noexcept nogil:
    # -log(sigmoid(f)), stable for large |f|
    if f > 0:
        return log1p(exp(-f))
    return -f + log1p(exp(f))


def pvdbow_epoch(float[:, ::1] doc_vecs, float[:, ::1] out_vecs,
                 const int[::1] pair_docs, const int[::1] pair_words,
                 const int[:, ::1] negs, const float[::1] lrs):
    """Run one SGD pass over (doc, word) pairs; returns the summed pair loss."""
    cdef Py_ssize_t n_pairs = pair_docs.shape[0]
    cdef int dim = doc_vecs.shape[1]
    cdef int n_neg = negs.shape[1]
    cdef double *grad = <double *> malloc(dim * sizeof(double))
    cdef Py_ssize_t p
    cdef int t, j, word, target
    cdef double f, g, label, lr, total = 0.0
    cdef float *v
    cdef float *u
    if grad == NULL:
        raise MemoryError()
    with nogil:
        for p in range(n_pairs):
            v = &doc_vecs[pair_docs[p], 0]
            word = pair_words[p]
            lr = lrs[p]
            for j in range(dim):
                grad[j] = 0.0
            for t in range(n_neg + 1):
                if t == 0:
                    target = word
                    label = 1.0
                else:
                    target = negs[p, t - 1]
                    if target == word:
                        continue
                    label = 0.0
                u = &out_vecs[target, 0]
                f = 0.0
                for j in range(dim):
                    f += <double> v[j] * <double> u[j]
                if label == 1.0:
                    total += _log_sigmoid_neg(f)
                else:
                    total += _log_sigmoid_neg(-f)
                g = (label - 1.0 / (1.0 + exp(-f))) * lr
                for j in range(dim):
                    grad[j] += g * <double> u[j]
                for j in range(dim):
                    u[j] += <float> (g * <double> v[j])
            for j in range(dim):
                v[j] += <float> grad[j]
    free(grad)
    return total


# ---------------------------------------------------------------------------
# HNSW
# ---------------------------------------------------------------------------

ctypedef struct Heap:
    double *sim
    int *idx
    int size
    int cap
    bint worst_on_top


ctypedef struct Graph:
    const float *vecs
    int n
    int dim
    int M
    int M0
    int *links0
    int *counts0
    const int64_t *up_offset
    int *links_up
    int *counts_up


cdef inline bint _ahead(double s1, int i1, double s2, int i2) noexcept nogil:
    # (s1, i1) ranks ahead of (s2, i2): higher similarity, then lower index
    return s1 > s2 or (s1 == s2 and i1 < i2)


cdef inline bint _above(Heap *h, int a, int b) noexcept nogil:
    if h.worst_on_top:
        return _ahead(h.sim[b], h.idx[b], h.sim[a], h.idx[a])
    return _ahead(h.sim[a], h.idx[a], h.sim[b], h.idx[b])


cdef inline void _swap(Heap *h, int a, int b) noexcept nogil:
    cdef double s = h.sim[a]
    cdef int i = h.idx[a]
    h.sim[a] = h.sim[b]
    h.idx[a] = h.idx[b]
    h.sim[b] = s
    h.idx[b] = i


cdef int _heap_init(Heap *h, int cap, bint worst_on_top) noexcept nogil:
    h.sim = <double *> malloc(cap * sizeof(double))
    h.idx = <int *> malloc(cap * sizeof(int))
    h.size = 0
    h.cap = cap
    h.worst_on_top = worst_on_top
    if h.sim == NULL or h.idx == NULL:
        return -1
    return 0


cdef void _heap_free(Heap *h) noexcept nogil:
    free(h.sim)
    free(h.idx)


cdef int _push(Heap *h, double sim, int idx) noexcept nogil:
    cdef int pos, parent
    if h.size == h.cap:
        h.cap *= 2
        h.sim = <double *> realloc(h.sim, h.cap * sizeof(double))
        h.idx = <int *> realloc(h.idx, h.cap * sizeof(int))
        if h.sim == NULL or h.idx == NULL:
            return -1
    pos = h.size
    h.sim[pos] = sim
    h.idx[pos] = idx
    h.size += 1
    while pos > 0:
        parent = (pos - 1) >> 1
        if _above(h, pos, parent):
            _swap(h, pos, parent)
            pos = parent
        else:
            break
    return 0


cdef void _pop(Heap *h) noexcept nogil:
    cdef int pos = 0, left, right, best
    h.size -= 1
    if h.size == 0:
        return
    h.sim[0] = h.sim[h.size]
    h.idx[0] = h.idx[h.size]
    while True:
        left = 2 * pos + 1
        right = left + 1
        best = pos
        if left < h.size and _above(h, left, best):
            best = left
        if right < h.size and _above(h, right, best):
            best = right
        if best == pos:
            break
        _swap(h, pos, best)
        pos = best


cdef inline double _dot(const float *a, const float *b, int dim) noexcept nogil:
    # four independent accumulators so the compiler can vectorize
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef int j = 0
    while j + 4 <= dim:
        s0 += <double> a[j] * <double> b[j]
        s1 += <double> a[j + 1] * <double> b[j + 1]
        s2 += <double> a[j + 2] * <double> b[j + 2]
        s3 += <double> a[j + 3] * <double> b[j + 3]
        j += 4
    while j < dim:
        s0 += <double> a[j] * <double> b[j]
        j += 1
    return (s0 + s1) + (s2 + s3)


cdef inline const float *_vec(Graph *g, int i) noexcept nogil:
    return g.vecs + <int64_t> i * g.dim


cdef inline int *_links(Graph *g, int i, int level, int **count) noexcept nogil:
    cdef int64_t row
    if level == 0:
        count[0] = g.counts0 + i
        return g.links0 + <int64_t> i * g.M0
    row = g.up_offset[i] + level - 1
    count[0] = g.counts_up + row
    return g.links_up + row * g.M


cdef int _greedy(Graph *g, const float *q, int cur, double *cur_sim, int level) noexcept nogil:
    cdef bint changed = True
    cdef int *links
    cdef int *cnt
    cdef int t, e, n_links
    cdef double s
    while changed:
        changed = False
        links = _links(g, cur, level, &cnt)
        n_links = cnt[0]
        for t in range(n_links):
            e = links[t]
            s = _dot(q, _vec(g, e), g.dim)
            if s > cur_sim[0]:
                cur_sim[0] = s
                cur = e
                changed = True
    return cur


ctypedef fused mark_t:
    unsigned char
    unsigned int


cdef int _search_layer(Graph *g, const float *q, const int *ep, const double *ep_sim,
                       int n_ep, int ef, int level, mark_t *visited,
                       mark_t tag, Heap *cand, Heap *top) noexcept nogil:
    cdef int t, c, e, n_links
    cdef double cs, s
    cdef int *links
    cdef int *cnt
    cand.size = 0
    top.size = 0
    for t in range(n_ep):
        visited[ep[t]] = tag
        if _push(cand, ep_sim[t], ep[t]) or _push(top, ep_sim[t], ep[t]):
            return -1
        if top.size > ef:
            _pop(top)
    while cand.size > 0:
        cs = cand.sim[0]
        c = cand.idx[0]
        _pop(cand)
        if cs < top.sim[0]:
            break
        links = _links(g, c, level, &cnt)
        n_links = cnt[0]
        for t in range(n_links):
            if visited[links[t]] != tag:
                __builtin_prefetch(_vec(g, links[t]))
        for t in range(n_links):
            e = links[t]
            if visited[e] == tag:
                continue
            visited[e] = tag
            s = _dot(q, _vec(g, e), g.dim)
            if top.size < ef or s > top.sim[0]:
                if _push(cand, s, e) or _push(top, s, e):
                    return -1
                if top.size > ef:
                    _pop(top)
    return 0


cdef int _drain_best_first(Heap *top, int *out_idx, double *out_sim) noexcept nogil:
    # empties a worst-on-top heap into arrays ordered best first
    cdef int n = top.size, t
    for t in range(n - 1, -1, -1):
        out_idx[t] = top.idx[0]
        out_sim[t] = top.sim[0]
        _pop(top)
    return n


cdef int _select(Graph *g, const int *cand_idx, const double *cand_sim, int n_cand,
                 int m, int *out) noexcept nogil:
    # diversity heuristic: keep a candidate only if it is closer to the base
    # point than to every neighbor already kept
    cdef int t, u, n_out = 0, c
    cdef bint good
    if n_cand <= m:
        for t in range(n_cand):
            out[t] = cand_idx[t]
        return n_cand
    for t in range(n_cand):
        c = cand_idx[t]
        good = True
        for u in range(n_out):
            if _dot(_vec(g, c), _vec(g, out[u]), g.dim) > cand_sim[t]:
                good = False
                break
        if good:
            out[n_out] = c
            n_out += 1
            if n_out >= m:
                break
    return n_out


def hnsw_build(const float[:, ::1] vecs, const int[::1] levels,
               int[:, ::1] links0, int[::1] counts0, const int64_t[::1] up_offset,
               int[:, ::1] links_up, int[::1] counts_up, int ef_construction):
    """Insert every vector in order; fills the link tables in place and
    returns the entry point index."""
    cdef Graph g
    cdef int n = vecs.shape[0]
    cdef int i, lc, l, t, e, top_level, entry = 0, max_level, n_w, n_sel, cap, n_c
    cdef int *cnt
    cdef int *elinks
    cdef double cur_sim
    cdef int cur
    cdef unsigned int tag = 0
    cdef int ws = ef_construction + 1
    cdef Heap cand, top, sorter
    cdef int *w_idx
    cdef double *w_sim
    cdef int *ep
    cdef double *ep_sim
    cdef int *sel
    cdef int *c_idx
    cdef double *c_sim
    cdef unsigned int *visited
    cdef int status = 0
    if n == 0:
        return -1
    g.vecs = &vecs[0, 0]
    g.n = n
    g.dim = vecs.shape[1]
    g.M = links_up.shape[1]
    g.M0 = links0.shape[1]
    g.links0 = &links0[0, 0]
    g.counts0 = &counts0[0]
    g.up_offset = &up_offset[0]
    g.links_up = &links_up[0, 0] if links_up.shape[0] > 0 else NULL
    g.counts_up = &counts_up[0] if counts_up.shape[0] > 0 else NULL

    w_idx = <int *> malloc(ws * sizeof(int))
    w_sim = <double *> malloc(ws * sizeof(double))
    ep = <int *> malloc(ws * sizeof(int))
    ep_sim = <double *> malloc(ws * sizeof(double))
    sel = <int *> malloc((g.M0 + 1) * sizeof(int))
    c_idx = <int *> malloc((g.M0 + 1) * sizeof(int))
    c_sim = <double *> malloc((g.M0 + 1) * sizeof(double))
    visited = <unsigned int *> calloc(n, sizeof(unsigned int))
    if (_heap_init(&cand, 256, False) or _heap_init(&top, ws + 1, True)
            or _heap_init(&sorter, g.M0 + 2, False)):
        status = -1
    if (w_idx == NULL or w_sim == NULL or ep == NULL or ep_sim == NULL or sel == NULL
            or c_idx == NULL or c_sim == NULL or visited == NULL):
        status = -1

    if status == 0:
        with nogil:
            max_level = levels[0]
            for i in range(1, n):
                l = levels[i]
                cur = entry
                cur_sim = _dot(_vec(&g, i), _vec(&g, cur), g.dim)
                lc = max_level
                while lc > l:
                    cur = _greedy(&g, _vec(&g, i), cur, &cur_sim, lc)
                    lc -= 1
                ep[0] = cur
                ep_sim[0] = cur_sim
                n_w = 1
                top_level = l if l < max_level else max_level
                for lc in range(top_level, -1, -1):
                    tag += 1
                    if _search_layer(&g, _vec(&g, i), ep, ep_sim, n_w, ef_construction,
                                     lc, visited, tag, &cand, &top):
                        status = -1
                        break
                    n_w = _drain_best_first(&top, w_idx, w_sim)
                    n_sel = _select(&g, w_idx, w_sim, n_w, g.M, sel)
                    elinks = _links(&g, i, lc, &cnt)
                    for t in range(n_sel):
                        elinks[t] = sel[t]
                    cnt[0] = n_sel
                    cap = g.M0 if lc == 0 else g.M
                    for t in range(n_sel):
                        e = sel[t]
                        elinks = _links(&g, e, lc, &cnt)
                        if cnt[0] < cap:
                            elinks[cnt[0]] = i
                            cnt[0] += 1
                            continue
                        sorter.size = 0
                        _push(&sorter, _dot(_vec(&g, e), _vec(&g, i), g.dim), i)
                        for n_c in range(cnt[0]):
                            _push(&sorter, _dot(_vec(&g, e), _vec(&g, elinks[n_c]), g.dim),
                                  elinks[n_c])
                        n_c = 0
                        while sorter.size > 0:
                            c_idx[n_c] = sorter.idx[0]
                            c_sim[n_c] = sorter.sim[0]
                            n_c += 1
                            _pop(&sorter)
                        cnt[0] = _select(&g, c_idx, c_sim, n_c, cap, elinks)
                    for t in range(n_w):
                        ep[t] = w_idx[t]
                        ep_sim[t] = w_sim[t]
                if status:
                    break
                if l > max_level:
                    max_level = l
                    entry = i

    _heap_free(&cand)
    _heap_free(&top)
    _heap_free(&sorter)
    free(w_idx)
    free(w_sim)
    free(ep)
    free(ep_sim)
    free(sel)
    free(c_idx)
    free(c_sim)
    free(visited)
    if status:
        raise MemoryError()
    return entry


def hnsw_search(const float[:, ::1] vecs, const int[::1] levels,
                int[:, ::1] links0, int[::1] counts0, const int64_t[::1] up_offset,
                int[:, ::1] links_up, int[::1] counts_up, int entry,
                const float[::1] query, int k, int ef):
    """Return (indices, similarities) of up to k neighbors, best first."""
    cdef Graph g
    cdef int n = vecs.shape[0]
    cdef int lc, n_w = 0, cur
    cdef double cur_sim
    cdef Heap cand, top
    cdef unsigned char *visited
    cdef unsigned char tag = 1
    cdef int status = 0
    if ef < k:
        ef = k
    g.vecs = &vecs[0, 0]
    g.n = n
    g.dim = vecs.shape[1]
    g.M = links_up.shape[1]
    g.M0 = links0.shape[1]
    g.links0 = &links0[0, 0]
    g.counts0 = &counts0[0]
    g.up_offset = &up_offset[0]
    g.links_up = &links_up[0, 0] if links_up.shape[0] > 0 else NULL
    g.counts_up = &counts_up[0] if counts_up.shape[0] > 0 else NULL

    out_idx = np.empty(ef, dtype=np.int32)
    out_sim = np.empty(ef, dtype=np.float64)
    cdef int[::1] oi = out_idx
    cdef double[::1] osim = out_sim
    # one byte per node keeps the allocation off the mmap path
    visited = <unsigned char *> calloc(n, sizeof(unsigned char))
    if _heap_init(&cand, 256, False) or _heap_init(&top, ef + 2, True) or visited == NULL:
        status = -1
    if status == 0:
        with nogil:
            cur = entry
            cur_sim = _dot(&query[0], _vec(&g, cur), g.dim)
            lc = levels[entry]
            while lc > 0:
                cur = _greedy(&g, &query[0], cur, &cur_sim, lc)
                lc -= 1
            if _search_layer(&g, &query[0], &cur, &cur_sim, 1, ef, 0, visited, tag,
                             &cand, &top):
                status = -1
            else:
                n_w = _drain_best_first(&top, &oi[0], &osim[0])
    _heap_free(&cand)
    _heap_free(&top)
    free(visited)
    if status:
        raise MemoryError()
    if n_w > k:
        n_w = k
    return out_idx[:n_w], out_sim[:n_w]


# ---------------------------------------------------------------------------
# Bit signatures
# ---------------------------------------------------------------------------

def hamming_distances(const uint64_t[:, ::1] codes, const uint64_t[::1] query):
    """Hamming distance from ``query`` to every row of ``codes``."""
    cdef Py_ssize_t n = codes.shape[0], i
    cdef int w = codes.shape[1], j, acc
    out = np.empty(n, dtype=np.int32)
    cdef int[::1] o = out
    with nogil:
        for i in range(n):
            acc = 0
            for j in range(w):
                acc += __builtin_popcountll(codes[i, j] ^ query[j])
            o[i] = acc
    return out
