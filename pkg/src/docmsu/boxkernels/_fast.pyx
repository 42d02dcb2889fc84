# Compiled box-overlap kernels. Semantics (and float arithmetic order) match
# docmsu.boxkernels.reference exactly; keep the two in lockstep.

import numpy as np

cimport numpy as cnp

cnp.import_array()


def pairwise_iou(a, b):
    """IoU matrix between two box sets: (N, 4) x (M, 4) -> (N, M)."""
    A = np.ascontiguousarray(np.asarray(a, dtype=np.float64).reshape(-1, 4))
    B = np.ascontiguousarray(np.asarray(b, dtype=np.float64).reshape(-1, 4))
    cdef double[:, ::1] av = A
    cdef double[:, ::1] bv = B
    out = np.zeros((A.shape[0], B.shape[0]), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    cdef double ax1, ay1, ax2, ay2, area_a, area_b, iw, ih, inter
    for i in range(av.shape[0]):
        ax1 = av[i, 0]
        ay1 = av[i, 1]
        ax2 = av[i, 2]
        ay2 = av[i, 3]
        area_a = (ax2 - ax1) * (ay2 - ay1)
        for j in range(bv.shape[0]):
            iw = min(ax2, bv[j, 2]) - max(ax1, bv[j, 0])
            ih = min(ay2, bv[j, 3]) - max(ay1, bv[j, 1])
            if iw > 0 and ih > 0:
                inter = iw * ih
                area_b = (bv[j, 2] - bv[j, 0]) * (bv[j, 3] - bv[j, 1])
                ov[i, j] = inter / (area_a + area_b - inter)
    return out


def nms(boxes, scores, double iou_threshold=0.65):
    """Greedy non-maximum suppression; see the reference implementation."""
    Bx = np.ascontiguousarray(np.asarray(boxes, dtype=np.float64).reshape(-1, 4))
    Sc = np.asarray(scores, dtype=np.float64).ravel()
    if Bx.shape[0] != Sc.shape[0]:
        raise ValueError("boxes and scores length mismatch")
    cdef double[:, ::1] bv = Bx
    cdef Py_ssize_t n = bv.shape[0]
    order_arr = np.lexsort((np.arange(n), -Sc)).astype(np.int64)
    cdef long long[::1] order = order_arr
    suppressed = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] sup = suppressed
    keep_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] keep = keep_arr
    cdef Py_ssize_t n_keep = 0, oi, oj
    cdef long long i, j
    cdef double ax1, ay1, ax2, ay2, area_a, area_b, iw, ih, inter, iou
    for oi in range(n):
        i = order[oi]
        if sup[i]:
            continue
        keep[n_keep] = i
        n_keep += 1
        ax1 = bv[i, 0]
        ay1 = bv[i, 1]
        ax2 = bv[i, 2]
        ay2 = bv[i, 3]
        area_a = (ax2 - ax1) * (ay2 - ay1)
        for oj in range(oi + 1, n):
            j = order[oj]
            if sup[j]:
                continue
            iw = min(ax2, bv[j, 2]) - max(ax1, bv[j, 0])
            ih = min(ay2, bv[j, 3]) - max(ay1, bv[j, 1])
            if iw > 0 and ih > 0:
                inter = iw * ih
                area_b = (bv[j, 2] - bv[j, 0]) * (bv[j, 3] - bv[j, 1])
                iou = inter / (area_a + area_b - inter)
                if iou > iou_threshold:
                    sup[j] = 1
    return keep_arr[:n_keep].copy()
