"""Compiled per-focal counting loops used by :func:`dindex.indicators.compute_all`.

Both kernels work on a scratch "link count" array: for a reference set R,
``cnt[p]`` is the number of members of R cited by paper p. It is filled by
walking the citers of every r in R, so the cost per reference set is the sum
of in-degrees of its members rather than a scan of the whole graph. Entries
are invalidated with stamps instead of clearing, and each call owns its
scratch arrays, which makes calls independent and safe to run in parallel
threads (the kernels release the GIL).

Output layout (rows follow the order of the ``focals``/``cohorts`` input):
``counts[:, 0]`` = n_i, ``counts[:, 1 + t]`` = n_j for ``thresholds[t]``,
``counts[:, -1]`` = n_k.
"""

import numpy as np
from numba import njit


@njit(nogil=True, cache=True)
def own_reference_counts(focals, bounds, out_ptr, out_idx, in_ptr, in_idx, year,
                         thresholds, counts, links, n_citers):
    n = len(year)
    nt = len(thresholds)
    cnt = np.zeros(n, dtype=np.int32)
    stamp = np.zeros(n, dtype=np.int32)
    citer = np.zeros(n, dtype=np.int32)
    touched = np.empty(n, dtype=np.int32)
    for row in range(len(focals)):
        f = focals[row]
        s = f + 1
        b = bounds[row]
        nc = 0
        for e in range(in_ptr[f], in_ptr[f + 1]):
            c = in_idx[e]
            if year[c] <= b:
                citer[c] = s
                nc += 1
        ntouch = 0
        for e in range(out_ptr[f], out_ptr[f + 1]):
            r = out_idx[e]
            for e2 in range(in_ptr[r], in_ptr[r + 1]):
                p = in_idx[e2]
                if stamp[p] != s:
                    stamp[p] = s
                    cnt[p] = 0
                    touched[ntouch] = p
                    ntouch += 1
                cnt[p] += 1
        ni = 0
        total = 0
        for e in range(in_ptr[f], in_ptr[f + 1]):
            c = in_idx[e]
            if citer[c] != s:
                continue
            k = cnt[c] if stamp[c] == s else 0
            total += k
            if k == 0:
                ni += 1
            for t in range(nt):
                if k >= thresholds[t]:
                    counts[row, 1 + t] += 1
        nk = 0
        for q in range(ntouch):
            p = touched[q]
            if p != f and citer[p] != s and year[p] <= b:
                nk += 1
        counts[row, 0] = ni
        counts[row, nt + 1] = nk
        links[row] = total
        n_citers[row] = nc


@njit(nogil=True, cache=True)
def cohort_union_counts(cohorts, bounds, cohort_ptr, cohort_members, out_ptr, out_idx,
                        in_ptr, in_idx, year, thresholds, row_offset, counts):
    """Counts against the union of references of each journal-year cohort.

    The focal paper is removed from its own reference set (it can be cited
    by a cohort sibling): every citer of f cites f, so its link count into
    R minus {f} is ``cnt[c] - [f in R]``. Non-citers are unaffected.
    """
    n = len(year)
    nt = len(thresholds)
    cnt = np.zeros(n, dtype=np.int32)
    stamp = np.zeros(n, dtype=np.int32)
    rmark = np.zeros(n, dtype=np.int32)
    rlist = np.empty(n, dtype=np.int32)
    touched = np.empty(n, dtype=np.int32)
    row = row_offset
    for q in range(len(cohorts)):
        g = cohorts[q]
        s = g + 1
        b = bounds[q]
        lo = cohort_ptr[g]
        hi = cohort_ptr[g + 1]
        nr = 0
        for m in range(lo, hi):
            f = cohort_members[m]
            for e in range(out_ptr[f], out_ptr[f + 1]):
                r = out_idx[e]
                if rmark[r] != s:
                    rmark[r] = s
                    rlist[nr] = r
                    nr += 1
        ntouch = 0
        for x in range(nr):
            r = rlist[x]
            for e2 in range(in_ptr[r], in_ptr[r + 1]):
                p = in_idx[e2]
                if stamp[p] != s:
                    stamp[p] = s
                    cnt[p] = 0
                    touched[ntouch] = p
                    ntouch += 1
                cnt[p] += 1
        reach = 0
        for x in range(ntouch):
            if year[touched[x]] <= b:
                reach += 1
        for m in range(lo, hi):
            f = cohort_members[m]
            fin = 1 if rmark[f] == s else 0
            ni = 0
            linked_citers = 0
            for e in range(in_ptr[f], in_ptr[f + 1]):
                c = in_idx[e]
                if year[c] > b:
                    continue
                raw = cnt[c] if stamp[c] == s else 0
                k = raw - fin
                if k == 0:
                    ni += 1
                for t in range(nt):
                    if k >= thresholds[t]:
                        counts[row, 1 + t] += 1
                if raw >= 1:
                    linked_citers += 1
            self_hit = 1 if stamp[f] == s else 0
            counts[row, 0] = ni
            counts[row, nt + 1] = reach - linked_citers - self_hit
            row += 1
