"""Pure numpy forward pass for the segment-indexed HMM lattice.

Lattice state ``(n, k)`` means "segment n uses centroid k".  From ``(n, k)``
a path may stay at ``(n, k)`` for free or move to ``(n + 1, k')`` with
``k' != k`` at cost ``penalty[t]``.  Because that cost does not depend on the
pair ``(k, k')``, the best switch into ``(n, k)`` only needs the best and
second-best scores of row ``n - 1``, which keeps each step at ``O(N K)``.

This module mirrors ``_viterbi.pyx`` operation for operation so the two
backends produce bit-identical lattices.
"""
import numpy as np


def forward(emit, penalty, n_states):
    """Run max-product Viterbi over the ``(n, k)`` lattice.

    Parameters
    ----------
    emit : ndarray, shape (T, K), float64
        Per-frame emission log-scores.
    penalty : ndarray, shape (T,), float64
        Cost subtracted when a new segment starts at frame ``t``.
    n_states : int
        Number of segment slots ``N``.

    Returns
    -------
    final : ndarray, shape (N, K)
        Best log-score of any path ending in ``(n, k)`` at the last frame.
    stay : ndarray, shape (T, N, K), uint8
        1 where the best predecessor of ``(n, k)`` at ``t`` is ``(n, k)``.
    source : ndarray, shape (T, N, 2), int32
        Best and second-best centroid of row ``n - 1`` at ``t - 1``.
    """
    emit = np.ascontiguousarray(emit, dtype=np.float64)
    penalty = np.ascontiguousarray(penalty, dtype=np.float64)
    n_frames, n_k = emit.shape
    n_states = int(n_states)

    delta = np.full((n_states, n_k), -np.inf)
    delta[0] = emit[0]
    stay = np.ones((n_frames, n_states, n_k), dtype=np.uint8)
    source = np.zeros((n_frames, n_states, 2), dtype=np.int32)
    k_index = np.arange(n_k)

    for t in range(1, n_frames):
        m = min(t + 1, n_states)
        e = emit[t]
        if m > 1:
            prev = delta[:m - 1]
            rows = np.arange(m - 1)
            best_k = prev.argmax(axis=1)
            best = prev[rows, best_k]
            masked = prev.copy()
            masked[rows, best_k] = -np.inf
            second_k = masked.argmax(axis=1)
            second = masked[rows, second_k]
            switch = np.where(k_index[None, :] == best_k[:, None], second[:, None], best[:, None])
            switch = switch - penalty[t]
            st = delta[1:m]
            keep = st >= switch
            new_rows = np.where(keep, st, switch) + e
            stay[t, 1:m] = keep
            source[t, 1:m, 0] = best_k
            source[t, 1:m, 1] = second_k
            delta[1:m] = new_rows
        delta[0] = delta[0] + e
    return delta, stay, source
