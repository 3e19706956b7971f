"""Per-sample x per-path inner loops.

Every kernel has a numba ``@njit`` version and a vectorized numpy version
with identical signatures. The numba one is used unless numba is missing or
the environment sets ``GLAI_DISABLE_NUMBA=1``.

Selector kernels see a path table as three arrays:

``cols``    (P, L) int64; the ``acts`` columns a path must find active,
            left-aligned and padded with -1.
``origin``  (P,) int64; input coordinate, or -1 for bias origins.
``out``     (P,) int64; output neuron.

``acts`` is the (n, n_1 + ... + n_L) uint8 activation mask of all hidden
layers side by side. Parameter kernels take the (P, L+2) ``nodes`` array
and ``start`` layer documented on :class:`glai.paths.PathTable`.
"""
import os

import numpy as np

_CHUNK_ELEMENTS = 1 << 22


def _disabled():
    return os.environ.get("GLAI_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")


def pack_acts(acts, n):
    if not acts:
        return np.zeros((n, 0), dtype=np.uint8)
    return np.ascontiguousarray(np.hstack(acts).astype(np.uint8))


def selector_arrays(arch, nodes, start):
    """Derive (cols, origin, out) from a packed path table."""
    L = len(arch) - 2
    act_off = np.concatenate([[0], np.cumsum(arch[1:-1])]).astype(np.int64)
    P = nodes.shape[0]
    cols = np.full((P, L), -1, dtype=np.int64)
    first = np.maximum(start, 1)
    for l in range(1, L + 1):
        rows = np.flatnonzero(first <= l)
        cols[rows, l - first[rows]] = act_off[l - 1] + nodes[rows, l]
    origin = np.where(start == 0, nodes[:, 0], -1).astype(np.int64)
    return cols, origin, np.ascontiguousarray(nodes[:, -1])


def pack_params(weights, biases):
    w_off = np.zeros(len(weights) + 1, dtype=np.int64)
    w_off[1:] = np.cumsum([w.size for w in weights])
    b_off = np.zeros(len(biases) + 1, dtype=np.int64)
    b_off[1:] = np.cumsum([b.size for b in biases])
    w_cols = np.array([w.shape[1] for w in weights], dtype=np.int64)
    wflat = np.concatenate([np.ascontiguousarray(w).ravel() for w in weights])
    bflat = np.concatenate([np.asarray(b).ravel() for b in biases])
    return wflat, w_off, w_cols, bflat, b_off


# --- numpy implementations ----------------------------------------------------


class numpy_impl:
    @staticmethod
    def path_weights(wflat, w_off, w_cols, bflat, b_off, nodes, start):
        n_layers = nodes.shape[1] - 1  # = L + 1 affine layers
        result = np.ones(nodes.shape[0])
        bias_rows = start > 0
        if bias_rows.any():
            k = start[bias_rows]
            first = nodes[bias_rows, k]
            result[bias_rows] = bflat[b_off[k - 1] + first]
        for l in range(n_layers):
            use = start <= l
            if not use.any():
                continue
            src = nodes[use, l]
            dst = nodes[use, l + 1]
            result[use] *= wflat[w_off[l] + dst * w_cols[l] + src]
        return result

    @staticmethod
    def _contrib_chunk(X, acts, cols, origin):
        n, P = X.shape[0], cols.shape[0]
        ind = np.ones((n, P), dtype=bool)
        for j in range(cols.shape[1]):
            used = np.flatnonzero(cols[:, j] >= 0)
            if used.size:
                ind[:, used] &= acts[:, cols[used, j]].astype(bool)
        base = np.ones((n, P))
        is_input = origin >= 0
        base[:, is_input] = X[:, origin[is_input]]
        return np.where(ind, base, 0.0)

    @staticmethod
    def _chunks(n, P):
        step = max(1, _CHUNK_ELEMENTS // max(P, 1))
        for s in range(0, n, step):
            yield slice(s, min(n, s + step))

    @classmethod
    def contributions(cls, X, acts, cols, origin):
        return cls._contrib_chunk(X, acts, cols, origin)

    @classmethod
    def outputs(cls, X, acts, cols, origin, out, w, n_out):
        y = np.zeros((X.shape[0], n_out))
        scatter = np.zeros((cols.shape[0], n_out))
        scatter[np.arange(cols.shape[0]), out] = w
        for sl in cls._chunks(X.shape[0], cols.shape[0]):
            y[sl] = cls._contrib_chunk(X[sl], acts[sl], cols, origin) @ scatter
        return y

    @classmethod
    def abs_mean(cls, X, acts, cols, origin):
        total = np.zeros(cols.shape[0])
        for sl in cls._chunks(X.shape[0], cols.shape[0]):
            total += np.abs(cls._contrib_chunk(X[sl], acts[sl], cols, origin)).sum(axis=0)
        return total / X.shape[0]

    @classmethod
    def estimator_grad(cls, X, acts, cols, origin, out, g):
        grad = np.zeros(cols.shape[0])
        for sl in cls._chunks(X.shape[0], cols.shape[0]):
            C = cls._contrib_chunk(X[sl], acts[sl], cols, origin)
            grad += (C * g[sl][:, out]).sum(axis=0)
        return grad


# --- numba implementations ----------------------------------------------------

try:
    import numba as _nb
except ImportError:  # pragma: no cover - numba is a declared dependency
    _nb = None

if _nb is not None:

    @_nb.njit(cache=True)
    def _nb_path_weights(wflat, w_off, w_cols, bflat, b_off, nodes, start):
        P = nodes.shape[0]
        n_layers = nodes.shape[1] - 1
        result = np.empty(P)
        for p in range(P):
            s = start[p]
            v = 1.0
            if s > 0:
                v = bflat[b_off[s - 1] + nodes[p, s]]
            for l in range(s, n_layers):
                v *= wflat[w_off[l] + nodes[p, l + 1] * w_cols[l] + nodes[p, l]]
            result[p] = v
        return result

    # The indicator loop is written out in each kernel: numba produced far
    # slower code when it lived in a shared helper with early returns.

    @_nb.njit(cache=True)
    def _nb_contributions(X, acts, cols, origin):
        n, P, depth = X.shape[0], cols.shape[0], cols.shape[1]
        C = np.zeros((n, P))
        for i in range(n):
            for p in range(P):
                active = True
                for j in range(depth):
                    c = cols[p, j]
                    if c < 0:
                        break
                    if acts[i, c] == 0:
                        active = False
                        break
                if active:
                    C[i, p] = X[i, origin[p]] if origin[p] >= 0 else 1.0
        return C

    @_nb.njit(cache=True)
    def _nb_outputs(X, acts, cols, origin, out, w, n_out):
        n, P, depth = X.shape[0], cols.shape[0], cols.shape[1]
        y = np.zeros((n, n_out))
        for i in range(n):
            for p in range(P):
                active = True
                for j in range(depth):
                    c = cols[p, j]
                    if c < 0:
                        break
                    if acts[i, c] == 0:
                        active = False
                        break
                if active:
                    v = X[i, origin[p]] if origin[p] >= 0 else 1.0
                    y[i, out[p]] += w[p] * v
        return y

    @_nb.njit(cache=True)
    def _nb_abs_mean(X, acts, cols, origin):
        n, P, depth = X.shape[0], cols.shape[0], cols.shape[1]
        total = np.zeros(P)
        for i in range(n):
            for p in range(P):
                active = True
                for j in range(depth):
                    c = cols[p, j]
                    if c < 0:
                        break
                    if acts[i, c] == 0:
                        active = False
                        break
                if active:
                    total[p] += abs(X[i, origin[p]]) if origin[p] >= 0 else 1.0
        return total / n

    @_nb.njit(cache=True)
    def _nb_estimator_grad(X, acts, cols, origin, out, g):
        n, P, depth = X.shape[0], cols.shape[0], cols.shape[1]
        grad = np.zeros(P)
        for i in range(n):
            for p in range(P):
                active = True
                for j in range(depth):
                    c = cols[p, j]
                    if c < 0:
                        break
                    if acts[i, c] == 0:
                        active = False
                        break
                if active:
                    v = X[i, origin[p]] if origin[p] >= 0 else 1.0
                    grad[p] += v * g[i, out[p]]
        return grad

    class numba_impl:
        path_weights = staticmethod(_nb_path_weights)
        contributions = staticmethod(_nb_contributions)
        outputs = staticmethod(_nb_outputs)
        abs_mean = staticmethod(_nb_abs_mean)
        estimator_grad = staticmethod(_nb_estimator_grad)

else:  # pragma: no cover
    numba_impl = None


def backend():
    return numpy_impl if (numba_impl is None or _disabled()) else numba_impl


def backend_name():
    return "numpy" if backend() is numpy_impl else "numba"


# Thin dispatchers; the backend is re-read on every call so tests can flip the flag.

def path_weights(*args):
    return backend().path_weights(*args)


def contributions(*args):
    return backend().contributions(*args)


def outputs(*args):
    return backend().outputs(*args)


def abs_mean(*args):
    return backend().abs_mean(*args)


def estimator_grad(*args):
    return backend().estimator_grad(*args)
