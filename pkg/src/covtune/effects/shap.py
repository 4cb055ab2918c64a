"""Exact Shapley attribution over the tree ensemble.

Implements the polynomial-time exact recursion for tree ensembles
(path-dependent expectations weighted by node covers): each feature's
attribution equals its exact Shapley value for the coalitional game
v(S) = expected tree output when only features in S are fixed to the
query point and the rest marginalize along the tree's training covers.

The per-sample walk keeps the running "unique path" of features with
their one/zero fractions and permutation weights, extending on the way
down and unwinding when a feature reappears. Kernels are numba-compiled;
the walk is an explicit-stack DFS so compilation needs no recursion
support. Attributions satisfy additivity exactly:
base_value + sum(attributions) = prediction.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ..core import Configuration
from .gbdt import SurrogateModel, encode_config


@njit(cache=True)
def _extend(d, z, o, w, off, ud, pz, po, pi):
    # Append element at index ud of the path slice starting at off.
    d[off + ud] = pi
    z[off + ud] = pz
    o[off + ud] = po
    w[off + ud] = 1.0 if ud == 0 else 0.0
    for i in range(ud - 1, -1, -1):
        w[off + i + 1] += po * w[off + i] * (i + 1) / (ud + 1)
        w[off + i] = pz * w[off + i] * (ud - i) / (ud + 1)


@njit(cache=True)
def _unwind(d, z, o, w, off, ud, k):
    one = o[off + k]
    zero = z[off + k]
    n = w[off + ud]
    for i in range(ud - 1, -1, -1):
        if one != 0.0:
            t = w[off + i]
            w[off + i] = n * (ud + 1) / ((i + 1) * one)
            n = t - w[off + i] * zero * (ud - i) / (ud + 1)
        else:
            w[off + i] = w[off + i] * (ud + 1) / (zero * (ud - i))
    for i in range(k, ud):
        d[off + i] = d[off + i + 1]
        z[off + i] = z[off + i + 1]
        o[off + i] = o[off + i + 1]


@njit(cache=True)
def _unwound_sum(z, o, w, off, ud, k):
    one = o[off + k]
    zero = z[off + k]
    nxt = w[off + ud]
    total = 0.0
    if one != 0.0:
        for i in range(ud - 1, -1, -1):
            t = nxt / ((i + 1) * one)
            total += t
            nxt = w[off + i] - t * zero * (ud - i)
    else:
        for i in range(ud - 1, -1, -1):
            total += w[off + i] / (zero * (ud - i))
    return total * (ud + 1)


@njit(cache=True)
def _tree_shap_batch(cl, cr, feat, thr, val, cov, X, phi, max_depth):
    n_samples = X.shape[0]
    buf = (max_depth + 2) * (max_depth + 6)
    d = np.empty(buf, dtype=np.int64)
    z = np.empty(buf, dtype=np.float64)
    o = np.empty(buf, dtype=np.float64)
    w = np.empty(buf, dtype=np.float64)
    cap = 4 * (max_depth + 2) + 8
    s_node = np.empty(cap, dtype=np.int64)
    s_ud = np.empty(cap, dtype=np.int64)
    s_poff = np.empty(cap, dtype=np.int64)
    s_pz = np.empty(cap, dtype=np.float64)
    s_po = np.empty(cap, dtype=np.float64)
    s_pi = np.empty(cap, dtype=np.int64)

    for s in range(n_samples):
        top = 0
        s_node[top] = 0
        s_ud[top] = 0
        s_poff[top] = 0
        s_pz[top] = 1.0
        s_po[top] = 1.0
        s_pi[top] = -1
        top += 1
        while top > 0:
            top -= 1
            node = s_node[top]
            ud_in = s_ud[top]
            poff = s_poff[top]
            pz = s_pz[top]
            po = s_po[top]
            pi = s_pi[top]

            off = poff + ud_in + 1
            for t in range(ud_in + 1):
                d[off + t] = d[poff + t]
                z[off + t] = z[poff + t]
                o[off + t] = o[poff + t]
                w[off + t] = w[poff + t]
            _extend(d, z, o, w, off, ud_in, pz, po, pi)
            ud = ud_in

            if cl[node] < 0:
                leaf_value = val[node]
                for i in range(1, ud + 1):
                    ws = _unwound_sum(z, o, w, off, ud, i)
                    phi[s, d[off + i]] += ws * (o[off + i] - z[off + i]) * leaf_value
            else:
                split = feat[node]
                if X[s, split] <= thr[node]:
                    hot = cl[node]
                    cold = cr[node]
                else:
                    hot = cr[node]
                    cold = cl[node]
                hz = cov[hot] / cov[node]
                cz = cov[cold] / cov[node]
                iz = 1.0
                io = 1.0
                k = -1
                for i in range(ud + 1):
                    if d[off + i] == split:
                        k = i
                        break
                if k >= 0:
                    iz = z[off + k]
                    io = o[off + k]
                    _unwind(d, z, o, w, off, ud, k)
                    ud -= 1

                s_node[top] = cold
                s_ud[top] = ud + 1
                s_poff[top] = off
                s_pz[top] = cz * iz
                s_po[top] = 0.0
                s_pi[top] = split
                top += 1
                s_node[top] = hot
                s_ud[top] = ud + 1
                s_poff[top] = off
                s_pz[top] = hz * iz
                s_po[top] = io
                s_pi[top] = split
                top += 1


def shap_matrix_features(model: SurrogateModel, X: np.ndarray) -> np.ndarray:
    """Per-sample, per-feature Shapley attributions for the whole ensemble."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    phi = np.zeros((X.shape[0], model.encoding.n_features), dtype=np.float64)
    for tree in model.trees:
        tree_phi = np.zeros_like(phi)
        _tree_shap_batch(
            tree.children_left,
            tree.children_right,
            tree.feature,
            tree.threshold,
            tree.value,
            tree.cover,
            X,
            tree_phi,
            model.max_depth,
        )
        phi += model.learning_rate * tree_phi
    return phi


def shap_matrix(model: SurrogateModel, X: np.ndarray) -> np.ndarray:
    """Per-sample, per-parameter attributions (one-hot groups summed back)."""
    phi = shap_matrix_features(model, X)
    owner = np.asarray(model.encoding.owner, dtype=np.int64)
    out = np.zeros((X.shape[0], len(model.encoding.param_names)), dtype=np.float64)
    np.add.at(out.T, owner, phi.T)
    return out


def shapley_attribution(model: SurrogateModel, config: Configuration) -> dict[str, float]:
    """Exact per-parameter Shapley attribution of one configuration."""
    x = encode_config(model.space, config, model.encoding)
    row = shap_matrix(model, x[None, :])[0]
    return {name: float(v) for name, v in zip(model.encoding.param_names, row)}
