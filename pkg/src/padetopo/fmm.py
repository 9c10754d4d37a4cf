"""Low-frequency fast multipole evaluation of jet-valued layer potentials.

The expansions use the cylindrical functions

    I_n(x) = i^n J_n(k r) e^{i n theta},    O_n(x) = i^n H_n(k r) e^{i n theta}

with ``k = omega / c`` so that ``G(x, y) = (i/4) sum_n O_n(x - y0) I_{-n}(y0 - y)``
for ``|x - y0| > |y - y0|``. Moments, translations and local coefficients
are all jets in omega; every product is a Cauchy product over the jet
order. The translation sums are truncated symmetrically at ``[-P, P]``.

The factor ``k`` produced by the normal derivative at the source is pulled
out of the moments and applied once to the far-field result, and at the
targets ``gamma * k = -i`` so the Burton-Miller normal derivative needs no
frequency factor at all.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import bem
from .bem import jet_matvec
from .jet import omega_times
from .mesh import BoundaryMesh

log = logging.getLogger(__name__)

__all__ = [
    "ClusterTree",
    "JetFMM",
    "build_tree",
    "truncation_order",
    "cylinder_jets",
    "p2m",
    "m2m",
    "m2l",
    "l2l",
    "local_eval",
    "multipole_eval",
    "fmm_potential",
    "fmm_rhs_sum",
]


# ---------------------------------------------------------------------------
# jets of cylindrical functions
# ---------------------------------------------------------------------------

def cylinder_jets(kind: str, J: int, vec, omega0: float, K: int, c: float = 1.0) -> np.ndarray:
    """Jets of ``Z_j(x) = F_j(omega |x| / c) e^{i j theta}`` for ``j = -J..J``.

    ``kind`` is ``'J'`` (Bessel) or ``'H'`` (Hankel of the first kind).
    Returns shape (K+1, npts, 2J+1) with column ``j + J``. Derivatives in z
    use ``F^(m) = 2^-m sum_i (-1)^i C(m, i) F_{j-m+2i}``.
    """
    vec = np.atleast_2d(np.asarray(vec, dtype=float))
    r = np.hypot(vec[:, 0], vec[:, 1])
    theta = np.arctan2(vec[:, 1], vec[:, 0])
    s = r / c
    z = omega0 * s
    nu = np.arange(-J - K, J + K + 1)
    if kind == "J":
        f = special.jv(nu[None, :], z[:, None])
    elif kind == "H":
        if np.any(z <= 0):
            raise ValueError("Hankel translation with zero separation")
        f = special.hankel1(nu[None, :], z[:, None])
    else:
        raise ValueError(f"unknown kind {kind!r}")
    j = np.arange(-J, J + 1)
    out = np.empty((K + 1, r.size, 2 * J + 1), dtype=complex)
    for m in range(K + 1):
        acc = np.zeros((r.size, 2 * J + 1), dtype=complex)
        for i in range(m + 1):
            acc += (-1) ** i * math.comb(m, i) * f[:, j - m + 2 * i + J + K]
        out[m] = acc * (s**m / (math.factorial(m) * 2.0**m))[:, None]
    return out * np.exp(1j * j[None, :] * theta[:, None])[None]


def _ipow(j):
    return 1j ** (np.asarray(j) % 4)


def _translation(kind: str, t, P_out: int, P_in: int, omega0: float, K: int, c: float) -> np.ndarray:
    """Jets of ``T[a, b] = X_{n_a - m_b}(t)`` where X is I (kind 'J') or O ('H')."""
    J = P_out + P_in
    Z = cylinder_jets(kind, J, np.reshape(t, (1, 2)), omega0, K, c)[:, 0, :]   # (K+1, 2J+1)
    Z = Z * _ipow(np.arange(-J, J + 1))[None, :]
    n = np.arange(-P_out, P_out + 1)[:, None]
    m = np.arange(-P_in, P_in + 1)[None, :]
    return Z[:, n - m + J]


def _apply(T: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Jet product of (K+1, A, B) operators with (K+1, B, ...) coefficients."""
    K1 = X.shape[0]
    shp = X.shape
    out = jet_matvec(T[:K1], X.reshape(K1, shp[1], -1))
    return out.reshape((K1, T.shape[1]) + shp[2:])


def _normal_basis(Z: np.ndarray, nu: np.ndarray, P: int) -> np.ndarray:
    """``D_m = i^m (nu Z_{m-1} - conj(nu) Z_{m+1}) / 2`` for m in [-P, P].

    ``Z`` holds columns ``-(P+1)..P+1``; ``nu = n_1 + i n_2`` per point.
    ``k D_m`` is the normal derivative of ``I_m`` (or ``O_m`` for Hankel Z).
    """
    m = np.arange(-P, P + 1)
    lo = Z[..., m - 1 + P + 1]
    hi = Z[..., m + 1 + P + 1]
    return 0.5 * _ipow(m) * (nu[:, None] * lo - np.conj(nu)[:, None] * hi)


# ---------------------------------------------------------------------------
# single-node operators (public, with the physical factor k included)
# ---------------------------------------------------------------------------

def _p2m_matrix(mesh: BoundaryMesh, elems, center, P, omega0, K, c) -> np.ndarray:
    """Jets (K+1, 2P+1, len(elems)) mapping element densities to moments / k."""
    xi, wq = bem.REGULAR
    elems = np.asarray(elems, dtype=int)
    half = 0.5 * mesh.length[elems]
    y = mesh.midpoint[elems][:, None, :] + (half[:, None] * xi[None, :])[..., None] * mesh.tangent[elems][:, None, :]
    w = half[:, None] * wq[None, :]
    ng = xi.size
    Z = cylinder_jets("J", P + 1, (np.asarray(center)[None, :] - y.reshape(-1, 2)), omega0, K, c)
    nu = np.repeat(mesh.normal[elems, 0] + 1j * mesh.normal[elems, 1], ng)
    D = np.stack([_normal_basis(Z[k], nu, P) for k in range(K + 1)])        # (K+1, E*ng, 2P+1)
    D = D.reshape(K + 1, elems.size, ng, 2 * P + 1)
    return -np.einsum("kegm->kme", D * w[None, :, :, None])


def p2m(mesh: BoundaryMesh, elems, center, P: int, omega0: float, K: int, density, c: float = 1.0) -> np.ndarray:
    """Multipole moments ``M_m = int d/dn_y[I_m(y0 - y)] v(y) dGamma`` as jets.

    ``density`` has shape (K+1, len(elems), ...). Returns (K+1, 2P+1, ...).
    """
    S = _p2m_matrix(mesh, elems, center, P, omega0, K, c)
    return omega_times(_apply(S, np.asarray(density, dtype=complex)), omega0, 1.0 / c)


def m2m(t, M: np.ndarray, P_out: int, omega0: float, K: int | None = None, c: float = 1.0) -> np.ndarray:
    """Shift moments by ``t = y0' - y0``: ``M'_m = sum_k I_{m-k}(t) M_k``."""
    K = M.shape[0] - 1 if K is None else K
    P_in = (M.shape[1] - 1) // 2
    return _apply(_translation("J", t, P_out, P_in, omega0, K, c), M)


def l2l(t, L: np.ndarray, P_out: int, omega0: float, K: int | None = None, c: float = 1.0) -> np.ndarray:
    """Shift local coefficients by ``t = x1 - x0``: ``L'_m = sum_k I_{m-k}(t) L_k``."""
    return m2m(t, L, P_out, omega0, K, c)


def m2l(t, M: np.ndarray, P_out: int, omega0: float, K: int | None = None, c: float = 1.0,
        radius: float | None = None) -> np.ndarray:
    """Moments about y0 to local coefficients about x0, ``t = x0 - y0``.

    ``L_k = sum_m O_{k-m}(t) M_m``. With ``radius`` (common cluster radius)
    the clusters must be well separated, ``|t| > 2 radius``.
    """
    K = M.shape[0] - 1 if K is None else K
    if radius is not None and np.hypot(*t) <= 2.0 * radius * (1 + 1e-12):
        raise ValueError("M2L requested between overlapping clusters")
    P_in = (M.shape[1] - 1) // 2
    return _apply(_translation("H", t, P_out, P_in, omega0, K, c), M)


def _eval_basis(kind, x, center, P, omega0, K, c, normals):
    """(K+1, T, 2P+1) jets of ``X_k + gamma dX_k/dn_x`` at x - center."""
    rel = np.atleast_2d(np.asarray(x, dtype=float)) - np.asarray(center)[None, :]
    Z = cylinder_jets(kind, P + 1, rel, omega0, K, c)
    m = np.arange(-P, P + 1)
    E = Z[..., 1:-1] * _ipow(m)[None, None, :]
    if normals is not None:
        n = np.atleast_2d(normals)
        nu = n[:, 0] + 1j * n[:, 1]
        # gamma * k = -i
        E = E - 1j * np.stack([_normal_basis(Z[k], nu, P) for k in range(K + 1)])
    return E


def local_eval(x, center, L: np.ndarray, omega0: float, c: float = 1.0, normals=None) -> np.ndarray:
    """``(i/4) sum_k [I_k + gamma dI_k/dn_x](x - x0) L_{-k}`` as jets (K+1, T, ...)."""
    K = L.shape[0] - 1
    P = (L.shape[1] - 1) // 2
    E = _eval_basis("J", x, center, P, omega0, K, c, normals)
    return 0.25j * _apply(E, L[:, ::-1])


def multipole_eval(x, center, M: np.ndarray, omega0: float, c: float = 1.0, normals=None) -> np.ndarray:
    """Direct far-field sum ``(i/4) sum_n [O_n + gamma dO_n/dn_x](x - y0) M_{-n}``."""
    K = M.shape[0] - 1
    P = (M.shape[1] - 1) // 2
    E = _eval_basis("H", x, center, P, omega0, K, c, normals)
    return 0.25j * _apply(E, M[:, ::-1])


def truncation_order(k: float, diam: float, c1: float = 5.0, extra: int = 0) -> int:
    """``ceil(k d + c1 log(k d + pi))`` plus an optional safety margin."""
    kd = k * diam
    return int(math.ceil(kd + c1 * math.log(kd + math.pi))) + int(extra)


# ---------------------------------------------------------------------------
# tree
# ---------------------------------------------------------------------------

@dataclass
class ClusterTree:
    """Uniform quadtree over source elements and targets.

    ``keys[l]`` lists the occupied boxes of level l as integer (ix, iy)
    pairs; ``src_leaf``/``tgt_leaf`` give each element/target's leaf index.
    """

    lower: np.ndarray
    size: float
    depth: int
    keys: list
    index: list
    src_leaf: np.ndarray
    tgt_leaf: np.ndarray
    interactions: list = field(default_factory=list)
    near: list = field(default_factory=list)

    def side(self, level: int) -> float:
        return self.size / 2**level

    def centers(self, level: int) -> np.ndarray:
        return self.lower[None, :] + (self.keys[level] + 0.5) * self.side(level)


def _box_keys(points, lower, size, level):
    n = 2**level
    k = np.floor((points - lower[None, :]) / size * n).astype(int)
    return np.clip(k, 0, n - 1)


def build_tree(sources, targets, leaf_size: int = 32, max_depth: int = 10) -> ClusterTree:
    """Quadtree whose leaves hold at most ``leaf_size`` sources (depth >= 2)."""
    sources = np.atleast_2d(np.asarray(sources, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    allp = np.vstack([sources, targets])
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    size = float(max(hi - lo).max()) * (1 + 1e-9) + 1e-12
    center = 0.5 * (lo + hi)
    lower = center - 0.5 * size
    depth = 2
    while depth < max_depth:
        keys = _box_keys(sources, lower, size, depth)
        _, counts = np.unique(keys, axis=0, return_counts=True)
        if counts.max() <= leaf_size:
            break
        depth += 1
    keys, index = [], []
    src_k = _box_keys(sources, lower, size, depth)
    tgt_k = _box_keys(targets, lower, size, depth)
    leaf_keys = np.unique(np.vstack([src_k, tgt_k]), axis=0)
    for level in range(depth + 1):
        lk = np.unique(leaf_keys >> (depth - level), axis=0)
        keys.append(lk)
        index.append({tuple(k): i for i, k in enumerate(lk)})
    src_leaf = np.array([index[depth][tuple(k)] for k in src_k], dtype=int)
    tgt_leaf = np.array([index[depth][tuple(k)] for k in tgt_k], dtype=int)
    tree = ClusterTree(lower, size, depth, keys, index, src_leaf, tgt_leaf)
    tree.interactions = [[] for _ in range(depth + 1)]
    for level in range(2, depth + 1):
        for bi, k in enumerate(keys[level]):
            parent = k >> 1
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    pn = (parent[0] + dx, parent[1] + dy)
                    if pn not in index[level - 1]:
                        continue
                    for cx in (0, 1):
                        for cy in (0, 1):
                            ck = (2 * pn[0] + cx, 2 * pn[1] + cy)
                            j = index[level].get(ck)
                            if j is None:
                                continue
                            if max(abs(ck[0] - k[0]), abs(ck[1] - k[1])) > 1:
                                tree.interactions[level].append((bi, j, ck[0] - k[0], ck[1] - k[1]))
    for bi, k in enumerate(keys[depth]):
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                j = index[depth].get((k[0] + dx, k[1] + dy))
                if j is not None:
                    tree.near.append((bi, j))
    return tree


# ---------------------------------------------------------------------------
# full evaluator
# ---------------------------------------------------------------------------

class JetFMM:
    """Precomputed jet FMM for one mesh, frequency, order and target set.

    Parameters
    ----------
    mesh : BoundaryMesh
    omega0, order, c : expansion point, jet order, wave speed
    targets : (T, 2) points, or None for the collocation points (in which
        case the Burton-Miller kernel W is evaluated, otherwise dG/dn_y)
    leaf_size, c1, extra : tree and truncation parameters
    """

    def __init__(self, mesh: BoundaryMesh, omega0: float, order: int, c: float = 1.0, targets=None,
                 leaf_size: int = 32, c1: float = 5.0, extra: int = 4):
        self.mesh, self.omega0, self.K, self.c = mesh, float(omega0), int(order), float(c)
        self.collocation = targets is None
        self.targets = mesh.midpoint if targets is None else np.atleast_2d(np.asarray(targets, dtype=float))
        self.tnormals = mesh.normal if self.collocation else None
        tree = build_tree(mesh.midpoint, self.targets, leaf_size)
        self.tree = tree
        k = self.omega0 / self.c
        self.P = [truncation_order(k, tree.side(l) * math.sqrt(2), c1, extra) for l in range(tree.depth + 1)]
        D, K = tree.depth, self.K
        nleaf = len(tree.keys[D])
        self.leaf_src = [np.nonzero(tree.src_leaf == b)[0] for b in range(nleaf)]
        self.leaf_tgt = [np.nonzero(tree.tgt_leaf == b)[0] for b in range(nleaf)]
        ctr = tree.centers(D)
        self.S = [(_p2m_matrix(mesh, e, ctr[b], self.P[D], omega0, K, c) if e.size else None)
                  for b, e in enumerate(self.leaf_src)]
        self.E = [(_eval_basis("J", self.targets[t], ctr[b], self.P[D], omega0, K, c,
                               None if self.tnormals is None else self.tnormals[t]) if t.size else None)
                  for b, t in enumerate(self.leaf_tgt)]
        # near field
        near_src = [[] for _ in range(nleaf)]
        for bi, bj in tree.near:
            near_src[bi].append(self.leaf_src[bj])
        self.near_elems, self.near_W = [], []
        for b in range(nleaf):
            t = self.leaf_tgt[b]
            e = np.concatenate(near_src[b]) if near_src[b] else np.zeros(0, int)
            self.near_elems.append(e)
            if t.size and e.size:
                W = bem.kernel_block(mesh, omega0, K, c, self.targets[t],
                                     None if self.tnormals is None else self.tnormals[t], e,
                                     t if self.collocation else None)
            else:
                W = None
            self.near_W.append(W)
        # translations
        self.m2m_ops, self.l2l_ops, self.m2l_ops = {}, {}, {}
        for l in range(2, D):
            h = tree.side(l + 1)
            for qx in (0, 1):
                for qy in (0, 1):
                    off = np.array([(0.5 - qx) * h, (0.5 - qy) * h])  # parent centre - child centre
                    self.m2m_ops[(l, qx, qy)] = _translation("J", off, self.P[l], self.P[l + 1], omega0, K, c)
                    self.l2l_ops[(l, qx, qy)] = _translation("J", -off, self.P[l + 1], self.P[l], omega0, K, c)
        for l in range(2, D + 1):
            offs = {(dx, dy) for (_, _, dx, dy) in tree.interactions[l]}
            for dx, dy in offs:
                t = -np.array([dx, dy], dtype=float) * tree.side(l)   # x0 - y0
                self.m2l_ops[(l, dx, dy)] = _translation("H", t, self.P[l], self.P[l], omega0, K, c)
        log.debug("jet FMM: depth %d, P per level %s, %d leaves", D, self.P[2:], nleaf)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        """Jet product ``(W v)_n = sum_m W_m v_{n-m}`` at the targets.

        ``v`` has shape (K'+1, N) or (K'+1, N, nvec) with K' <= order.
        """
        v = np.asarray(v, dtype=complex)
        squeeze = v.ndim == 2
        if squeeze:
            v = v[..., None]
        K1 = v.shape[0]
        if K1 > self.K + 1:
            raise ValueError("density order exceeds the precomputed order")
        tree, D = self.tree, self.tree.depth
        nv = v.shape[2]
        out = np.zeros((K1, self.targets.shape[0], nv), dtype=complex)
        # upward pass
        M = [None] * (D + 1)
        M[D] = np.zeros((K1, 2 * self.P[D] + 1, len(tree.keys[D]), nv), dtype=complex)
        for b, S in enumerate(self.S):
            if S is not None:
                M[D][:, :, b] = _apply(S, v[:, self.leaf_src[b]])
        for l in range(D - 1, 1, -1):
            M[l] = np.zeros((K1, 2 * self.P[l] + 1, len(tree.keys[l]), nv), dtype=complex)
            ck = tree.keys[l + 1]
            parent = np.array([tree.index[l][tuple(k >> 1)] for k in ck], dtype=int)
            for qx in (0, 1):
                for qy in (0, 1):
                    sel = np.nonzero((ck[:, 0] & 1 == qx) & (ck[:, 1] & 1 == qy))[0]
                    if sel.size:
                        M[l][:, :, parent[sel]] += _apply(self.m2m_ops[(l, qx, qy)], M[l + 1][:, :, sel])
        # downward pass
        L = [None] * (D + 1)
        for l in range(2, D + 1):
            L[l] = np.zeros((K1, 2 * self.P[l] + 1, len(tree.keys[l]), nv), dtype=complex)
            groups = {}
            for bi, bj, dx, dy in tree.interactions[l]:
                groups.setdefault((dx, dy), ([], []))
                groups[(dx, dy)][0].append(bi)
                groups[(dx, dy)][1].append(bj)
            for (dx, dy), (ti, si) in groups.items():
                L[l][:, :, ti] += _apply(self.m2l_ops[(l, dx, dy)], M[l][:, :, si])
            if l > 2:
                ck = tree.keys[l]
                parent = np.array([tree.index[l - 1][tuple(k >> 1)] for k in ck], dtype=int)
                for qx in (0, 1):
                    for qy in (0, 1):
                        sel = np.nonzero((ck[:, 0] & 1 == qx) & (ck[:, 1] & 1 == qy))[0]
                        if sel.size:
                            L[l][:, :, sel] += _apply(self.l2l_ops[(l - 1, qx, qy)], L[l - 1][:, :, parent[sel]])
        # local evaluation; the source factor k is applied once
        far = np.zeros_like(out)
        for b, E in enumerate(self.E):
            if E is not None:
                far[:, self.leaf_tgt[b]] = _apply(E, L[D][:, ::-1, b])
        out += omega_times(far, self.omega0, 0.25j / self.c)
        for b, W in enumerate(self.near_W):
            if W is not None:
                out[:, self.leaf_tgt[b]] += _apply(W, v[:, self.near_elems[b]])
        return out[..., 0] if squeeze else out


def fmm_potential(mesh: BoundaryMesh, density, omega0: float, order: int, targets=None, c: float = 1.0,
                  **kw) -> np.ndarray:
    """One-shot jet FMM potential; see :class:`JetFMM`."""
    return JetFMM(mesh, omega0, order, c, targets, **kw).matvec(density)


def fmm_rhs_sum(op: bem.BemOperator, **kw):
    """``rhs_sum`` hook for :meth:`BemOperator.solve` backed by the jet FMM."""
    f = JetFMM(op.mesh, op.omega0, op.order, op.c, None, **kw)

    def rhs_sum(u, n):
        # u[n] is still zero, so order n of W u is the lagged sum
        return f.matvec(u[: n + 1])[n]

    rhs_sum.fmm = f
    return rhs_sum
