"""Galerkin boundary integral operators on polygonal boundaries.

Single layer V, double layer K (exterior-trace convention: K = 1/2 M + K_pv),
hypersingular W (assembled through its tangential-derivative regularization),
boundary mass couplings, the discrete Steklov-Poincare operator
S = W + (M - K)^T V^{-1} (M - K), and rigid-body stabilization data.

Inner integrals over source panels are analytic; outer integrals use Gauss
rules graded toward shared vertices.  Kernels: 2D Laplace (scalar exterior
field) and 2D Lame (vector exterior field).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .quadrature import graded_gauss, segment_gauss

_ONLINE_REL = 1e-12


# ---------------------------------------------------------------------------
# boundary space
# ---------------------------------------------------------------------------

class BoundarySpace:
    """Panelization of the (single, closed, CCW) boundary polygon of a mesh.

    P1 dofs live on the loop nodes, P0 dofs on the panels.  Node k joins
    panels k-1 and k; panel k runs from node k to node k+1.
    """

    def __init__(self, mesh):
        loop, labels = mesh.boundary_loop()
        self.mesh = mesh
        self.loop = loop
        self.nodes = mesh.vertices[loop]                   # (M, 2)
        self.n_nodes = len(loop)
        self.labels = list(labels)                         # per panel
        nxt = np.roll(np.arange(self.n_nodes), -1)
        self.panel_start = np.arange(self.n_nodes)
        self.panel_end = nxt
        self.A = self.nodes
        self.B = self.nodes[nxt]
        d = self.B - self.A
        self.lengths = np.linalg.norm(d, axis=1)
        if np.any(self.lengths <= 0):
            raise ValueError("degenerate boundary segment")
        self.tangents = d / self.lengths[:, None]
        # outward normal of a CCW loop
        self.normals = np.column_stack([self.tangents[:, 1], -self.tangents[:, 0]])
        self.mids = 0.5 * (self.A + self.B)
        self.n_panels = self.n_nodes

    def diameter(self):
        d2 = np.sum((self.nodes[:, None] - self.nodes[None, :]) ** 2, axis=2)
        return float(np.sqrt(d2.max()))

    def slip_panels(self):
        return np.asarray([lab == "S" for lab in self.labels], dtype=bool)

    def slip_nodes(self):
        """Nodes whose both adjacent panels are slip panels (hat support in Gamma_s)."""
        s = self.slip_panels()
        prev = np.roll(s, 1)
        return np.nonzero(s & prev)[0]

    def node_normals(self):
        """Averaged (length-weighted) outward normals at nodes, normalized."""
        n = np.zeros((self.n_nodes, 2))
        for k in range(self.n_panels):
            w = self.normals[k] * self.lengths[k]
            n[self.panel_start[k]] += w
            n[self.panel_end[k]] += w
        return n / np.linalg.norm(n, axis=1)[:, None]

    def interpolate_nodes(self, fn, ncomp):
        vals = np.asarray(fn(self.nodes), dtype=float)
        return vals.reshape(self.n_nodes * ncomp) if ncomp > 1 else vals.reshape(-1)

    def eval_p1(self, coeffs, panel_idx, t, ncomp):
        """Values of a P1 boundary function at local coordinates t on given panels."""
        c = np.asarray(coeffs).reshape(self.n_nodes, ncomp)
        a = c[self.panel_start[panel_idx]]
        b = c[self.panel_end[panel_idx]]
        return a * (1 - t)[:, None] + b * t[:, None]


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def fundamental_solution(coeffs, x, y):
    """Fundamental solution at (x, y): scalar Laplace if coeffs is None, else 2D Lame."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = x - y
    rho2 = np.sum(r * r, axis=-1)
    if np.any(rho2 == 0):
        raise ValueError("fundamental solution at coincident points")
    if coeffs is None:
        return -np.log(rho2) / (4 * np.pi)
    lam, mu = coeffs.lam, coeffs.mu
    A = (lam + 3 * mu) / (4 * np.pi * mu * (lam + 2 * mu))
    B = (lam + mu) / (lam + 3 * mu)
    eye = np.eye(2)
    dyad = r[..., :, None] * r[..., None, :] / rho2[..., None, None]
    return A * (-0.5 * np.log(rho2)[..., None, None] * eye + B * dyad)


class _LaplaceKernel:
    """Scalar exterior Laplace: G = -(1/2pi) log|x-y|."""

    d = 1

    def __init__(self):
        self.c_log = 1.0 / (2 * np.pi)      # G = c_log * (-log rho)
        self.c_dyad = 0.0
        self.w_log = 1.0 / (2 * np.pi)      # Ghat = w_log * (-log rho)
        self.w_dyad = 0.0

    def v_block(self, prim, geo):
        return self.c_log * prim["ilog0"][:, None, None]

    def ghat_block(self, prim, geo):
        return self.w_log * prim["ilog0"][:, None, None]

    def k_blocks(self, prim, geo):
        # dlp kernel (x-y).n_y / (2 pi rho^2) = eta/(2 pi rho^2);
        # weights: start node 1 - tau/L, end node tau/L
        kt = prim["s1_t"] / (2 * np.pi)
        k0 = prim["s1_0"] / (2 * np.pi) - kt
        return k0[:, None, None], kt[:, None, None]

    def v_self(self, L, that):
        return np.array([[L * L * (1.5 - np.log(L)) / (2 * np.pi)]])

    def ghat_self(self, L, that):
        return self.v_self(L, that)

    def k_self_inner(self, prim, geo):
        z = np.zeros_like(prim["s1_0"])
        return z[:, None, None], z[:, None, None]


class _LameKernel:
    """2D Lame kernel set for exterior coefficients (mu, lambda)."""

    d = 2

    def __init__(self, coeffs):
        lam, mu = coeffs.lam, coeffs.mu
        self.A = (lam + 3 * mu) / (4 * np.pi * mu * (lam + 2 * mu))
        self.B = (lam + mu) / (lam + 3 * mu)
        self.c_log = self.A
        self.c_dyad = self.A * self.B
        kap = mu * (lam + mu) / (np.pi * (lam + 2 * mu))
        self.w_log = kap
        self.w_dyad = kap
        self.tc = mu / (2 * np.pi * (lam + 2 * mu))       # traction kernel constants
        self.td = (lam + mu) / (np.pi * (lam + 2 * mu))

    def _dyad(self, prim, geo):
        that, nhat = geo
        tt = that[:, None] * that[None, :]
        tn = that[:, None] * nhat[None, :] + nhat[:, None] * that[None, :]
        nn = nhat[:, None] * nhat[None, :]
        return (prim["dy00"][:, None, None] * tt
                + prim["dy01"][:, None, None] * tn
                + prim["dy11"][:, None, None] * nn)

    def v_block(self, prim, geo):
        eye = np.eye(2)
        return self.c_log * prim["ilog0"][:, None, None] * eye + self.c_dyad * self._dyad(prim, geo)

    def ghat_block(self, prim, geo):
        eye = np.eye(2)
        return self.w_log * prim["ilog0"][:, None, None] * eye + self.w_dyad * self._dyad(prim, geo)

    def k_blocks(self, prim, geo):
        """Double layer potential kernel, transposed traction-of-columns contraction.

        Kmat_ab = [c((r.n) I + n r^T - r n^T) + d (r.n) r r^T / rho^2]_ab / rho^2
        integrated against weights {1-tau/L, tau/L}; r = x - y = -u that + eta nhat.
        """
        that, nhat = geo
        eye = np.eye(2)
        out = []
        for tag in ("0", "t"):
            s1 = prim["s1_" + tag]      # int w eta/rho^2
            s2 = prim["s2_" + tag]      # int w u/rho^2
            p2 = prim["p2_" + tag]      # eta int w u^2/rho^4
            p1 = prim["p1_" + tag]      # eta^2 int w u/rho^4
            p0 = prim["p0_" + tag]      # eta^3 int w /rho^4
            # int w r/rho^2 = -that*s2 + nhat*s1
            rvec = -that[None, :] * s2[:, None] + nhat[None, :] * s1[:, None]
            anti = (nhat[:, None] * rvec[:, None, :] - rvec[:, :, None] * nhat[None, :])
            tt = that[:, None] * that[None, :]
            tn = that[:, None] * nhat[None, :] + nhat[:, None] * that[None, :]
            nn = nhat[:, None] * nhat[None, :]
            dy4 = (p2[:, None, None] * tt - p1[:, None, None] * tn
                   + p0[:, None, None] * nn)
            blk = self.tc * (s1[:, None, None] * eye + anti) + self.td * dy4
            out.append(blk)
        return out[0] - out[1], out[1]

    def v_self(self, L, that):
        tt = that[:, None] * that[None, :]
        return self.A * L * L * ((1.5 - np.log(L)) * np.eye(2) + self.B * tt)

    def ghat_self(self, L, that):
        tt = that[:, None] * that[None, :]
        return self.w_log * L * L * ((1.5 - np.log(L)) * np.eye(2) + tt)

    def k_self_inner(self, prim, geo):
        """On-line principal value: only the antisymmetric rotation term survives."""
        that, nhat = geo
        anti = that[:, None] * nhat[None, :] - nhat[:, None] * that[None, :]
        # r = -u that: Kmat = tc (n r^T - r n^T)/rho^2 = -tc (n that^T - that n^T)/u
        kt = self.tc * prim["pvt"][:, None, None] * (-anti.T)
        k0 = self.tc * prim["pv0"][:, None, None] * (-anti.T) - kt
        return k0, kt


# ---------------------------------------------------------------------------
# analytic inner integrals over one source panel
# ---------------------------------------------------------------------------

def _primitives(panel_A, that, nhat, L, X):
    """Definite inner integrals over the source panel for observation points X.

    Frame coordinates: xi = (x-A).that, eta = (x-A).nhat, u in [-xi, L-xi].
    All returned combinations are finite; |eta| < _ONLINE_REL*L uses the
    on-line (principal-value) branch.
    """
    X = np.atleast_2d(X)
    rel = X - panel_A[None, :]
    xi = rel @ that
    eta = rel @ nhat
    online = np.abs(eta) <= _ONLINE_REL * L
    eta_safe = np.where(online, 1.0, eta)
    u1 = -xi
    u2 = L - xi
    r1s = u1 * u1 + eta * eta
    r2s = u2 * u2 + eta * eta
    # avoid log(0) when an observation point coincides with a panel endpoint
    tiny = (_ONLINE_REL * L) ** 2
    r1s = np.maximum(r1s, tiny * tiny)
    r2s = np.maximum(r2s, tiny * tiny)
    log1 = 0.5 * np.log(r1s)
    log2 = 0.5 * np.log(r2s)
    at1 = np.where(online, 0.0, np.arctan(u1 / eta_safe))
    at2 = np.where(online, 0.0, np.arctan(u2 / eta_safe))
    dat = at2 - at1
    dlog = log2 - log1

    p = {}
    # int (-log rho), plain and tau/L weighted
    ulog1 = np.where(np.abs(u1) < tiny, 0.0, u1 * log1)
    ulog2 = np.where(np.abs(u2) < tiny, 0.0, u2 * log2)
    p["ilog0"] = -(ulog2 - ulog1 - (u2 - u1) + eta * dat)
    prim_ulog = 0.5 * (r2s * log2 - r1s * log1) - 0.25 * (r2s - r1s)
    p["ilog_t"] = (-prim_ulog + xi * p["ilog0"]) / L
    # dyadic /rho^2 pieces
    p["dy00"] = (u2 - u1) - eta * dat
    p["dy01"] = -eta * dlog
    p["dy11"] = eta * dat
    # dlp combos
    p["s1_0"] = dat
    p["s1_t"] = (eta * dlog + xi * dat) / L
    p["s2_0"] = dlog
    p["s2_t"] = ((u2 - u1) - eta * dat + xi * dlog) / L
    p["p2_0"] = np.where(online, 0.0, -0.5 * eta * (u2 / r2s - u1 / r1s) + 0.5 * dat)
    p["p2_t"] = np.where(
        online, 0.0,
        (eta * dlog + 0.5 * eta ** 3 * (1 / r2s - 1 / r1s)
         + xi * (-0.5 * eta * (u2 / r2s - u1 / r1s) + 0.5 * dat)) / L)
    p["p1_0"] = -0.5 * eta ** 2 * (1 / r2s - 1 / r1s)
    p["p1_t"] = (np.where(online, 0.0,
                          -0.5 * eta ** 2 * (u2 / r2s - u1 / r1s) + 0.5 * eta * dat)
                 + xi * p["p1_0"]) / L
    p["p0_0"] = np.where(online, 0.0, 0.5 * eta * (u2 / r2s - u1 / r1s) + 0.5 * dat)
    p["p0_t"] = (np.where(online, 0.0, -0.5 * eta ** 3 * (1 / r2s - 1 / r1s))
                 + xi * p["p0_0"]) / L
    # on-line principal values of int w/u (Lame self/collinear rotation term)
    with np.errstate(divide="ignore", invalid="ignore"):
        pv = np.where(online, np.log(np.maximum(np.abs(u2), tiny))
                      - np.log(np.maximum(np.abs(u1), tiny)), 0.0)
    p["pv0"] = pv
    p["pvt"] = np.where(online, (u2 - u1) / L, 0.0) + xi * pv / L
    p["online"] = online
    return p


def _inner(kernel, bspace, m, X, what):
    """Inner integral of a kernel family over panel m, at observation points X."""
    A = bspace.A[m]
    that = bspace.tangents[m]
    nhat = bspace.normals[m]
    L = bspace.lengths[m]
    prim = _primitives(A, that, nhat, L, X)
    geo = (that, nhat)
    if what == "V":
        return kernel.v_block(prim, geo)
    if what == "G":
        return kernel.ghat_block(prim, geo)
    if what == "K":
        k0, kt = kernel.k_blocks(prim, geo)
        if np.any(prim["online"]):
            s0, st = kernel.k_self_inner(prim, geo)
            mask = prim["online"][:, None, None]
            k0 = np.where(mask, s0, k0)
            kt = np.where(mask, st, kt)
        return k0, kt
    raise ValueError(what)


# ---------------------------------------------------------------------------
# operator assembly
# ---------------------------------------------------------------------------

@dataclass
class BoundaryOperators:
    """Dense Galerkin matrices of the exterior boundary integral operators."""

    bspace: BoundarySpace
    coeffs: object                 # ExteriorCoefficients or None (Laplace)
    d: int
    V: np.ndarray                  # (dL, dL)
    K: np.ndarray                  # (dL, dM) exterior-trace convention
    W: np.ndarray                  # (dM, dM)
    Mb: np.ndarray                 # (dL, dM) P0xP1 coupling
    M1: np.ndarray                 # (dM, dM) P1 boundary mass
    M0: np.ndarray = None          # (dL,) P0 mass diagonal
    half_factor: bool = False
    _S: np.ndarray = field(default=None, repr=False)

    @property
    def n_p0(self):
        return self.V.shape[0]

    @property
    def n_p1(self):
        return self.W.shape[0]

    def steklov_poincare(self):
        """S = W + (Mb-K)^T V^{-1} (Mb-K); halved when half_factor is set."""
        if self._S is None:
            T = self.Mb - self.K
            X = sla.cho_solve(sla.cho_factor(self.V), T)
            S = self.W + T.T @ X
            S = 0.5 * (S + S.T)
            if self.half_factor:
                S = 0.5 * S
            self._S = S
        return self._S

    def dump_csv(self, directory):
        import os
        os.makedirs(directory, exist_ok=True)
        for name in ("V", "K", "W", "Mb", "M1"):
            np.savetxt(os.path.join(directory, name + ".csv"),
                       getattr(self, name), delimiter=",", fmt="%.17g")


def steklov_poincare(ops):
    """Module-level convenience: the discrete Steklov-Poincare matrix of ops."""
    return ops.steklov_poincare()


def _kernel_for(coeffs):
    return _LaplaceKernel() if coeffs is None else _LameKernel(coeffs)


def _pair_class(bspace, l, m):
    if l == m:
        return "self"
    share = ({int(bspace.panel_start[l]), int(bspace.panel_end[l])}
             & {int(bspace.panel_start[m]), int(bspace.panel_end[m])})
    if share:
        return "adjacent"
    dist = np.linalg.norm(bspace.mids[l] - bspace.mids[m])
    if dist < 1.5 * max(bspace.lengths[l], bspace.lengths[m]):
        return "near"
    return "far"


def assemble_operators(bspace, coeffs=None, quad_order=8, check_scaling=True):
    """Assemble V, K, W and the mass couplings for the given exterior kernel."""
    if check_scaling and bspace.diameter() >= 1.0:
        raise ValueError("boundary diameter >= 1: rescale the geometry first "
                         "(single-layer positivity requires capacity < 1)")
    ker = _kernel_for(coeffs)
    d = ker.d
    L = bspace.n_panels
    M = bspace.n_nodes
    q = max(4, int(quad_order))

    xg, wg = segment_gauss(q)
    xga, wga = graded_gauss(levels=12, order=8, toward_zero=True)

    Vfull = np.zeros((L, L, d, d))
    Gfull = np.zeros((L, L, d, d))
    K0full = np.zeros((L, L, d, d))   # weight (1 - tau/L): node = panel_start[m]
    Ktfull = np.zeros((L, L, d, d))   # weight tau/L:       node = panel_end[m]

    classes = np.empty((L, L), dtype=object)
    for l in range(L):
        for m in range(L):
            classes[l, m] = _pair_class(bspace, l, m)

    # far/near pairs: plain Gauss outer (finer for near), vectorized over rows
    xgn, wgn = segment_gauss(3 * q)
    for m in range(L):
        for cls, nodes, wts in (("far", xg, wg), ("near", xgn, wgn)):
            rows = [l for l in range(L) if classes[l, m] == cls]
            if not rows:
                continue
            nq = len(nodes)
            idx = np.asarray(rows)
            pts = (bspace.A[idx][:, None, :]
                   + nodes[None, :, None] * (bspace.B[idx] - bspace.A[idx])[:, None, :])
            Xall = pts.reshape(-1, 2)
            vb = _inner(ker, bspace, m, Xall, "V").reshape(len(idx), nq, d, d)
            gb = _inner(ker, bspace, m, Xall, "G").reshape(len(idx), nq, d, d)
            k0, kt = _inner(ker, bspace, m, Xall, "K")
            k0 = k0.reshape(len(idx), nq, d, d)
            kt = kt.reshape(len(idx), nq, d, d)
            wl = (wts[None, :] * bspace.lengths[idx][:, None])
            Vfull[idx, m] = np.einsum("lq,lqab->lab", wl, vb)
            Gfull[idx, m] = np.einsum("lq,lqab->lab", wl, gb)
            K0full[idx, m] = np.einsum("lq,lqab->lab", wl, k0)
            Ktfull[idx, m] = np.einsum("lq,lqab->lab", wl, kt)

    # adjacent pairs: graded outer rule toward the shared vertex
    for l in range(L):
        for m in range(L):
            cls = classes[l, m]
            if cls not in ("adjacent",):
                continue
            shared = ({int(bspace.panel_start[l]), int(bspace.panel_end[l])}
                      & {int(bspace.panel_start[m]), int(bspace.panel_end[m])}).pop()
            toward_start = (shared == int(bspace.panel_start[l]))
            t = xga if toward_start else 1.0 - xga
            pts = bspace.A[l][None, :] + t[:, None] * (bspace.B[l] - bspace.A[l])[None, :]
            wl = wga * bspace.lengths[l]
            vb = _inner(ker, bspace, m, pts, "V")
            gb = _inner(ker, bspace, m, pts, "G")
            k0, kt = _inner(ker, bspace, m, pts, "K")
            Vfull[l, m] = np.einsum("q,qab->ab", wl, vb)
            Gfull[l, m] = np.einsum("q,qab->ab", wl, gb)
            K0full[l, m] = np.einsum("q,qab->ab", wl, k0)
            Ktfull[l, m] = np.einsum("q,qab->ab", wl, kt)

    # self pairs
    xgs = np.concatenate([0.5 * xga, 1.0 - 0.5 * xga])
    wgs = np.concatenate([0.5 * wga, 0.5 * wga])
    for l in range(L):
        Vfull[l, l] = ker.v_self(bspace.lengths[l], bspace.tangents[l])
        Gfull[l, l] = ker.ghat_self(bspace.lengths[l], bspace.tangents[l])
        if d == 2:
            pts = bspace.A[l][None, :] + xgs[:, None] * (bspace.B[l] - bspace.A[l])[None, :]
            k0, kt = _inner(ker, bspace, l, pts, "K")
            wl = wgs * bspace.lengths[l]
            K0full[l, l] = np.einsum("q,qab->ab", wl, k0)
            Ktfull[l, l] = np.einsum("q,qab->ab", wl, kt)

    # flatten to (dL, dL) / (dL, dM)
    def flat_ll(Mfull):
        return Mfull.transpose(0, 2, 1, 3).reshape(L * d, L * d)

    V = flat_ll(Vfull)
    Gpair = flat_ll(Gfull)
    V = 0.5 * (V + V.T)
    Gpair = 0.5 * (Gpair + Gpair.T)

    Kpv = np.zeros((L * d, M * d))
    for m in range(L):
        n0, n1 = int(bspace.panel_start[m]), int(bspace.panel_end[m])
        Kpv[:, n0 * d:(n0 + 1) * d] += K0full[:, m].reshape(L * d, d)
        Kpv[:, n1 * d:(n1 + 1) * d] += Ktfull[:, m].reshape(L * d, d)

    Mb = np.zeros((L * d, M * d))
    for m in range(L):
        n0, n1 = int(bspace.panel_start[m]), int(bspace.panel_end[m])
        half = 0.5 * bspace.lengths[m] * np.eye(d)
        Mb[m * d:(m + 1) * d, n0 * d:(n0 + 1) * d] += half
        Mb[m * d:(m + 1) * d, n1 * d:(n1 + 1) * d] += half

    Kext = 0.5 * Mb + Kpv

    # W through its tangential-derivative reduction: W = D^T Gpair D
    D = np.zeros((L * d, M * d))
    for m in range(L):
        n0, n1 = int(bspace.panel_start[m]), int(bspace.panel_end[m])
        inv = 1.0 / bspace.lengths[m]
        for a in range(d):
            D[m * d + a, n0 * d + a] = -inv
            D[m * d + a, n1 * d + a] = +inv
    W = D.T @ Gpair @ D
    W = 0.5 * (W + W.T)

    M1 = np.zeros((M * d, M * d))
    for m in range(L):
        n0, n1 = int(bspace.panel_start[m]), int(bspace.panel_end[m])
        Le = bspace.lengths[m]
        for a in range(d):
            i, j = n0 * d + a, n1 * d + a
            M1[i, i] += Le / 3
            M1[j, j] += Le / 3
            M1[i, j] += Le / 6
            M1[j, i] += Le / 6

    M0 = np.repeat(bspace.lengths, d)

    return BoundaryOperators(bspace=bspace, coeffs=coeffs, d=d, V=V, K=Kext,
                             W=W, Mb=Mb, M1=M1, M0=M0)


# ---------------------------------------------------------------------------
# rigid body stabilization
# ---------------------------------------------------------------------------

@dataclass
class RigidBodyBasis:
    """L2-orthonormal piecewise-constant projections of the rigid motions."""

    xi: np.ndarray        # (dL, D)
    rigid_p1: np.ndarray  # (dM, D) nodal traces of the rigid motions

    @property
    def dim(self):
        return self.xi.shape[1]


def rigid_motions(bspace, d):
    """Rigid-motion traces: P0 midpoint projections and P1 nodal values."""
    L, M = bspace.n_panels, bspace.n_nodes
    if d == 1:
        p0 = np.ones((L, 1))
        p1 = np.ones((M, 1))
        return p0.reshape(L, 1), p1.reshape(M, 1)
    cols0, cols1 = [], []
    for e in np.eye(2):
        cols0.append(np.tile(e, (L, 1)).reshape(-1))
        cols1.append(np.tile(e, (M, 1)).reshape(-1))
    rot0 = np.column_stack([-bspace.mids[:, 1], bspace.mids[:, 0]]).reshape(-1)
    rot1 = np.column_stack([-bspace.nodes[:, 1], bspace.nodes[:, 0]]).reshape(-1)
    cols0.append(rot0)
    cols1.append(rot1)
    return np.column_stack(cols0), np.column_stack(cols1)


def stabilization_data(bspace, ops):
    """Gram-Schmidt of rigid-motion P0 projections in the boundary L2 product."""
    p0, p1 = rigid_motions(bspace, ops.d)
    w = ops.M0
    xi = p0.astype(float).copy()
    for j in range(xi.shape[1]):
        for i in range(j):
            xi[:, j] -= (xi[:, i] * w) @ xi[:, j] * xi[:, i]
        nrm = np.sqrt((xi[:, j] * w) @ xi[:, j])
        xi[:, j] /= nrm
    return RigidBodyBasis(xi=xi, rigid_p1=p1)


def stabilization_vectors(ops, basis):
    """Rows a_j over stacked (P1 trace dofs, P0 density dofs) such that

    a_j . (w, phi) = <xi_j, (1-K) w + V phi>.

    The stabilized bilinear form adds sum_j a_j a_j^T; the stabilized right
    hand side adds sum_j <xi_j, (1-K) u0> a_j.
    """
    T = ops.Mb - ops.K
    aw = basis.xi.T @ T           # (D, dM)
    aphi = basis.xi.T @ ops.V     # (D, dL)
    return np.hstack([aw, aphi])


# pointwise evaluation --------------------------------------------------------

def eval_single_layer(bspace, coeffs, density, X):
    """(V phi)(x) for a P0 density phi, at arbitrary points X."""
    ker = _kernel_for(coeffs)
    d = ker.d
    X = np.atleast_2d(X)
    dens = np.asarray(density).reshape(bspace.n_panels, d)
    out = np.zeros((len(X), d))
    for m in range(bspace.n_panels):
        blk = _inner(ker, bspace, m, X, "V")      # (n, d, d)
        out += np.einsum("nab,b->na", blk, dens[m])
    return out


def eval_double_layer_pv(bspace, coeffs, wcoef, X):
    """Principal-value (K_pv w)(x) for a P1 density w, at points X on or off the boundary."""
    ker = _kernel_for(coeffs)
    d = ker.d
    X = np.atleast_2d(X)
    w = np.asarray(wcoef).reshape(bspace.n_nodes, d)
    out = np.zeros((len(X), d))
    for m in range(bspace.n_panels):
        k0, kt = _inner(ker, bspace, m, X, "K")
        n0, n1 = int(bspace.panel_start[m]), int(bspace.panel_end[m])
        out += np.einsum("nab,b->na", k0, w[n0]) + np.einsum("nab,b->na", kt, w[n1])
    return out
