"""P1 finite elements: spaces, nonlinear residual/tangent assembly, loads, norms."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import material as mat
from .mesh import triangle_areas
from .quadrature import QuadratureRule, segment_gauss


class FESpace:
    """Piecewise-linear space on a triangulation, 1 (scalar) or 2 (vector) components."""

    def __init__(self, mesh, ncomp=1):
        if ncomp not in (1, 2):
            raise ValueError("ncomp must be 1 or 2")
        self.mesh = mesh
        self.ncomp = ncomp
        self.ndof = len(mesh.vertices) * ncomp
        self.areas = triangle_areas(mesh)
        # gradients of the three barycentric basis functions per triangle
        p, t = mesh.vertices, mesh.triangles
        v0, v1, v2 = p[t[:, 0]], p[t[:, 1]], p[t[:, 2]]
        twoA = 2.0 * self.areas
        g = np.empty((len(t), 3, 2))
        g[:, 0, 0] = v1[:, 1] - v2[:, 1]
        g[:, 0, 1] = v2[:, 0] - v1[:, 0]
        g[:, 1, 0] = v2[:, 1] - v0[:, 1]
        g[:, 1, 1] = v0[:, 0] - v2[:, 0]
        g[:, 2, 0] = v0[:, 1] - v1[:, 1]
        g[:, 2, 1] = v1[:, 0] - v0[:, 0]
        self.grads = g / twoA[:, None, None]
        loop, labels = mesh.boundary_loop()
        self.boundary_loop = loop
        self.boundary_labels = labels

    def dof(self, vertex, comp=0):
        return vertex * self.ncomp + comp

    def vertex_values(self, coeffs):
        """(nv, ncomp) view of a coefficient vector."""
        return np.asarray(coeffs).reshape(-1, self.ncomp)

    def gradients(self, coeffs):
        """Elementwise gradient: (nt, 2) scalar mode, (nt, 2, 2) rows=components vector mode."""
        vals = self.vertex_values(coeffs)[self.mesh.triangles]  # (nt, 3, ncomp)
        g = np.einsum("tkc,tkd->tcd", vals, self.grads)
        return g[:, 0, :] if self.ncomp == 1 else g

    def strains(self, coeffs):
        """Elementwise gradient (scalar) or symmetric strain (vector)."""
        g = self.gradients(coeffs)
        if self.ncomp == 1:
            return g
        return 0.5 * (g + np.transpose(g, (0, 2, 1)))

    def interpolate(self, fn):
        """Nodal interpolation of a callable fn(points)->(n,) or (n,2)."""
        vals = np.asarray(fn(self.mesh.vertices), dtype=float)
        if self.ncomp == 1:
            return vals.reshape(-1)
        return vals.reshape(-1, 2).reshape(-1)


def _basis_strains(space):
    """Per-element strain of each local basis function.

    scalar: (nt, 3, 2) gradients; vector: (nt, 6, 2, 2) symmetrized dyads,
    local dof ordering (vertex-major, component-minor).
    """
    g = space.grads
    if space.ncomp == 1:
        return g
    nt = g.shape[0]
    out = np.zeros((nt, 6, 2, 2))
    for k in range(3):
        for c in range(2):
            e = np.zeros(2)
            e[c] = 1.0
            dy = 0.5 * (e[:, None] * g[:, k, None, :] + g[:, k, :, None] * e[None, :])
            out[:, 2 * k + c] = dy
    return out


def _local_dofs(space):
    t = space.mesh.triangles
    if space.ncomp == 1:
        return t
    return np.stack([2 * t[:, 0], 2 * t[:, 0] + 1,
                     2 * t[:, 1], 2 * t[:, 1] + 1,
                     2 * t[:, 2], 2 * t[:, 2] + 1], axis=1)


def assemble_residual(space, law, coeffs, quad_order=4):
    """Vector with entries <A'(strain(u_h)), strain(phi_i)>.

    Exact for P1 (the integrand is constant per element); quad_order is
    validated for interface consistency with the load assembly.
    """
    if quad_order < 2:
        raise ValueError("quadrature order below 2 rejected")
    eps = space.strains(coeffs)
    sig = mat.stress(law, eps)
    bs = _basis_strains(space)
    if space.ncomp == 1:
        loc = np.einsum("td,tkd,t->tk", sig, bs, space.areas)
    else:
        loc = np.einsum("tij,tkij,t->tk", sig, bs, space.areas)
    R = np.zeros(space.ndof)
    np.add.at(R, _local_dofs(space), loc)
    return R


def assemble_tangent(space, law, coeffs):
    """Sparse symmetric linearization of the residual at coeffs."""
    eps = space.strains(coeffs)
    c1, c2 = mat.tangent_coeffs(law, eps)
    bs = _basis_strains(space)
    if space.ncomp == 1:
        bb = np.einsum("tkd,tld->tkl", bs, bs)
        xb = np.einsum("td,tkd->tk", eps, bs)
    else:
        bb = np.einsum("tkij,tlij->tkl", bs, bs)
        xb = np.einsum("tij,tkij->tk", eps, bs)
    loc = (c1[:, None, None] * bb
           + c2[:, None, None] * xb[:, :, None] * xb[:, None, :])
    loc *= space.areas[:, None, None]
    dofs = _local_dofs(space)
    n = dofs.shape[1]
    rows = np.repeat(dofs, n, axis=1).ravel()
    cols = np.tile(dofs, (1, n)).ravel()
    A = sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(space.ndof, space.ndof))
    return A.tocsr()


def assemble_load(space, f, quad_order=4):
    """Vector with entries int_Omega f . phi_i, by elementwise quadrature."""
    rule = QuadratureRule(quad_order)
    verts = space.mesh.vertices[space.mesh.triangles]   # (nt, 3, 2)
    pts = rule.points(verts)                            # (nt, nq, 2)
    fv = np.asarray(f(pts.reshape(-1, 2)), dtype=float)
    nt, nq = pts.shape[:2]
    if space.ncomp == 1:
        fv = fv.reshape(nt, nq)
        loc = np.einsum("tq,qk,q,t->tk", fv, rule.bary, rule.weights, space.areas)
    else:
        fv = fv.reshape(nt, nq, 2)
        loc = np.einsum("tqc,qk,q,t->tkc", fv, rule.bary, rule.weights,
                        space.areas).reshape(nt, 6)
    R = np.zeros(space.ndof)
    np.add.at(R, _local_dofs(space), loc)
    return R


def energy(space, law, coeffs):
    """int_Omega A(strain(u_h)); exact for P1 fields."""
    eps = space.strains(coeffs)
    return float(np.sum(mat.potential(law, eps) * space.areas))


def norms(space, coeffs, p, quad_order=6, trace_labels=("S", "T")):
    """(full W^{1,p} norm, L^p norm of strain/gradient, L^1 boundary trace norm)."""
    rule = QuadratureRule(quad_order)
    verts = space.mesh.vertices[space.mesh.triangles]
    vals = space.vertex_values(coeffs)[space.mesh.triangles]  # (nt,3,ncomp)
    uq = np.einsum("qk,tkc->tqc", rule.bary, vals)
    umag = np.sqrt(np.einsum("tqc,tqc->tq", uq, uq))
    int_u_p = np.einsum("tq,q,t->", umag ** p, rule.weights, space.areas)

    g = space.gradients(coeffs)
    if space.ncomp == 1:
        gmag = np.linalg.norm(g, axis=1)
    else:
        gmag = np.sqrt(np.einsum("tij,tij->t", g, g))
    int_g_p = float(np.sum(gmag ** p * space.areas))

    eps = space.strains(coeffs)
    if space.ncomp == 1:
        emag = np.linalg.norm(eps, axis=1)
    else:
        emag = np.sqrt(np.einsum("tij,tij->t", eps, eps))
    int_e_p = float(np.sum(emag ** p * space.areas))

    trace = boundary_trace_l1(space, coeffs, trace_labels)
    w1p = (int_u_p + int_g_p) ** (1.0 / p)
    return w1p, int_e_p ** (1.0 / p), trace


def boundary_trace_l1(space, coeffs, labels=("S", "T")):
    """L^1 norm of |u_h| over the selected boundary parts."""
    mesh = space.mesh
    vals = space.vertex_values(coeffs)
    x, w = segment_gauss(4)
    total = 0.0
    for (a, b), lab in zip(mesh.boundary_edges, mesh.boundary_labels):
        if lab not in labels:
            continue
        L = float(np.linalg.norm(mesh.vertices[b] - mesh.vertices[a]))
        ua, ub = vals[a], vals[b]
        uq = ua[None, :] * (1 - x)[:, None] + ub[None, :] * x[:, None]
        total += L * float(np.sum(w * np.linalg.norm(uq, axis=1)))
    return total
