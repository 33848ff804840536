"""High-fidelity P1 finite-element model of the nine-block thermal problem.

The unit square is split into a 3x3 grid of subdomains with conductivities
``mu[0..8]`` (block 1 bottom-left, block 9 top-right, row-major from the
bottom). Temperature is fixed to zero on the top edge, a unit heat flux
enters through the bottom edge and the vertical sides are insulated.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)

N_BLOCKS = 9
PARAM_BOX = (0.1, 10.0)

DIRICHLET = "dirichlet"      # y = 1
NEUMANN_FLUX = "neumann_1"   # y = 0, unit flux
NEUMANN_ZERO = "neumann_0"   # x = 0 and x = 1, insulated


class MeshError(ValueError):
    pass


class AssemblyError(RuntimeError):
    pass


class SolverError(RuntimeError):
    def __init__(self, msg, iterations=None):
        super().__init__(msg)
        self.iterations = iterations


@dataclass(frozen=True)
class TriangularMesh:
    nodes: np.ndarray            # (n_nodes, 2)
    triangles: np.ndarray        # (n_tri, 3)
    block_ids: np.ndarray        # (n_tri,) in 1..9
    boundary_edges: np.ndarray   # (n_edges, 2)
    boundary_tags: tuple         # one tag per boundary edge
    free_nodes: np.ndarray       # node indices carrying a dof, in dof order
    divisions: int

    @property
    def n_dofs(self):
        return len(self.free_nodes)

    def dof_of_node(self):
        """Map node index -> dof index (-1 for Dirichlet nodes)."""
        out = -np.ones(len(self.nodes), dtype=int)
        out[self.free_nodes] = np.arange(len(self.free_nodes))
        return out


def build_mesh(divisions_per_side):
    """Structured triangulation of the unit square.

    Each grid cell is cut along one diagonal, alternating the diagonal in a
    checkerboard pattern. ``divisions_per_side`` must be a multiple of 3 so
    that the block interfaces at 1/3 and 2/3 are mesh lines.
    """
    d = int(divisions_per_side)
    if d < 3 or d % 3 != 0:
        raise MeshError(
            f"divisions_per_side={divisions_per_side} must be >= 3 and divisible by 3 "
            "so that block boundaries align with element edges")

    xs = np.linspace(0.0, 1.0, d + 1)
    X, Y = np.meshgrid(xs, xs)  # row j = y index
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return i + j * (d + 1)

    tris = []
    for j in range(d):
        for i in range(d):
            a, b, c, e = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
            if (i + j) % 2 == 0:
                tris.append((a, b, c))
                tris.append((a, c, e))
            else:
                tris.append((a, b, e))
                tris.append((b, c, e))
    triangles = np.asarray(tris, dtype=int)

    centroids = nodes[triangles].mean(axis=1)
    bx = np.minimum((centroids[:, 0] * 3).astype(int), 2)
    by = np.minimum((centroids[:, 1] * 3).astype(int), 2)
    block_ids = 1 + bx + 3 * by

    edges, tags = [], []
    for i in range(d):
        edges.append((nid(i, 0), nid(i + 1, 0)))
        tags.append(NEUMANN_FLUX)
        edges.append((nid(i, d), nid(i + 1, d)))
        tags.append(DIRICHLET)
    for j in range(d):
        edges.append((nid(0, j), nid(0, j + 1)))
        tags.append(NEUMANN_ZERO)
        edges.append((nid(d, j), nid(d, j + 1)))
        tags.append(NEUMANN_ZERO)

    free = np.flatnonzero(nodes[:, 1] < 1.0 - 1e-12)
    return TriangularMesh(nodes=nodes, triangles=triangles, block_ids=block_ids,
                          boundary_edges=np.asarray(edges, dtype=int),
                          boundary_tags=tuple(tags), free_nodes=free, divisions=d)


def _element_stiffness(mesh):
    """Local P1 stiffness matrices, shape (n_tri, 3, 3)."""
    p = mesh.nodes[mesh.triangles]  # (T, 3, 2)
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    area = 0.5 * np.abs(det)
    if np.any(area <= 1e-14):
        bad = np.flatnonzero(area <= 1e-14)
        raise AssemblyError(f"degenerate triangles (zero area): {bad[:10].tolist()}")
    # gradients of barycentric coordinates
    grads = np.empty((len(p), 3, 2))
    for k in range(3):
        a = p[:, (k + 1) % 3]
        b = p[:, (k + 2) % 3]
        grads[:, k, 0] = (a[:, 1] - b[:, 1]) / det
        grads[:, k, 1] = (b[:, 0] - a[:, 0]) / det
    return area[:, None, None] * np.einsum("tid,tjd->tij", grads, grads)


def assemble_block_stiffness(mesh, block, restrict=True):
    """Stiffness matrix of a single block; full node numbering if not ``restrict``."""
    local = _element_stiffness(mesh)
    sel = mesh.block_ids == block
    tri = mesh.triangles[sel]
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    nn = len(mesh.nodes)
    A = sp.coo_matrix((local[sel].ravel(), (rows, cols)), shape=(nn, nn)).tocsr()
    A.sum_duplicates()
    if restrict:
        A = A[mesh.free_nodes][:, mesh.free_nodes].tocsr()
    return A


def _neumann_load(mesh):
    nn = len(mesh.nodes)
    f = np.zeros(nn)
    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        if tag == NEUMANN_FLUX:
            h = np.linalg.norm(mesh.nodes[a] - mesh.nodes[b])
            f[a] += 0.5 * h
            f[b] += 0.5 * h
    return f[mesh.free_nodes]


@dataclass(frozen=True)
class AffineOperator:
    """Parameter-independent pieces of A(mu) = sum_q mu_q A^q and f."""

    components: tuple            # 9 csr matrices (n x n)
    rhs: np.ndarray
    inner_product: sp.csr_matrix
    outputs: dict                # "compliant", "output_1", "output_2" -> n-vector
    mesh: TriangularMesh = field(repr=False)

    @property
    def n(self):
        return self.rhs.shape[0]

    @property
    def n_terms(self):
        return len(self.components)


def nearest_free_node(mesh, point):
    free_xy = mesh.nodes[mesh.free_nodes]
    k = int(np.argmin(np.linalg.norm(free_xy - np.asarray(point), axis=1)))
    return k  # dof index


DEFAULT_POINTS = ((1.0 / 3.0, 1.0 / 3.0), (0.5, 0.25))


def assemble_affine_components(mesh, output_points=DEFAULT_POINTS):
    comps = tuple(assemble_block_stiffness(mesh, q) for q in range(1, N_BLOCKS + 1))
    K = comps[0].copy()
    for A in comps[1:]:
        K = K + A
    K = K.tocsr()
    f = _neumann_load(mesh)
    outputs = {"compliant": f.copy()}
    for i, pt in enumerate(output_points, start=1):
        e = np.zeros(mesh.n_dofs)
        e[nearest_free_node(mesh, pt)] = 1.0
        outputs[f"output_{i}"] = e
    return AffineOperator(components=comps, rhs=f, inner_product=K, outputs=outputs, mesh=mesh)


def check_input(mu):
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (N_BLOCKS,):
        raise ValueError(f"expected {N_BLOCKS} parameters, got shape {mu.shape}")
    lo, hi = PARAM_BOX
    if np.any(~np.isfinite(mu)) or np.any(mu < lo - 1e-12) or np.any(mu > hi + 1e-12):
        raise ValueError(f"parameter outside [{lo}, {hi}]^9: {mu}")
    return mu


def assemble_full(op, mu):
    mu = check_input(mu)
    A = mu[0] * op.components[0]
    for m, Aq in zip(mu[1:], op.components[1:]):
        A = A + m * Aq
    return A.tocsr()


def solve_hifi(op, mu, rtol=1e-10):
    """Solve A(mu) u = f; direct factorization, CG if the residual check fails."""
    return solve_system(op, mu, op.rhs, rtol=rtol)


def solve_system(op, mu, f, rtol=1e-10):
    A = assemble_full(op, mu)
    fnorm = np.linalg.norm(f)
    u = spla.splu(A.tocsc()).solve(f)
    res = np.linalg.norm(A @ u - f)
    if np.all(np.isfinite(u)) and res <= rtol * fnorm:
        return u
    logger.warning("direct solve residual %.2e too large, falling back to CG", res)
    its = [0]

    def count(_):
        its[0] += 1

    u, info = spla.cg(A, f, x0=u if np.all(np.isfinite(u)) else None,
                      rtol=rtol, maxiter=10 * op.n, callback=count)
    res = np.linalg.norm(A @ u - f)
    if info != 0 or res > rtol * fnorm:
        raise SolverError(f"CG did not converge after {its[0]} iterations "
                          f"(residual {res:.3e})", iterations=its[0])
    return u


def compliant_output(op, u):
    return float(op.rhs @ u)


def point_output(op, u, node):
    """Temperature at mesh node ``node`` (node index, not dof index)."""
    dof = op.mesh.dof_of_node()[node]
    if dof < 0:
        raise ValueError(f"node {node} lies on the Dirichlet boundary")
    return float(u[dof])


def output(op, u, output_id):
    return float(op.outputs[output_id] @ u)


def norm(op, mu, v):
    """Energy norm sqrt(v^T A(mu) v), or the X-norm sqrt(v^T K v) when ``mu`` is None."""
    M = op.inner_product if mu is None else assemble_full(op, mu)
    sq = float(v @ (M @ v))
    scale = float(np.abs(v) @ (abs(M) @ np.abs(v)))
    if sq < 0:
        if sq < -1e-12 * max(scale, 1e-300):
            raise AssemblyError(f"negative squared norm {sq:.3e}; matrix not SPD")
        sq = 0.0
    return float(np.sqrt(sq))


def export_json(op, path):
    """Write mesh and operator triplets to a JSON container for inspection."""
    def trip(A):
        A = A.tocoo()
        return {"shape": list(A.shape), "row": A.row.tolist(), "col": A.col.tolist(),
                "data": A.data.tolist()}

    m = op.mesh
    doc = {
        "format": "romes.hifi/1",
        "mesh": {"divisions": m.divisions, "nodes": m.nodes.tolist(),
                 "triangles": m.triangles.tolist(), "block_ids": m.block_ids.tolist(),
                 "boundary_edges": m.boundary_edges.tolist(),
                 "boundary_tags": list(m.boundary_tags),
                 "free_nodes": m.free_nodes.tolist()},
        "components": [trip(A) for A in op.components],
        "rhs": op.rhs.tolist(),
        "outputs": {k: v.tolist() for k, v in op.outputs.items()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
