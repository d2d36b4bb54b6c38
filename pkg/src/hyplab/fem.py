"""P1 finite elements on the glued octagon for arbitrary metric fields."""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu, cg, eigsh

from .errors import DegenerateMetric, NoConvergence, NotPositiveDefinite
from .mesh import _QP_BARY

DIRECT_SOLVE_LIMIT = 50_000


class MetricField:
    """Symmetric 2x2 chart metric sampled at the mesh quadrature points.

    `evaluator(points, order)` optionally supplies closed-form values (and
    Wirtinger jets for order >= 1) at arbitrary chart points.
    """

    def __init__(self, g11, g12, g22, evaluator=None, name=""):
        self.g11 = np.asarray(g11, dtype=float)
        self.g12 = np.asarray(g12, dtype=float)
        self.g22 = np.asarray(g22, dtype=float)
        self.evaluator = evaluator
        self.name = name
        self.det = self.g11 * self.g22 - self.g12 ** 2
        tr = self.g11 + self.g22
        disc = np.sqrt(np.maximum(tr ** 2 - 4.0 * self.det, 0.0))
        self.min_eig = float(np.min((tr - disc) / 2.0))
        if self.min_eig <= 0.0 or np.any(self.det <= 0.0):
            raise DegenerateMetric(
                f"metric {name or '<anon>'} has min eigenvalue {self.min_eig:.3e}")
        self.sqrt_det = np.sqrt(self.det)
        self.inv11 = self.g22 / self.det
        self.inv12 = -self.g12 / self.det
        self.inv22 = self.g11 / self.det

    def check_positive(self, floor=1e-12):
        if self.min_eig <= floor:
            raise DegenerateMetric(
                f"metric min eigenvalue {self.min_eig:.3e} <= {floor:.1e}")

    def area(self, mesh):
        return float(np.sum(mesh.quad_weight * self.sqrt_det))


@dataclass
class SparseOperator:
    """Stiffness with its paired mass matrix over merged DOFs."""

    stiffness: sparse.csr_matrix
    mass: sparse.csr_matrix = None
    lumped_mass: np.ndarray = None
    kind: str = "scalar"


def _local_to_global(mesh, local, section=False, conj_columns=False):
    """Scatter per-triangle 3x3 local matrices into merged-DOF CSR.

    For sections the prolongation carries the complex transition weights and
    the assembled matrix is Hermitian.  With conj_columns the column space
    is the conjugate bundle (conjugated transition weights), as needed for
    operators pairing a bundle with its conjugate.
    """
    nt = len(mesh.triangles)
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    data = local.reshape(nt, 9).ravel()
    nv = len(mesh.vertices)
    A_disk = sparse.csr_matrix((data, (rows, cols)), shape=(nv, nv))
    P = mesh.P_section if section else mesh.P_scalar
    Ph = P.conjugate().transpose() if section else P.transpose()
    Pc = P.conjugate() if conj_columns else P
    return (Ph @ A_disk @ Pc).tocsr()


def assemble_mass(mesh, metric, fiber_weight=None, section=False,
                  conj_columns=False):
    """Mass matrix: rows sum to the metric area of the basis support."""
    metric.check_positive()
    w = mesh.quad_weight * metric.sqrt_det            # (nt, 3)
    if fiber_weight is not None:
        w = w * fiber_weight
    B = _QP_BARY                                      # (3q, 3n)
    local = np.einsum("tq,qm,qn->tmn", w, B, B)
    if section:
        local = local.astype(complex)
    return _local_to_global(mesh, local, section=section,
                            conj_columns=conj_columns)


def lumped_mass_vector(mesh, metric, fiber_weight=None):
    """Row-sum lumping of the scalar mass matrix."""
    M = assemble_mass(mesh, metric, fiber_weight=fiber_weight)
    return np.asarray(M.sum(axis=1)).ravel()


def assemble_stiffness(mesh, metric, connection=None, fiber_weight=None):
    """Dirichlet form; with `connection`, the covariant form on sections.

    connection: (nt, 3, 2) complex values theta_i at quadrature points, so
    D_i N = grad_i N + theta_i N.  fiber_weight scales the fiber inner
    product (phi_{v vbar} for tangent sections).
    """
    metric.check_positive()
    w = mesh.quad_weight * metric.sqrt_det
    if fiber_weight is not None:
        wf = w * fiber_weight
    else:
        wf = w
    G = mesh.grad_basis                                # (nt, 3n, 2)
    inv = np.stack([np.stack([metric.inv11, metric.inv12], axis=-1),
                    np.stack([metric.inv12, metric.inv22], axis=-1)], axis=-2)
    # inv has shape (nt, 3q, 2, 2)
    if connection is None:
        Wg = np.einsum("tq,tqij->tij", wf, inv)        # (nt, 2, 2)
        local = np.einsum("tmi,tij,tnj->tmn", G, Wg, G)
        return _local_to_global(mesh, local)
    theta = np.asarray(connection, dtype=complex)      # (nt, 3q, 2)
    B = _QP_BARY
    # D[t, q, n, i] = grad_i N_n + theta_i(q) N_n(q)
    D = G[:, None, :, :] + theta[:, :, None, :] * B[None, :, :, None]
    local = np.einsum("tq,tqmi,tqij,tqnj->tmn", wf, np.conj(D), inv, D)
    return _local_to_global(mesh, local, section=True)


def assemble_load(mesh, metric, f_quad, fiber_weight=None, section=False):
    """Load vector <f, N_m> from quadrature samples of f."""
    w = mesh.quad_weight * metric.sqrt_det
    if fiber_weight is not None:
        w = w * fiber_weight
    wf = w * np.asarray(f_quad)
    B = _QP_BARY
    local = np.einsum("tq,qm->tm", wf, B)
    nv = len(mesh.vertices)
    vec = np.zeros(nv, dtype=local.dtype)
    np.add.at(vec, mesh.triangles.ravel(), local.ravel())
    P = mesh.P_section if section else mesh.P_scalar
    if section:
        return P.conjugate().transpose() @ vec
    return P.transpose() @ vec


def integrate(mesh, metric, f_quad):
    """Quadrature integral of samples f against the metric area form."""
    w = mesh.quad_weight * metric.sqrt_det
    return complex(np.sum(w * f_quad)) if np.iscomplexobj(f_quad) \
        else float(np.sum(w * f_quad))


class _Factorized:
    def __init__(self, A):
        n = A.shape[0]
        self.A = A
        if n <= DIRECT_SOLVE_LIMIT:
            self.lu = splu(A.tocsc())
            self.direct = True
        else:
            self.direct = False
            d = A.diagonal()
            self.Minv = sparse.diags(1.0 / d)

    def solve(self, b):
        if self.direct:
            return self.lu.solve(b)
        x, info = cg(self.A, b, M=self.Minv, rtol=1e-12, atol=0.0, maxiter=20000)
        if info != 0:
            raise NoConvergence(f"CG did not converge (info={info})")
        return x


def solve_spd(op, shift, rhs, rhs_is_nodal=True):
    """Solve (K + shift M) x = M rhs to relative residual <= 1e-10."""
    A = (op.stiffness + shift * op.mass).tocsc()
    b = op.mass @ rhs if rhs_is_nodal else rhs
    if np.iscomplexobj(b) or np.iscomplexobj(A.data):
        A = A.astype(complex)
        b = b.astype(complex)
    fact = _Factorized(A)
    x = fact.solve(b)
    nb = np.linalg.norm(b)
    res = np.linalg.norm(A @ x - b) / (nb if nb > 0 else 1.0)
    if res > 1e-10:
        raise NoConvergence(f"linear solve residual {res:.2e} > 1e-10")
    quad = np.real(np.vdot(x, A @ x))
    if nb > 0 and quad <= 0.0:
        raise NotPositiveDefinite("operator is not positive definite")
    return x


def smallest_nonzero_eigenvalue(K, M, k=3):
    """Smallest nonzero generalized eigenvalue of K x = lam M x."""
    vals = eigsh(K, k=k, M=M, sigma=0.0, which="LM",
                 return_eigenvectors=False)
    vals = np.sort(np.real(vals))
    nz = vals[np.abs(vals) > 1e-8]
    return float(nz[0])
