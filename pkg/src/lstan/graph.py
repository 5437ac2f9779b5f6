"""Road graph, normalized Laplacian, Jacobi eigensolver and spectral node embedding."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .tensor import ShapeError, Tensor, matmul

logger = logging.getLogger(__name__)


class GraphError(DataError):
    code = "graph"


@dataclass
class RoadGraph:
    """Undirected weighted sensor graph; ``edges`` are ``(i, j, w)`` triples."""

    node_count: int
    edges: list[tuple[int, int, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.node_count < 1:
            raise GraphError(f"node_count must be positive, got {self.node_count}")
        for i, j, w in self.edges:
            if not (0 <= i < self.node_count and 0 <= j < self.node_count):
                raise GraphError(f"edge ({i}, {j}) out of range for {self.node_count} nodes")
            if w < 0:
                raise GraphError(f"negative edge weight {w} on ({i}, {j})")

    def adjacency(self) -> np.ndarray:
        """Symmetric adjacency with zero diagonal. Later duplicates overwrite earlier ones."""
        a = np.zeros((self.node_count, self.node_count))
        for i, j, w in self.edges:
            if i == j:
                continue
            a[i, j] = w
            a[j, i] = w
        return a

    @classmethod
    def ring(cls, n: int) -> "RoadGraph":
        if n == 2:
            return cls(2, [(0, 1, 1.0)])
        return cls(n, [(i, (i + 1) % n, 1.0) for i in range(n)])


def load_adjacency_csv(path: str | Path, node_count: int) -> RoadGraph:
    """Read ``from,to[,weight]`` lines. ``#`` starts a comment; a non-numeric header row is skipped."""
    edges: dict[tuple[int, int], float] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            try:
                i, j = int(float(parts[0])), int(float(parts[1]))
                w = float(parts[2]) if len(parts) > 2 and parts[2] else 1.0
            except (ValueError, IndexError):
                if not edges and lineno <= 2:
                    continue
                raise GraphError(f"{path}:{lineno}: cannot parse edge {line!r}") from None
            key = (min(i, j), max(i, j))
            edges.pop(key, None)
            edges[key] = w
    return RoadGraph(node_count, [(i, j, w) for (i, j), w in edges.items()])


def write_adjacency_csv(graph: RoadGraph, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# nodes={graph.node_count}\n")
        for i, j, w in graph.edges:
            fh.write(f"{i},{j},{w!r}\n")


def normalized_laplacian(graph: RoadGraph | np.ndarray) -> np.ndarray:
    """``I - D^-1/2 A D^-1/2``; isolated nodes get an identity row."""
    a = graph.adjacency() if isinstance(graph, RoadGraph) else np.asarray(graph, dtype=np.float64)
    if (a < 0).any():
        raise GraphError("adjacency has negative weights")
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 0.0)
    deg = a.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    return np.eye(len(a)) - inv_sqrt[:, None] * a * inv_sqrt[None, :]


@dataclass
class SpectralBasis:
    """Eigenpairs of a symmetric matrix in row convention: ``U.T @ diag(eigenvalues) @ U == L``.

    ``eigenvalues`` are kept for inspection; only ``eigenvectors`` feed the model.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0

    @property
    def node_count(self) -> int:
        return len(self.eigenvalues)

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return u.T @ (self.eigenvalues[:, None] * u)


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Circle-method schedule: n-1 rounds (n even) of disjoint pairs covering every pair once."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for k in range(m // 2):
            p, q = players[k], players[m - 1 - k]
            if p < n and q < n:
                ps.append(min(p, q))
                qs.append(max(p, q))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0], players[-1], *players[1:-1]]
    return rounds


def jacobi_eigendecomposition(
    matrix: np.ndarray,
    tol: float = 1e-12,
    max_sweeps: int = 60,
    symmetry_tol: float = 1e-12,
) -> SpectralBasis:
    """Cyclic Jacobi eigensolver for a real symmetric matrix.

    Each sweep visits every off-diagonal pair once. Pairs are scheduled in
    round-robin order so that each round's rotations touch disjoint
    rows/columns and can be applied together. Iterates until the
    off-diagonal Frobenius norm drops below ``tol``.

    Eigenvalues come back ascending, eigenvectors as *rows*, each signed so
    its largest-magnitude entry is positive.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {a.shape}")
    asym = np.max(np.abs(a - a.T)) if a.size else 0.0
    if asym > symmetry_tol * max(1.0, np.max(np.abs(a))):
        raise GraphError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    a = 0.5 * (a + a.T)
    n = len(a)
    v = np.eye(n)

    off_mask = ~np.eye(n, dtype=bool)

    def off_norm(m):
        return np.sqrt(np.sum(m[off_mask] ** 2))

    rounds = _round_robin(n) if n > 1 else []
    sweeps = 0
    while off_norm(a) >= tol:
        if sweeps >= max_sweeps:
            raise ArithmeticError(f"Jacobi did not converge in {max_sweeps} sweeps (off-norm {off_norm(a):.3e})")
        sweeps += 1
        for p, q in rounds:
            apq = a[p, q]
            active = apq != 0.0
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t[theta == 0.0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c

            # A <- J^T A J with J[p,p]=J[q,q]=c, J[p,q]=s, J[q,p]=-s
            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            ap, aq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            a[p, q] = 0.0
            a[q, p] = 0.0

            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq

    order = np.argsort(np.diag(a), kind="stable")
    eigenvalues = np.diag(a)[order].copy()
    u = v[:, order].T.copy()
    pivot = np.argmax(np.abs(u), axis=1)
    signs = np.sign(u[np.arange(n), pivot])
    signs[signs == 0] = 1.0
    u *= signs[:, None]
    logger.debug("jacobi: n=%d converged in %d sweeps", n, sweeps)
    return SpectralBasis(eigenvalues, u, sweeps)


def spectral_basis(graph: RoadGraph) -> SpectralBasis:
    return jacobi_eigendecomposition(normalized_laplacian(graph))


def graph_embedding(basis: SpectralBasis | np.ndarray, projection: Tensor) -> Tensor:
    """Project the eigenvector matrix ``U`` (N x N) through trainable ``projection`` (N x D)."""
    u = basis.eigenvectors if isinstance(basis, SpectralBasis) else np.asarray(basis)
    if projection.ndim != 2 or projection.shape[0] != u.shape[1]:
        raise ShapeError(f"projection of shape {projection.shape} does not fit eigenvector matrix {u.shape}")
    return matmul(Tensor(u), projection)
