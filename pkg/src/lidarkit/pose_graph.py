"""SE(3) pose graph with odometry and loop edges, optimized by damped Gauss-Newton.

Edge error is ``e = log(Z^-1 X_i^-1 X_j)`` with twists ordered (omega, v).
Nodes are perturbed on the left, ``X <- exp(delta) X``; the first node is the
gauge and never moves.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import (
    canonical_quaternion,
    pose_compose,
    pose_inverse,
    rotation_to_quaternion,
    se3_exp,
    se3_log,
    skew,
)


class GraphError(ValueError):
    pass


ODOMETRY = "odometry"
LOOP = "loop"


@dataclass
class Edge:
    i: int
    j: int
    measurement: np.ndarray
    information: np.ndarray
    kind: str = ODOMETRY


def adjoint(T: np.ndarray) -> np.ndarray:
    """Adjoint of ``T`` acting on (omega, v) twists."""
    R, t = T[:3, :3], T[:3, 3]
    A = np.zeros((6, 6))
    A[:3, :3] = R
    A[3:, 3:] = R
    A[3:, :3] = skew(t) @ R
    return A


def odometry_information(measurement: np.ndarray, min_step: float = 0.1) -> np.ndarray:
    """Identity scaled by 1/step^2; steps shorter than ``min_step`` use ``min_step``."""
    step = max(float(np.linalg.norm(measurement[:3, 3])), min_step)
    return np.eye(6) / step**2


def loop_information(measurement: np.ndarray, hessian: np.ndarray | None) -> np.ndarray:
    """Map a registration Hessian (left perturbation of the estimate) into edge-error coordinates.

    Near the solution ``e ~ Ad(Z^-1) delta``, so the information becomes
    ``Ad(Z)^T H Ad(Z)``.
    """
    if hessian is None:
        return np.eye(6)
    A = adjoint(measurement)
    info = A.T @ np.asarray(hessian, float) @ A
    return 0.5 * (info + info.T)


def _check_info(info) -> np.ndarray:
    info = np.asarray(info, dtype=float)
    if info.shape != (6, 6):
        raise GraphError("information matrix must be 6x6")
    scale = max(1.0, float(np.abs(info).max()))
    if np.abs(info - info.T).max() > 1e-9 * scale:
        raise GraphError("information matrix must be symmetric")
    if np.linalg.eigvalsh(0.5 * (info + info.T)).min() < -1e-9 * scale:
        raise GraphError("information matrix must be positive semi-definite")
    return info


@dataclass
class OptimizeReport:
    initial_error: float
    final_error: float
    iterations: int = 0
    accepted: list = field(default_factory=list)  # total error after each accepted step
    converged: bool = False


class PoseGraph:
    def __init__(self, loop_exclusion: int = 0):
        self.nodes: dict[int, np.ndarray] = {}
        self.edges: list[Edge] = []
        self.loop_exclusion = int(loop_exclusion)
        self.fixed: int | None = None

    def __len__(self) -> int:
        return len(self.nodes)

    def add_node(self, id: int, pose: np.ndarray) -> None:
        id = int(id)
        if id in self.nodes:
            raise GraphError(f"node {id} already exists")
        self.nodes[id] = np.array(pose, dtype=float)
        if self.fixed is None:
            self.fixed = id

    def add_odometry_edge(self, i: int, j: int, measurement, information=None) -> None:
        if i not in self.nodes:
            raise GraphError(f"dangling odometry edge: node {i} does not exist")
        if j != i + 1:
            raise GraphError(f"odometry edges join consecutive ids, got {i} -> {j}")
        Z = np.array(measurement, dtype=float)
        info = odometry_information(Z) if information is None else _check_info(information)
        if j not in self.nodes:
            self.nodes[j] = pose_compose(self.nodes[i], Z)
        self.edges.append(Edge(i, j, Z, info, ODOMETRY))

    def add_loop_edge(self, i: int, j: int, measurement, information=None) -> None:
        if i not in self.nodes or j not in self.nodes:
            raise GraphError(f"dangling loop edge {i} -> {j}")
        if i == j:
            raise GraphError("self-loop edge")
        if abs(i - j) <= self.loop_exclusion:
            raise GraphError(f"loop edge {i} -> {j} inside the exclusion window")
        info = np.eye(6) if information is None else _check_info(information)
        self.edges.append(Edge(i, j, np.array(measurement, dtype=float), info, LOOP))

    @property
    def loop_edges(self) -> list[Edge]:
        return [e for e in self.edges if e.kind == LOOP]

    # ------------------------------------------------------------------ errors
    def edge_error(self, edge: Edge, nodes=None) -> np.ndarray:
        nodes = self.nodes if nodes is None else nodes
        rel = pose_inverse(nodes[edge.i]) @ nodes[edge.j]
        return se3_log(pose_inverse(edge.measurement) @ rel)

    def total_error(self, nodes=None) -> float:
        total = 0.0
        for e in self.edges:
            r = self.edge_error(e, nodes)
            total += float(r @ e.information @ r)
        return total

    def is_connected(self) -> bool:
        if not self.nodes:
            return True
        adj = {k: [] for k in self.nodes}
        for e in self.edges:
            adj[e.i].append(e.j)
            adj[e.j].append(e.i)
        seen = {self.fixed}
        todo = deque([self.fixed])
        while todo:
            for m in adj[todo.popleft()]:
                if m not in seen:
                    seen.add(m)
                    todo.append(m)
        return len(seen) == len(self.nodes)

    # ---------------------------------------------------------------- optimize
    def _jacobians(self, edge: Edge, nodes, h: float = 1e-6):
        """Central-difference Jacobians of the edge error w.r.t. left perturbations."""
        Zi = pose_inverse(edge.measurement)
        Xi, Xj = nodes[edge.i], nodes[edge.j]
        Xi_inv = pose_inverse(Xi)
        Ji = np.zeros((6, 6))
        Jj = np.zeros((6, 6))
        for k in range(6):
            d = np.zeros(6)
            d[k] = h
            Ep, Em = se3_exp(d), se3_exp(-d)
            Ji[:, k] = (se3_log(Zi @ pose_inverse(Ep @ Xi) @ Xj)
                        - se3_log(Zi @ pose_inverse(Em @ Xi) @ Xj)) / (2 * h)
            Jj[:, k] = (se3_log(Zi @ Xi_inv @ Ep @ Xj) - se3_log(Zi @ Xi_inv @ Em @ Xj)) / (2 * h)
        return Ji, Jj

    def _linearize(self, nodes, index):
        n = len(index)
        rows, cols, vals = [], [], []
        b = np.zeros(6 * n)

        def put(a, c, block):
            r0, c0 = 6 * a, 6 * c
            rr, cc = np.meshgrid(np.arange(6) + r0, np.arange(6) + c0, indexing="ij")
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            vals.append(block.ravel())

        for e in self.edges:
            r = self.edge_error(e, nodes)
            Ji, Jj = self._jacobians(e, nodes)
            blocks = [(index.get(e.i), Ji), (index.get(e.j), Jj)]
            for a, Ja in blocks:
                if a is None:
                    continue
                b[6 * a:6 * a + 6] += Ja.T @ e.information @ r
                for c, Jc in blocks:
                    if c is not None:
                        put(a, c, Ja.T @ e.information @ Jc)
        if rows:
            H = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(6 * n, 6 * n)).tocsc()
        else:
            H = sp.csc_matrix((6 * n, 6 * n))
        return H, b

    def optimize(self, max_iters: int = 20, eps: float = 1e-9, damping: float = 1e-6) -> OptimizeReport:
        """Minimize the total squared edge error over all nodes except the gauge."""
        if not self.is_connected():
            raise GraphError("pose graph is disconnected")
        err = self.total_error()
        report = OptimizeReport(err, err)
        free = sorted(k for k in self.nodes if k != self.fixed)
        if not free or not self.edges:
            report.converged = True
            return report
        index = {k: a for a, k in enumerate(free)}
        nodes = dict(self.nodes)
        lam = damping
        for it in range(max_iters):
            report.iterations = it + 1
            H, b = self._linearize(nodes, index)
            accepted = False
            while lam < 1e12:
                A = H + lam * sp.identity(H.shape[0], format="csc")
                dx = spla.spsolve(A, -b)
                if not np.all(np.isfinite(dx)):
                    lam *= 10
                    continue
                trial = dict(nodes)
                for k, a in index.items():
                    trial[k] = pose_compose(se3_exp(dx[6 * a:6 * a + 6]), nodes[k])
                new_err = self.total_error(trial)
                if new_err <= err:
                    accepted = True
                    break
                lam *= 10
            if not accepted:
                report.converged = True
                break
            decrease = err - new_err
            nodes, err = trial, new_err
            report.accepted.append(err)
            lam = max(damping, lam / 10)
            if decrease < eps:
                report.converged = True
                break
        self.nodes = nodes
        report.final_error = err
        return report

    # ------------------------------------------------------------------ export
    def export(self, path) -> None:
        """Plain-text edge list: NODE and EDGE lines, upper-triangular information."""
        with open(path, "w") as f:
            f.write(self.to_text())

    def to_text(self) -> str:
        from .dataset_io import _fmt

        def pose_fields(T):
            q = canonical_quaternion(rotation_to_quaternion(T[:3, :3]))
            return [_fmt(v) for v in T[:3, 3]] + [_fmt(v) for v in q]

        lines = []
        for k in sorted(self.nodes):
            lines.append(" ".join(["NODE", str(k)] + pose_fields(self.nodes[k])))
        iu = np.triu_indices(6)
        for e in self.edges:
            lines.append(" ".join(["EDGE", str(e.i), str(e.j)] + pose_fields(e.measurement)
                                  + [_fmt(v) for v in e.information[iu]]))
        return "\n".join(lines) + "\n"


def read_graph(path) -> PoseGraph:
    """Inverse of :meth:`PoseGraph.export`; edges are tagged loop when ids are not consecutive."""
    from .dataset_io import ParseError
    from .geometry import make_pose, quaternion_to_rotation

    g = PoseGraph()
    iu = np.triu_indices(6)
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            tok = line.split()
            if not tok:
                continue
            try:
                if tok[0] == "NODE" and len(tok) == 9:
                    v = [float(x) for x in tok[2:]]
                    g.add_node(int(tok[1]), make_pose(quaternion_to_rotation(v[3:]), v[:3]))
                elif tok[0] == "EDGE" and len(tok) == 31:
                    i, j = int(tok[1]), int(tok[2])
                    v = [float(x) for x in tok[3:]]
                    info = np.zeros((6, 6))
                    info[iu] = v[7:]
                    info = info + np.triu(info, 1).T
                    kind = ODOMETRY if j == i + 1 else LOOP
                    g.edges.append(Edge(i, j, make_pose(quaternion_to_rotation(v[3:7]), v[:3]), info, kind))
                else:
                    raise ParseError(f"line {ln}: unrecognized record")
            except ValueError as exc:
                raise ParseError(f"line {ln}: {exc}") from exc
    return g
