"""Edge rules and downstream graph procedures.

An edge joins variables i and k when their pair statistic is small enough,
either below a null quantile (screening rule) or with posterior null
probability below tau (Bayes rule). The resulting graph supports response
variable selection, centrality-seeded clustering and majority-vote
classification of unlabeled nodes.
"""
from __future__ import annotations

import csv
import io
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse

from .angles import ZVector
from .exceptions import DomainError, InputError
from .special import beta_quantile

__all__ = [
    "Graph",
    "Cluster",
    "ClusterAssignment",
    "NodeStats",
    "frequentist_edges",
    "bayes_edges",
    "graph_from_pairs",
    "select_predictors",
    "graph_stats",
    "centrality_clusters",
    "classify_majority",
    "format_edges",
    "format_clusters",
    "write_edges",
    "write_clusters",
    "read_labels",
]


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph on P nodes, edges stored as parallel arrays with i < k.

    ``posterior`` is NaN for edges chosen by the screening rule.
    ``threshold`` is the z cut-off that produced the edge set (for the Bayes
    rule, the largest z among the included edges, NaN when there are none).
    """

    P: int
    i: np.ndarray
    k: np.ndarray
    z: np.ndarray
    r: np.ndarray
    posterior: np.ndarray
    node_names: list = field(default_factory=list)
    threshold: float = math.nan
    rule: str = ""

    def __post_init__(self):
        i = np.asarray(self.i, dtype=np.int64)
        k = np.asarray(self.k, dtype=np.int64)
        if i.shape != k.shape or i.ndim != 1:
            raise InputError("edge endpoint arrays must be one-dimensional and equally long")
        if np.any(i >= k):
            raise InputError("edges must satisfy i < k (no self-loops)")
        if i.size and (i.min() < 0 or k.max() >= self.P):
            raise InputError(f"edge endpoint out of range for P={self.P}")
        if i.size and np.unique(i * self.P + k).size != i.size:
            raise InputError("duplicate edges")
        object.__setattr__(self, "i", i)
        object.__setattr__(self, "k", k)
        for name in ("z", "r", "posterior"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != i.shape:
                raise InputError(f"edge attribute {name!r} has the wrong length")
            object.__setattr__(self, name, arr)
        if not self.node_names:
            object.__setattr__(self, "node_names", [f"V{j + 1}" for j in range(self.P)])
        if len(self.node_names) != self.P:
            raise InputError(f"{len(self.node_names)} node names for P={self.P}")

    @property
    def n_edges(self) -> int:
        return self.i.size

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric 0/1 adjacency matrix in CSR form."""
        data = np.ones(2 * self.n_edges, dtype=np.int64)
        rows = np.concatenate([self.i, self.k])
        cols = np.concatenate([self.k, self.i])
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.P, self.P))

    def neighbors(self, node: int) -> np.ndarray:
        adj = self.adjacency
        return adj.indices[adj.indptr[node]:adj.indptr[node + 1]]

    def node_id(self, node) -> int:
        """Resolve a node given by index or by name."""
        if isinstance(node, (int, np.integer)):
            if not 0 <= node < self.P:
                raise InputError(f"node {node} out of range for P={self.P}")
            return int(node)
        try:
            return self.node_names.index(str(node))
        except ValueError:
            raise InputError(f"unknown node {node!r}") from None

    def edge_set(self) -> set:
        return set(zip(self.i.tolist(), self.k.tolist()))


def _pairs(z: ZVector):
    if z.index is None:
        raise InputError("graph construction needs z values that carry a pair index")
    return z.index.pairs


def _names(z: ZVector):
    return list(z.names) if z.names else []


def frequentist_edges(z: ZVector, nu: float, epsilon: float) -> Graph:
    """Screening rule: edge j iff z_j < Q_epsilon((nu - 1)/2, 1/2)."""
    if not nu > 1:
        raise DomainError(f"nu must exceed 1, got {nu}")
    if not 0 < epsilon < 1:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    q = beta_quantile(epsilon, (nu - 1.0) / 2.0, 0.5)
    keep = np.flatnonzero(z.z < q)
    I, K = _pairs(z)
    return Graph(
        P=z.index.P,
        i=I[keep],
        k=K[keep],
        z=z.z[keep],
        r=z.r[keep],
        posterior=np.full(keep.size, np.nan),
        node_names=_names(z),
        threshold=q,
        rule="frequentist",
    )


def bayes_edges(z: ZVector, post, tau: float = 0.01) -> Graph:
    """Bayes rule: edge j iff the posterior null probability is below tau."""
    post = np.asarray(post, dtype=float)
    if post.shape != z.z.shape:
        raise InputError("posterior vector does not match z")
    if not tau > 0:
        raise DomainError(f"tau must be positive, got {tau}")
    keep = np.flatnonzero(post < tau)
    I, K = _pairs(z)
    return Graph(
        P=z.index.P,
        i=I[keep],
        k=K[keep],
        z=z.z[keep],
        r=z.r[keep],
        posterior=post[keep],
        node_names=_names(z),
        threshold=float(z.z[keep].max()) if keep.size else math.nan,
        rule="bayes",
    )


def graph_from_pairs(P, pairs, node_names=None) -> Graph:
    """Build a plain graph from (i, k) tuples; edge attributes are NaN."""
    pairs = {(min(a, b), max(a, b)) for a, b in pairs}
    if any(a == b for a, b in pairs):
        raise InputError("self-loops are not allowed")
    arr = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    nan = np.full(len(arr), np.nan)
    return Graph(P=P, i=arr[:, 0], k=arr[:, 1], z=nan, r=nan, posterior=nan, node_names=node_names or [])


def select_predictors(g: Graph, response) -> set:
    """Indices of all nodes adjacent to ``response`` (index or name)."""
    return set(g.neighbors(g.node_id(response)).tolist())


@dataclass(frozen=True)
class NodeStats:
    degree: np.ndarray
    clustering_coeff: np.ndarray
    centrality: np.ndarray


def graph_stats(g: Graph) -> NodeStats:
    """Degree d, local clustering coefficient c and centrality k = d * c for every node.

    Triangles through each node are the diagonal of A^3, computed as
    rowsum((A @ A) * A) so that only existing edges are visited.
    """
    adj = g.adjacency.astype(np.float64)
    degree = np.asarray(adj.sum(axis=1)).ravel()
    triangles2 = np.asarray((adj @ adj).multiply(adj).sum(axis=1)).ravel()  # 2 x triangles
    possible = degree * (degree - 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cc = np.where(degree >= 2, triangles2 / np.where(possible > 0, possible, 1.0), 0.0)
    return NodeStats(degree=degree.astype(np.int64), clustering_coeff=cc, centrality=degree * cc)


@dataclass(frozen=True)
class Cluster:
    center: int
    members: frozenset


@dataclass(frozen=True)
class ClusterAssignment:
    clusters: list
    unassigned: frozenset

    def membership(self):
        """Map node -> list of cluster ids it belongs to."""
        out = {}
        for cid, cl in enumerate(self.clusters):
            for m in cl.members:
                out.setdefault(m, []).append(cid)
        return out


def centrality_clusters(g: Graph, min_centrality: float = 3.0, overlap: bool = True) -> ClusterAssignment:
    """Greedy clustering seeded by centrality k = degree * clustering coefficient.

    Repeatedly take the not-yet-clustered node with the largest centrality
    (lowest index on ties). If that is below ``min_centrality`` stop;
    otherwise the node and its neighbours form a new cluster. With
    ``overlap`` a neighbour already in a cluster joins the new one as well;
    without it only unclustered neighbours join.
    """
    stats = graph_stats(g)
    # stable sort on -k keeps the lowest index first among ties
    order = np.argsort(-stats.centrality, kind="stable")
    clustered = np.zeros(g.P, dtype=bool)
    clusters = []
    for node in order:
        if clustered[node]:
            continue
        if stats.centrality[node] < min_centrality:
            break
        nbrs = g.neighbors(node)
        if not overlap:
            nbrs = nbrs[~clustered[nbrs]]
        members = frozenset([int(node)] + nbrs.tolist())
        clusters.append(Cluster(center=int(node), members=members))
        clustered[list(members)] = True
    return ClusterAssignment(clusters=clusters, unassigned=frozenset(np.flatnonzero(~clustered).tolist()))


def classify_majority(g: Graph, train_labels: dict, min_neighbors: int = 1, default_label="bad") -> dict:
    """Label each unlabeled node by majority vote of its labeled neighbours.

    Nodes with fewer than ``min_neighbors`` labeled neighbours, and ties
    between labels, get ``default_label``. Keys of ``train_labels`` may be
    node indices or names; the result is keyed by node index.
    """
    labels = {g.node_id(node): lab for node, lab in train_labels.items()}
    out = {}
    for node in range(g.P):
        if node in labels:
            continue
        votes = Counter(labels[nb] for nb in g.neighbors(node).tolist() if nb in labels)
        if sum(votes.values()) < min_neighbors or not votes:
            out[node] = default_label
            continue
        (best, count), *rest = votes.most_common()
        out[node] = default_label if rest and rest[0][1] == count else best
    return out


def _write_atomic(path, text):
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def format_edges(g: Graph) -> str:
    """CSV text ``node_i,node_j,r,z,posterior_null``, sorted by posterior, then z.

    The posterior field is empty for edges found by the screening rule.
    """
    order = np.lexsort((g.z, np.nan_to_num(g.posterior, nan=np.inf)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node_i", "node_j", "r", "z", "posterior_null"])
    for e in order:
        post = "" if math.isnan(g.posterior[e]) else repr(float(g.posterior[e]))
        w.writerow([g.node_names[g.i[e]], g.node_names[g.k[e]], repr(float(g.r[e])), repr(float(g.z[e])), post])
    return buf.getvalue()


def format_clusters(assignment: ClusterAssignment, node_names) -> str:
    """CSV text ``cluster_id,center,member``, one row per cluster member."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cluster_id", "center", "member"])
    for cid, cl in enumerate(assignment.clusters, start=1):
        for m in sorted(cl.members):
            w.writerow([cid, node_names[cl.center], node_names[m]])
    return buf.getvalue()


def write_edges(g: Graph, path) -> None:
    _write_atomic(path, format_edges(g))


def write_clusters(assignment: ClusterAssignment, node_names, path) -> None:
    _write_atomic(path, format_clusters(assignment, node_names))


def read_labels(path) -> dict:
    """Read a two-column ``node,label`` file (header optional) into a dict of name -> label."""
    path = os.fspath(path)
    try:
        with open(path, newline="") as fh:
            sample = fh.readline()
            fh.seek(0)
            delim = "\t" if sample.count("\t") > sample.count(",") else ","
            rows = [r for r in csv.reader(fh, delimiter=delim) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if rows and [c.strip().lower() for c in rows[0][:2]] == ["node", "label"]:
        rows = rows[1:]
    labels = {}
    for lineno, row in enumerate(rows, start=1):
        if len(row) < 2:
            raise InputError(f"{path}: line {lineno} needs two fields (node,label)")
        labels[row[0].strip()] = row[1].strip()
    return labels
