"""Bus/branch network description and admittance assembly.

Buses are zero-indexed. Every branch is stored with its lower bus index
first, so the incidence row of branch ``i`` carries ``+1`` at ``U[i, 0]``
and ``-1`` at ``U[i, 1]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, ParseError

DATA_DIR = Path(__file__).resolve().parent / "data"


@dataclass(frozen=True)
class GridTopology:
    """Set of buses and the (candidate) branches between them.

    Parameters
    ----------
    n_bus : int
        Number of buses.
    edges : sequence of (int, int)
        Branch endpoints. Orientation is canonicalised to ``(low, high)``.

    Attributes
    ----------
    S : ndarray, shape (m, n_bus)
        Branch-bus incidence matrix.
    U : ndarray of int, shape (m, 2)
        From/to bus index of each branch.
    """

    n_bus: int
    edges: tuple = ()
    S: np.ndarray = field(init=False, repr=False, compare=False)
    U: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.n_bus) < 1:
            raise InvalidArgumentError(f"n_bus must be positive, got {self.n_bus}")
        canon = []
        for e in self.edges:
            i, j = int(e[0]), int(e[1])
            if i == j:
                raise InvalidArgumentError(f"self-loop at bus {i}")
            if not (0 <= i < self.n_bus and 0 <= j < self.n_bus):
                raise InvalidArgumentError(f"edge ({i}, {j}) out of range for {self.n_bus} buses")
            canon.append((min(i, j), max(i, j)))
        if len(set(canon)) != len(canon):
            raise InvalidArgumentError("duplicate edges in topology")
        object.__setattr__(self, "n_bus", int(self.n_bus))
        object.__setattr__(self, "edges", tuple(canon))

        m = len(canon)
        U = np.array(canon, dtype=np.intp).reshape(m, 2)
        S = np.zeros((m, self.n_bus))
        S[np.arange(m), U[:, 0]] = 1.0
        S[np.arange(m), U[:, 1]] = -1.0
        U.setflags(write=False)
        S.setflags(write=False)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "S", S)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_index(self) -> dict:
        return {e: k for k, e in enumerate(self.edges)}


@dataclass(frozen=True)
class LineParams:
    """Series conductance ``g`` and susceptance ``b`` per branch (p.u.)."""

    g: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float).ravel()
        b = np.asarray(self.b, dtype=float).ravel()
        if g.shape != b.shape:
            raise InvalidArgumentError(f"g has {g.size} entries but b has {b.size}")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "b", b)

    def __len__(self):
        return self.g.size

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.g, self.b])

    def subset(self, keep) -> LineParams:
        keep = np.asarray(sorted(keep), dtype=np.intp)
        return LineParams(self.g[keep], self.b[keep])


@dataclass(frozen=True)
class AdmittanceMatrix:
    G: np.ndarray
    B: np.ndarray

    @property
    def Y(self) -> np.ndarray:
        return self.G + 1j * self.B


def complete_candidate_graph(n_bus: int) -> GridTopology:
    """All ``n(n-1)/2`` bus pairs as candidate branches."""
    if int(n_bus) < 2:
        raise InvalidArgumentError(f"complete graph needs at least 2 buses, got {n_bus}")
    return GridTopology(int(n_bus), tuple(combinations(range(int(n_bus)), 2)))


def restrict_topology(topo: GridTopology, keep) -> GridTopology:
    """Sub-topology holding only the branch indices in ``keep`` (original order)."""
    keep = sorted(set(int(k) for k in keep))
    if keep and (keep[0] < 0 or keep[-1] >= topo.n_edges):
        raise InvalidArgumentError(f"edge indices {keep} out of range for {topo.n_edges} edges")
    return GridTopology(topo.n_bus, tuple(topo.edges[k] for k in keep))


def assemble_admittance(topo: GridTopology, params: LineParams) -> AdmittanceMatrix:
    """Nodal conductance/susceptance matrices from per-branch parameters.

    Off-diagonal ``G[j, k] = -g_i`` for branch ``i = (j, k)``; diagonals hold
    the sum of incident ``g``. No shunt terms, so rows sum to zero.
    """
    if len(params) != topo.n_edges:
        raise InvalidArgumentError(
            f"{len(params)} line parameters for a topology with {topo.n_edges} edges"
        )
    S = topo.S
    G = S.T @ (params.g[:, None] * S)
    B = S.T @ (params.b[:, None] * S)
    return AdmittanceMatrix(G, B)


def load_feeder(path) -> tuple[GridTopology, LineParams]:
    """Read a feeder definition JSON file.

    The file holds ``n_bus``, ``edges``, ``g`` and ``b``; an optional
    ``index_base`` of 1 marks one-based bus labels.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        base = int(doc.get("index_base", 0))
        n_bus = int(doc["n_bus"])
        edges = [(int(a) - base, int(b) - base) for a, b in doc["edges"]]
        g = doc["g"]
        b = doc["b"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"malformed feeder file {path}: {exc}") from exc
    if len(g) != len(edges) or len(b) != len(edges):
        raise ParseError(f"feeder file {path}: g/b length does not match edge count")
    # keep g/b aligned with the canonicalised edge order
    topo = GridTopology(n_bus, tuple(edges))
    return topo, LineParams(g, b)


def save_feeder(path, topo: GridTopology, params: LineParams):
    doc = {
        "n_bus": topo.n_bus,
        "edges": [list(e) for e in topo.edges],
        "g": params.g.tolist(),
        "b": params.b.tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def builtin_feeder(name: str) -> Path:
    """Path of a shipped feeder fixture (``"feeder8"`` or ``"feeder123"``)."""
    path = DATA_DIR / f"{name}.json"
    if not path.exists():
        raise InvalidArgumentError(f"no built-in feeder named {name!r}")
    return path


def embed_params(topo: GridTopology, params: LineParams, candidates: GridTopology) -> LineParams:
    """Map parameters of ``topo`` onto the edge ordering of ``candidates``.

    Candidate edges absent from ``topo`` get zero parameters.
    """
    index = candidates.edge_index()
    g = np.zeros(candidates.n_edges)
    b = np.zeros(candidates.n_edges)
    for k, e in enumerate(topo.edges):
        if e not in index:
            raise InvalidArgumentError(f"edge {e} is not among the candidate edges")
        g[index[e]] = params.g[k]
        b[index[e]] = params.b[k]
    return LineParams(g, b)
