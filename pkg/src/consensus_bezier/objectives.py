"""Consensus-distance objectives, interaction graphs and Hessian similarity."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import bernstein as bz

ZERO_WEIGHT_TOL = 1e-12
LAPLACIAN_TOL = 1e-10
TIE_TOL = 1e-12


class Family(str, enum.Enum):
    DERIVATIVE_NORM = "dnorm"
    DIFFERENCE_NORM = "ddiff"
    DERIVATIVE_VARIANCE = "dvar"
    DIFFERENCE_VARIANCE = "ddiffvar"
    CUSTOM = "custom"


FAMILY_TITLES = {
    Family.DERIVATIVE_NORM: "derivative norm",
    Family.DIFFERENCE_NORM: "difference norm",
    Family.DERIVATIVE_VARIANCE: "derivative variance",
    Family.DIFFERENCE_VARIANCE: "difference variance",
    Family.CUSTOM: "custom Laplacian",
}


@dataclass(frozen=True)
class ObjectiveSpec:
    family: Family
    order: int = 0
    matrix: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.family is Family.CUSTOM:
            if self.matrix is None:
                raise ValueError("custom objective needs a Laplacian matrix")
            L = np.array(self.matrix, dtype=float)
            _check_laplacian(L)
            L.setflags(write=False)
            object.__setattr__(self, "matrix", L)
        elif int(self.order) != self.order or self.order < 0:
            raise ValueError(f"objective order must be a nonnegative integer, got {self.order!r}")

    @property
    def name(self) -> str:
        if self.family is Family.CUSTOM:
            return "custom"
        return f"{self.family.value}{self.order}"

    def describe(self) -> str:
        if self.family is Family.CUSTOM:
            return FAMILY_TITLES[self.family]
        return f"order-{self.order} {FAMILY_TITLES[self.family]}"

    def valid_orders(self, n: int) -> range:
        if self.family in (Family.DERIVATIVE_NORM, Family.DIFFERENCE_NORM):
            return range(1, n + 1)
        return range(0, n + 1)


def _check_laplacian(L: np.ndarray, tol: float = LAPLACIAN_TOL) -> None:
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ValueError(f"Laplacian must be square, got shape {L.shape}")
    if not np.allclose(L, L.T, atol=tol, rtol=0.0):
        raise ValueError("Laplacian must be symmetric")
    if np.abs(L.sum(axis=1)).max() > tol:
        raise ValueError("Laplacian rows must sum to zero (L @ 1 = 0)")
    if np.linalg.eigvalsh((L + L.T) / 2).min() < -tol:
        raise ValueError("Laplacian must be positive semidefinite")


def _validate(spec: ObjectiveSpec, n: int) -> None:
    bz._check_degree(n)
    if spec.family is Family.CUSTOM:
        if spec.matrix.shape != (n + 1, n + 1):
            raise ValueError(
                f"custom Laplacian has shape {spec.matrix.shape}, degree {n} needs {(n + 1, n + 1)}"
            )
        return
    valid = spec.valid_orders(n)
    if spec.order not in valid:
        hint = ""
        if spec.order == 0 and spec.family in (Family.DERIVATIVE_NORM, Family.DIFFERENCE_NORM):
            hint = " (order 0 has no Laplacian kernel: H(n) 1 != 0)"
        raise ValueError(
            f"{FAMILY_TITLES[spec.family]} at degree {n} accepts orders "
            f"{valid.start}..{valid.stop - 1}, got {spec.order}{hint}"
        )


def resolve_hessian(spec: ObjectiveSpec, n: int) -> np.ndarray:
    """Laplacian L with consensus distance trace(P^T L P) for degree n."""
    _validate(spec, n)
    if spec.family is Family.CUSTOM:
        return np.array(spec.matrix)
    k = spec.order
    D = bz.diff_matrix(n, k)
    m = n - k
    if spec.family is Family.DERIVATIVE_NORM:
        core = bz.norm_hessian(m)
    elif spec.family is Family.DIFFERENCE_NORM:
        core = np.eye(m + 1)
    elif spec.family is Family.DERIVATIVE_VARIANCE:
        S = bz.mean_shift(m)
        core = S @ bz.norm_hessian(m) @ S
    else:
        core = bz.mean_shift(m)
    L = D.T @ core @ D
    return (L + L.T) / 2


def resolve_hessian_exact(spec: ObjectiveSpec, n: int) -> np.ndarray:
    """Same as resolve_hessian but as a ``Fraction`` object array."""
    _validate(spec, n)
    if spec.family is Family.CUSTOM:
        raise ValueError("custom Laplacians have no exact form")
    k = spec.order
    D = bz.diff_matrix_exact(n, k)
    m = n - k
    if spec.family is Family.DERIVATIVE_NORM:
        core = bz.norm_hessian_exact(m)
    elif spec.family is Family.DIFFERENCE_NORM:
        core = np.empty((m + 1, m + 1), dtype=object)
        for i in range(m + 1):
            for j in range(m + 1):
                core[i, j] = Fraction(int(i == j))
    elif spec.family is Family.DERIVATIVE_VARIANCE:
        S = bz.mean_shift_exact(m)
        core = S.dot(bz.norm_hessian_exact(m)).dot(S)
    else:
        core = bz.mean_shift_exact(m)
    return D.T.dot(core).dot(D)


def consensus_distance(L: np.ndarray, P) -> float:
    P = bz.as_control_points(P)
    return float(np.trace(P.T @ L @ P))


@dataclass(frozen=True)
class InteractionGraph:
    """Symmetric edge weights between control points; zero diagonal."""

    weights: np.ndarray

    @property
    def degree(self) -> int:
        return self.weights.shape[0] - 1

    def edges(self) -> dict[tuple[int, int], object]:
        W = self.weights
        out = {}
        for i in range(W.shape[0]):
            for j in range(i + 1, W.shape[0]):
                if W[i, j] != 0:
                    out[(i, j)] = W[i, j]
        return out

    def laplacian(self) -> np.ndarray:
        W = self.weights
        deg = W.sum(axis=1)
        L = -W.copy()
        for i in range(W.shape[0]):
            L[i, i] = deg[i]
        return L

    def to_dot(self, name: str = "interaction") -> str:
        lines = [f"graph {name} {{"]
        for i in range(self.weights.shape[0]):
            lines.append(f"  p{i} [label=\"{i}\"];")
        for (i, j), w in self.edges().items():
            lines.append(f"  p{i} -- p{j} [label=\"{_fmt_weight(w)}\"];")
        lines.append("}")
        return "\n".join(lines) + "\n"


def _fmt_weight(w) -> str:
    if isinstance(w, Fraction):
        return str(w)
    w = float(w)
    return str(int(w)) if w == int(w) else f"{w:.6g}"


def interaction_weights(L) -> InteractionGraph:
    """Edge weights W(i, j) = -L(i, j) of the graph whose Laplacian is L."""
    exact = np.asarray(L).dtype == object
    if exact:
        L = np.asarray(L, dtype=object)
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise ValueError("Laplacian must be square")
        if any(L[i, j] != L[j, i] for i in range(L.shape[0]) for j in range(L.shape[0])):
            raise ValueError("Laplacian must be symmetric")
        if any(sum(L[i, :]) != 0 for i in range(L.shape[0])):
            raise ValueError("Laplacian rows must sum to zero")
        W = -L
        for i in range(W.shape[0]):
            W[i, i] = Fraction(0)
        return InteractionGraph(W)

    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ValueError("Laplacian must be square")
    if not np.allclose(L, L.T, atol=1e-12, rtol=0.0):
        raise ValueError("Laplacian must be symmetric")
    if np.linalg.norm(L.sum(axis=1)) > 1e-8:
        raise ValueError("Laplacian rows must sum to zero (|L 1| > 1e-8)")
    W = -L.copy()
    np.fill_diagonal(W, 0.0)
    return InteractionGraph(W)


def normalized_weights(g: InteractionGraph) -> InteractionGraph:
    """Rescale so the smallest nonzero weight magnitude is one."""
    W = g.weights
    if W.dtype == object:
        mags = [abs(w) for w in W.flat if w != 0]
        if not mags:
            raise ValueError("interaction graph has no nonzero weights")
        return InteractionGraph(W / min(mags))
    W = np.where(np.abs(W) < ZERO_WEIGHT_TOL, 0.0, W)
    mags = np.abs(W[W != 0])
    if mags.size == 0:
        raise ValueError("interaction graph has no nonzero weights")
    return InteractionGraph(W / mags.min())


def hessian_distance(Ha, Hb) -> float:
    """Half the Frobenius distance between unit-normalized Hessians; lies in [0, 1]."""
    Ha = np.asarray(Ha, dtype=float)
    Hb = np.asarray(Hb, dtype=float)
    if Ha.shape != Hb.shape:
        raise ValueError(f"shape mismatch: {Ha.shape} vs {Hb.shape}")
    na, nb = np.linalg.norm(Ha), np.linalg.norm(Hb)
    if na == 0 or nb == 0:
        raise ValueError("Hessian distance is undefined for a zero matrix")
    return 0.5 * float(np.linalg.norm(Ha / na - Hb / nb))


@dataclass(frozen=True)
class Dendrogram:
    labels: tuple[str, ...]
    distances: np.ndarray
    # (cluster_a, cluster_b, height); clusters >= len(labels) are earlier merges
    merges: tuple[tuple[int, int, float], ...]

    def members(self, cluster: int) -> tuple[int, ...]:
        n = len(self.labels)
        if cluster < n:
            return (cluster,)
        a, b, _ = self.merges[cluster - n]
        return tuple(sorted(self.members(a) + self.members(b)))

    def linkage_matrix(self) -> np.ndarray:
        """scipy-style (n-1) x 4 linkage matrix, for plotting."""
        rows = []
        for a, b, h in self.merges:
            rows.append([a, b, h, len(self.members(a)) + len(self.members(b))])
        return np.array(rows, dtype=float)


def complete_linkage(dist, labels=None) -> Dendrogram:
    """Agglomerative complete-linkage clustering.

    Ties are broken by the smallest (cluster-a, cluster-b) index pair, with
    new clusters numbered n, n+1, ... in merge order.
    """
    D = np.asarray(dist, dtype=float)
    n = D.shape[0]
    if D.ndim != 2 or D.shape[1] != n:
        raise ValueError("distance matrix must be square")
    if n < 2:
        raise ValueError("complete linkage needs at least two items")
    if not np.allclose(D, D.T) or np.any(np.diag(D) != 0) or np.any(D < 0):
        raise ValueError("distance matrix must be symmetric, nonnegative, zero-diagonal")
    labels = tuple(labels) if labels is not None else tuple(str(i) for i in range(n))

    clusters = {i: [i] for i in range(n)}
    merges = []
    next_id = n
    while len(clusters) > 1:
        best = None
        ids = sorted(clusters)
        for ai, a in enumerate(ids):
            for b in ids[ai + 1 :]:
                h = max(D[i, j] for i in clusters[a] for j in clusters[b])
                # near-equal heights count as ties so rounding noise cannot reorder them
                if best is None or h < best[0] - TIE_TOL:
                    best = (h, a, b)
        h, a, b = best
        merges.append((a, b, float(h)))
        clusters[next_id] = clusters.pop(a) + clusters.pop(b)
        next_id += 1
    return Dendrogram(labels, D, tuple(merges))


# The six objectives compared in the Hessian-similarity analysis.
REFERENCE_OBJECTIVES = {
    "V": ObjectiveSpec(Family.DERIVATIVE_NORM, 1),
    "A": ObjectiveSpec(Family.DERIVATIVE_NORM, 2),
    "L": ObjectiveSpec(Family.DIFFERENCE_NORM, 1),
    "H": ObjectiveSpec(Family.DIFFERENCE_NORM, 2),
    "S": ObjectiveSpec(Family.DIFFERENCE_VARIANCE, 0),
    "J": ObjectiveSpec(Family.DIFFERENCE_VARIANCE, 1),
}


def hessian_similarity(n: int, objectives: dict[str, ObjectiveSpec] | None = None) -> Dendrogram:
    """Pairwise normalized-Hessian distances and their complete-linkage tree."""
    objectives = objectives or REFERENCE_OBJECTIVES
    labels = list(objectives)
    Hs = [resolve_hessian(objectives[k], n) for k in labels]
    D = np.zeros((len(Hs), len(Hs)))
    for i in range(len(Hs)):
        for j in range(i + 1, len(Hs)):
            D[i, j] = D[j, i] = hessian_distance(Hs[i], Hs[j])
    return complete_linkage(D, labels)
