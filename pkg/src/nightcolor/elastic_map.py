"""
Two-dimensional elastic map fitted in z-scored data space.

The map is a ``g1 x g2`` grid of nodes ``y_k``. Edges join grid neighbours,
ribs join three consecutive collinear nodes. For a partition ``k(i)`` of the
points, the energy is::

    U = (1/N) sum_i |x_i - y_k(i)|^2
      + stretch * sum_edges |y_i - y_j|^2
      + bend    * sum_ribs  |y_a - 2 y_b + y_c|^2

Fitting alternates nearest-node partitioning with an exact solve of the
quadratic energy in the node positions, k-means style. A band is imputed by
projecting an observation, in predictor coordinates only, onto the
piecewise-linear surface spanned by the grid triangles.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve
from scipy.spatial.distance import cdist

from .errors import ConvergenceWarning, DatasetError, ModelError
from .features import PREDICTORS, Dataset, band_name

BEND_PENALTIES = (1e-5, 1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.3, 0.5, 1.0)
FIGURE_PENALTY = 0.05
DEFAULT_DIMS = (12, 12)

# proximal weight: keeps the node system nonsingular and U strictly non-increasing
_PROX = 1e-12


@dataclass(frozen=True)
class ElasticNetTopology:
    g1: int
    g2: int

    def __post_init__(self):
        if self.g1 < 1 or self.g2 < 1:
            raise ValueError(f"grid dims must be positive, got {self.g1}x{self.g2}")

    @property
    def n_nodes(self) -> int:
        return self.g1 * self.g2

    def node(self, i: int, j: int) -> int:
        return i * self.g2 + j

    @property
    def edges(self) -> np.ndarray:
        g1, g2, k = self.g1, self.g2, self.node
        pairs = [(k(i, j), k(i, j + 1)) for i in range(g1) for j in range(g2 - 1)]
        pairs += [(k(i, j), k(i + 1, j)) for i in range(g1 - 1) for j in range(g2)]
        return np.array(pairs, dtype=np.int64).reshape(-1, 2)

    @property
    def ribs(self) -> np.ndarray:
        g1, g2, k = self.g1, self.g2, self.node
        triples = [(k(i, j), k(i, j + 1), k(i, j + 2)) for i in range(g1) for j in range(g2 - 2)]
        triples += [(k(i, j), k(i + 1, j), k(i + 2, j)) for i in range(g1 - 2) for j in range(g2)]
        return np.array(triples, dtype=np.int64).reshape(-1, 3)

    @property
    def triangles(self) -> np.ndarray:
        """Each grid quad split along the diagonal from its lowest-index node."""
        k = self.node
        tris = []
        for i in range(self.g1 - 1):
            for j in range(self.g2 - 1):
                a, b, c, d = k(i, j), k(i, j + 1), k(i + 1, j), k(i + 1, j + 1)
                tris.append((a, c, d))
                tris.append((a, b, d))
        return np.array(tris, dtype=np.int64).reshape(-1, 3)

    def laplacian(self) -> np.ndarray:
        """Matrix L with sum_edges |y_i - y_j|^2 = trace(Y^T L Y)."""
        L = np.zeros((self.n_nodes, self.n_nodes))
        for a, b in self.edges:
            L[a, a] += 1
            L[b, b] += 1
            L[a, b] -= 1
            L[b, a] -= 1
        return L

    def bending(self) -> np.ndarray:
        """Matrix R^T R with sum_ribs |y_a - 2 y_b + y_c|^2 = trace(Y^T R^T R Y)."""
        R = np.zeros((len(self.ribs), self.n_nodes))
        for r, (a, b, c) in enumerate(self.ribs):
            R[r, a] += 1
            R[r, b] -= 2
            R[r, c] += 1
        return R.T @ R


@dataclass(frozen=True)
class ElasticMap:
    """A (possibly fitted) elastic map.

    ``nodes`` live in z-scored coordinates; ``variables`` names each column,
    with the modeled band last (``band_axis``).
    """

    topology: ElasticNetTopology
    nodes: np.ndarray
    variables: tuple[str, ...]
    mean: np.ndarray
    sd: np.ndarray
    stretch: float = 0.0
    bend: float = FIGURE_PENALTY
    fvu: float = float("nan")
    fitted: bool = False
    converged: bool = False
    n_iter: int = 0
    energy_history: tuple[float, ...] = field(default=(), repr=False)

    kind = "elmap"

    def __post_init__(self):
        if self.stretch < 0 or self.bend < 0:
            raise ModelError("elastic penalties must be non-negative")
        if not np.isfinite(self.nodes).all():
            raise ModelError("node positions must be finite")

    @property
    def band(self) -> str:
        return self.variables[-1]

    @property
    def band_axis(self) -> int:
        return len(self.variables) - 1

    @property
    def predictors(self) -> tuple[str, ...]:
        return self.variables[:-1]

    def standardize(self, data: np.ndarray) -> np.ndarray:
        return (data - self.mean) / self.sd

    def energy(self, Z: np.ndarray) -> "EnergyTerms":
        return map_energy(self.topology, self.nodes, Z, self.stretch, self.bend)

    def predict(self, X) -> np.ndarray:
        return project_impute(self, X)


@dataclass(frozen=True)
class EnergyTerms:
    nodes: float  # U(Y)
    edges: float  # U(E)
    ribs: float  # U(R)

    @property
    def total(self) -> float:
        return self.nodes + self.edges + self.ribs


def _variables(ds: Dataset, band: str, predictors) -> tuple[np.ndarray, tuple[str, ...]]:
    band = band_name(band)
    predictors = tuple(predictors)
    y = ds.response(band)
    if np.isnan(y).any():
        raise DatasetError(f"band {band!r} is absent for some observations")
    return np.column_stack([ds.predictors(predictors), y]), predictors + (band,)


def _standardization(data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = data.mean(axis=0)
    sd = data.std(axis=0)
    sd[sd == 0] = 1.0
    return mean, sd


def principal_axes(Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and unit eigenvectors (columns) of the covariance.

    Each eigenvector is signed so its largest-magnitude component is positive.
    """
    cov = (Z.T @ Z) / len(Z)
    w, V = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1]
    w, V = np.maximum(w[order], 0.0), V[:, order]
    lead = np.argmax(np.abs(V), axis=0)
    V = V * np.sign(V[lead, np.arange(V.shape[1])])
    return w, V


def init_map(
    ds: Dataset,
    band: str,
    dims: tuple[int, int] = DEFAULT_DIMS,
    bend: float = FIGURE_PENALTY,
    stretch: float = 0.0,
    predictors=PREDICTORS,
) -> ElasticMap:
    """Regular grid in the PC1-PC2 plane of the z-scored data, spanning +-2 SD.

    The plane lies inside the subspace of the first three principal
    components with the PC3 coordinate at zero. Node ``(i, j)`` sits at index
    ``i * g2 + j``; ``i`` runs along PC1.
    """
    data, variables = _variables(ds, band, predictors)
    if len(data) < 3:
        raise DatasetError(f"elastic map needs at least 3 observations, got {len(data)}")
    mean, sd = _standardization(data)
    Z = (data - mean) / sd
    w, V = principal_axes(Z)
    if w[0] <= 0:
        raise DatasetError("all variables are constant; nothing to approximate")

    topo = ElasticNetTopology(*dims)
    t1 = np.linspace(-2.0, 2.0, topo.g1) if topo.g1 > 1 else np.zeros(1)
    t2 = np.linspace(-2.0, 2.0, topo.g2) if topo.g2 > 1 else np.zeros(1)
    pc1 = np.sqrt(w[0]) * V[:, 0]
    pc2 = np.sqrt(w[1]) * V[:, 1] if len(w) > 1 else np.zeros(len(variables))
    ti, tj = np.meshgrid(t1, t2, indexing="ij")
    nodes = ti.reshape(-1, 1) * pc1 + tj.reshape(-1, 1) * pc2
    return ElasticMap(topo, nodes, variables, mean, sd, float(stretch), float(bend))


def partition(Z: np.ndarray, nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest node per point and the squared distance to it."""
    d2 = cdist(Z, nodes, "sqeuclidean")
    k = np.argmin(d2, axis=1)
    return k, d2[np.arange(len(Z)), k]


def map_energy(topology, nodes, Z, stretch, bend, assign=None) -> EnergyTerms:
    if assign is None:
        _, d2 = partition(Z, nodes)
    else:
        d2 = ((Z - nodes[assign]) ** 2).sum(axis=1)
    edges = topology.edges
    ribs = topology.ribs
    ue = stretch * float(((nodes[edges[:, 0]] - nodes[edges[:, 1]]) ** 2).sum()) if len(edges) else 0.0
    ur = (
        bend * float(((nodes[ribs[:, 0]] - 2 * nodes[ribs[:, 1]] + nodes[ribs[:, 2]]) ** 2).sum())
        if len(ribs)
        else 0.0
    )
    return EnergyTerms(float(d2.mean()), ue, ur)


def fit_map(
    emap: ElasticMap,
    ds: Dataset,
    band: str | None = None,
    max_iter: int = 100,
    tol: float = 1e-4,
) -> ElasticMap:
    """Alternate partitioning and exact node updates until nodes settle.

    Stops when the largest coordinate change of any node drops below ``tol``
    (z-score units) or after ``max_iter`` node updates. ``energy_history``
    records U after every half-step (partition, then solve). Nodes that own
    no point are placed by the elastic terms alone.
    """
    band = emap.band if band is None else band_name(band)
    if band != emap.band:
        raise ModelError(f"map models band {emap.band!r}, not {band!r}")
    data, _ = _variables(ds, band, emap.predictors)
    Z = emap.standardize(data)
    N, G = len(Z), emap.topology.n_nodes
    topo = emap.topology
    elastic = emap.stretch * topo.laplacian() + emap.bend * topo.bending()
    elastic[np.diag_indices(G)] += _PROX

    nodes = emap.nodes.copy()
    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        assign, _ = partition(Z, nodes)
        history.append(map_energy(topo, nodes, Z, emap.stretch, emap.bend, assign).total)
        counts = np.bincount(assign, minlength=G) / N
        sums = np.zeros_like(nodes)
        np.add.at(sums, assign, Z)
        A = elastic.copy()
        A[np.diag_indices(G)] += counts
        new = solve(A, sums / N + _PROX * nodes, assume_a="pos")
        history.append(map_energy(topo, new, Z, emap.stretch, emap.bend, assign).total)
        shift = float(np.abs(new - nodes).max())
        nodes = new
        if shift < tol:
            converged = True
            break

    if not converged:
        warnings.warn(f"elastic map did not converge in {max_iter} iterations", ConvergenceWarning, stacklevel=2)
    final = map_energy(topo, nodes, Z, emap.stretch, emap.bend)
    total_var = float(((Z - Z.mean(axis=0)) ** 2).sum(axis=1).mean())
    fvu = final.nodes / total_var if total_var > 0 else 0.0
    return replace(
        emap,
        nodes=nodes,
        fvu=float(min(max(fvu, 0.0), 1.0)),
        fitted=True,
        converged=converged,
        n_iter=it,
        energy_history=tuple(history),
    )


def fit_elastic_map(
    ds: Dataset,
    band: str,
    bend: float = FIGURE_PENALTY,
    dims: tuple[int, int] = DEFAULT_DIMS,
    stretch: float = 0.0,
    max_iter: int = 100,
    tol: float = 1e-4,
    predictors=PREDICTORS,
) -> ElasticMap:
    emap = init_map(ds, band, dims, bend, stretch, predictors)
    return fit_map(emap, ds, band, max_iter, tol)


def initial_fvu(emap: ElasticMap, ds: Dataset) -> float:
    data, _ = _variables(ds, emap.band, emap.predictors)
    Z = emap.standardize(data)
    _, d2 = partition(Z, emap.nodes)
    total_var = float(((Z - Z.mean(axis=0)) ** 2).sum(axis=1).mean())
    return float(d2.mean() / total_var)


@dataclass(frozen=True)
class SweepResult:
    bend: float
    map: ElasticMap
    fvu: float


def penalty_sweep(
    ds: Dataset,
    band: str,
    penalties=BEND_PENALTIES,
    dims: tuple[int, int] = DEFAULT_DIMS,
    stretch: float = 0.0,
    max_iter: int = 100,
    tol: float = 1e-4,
    predictors=PREDICTORS,
    cross_seed: bool = True,
    max_rounds: int = 10,
) -> list[SweepResult]:
    """One fitted map per bending penalty, all from the same initial grid.

    With ``cross_seed`` every penalty is also refit from any map found for
    another penalty that has lower energy under its own penalty, until no
    such map remains. Each returned map then minimizes its energy over the
    common pool of fitted maps, which makes FVU non-decreasing in the
    bending penalty.
    """
    base = init_map(ds, band, dims, penalties[0] if len(penalties) else FIGURE_PENALTY, stretch, predictors)
    data, _ = _variables(ds, base.band, base.predictors)
    Z = base.standardize(data)
    topo = base.topology
    penalties = [float(mu) for mu in penalties]
    current = [fit_map(replace(base, bend=mu), ds, band, max_iter, tol) for mu in penalties]
    if cross_seed and len(penalties) > 1:
        pool = list(current)
        for _ in range(max_rounds):
            changed = False
            for i, mu in enumerate(penalties):
                energy = [map_energy(topo, m.nodes, Z, stretch, mu).total for m in pool]
                own = map_energy(topo, current[i].nodes, Z, stretch, mu).total
                j = int(np.argmin(energy))
                if energy[j] < own - 1e-12 * abs(own):
                    current[i] = fit_map(replace(pool[j], bend=mu), ds, band, max_iter, tol)
                    pool.append(current[i])
                    changed = True
            if not changed:
                break
        else:
            warnings.warn("penalty sweep cross-seeding did not settle", ConvergenceWarning, stacklevel=2)
    return [SweepResult(mu, m, m.fvu) for mu, m in zip(penalties, current)]


# --- projection -----------------------------------------------------------


def _closest_on_segments(Q, A, B):
    """Closest points of each query to each segment AB.

    Q: (m, d); A, B: (s, d). Returns (dist2 (m, s), t (m, s)) with the point
    at A + t (B - A).
    """
    e = B - A
    ee = (e * e).sum(axis=1)
    qa = Q[:, None, :] - A[None, :, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(ee > 0, (qa * e[None]).sum(axis=2) / ee, 0.0)
    t = np.clip(t, 0.0, 1.0)
    diff = qa - t[..., None] * e[None]
    return (diff * diff).sum(axis=2), t


def _closest_in_triangles(Q, A, B, C):
    """Unconstrained plane projection, kept only where it falls inside the triangle.

    Returns (dist2, s, t) with the point A + s (B - A) + t (C - A); dist2 is
    +inf where the projection leaves the triangle or the triangle is degenerate.
    """
    e1, e2 = B - A, C - A
    g11 = (e1 * e1).sum(axis=1)
    g12 = (e1 * e2).sum(axis=1)
    g22 = (e2 * e2).sum(axis=1)
    det = g11 * g22 - g12 * g12
    good = det > 1e-12 * g11 * g22
    qa = Q[:, None, :] - A[None, :, :]
    r1 = (qa * e1[None]).sum(axis=2)
    r2 = (qa * e2[None]).sum(axis=2)
    safe = np.where(good, det, 1.0)
    s = (g22 * r1 - g12 * r2) / safe
    t = (g11 * r2 - g12 * r1) / safe
    inside = good[None, :] & (s >= 0) & (t >= 0) & (s + t <= 1)
    diff = qa - s[..., None] * e1[None] - t[..., None] * e2[None]
    d2 = np.where(inside, (diff * diff).sum(axis=2), np.inf)
    return d2, s, t


def project_standardized(emap: ElasticMap, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project z-scored predictor vectors onto the map surface.

    Distances use predictor coordinates only. Returns the z-scored band value
    at the projection and the squared projection distance.
    """
    P = emap.nodes[:, : emap.band_axis]
    v = emap.nodes[:, emap.band_axis]
    topo = emap.topology
    tris = topo.triangles
    segs = np.concatenate([topo.edges, tris[:, [0, 2]]]) if len(tris) else topo.edges

    best_d = np.full(len(Q), np.inf)
    best_v = np.full(len(Q), np.nan)
    if len(segs) == 0:
        d2 = ((Q[:, None, :] - P[None]) ** 2).sum(axis=2)
        k = np.argmin(d2, axis=1)
        return v[k], d2[np.arange(len(Q)), k]

    for start in range(0, len(Q), 256):
        q = Q[start : start + 256]
        rows = np.arange(len(q))
        d2, t = _closest_on_segments(q, P[segs[:, 0]], P[segs[:, 1]])
        k = np.argmin(d2, axis=1)
        bd = d2[rows, k]
        tk = t[rows, k]
        bv = (1 - tk) * v[segs[k, 0]] + tk * v[segs[k, 1]]
        if len(tris):
            d2t, s, tt = _closest_in_triangles(q, P[tris[:, 0]], P[tris[:, 1]], P[tris[:, 2]])
            kt = np.argmin(d2t, axis=1)
            dt = d2t[rows, kt]
            st, ttk = s[rows, kt], tt[rows, kt]
            vt = (1 - st - ttk) * v[tris[kt, 0]] + st * v[tris[kt, 1]] + ttk * v[tris[kt, 2]]
            use = dt < bd
            bd = np.where(use, dt, bd)
            bv = np.where(use, vt, bv)
        best_d[start : start + 256] = bd
        best_v[start : start + 256] = bv
    return best_v, best_d


def project_impute(emap: ElasticMap, X) -> np.ndarray:
    """Impute the band for raw predictor rows by projection onto the map."""
    if not emap.fitted:
        raise ModelError("elastic map has not been fitted")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    k = emap.band_axis
    Q = (X - emap.mean[:k]) / emap.sd[:k]
    zv, _ = project_standardized(emap, Q)
    return zv * emap.sd[k] + emap.mean[k]
