"""Markov price lattice: clustering, transitions, assembly, (de)serialization.

Stochastic price residuals are clustered over multi-day windows with
k-means; each historical day is then labelled by its nearest centroid
day-slice, giving daily label sequences from which day-to-day transition
matrices are counted.  Merging cluster residual profiles with
fundamentals forecasts yields one node set per stage: a node is a
(day-ahead cluster, capacity-price cluster) pair carrying concrete price
vectors.  Within a day the day-ahead component switches at block 1 and
the capacity component at block 4, matching the clearing calendar, so
per-boundary transition matrices are identities except at those blocks.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericalError
from .markets import BLOCKS_PER_DAY, Horizon

LATTICE_FORMAT = "battbid-lattice"
LATTICE_VERSION = 1

ROW_SUM_TOL = 1e-9


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray       # (k, dim)
    inertia: float
    assignments: np.ndarray     # (n,)

    def nearest(self, points: np.ndarray) -> np.ndarray:
        d = _sq_distances(np.atleast_2d(points), self.centroids)
        return d.argmin(axis=1)


def _sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def kmeans(observations: np.ndarray, k: int, seed: int = 0, restarts: int = 10,
           max_iter: int = 300, _extra_inits: list[np.ndarray] | None = None
           ) -> ClusterModel:
    """Euclidean k-means, best of ``restarts`` k-means++ starts.

    Deterministic for a given seed.  An empty cluster is re-seeded at the
    point farthest from its assigned centroid.
    """
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    n = obs.shape[0]
    if not 1 <= k <= n:
        raise DataError(f"k must be in 1..{n}, got {k}")
    if restarts < 1:
        raise DataError("restarts must be >= 1")
    rng = np.random.default_rng(seed)
    best: ClusterModel | None = None
    inits = [_kmeanspp_init(obs, k, rng) for _ in range(restarts)]
    inits.extend(_extra_inits or [])
    for init in inits:
        model = _lloyd(obs, init.copy(), max_iter)
        if best is None or model.inertia < best.inertia:
            best = model
    return best


def _kmeanspp_init(obs: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = obs.shape[0]
    centroids = np.empty((k, obs.shape[1]))
    centroids[0] = obs[rng.integers(n)]
    d2 = np.sum((obs - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[j] = obs[rng.integers(n)]
            continue
        centroids[j] = obs[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((obs - centroids[j]) ** 2, axis=1))
    return centroids


def _lloyd(obs: np.ndarray, centroids: np.ndarray, max_iter: int) -> ClusterModel:
    n, k = obs.shape[0], centroids.shape[0]
    labels = np.full(n, -1)
    for _ in range(max_iter):
        d = _sq_distances(obs, centroids)
        new_labels = d.argmin(axis=1)
        for c in range(k):
            members = new_labels == c
            if not members.any():
                # re-seed an empty cluster at the farthest point
                worst = int(np.argmax(d[np.arange(n), new_labels]))
                centroids[c] = obs[worst]
                new_labels[worst] = c
            else:
                centroids[c] = obs[members].mean(axis=0)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    d = _sq_distances(obs, centroids)
    labels = d.argmin(axis=1)
    inertia = float(d[np.arange(n), labels].sum())
    return ClusterModel(k=k, centroids=centroids, inertia=inertia, assignments=labels)


def elbow_scan(observations: np.ndarray, k_range, seed: int = 0, restarts: int = 10
               ) -> list[tuple[int, float]]:
    """Inertia per k.  Each k includes the previous best centroids plus the
    farthest point as one extra start, which makes the curve non-increasing
    by construction."""
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    out: list[tuple[int, float]] = []
    prev: ClusterModel | None = None
    for k in sorted(k_range):
        extra = []
        if prev is not None and prev.k == k - 1:
            d = _sq_distances(obs, prev.centroids)
            worst = int(np.argmax(d.min(axis=1)))
            extra.append(np.vstack([prev.centroids, obs[worst]]))
        model = kmeans(obs, k, seed=seed + k, restarts=restarts, _extra_inits=extra)
        out.append((k, model.inertia))
        prev = model
    return out


# ---------------------------------------------------------------------------
# windows, day labels, transitions
# ---------------------------------------------------------------------------

def window_observations(residuals: np.ndarray, window_days: int = 3) -> np.ndarray:
    """Non-overlapping ``window_days``-day windows of a 4h residual series."""
    r = np.asarray(residuals, dtype=float)
    if r.ndim != 1 or len(r) % BLOCKS_PER_DAY != 0:
        raise DataError("residual series must be flat with a whole number of days")
    days = len(r) // BLOCKS_PER_DAY
    n_windows, leftover = divmod(days, window_days)
    if n_windows == 0:
        raise DataError(f"need at least {window_days} days, got {days}")
    if leftover:
        warnings.warn(f"dropping {leftover} trailing day(s) that do not fill a "
                      f"{window_days}-day window")
    used = n_windows * window_days * BLOCKS_PER_DAY
    return r[:used].reshape(n_windows, window_days * BLOCKS_PER_DAY)


def label_days(day_matrix: np.ndarray, model: ClusterModel, window_days: int
               ) -> np.ndarray:
    """Assign each day to the cluster with the nearest centroid day-slice."""
    days = np.atleast_2d(np.asarray(day_matrix, dtype=float))
    slices = model.centroids.reshape(model.k, window_days, BLOCKS_PER_DAY)
    labels = np.empty(days.shape[0], dtype=int)
    for i, day in enumerate(days):
        d2 = np.sum((slices - day[None, None, :]) ** 2, axis=2)  # (k, window_days)
        labels[i] = int(np.unravel_index(np.argmin(d2), d2.shape)[0])
    return labels


def day_profiles(day_matrix: np.ndarray, labels: np.ndarray, k: int,
                 model: ClusterModel | None = None,
                 window_days: int | None = None) -> np.ndarray:
    """Per-cluster day-level residual profile: mean over assigned days.

    A cluster that attracted no day falls back to the average of its
    centroid's day-slices (requires ``model`` and ``window_days``).
    """
    days = np.atleast_2d(np.asarray(day_matrix, dtype=float))
    profiles = np.zeros((k, BLOCKS_PER_DAY))
    for c in range(k):
        members = np.asarray(labels) == c
        if members.any():
            profiles[c] = days[members].mean(axis=0)
        elif model is not None and window_days is not None:
            profiles[c] = model.centroids[c].reshape(window_days, BLOCKS_PER_DAY).mean(axis=0)
        else:
            raise DataError(f"cluster {c} has no assigned days and no fallback model")
    return profiles


@dataclass
class TransitionMatrix:
    """Row-stochastic day-to-day transition matrix with fallback bookkeeping."""

    matrix: np.ndarray
    fallback_rows: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DataError("transition matrix must be square")
        if np.any(m < 0):
            raise DataError("transition probabilities must be nonnegative")
        if np.any(np.abs(m.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise DataError("transition matrix rows must sum to 1")
        self.matrix = m

    @property
    def k(self) -> int:
        return self.matrix.shape[0]

    def stationary(self) -> np.ndarray:
        return stationary_distribution(self.matrix)


def estimate_transitions(labels: np.ndarray, k: int) -> TransitionMatrix:
    """Count day-to-day label transitions and row-normalize.

    Rows without any observed transition fall back to the empirical
    stationary (frequency) distribution and are flagged.
    """
    lab = np.asarray(labels, dtype=int)
    if len(lab) < 2:
        raise DataError("need at least two daily labels to estimate transitions")
    if lab.min() < 0 or lab.max() >= k:
        raise DataError(f"labels must lie in 0..{k - 1}")
    if np.all(lab == lab[0]) and k > 1:
        warnings.warn("degenerate single-label sequence; unobserved rows fall "
                      "back to the frequency distribution")
    counts = np.zeros((k, k))
    for a, b in zip(lab[:-1], lab[1:]):
        counts[a, b] += 1.0
    freq = np.bincount(lab, minlength=k).astype(float)
    freq /= freq.sum()
    fallback = []
    matrix = np.empty_like(counts)
    for row in range(k):
        total = counts[row].sum()
        if total == 0:
            matrix[row] = freq
            fallback.append(row)
        else:
            matrix[row] = counts[row] / total
    return TransitionMatrix(matrix=matrix, fallback_rows=tuple(fallback))


def stationary_distribution(matrix: np.ndarray) -> np.ndarray:
    """Left fixed point pi = pi P, solved as a least-squares system."""
    m = np.asarray(matrix, dtype=float)
    k = m.shape[0]
    A = np.vstack([m.T - np.eye(k), np.ones((1, k))])
    b = np.concatenate([np.zeros(k), [1.0]])
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    total = pi.sum()
    if total <= 0:
        raise NumericalError("stationary distribution computation failed")
    return pi / total


# ---------------------------------------------------------------------------
# the lattice itself
# ---------------------------------------------------------------------------

@dataclass
class LatticeNode:
    """Discrete price state active at one stage."""

    da_state: int
    fcr_state: int
    da_prices: np.ndarray    # (6,) EUR/MWh for the day's blocks
    fcr_prices: np.ndarray   # (6,) EUR/MW for the blocks of the active delivery day
    id_levels: np.ndarray    # (6, n_id) sorted ascending per block, EUR/MWh
    id_probs: np.ndarray     # (n_id,)

    def __post_init__(self) -> None:
        self.da_prices = np.asarray(self.da_prices, dtype=float)
        self.fcr_prices = np.asarray(self.fcr_prices, dtype=float)
        self.id_levels = np.atleast_2d(np.asarray(self.id_levels, dtype=float))
        self.id_probs = np.asarray(self.id_probs, dtype=float)
        if self.id_levels.shape[0] != BLOCKS_PER_DAY:
            raise DataError("id_levels must have one row per block")
        if np.any(np.diff(self.id_levels, axis=1) < 0):
            raise DataError("id price levels must be sorted ascending")
        if abs(self.id_probs.sum() - 1.0) > ROW_SUM_TOL:
            raise DataError("id level probabilities must sum to 1")


@dataclass
class MarkovLattice:
    """Per-stage node sets with inter-stage transition matrices."""

    stage_nodes: list[list[LatticeNode]]
    transitions: list[np.ndarray]       # len n_stages - 1, (n_t, n_{t+1})
    initial_distribution: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.transitions) != len(self.stage_nodes) - 1:
            raise DataError("need one transition matrix per stage boundary")
        for t, P in enumerate(self.transitions):
            P = np.asarray(P, dtype=float)
            if P.shape != (len(self.stage_nodes[t]), len(self.stage_nodes[t + 1])):
                raise DataError(f"transition {t} has shape {P.shape}")
            if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > ROW_SUM_TOL):
                raise DataError(f"transition {t} is not row-stochastic")
            self.transitions[t] = P
        pi = np.asarray(self.initial_distribution, dtype=float)
        if len(pi) != len(self.stage_nodes[0]) or abs(pi.sum() - 1.0) > ROW_SUM_TOL:
            raise DataError("initial distribution must match stage-1 nodes and sum to 1")
        self.initial_distribution = pi
        levels = {n.id_levels.shape[1] for nodes in self.stage_nodes for n in nodes}
        if len(levels) != 1:
            raise DataError("all nodes must share the same number of id levels")
        self._menus: dict = {}

    # -- shape ---------------------------------------------------------------

    @property
    def n_stages(self) -> int:
        return len(self.stage_nodes)

    def nodes(self, t: int) -> list[LatticeNode]:
        """Nodes active at 1-based stage ``t``."""
        return self.stage_nodes[t - 1]

    def transition(self, t: int) -> np.ndarray:
        """Transition matrix from stage ``t`` to ``t + 1`` (1-based)."""
        return self.transitions[t - 1]

    def children(self, t: int, node: int) -> tuple[np.ndarray, np.ndarray]:
        row = self.transition(t)[node]
        idx = np.nonzero(row > 0)[0]
        return idx, row[idx]

    @property
    def n_id_levels(self) -> int:
        return self.stage_nodes[0][0].id_levels.shape[1]

    def _distinct_states(self, t: int, market: str) -> list[int]:
        key = "da_state" if market == "da" else "fcr_state"
        seen: list[int] = []
        for n in self.nodes(t):
            s = getattr(n, key)
            if s not in seen:
                seen.append(s)
        return sorted(seen)

    @property
    def n_da_levels(self) -> int:
        return len(self._distinct_states(1, "da"))

    @property
    def n_fcr_levels(self) -> int:
        return len(self._distinct_states(1, "fcr"))

    # -- price menus ----------------------------------------------------------

    def menu(self, t: int, market: str) -> np.ndarray:
        """Possible prices per block at stage ``t``: (6, n_levels), each row
        sorted ascending.  Levels are the distinct price states of the
        stage's nodes, so a realized node price always equals one entry."""
        key = (t, market)
        if key in self._menus:
            return self._menus[key]
        states = self._distinct_states(t, market)
        attr = "da_prices" if market == "da" else "fcr_prices"
        skey = "da_state" if market == "da" else "fcr_state"
        rep: dict[int, np.ndarray] = {}
        for n in self.nodes(t):
            rep.setdefault(getattr(n, skey), getattr(n, attr))
        cols = np.column_stack([rep[s] for s in states])
        menu = np.sort(cols, axis=1)
        self._menus[key] = menu
        return menu

    # -- sampling ---------------------------------------------------------------

    def sample_initial(self, rng: np.random.Generator) -> int:
        return int(rng.choice(len(self.initial_distribution), p=self.initial_distribution))

    def sample_next(self, t: int, node: int, rng: np.random.Generator) -> int:
        row = self.transition(t)[node]
        return int(rng.choice(len(row), p=row))

    def count_node_paths(self) -> int:
        """Number of distinct node paths with positive probability."""
        ways = [1 if p > 0 else 0 for p in self.initial_distribution]
        for P in self.transitions:
            nxt = [0] * P.shape[1]
            for i, w in enumerate(ways):
                if w == 0:
                    continue
                for j in range(P.shape[1]):
                    if P[i, j] > 0:
                        nxt[j] += w
            ways = nxt
        return int(sum(ways))

    def scale_fcr(self, scale: float) -> "MarkovLattice":
        """New lattice with all capacity prices multiplied by ``scale``."""
        stages = [[LatticeNode(n.da_state, n.fcr_state, n.da_prices.copy(),
                               n.fcr_prices * scale, n.id_levels.copy(),
                               n.id_probs.copy())
                   for n in nodes] for nodes in self.stage_nodes]
        meta = dict(self.meta)
        meta["fcr_price_scale"] = scale * meta.get("fcr_price_scale", 1.0)
        return MarkovLattice(stage_nodes=stages,
                             transitions=[P.copy() for P in self.transitions],
                             initial_distribution=self.initial_distribution.copy(),
                             meta=meta)


# ---------------------------------------------------------------------------
# assembly from fitted components
# ---------------------------------------------------------------------------

def assemble_lattice(horizon: Horizon,
                     da_profiles: np.ndarray,
                     fcr_log_profiles: np.ndarray,
                     da_transition: TransitionMatrix,
                     fcr_transition: TransitionMatrix,
                     spread_levels: np.ndarray,
                     spread_probs: np.ndarray,
                     da_deterministic: np.ndarray,
                     fcr_log_deterministic: np.ndarray) -> MarkovLattice:
    """Merge forecasts and cluster residual profiles into the stage lattice.

    ``da_deterministic`` is (days, 6) in EUR/MWh; ``fcr_log_deterministic``
    is (days, 6) in log EUR/MW, indexed by delivery day.  Day-ahead prices
    are forecast plus cluster profile; capacity prices reconstruct through
    the exponential so they stay positive.  Joint transitions factor into
    the two independent market chains: the day-ahead component advances at
    the day boundary, the capacity component at the block-3/4 boundary
    where its auction clears.  The initial node distribution is the
    product of the two stationary distributions.
    """
    k_da = da_profiles.shape[0]
    k_fcr = fcr_log_profiles.shape[0]
    days = horizon.days
    da_deterministic = np.asarray(da_deterministic, dtype=float)
    fcr_log_deterministic = np.asarray(fcr_log_deterministic, dtype=float)
    for name, arr in (("da", da_deterministic), ("fcr", fcr_log_deterministic)):
        if arr.shape != (days, BLOCKS_PER_DAY):
            raise DataError(f"{name} deterministic forecast must cover all {days} days "
                            f"x {BLOCKS_PER_DAY} blocks, got {arr.shape}")
    if da_transition.k != k_da or fcr_transition.k != k_fcr:
        raise DataError("transition matrices do not match cluster counts")
    spread_levels = np.asarray(spread_levels, dtype=float)
    if spread_levels.shape[0] != k_da:
        raise DataError("need one spread level row per day-ahead cluster")

    stage_nodes: list[list[LatticeNode]] = []
    transitions: list[np.ndarray] = []
    n_nodes = k_da * k_fcr
    eye_da = np.eye(k_da)
    eye_fcr = np.eye(k_fcr)
    for s in horizon.stages:
        d = s.day
        fcr_delivery = min(d + 1 if s.block >= 4 else d, days)
        nodes = []
        for c in range(k_da):
            da_prices = da_deterministic[d - 1] + da_profiles[c]
            id_levels = da_prices[:, None] + spread_levels[c][None, :]
            for g in range(k_fcr):
                fcr_prices = np.exp(fcr_log_deterministic[fcr_delivery - 1]
                                    + fcr_log_profiles[g])
                nodes.append(LatticeNode(
                    da_state=c, fcr_state=g,
                    da_prices=da_prices, fcr_prices=fcr_prices,
                    id_levels=np.sort(id_levels, axis=1),
                    id_probs=np.asarray(spread_probs, dtype=float)))
        stage_nodes.append(nodes)
        if s != horizon.last:
            nxt = s.next()
            if nxt.block == 1:
                P = np.kron(da_transition.matrix, eye_fcr)
            elif nxt.block == 4:
                P = np.kron(eye_da, fcr_transition.matrix)
            else:
                P = np.eye(n_nodes)
            transitions.append(P)

    initial = np.kron(da_transition.stationary(), fcr_transition.stationary())
    initial = initial / initial.sum()
    return MarkovLattice(
        stage_nodes=stage_nodes, transitions=transitions,
        initial_distribution=initial,
        meta={"k_da": k_da, "k_fcr": k_fcr, "days": days,
              "n_id_levels": int(spread_levels.shape[1])})


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def export_lattice(lattice: MarkovLattice, path) -> None:
    payload = {
        "meta": lattice.meta,
        "initial_distribution": lattice.initial_distribution.tolist(),
        "stages": [
            {
                "nodes": [
                    {
                        "da_state": n.da_state,
                        "fcr_state": n.fcr_state,
                        "da_prices": n.da_prices.tolist(),
                        "fcr_prices": n.fcr_prices.tolist(),
                        "id_levels": n.id_levels.tolist(),
                        "id_probs": n.id_probs.tolist(),
                    }
                    for n in nodes
                ],
                "transition": (lattice.transitions[t].tolist()
                               if t < len(lattice.transitions) else None),
            }
            for t, nodes in enumerate(lattice.stage_nodes)
        ],
    }
    body = _canonical(payload)
    doc = {
        "format": LATTICE_FORMAT,
        "version": LATTICE_VERSION,
        "checksum": hashlib.sha256(body.encode()).hexdigest(),
        "payload": payload,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")


def import_lattice(path) -> MarkovLattice:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"lattice file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"lattice file is not valid JSON: {exc}") from exc
    if doc.get("format") != LATTICE_FORMAT:
        raise DataError(f"not a lattice file: {path}")
    if doc.get("version") != LATTICE_VERSION:
        raise DataError(f"unsupported lattice version {doc.get('version')} "
                        f"(expected {LATTICE_VERSION})")
    payload = doc.get("payload", {})
    if hashlib.sha256(_canonical(payload).encode()).hexdigest() != doc.get("checksum"):
        raise DataError(f"lattice checksum mismatch: {path} is corrupted")
    stage_nodes = [
        [LatticeNode(
            da_state=nd["da_state"], fcr_state=nd["fcr_state"],
            da_prices=np.array(nd["da_prices"]),
            fcr_prices=np.array(nd["fcr_prices"]),
            id_levels=np.array(nd["id_levels"]),
            id_probs=np.array(nd["id_probs"]))
         for nd in st["nodes"]]
        for st in payload["stages"]
    ]
    transitions = [np.array(st["transition"]) for st in payload["stages"][:-1]]
    return MarkovLattice(stage_nodes=stage_nodes, transitions=transitions,
                         initial_distribution=np.array(payload["initial_distribution"]),
                         meta=payload.get("meta", {}))


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))
