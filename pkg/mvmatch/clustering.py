"""

Cross-view person matching as constrained clustering.

Step 1 clusters all samples of one time step into K people under a size
constraint: every cluster holds at least 2 and at most N samples (N is the
number of cameras). The assignment half of each k-means iteration is an
exact min-cost flow problem solved with network simplex.

Step 2 collects samples that share a cluster with another sample of the
same camera (the source constraint says one camera sees a person once).

Step 3 re-assigns those samples one at a time, most distinguishable first.
The distinguishability score of a sample is the ratio of the distances to
its second nearest and nearest eligible cluster centers, where a cluster
is eligible when it holds no sample of the sample's camera.

"""

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import NamedTuple, Tuple

import networkx as nx
import numpy as np
from sklearn.cluster import KMeans, kmeans_plusplus

from .common import InfeasibleError, NoEligibleClusterError, SchemaError
from .model import ClusterResult, FeatureVector
from .signals import Signal

logger = logging.getLogger('mvmatch.clustering')

# emitted with (iteration, objective) after every assignment step
kmeans_iteration = Signal('kmeans_iteration')

MIN_CLUSTER_SIZE = 2
DEFAULT_COST_SCALE = 1e7


@dataclass(frozen=True)
class Sample:
    """ A track feature of one person in one camera view. """

    feature: FeatureVector
    camera_id: int
    local_index: int = 0

    def __post_init__(self):
        if not isinstance(self.feature, FeatureVector):
            object.__setattr__(self, 'feature', FeatureVector(self.feature))
        if abs(self.feature.norm - 1.0) > 1e-6:
            raise SchemaError('sample features must have unit norm (got %g)'
                              % self.feature.norm)

    @property
    def values(self):
        return self.feature.values


class ConflictGroup(NamedTuple):
    cluster: int
    camera_id: int
    members: Tuple[int, ...]


def feature_matrix(samples):
    return np.vstack([s.values for s in samples])


def check_feasible(n_samples, k, n_cameras):
    """ Raise InfeasibleError unless K clusters of size [2, N] can hold n samples. """
    if k < 1:
        raise InfeasibleError('need at least one cluster (K=%d)' % k)
    if MIN_CLUSTER_SIZE * k > n_samples:
        raise InfeasibleError('%d clusters of at least %d samples need %d samples, '
                              'got %d' % (k, MIN_CLUSTER_SIZE, MIN_CLUSTER_SIZE * k,
                                          n_samples))
    if k * n_cameras < n_samples:
        raise InfeasibleError('%d clusters of at most %d samples cannot hold %d '
                              'samples' % (k, n_cameras, n_samples))


def objective(samples, centers, assignments):
    """ Sum over samples of half the squared distance to the assigned center. """
    x = samples if isinstance(samples, np.ndarray) else feature_matrix(samples)
    diff = x - np.asarray(centers)[list(assignments)]
    return float(0.5 * np.sum(diff * diff))


class FlowNetwork:
    """ Min-cost flow formulation of the size-constrained assignment.

    source -> sample arcs carry exactly one unit, sample -> cluster arcs
    cost half the squared distance (scaled to integers), cluster -> sink
    arcs carry between 2 and N units. Lower bounds are folded into the node
    demands before handing the graph to networkx.

    """

    SOURCE = 'source'
    SINK = 'sink'

    def __init__(self, samples, centers, n_cameras, cost_scale=DEFAULT_COST_SCALE):
        x = samples if isinstance(samples, np.ndarray) else feature_matrix(samples)
        centers = np.asarray(centers, dtype=float)
        self.n_samples = x.shape[0]
        self.k = centers.shape[0]
        self.n_cameras = n_cameras
        self.cost_scale = cost_scale
        check_feasible(self.n_samples, self.k, n_cameras)
        sq = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        self.costs = np.rint(0.5 * sq * cost_scale).astype(np.int64)
        self.arcs = []  # (tail, head, low, high, cost)
        for i in range(self.n_samples):
            self.arcs.append((self.SOURCE, ('x', i), 1, 1, 0))
        for i in range(self.n_samples):
            for k in range(self.k):
                self.arcs.append((('x', i), ('c', k), 0, 1, int(self.costs[i, k])))
        for k in range(self.k):
            self.arcs.append((('c', k), self.SINK, MIN_CLUSTER_SIZE, n_cameras, 0))

    @property
    def supply(self):
        return self.n_samples

    def graph(self):
        """ Return the networkx graph with lower bounds moved into demands. """
        demand = defaultdict(int)
        demand[self.SOURCE] -= self.supply
        demand[self.SINK] += self.supply
        g = nx.DiGraph()
        for tail, head, low, high, cost in self.arcs:
            demand[tail] += low
            demand[head] -= low
            g.add_edge(tail, head, capacity=high - low, weight=cost)
        for node in g.nodes:
            g.nodes[node]['demand'] = demand[node]
        return g

    def solve(self):
        """ Return (assignments, integer flow cost). """
        try:
            cost, flow = nx.network_simplex(self.graph())
        except nx.NetworkXUnfeasible as e:
            raise InfeasibleError('size-constrained assignment is infeasible: %s'
                                  % e) from e
        assignments = []
        for i in range(self.n_samples):
            arcs = flow[('x', i)]
            assignments.append(next(k for k in range(self.k)
                                    if arcs.get(('c', k), 0) > 0))
        return tuple(assignments), cost


def solve_assignment(samples, centers, n_cameras, cost_scale=DEFAULT_COST_SCALE):
    """ Optimal assignment of samples to fixed centers with cluster sizes in [2, N]. """
    assignments, _ = FlowNetwork(samples, centers, n_cameras, cost_scale).solve()
    return assignments


def camera_counts(samples):
    return Counter(s.camera_id for s in samples)


def resolve_k(samples, k):
    """ 'auto' (or None) means the largest number of samples of one camera. """
    if k is None or k == 'auto':
        return max(camera_counts(samples).values())
    return int(k)


def initial_centers(x, k, seed):
    """ k-means++ seeding, reproducible for a given seed. """
    centers, _ = kmeans_plusplus(x, n_clusters=k, random_state=seed)
    return centers


def constrained_kmeans(samples, k, n_cameras, cfg):
    """ Size-constrained k-means; alternates exact assignment and mean update. """
    per_camera = camera_counts(samples)
    busiest = max(per_camera.values()) if per_camera else 0
    if k < busiest:
        raise InfeasibleError('camera %d has %d samples but K=%d'
                              % (per_camera.most_common(1)[0][0], busiest, k))
    check_feasible(len(samples), k, n_cameras)
    x = feature_matrix(samples)
    centers = initial_centers(x, k, cfg.seed)
    assignments = None
    trace = []
    for iteration in range(1, cfg.kmeans_max_iter + 1):
        new_assignments = solve_assignment(x, centers, n_cameras, cfg.cost_scale)
        value = objective(x, centers, new_assignments)
        trace.append(value)
        logger.debug('k-means iteration %d: objective %.9g', iteration, value)
        kmeans_iteration(iteration, value)
        if new_assignments == assignments:
            break
        assignments = new_assignments
        labels = np.array(assignments)
        centers = np.vstack([x[labels == c].mean(axis=0) for c in range(k)])
    else:
        logger.info('k-means stopped at the iteration cap (%d)',
                    cfg.kmeans_max_iter)
    return ClusterResult(k, assignments, centers, objective_trace=trace)


def detect_conflicts(result, samples):
    """ Groups of samples that share both a cluster and a camera. """
    groups = []
    for cluster in range(result.k):
        by_camera = defaultdict(list)
        for i in result.members(cluster):
            by_camera[samples[i].camera_id].append(i)
        for camera in sorted(by_camera):
            members = by_camera[camera]
            if len(members) >= 2:
                groups.append(ConflictGroup(cluster, camera, tuple(members)))
    return groups


def eligible_distances(sample, centers, occupancy):
    """ [(cluster, distance)] for clusters holding no sample of this camera. """
    centers = np.asarray(centers)
    distances = np.linalg.norm(centers - sample.values, axis=1)
    return [(k, float(distances[k])) for k in range(centers.shape[0])
            if sample.camera_id not in occupancy[k]]


def nearest_eligible(sample, centers, occupancy):
    candidates = eligible_distances(sample, centers, occupancy)
    if not candidates:
        raise NoEligibleClusterError('every cluster already holds camera %d'
                                     % sample.camera_id)
    return min(candidates, key=lambda kd: (kd[1], kd[0]))


def sds(sample, centers, occupancy):
    """ Distinguishability of a sample: second nearest over nearest eligible
    center distance, +inf with a single eligible cluster.

    """
    candidates = eligible_distances(sample, centers, occupancy)
    if not candidates:
        raise NoEligibleClusterError('every cluster already holds camera %d'
                                     % sample.camera_id)
    if len(candidates) == 1:
        return float('inf')
    d1, d2 = sorted(d for _, d in candidates)[:2]
    if d1 == 0.0:
        return float('inf') if d2 > 0.0 else 1.0
    return d2 / d1


def occupancy_of(assignments, samples, k, exclude=()):
    exclude = set(exclude)
    occupancy = [set() for _ in range(k)]
    for i, a in enumerate(assignments):
        if i not in exclude:
            occupancy[a].add(samples[i].camera_id)
    return occupancy


def reassign_conflicts(result, groups, samples):
    """ Re-assign conflicting samples one at a time, highest score first.

    Each round scores every remaining sample against the current occupancy,
    moves the best one (ties: smaller nearest distance, then lower index) to
    its nearest eligible cluster and marks that camera as present there.
    Samples without any eligible cluster go last, to the nearest cluster
    overall, and are flagged as fallbacks.

    """
    flagged = sorted({i for g in groups for i in g.members})
    if not flagged:
        return result
    assignments = list(result.assignments)
    centers = result.centers
    occupancy = occupancy_of(assignments, samples, result.k, exclude=flagged)
    fallback = list(result.fallback_flags)
    conflicts = list(result.conflict_flags)
    for i in flagged:
        conflicts[i] = True
    trace = []
    remaining = list(flagged)
    while remaining:
        scored = []
        for i in remaining:
            try:
                score = sds(samples[i], centers, occupancy)
            except NoEligibleClusterError:
                continue
            cluster, distance = nearest_eligible(samples[i], centers, occupancy)
            scored.append((-score, distance, i, cluster, score))
        if scored:
            _, _, i, cluster, score = min(scored)
        else:
            i = remaining[0]
            distances = np.linalg.norm(centers - samples[i].values, axis=1)
            cluster = int(np.argmin(distances))
            score = float('nan')
            fallback[i] = True
            logger.warning('sample %d (camera %d) has no eligible cluster; '
                           'falling back to cluster %d',
                           i, samples[i].camera_id, cluster)
        assignments[i] = cluster
        occupancy[cluster].add(samples[i].camera_id)
        remaining.remove(i)
        trace.append((i, cluster, score))
    return result.replace(assignments=tuple(assignments),
                          conflict_flags=tuple(conflicts),
                          fallback_flags=tuple(fallback),
                          reassignments=tuple(trace))


def refresh_centers(result, samples, flagged):
    """ Cluster means over non-flagged members; clusters with none keep their center. """
    x = feature_matrix(samples)
    flagged = set(flagged)
    centers = np.array(result.centers, dtype=float)
    for k in range(result.k):
        members = [i for i in result.members(k) if i not in flagged]
        if members:
            centers[k] = x[members].mean(axis=0)
    return centers


def kmeans_baseline(samples, k, seed=0):
    """ Unconstrained k-means, for comparison with the constrained method. """
    x = feature_matrix(samples)
    model = KMeans(n_clusters=k, init='k-means++', n_init=1, random_state=seed)
    labels = model.fit_predict(x)
    return ClusterResult(k, labels.tolist(), model.cluster_centers_,
                         objective_trace=(0.5 * model.inertia_,))


def match_people(samples, k, n_cameras, cfg, method=None):
    """ Full multi-step matching of one time step's samples into K people.

    `method` (default cfg.clustering) may also be 'size-only' (Step 1 alone)
    or 'kmeans' (unconstrained baseline).

    """
    method = method or cfg.clustering
    k = resolve_k(samples, k)
    if method == 'kmeans':
        return kmeans_baseline(samples, k, cfg.seed)
    step1 = constrained_kmeans(samples, k, n_cameras, cfg)
    if method == 'size-only':
        return step1
    groups = detect_conflicts(step1, samples)
    if not groups:
        return step1
    flagged = sorted({i for g in groups for i in g.members})
    centers = refresh_centers(step1, samples, flagged)
    result = reassign_conflicts(step1.replace(centers=centers), groups, samples)
    logger.info('%d samples in %d conflict groups re-assigned, %d fallbacks',
                len(flagged), len(groups), sum(result.fallback_flags))
    return result
