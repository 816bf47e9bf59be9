"""Candidate retrieval and RANSAC-style detection-to-object matching.

Each frame node is offered at most ``J`` map objects that share its label and
have the most similar graph-kernel descriptor. The matcher then repeatedly
samples a few frame nodes, tries every injective assignment of their
candidates, solves P3P on the assigned object centres and keeps the
hypothesis under which the most frame nodes reproject onto one of their
candidates.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import DegenerateConfiguration, InsufficientDetections, NoSolution, NoValidPose
from .geometry import MIN_DEPTH, CameraIntrinsics, PoseSE3
from .graph import SceneGraph, node_distance_matrix
from .pose import Correspondence, bearings, p3p_batch, pnp_from_centers, polish_pose
from .semantics import mode_label

DEFAULT_J = 5
_RANK_DECIMALS = 12
_ITER_BLOCK = 4


@dataclass(frozen=True)
class Match:
    frame_id: int
    map_id: int
    inlier: bool
    error: float


@dataclass
class AssociationSet:
    matches: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.matches)

    def __len__(self):
        return len(self.matches)

    @property
    def inliers(self):
        return [m for m in self.matches if m.inlier]

    @property
    def num_inliers(self):
        return sum(m.inlier for m in self.matches)

    def pairs(self, inliers_only=True):
        return {(m.frame_id, m.map_id) for m in self.matches if m.inlier or not inliers_only}

    def check(self):
        frames = [m.frame_id for m in self.matches]
        assert len(frames) == len(set(frames)), "frame node matched twice"
        maps = [m.map_id for m in self.matches if m.inlier]
        assert len(maps) == len(set(maps)), "map node matched twice among inliers"


@dataclass(frozen=True)
class RansacParams:
    num: int = 3
    max_iter: int = 50
    inlier_threshold: float = 40.0
    rng_seed: int | Sequence[int] = 0
    max_hops: int | None = 2
    local_optimization: bool = True
    confidence: float | None = 0.999

    def __post_init__(self):
        if self.num < 3:
            raise ValueError("num must be >= 3")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")
        if self.confidence is not None and not 0 < self.confidence < 1:
            raise ValueError("confidence must be in (0, 1)")


# --------------------------------------------------------------------------
# candidate retrieval
# --------------------------------------------------------------------------


class LabelIndex:
    """Map nodes filed under the mode label of their distribution."""

    def __init__(self, map_graph: SceneGraph, descriptors=None):
        self.graph = map_graph
        V = map_graph.kernel_matrix() if descriptors is None else np.asarray(descriptors)
        buckets: dict = {}
        for i, node in enumerate(map_graph.nodes):
            buckets.setdefault(mode_label(node.distribution, map_graph.categories), []).append(i)
        self._entries = {}
        for label, rows in buckets.items():
            rows.sort(key=lambda i: map_graph.nodes[i].id)
            ids = np.array([map_graph.nodes[i].id for i in rows])
            self._entries[label] = (ids, V[rows])

    def __contains__(self, label):
        return label in self._entries

    def labels(self):
        return sorted(self._entries)

    def get(self, label):
        """``(ids, descriptors)`` filed under ``label`` (ids ascending)."""
        if label not in self._entries:
            return np.zeros(0, dtype=int), np.zeros((0, len(self.graph.categories)))
        return self._entries[label]

    def as_dict(self):
        return {label: [(int(i), v) for i, v in zip(*self._entries[label])] for label in self.labels()}


def build_label_index(map_graph: SceneGraph, descriptors=None) -> LabelIndex:
    return LabelIndex(map_graph, descriptors)


def candidate_set(label: str, descriptor, index: LabelIndex, J: int = DEFAULT_J):
    """Up to ``J`` ``(map id, distance)`` pairs ranked by cosine distance.

    Distances are compared after rounding to 12 decimals so that rankings do
    not depend on last-bit noise; remaining ties go to the lower id.
    """
    ids, V = index.get(label)
    if len(ids) == 0:
        return []
    d = node_distance_matrix(descriptor, V)[0]
    order = np.lexsort((ids, np.round(d, _RANK_DECIMALS)))[:J]
    return [(int(ids[k]), float(d[k])) for k in order]


def none_graph_candidates(label: str, map_graph: SceneGraph):
    """Every map node whose mode label equals ``label`` (ids ascending, unranked)."""
    cats = map_graph.categories
    return sorted(n.id for n in map_graph.nodes if mode_label(n.distribution, cats) == label)


def random_walk_descriptor(g: SceneGraph, root, steps: int = 5, walks: int = 20, rng_seed=0):
    """Label histogram of nodes visited by uniform random walks from ``root``,
    L2-normalised. Visits are labelled with each node's mode label."""
    i0 = g.position(root)
    cats = g.categories
    hist = np.zeros(len(cats))
    adj = [np.flatnonzero(row) for row in g.weights]
    if len(adj[i0]) == 0:
        return hist
    labels = [cats.index(n.label) for n in g.nodes]
    rng = np.random.default_rng(rng_seed)
    for _ in range(walks):
        i = i0
        for _ in range(steps):
            nbrs = adj[i]
            i = int(nbrs[rng.integers(len(nbrs))])
            hist[labels[i]] += 1
    return hist / np.linalg.norm(hist)


def random_walk_descriptors(g: SceneGraph, steps=5, walks=20, rng_seed=0):
    """Random-walk descriptors for every node; node ``k`` uses seed ``(rng_seed, k)``."""
    if len(g) == 0:
        return np.zeros((0, len(g.categories)))
    return np.stack(
        [random_walk_descriptor(g, n.id, steps, walks, [rng_seed, k]) for k, n in enumerate(g.nodes)]
    )


def frame_candidates(frame_graph: SceneGraph, index: LabelIndex, J=DEFAULT_J, descriptors=None):
    """Candidate lists keyed by frame node id."""
    V = frame_graph.kernel_matrix() if descriptors is None else descriptors
    return {n.id: candidate_set(n.label, V[i], index, J) for i, n in enumerate(frame_graph.nodes)}


# --------------------------------------------------------------------------
# RANSAC matching
# --------------------------------------------------------------------------


class _Hypotheses:
    """Reprojection bookkeeping shared by every pose hypothesis of one frame."""

    def __init__(self, frame_graph, map_graph, candidates, K, usable):
        self.K = K
        self.frame_ids = list(usable)
        self.centers = np.array([frame_graph.node(f).anchor for f in usable])
        pair_frame, pair_map = [], []
        for r, f in enumerate(usable):
            for m, _ in candidates[f]:
                pair_frame.append(r)
                pair_map.append(m)
        self.pair_frame = np.array(pair_frame)
        self.pair_map = np.array(pair_map)
        self.pair_points = np.array([map_graph.node(m).anchor for m in pair_map]).reshape(-1, 3)
        self.pair_centers = self.centers[self.pair_frame]
        self._off_u = self.pair_centers[:, 0] - K.cx
        self._off_v = self.pair_centers[:, 1] - K.cy
        # greedy tie order: error, then frame row, then candidate rank
        self.pair_rank = np.arange(len(pair_map))

    def errors(self, R, t):
        """Reprojection errors ``(H, P)`` of every candidate pair under poses ``(H, 3, 3)``."""
        # one (P, 3) x (3, 3H) product instead of H small ones
        H = len(R)
        Xc = (self.pair_points @ np.asarray(R).reshape(3 * H, 3).T).reshape(-1, H, 3) + t
        z = Xc[..., 2].T
        with np.errstate(divide="ignore", invalid="ignore"):
            du = self.K.fx * Xc[..., 0].T / z - self._off_u
            dv = self.K.fy * Xc[..., 1].T / z - self._off_v
        err = np.sqrt(du * du + dv * dv)
        return np.where(z > MIN_DEPTH, err, np.inf)

    def upper_bound(self, err, thr):
        """Frame nodes with at least one candidate under ``thr`` (ignores injectivity)."""
        hit = np.zeros((err.shape[0], len(self.frame_ids)), dtype=bool)
        rows, cols = np.nonzero(err < thr)
        hit[rows, self.pair_frame[cols]] = True
        return hit.sum(axis=1)

    def update_match(self, err, thr):
        """Greedy injective assignment by ascending error; returns ``(count, matches)``."""
        order = np.lexsort((self.pair_rank, err))
        frame_taken: dict = {}
        map_taken = set()
        for p in order:
            r = int(self.pair_frame[p])
            m = int(self.pair_map[p])
            if r in frame_taken or m in map_taken:
                continue
            frame_taken[r] = (m, float(err[p]))
            map_taken.add(m)
        matches = []
        best_any = {}
        for p in order:
            best_any.setdefault(int(self.pair_frame[p]), (int(self.pair_map[p]), float(err[p])))
        count = 0
        for r, f in enumerate(self.frame_ids):
            if r in frame_taken and frame_taken[r][1] < thr:
                m, e = frame_taken[r]
                matches.append(Match(f, m, True, e))
                count += 1
            else:
                m, e = best_any[r]
                matches.append(Match(f, m, False, e))
        return count, AssociationSet(matches)


def find_combinations(sample, candidates, frame_graph: SceneGraph, map_graph: SceneGraph, max_hops=2):
    """Injective candidate assignments for the sampled frame nodes.

    Frame nodes adjacent in the frame graph must receive map nodes at most
    ``max_hops`` apart in the map graph (``None`` disables the check).
    """
    lists = [[m for m, _ in candidates[f]] for f in sample]
    adjacent = [
        (a, b)
        for a, b in itertools.combinations(range(len(sample)), 2)
        if frame_graph.weights[frame_graph.position(sample[a]), frame_graph.position(sample[b])] > 0
    ]
    hops = map_graph.hop_distances() if (max_hops is not None and adjacent) else None
    out = []
    for combo in itertools.product(*lists):
        if len(set(combo)) < len(combo):
            continue
        if hops is not None and any(
            hops[map_graph.position(combo[a]), map_graph.position(combo[b])] > max_hops for a, b in adjacent
        ):
            continue
        out.append(combo)
    return out


def _local_optimization(hyp, matches, pose, count, map_anchor, params, rounds=3):
    """Re-estimate the pose from every inlier centre and re-assign, while the
    inlier count does not drop and the assignment keeps changing."""
    for _ in range(rounds):
        inl = matches.inliers
        if len(inl) < 4:
            break
        uv = np.array([hyp.centers[hyp.frame_ids.index(m.frame_id)] for m in inl])
        X = np.array([map_anchor[m.map_id] for m in inl])
        R, t = polish_pose(np.array(pose.rotation), np.array(pose.translation), hyp.K, uv, X)
        err = hyp.errors(R[None], t[None])[0]
        new_count, new_matches = hyp.update_match(err, params.inlier_threshold)
        if new_count < count:
            break
        changed = new_matches.pairs() != matches.pairs()
        count, matches, pose = new_count, new_matches, PoseSE3(R, t)
        if not changed:
            break
    return count, matches, pose


def _pnp_hypotheses(combos, centers, map_anchor, K):
    Rs, ts = [], []
    for combo in combos:
        corrs = [Correspondence(c, map_anchor[m]) for c, m in zip(centers, combo)]
        try:
            poses = pnp_from_centers(corrs, K)
        except (DegenerateConfiguration, NoSolution):
            continue
        Rs.extend(p.rotation for p in poses)
        ts.extend(p.translation for p in poses)
    return np.array(Rs).reshape(-1, 3, 3), np.array(ts).reshape(-1, 3)


def _enough(best_count, usable, it, params):
    """True once every usable node is an inlier or, with ``confidence`` set,
    once an all-inlier sample would have been drawn with that probability."""
    if best_count >= usable:
        return True
    if params.confidence is None or best_count < params.num:
        return False
    p_good = np.prod([(best_count - k) / (usable - k) for k in range(params.num)])
    return it >= np.log1p(-params.confidence) / np.log1p(-p_good)


def _block_hypotheses(samples, candidates, frame_graph, map_graph, hyp, f_all, row_of, map_anchor, params):
    """Pose hypotheses for several samples; ``owner`` gives each one's sample index."""
    Rs, ts, owners = [], [], []
    fs, Xs, combo_owner = [], [], []
    for b, sample in enumerate(samples):
        combos = find_combinations(sample, candidates, frame_graph, map_graph, params.max_hops)
        if not combos:
            continue
        rows = [row_of[f] for f in sample]
        if params.num == 3:
            fs.append(np.broadcast_to(f_all[rows], (len(combos), 3, 3)))
            Xs.append(np.array([[map_anchor[m] for m in c] for c in combos]))
            combo_owner.append(np.full(len(combos), b))
        else:
            R, t = _pnp_hypotheses(combos, hyp.centers[rows], map_anchor, hyp.K)
            Rs.append(R)
            ts.append(t)
            owners.append(np.full(len(R), b))
    if fs:
        R, t, src = p3p_batch(np.concatenate(fs), np.concatenate(Xs))
        Rs.append(R)
        ts.append(t)
        owners.append(np.concatenate(combo_owner)[src])
    if not Rs:
        return np.zeros((0, 3, 3)), np.zeros((0, 3)), np.zeros(0, dtype=int)
    owner = np.concatenate(owners)
    order = np.argsort(owner, kind="stable")
    return np.concatenate(Rs)[order], np.concatenate(ts)[order], owner[order]


def reassign(frame_graph, map_graph, candidates, K, pose: PoseSE3, inlier_threshold=40.0):
    """Run the greedy candidate assignment once under a fixed ``pose``.

    Returns ``(num_inliers, AssociationSet)`` over the frame nodes that have
    candidates.
    """
    usable = [n.id for n in frame_graph.nodes if candidates.get(n.id)]
    if not usable:
        return 0, AssociationSet()
    hyp = _Hypotheses(frame_graph, map_graph, candidates, K, usable)
    err = hyp.errors(np.asarray(pose.rotation)[None], np.asarray(pose.translation)[None])[0]
    return hyp.update_match(err, inlier_threshold)


@dataclass
class RansacResult:
    associations: AssociationSet
    pose: PoseSE3
    num_inliers: int
    iterations: int
    hypotheses: int


def ransac_relocalize(
    frame_graph: SceneGraph,
    map_graph: SceneGraph,
    candidates: dict,
    K: CameraIntrinsics,
    params: RansacParams | None = None,
) -> RansacResult:
    """Node matching loop. Returns the best association set and its P3P pose.

    Iterations stop early once every usable frame node is an inlier (no later
    hypothesis could beat it). With ``params.confidence`` set they also stop
    once the chance of never having drawn an all-inlier sample, given the best
    inlier ratio so far, drops below ``1 - confidence``.
    """
    params = params or RansacParams()
    usable = [n.id for n in frame_graph.nodes if candidates.get(n.id)]
    if len(usable) < params.num:
        raise InsufficientDetections(f"{len(usable)} frame nodes with candidates, need {params.num}")
    hyp = _Hypotheses(frame_graph, map_graph, candidates, K, usable)
    f_all = bearings(hyp.centers, K)
    row_of = {f: r for r, f in enumerate(usable)}
    map_anchor = {n.id: n.anchor for n in map_graph.nodes}

    rng = np.random.default_rng(params.rng_seed)
    best = None
    best_count = 0
    n_hyp = 0
    it = 0
    while it < params.max_iter:
        # hypotheses for a block of iterations are solved and scored in one
        # batch; the sequential bookkeeping below is unchanged by this
        block = min(_ITER_BLOCK, params.max_iter - it)
        samples = [[usable[i] for i in rng.choice(len(usable), size=params.num, replace=False)] for _ in range(block)]
        R, t, owner = _block_hypotheses(samples, candidates, frame_graph, map_graph, hyp, f_all, row_of, map_anchor, params)
        err = hyp.errors(R, t) if len(R) else np.zeros((0, len(hyp.pair_map)))
        bound = hyp.upper_bound(err, params.inlier_threshold)
        for b in range(block):
            it += 1
            hs = np.flatnonzero(owner == b)
            n_hyp += len(hs)
            for h in hs:
                if bound[h] <= best_count:
                    continue
                count, matches = hyp.update_match(err[h], params.inlier_threshold)
                if count > best_count:
                    pose = PoseSE3(R[h], t[h])
                    if params.local_optimization:
                        count, matches, pose = _local_optimization(hyp, matches, pose, count, map_anchor, params)
                    best_count = count
                    best = (matches, pose)
            if _enough(best_count, len(usable), it, params):
                break
        if _enough(best_count, len(usable), it, params):
            break
    if best is None:
        raise NoValidPose("no candidate combination produced a pose")
    return RansacResult(best[0], best[1], best_count, it, n_hyp)
