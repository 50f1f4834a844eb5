"""Simultaneous behavior segmentation and abstraction selection.

A demonstration is segmented by MAP changepoint detection over a candidate
set of abstractions. Hidden state = the abstraction generating each segment;
segment lengths follow a geometric prior; segment evidence combines how close
the hand ends to the hypothesized reference object (p_ref) with whether each
relevant object co-moves with the hand (p_rel). All probability arithmetic is
carried in the log domain, and the dynamic program is exact (no particle
pruning): desk-scale demos keep O(T^2 |Q|) affordable.

Conventions: a changepoint at time j means the next segment covers frames
j+1..t and reuses frame j as its motion baseline, so consecutive reported
segments share their boundary frame. A segment must contain at least two new
frames (n = t - j - 1 >= 1 displacement step).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .core import Abstraction, Demonstration, InsufficientDataError, SkillPipeError

MIN_SEG_LEN = 2  # new frames per segment; p_rel needs >= 1 displacement


class EmptyCandidateError(SkillPipeError):
    """No candidate abstraction can be formed (no objects)."""


@dataclass
class SegPrior:
    """Segmentation prior: expected skill length k (frames) for the geometric
    length model, the co-movement threshold d_thresh (meters per frame), and
    the candidate-model prior (uniform when None)."""

    expected_len_k: float = 100.0
    d_thresh: float = 0.02
    displacement_mode: bool = True  # False: literal mean hand-object distance
    model_prior: dict | None = None

    def __post_init__(self):
        if self.expected_len_k < 2:
            raise ValueError("expected_len_k must be >= 2")
        if self.d_thresh <= 0:
            raise ValueError("d_thresh must be positive")

    @property
    def p(self):
        return 1.0 / self.expected_len_k

    def log_g(self, length: int) -> float:
        """log geometric pmf g(l) = (1-p)^(l-1) p."""
        return (length - 1) * np.log1p(-self.p) + np.log(self.p)

    def log_survival(self, length: int) -> float:
        """log (1 - G(l)) = l log(1-p)."""
        return length * np.log1p(-self.p)

    def log_model_prior(self, q: Abstraction, n_candidates: int) -> float:
        if self.model_prior is None:
            return -np.log(n_candidates)
        return np.log(self.model_prior[q])


@dataclass
class Segment:
    start: int
    end: int
    abstraction: Abstraction
    log_map: float


@dataclass
class SegmentationResult:
    segments: list[Segment]
    total_log_map: float

    def to_json_obj(self, hand_id: str):
        return [{"start": s.start, "end": s.end,
                 **s.abstraction.describe(hand_id),
                 "log_map": s.log_map} for s in self.segments]

    def to_json(self, hand_id: str) -> str:
        return json.dumps(self.to_json_obj(hand_id), indent=2)


def segmentation_from_json(text: str) -> list[dict]:
    return json.loads(text)


def candidate_abstractions(entity_ids) -> list[Abstraction]:
    """Every <relevant, reference> combination: reference ranges over objects,
    relevant = hand plus any subset of the remaining objects. Deterministic
    order: references ascending, subsets by size then lexicographically."""
    entity_ids = list(entity_ids)
    hand_id, object_ids = entity_ids[0], sorted(entity_ids[1:])
    if not object_ids:
        raise EmptyCandidateError("need at least one object")
    out = []
    for ref in object_ids:
        rest = [o for o in object_ids if o != ref]
        for size in range(len(rest) + 1):
            for subset in combinations(rest, size):
                out.append(Abstraction(frozenset({hand_id, *subset}), ref))
    return out


def p_ref(demo: Demonstration, t: int, j: int, o_ref: str) -> float:
    """log p_ref = -n * ||loc_t^hand - loc_t^ref|| with n = t - j - 1."""
    n = t - j - 1
    if n < 1:
        raise ValueError("segment must satisfy t - j - 1 >= 1")
    d = np.linalg.norm(demo.frames[t].pose_of(demo.hand_id).loc
                       - demo.frames[t].pose_of(o_ref).loc)
    return -n * d


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _mean_codeviation(demo, j, t, o_i, displacement_mode):
    """d-bar over frames j+1..t: mean per-frame displacement difference
    between hand and object (or literal mean distance in literal mode)."""
    hand = demo.hand_id
    if displacement_mode:
        vals = []
        for k in range(j + 1, t + 1):
            dh = demo.frames[k].pose_of(hand).loc - demo.frames[k - 1].pose_of(hand).loc
            do = demo.frames[k].pose_of(o_i).loc - demo.frames[k - 1].pose_of(o_i).loc
            vals.append(np.linalg.norm(dh - do))
    else:
        vals = [np.linalg.norm(demo.frames[k].pose_of(hand).loc
                               - demo.frames[k].pose_of(o_i).loc)
                for k in range(j + 1, t + 1)]
    return float(np.mean(vals))


def p_rel(demo: Demonstration, j: int, t: int, o_i: str,
          prior: SegPrior | None = None) -> float:
    """log p_rel: 0 for the hand itself; otherwise +n(1 - sigma(100 d-bar))
    when d-bar <= d_thresh (co-moving) and -n sigma(100 d-bar) when not."""
    if o_i == demo.hand_id:
        return 0.0
    prior = prior or SegPrior()
    n = t - j - 1
    if n < 1:
        raise ValueError("segment must satisfy t - j - 1 >= 1")
    dbar = _mean_codeviation(demo, j, t, o_i, prior.displacement_mode)
    s = _sigmoid(100.0 * dbar)
    if dbar <= prior.d_thresh:
        return n * (1.0 - s)
    return -n * s


def model_evidence(demo: Demonstration, j: int, t: int, q: Abstraction,
                   prior: SegPrior | None = None) -> float:
    """log P(j, t, q) = log p_ref + sum of log p_rel over the relevant set."""
    prior = prior or SegPrior()
    total = p_ref(demo, t, j, q.reference)
    for o in q.relevant:
        total += p_rel(demo, j, t, o, prior)
    return total


class _EvidenceTable:
    """Vectorized evidence evaluation backed by cumulative sums.

    p_ref needs per-frame hand-to-object distances; p_rel needs cumulative
    per-frame co-deviation sums, so any (j, t, q) evidence is O(|relevant|).
    """

    def __init__(self, demo: Demonstration, prior: SegPrior):
        self.prior = prior
        hand = demo.locations(demo.hand_id)
        self.T = len(demo)
        self.dist = {}      # object -> (T,) hand distance per frame
        self.cum_dev = {}   # object -> (T,) cumulative co-deviation sums
        for o in demo.object_ids:
            obj = demo.locations(o)
            self.dist[o] = np.linalg.norm(hand - obj, axis=1)
            if prior.displacement_mode:
                step = np.linalg.norm(np.diff(hand, axis=0)
                                      - np.diff(obj, axis=0), axis=1)
            else:
                step = self.dist[o][1:]
            cum = np.zeros(self.T)
            cum[1:] = np.cumsum(step)
            self.cum_dev[o] = cum

    def log_p_ref(self, j, t, ref):
        return -(t - j - 1) * self.dist[ref][t]

    def log_p_rel(self, j, t, o):
        n = t - j - 1
        dbar = (self.cum_dev[o][t] - self.cum_dev[o][j]) / (t - j)
        s = _sigmoid(100.0 * dbar)
        if dbar <= self.prior.d_thresh:
            return n * (1.0 - s)
        return -n * s

    def log_evidence(self, j, t, q: Abstraction, hand_id):
        total = self.log_p_ref(j, t, q.reference)
        for o in q.relevant:
            if o != hand_id:
                total += self.log_p_rel(j, t, o)
        return total

    def evidence_vec(self, js: np.ndarray, t: int, q: Abstraction, hand_id):
        """log evidence for segments (j, t] over a vector of start times."""
        n = t - js - 1
        total = -n * self.dist[q.reference][t]
        for o in q.relevant:
            if o == hand_id:
                continue
            dbar = (self.cum_dev[o][t] - self.cum_dev[o][js]) / (t - js)
            s = _sigmoid(100.0 * dbar)
            total = total + np.where(dbar <= self.prior.d_thresh,
                                     n * (1.0 - s), -n * s)
        return total


def _segment_score(table, prior, j, t, q, hand_id, n_candidates):
    """Per-segment contribution to the MAP objective:
    log evidence + log p(q) + log g(segment length)."""
    return (table.log_evidence(j, t, q, hand_id)
            + prior.log_model_prior(q, n_candidates)
            + prior.log_g(t - j))


def map_segment(demo: Demonstration, prior: SegPrior | None = None,
                candidates: list[Abstraction] | None = None) -> SegmentationResult:
    """Exact MAP changepoint detection with per-segment model selection.

    Viterbi recursion over changepoint times: P_j_MAP = max over (i, q) of
    [evidence(i, j, q) * p(q) * g(j - i) * P_i_MAP], traced back from the
    final frame. Ties break toward the later changepoint, then earlier
    candidate order.
    """
    prior = prior or SegPrior()
    if len(demo) < 4:
        raise InsufficientDataError("segmentation needs >= 4 frames")
    if candidates is None:
        candidates = candidate_abstractions(demo.frames[0].entity_ids)
    if not candidates:
        raise EmptyCandidateError("empty candidate list")
    nq = len(candidates)
    table = _EvidenceTable(demo, prior)
    T = len(demo)
    last = T - 1

    log_map = np.full(T, -np.inf)
    log_map[0] = 0.0
    back = [None] * T  # time -> (prev changepoint, candidate index)
    log_1mp = np.log1p(-prior.p)
    log_p = np.log(prior.p)

    for t in range(MIN_SEG_LEN, T):
        js = np.arange(0, t - MIN_SEG_LEN + 1)
        base = log_map[js] + (t - js - 1) * log_1mp + log_p
        scores = np.empty((nq, len(js)))
        for qi, q in enumerate(candidates):
            scores[qi] = (base + table.evidence_vec(js, t, q, demo.hand_id)
                          + prior.log_model_prior(q, nq))
        best = scores.max()
        if not np.isfinite(best):
            continue
        # ties break toward the later changepoint, then candidate order
        tie_q, tie_j = np.nonzero(scores == best)
        best_j = int(tie_j.max())
        best_qi = int(tie_q[tie_j == tie_j.max()].min())
        log_map[t] = best
        back[t] = (int(js[best_j]), best_qi)

    if not np.isfinite(log_map[last]):
        raise InsufficientDataError("no feasible segmentation")

    segments = []
    t = last
    while t > 0:
        j, qi = back[t]
        q = candidates[qi]
        score = (log_map[t] - log_map[j])
        segments.append(Segment(j, t, q, score))
        t = j
    segments.reverse()
    return SegmentationResult(segments, float(log_map[last]))


def exhaustive_map_segment(demo: Demonstration, prior: SegPrior | None = None,
                           candidates: list[Abstraction] | None = None
                           ) -> SegmentationResult:
    """Brute-force oracle: enumerate every changepoint placement, score each
    segment with its best candidate, take the global maximum. Only feasible
    for short demos; used to validate the dynamic program."""
    prior = prior or SegPrior()
    if len(demo) < 4:
        raise InsufficientDataError("segmentation needs >= 4 frames")
    if candidates is None:
        candidates = candidate_abstractions(demo.frames[0].entity_ids)
    nq = len(candidates)
    table = _EvidenceTable(demo, prior)
    last = len(demo) - 1

    def placements(start):
        # all increasing changepoint tuples from `start` to `last`, gaps >= 2
        if start == last:
            yield ()
            return
        for nxt in range(start + MIN_SEG_LEN, last + 1):
            if nxt == last:
                yield (last,)
            elif last - nxt >= MIN_SEG_LEN:
                for rest in placements(nxt):
                    yield (nxt, *rest)

    best_total = -np.inf
    best_segments = None
    for cps in placements(0):
        bounds = [0, *cps]
        total = 0.0
        segs = []
        for a, b in zip(bounds[:-1], bounds[1:]):
            seg_best = -np.inf
            seg_q = None
            for q in candidates:
                s = _segment_score(table, prior, a, b, q, demo.hand_id, nq)
                if s > seg_best:
                    seg_best, seg_q = s, q
            total += seg_best
            segs.append(Segment(a, b, seg_q, seg_best))
        if total > best_total:
            best_total = total
            best_segments = segs
    return SegmentationResult(best_segments, float(best_total))


def rank_candidates(demo: Demonstration, j: int, t: int,
                    prior: SegPrior | None = None,
                    candidates: list[Abstraction] | None = None,
                    alpha_model: float = 0.2):
    """Candidates for the segment (j, t] sorted by posterior weight,
    keeping the maximum plus every candidate whose ratio to it exceeds
    alpha_model. Returns (abstraction, log score) pairs, descending."""
    prior = prior or SegPrior()
    if candidates is None:
        candidates = candidate_abstractions(demo.frames[0].entity_ids)
    nq = len(candidates)
    scored = []
    for qi, q in enumerate(candidates):
        s = (model_evidence(demo, j, t, q, prior)
             + prior.log_model_prior(q, nq))
        scored.append((qi, q, s))
    scored.sort(key=lambda r: (-r[2], r[0]))
    log_alpha = -np.inf if alpha_model <= 0.0 else np.log(alpha_model)
    best = scored[0][2]
    out = [(scored[0][1], scored[0][2])]
    for qi, q, s in scored[1:]:
        if s - best > log_alpha:
            out.append((q, s))
    return out
