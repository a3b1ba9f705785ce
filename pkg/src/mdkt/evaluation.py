"""Image-to-video and video-to-video retrieval with CMC and mAP.

For I2V the first frame of every test clip is a query, encoded as a one-frame
clip by the same network that encodes the full-clip gallery. Gallery entries
sharing both identity and camera with the query are dropped before ranking.
"""

from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from .autodiff import no_grad
from .data import TEST
from .errors import ConfigError, ShapeError, UndefinedMetricError

MODES = ("I2V", "V2V")
NETWORKS = ("teacher", "student")
DISTANCES = ("euclidean", "sq_euclidean")


@dataclass(frozen=True)
class EvalProtocol:
    mode: str = "I2V"
    network: str = "student"
    distance: str = "euclidean"
    exclude_same_camera: bool = True

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}", "mode")
        if self.network not in NETWORKS:
            raise ConfigError(f"network must be one of {NETWORKS}", "network")
        if self.distance not in DISTANCES:
            raise ConfigError(f"distance must be one of {DISTANCES}", "distance")
        return self

    def query_frames(self, frames_per_clip):
        return 1 if self.mode == "I2V" else frames_per_clip


@dataclass
class RankingResult:
    """Per non-skipped query: gallery indices by ascending distance and a same-identity flag for each."""

    orders: list = field(default_factory=list)
    matches: list = field(default_factory=list)
    n_queries: int = 0
    n_skipped: int = 0

    def first_hit_ranks(self):
        return np.array([int(np.argmax(m)) + 1 for m in self.matches])


def extract_gallery(net, frames):
    """Clip representations ``(n, d)`` for a ``(n, n_frames, frame_dim)`` array, without recording a graph."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[2] != net.config.frame_dim:
        raise ShapeError(f"expected (n, n_frames, {net.config.frame_dim}) frames, got {frames.shape}")
    with no_grad():
        return mdl.encode_clips(net, frames).data.copy()


def distance_matrix(query, gallery, distance="euclidean"):
    diff = query[:, None, :] - gallery[None, :, :]
    sq = np.einsum("qgd,qgd->qg", diff, diff)
    return np.sqrt(sq) if distance == "euclidean" else sq


def rank(query_reps, gallery_reps, query_ids, query_cams, gallery_ids, gallery_cams,
         distance="euclidean", exclude_same_camera=True):
    query_reps = np.asarray(query_reps, dtype=np.float64)
    gallery_reps = np.asarray(gallery_reps, dtype=np.float64)
    if query_reps.ndim != 2 or gallery_reps.ndim != 2 or query_reps.shape[1] != gallery_reps.shape[1]:
        raise ShapeError(f"embedding dims differ: {query_reps.shape} vs {gallery_reps.shape}")
    if distance not in DISTANCES:
        raise ConfigError(f"distance must be one of {DISTANCES}", "distance")
    query_ids, query_cams = np.asarray(query_ids), np.asarray(query_cams)
    gallery_ids, gallery_cams = np.asarray(gallery_ids), np.asarray(gallery_cams)
    dist = distance_matrix(query_reps, gallery_reps, distance)
    result = RankingResult(n_queries=len(query_reps))
    for q in range(len(query_reps)):
        same_id = gallery_ids == query_ids[q]
        valid = ~(same_id & (gallery_cams == query_cams[q])) if exclude_same_camera else np.ones_like(same_id)
        if not (same_id & valid).any():
            result.n_skipped += 1
            continue
        candidates = np.flatnonzero(valid)
        order = candidates[np.argsort(dist[q, candidates], kind="stable")]
        result.orders.append(order)
        result.matches.append(same_id[order])
    return result


def _require_queries(results):
    if not results.matches:
        raise UndefinedMetricError("no query has a valid positive in the gallery")


def cmc(results, k):
    """Fraction of queries whose first correct match is within the top ``k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    _require_queries(results)
    return float(np.mean(results.first_hit_ranks() <= k))


def average_precision(matches):
    matches = np.asarray(matches, dtype=bool)
    hit_ranks = np.flatnonzero(matches) + 1
    precision_at_hits = np.arange(1, len(hit_ranks) + 1) / hit_ranks
    return float(precision_at_hits.mean())


def mean_average_precision(results):
    _require_queries(results)
    return float(np.mean([average_precision(m) for m in results.matches]))


def evaluate(net, dataset, protocol, seed=None, digest=None):
    """Retrieval report for ``net`` on the test split under ``protocol``."""
    protocol.validate()
    idx = dataset.indices(TEST)
    frames = dataset.frames[idx]
    ids, cams = dataset.identities[idx], dataset.cameras[idx]
    gallery = extract_gallery(net, frames)
    n_q = protocol.query_frames(dataset.config.frames_per_clip)
    queries = extract_gallery(net, frames[:, :n_q])
    results = rank(queries, gallery, ids, cams, ids, cams, protocol.distance, protocol.exclude_same_camera)
    return {
        "mode": protocol.mode,
        "network": protocol.network,
        "cmc1": cmc(results, 1),
        "cmc5": cmc(results, 5),
        "mAP": mean_average_precision(results),
        "n_queries": results.n_queries,
        "n_skipped": results.n_skipped,
        "seed": seed,
        "config_digest": digest,
    }
