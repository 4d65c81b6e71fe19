"""Cross-modal retrieval evaluation: CMC curve and mAP in both query directions."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import Modality, VideoSequence, stack_frames

DIRECTIONS = {
    "infrared_to_visible": (Modality.INFRARED, Modality.VISIBLE),
    "visible_to_infrared": (Modality.VISIBLE, Modality.INFRARED),
}
REPORT_RANKS = (1, 5, 10, 20)


def _ranked_matches(distances, query_labels, gallery_labels, query_cams=None, gallery_cams=None,
                    exclude_same_camera=False):
    """Per-query boolean hit lists in ranked order, with junk gallery items removed.

    Ranking is a stable ascending sort, so ties resolve by gallery index.
    """
    distances = np.asarray(distances, dtype=np.float64)
    q_labels = np.asarray(query_labels)
    g_labels = np.asarray(gallery_labels)
    if distances.shape != (len(q_labels), len(g_labels)):
        raise ValueError(f"distance matrix {distances.shape} does not match "
                         f"{len(q_labels)} queries x {len(g_labels)} gallery items")
    order = np.argsort(distances, axis=1, kind="stable")
    hits = []
    for qi in range(len(q_labels)):
        idx = order[qi]
        match = g_labels[idx] == q_labels[qi]
        if exclude_same_camera:
            if query_cams is None or gallery_cams is None:
                raise ValueError("camera filtering needs query and gallery camera ids")
            junk = match & (np.asarray(gallery_cams)[idx] == query_cams[qi])
            match = match[~junk]
        hits.append(match)
    return hits


def _valid(hits):
    valid = [h for h in hits if h.any()]
    skipped = len(hits) - len(valid)
    if skipped:
        warnings.warn(f"{skipped} queries have no correct gallery match and were excluded")
    if not valid:
        raise ValueError("no query has a correct match in the gallery")
    return valid, skipped


def cmc_curve(distances, query_labels, gallery_labels, query_cams=None, gallery_cams=None,
              exclude_same_camera=False) -> np.ndarray:
    """Fraction of valid queries with a correct item within the top r, for r = 1..num_gallery."""
    hits, _ = _valid(_ranked_matches(distances, query_labels, gallery_labels, query_cams,
                                     gallery_cams, exclude_same_camera))
    num_gallery = np.asarray(distances).shape[1]
    curve = np.zeros(num_gallery)
    for h in hits:
        first = int(np.argmax(h))
        curve[first:] += 1
    return curve / len(hits)


def average_precision(hits: np.ndarray) -> float:
    positions = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, len(positions) + 1) / positions))


def mean_average_precision(distances, query_labels, gallery_labels, query_cams=None, gallery_cams=None,
                           exclude_same_camera=False) -> float:
    hits, _ = _valid(_ranked_matches(distances, query_labels, gallery_labels, query_cams,
                                     gallery_cams, exclude_same_camera))
    return float(np.mean([average_precision(h) for h in hits]))


def euclidean_distances(query: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64)
    g = np.asarray(gallery, dtype=np.float64)
    return np.sqrt(((q[:, None, :] - g[None, :, :]) ** 2).sum(-1))


@dataclass
class RetrievalResult:
    direction: str
    distances: np.ndarray
    query_labels: np.ndarray
    gallery_labels: np.ndarray
    query_cams: np.ndarray
    gallery_cams: np.ndarray
    cmc: np.ndarray
    mAP: float
    num_invalid: int = 0

    def rank(self, r: int) -> float:
        return float(self.cmc[min(r, len(self.cmc)) - 1])

    def summary(self) -> dict:
        out = {"direction": self.direction}
        for r in REPORT_RANKS:
            out[f"rank{r}"] = self.rank(r)
        out["mAP"] = self.mAP
        return out


@torch.no_grad()
def extract_descriptors(model, sequences: list[VideoSequence], batch_size: int = 32) -> np.ndarray:
    """Inference-mode descriptors; each sequence uses its own modality's stem."""
    if not sequences:
        raise ValueError("no sequences to describe")
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    out = np.zeros((len(sequences), model.descriptor_dim))
    try:
        for modality in Modality:
            idx = [k for k, s in enumerate(sequences) if s.modality is modality]
            for start in range(0, len(idx), batch_size):
                chunk = idx[start : start + batch_size]
                frames = stack_frames([sequences[k] for k in chunk], dtype)
                out[chunk] = model.describe(frames, modality).double().numpy()
    finally:
        model.train(was_training)
    return out


def evaluate_descriptors(direction: str, query_desc, gallery_desc, query: list[VideoSequence],
                         gallery: list[VideoSequence], exclude_same_camera: bool = False) -> RetrievalResult:
    q_labels = np.array([s.identity for s in query])
    g_labels = np.array([s.identity for s in gallery])
    q_cams = np.array([s.camera_id for s in query])
    g_cams = np.array([s.camera_id for s in gallery])
    dist = euclidean_distances(query_desc, gallery_desc)
    hits = _ranked_matches(dist, q_labels, g_labels, q_cams, g_cams, exclude_same_camera)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cmc = cmc_curve(dist, q_labels, g_labels, q_cams, g_cams, exclude_same_camera)
        mAP = mean_average_precision(dist, q_labels, g_labels, q_cams, g_cams, exclude_same_camera)
    return RetrievalResult(direction, dist, q_labels, g_labels, q_cams, g_cams, cmc, mAP,
                           num_invalid=sum(not h.any() for h in hits))


def evaluate(model, dataset, direction: str, exclude_same_camera: bool = False) -> RetrievalResult:
    """Query with one modality against a gallery of the other."""
    if direction not in DIRECTIONS:
        raise ValueError(f"unknown direction {direction!r}; expected one of {list(DIRECTIONS)}")
    q_mod, g_mod = DIRECTIONS[direction]
    query, gallery = dataset.eval_split(q_mod), dataset.eval_split(g_mod)
    if not query or not gallery:
        raise ValueError("query and gallery splits must be non-empty")
    return evaluate_descriptors(direction, extract_descriptors(model, query),
                                extract_descriptors(model, gallery), query, gallery,
                                exclude_same_camera)


def write_result(result: RetrievalResult, out_dir: str | Path):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"eval_{result.direction}.json").write_text(json.dumps(result.summary(), indent=1))
    with open(out_dir / f"cmc_{result.direction}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "rate"])
        for r, v in enumerate(result.cmc, 1):
            w.writerow([r, repr(float(v))])
