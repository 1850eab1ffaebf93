"""Toy-scale evaluation metrics.

* motion fidelity: mean cosine between per-frame centroid displacements
* temporal consistency: mean cosine between consecutive frames' 4x4
  average-pooled features
* Frechet-Gaussian distance between clip sets in the same pooled space
* a shift-invariant nearest-template classifier for content category
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

POOL = 4


class EmptyFrameError(ValueError):
    """A frame has no positive intensity mass to track."""


def centroid_track(v: np.ndarray) -> np.ndarray:
    """Intensity-weighted centre of mass per frame, negatives clamped to 0."""
    if v.ndim != 4 or v.shape[-1] != 1:
        raise ValueError(f"centroid tracking needs a (F, H, W, 1) clip, got {v.shape}")
    x = np.clip(v[..., 0].astype(np.float64), 0.0, None)
    mass = x.sum(axis=(1, 2))
    empty = np.flatnonzero(mass <= 0)
    if empty.size:
        raise EmptyFrameError(f"frame {int(empty[0])} has zero intensity mass")
    rows = np.arange(x.shape[1], dtype=np.float64)
    cols = np.arange(x.shape[2], dtype=np.float64)
    r = (x.sum(axis=2) @ rows) / mass
    c = (x.sum(axis=1) @ cols) / mass
    return np.stack([r, c], axis=1)


def _pairwise_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine; zero/zero pairs count as 1, zero/non-zero as 0.

    Exactly parallel (``a == b``) and antiparallel (``a == -b``) rows are
    pinned to 1 and -1 so rounding cannot leave them a hair off.
    """
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    out = np.zeros(len(a))
    both = (na > 0) & (nb > 0)
    out[both] = np.einsum("ij,ij->i", a[both], b[both]) / (na[both] * nb[both])
    out[(na == 0) & (nb == 0)] = 1.0
    out[both & np.all(a == b, axis=1)] = 1.0
    out[both & np.all(a == -b, axis=1)] = -1.0
    return np.clip(out, -1.0, 1.0)


def motion_fidelity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"trajectory length mismatch: {a.shape} vs {b.shape}")
    if len(a) < 2:
        raise ValueError("motion fidelity needs at least two frames")
    return float(_pairwise_cosine(np.diff(a, axis=0), np.diff(b, axis=0)).mean())


def pooled_features(v: np.ndarray, pool: int = POOL) -> np.ndarray:
    """Per-frame ``pool x pool`` average-pooled features, shape (F, pool*pool*C)."""
    f, h, w, c = v.shape
    if h % pool or w % pool:
        raise ValueError(f"frame size {h}x{w} is not divisible by pool {pool}")
    x = v.astype(np.float64).reshape(f, pool, h // pool, pool, w // pool, c)
    return x.mean(axis=(2, 4)).reshape(f, -1)


def temporal_consistency(v: np.ndarray) -> float:
    if v.shape[0] < 2:
        raise ValueError("temporal consistency needs at least two frames")
    feats = pooled_features(v)
    return float(_pairwise_cosine(feats[:-1], feats[1:]).mean())


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    if vals.min() < -1e-8:
        raise ValueError(f"matrix is not positive semi-definite (min eigenvalue {vals.min():.3g})")
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_from_moments(mu1, cov1, mu2, cov2) -> float:
    """``|mu1-mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2))``.

    The cross term uses the symmetric form ``(S1^(1/2) S2 S1^(1/2))^(1/2)``,
    which has the same trace and keeps every square root on a symmetric
    matrix.
    """
    mu1, mu2 = np.asarray(mu1, dtype=np.float64), np.asarray(mu2, dtype=np.float64)
    cov1, cov2 = np.atleast_2d(cov1).astype(np.float64), np.atleast_2d(cov2).astype(np.float64)
    if mu1.shape != mu2.shape or cov1.shape != cov2.shape or cov1.shape[0] != mu1.shape[0]:
        raise ValueError("feature dimension mismatch between the two sets")
    s1 = _sqrtm_psd(cov1)
    cross = _sqrtm_psd(s1 @ cov2 @ s1)
    diff = mu1 - mu2
    val = float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * np.trace(cross))
    return max(val, 0.0)


def clip_feature(v: np.ndarray) -> np.ndarray:
    """One feature vector per clip: pooled features averaged over frames."""
    return pooled_features(v).mean(axis=0)


def frechet_gaussian(set_a, set_b) -> float:
    fa = np.stack([clip_feature(v) for v in set_a])
    fb = np.stack([clip_feature(v) for v in set_b])
    if len(fa) < 2 or len(fb) < 2:
        raise ValueError("each set needs at least two clips")
    return frechet_from_moments(fa.mean(0), np.cov(fa, rowvar=False), fb.mean(0), np.cov(fb, rowvar=False))


# content classifier


def spectral_features(v: np.ndarray) -> np.ndarray:
    """Translation-invariant frame descriptor: unit-norm 2-D FFT magnitude, averaged over frames."""
    x = np.clip(v[..., 0].astype(np.float64), 0.0, None)
    mag = np.abs(np.fft.rfft2(x))
    mag[:, 0, 0] = 0.0  # drop DC so overall brightness does not dominate
    norms = np.linalg.norm(mag.reshape(len(mag), -1), axis=1)
    mag /= np.where(norms > 0, norms, 1.0)[:, None, None]
    return mag.mean(axis=0).ravel()


@dataclass
class TemplateClassifier:
    """Nearest-template (cosine) classifier over spectral features."""

    templates: np.ndarray
    labels: tuple[int, ...] = field(default=(0, 1))

    @classmethod
    def fit(cls, clips, labels) -> "TemplateClassifier":
        labels = np.asarray(labels)
        feats = np.stack([spectral_features(v) for v in clips])
        uniq = tuple(int(k) for k in np.unique(labels))
        return cls(np.stack([feats[labels == k].mean(axis=0) for k in uniq]), uniq)

    def scores(self, v: np.ndarray) -> np.ndarray:
        f = spectral_features(v)
        t = self.templates
        return t @ f / (np.linalg.norm(t, axis=1) * max(np.linalg.norm(f), 1e-300))

    def predict(self, v: np.ndarray) -> int:
        return self.labels[int(np.argmax(self.scores(v)))]


# reporting


@dataclass
class MetricsReport:
    motion_fidelity: float
    temporal_consistency: float
    frechet_distance: float
    rows: list[dict] = field(default_factory=list)
    summary: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def _mean(xs):
    return float(np.mean(xs)) if len(xs) else float("nan")


def eval_report(manifest_rows, inputs: dict, outputs: dict, reference_trajectories: dict | None = None,
                csv_path=None) -> MetricsReport:
    """Score ``outputs`` against the manifest's reference clips.

    ``inputs``/``outputs`` map manifest ids to clips. Motion fidelity compares
    each output's tracked centroids with the reference trajectory (ground
    truth when given, else the tracked input). Missing outputs are reported
    and skipped.
    """
    rows, warnings = [], []
    for r in sorted(manifest_rows, key=lambda r: r["id"]):
        cid = r["id"]
        if cid not in outputs:
            warnings.append(f"missing output for {cid}")
            logger.warning("missing output for %s", cid)
            continue
        out = outputs[cid]
        ref_traj = (reference_trajectories or {}).get(cid)
        if ref_traj is None:
            ref_traj = centroid_track(inputs[cid])
        try:
            mf = motion_fidelity(ref_traj, centroid_track(out))
        except EmptyFrameError as exc:
            warnings.append(f"{cid}: {exc}")
            mf = 0.0
        rows.append(dict(id=cid, category=r["category"], motion_fidelity=mf,
                         temporal_consistency=temporal_consistency(out)))

    def frechet(ids):
        ins = [inputs[i] for i in ids]
        outs = [outputs[i] for i in ids]
        return frechet_gaussian(ins, outs) if len(ids) >= 2 else float("nan")

    summary = []
    cats = sorted({r["category"] for r in rows})
    for name, group in [(c, [r for r in rows if r["category"] == c]) for c in cats] + [("overall", rows)]:
        ids = [r["id"] for r in group]
        summary.append(dict(id=f"summary:{name}", category=name,
                            motion_fidelity=_mean([r["motion_fidelity"] for r in group]),
                            temporal_consistency=_mean([r["temporal_consistency"] for r in group]),
                            frechet=frechet(ids)))
    overall = summary[-1]
    report = MetricsReport(overall["motion_fidelity"], overall["temporal_consistency"], overall["frechet"],
                           rows, summary, warnings)
    if csv_path is not None:
        write_report_csv(csv_path, report)
    return report


def write_report_csv(path, report: MetricsReport) -> None:
    fields = ["id", "category", "motion_fidelity", "temporal_consistency", "frechet"]
    with open(Path(path), "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        wr.writeheader()
        for r in report.rows:
            wr.writerow({**r, "frechet": ""})
        for r in report.summary:
            wr.writerow(r)
        for w in report.warnings:
            wr.writerow(dict(id="warning", category=w, motion_fidelity="", temporal_consistency="", frechet=""))
