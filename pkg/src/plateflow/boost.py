"""Desk-scale attentional-cascade training.

Decision stumps via exhaustive threshold search, discrete AdaBoost per stage,
and stage-threshold tuning to hit per-stage true/false-positive targets.
Training is fully deterministic: the feature pool order and all tie-breaks
are fixed, and no randomness is used anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .haar import (
    DEFAULT_BASE_WINDOW,
    CascadeModel,
    CascadeStage,
    GrayFrame,
    HaarFeature,
    Stump,
    integral_image,
    scaled_feature_layout,
)

EPS_FLOOR = 1e-10


@dataclass(frozen=True)
class TrainingSet:
    """Base-window-sized positive (plate) and negative (background) patches."""

    positives: list[GrayFrame]
    negatives: list[GrayFrame]

    def validate(self, base_window: tuple[int, int]) -> None:
        if not self.positives or not self.negatives:
            raise ValueError("training set needs both positive and negative patches")
        bw, bh = base_window
        for p in self.positives + self.negatives:
            if (p.width, p.height) != (bw, bh):
                raise ValueError(
                    f"patch is {p.width}x{p.height}, expected base window {bw}x{bh}"
                )


@dataclass(frozen=True)
class StageTargets:
    min_stage_tpr: float = 0.995
    max_stage_fpr: float = 0.5
    max_stumps_per_stage: int = 50
    max_stages: int = 10

    def __post_init__(self):
        if not 0 < self.max_stage_fpr < 1:
            raise ValueError("max_stage_fpr must be in (0,1)")
        if not 0 < self.min_stage_tpr <= 1:
            raise ValueError("min_stage_tpr must be in (0,1]")
        if self.max_stumps_per_stage < 1 or self.max_stages < 1:
            raise ValueError("stage/stump limits must be >= 1")


@dataclass(frozen=True)
class StumpCandidate:
    threshold: float
    polarity: int
    weighted_error: float


def generate_feature_pool(
    base_window: tuple[int, int] = DEFAULT_BASE_WINDOW,
    position_stride: int = 2,
    size_stride: int = 2,
    min_size: int = 4,
) -> list[HaarFeature]:
    """Exhaustive haar feature pool over the base window, in a fixed order."""
    bw, bh = base_window
    pool: list[HaarFeature] = []
    for kind in (
        "two-rect-horizontal",
        "two-rect-vertical",
        "three-rect-horizontal",
        "three-rect-vertical",
        "four-rect-checker",
    ):
        for w in range(min_size, bw + 1, size_stride):
            for h in range(min_size, bh + 1, size_stride):
                try:
                    probe = HaarFeature(kind=kind, x=0, y=0, w=w, h=h)
                except ValueError:
                    continue
                for x in range(0, bw - w + 1, position_stride):
                    for y in range(0, bh - h + 1, position_stride):
                        if x == 0 and y == 0:
                            pool.append(probe)
                        else:
                            pool.append(HaarFeature(kind=kind, x=x, y=y, w=w, h=h))
    return pool


def feature_matrix(patches: list[GrayFrame], features: list[HaarFeature]) -> np.ndarray:
    """(n_patches, n_features) response matrix at scale 1, window origin (0,0)."""
    sats = np.stack([integral_image(p).table for p in patches])  # (n, bh+1, bw+1)
    n = len(patches)
    out = np.empty((n, len(features)), dtype=np.float64)
    for j, f in enumerate(features):
        white, black, area = scaled_feature_layout(f, 1.0)
        acc = np.zeros(n, dtype=np.int64)
        for (rx, ry, rw, rh) in white:
            acc += (
                sats[:, ry + rh, rx + rw]
                - sats[:, ry, rx + rw]
                - sats[:, ry + rh, rx]
                + sats[:, ry, rx]
            )
        for (rx, ry, rw, rh) in black:
            acc -= (
                sats[:, ry + rh, rx + rw]
                - sats[:, ry, rx + rw]
                - sats[:, ry + rh, rx]
                + sats[:, ry, rx]
            )
        out[:, j] = acc / area
    return out


def train_stump(
    feature_values: np.ndarray, labels: np.ndarray, weights: np.ndarray
) -> StumpCandidate:
    """Best single-feature threshold/polarity by exhaustive midpoint search.

    Thresholds are midpoints between adjacent sorted distinct values, or
    +/-inf at the extremes. Ties resolve to the lowest threshold, then
    polarity +1.
    """
    v = np.asarray(feature_values, dtype=np.float64)
    y = np.asarray(labels)
    w = np.asarray(weights, dtype=np.float64)
    if v.ndim != 1 or v.shape != y.shape or v.shape != w.shape or v.size < 2:
        raise ValueError("need equal-length 1-D arrays with at least 2 samples")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    thr, pol, err = _best_stump(v[:, None], y, w, np.argsort(v, kind="stable")[:, None])[1:]
    return StumpCandidate(threshold=thr, polarity=pol, weighted_error=err)


def _best_stump(X, y, w, order):
    """Best (feature, threshold, polarity, error) over a feature-value matrix.

    ``order`` is the per-column stable argsort of X, precomputed once since X
    never changes across boosting rounds. Tie-break: lowest feature index,
    then lowest cut position (lowest threshold), then polarity +1.
    """
    n, nf = X.shape
    w_pos = np.where(y > 0, w, 0.0)
    w_neg = np.where(y > 0, 0.0, w)
    total_pos = w_pos.sum()
    total_neg = w_neg.sum()
    total = total_pos + total_neg

    best = (np.inf, -1, 0.0, 1)  # error, feature, threshold, polarity
    chunk = 512
    for c0 in range(0, nf, chunk):
        c1 = min(c0 + chunk, nf)
        idx = order[:, c0:c1]
        Xs = np.take_along_axis(X[:, c0:c1], idx, axis=0)
        cum_pos = np.cumsum(w_pos[idx], axis=0)
        cum_neg = np.cumsum(w_neg[idx], axis=0)
        # err_plus[c]: predict +1 strictly above the cut after c sorted samples
        err_plus = np.empty((n + 1, c1 - c0))
        err_plus[0] = total_neg
        err_plus[1:] = cum_pos + (total_neg - cum_neg)
        err_minus = total - err_plus
        # cuts between equal adjacent values have no realizable threshold
        invalid = Xs[:-1] == Xs[1:]
        err_plus[1:-1][invalid] = np.inf
        err_minus[1:-1][invalid] = np.inf

        err = np.minimum(err_plus, err_minus)
        cuts = np.argmin(err, axis=0)  # first occurrence = lowest threshold
        cols = np.arange(c1 - c0)
        col_err = err[cuts, cols]
        j = int(np.argmin(col_err))
        if col_err[j] < best[0]:
            cut = int(cuts[j])
            if cut == 0:
                thr = -math.inf
            elif cut == n:
                thr = math.inf
            else:
                thr = (Xs[cut - 1, j] + Xs[cut, j]) / 2.0
            pol = 1 if err_plus[cut, j] <= err_minus[cut, j] else -1
            best = (float(col_err[j]), c0 + j, float(thr), pol)
    err, feat, thr, pol = best
    return feat, thr, pol, err


def _stump_outputs(X, stump: Stump) -> np.ndarray:
    v = X[:, stump.feature_id]
    return np.where(stump.polarity * (v - stump.threshold) > 0, 1.0, -1.0)


def _stage_threshold_for_tpr(pos_scores: np.ndarray, min_tpr: float) -> float:
    """Largest threshold keeping at least ``min_tpr`` of positives at or above it."""
    need = math.ceil(min_tpr * pos_scores.size)
    return float(np.sort(pos_scores)[::-1][need - 1])


@dataclass
class TrainedStage:
    stage: CascadeStage
    tpr: float
    fpr: float
    final_weights: np.ndarray


def train_stage_on_values(
    X: np.ndarray,
    y: np.ndarray,
    targets: StageTargets,
    carry_weights: np.ndarray | None = None,
) -> TrainedStage:
    """Discrete AdaBoost on a precomputed feature-value matrix.

    Adds stumps until the stage, with its threshold lowered to meet the
    per-stage TPR target on positives, reaches the FPR target on negatives,
    or the stump budget runs out.
    """
    n = X.shape[0]
    pos_mask = y > 0
    n_pos = int(pos_mask.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("stage training needs both classes present")
    if carry_weights is not None:
        w = np.asarray(carry_weights, dtype=np.float64).copy()
        w /= w.sum()
    else:
        # balanced init: half the mass per class
        w = np.where(pos_mask, 0.5 / n_pos, 0.5 / n_neg)

    order = np.argsort(X, axis=0, kind="stable")
    stumps: list[Stump] = []
    scores = np.zeros(n)
    stage_thr = -math.inf
    tpr = fpr = 0.0
    for _ in range(targets.max_stumps_per_stage):
        feat, thr, pol, err = _best_stump(X, y, w, order)
        if err >= 0.5 and stumps:
            break
        eps = min(max(err, EPS_FLOOR), 1 - EPS_FLOOR)
        alpha = 0.5 * math.log((1 - eps) / eps)
        stump = Stump(feature_id=feat, threshold=thr, polarity=pol, alpha=alpha)
        h = _stump_outputs(X, stump)
        stumps.append(stump)
        scores = scores + alpha * h
        w = w * np.exp(-alpha * y * h)
        w /= w.sum()

        stage_thr = _stage_threshold_for_tpr(scores[pos_mask], targets.min_stage_tpr)
        tpr = float(np.mean(scores[pos_mask] >= stage_thr))
        fpr = float(np.mean(scores[~pos_mask] >= stage_thr))
        if fpr <= targets.max_stage_fpr:
            break
    return TrainedStage(
        stage=CascadeStage(stumps=tuple(stumps), stage_threshold=stage_thr),
        tpr=tpr,
        fpr=fpr,
        final_weights=w,
    )


def train_stage(
    train: TrainingSet,
    features: list[HaarFeature],
    targets: StageTargets | None = None,
    carry_weights: np.ndarray | None = None,
) -> TrainedStage:
    targets = targets or StageTargets()
    if not features:
        raise ValueError("feature list must be non-empty")
    X = feature_matrix(train.positives + train.negatives, features)
    y = np.concatenate([np.ones(len(train.positives)), -np.ones(len(train.negatives))])
    return train_stage_on_values(X, y, targets, carry_weights)


def _stage_accepts(X, stage: CascadeStage) -> np.ndarray:
    scores = np.zeros(X.shape[0])
    for stump in stage.stumps:
        scores += stump.alpha * _stump_outputs(X, stump)
    return scores >= stage.stage_threshold


def _permissive_model(base_window, warning: str) -> CascadeModel:
    f = HaarFeature(kind="two-rect-horizontal", x=0, y=0, w=2, h=2)
    stump = Stump(feature_id=0, threshold=-math.inf, polarity=1, alpha=1.0)
    stage = CascadeStage(stumps=(stump,), stage_threshold=-math.inf)
    return CascadeModel(
        base_window=base_window, features=(f,), stages=(stage,), warnings=(warning,)
    )


def _remap_features(features, stages):
    """Keep only referenced features and renumber stump feature_ids."""
    used = sorted({s.feature_id for st in stages for s in st.stumps})
    remap = {old: new for new, old in enumerate(used)}
    kept = tuple(features[i] for i in used)
    new_stages = tuple(
        CascadeStage(
            stumps=tuple(
                Stump(remap[s.feature_id], s.threshold, s.polarity, s.alpha)
                for s in st.stumps
            ),
            stage_threshold=st.stage_threshold,
        )
        for st in stages
    )
    return kept, new_stages


def train_cascade(
    train: TrainingSet,
    targets: StageTargets | None = None,
    base_window: tuple[int, int] = DEFAULT_BASE_WINDOW,
    features: list[HaarFeature] | None = None,
) -> CascadeModel:
    """Train stages sequentially, bootstrapping negatives within the pool.

    After each stage, negatives rejected by the cascade-so-far are dropped so
    the next stage sees only surviving false positives. Stops at max_stages,
    an empty negative pool, or once the cumulative FPR target is met.
    """
    targets = targets or StageTargets()
    train.validate(base_window)
    if features is None:
        features = generate_feature_pool(base_window)

    X_pos = feature_matrix(train.positives, features)
    X_neg = feature_matrix(train.negatives, features)
    n_neg_total = X_neg.shape[0]

    stages: list[CascadeStage] = []
    warnings: list[str] = []
    for _ in range(targets.max_stages):
        if X_neg.shape[0] == 0:
            if not stages:
                return _permissive_model(
                    base_window, "negative pool empty before first stage; permissive cascade"
                )
            break
        X = np.vstack([X_pos, X_neg])
        y = np.concatenate([np.ones(X_pos.shape[0]), -np.ones(X_neg.shape[0])])
        trained = train_stage_on_values(X, y, targets)
        stages.append(trained.stage)
        # only false positives survive into the next stage's pool
        X_neg = X_neg[_stage_accepts(X_neg, trained.stage)]
        if X_neg.shape[0] / n_neg_total <= targets.max_stage_fpr**targets.max_stages:
            break

    kept, new_stages = _remap_features(features, stages)
    return CascadeModel(
        base_window=base_window,
        features=kept,
        stages=new_stages,
        warnings=tuple(warnings),
    )
