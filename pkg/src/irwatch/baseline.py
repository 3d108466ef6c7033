"""Deterministic people-counting baseline: background subtraction over a
trailing frame window, fixed temperature threshold, 4-connected blob count.

This is a reconstruction of the classic pipeline used by vendor firmware for
8x8 thermal arrays (the original algorithm is closed source; only its
8-frame background window is public). Every reported figure from this module
should be labeled "reconstructed baseline".
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics
from .data import Frame


@dataclass(frozen=True)
class BaselineConfig:
    bg_window: int = 8
    delta_threshold: float = 1.5  # degC above background
    min_blob_area: int = 2  # pixels
    # connectivity is fixed 4-neighbor

    def __post_init__(self):
        if self.bg_window < 1:
            raise ValueError("bg_window must be >= 1")
        if not self.delta_threshold > 0:
            raise ValueError("delta_threshold must be positive")
        if self.min_blob_area < 1:
            raise ValueError("min_blob_area must be >= 1")


def _pixels(frame) -> np.ndarray:
    if isinstance(frame, Frame):
        return frame.pixels
    return np.asarray(frame, dtype=np.float32)


def label_components(mask: np.ndarray) -> int:
    """Count 4-connected components of a boolean grid (iterative flood fill)."""
    mask = np.asarray(mask, dtype=bool)
    seen = np.zeros_like(mask)
    h, w = mask.shape
    count = 0
    for i in range(h):
        for j in range(w):
            if not mask[i, j] or seen[i, j]:
                continue
            count += 1
            stack = [(i, j)]
            seen[i, j] = True
            while stack:
                r, c = stack.pop()
                for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if 0 <= rr < h and 0 <= cc < w and mask[rr, cc] and not seen[rr, cc]:
                        seen[rr, cc] = True
                        stack.append((rr, cc))
    return count


def component_areas(mask: np.ndarray) -> list[int]:
    mask = np.asarray(mask, dtype=bool)
    seen = np.zeros_like(mask)
    h, w = mask.shape
    areas = []
    for i in range(h):
        for j in range(w):
            if not mask[i, j] or seen[i, j]:
                continue
            area = 0
            stack = [(i, j)]
            seen[i, j] = True
            while stack:
                r, c = stack.pop()
                area += 1
                for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if 0 <= rr < h and 0 <= cc < w and mask[rr, cc] and not seen[rr, cc]:
                        seen[rr, cc] = True
                        stack.append((rr, cc))
            areas.append(area)
    return areas


def foreground_mask(frames_window, config: BaselineConfig = BaselineConfig()) -> np.ndarray:
    """Current pixel > mean of the trailing bg_window history frames + delta.

    The window is history plus the current frame as its last element, so it
    must hold at least bg_window + 1 frames.
    """
    pix = [_pixels(f) for f in frames_window]
    if len(pix) < config.bg_window + 1:
        raise ValueError(
            f"window of {len(pix)} frames is too short: need bg_window+1 = "
            f"{config.bg_window + 1} (background excludes the current frame)"
        )
    current = pix[-1]
    history = np.stack(pix[-(config.bg_window + 1) : -1])
    background = history.mean(axis=0)
    return current > background + config.delta_threshold


def baseline_count(frames_window, config: BaselineConfig = BaselineConfig()) -> int:
    """People count: 4-connected foreground blobs of at least min_blob_area."""
    mask = foreground_mask(frames_window, config)
    return sum(1 for a in component_areas(mask) if a >= config.min_blob_area)


def baseline_violation(frames_window, config: BaselineConfig = BaselineConfig()) -> bool:
    return baseline_count(frames_window, config) >= 2


def evaluate(frames: list[Frame], config: BaselineConfig = BaselineConfig(),
             sessions: set[int] | None = None) -> dict:
    """Run the baseline over whole sessions and score it against the labels.

    Only frames with a full history window are scored; hard-to-label frames
    are never scored (they still feed the background like any other frame,
    since a deployed detector would not know about them). No ROC-AUC: the
    baseline emits hard 0/1 decisions, not scores.
    """
    by_session: dict[int, list[Frame]] = {}
    for f in frames:
        if sessions is None or f.session_id in sessions:
            by_session.setdefault(f.session_id, []).append(f)
    preds, labels = [], []
    need = config.bg_window + 1
    for sid in sorted(by_session):
        sess = sorted(by_session[sid], key=lambda f: f.frame_index)
        for t in range(need - 1, len(sess)):
            if sess[t].hard_to_label:
                continue
            window = sess[t - need + 1 : t + 1]
            preds.append(baseline_violation(window, config))
            labels.append(sess[t].violation)
    if not preds:
        raise ValueError("no scorable frames (sessions shorter than the window?)")
    c = metrics.confusion_from_scores(np.array(preds, dtype=float), labels, threshold=0.5)
    return {
        "frames_scored": len(preds),
        "bal_acc": metrics.balanced_accuracy(c),
        "acc": metrics.accuracy(c),
        "f1": metrics.f1(c),
        "confusion": {"tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn},
    }
