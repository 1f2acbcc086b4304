"""Counting error metrics over a set of images."""

import math


def mae(gt_counts, pred_counts) -> float:
    """Mean absolute error between ground-truth and predicted counts."""
    gt, pred = list(gt_counts), list(pred_counts)
    if not gt:
        raise ValueError("empty input")
    if len(gt) != len(pred):
        raise ValueError(f"length mismatch: {len(gt)} vs {len(pred)}")
    return sum(abs(g - p) for g, p in zip(gt, pred)) / len(gt)


def rmse(gt_counts, pred_counts) -> float:
    """Root-mean-square error between ground-truth and predicted counts."""
    gt, pred = list(gt_counts), list(pred_counts)
    if not gt:
        raise ValueError("empty input")
    if len(gt) != len(pred):
        raise ValueError(f"length mismatch: {len(gt)} vs {len(pred)}")
    return math.sqrt(sum((g - p) ** 2 for g, p in zip(gt, pred)) / len(gt))
