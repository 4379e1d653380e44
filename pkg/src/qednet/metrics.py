"""Binary confusion matrix with overall accuracy, average accuracy and Cohen's kappa."""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np

from .qsim import ContractError

N_CLASSES = 2


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[i, j]``: pixels predicted as class ``i`` whose actual class is ``j``."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (N_CLASSES, N_CLASSES) or (c < 0).any():
            raise ContractError("counts must be a non-negative 2x2 table")
        if c.sum() == 0:
            raise ContractError("confusion matrix has no pixels")
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def P(self) -> np.ndarray:
        return self.counts / self.total

    @property
    def predicted_marginal(self) -> np.ndarray:
        # P_n.
        return self.P.sum(axis=1)

    @property
    def actual_marginal(self) -> np.ndarray:
        # P_.n
        return self.P.sum(axis=0)

    def __add__(self, other: ConfusionMatrix) -> ConfusionMatrix:
        return ConfusionMatrix(self.counts + other.counts)


def confusion(pred, gt, mask=None) -> ConfusionMatrix:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ContractError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    valid = np.ones(pred.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if valid.shape != pred.shape:
        raise ContractError("validity mask shape mismatch")
    if not valid.any():
        raise ContractError("no valid pixels to tabulate")
    p = (pred[valid] != 0).astype(np.int64)
    g = (gt[valid] != 0).astype(np.int64)
    counts = np.bincount(p * N_CLASSES + g, minlength=N_CLASSES * N_CLASSES).reshape(N_CLASSES, N_CLASSES)
    return ConfusionMatrix(counts)


def oa(cm: ConfusionMatrix) -> float:
    return 100.0 * float(np.trace(cm.P))


def aa(cm: ConfusionMatrix, marginal: str = "actual") -> float:
    """Mean per-class accuracy in percent.

    ``marginal="actual"`` divides each diagonal entry by its actual-class
    total (mean recall). ``marginal="predicted"`` divides by the predicted-class
    total instead. Classes with an empty marginal are skipped with a warning.
    """
    if marginal == "actual":
        denom = cm.actual_marginal
    elif marginal == "predicted":
        denom = cm.predicted_marginal
    else:
        raise ContractError(f"marginal must be 'actual' or 'predicted', got {marginal!r}")
    present = denom > 0
    if not present.all():
        warnings.warn(f"AA averaged over {int(present.sum())} of {N_CLASSES} classes (empty marginal)", stacklevel=2)
    diag = np.diag(cm.P)
    return 100.0 * float(np.mean(diag[present] / denom[present]))


def chance_agreement(cm: ConfusionMatrix) -> float:
    return float(np.dot(cm.predicted_marginal, cm.actual_marginal))


def kappa(cm: ConfusionMatrix) -> float:
    pe = chance_agreement(cm)
    if pe >= 1.0:
        return 0.0
    return (float(np.trace(cm.P)) - pe) / (1.0 - pe)


def summary(cm: ConfusionMatrix, marginal: str = "actual") -> dict[str, float]:
    return {"OA": oa(cm), "AA": aa(cm, marginal), "kappa": kappa(cm)}


def report_table(results: dict[str, dict[str, float]]) -> str:
    """Plain-text table with one column per method and rows OA / AA / kappa."""
    names = list(results)
    width = max([10] + [len(n) for n in names])
    lines = ["Metric".ljust(8) + "".join(n.rjust(width + 2) for n in names)]
    for key, label, fmt in (("OA", "OA (%)", "{:.2f}"), ("AA", "AA (%)", "{:.2f}"), ("kappa", "kappa", "{:.3f}")):
        lines.append(label.ljust(8) + "".join(fmt.format(results[n][key]).rjust(width + 2) for n in names))
    return "\n".join(lines)


def report_csv(results: dict[str, dict[str, float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "OA", "AA", "kappa"])
    for name, r in results.items():
        writer.writerow([name, f"{r['OA']:.6f}", f"{r['AA']:.6f}", f"{r['kappa']:.6f}"])
    return buf.getvalue()
