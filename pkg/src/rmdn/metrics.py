"""Evaluation metrics: distance correlation, classification rates, transfer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ParameterError


def _as_samples(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        a = a.reshape(a.shape[0], -1)
    return a


def _double_centered(a: np.ndarray) -> np.ndarray:
    d = cdist(a, a)
    return d - d.mean(axis=0, keepdims=True) - d.mean(axis=1, keepdims=True) + d.mean()


def dcor2(x, y) -> float:
    """Squared distance correlation (biased V-statistic form).

    Returns 0.0 when either sample is constant.
    """
    x = _as_samples(x, "x")
    y = _as_samples(y, "y")
    n = x.shape[0]
    if n < 2:
        raise ParameterError(f"need at least 2 samples, got {n}")
    if y.shape[0] != n:
        raise ParameterError(f"sample counts differ: {n} vs {y.shape[0]}")
    a = _double_centered(x)
    b = _double_centered(y)
    dcov2 = (a * b).mean()
    dvar_x = (a * a).mean()
    dvar_y = (b * b).mean()
    if dvar_x <= 0.0 or dvar_y <= 0.0:
        return 0.0
    return float(min(1.0, max(0.0, dcov2 / np.sqrt(dvar_x * dvar_y))))


def rates(preds, labels) -> dict[str, float | None]:
    """Accuracy, balanced accuracy, TPR and TNR for binary predictions.

    A rate whose class is absent from ``labels`` is ``None``; balanced
    accuracy is then ``None`` as well.
    """
    preds = np.asarray(preds).astype(np.int64).ravel()
    labels = np.asarray(labels).astype(np.int64).ravel()
    if preds.size == 0 or preds.shape != labels.shape:
        raise ParameterError("preds and labels must be non-empty and of equal length")
    if not np.isin(labels, (0, 1)).all():
        raise ParameterError("labels must be binary {0, 1}")
    pos = labels == 1
    neg = ~pos
    tpr = float((preds[pos] == 1).mean()) if pos.any() else None
    tnr = float((preds[neg] == 0).mean()) if neg.any() else None
    bacc = None if tpr is None or tnr is None else 0.5 * (tpr + tnr)
    return {"accuracy": float((preds == labels).mean()), "balanced_accuracy": bacc, "tpr": tpr, "tnr": tnr}


@dataclass
class TransferRecord:
    """``r[i, j]``: accuracy on stage ``j`` after training through stage ``i``."""

    r: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        s = self.r.shape[0]
        if self.r.shape != (s, s) or self.a.shape != (s,):
            raise ParameterError(f"r must be S x S and a length S; got {self.r.shape}, {self.a.shape}")
        if s < 2:
            raise ParameterError("transfer metrics need at least 2 stages")

    @property
    def n_stages(self) -> int:
        return self.r.shape[0]


def transfer_distance(rec: TransferRecord) -> dict[str, float]:
    """ACCd, BWTd and FWTd: distances from the per-stage maxima.

    BWTd is signed; a negative value means final accuracies sit closer to
    the maxima than the just-trained ones did.
    """
    r, a = rec.r, rec.a
    s = rec.n_stages
    final_gap = np.abs(r[s - 1] - a)
    diag_gap = np.abs(np.diag(r) - a)
    accd = final_gap.mean()
    bwtd = (final_gap[: s - 1] - diag_gap[: s - 1]).mean()
    fwtd = np.abs(r[np.arange(s - 1), np.arange(1, s)] - a[1:]).mean()
    return {"accd": float(accd), "bwtd": float(bwtd), "fwtd": float(fwtd)}


def transfer_gem(rec: TransferRecord, b) -> dict[str, float]:
    """Classical ACC / BWT / FWT with ``b`` the untrained-model accuracies."""
    b = np.asarray(b, dtype=np.float64)
    s = rec.n_stages
    if b.shape != (s,):
        raise ParameterError(f"baseline vector must have length {s}, got {b.shape}")
    r = rec.r
    acc = r[s - 1].mean()
    bwt = (r[s - 1, : s - 1] - np.diag(r)[: s - 1]).mean()
    fwt = (r[np.arange(s - 1), np.arange(1, s)] - b[1:]).mean()
    return {"acc": float(acc), "bwt": float(bwt), "fwt": float(fwt)}
