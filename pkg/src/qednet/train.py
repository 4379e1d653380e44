"""Hybrid training: BCE loss, AdamW with cosine annealing, best-kappa checkpointing."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from math import cos, pi

import numpy as np

from . import model as qmodel
from .container import HeaderError, VersionError, atomic_write, pack, unpack
from .data import extract_patches
from .metrics import ConfusionMatrix, confusion, kappa, summary
from .model import ModelParams, auto_threshold, sigmoid
from .qsim import ContractError

log = logging.getLogger(__name__)

CKPT_MAGIC = b"MQCKPT01"
CKPT_VERSION = 1
EPS_PROB = 1e-7


# -- loss and optimizer ------------------------------------------------------

def bce_loss(y, gt, valid=None) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy over valid pixels and its gradient w.r.t. the logits."""
    y = np.asarray(y, dtype=float)
    g = np.asarray(gt, dtype=float)
    if y.shape != g.shape:
        raise ContractError(f"prediction shape {y.shape} != target shape {g.shape}")
    w = np.ones_like(y) if valid is None else np.asarray(valid, dtype=float)
    if w.shape != y.shape:
        raise ContractError("validity mask shape mismatch")
    n = w.sum()
    if n == 0:
        raise ContractError("no valid pixels in loss")
    yc = np.clip(y, EPS_PROB, 1 - EPS_PROB)
    loss = -np.sum(w * (g * np.log(yc) + (1 - g) * np.log(1 - yc))) / n
    return float(loss), w * (y - g) / n


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def zeros(cls, n: int, weight_decay: float = 0.01) -> OptimizerState:
        return cls(np.zeros(n), np.zeros(n), weight_decay=weight_decay)


def adamw_step(state: OptimizerState, params, grads, lr: float, decay_mask=None) -> np.ndarray:
    """One AdamW update; advances ``state`` in place and returns the new parameters.

    The decoupled decay ``p -= lr * wd * p`` is applied first, only where
    ``decay_mask`` is true (everywhere when it is omitted).
    """
    p = np.asarray(params, dtype=float).copy()
    g = np.asarray(grads, dtype=float)
    if p.shape != g.shape or p.shape != state.m.shape:
        raise ContractError("parameter, gradient and moment lengths differ")
    if state.weight_decay:
        decay = lr * state.weight_decay * p
        p -= decay if decay_mask is None else np.where(decay_mask, decay, 0.0)
    state.t += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * g
    state.v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = state.m / (1 - state.beta1**state.t)
    v_hat = state.v / (1 - state.beta2**state.t)
    p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return p


@dataclass
class TrainConfig:
    max_epochs: int = 200
    lr0: float = 1e-4
    batch_size: int = 1
    seed: int = 0
    patience: int = 10
    min_delta: float = 1e-5
    weight_decay: float = 0.01
    workers: int = 1
    # epochs actually run; the cosine schedule still spans max_epochs
    epochs: int | None = None

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ContractError("max_epochs must be at least 1")
        if self.epochs is not None and not 1 <= self.epochs <= self.max_epochs:
            raise ContractError("epochs must lie in [1, max_epochs]")
        if self.batch_size < 1:
            raise ContractError("batch_size must be at least 1")


def cosine_lr(epoch: int, config: TrainConfig) -> float:
    if not 0 <= epoch <= config.max_epochs:
        raise ContractError(f"epoch {epoch} outside [0, {config.max_epochs}]")
    return config.lr0 * (1 + cos(pi * epoch / config.max_epochs)) / 2


# -- samples -----------------------------------------------------------------

@dataclass
class Sample:
    x: np.ndarray  # (H, W, 12) in [0, 1]
    gt: np.ndarray  # (H, W) {0, 1}
    valid: np.ndarray  # (H, W) bool


def samples_from_scenes(scenes, patch_size: int | None = None) -> list[Sample]:
    """Tile ``(raster, mask)`` pairs; ``patch_size=None`` keeps each scene whole (padded to even)."""
    out = []
    for raster, mask in scenes:
        size = patch_size or max(raster.height + raster.height % 2, raster.width + raster.width % 2)
        for p in extract_patches(raster, mask, size=size):
            out.append(Sample(p.x.astype(np.float64), p.mask, p.valid))
    return out


def _stack(samples: list[Sample]):
    shapes = {s.x.shape for s in samples}
    if len(shapes) != 1:
        return None
    return (np.stack([s.x for s in samples]), np.stack([s.gt for s in samples]),
            np.stack([s.valid for s in samples]))


def _groups(samples: list[Sample]) -> list[list[Sample]]:
    return [samples] if _stack(samples) is not None else [[s] for s in samples]


def loss_and_grad(params: ModelParams, samples: list[Sample], workers: int = 1) -> tuple[float, np.ndarray]:
    """Mean BCE over all valid pixels of ``samples`` and the flat gradient."""
    total = sum(float(s.valid.sum()) for s in samples)
    if total == 0:
        raise ContractError("batch has no valid pixels")
    loss, grad = 0.0, np.zeros(params.size)
    for group in _groups(samples):
        x, gt, valid = _stack(group)
        cache: dict = {}
        z = qmodel.logits(x, params, workers, cache)
        n = float(valid.sum())
        part, g_logits = bce_loss(sigmoid(z), gt, valid)
        loss += part * n / total
        grad += qmodel.backward(g_logits * (n / total), params, cache, workers)
    return loss, grad


def batch_loss(params: ModelParams, samples: list[Sample], workers: int = 1) -> float:
    """Mean BCE over all valid pixels of ``samples``, without the gradient."""
    total = sum(float(s.valid.sum()) for s in samples)
    if total == 0:
        raise ContractError("batch has no valid pixels")
    loss = 0.0
    for s in samples:
        part, _ = bce_loss(qmodel.forward(s.x, params, workers), s.gt, s.valid)
        loss += part * float(s.valid.sum()) / total
    return loss


@dataclass
class Evaluation:
    loss: float
    cm: ConfusionMatrix
    maps: list[np.ndarray]
    thresholds: list[float]

    @property
    def kappa(self) -> float:
        return kappa(self.cm)


def evaluate(params: ModelParams, samples: list[Sample], workers: int = 1) -> Evaluation:
    """Loss over valid pixels and the confusion matrix of auto-thresholded maps, pooled over samples."""
    total = sum(float(s.valid.sum()) for s in samples)
    loss = 0.0
    cm = None
    maps, thresholds = [], []
    for s in samples:
        y = qmodel.forward(s.x, params, workers)
        part, _ = bce_loss(y, s.gt, s.valid)
        loss += part * float(s.valid.sum()) / total
        binary, t = auto_threshold(y, s.valid, return_threshold=True)
        c = confusion(binary, s.gt, s.valid)
        cm = c if cm is None else cm + c
        maps.append(y)
        thresholds.append(t)
    return Evaluation(loss, cm, maps, thresholds)


# -- training loop -----------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    val_kappa: float


@dataclass
class TrainResult:
    best: ModelParams
    best_epoch: int
    best_kappa: float
    final: ModelParams
    history: list[EpochRecord] = field(default_factory=list)
    seconds: float = 0.0

    def history_csv(self) -> str:
        return history_csv(self.history)


def history_csv(history: list[EpochRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "lr", "train_loss", "val_loss", "val_kappa"])
    for r in history:
        w.writerow([r.epoch, repr(r.lr), repr(r.train_loss), repr(r.val_loss), repr(r.val_kappa)])
    return buf.getvalue()


def train(
    train_set: list[Sample],
    val_set: list[Sample],
    config: TrainConfig,
    variant: str = qmodel.CNN_QNN,
    width: int = 64,
    init: ModelParams | None = None,
    target_kappa: float | None = None,
) -> TrainResult:
    """Run the training loop and return the best-validation-kappa parameters.

    Stops after ``config.epochs`` (default ``config.max_epochs``) or once the validation loss has improved
    by less than ``config.min_delta`` for ``config.patience`` epochs in a row.
    ``target_kappa`` adds an optional early exit once validation kappa reaches it.
    """
    if not train_set or not val_set:
        raise ContractError("training and validation sets must be non-empty")
    start = time.perf_counter()
    params = init if init is not None else ModelParams.init(variant, width, config.seed)
    vec = params.flat()
    decay_mask = params.decay_mask()
    state = OptimizerState.zeros(vec.size, config.weight_decay)
    rng = np.random.default_rng([config.seed, 1])

    best_vec, best_kappa, best_epoch = vec.copy(), -np.inf, 0
    best_val_loss, stall = np.inf, 0
    history: list[EpochRecord] = []
    for epoch in range(config.epochs or config.max_epochs):
        lr = cosine_lr(epoch, config)
        order = rng.permutation(len(train_set))
        seen, running = 0, 0.0
        for i in range(0, len(order), config.batch_size):
            batch = [train_set[j] for j in order[i : i + config.batch_size]]
            current = ModelParams.from_flat(params.variant, params.width, vec)
            loss, grad = loss_and_grad(current, batch, config.workers)
            vec = adamw_step(state, vec, grad, lr, decay_mask)
            n = sum(float(s.valid.sum()) for s in batch)
            running += loss * n
            seen += n
        current = ModelParams.from_flat(params.variant, params.width, vec)
        ev = evaluate(current, val_set, config.workers)
        rec = EpochRecord(epoch + 1, lr, running / seen, ev.loss, ev.kappa)
        history.append(rec)
        log.info("epoch %d lr %.3g train %.5f val %.5f kappa %.4f", rec.epoch, lr, rec.train_loss, ev.loss, ev.kappa)
        if ev.kappa > best_kappa:
            best_vec, best_kappa, best_epoch = vec.copy(), ev.kappa, rec.epoch
        if best_val_loss - ev.loss < config.min_delta:
            stall += 1
        else:
            stall = 0
        best_val_loss = min(best_val_loss, ev.loss)
        if stall >= config.patience:
            log.info("validation loss converged after %d epochs", rec.epoch)
            break
        if target_kappa is not None and ev.kappa >= target_kappa:
            break
    return TrainResult(
        best=ModelParams.from_flat(params.variant, params.width, best_vec),
        best_epoch=best_epoch,
        best_kappa=float(best_kappa),
        final=ModelParams.from_flat(params.variant, params.width, vec),
        history=history,
        seconds=time.perf_counter() - start,
    )


# -- checkpoints -------------------------------------------------------------

def encode_checkpoint(params: ModelParams, meta: dict | None = None) -> bytes:
    vec = params.flat().astype("<f8")
    header = {
        "version": CKPT_VERSION,
        "variant": params.variant,
        "feat_width": params.width,
        "n_params": int(vec.size),
    }
    if meta:
        header["meta"] = meta
    return pack(CKPT_MAGIC, header, vec.tobytes())


def _ckpt_payload_size(header: dict) -> int:
    if header.get("version") != CKPT_VERSION:
        raise VersionError(f"unsupported checkpoint version {header.get('version')}")
    try:
        variant, width, n = header["variant"], int(header["feat_width"]), int(header["n_params"])
    except (KeyError, TypeError, ValueError) as exc:
        raise HeaderError(f"incomplete checkpoint header: {exc}") from exc
    if variant not in qmodel.VARIANTS or n != qmodel.n_params(variant, width):
        raise HeaderError(f"checkpoint header inconsistent: {variant}, C_f={width}, {n} params")
    return 8 * n


def decode_checkpoint(blob: bytes) -> tuple[ModelParams, dict]:
    header, payload = unpack(blob, CKPT_MAGIC, _ckpt_payload_size)
    vec = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return ModelParams.from_flat(header["variant"], int(header["feat_width"]), vec), header


def save_checkpoint(path, params: ModelParams, meta: dict | None = None) -> None:
    atomic_write(path, encode_checkpoint(params, meta))


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())


# -- ablation ----------------------------------------------------------------

ABLATION_ROWS = (
    (qmodel.CNN_ONLY, (True, False, False)),
    (qmodel.CNN_CNN, (True, True, False)),
    (qmodel.CNN_QNN, (True, False, True)),
)


def ablation(train_set, val_set, config: TrainConfig, width: int = 64, test_set=None,
             trained: dict[str, TrainResult] | None = None) -> dict[str, dict]:
    """Train all three variants under ``config`` and score each on ``test_set`` (default: validation).

    ``trained`` supplies results for variants that were already trained under
    the same configuration, which are then reused instead of retrained.
    """
    test_set = test_set or val_set
    trained = trained or {}
    rows = {}
    for variant, _ in ABLATION_ROWS:
        result = trained.get(variant) or train(train_set, val_set, config, variant, width)
        ev = evaluate(result.best, test_set, config.workers)
        rows[variant] = {**summary(ev.cm), "best_epoch": result.best_epoch, "result": result}
    return rows


def ablation_table(rows: dict[str, dict]) -> str:
    mark = lambda b: "x" if b else ""  # noqa: E731
    lines = [f"{'Track 1 (CNN)':>14}{'Track 2 (CNN)':>15}{'Track 2 (QNN)':>15}{'OA (%)':>9}{'AA (%)':>9}{'kappa':>8}"]
    for variant, flags in ABLATION_ROWS:
        if variant not in rows:
            continue
        r = rows[variant]
        lines.append(
            f"{mark(flags[0]):>14}{mark(flags[1]):>15}{mark(flags[2]):>15}"
            f"{r['OA']:>9.2f}{r['AA']:>9.2f}{r['kappa']:>8.3f}"
        )
    return "\n".join(lines)
