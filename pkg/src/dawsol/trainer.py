"""Training loop with target sampling and DAL loss, evaluation, and checkpoints."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import losses
from .assigner import AnchorCache, assign_and_sample, update_cache
from .core import ClassMask, RunConfig, seeded_rng
from .data import (DatasetManifest, cutmix_augment, has_augment, load_annotation, load_image, load_images,
                   load_manifest)
from .metrics import EvalRecord, ThresholdSweep, evaluate_records
from .model import CAMNet, generate_cam

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dawsol-checkpoint/1"


class TrainingAborted(RuntimeError):
    def __init__(self, step: int, detail: dict):
        self.step = step
        self.detail = detail
        super().__init__(f"non-finite loss at step {step}: {detail}")


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainState:
    config: RunConfig
    model: CAMNet
    cache: AnchorCache
    optimizer: torch.optim.Optimizer
    rng: np.random.Generator
    domain_classifier: Optional[losses.DomainClassifier] = None
    step: int = 0
    epoch: int = 0
    extra: dict = field(default_factory=dict)

    @classmethod
    def create(cls, config: RunConfig) -> "TrainState":
        rng = seeded_rng(config.seed)
        torch.manual_seed(int(rng.integers(2**31 - 1)))
        model = CAMNet(config)
        clf = losses.DomainClassifier(config.feature_dim) if config.uda_method == "dann" else None
        params = list(model.parameters()) + (list(clf.parameters()) if clf is not None else [])
        opt = torch.optim.SGD(params, lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay)
        cache = AnchorCache.create(config.feature_dim, config.num_classes, config.epsilon_scale)
        return cls(config, model, cache, opt, rng, clf)

    def lr_at(self, epoch: int) -> float:
        c = self.config
        if c.lr_step <= 0:
            return c.lr
        return c.lr * c.lr_gamma ** (epoch // c.lr_step)


def _gather(Z: torch.Tensor, per_image: list) -> torch.Tensor:
    """Rows Z[b, :, i] for every (b, indices) pair -> (total, C)."""
    parts = [Z[b][:, idx].T for b, idx in per_image if len(idx)]
    if not parts:
        return Z.new_zeros((0, Z.shape[1]))
    return torch.cat(parts)


def _augment(state: TrainState, images: np.ndarray, labels: np.ndarray):
    """Returns (images, CE targets, per-image dominant classes for anchor lookup)."""
    c = state.config
    k = c.num_classes
    if c.augmentation == "has":
        images = np.stack([has_augment(im, c.has_grid, c.has_prob, state.rng) for im in images])
    elif c.augmentation == "cutmix" and len(images) > 1:
        perm = state.rng.permutation(len(images))
        onehot = np.eye(k)[labels]
        mixed, weights = [], []
        for i, j in enumerate(perm):
            im, y, _ = cutmix_augment(images[i], onehot[i], images[j], onehot[j], c.cutmix_alpha, state.rng)
            mixed.append(im)
            weights.append(y)
        weights = np.stack(weights)
        return np.stack(mixed), torch.from_numpy(weights).float(), weights.argmax(1)
    return images, torch.from_numpy(labels).long(), labels


def train_step(state: TrainState, images: np.ndarray, labels: np.ndarray):
    """One optimizer update on a batch of float (B, 3, H, W) images with integer labels."""
    c = state.config
    if len(images) < 1:
        raise ValueError("empty batch")
    state.model.train()
    images, targets, dominant = _augment(state, images, labels)
    x = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32))

    Z, z, scores = state.model(x)
    l_c = losses.classification_loss(scores, targets)
    zero = l_c.new_zeros(())
    l_d, l_u = zero, zero
    samples = []

    if (c.lambda1 > 0 or c.lambda2 > 0) and state.epoch >= c.warmup_epochs:
        if c.use_tsa:
            Zd = Z.detach().double().numpy()
            zd = z.detach().double().numpy()
            for b in range(len(images)):
                mask = ClassMask.one_hot(int(dominant[b]), c.num_classes)
                s = assign_and_sample(Zd[b], zd[b], state.cache, mask, c.samples_per_subset, state.rng,
                                      c.kmeans_max_iters, c.kmeans_tol)
                samples.append((mask, s, zd[b]))
            T_u = _gather(Z, [(b, s.universum) for b, (_, s, _) in enumerate(samples)])
            T_t = _gather(Z, [(b, s.true_target) for b, (_, s, _) in enumerate(samples)])
            T_f = _gather(Z, [(b, s.fake_target) for b, (_, s, _) in enumerate(samples)])
        else:
            n_pos = Z.shape[2]
            take = min(c.samples_per_subset, n_pos)
            picks = [(b, np.sort(state.rng.choice(n_pos, size=take, replace=False))) for b in range(len(images))]
            T_t = _gather(Z, picks)
            T_f = T_u = Z.new_zeros((0, Z.shape[1]))
        per_image = c.dal_scope == "image" and c.uda_method == "mmd" and c.use_tsa
        l_d, l_u = losses.dal_loss(z, T_f, T_t, T_u, "none" if per_image else c.uda_method, c.mmd_sigma,
                                   c.mmd_unbiased, c.eq4_literal, state.domain_classifier)
        if per_image:
            fakes = [_gather(Z, [(b, s.fake_target)]) for b, (_, s, _) in enumerate(samples)]
            trues = [_gather(Z, [(b, s.true_target)]) for b, (_, s, _) in enumerate(samples)]
            l_d = losses.per_image_mmd(z, fakes, trues, c.mmd_sigma, c.mmd_unbiased)
        if c.lambda1 == 0:
            l_d = l_d.detach()
        if c.lambda2 == 0:
            l_u = l_u.detach()

    try:
        total, breakdown = losses.compose(l_c, l_d, l_u, c.lambda1, c.lambda2)
    except FloatingPointError:
        raise TrainingAborted(state.step, {"l_c": float(l_c.detach()), "l_d": float(l_d.detach()), "l_u": float(l_u.detach())}) from None

    state.optimizer.zero_grad(set_to_none=True)
    total.backward()
    state.optimizer.step()
    for mask, s, zb in samples:
        update_cache(state.cache, s.centers, zb, mask, literal=c.eq7_literal)
    state.step += 1
    return state, breakdown


def _to_float(batch_uint8: np.ndarray) -> np.ndarray:
    return batch_uint8.astype(np.float32) / 255.0


def train(state: TrainState, manifest: DatasetManifest, log_path=None, epochs: Optional[int] = None,
          images: Optional[np.ndarray] = None) -> list:
    """Run ``epochs`` (default from config) over a train manifest; returns the per-step log."""
    c = state.config
    if images is None:
        images = load_images(manifest, c.image_size)
    labels = np.array([e.label.dominant_class for e in manifest.entries], dtype=np.int64)
    history = []
    fh = open(log_path, "a") if log_path else None
    try:
        for _ in range(c.epochs if epochs is None else epochs):
            lr = state.lr_at(state.epoch)
            for group in state.optimizer.param_groups:
                group["lr"] = lr
            order = state.rng.permutation(len(labels))
            for start in range(0, len(order), c.batch_size):
                idx = order[start:start + c.batch_size]
                _, br = train_step(state, _to_float(images[idx]), labels[idx])
                row = {"step": state.step, "epoch": state.epoch, **br.as_dict()}
                history.append(row)
                if fh:
                    fh.write(json.dumps(row) + "\n")
            log.info("epoch %d done: %s", state.epoch, history[-1] if history else {})
            state.epoch += 1
    finally:
        if fh:
            fh.close()
    return history


@torch.no_grad()
def predict(state: TrainState, images: np.ndarray, batch_size: int = 64):
    """(normalized CAMs (M, K, H, W) as float32 numpy, predicted classes (M,))."""
    model = state.model
    model.eval()
    maps, preds = [], []
    for start in range(0, len(images), batch_size):
        x = torch.from_numpy(np.ascontiguousarray(images[start:start + batch_size], dtype=np.float32))
        _, _, scores = model(x)
        preds.append(scores.argmax(1).numpy())
        maps.append(generate_cam(model, x).numpy())
    return np.concatenate(maps), np.concatenate(preds)


def evaluate(state: TrainState, manifest: DatasetManifest, sweep: Optional[ThresholdSweep] = None,
             return_curves: bool = False):
    """Metric summary of the model on an annotated split (ground-truth-class maps)."""
    if manifest.split == "train":
        raise ValueError("evaluation needs an annotated split")
    sweep = sweep or ThresholdSweep.uniform(state.config.num_thresholds)
    images = np.stack([load_image(e.image_path, state.config.image_size) for e in manifest.entries])
    maps, preds = predict(state, images)
    records = []
    for e, m, p in zip(manifest.entries, maps, preds):
        ann = load_annotation(e)
        records.append(EvalRecord(e.image_id, m[ann.class_id].astype(np.float64), int(p), ann))
    summary, curves = evaluate_records(records, sweep)
    return (summary, curves) if return_curves else summary


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def save_checkpoint(state: TrainState, path) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": state.config.to_dict(),
        "model": state.model.state_dict(),
        "domain_classifier": state.domain_classifier.state_dict() if state.domain_classifier else None,
        "optimizer": state.optimizer.state_dict(),
        "cache": {
            "M": torch.from_numpy(state.cache.M.copy()),
            "seen_count": torch.from_numpy(state.cache.seen_count.copy()),
            "initialized": torch.from_numpy(state.cache.initialized.copy()),
            "universum_count": state.cache.universum_count,
            "epsilon_scale": state.cache.epsilon_scale,
        },
        "rng": json.dumps(state.rng.bit_generator.state),
        "step": state.step,
        "epoch": state.epoch,
        "extra": json.dumps(state.extra),
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path) -> TrainState:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} not found")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        found = payload.get("format") if isinstance(payload, dict) else None
        raise CheckpointError(f"unsupported checkpoint format {found!r}, expected {CHECKPOINT_FORMAT!r}")
    try:
        config = RunConfig(**payload["config"])
        state = TrainState.create(config)
        state.model.load_state_dict(payload["model"])
        if state.domain_classifier is not None:
            state.domain_classifier.load_state_dict(payload["domain_classifier"])
        state.optimizer.load_state_dict(payload["optimizer"])
        cache = payload["cache"]
        state.cache = AnchorCache(cache["M"].numpy().copy(), cache["seen_count"].numpy().copy(),
                                  cache["initialized"].numpy().copy(), int(cache["universum_count"]),
                                  float(cache["epsilon_scale"]))
        state.rng.bit_generator.state = json.loads(payload["rng"])
        state.step = int(payload["step"])
        state.epoch = int(payload["epoch"])
        state.extra = json.loads(payload["extra"])
    except (KeyError, RuntimeError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from None
    return state


def run_training(config: RunConfig, data_root, out_dir, eval_split: Optional[str] = "test") -> dict:
    """Train on ``<data_root>/train``, checkpoint to ``out_dir``, and evaluate if ``eval_split`` exists."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = TrainState.create(config)
    manifest = load_manifest(data_root, "train", config.num_classes)
    log_path = out / "train_log.jsonl"
    if log_path.exists():
        log_path.unlink()
    train(state, manifest, log_path)
    result = {"steps": state.step, "epochs": state.epoch}
    if eval_split and (Path(data_root) / eval_split).is_dir():
        summary, curves = evaluate(state, load_manifest(data_root, eval_split, config.num_classes),
                                   return_curves=True)
        state.extra["eval"] = summary
        result["eval"] = summary
        from .metrics import curves_to_csv

        (out / "curves.csv").write_text(curves_to_csv(curves))
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    save_checkpoint(state, out / "checkpoint.pt")
    return result
