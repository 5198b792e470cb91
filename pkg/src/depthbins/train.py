"""Losses, the SGD training loop, and checkpoint evaluation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from depthbins import metrics as metrics_mod
from depthbins.data import SceneSample, TargetGeometry, preprocess_train, shuffled_batches
from depthbins.model import AttentionFusion, DepthNet, ModelConfig, save_checkpoint
from depthbins.quantize import QuantizationSpec, depth_to_label
from depthbins.resample import resize_nearest
from depthbins.tiling import tiled_inference

LOG_COLUMNS = ("epoch", "step", "lr", "train_loss",
               "absRel_indoor", "SILog_indoor", "absRel_outdoor", "SILog_outdoor")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainSchedule:
    """Two-phase SGD schedule: base_lr, then base_lr * lr_drop_factor."""

    base_lr: float = 0.001
    lr_drop_factor: float = 0.1
    phase1_epochs: int = 30
    phase2_epochs: int = 20
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 8
    seed: int = 0
    clip_grad_norm: float = 10.0  # 0 disables clipping

    def __post_init__(self):
        if self.base_lr <= 0 or self.lr_drop_factor <= 0:
            raise ValueError("learning rates must be positive")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("momentum and weight decay must be non-negative")
        if self.phase1_epochs < 1 or self.phase2_epochs < 0 or self.batch_size < 1:
            raise ValueError("schedule epochs/batch size must be positive")

    @property
    def total_epochs(self) -> int:
        return self.phase1_epochs + self.phase2_epochs

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch index."""
        return self.base_lr if epoch <= self.phase1_epochs else self.base_lr * self.lr_drop_factor

    @classmethod
    def toy(cls, **overrides) -> "TrainSchedule":
        """Scaled-down preset for small synthetic runs."""
        base = dict(base_lr=0.01, phase1_epochs=15, phase2_epochs=10, batch_size=8)
        base.update(overrides)
        return cls(**base)

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "TrainSchedule":
        return cls(**json.loads(text))


def classification_loss(logits: torch.Tensor, labels: torch.Tensor,
                        mask: torch.Tensor) -> torch.Tensor:
    """Pixel-wise multinomial logistic loss over valid pixels (natural log).

    The gradient with respect to the logits is (softmax - onehot) / N at
    valid pixels and exactly zero elsewhere.
    """
    mask = mask.bool()
    n = int(mask.sum())
    if n == 0:
        raise ValueError("empty batch: no valid pixels for the loss")
    logp = F.log_softmax(logits, dim=1)
    picked = logp.gather(1, labels.clamp(min=0).unsqueeze(1)).squeeze(1)
    return -picked[mask].mean()


def regression_loss(pred_log_depth: torch.Tensor, gt_depth: torch.Tensor,
                    mask: torch.Tensor) -> torch.Tensor:
    """Mean squared error in log10-depth over valid pixels."""
    mask = mask.bool()
    n = int(mask.sum())
    if n == 0:
        raise ValueError("empty batch: no valid pixels for the loss")
    if pred_log_depth.dim() == 4:
        pred_log_depth = pred_log_depth[:, 0]
    target = torch.log10(gt_depth.clamp(min=1e-12))
    return ((pred_log_depth - target)[mask] ** 2).mean()


def batch_tensors(samples: list[SceneSample], spec: QuantizationSpec,
                  dtype=torch.float32):
    """Stack preprocessed samples into model input and /4-resolution targets."""
    images, labels, logd, masks = [], [], [], []
    for s in samples:
        h4, w4 = s.height // 4, s.width // 4
        d4 = resize_nearest(s.depth, (h4, w4)).astype(np.float64)
        m4 = resize_nearest(s.valid, (h4, w4))
        m4 = m4 & (d4 > 0)
        safe = np.where(m4, d4, spec.alpha)
        images.append(s.rgb.transpose(2, 0, 1))
        labels.append(depth_to_label(safe, spec))
        logd.append(np.log10(safe))
        masks.append(m4)
    return (torch.as_tensor(np.stack(images), dtype=dtype),
            torch.as_tensor(np.stack(labels)),
            torch.as_tensor(np.stack(logd), dtype=dtype),
            torch.as_tensor(np.stack(masks)))


def build_optimizer(net: DepthNet, schedule: TrainSchedule) -> torch.optim.SGD:
    """SGD with momentum; weight decay skips norm parameters and gate biases."""
    no_decay = set()
    for module in net.modules():
        if isinstance(module, torch.nn.BatchNorm2d):
            no_decay.update(id(p) for p in module.parameters())
        elif isinstance(module, AttentionFusion):
            no_decay.add(id(module.squeeze.bias))
            no_decay.add(id(module.excite.bias))
    decay_params = [p for p in net.parameters() if id(p) not in no_decay]
    plain_params = [p for p in net.parameters() if id(p) in no_decay]
    return torch.optim.SGD(
        [{"params": decay_params, "weight_decay": schedule.weight_decay},
         {"params": plain_params, "weight_decay": 0.0}],
        lr=schedule.base_lr, momentum=schedule.momentum)


def train(cfg: ModelConfig, schedule: TrainSchedule, train_samples: list[SceneSample],
          val_sets: dict | None = None, spec: QuantizationSpec | None = None,
          geometry: TargetGeometry | None = None, out_dir=None,
          val_every: int = 1, tile_width: int | None = None, augment: bool = True):
    """Run the two-phase SGD loop; returns (net, history rows).

    Fully deterministic for a fixed schedule.seed. History rows follow
    LOG_COLUMNS; validation metrics are filled every `val_every` epochs
    when val_sets (domain -> samples) is given. With augment=False every
    sample is preprocessed once without flip/scale jitter, so the same
    tensors repeat every epoch (the overfit-one-batch setting).
    """
    spec = spec or QuantizationSpec(0.25, 80.0, 150)
    geometry = geometry or TargetGeometry.toy()
    if tile_width is None:
        tile_width = geometry.net_width
    if not train_samples:
        raise ValueError("empty training set")

    torch.manual_seed(schedule.seed)
    net = DepthNet(cfg)
    optimizer = build_optimizer(net, schedule)

    if not augment:
        fixed_rng = np.random.default_rng([schedule.seed, 11])
        train_samples = [preprocess_train(s, geometry, rng=fixed_rng,
                                          flip=False, scale=1.0)
                         for s in train_samples]

    history = []
    step = 0
    for epoch in range(1, schedule.total_epochs + 1):
        lr = schedule.lr_at(epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        batches = shuffled_batches(train_samples, schedule.batch_size,
                                   seed=[schedule.seed, 7, epoch])
        aug_rng = np.random.default_rng([schedule.seed, 11, epoch])
        net.train()
        epoch_loss = 0.0
        for batch in batches:
            step += 1
            if augment:
                batch = [preprocess_train(s, geometry, rng=aug_rng) for s in batch]
            images, labels, logd, masks = batch_tensors(batch, spec)
            out, _ = net(images)
            if cfg.head == "classification":
                loss = classification_loss(out, labels, masks)
            else:
                loss = regression_loss(out, 10.0 ** logd, masks)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, step {step}")
            optimizer.zero_grad()
            loss.backward()
            if schedule.clip_grad_norm > 0:
                torch.nn.utils.clip_grad_norm_(net.parameters(), schedule.clip_grad_norm)
            optimizer.step()
            epoch_loss += loss.item()
        epoch_loss /= len(batches)

        row = {"epoch": epoch, "step": step, "lr": lr, "train_loss": epoch_loss,
               "absRel_indoor": "", "SILog_indoor": "",
               "absRel_outdoor": "", "SILog_outdoor": ""}
        if val_sets and val_every and epoch % val_every == 0:
            for domain, samples in val_sets.items():
                if not samples:
                    continue
                rep = evaluate_samples(net, samples, spec, tile_width,
                                       (geometry.net_height, geometry.net_width))
                row[f"absRel_{domain}"] = rep.absRel
                row[f"SILog_{domain}"] = rep.SILog
        history.append(row)

    net.eval()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out_dir / "checkpoint.npz", net,
                        extra={"epoch": schedule.total_epochs,
                               "lr": schedule.lr_at(schedule.total_epochs),
                               "seed": schedule.seed,
                               "schedule": asdict(schedule),
                               "spec": {"alpha": spec.alpha, "beta": spec.beta, "K": spec.K},
                               "geometry": asdict(geometry),
                               "tile_width": tile_width})
        write_history_csv(out_dir / "train_log.csv", history)
    return net, history


def write_history_csv(path, history: list[dict]) -> None:
    with open(path, "w") as f:
        f.write(",".join(LOG_COLUMNS) + "\n")
        for row in history:
            f.write(",".join(str(row[c]) for c in LOG_COLUMNS) + "\n")


def predict_depth_maps(net: DepthNet, samples: list[SceneSample],
                       spec: QuantizationSpec, tile_width: int,
                       net_hw: tuple[int, int]) -> list[np.ndarray]:
    return [tiled_inference(net, s.rgb, spec, tile_width, net_hw) for s in samples]


def evaluate_samples(net: DepthNet, samples: list[SceneSample],
                     spec: QuantizationSpec, tile_width: int,
                     net_hw: tuple[int, int]) -> metrics_mod.MetricReport:
    preds = predict_depth_maps(net, samples, spec, tile_width, net_hw)
    return metrics_mod.compute_metrics(preds, [s.depth for s in samples],
                                       [s.valid for s in samples])


def evaluate(net: DepthNet, samples: list[SceneSample], spec: QuantizationSpec,
             geometry: TargetGeometry, tile_width: int | None = None) -> dict:
    """Tiled-inference evaluation: per-domain and pooled reports plus confusion.

    Classification outputs decode through the soft-weighted sum,
    regression through 10**prediction; the confusion matrix re-quantizes
    the continuous decoded depth for either head.
    """
    if tile_width is None:
        tile_width = geometry.net_width
    net_hw = (geometry.net_height, geometry.net_width)
    by_domain: dict[str, list[SceneSample]] = {}
    for s in samples:
        by_domain.setdefault(s.domain, []).append(s)

    all_preds, all_gts, all_masks = [], [], []
    per_domain = {}
    confusion_per_domain = {}
    for domain in sorted(by_domain):
        subset = by_domain[domain]
        preds = predict_depth_maps(net, subset, spec, tile_width, net_hw)
        gts = [s.depth for s in subset]
        masks = [s.valid for s in subset]
        per_domain[domain] = metrics_mod.compute_metrics(preds, gts, masks)
        confusion_per_domain[domain] = metrics_mod.confusion_matrix(preds, gts, masks, spec)
        all_preds += preds
        all_gts += gts
        all_masks += masks

    combined = metrics_mod.compute_metrics(all_preds, all_gts, all_masks)
    confusion = metrics_mod.confusion_matrix(all_preds, all_gts, all_masks, spec)
    return {"per_domain": per_domain, "combined": combined,
            "confusion": confusion, "confusion_per_domain": confusion_per_domain}
