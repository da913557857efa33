"""Classifier training/inference harness with a small CNN reference backend
and gradient-weighted attention maps.

The reference network is a few conv/pool stages with a global-average-pooled
linear head: big enough to learn the synthetic benchmarks on a CPU, small
enough to keep experiments in minutes. Larger architectures plug in behind
the same backend interface.

Training refuses to start without a clean leakage audit for the split that
produced the dataset; that precondition is the point of the whole split
machinery, so it is enforced in code rather than documentation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol

import numpy as np
import torch
from torch import nn

from .augment import AugmentationConfig, augment_image, mixup
from .split import AuditResult


class UnauditedSplitError(RuntimeError):
    """Raised when training is attempted without a (clean) leakage audit."""


@dataclass
class TrainConfig:
    input_side: int = 1024
    epochs: int = 30
    batch_size: int = 64
    optimizer: str = "sgd"
    learning_rate: float = 0.01
    momentum: float = 0.9
    augmentation: Optional[AugmentationConfig] = None
    seed: int = 0
    conv_channels: tuple[int, ...] = (16, 32, 64)

    def __post_init__(self):
        if self.input_side <= 0 or self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("input_side, epochs, batch_size must be positive")
        if self.optimizer != "sgd":
            raise ValueError(f"unsupported optimizer: {self.optimizer}")

    def to_json(self) -> dict:
        return {
            "input_side": self.input_side, "epochs": self.epochs,
            "batch_size": self.batch_size, "optimizer": self.optimizer,
            "learning_rate": self.learning_rate, "momentum": self.momentum,
            "augmentation": self.augmentation.to_json() if self.augmentation else None,
            "seed": self.seed, "conv_channels": list(self.conv_channels),
        }


@dataclass
class LabeledDataset:
    images: np.ndarray            # (N, side, side, 3) uint8
    labels: list[str]
    class_order: list[str]
    audit: Optional[AuditResult] = None

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels length mismatch")
        missing = sorted(set(self.labels) - set(self.class_order))
        if missing:
            raise ValueError(f"labels outside class order: {missing}")
        empty = [c for c in self.class_order if c not in set(self.labels)]
        if empty:
            raise ValueError(f"classes with no samples: {empty}")

    def one_hot(self) -> np.ndarray:
        index = {c: i for i, c in enumerate(self.class_order)}
        out = np.zeros((len(self.labels), len(self.class_order)), dtype=np.float32)
        for i, lab in enumerate(self.labels):
            out[i, index[lab]] = 1.0
        return out


class ClassifierBackend(Protocol):
    def fit(self, dataset: LabeledDataset, config: TrainConfig) -> "SmallCnnClassifier": ...
    def predict_proba(self, image: np.ndarray) -> np.ndarray: ...
    def activation_and_gradient(self, image: np.ndarray, class_index: int
                                ) -> tuple[np.ndarray, np.ndarray]: ...


class _ConvNet(nn.Module):
    def __init__(self, num_classes: int, channels: tuple[int, ...]):
        super().__init__()
        layers: list[nn.Module] = []
        in_c = 3
        for c in channels:
            layers += [nn.Conv2d(in_c, c, 3, padding=1), nn.ReLU(),
                       nn.MaxPool2d(2)]
            in_c = c
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(in_c, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        f = self.features(x)
        return self.head(f.mean(dim=(2, 3)))


def _to_tensor(images: np.ndarray) -> torch.Tensor:
    arr = np.asarray(images, dtype=np.float32)
    if arr.max() > 1.5:
        arr = arr / 255.0
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


class SmallCnnClassifier:
    """Trainable reference backend; a trained instance is immutable in use."""

    def __init__(self):
        self.net: Optional[_ConvNet] = None
        self.class_order: list[str] = []
        self.input_side: int = 0
        self.config: Optional[TrainConfig] = None
        self.train_log: list[dict] = []

    def fit(self, dataset: LabeledDataset, config: TrainConfig) -> "SmallCnnClassifier":
        torch.manual_seed(config.seed)
        torch.use_deterministic_algorithms(True)
        rng = np.random.default_rng(config.seed)

        self.class_order = list(dataset.class_order)
        self.input_side = dataset.images.shape[1]
        self.config = config
        self.net = _ConvNet(len(self.class_order), config.conv_channels)
        opt = torch.optim.SGD(self.net.parameters(), lr=config.learning_rate,
                              momentum=config.momentum)
        labels = dataset.one_hot()
        n = len(dataset.labels)
        aug = config.augmentation
        self.train_log = []

        self.net.train()
        for epoch in range(config.epochs):
            order = rng.permutation(n)
            losses, correct = [], 0
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                imgs = dataset.images[idx].astype(np.float32)
                labs = labels[idx]
                if aug is not None:
                    imgs = np.stack([augment_image(im.astype(np.uint8), aug, rng)
                                     for im in imgs]).astype(np.float32)
                    if aug.mixup_enabled and len(idx) > 1:
                        perm = rng.permutation(len(idx))
                        imgs, labs, _ = mixup((imgs, labs), (imgs[perm], labs[perm]),
                                              alpha=aug.mixup_alpha, rng=rng,
                                              mode=aug.mixup_lambda_mode)
                x = _to_tensor(imgs)
                y = torch.from_numpy(np.asarray(labs, dtype=np.float32))
                opt.zero_grad()
                logits = self.net(x)
                loss = -(y * torch.log_softmax(logits, dim=1)).sum(dim=1).mean()
                loss.backward()
                opt.step()
                losses.append(float(loss.item()))
                correct += int((logits.argmax(1) == y.argmax(1)).sum().item())
            self.train_log.append({"epoch": epoch, "loss": float(np.mean(losses)),
                                   "train_accuracy": correct / n})
        self.net.eval()
        return self

    def _check_ready(self):
        if self.net is None:
            raise RuntimeError("model not trained or loaded")

    def _prepare(self, image: np.ndarray) -> torch.Tensor:
        img = np.asarray(image)
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        if img.shape[0] != self.input_side or img.shape[1] != self.input_side:
            raise ValueError(f"expected {self.input_side}px square input, "
                             f"got {img.shape[:2]}")
        return _to_tensor(img[None])

    def predict_proba(self, image: np.ndarray) -> np.ndarray:
        self._check_ready()
        with torch.no_grad():
            logits = self.net(self._prepare(image))
            return torch.softmax(logits[0], dim=0).numpy()

    def activation_and_gradient(self, image: np.ndarray, class_index: int
                                ) -> tuple[np.ndarray, np.ndarray]:
        self._check_ready()
        x = self._prepare(image)
        feats: list[torch.Tensor] = []

        def hook(_mod, _inp, out):
            feats.append(out)

        handle = self.net.features.register_forward_hook(hook)
        try:
            self.net.zero_grad(set_to_none=True)
            logits = self.net(x)
            score = logits[0, class_index]
            activation = feats[0]
            grads = torch.autograd.grad(score, activation, retain_graph=False)[0]
        finally:
            handle.remove()
        return (activation[0].detach().numpy(), grads[0].detach().numpy())

    def weights_hash(self) -> str:
        self._check_ready()
        h = hashlib.sha256()
        for key in sorted(self.net.state_dict()):
            h.update(key.encode())
            h.update(self.net.state_dict()[key].numpy().tobytes())
        return h.hexdigest()

    def save(self, directory: Path, scheme_hash: str = "",
             audit_hash: str = "") -> None:
        self._check_ready()
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        torch.save(self.net.state_dict(), directory / "weights.pt")
        meta = {
            "class_order": self.class_order,
            "input_side": self.input_side,
            "train_config": self.config.to_json() if self.config else None,
            "scheme_hash": scheme_hash,
            "audit_hash": audit_hash,
            "weights_hash": self.weights_hash(),
            "train_log": self.train_log,
        }
        (directory / "metadata.json").write_text(
            json.dumps(meta, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory: Path) -> "SmallCnnClassifier":
        directory = Path(directory)
        meta = json.loads((directory / "metadata.json").read_text(encoding="utf-8"))
        model = cls()
        model.class_order = meta["class_order"]
        model.input_side = meta["input_side"]
        cfg = meta.get("train_config")
        channels = tuple(cfg["conv_channels"]) if cfg else (16, 32, 64)
        model.net = _ConvNet(len(model.class_order), channels)
        model.net.load_state_dict(torch.load(directory / "weights.pt",
                                             weights_only=True))
        model.net.eval()
        model.train_log = meta.get("train_log", [])
        return model


def train(dataset: LabeledDataset, config: TrainConfig,
          backend: Optional[SmallCnnClassifier] = None,
          scheme_hash: str = "") -> tuple[SmallCnnClassifier, list[dict]]:
    """Train a classifier, but only on an audited, leakage-clean split."""
    if dataset.audit is None:
        raise UnauditedSplitError("refusing to train: no leakage audit for the split")
    if not dataset.audit.is_clean:
        raise UnauditedSplitError(
            f"refusing to train: audit reports {len(dataset.audit.violations)} "
            "leakage violations")
    backend = backend or SmallCnnClassifier()
    model = backend.fit(dataset, config)
    return model, model.train_log


def predict(model: SmallCnnClassifier, image: np.ndarray,
            k: Optional[int] = None) -> list[tuple[str, float]]:
    """Ranked (class, probability), ties broken by class name."""
    probs = model.predict_proba(image)
    ranked = sorted(zip(model.class_order, probs.tolist()),
                    key=lambda cp: (-cp[1], cp[0]))
    return ranked[:k] if k else ranked


def gradcam(model: SmallCnnClassifier, image: np.ndarray,
            target_class: str) -> np.ndarray:
    """Channel-weighted, rectified, max-normalized activation map, upsampled
    to the input's spatial size. All-zero maps pass through unnormalized."""
    if target_class not in model.class_order:
        raise ValueError(f"unknown class: {target_class}")
    idx = model.class_order.index(target_class)
    activation, grads = model.activation_and_gradient(image, idx)
    weights = grads.mean(axis=(1, 2))
    cam = np.maximum((weights[:, None, None] * activation).sum(axis=0), 0.0)
    side = image.shape[0]
    cam_t = torch.from_numpy(cam[None, None].astype(np.float32))
    up = torch.nn.functional.interpolate(
        cam_t, size=(side, image.shape[1]), mode="bilinear",
        align_corners=False)[0, 0].numpy()
    peak = up.max()
    if peak > 0:
        up = up / peak
    return np.clip(up, 0.0, 1.0)
