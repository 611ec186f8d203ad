"""Adversarial training: alternating obfuscator/deobfuscator updates.

Each batch runs two steps. Step A updates only the deobfuscator on the
reconstruction MSE of detached obfuscator outputs. Step B updates only the
obfuscator on (detection loss on the obfuscated frame) minus the weighted
reconstruction MSE, with the detector and the deobfuscator frozen but
differentiable. AdamW drives both players; learning rates decay stepwise
every `milestone_period` epochs (obfuscator by 100x, deobfuscator by 10x).
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .core import FrameManifest, ImageTensor, StructuralError, load_image, resolve_frame_path
from .detector import DetectorAdapter
from .models import (
    ModelHandle,
    MobileAutoencoder,
    AutoencoderSpec,
    images_to_tensor,
)

ROLE_OBF = "obfuscator"
ROLE_DEOBF = "deobfuscator"

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    """Training aborted (e.g. non-finite loss); message carries epoch/batch."""


class CheckpointError(RuntimeError):
    """A checkpoint is incompatible with the requested run."""


@dataclass(frozen=True)
class TrainSchedule:
    """Published hyperparameters; alternation granularity and batch size are
    declared defaults, not published values."""

    total_epochs: int = 30
    lr_obf_initial: float = 1e-2
    lr_deobf_initial: float = 1e-3
    milestone_period: int = 10
    obf_decay_factor: float = 100.0
    deobf_decay_factor: float = 10.0
    weight_decay: float = 1e-4
    batch_size: int = 16
    adversarial_weight: float = 1.0  # lambda on the reconstruction term
    alternation: str = "per-batch"  # "per-batch" | "per-epoch"

    def __post_init__(self):
        if self.lr_obf_initial <= 0 or self.lr_deobf_initial <= 0:
            raise ValueError("learning rates must be strictly positive")
        if self.adversarial_weight < 0:
            raise ValueError("adversarial weight must be >= 0")
        if self.total_epochs % self.milestone_period:
            raise ValueError("milestone_period must divide total_epochs")
        if self.alternation not in ("per-batch", "per-epoch"):
            raise ValueError(f"unknown alternation {self.alternation!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TrainSchedule":
        return TrainSchedule(**d)


def lr_at_epoch(schedule: TrainSchedule, epoch: int, role: str) -> float:
    """Stepwise-decayed learning rate for the given epoch and player."""
    if not 0 <= epoch < schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    n = epoch // schedule.milestone_period
    if role == ROLE_OBF:
        return schedule.lr_obf_initial / schedule.obf_decay_factor**n
    if role == ROLE_DEOBF:
        return schedule.lr_deobf_initial / schedule.deobf_decay_factor**n
    raise ValueError(f"unknown role {role!r}")


def deobfuscator_loss(x: Sequence[ImageTensor], x_hat: Sequence[ImageTensor]) -> float:
    """Mean squared error over all pixels and channels of the batch."""
    if len(x) != len(x_hat):
        raise StructuralError("batch length mismatch")
    total = 0.0
    for a, b in zip(x, x_hat):
        if a.values.shape != b.values.shape:
            raise StructuralError("image shape mismatch in batch")
        total += float(
            np.mean((a.values.astype(np.float64) - b.values.astype(np.float64)) ** 2)
        )
    return total / len(x)


def obfuscator_loss(
    obf_images: Sequence[ImageTensor],
    labels,
    x_hat: Sequence[ImageTensor],
    x: Sequence[ImageTensor],
    adapter: DetectorAdapter,
    adversarial_weight: float = 1.0,
) -> float:
    """Detection loss on the obfuscated frames minus the weighted MSE term."""
    batch = images_to_tensor(list(obf_images))
    l_obj = float(adapter.detection_loss_tensor(batch, list(labels)).detach())
    l_rec = deobfuscator_loss(x, x_hat)
    value = l_obj - adversarial_weight * l_rec
    if not math.isfinite(value):
        term = "detection" if not math.isfinite(l_obj) else "reconstruction"
        raise TrainingError(f"non-finite {term} term in obfuscator loss")
    return value


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss_deobf: float
    loss_obf: float
    loss_obj: float
    lr_obf: float
    lr_deobf: float
    wall_time: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    seed: int
    config_hash: str
    records: list[EpochRecord] = field(default_factory=list)

    def comparable(self) -> dict:
        """Everything except wall-clock times, for reproducibility checks."""
        return {
            "seed": self.seed,
            "config_hash": self.config_hash,
            "records": [
                {k: v for k, v in r.to_dict().items() if k != "wall_time"}
                for r in self.records
            ],
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                json.dumps({"seed": self.seed, "config_hash": self.config_hash}) + "\n"
            )
            for r in self.records:
                fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")

    @staticmethod
    def load(path) -> "TrainHistory":
        with open(path, "r", encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            records = [EpochRecord(**json.loads(line)) for line in fh if line.strip()]
        return TrainHistory(header["seed"], header["config_hash"], records)


def schedule_config_hash(schedule: TrainSchedule, seed: int) -> str:
    payload = json.dumps({"schedule": schedule.to_dict(), "seed": seed}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def _mse_t(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return torch.mean((a - b) ** 2)


def checkpoint(state: dict, path) -> None:
    torch.save(state, path)


def resume(path, expected_config_hash: Optional[str] = None) -> dict:
    state = torch.load(path, weights_only=True)
    if state.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version")
    if expected_config_hash is not None and state["config_hash"] != expected_config_hash:
        raise CheckpointError(
            f"{path}: config hash mismatch "
            f"({state['config_hash'][:12]} vs {expected_config_hash[:12]}); "
            "refusing to resume with a different configuration"
        )
    return state


def train_adversarial(
    obf: ModelHandle,
    deobf: ModelHandle,
    adapter: DetectorAdapter,
    manifest: FrameManifest,
    base_dir,
    schedule: TrainSchedule,
    seed: int,
    checkpoint_path=None,
    resume_from=None,
    config_hash: Optional[str] = None,
    debug_isolation_hook=None,
) -> tuple[ModelHandle, ModelHandle, TrainHistory]:
    """Run the alternating minimax loop over the manifest's labeled train split.

    Batch order is a pure function of (seed, epoch), so results do not depend
    on data-loading parallelism. `debug_isolation_hook`, if given, is called
    after every player step with (step_name, obf, deobf) for checksum checks.
    """
    if config_hash is None:
        config_hash = schedule_config_hash(schedule, seed)

    records = [r for r in manifest.subset(split="train") if r.labels is not None]
    if not records:
        raise TrainingError("no labeled train frames in manifest")
    images = [load_image(resolve_frame_path(r, base_dir)) for r in records]
    tensors = images_to_tensor(images)
    labels = [r.labels for r in records]

    opt_obf = torch.optim.AdamW(
        obf.module.parameters(),
        lr=schedule.lr_obf_initial,
        weight_decay=schedule.weight_decay,
    )
    opt_deobf = torch.optim.AdamW(
        deobf.module.parameters(),
        lr=schedule.lr_deobf_initial,
        weight_decay=schedule.weight_decay,
    )

    history = TrainHistory(seed=seed, config_hash=config_hash)
    start_epoch = 0
    if resume_from is not None:
        state = resume(resume_from, expected_config_hash=config_hash)
        obf.module.load_state_dict(state["obf_state"])
        deobf.module.load_state_dict(state["deobf_state"])
        opt_obf.load_state_dict(state["opt_obf"])
        opt_deobf.load_state_dict(state["opt_deobf"])
        history.records = [EpochRecord(**r) for r in state["history"]]
        start_epoch = state["epoch_completed"]
        torch.set_rng_state(state["torch_rng"])

    # detector is pretrained and frozen for the whole adversarial run
    det_module = getattr(adapter, "module", None)
    saved_flags = []
    if det_module is not None:
        for p in det_module.parameters():
            saved_flags.append(p.requires_grad)
            p.requires_grad_(False)

    lam = schedule.adversarial_weight
    n = len(records)
    try:
        for epoch in range(start_epoch, schedule.total_epochs):
            t0 = time.monotonic()
            lr_o = lr_at_epoch(schedule, epoch, ROLE_OBF)
            lr_d = lr_at_epoch(schedule, epoch, ROLE_DEOBF)
            for g in opt_obf.param_groups:
                g["lr"] = lr_o
            for g in opt_deobf.param_groups:
                g["lr"] = lr_d

            if schedule.alternation == "per-batch":
                do_deobf = do_obf = True
            else:
                do_deobf = epoch % 2 == 0
                do_obf = not do_deobf

            order = np.random.default_rng([seed, epoch]).permutation(n)
            sum_d = sum_o = sum_obj = 0.0
            n_batches = 0
            for start in range(0, n, schedule.batch_size):
                idx = order[start : start + schedule.batch_size]
                x = tensors[idx]
                y = [labels[k] for k in idx]

                # step A: deobfuscator descends on MSE(X, D(O(X))), O frozen
                obf.module.eval()
                with torch.no_grad():
                    xo = obf.module(x)
                deobf.module.train()
                x_hat = deobf.module(xo)
                loss_d = _mse_t(x, x_hat)
                _check_finite(loss_d, "deobfuscator", epoch, n_batches)
                if do_deobf:
                    opt_deobf.zero_grad()
                    loss_d.backward()
                    opt_deobf.step()
                if debug_isolation_hook is not None:
                    debug_isolation_hook("deobf-step", obf, deobf)

                # step B: obfuscator descends on L_obj(O(X), Y) - lam*MSE,
                # detector and deobfuscator frozen but differentiable
                obf.module.train()
                xo = obf.module(x)
                l_obj = adapter.detection_loss_tensor(xo, y)
                deobf.module.eval()
                for p in deobf.module.parameters():
                    p.requires_grad_(False)
                x_hat = deobf.module(xo)
                loss_o = l_obj - lam * _mse_t(x, x_hat)
                _check_finite(loss_o, "obfuscator", epoch, n_batches)
                if do_obf:
                    opt_obf.zero_grad()
                    loss_o.backward()
                    opt_obf.step()
                for p in deobf.module.parameters():
                    p.requires_grad_(True)
                if debug_isolation_hook is not None:
                    debug_isolation_hook("obf-step", obf, deobf)

                sum_d += float(loss_d.detach())
                sum_o += float(loss_o.detach())
                sum_obj += float(l_obj.detach())
                n_batches += 1

            history.records.append(
                EpochRecord(
                    epoch=epoch,
                    loss_deobf=sum_d / n_batches,
                    loss_obf=sum_o / n_batches,
                    loss_obj=sum_obj / n_batches,
                    lr_obf=lr_o,
                    lr_deobf=lr_d,
                    wall_time=time.monotonic() - t0,
                )
            )
            if checkpoint_path is not None:
                checkpoint(
                    {
                        "version": CHECKPOINT_VERSION,
                        "config_hash": config_hash,
                        "epoch_completed": epoch + 1,
                        "obf_state": obf.module.state_dict(),
                        "deobf_state": deobf.module.state_dict(),
                        "opt_obf": opt_obf.state_dict(),
                        "opt_deobf": opt_deobf.state_dict(),
                        "history": [r.to_dict() for r in history.records],
                        "torch_rng": torch.get_rng_state(),
                    },
                    checkpoint_path,
                )
    finally:
        if det_module is not None:
            for p, flag in zip(det_module.parameters(), saved_flags):
                p.requires_grad_(flag)

    obf.eval()
    deobf.eval()
    return obf, deobf, history


def _check_finite(loss: torch.Tensor, player: str, epoch: int, batch: int) -> None:
    if not torch.isfinite(loss):
        raise TrainingError(
            f"non-finite {player} loss at epoch {epoch}, batch {batch}; aborting"
        )
