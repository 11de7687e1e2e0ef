"""Policy-gradient training with a stop-gradient greedy baseline, supervised
warm-up, ablation switches, and viewer personalization.

The gradient estimate per example is -(r(sample) - r(greedy)) * grad log pi
of the sampled path; the baseline rollout never carries gradients (rewards
are computed outside the graph).
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .core import Dataset, DisplayConfig, Scanpath, StimulusImage, truncate_or_reject
from .metrics import dtw
from .model import INDIVIDUAL, PolicyModel
from .reward import (
    IorGeometry,
    RewardFlags,
    SaliencyMap,
    build_empirical_saliency,
    episode_reward,
    ior_geometry,
    read_saliency_grid,
)

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    """Raised when a step produces a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    epochs: int = 10
    warmup_epochs: int = 2
    seed: int = 0
    path_length: int = 8
    use_rl: bool = True
    use_r_sal: bool = True
    use_r_dtwd: bool = True
    use_ior: bool = True
    salient_weight: float = 1.0
    dtwd_weight: float = 1.0
    grad_clip: float = 5.0
    baseline_samples: int = 0  # 0 = greedy-mean baseline, n > 0 = mean of n sampled rewards
    eval_every: int = 1  # epochs between held-out evaluations

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("learning rate, batch size, and epochs must be positive")
        if self.use_rl and not (self.use_r_sal or self.use_r_dtwd):
            raise ValueError("reinforcement training needs at least one active reward term")

    def reward_flags(self) -> RewardFlags:
        return RewardFlags(
            use_salient=self.use_r_sal,
            use_dtwd=self.use_r_dtwd,
            use_ior=self.use_ior,
            salient_weight=self.salient_weight,
            dtwd_weight=self.dtwd_weight,
        )


ABLATION_ARMS = ("full", "no-rl", "no-sal", "no-dtwd", "no-ior")


def ablation_config(arm: str, base: TrainConfig) -> TrainConfig:
    """One flag configuration per ablation arm."""
    overrides = {
        "full": {},
        "no-rl": {"use_rl": False},
        "no-sal": {"use_r_sal": False},
        "no-dtwd": {"use_r_dtwd": False},
        "no-ior": {"use_ior": False},
    }
    if arm not in overrides:
        raise ValueError(f"unknown ablation arm {arm!r}; expected one of {ABLATION_ARMS}")
    return TrainConfig(**{**asdict(base), **overrides[arm]})


@dataclass(frozen=True)
class ReinforceStats:
    reward: float
    baseline: float
    grad_norm: float
    dtwd_mean: float
    salient_mean: float

    @property
    def advantage(self) -> float:
        return self.reward - self.baseline


@dataclass(frozen=True)
class PersonalizationConfig:
    n_path: int = 50
    steps: int = 150
    learning_rate: float = 3e-3
    freeze_policy: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_path < 1:
            raise ValueError("n_path must be >= 1")


# ---------------------------------------------------------------------------
# Environment providers: per-stimulus saliency + inhibition geometry.
# ---------------------------------------------------------------------------


class EnvProvider(Protocol):
    def env_for(self, stimulus_id: str) -> tuple[SaliencyMap, IorGeometry]: ...


def saliency_sigma(display: DisplayConfig, image: StimulusImage, input_w: int, input_h: int, angle_deg: float = 1.0) -> float:
    """Isotropic blur radius on the input grid equivalent to ``angle_deg`` of
    visual angle (axis scales averaged)."""
    per_cm = display.px_per_cm or 38.0
    distance = display.viewing_distance_cm or 60.0
    display_px = 2.0 * distance * math.tan(math.radians(angle_deg) / 2.0) * per_cm
    scale = min(display.width / image.width, display.height / image.height)
    image_px = display_px / scale
    return 0.5 * (input_w / image.width + input_h / image.height) * image_px


class EmpiricalEnvProvider:
    """Saliency from the training viewers' fixation density, blurred to one
    visual degree; geometry from the display config. Maps are cached."""

    def __init__(
        self,
        dataset: Dataset,
        display: DisplayConfig,
        input_w: int,
        input_h: int,
        blur_angle_deg: float = 1.0,
    ):
        self.dataset = dataset
        self.display = display
        self.input_w = input_w
        self.input_h = input_h
        self.blur_angle_deg = blur_angle_deg
        self._cache: dict[str, tuple[SaliencyMap, IorGeometry]] = {}

    def env_for(self, stimulus_id: str) -> tuple[SaliencyMap, IorGeometry]:
        if stimulus_id not in self._cache:
            image = self.dataset.stimuli[stimulus_id]
            train_viewers = set(self.dataset.split_viewers("train"))
            paths = self.dataset.scanpaths_for(stimulus_id, train_viewers or None)
            if not paths:  # stimulus without train-viewer data: use all paths
                paths = self.dataset.scanpaths_for(stimulus_id)
            points = [(f.x, f.y) for sp in paths for f in sp.fixations]
            sigma = saliency_sigma(self.display, image, self.input_w, self.input_h, self.blur_angle_deg)
            saliency = build_empirical_saliency(points, self.input_w, self.input_h, sigma)
            geom = ior_geometry(self.display, image, self.input_w, self.input_h)
            self._cache[stimulus_id] = (saliency, geom)
        return self._cache[stimulus_id]


class GridFileEnvProvider:
    """Reads externally produced saliency grids (<stimulus>.salg files)."""

    def __init__(self, directory: Path | str, dataset: Dataset, display: DisplayConfig, input_w: int, input_h: int):
        self.directory = Path(directory)
        self.dataset = dataset
        self.display = display
        self.input_w = input_w
        self.input_h = input_h

    def env_for(self, stimulus_id: str) -> tuple[SaliencyMap, IorGeometry]:
        saliency = read_saliency_grid(self.directory / f"{stimulus_id}.salg")
        if (saliency.input_w, saliency.input_h) != (self.input_w, self.input_h):
            raise ValueError(
                f"saliency grid for {stimulus_id!r} is {saliency.input_w}x{saliency.input_h}, "
                f"model expects {self.input_w}x{self.input_h}"
            )
        geom = ior_geometry(self.display, self.dataset.stimuli[stimulus_id], self.input_w, self.input_h)
        return saliency, geom


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------


@dataclass
class Example:
    scanpath: Scanpath
    image_tensor: torch.Tensor
    stimulus_id: str
    viewer: Optional[str] = None


def build_examples(model: PolicyModel, dataset: Dataset, path_length: int, with_viewers: bool) -> list[Example]:
    cache: dict[str, torch.Tensor] = {}
    out = []
    for sp in dataset.training_examples(path_length):
        if sp.stimulus_id not in cache:
            cache[sp.stimulus_id] = model.prepare_image(dataset.stimuli[sp.stimulus_id])
        out.append(
            Example(
                scanpath=sp,
                image_tensor=cache[sp.stimulus_id],
                stimulus_id=sp.stimulus_id,
                viewer=sp.viewer_id if with_viewers else None,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------


def supervised_loss(model: PolicyModel, batch: list[Example]) -> torch.Tensor:
    """Summed teacher-forced NLL of ground-truth fixations 2..T."""
    total = torch.zeros((), dtype=torch.float64)
    for ex in batch:
        total = total - model.path_log_prob(ex.scanpath, ex.image_tensor, ex.viewer)
    return total


def supervised_step(
    model: PolicyModel,
    batch: list[Example],
    cfg: TrainConfig,
    optimizer: torch.optim.Optimizer,
) -> float:
    optimizer.zero_grad()
    loss = supervised_loss(model, batch) / len(batch)
    if not torch.isfinite(loss):
        raise TrainingAborted(f"non-finite supervised loss {float(loss)}")
    loss.backward()
    _clip(model, cfg.grad_clip)
    optimizer.step()
    return float(loss.detach())


def reinforce_step(
    model: PolicyModel,
    batch: list[Example],
    truths: dict[str, Scanpath] | Callable[[Example], Scanpath],
    env: EnvProvider,
    cfg: TrainConfig,
    optimizer: torch.optim.Optimizer,
    rng: np.random.Generator,
) -> ReinforceStats:
    """One REINFORCE update over the batch.

    Each example contributes a single Monte-Carlo sample; the baseline is the
    reward of the gradient-blocked greedy rollout (or a mean of sampled
    rewards when ``baseline_samples`` > 0).
    """
    flags = cfg.reward_flags()
    optimizer.zero_grad()
    loss = torch.zeros((), dtype=torch.float64)
    rewards, baselines, dtwds, salients = [], [], [], []
    for ex in batch:
        gt = truths(ex) if callable(truths) else truths[ex.stimulus_id]
        saliency, geom = env.env_for(ex.stimulus_id)
        sample = model.rollout(ex.image_tensor, ex.viewer, mode="sample", seed=int(rng.integers(2**31)), stimulus_id=ex.stimulus_id)
        breakdown = episode_reward(sample.scanpath, gt, saliency, geom, flags)
        reward = breakdown.total

        if cfg.baseline_samples > 0:
            base_rewards = []
            for _ in range(cfg.baseline_samples):
                extra = model.rollout(ex.image_tensor, ex.viewer, mode="sample", seed=int(rng.integers(2**31)), stimulus_id=ex.stimulus_id)
                base_rewards.append(episode_reward(extra.scanpath, gt, saliency, geom, flags).total)
            baseline = float(np.mean(base_rewards))
        else:
            greedy = model.rollout(ex.image_tensor, ex.viewer, mode="greedy", stimulus_id=ex.stimulus_id)
            baseline = episode_reward(greedy.scanpath, gt, saliency, geom, flags).total

        log_prob = model.path_log_prob(sample.scanpath, ex.image_tensor, ex.viewer)
        loss = loss - (reward - baseline) * log_prob
        rewards.append(reward)
        baselines.append(baseline)
        dtwds.append(breakdown.dtwd_cost)
        salients.append(sum(breakdown.salient_values))

    loss = loss / len(batch)
    if not torch.isfinite(loss):
        raise TrainingAborted(f"non-finite reinforce loss {float(loss)}")
    loss.backward()
    grad_norm = _clip(model, cfg.grad_clip)
    optimizer.step()
    return ReinforceStats(
        reward=float(np.mean(rewards)),
        baseline=float(np.mean(baselines)),
        grad_norm=grad_norm,
        dtwd_mean=float(np.mean(dtwds)),
        salient_mean=float(np.mean(salients)),
    )


def _clip(model: PolicyModel, max_norm: float) -> float:
    params = [p for p in model.all_parameters() if p.grad is not None]
    return float(torch.nn.utils.clip_grad_norm_(params, max_norm))


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    best_checkpoint: Path
    final_checkpoint: Path
    log_path: Path
    best_val_dtw: Optional[float] = None
    history: list[dict] = field(default_factory=list)


def predict_test_set(model: PolicyModel, dataset: Dataset, viewer: Optional[str] = None) -> dict[str, Scanpath]:
    images = dataset.split_images("test") or list(dataset.stimuli)
    return {
        sid: model.rollout(dataset.stimuli[sid], viewer, mode="greedy", stimulus_id=sid).scanpath
        for sid in images
    }


def validation_dtw(model: PolicyModel, dataset: Dataset) -> float:
    """Mean DTW of greedy population predictions against held-out truths."""
    predictions = predict_test_set(model, dataset)
    values = []
    for sid, pred in predictions.items():
        for gt in dataset.scanpaths_for(sid):
            values.append(dtw(pred, gt))
    if not values:
        raise ValueError("no (prediction, truth) pairs for validation")
    return float(np.mean(values))


def train(
    model: PolicyModel,
    dataset: Dataset,
    env: EnvProvider,
    cfg: TrainConfig,
    out_dir: Path | str,
) -> TrainResult:
    """Optional supervised warm-up, then REINFORCE epochs; evaluates on the
    held-out image split and keeps the checkpoint with the best DTW."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "metrics.jsonl"
    best_path = out / "best.ckpt"
    final_path = out / "final.ckpt"

    with_viewers = model.cfg.mode == INDIVIDUAL
    examples = build_examples(model, dataset, cfg.path_length, with_viewers)
    if not examples:
        raise ValueError("empty training split")
    if with_viewers:
        for ex in examples:
            if ex.viewer is not None and ex.viewer not in model.viewer_embeddings:
                model.register_viewer(ex.viewer, seed=stable_seed(ex.viewer, cfg.seed))

    truths = lambda ex: ex.scanpath  # each example is scored against its own viewer's path
    optimizer = torch.optim.Adam(list(model.all_parameters()), lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)

    history: list[dict] = []
    best_val = None
    step = 0
    started = time.monotonic()
    with open(log_path, "w", encoding="utf-8") as log_file:

        def emit(record: dict) -> None:
            history.append(record)
            log_file.write(json.dumps(record, sort_keys=True) + "\n")
            log_file.flush()

        supervised_epochs = cfg.epochs if not cfg.use_rl else cfg.warmup_epochs
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(examples))
            phase = "supervised" if epoch < supervised_epochs else "reinforce"
            epoch_stats: list[float] = []
            for start in range(0, len(examples), cfg.batch_size):
                batch = [examples[i] for i in order[start : start + cfg.batch_size]]
                if phase == "supervised":
                    loss = supervised_step(model, batch, cfg, optimizer)
                    emit({"step": step, "epoch": epoch, "phase": phase, "loss": loss})
                    epoch_stats.append(loss)
                else:
                    stats = reinforce_step(model, batch, truths, env, cfg, optimizer, rng)
                    emit(
                        {
                            "step": step,
                            "epoch": epoch,
                            "phase": phase,
                            "reward": stats.reward,
                            "baseline": stats.baseline,
                            "advantage": stats.advantage,
                            "grad_norm": stats.grad_norm,
                            "dtwd": stats.dtwd_mean,
                            "salient": stats.salient_mean,
                        }
                    )
                    epoch_stats.append(stats.reward)
                step += 1

            if cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
                val = validation_dtw(model, dataset)
                emit({"step": step, "epoch": epoch, "phase": "eval", "val_dtw": val})
                if best_val is None or val < best_val:
                    best_val = val
                    save_checkpoint(model, best_path, train_config=asdict(cfg))
            log.info("epoch %d (%s): %.4f [%.1fs]", epoch, phase, float(np.mean(epoch_stats)), time.monotonic() - started)

    save_checkpoint(model, final_path, train_config=asdict(cfg))
    if best_val is None:
        save_checkpoint(model, best_path, train_config=asdict(cfg))
    return TrainResult(
        best_checkpoint=best_path,
        final_checkpoint=final_path,
        log_path=log_path,
        best_val_dtw=best_val,
        history=history,
    )


def stable_seed(key: str, base: int) -> int:
    digest = 0
    for ch in key:
        digest = (digest * 131 + ord(ch)) % (2**31)
    return (digest ^ base) % (2**31)


# ---------------------------------------------------------------------------
# Personalization: fit a fresh viewer embedding from a few scanpaths.
# ---------------------------------------------------------------------------


def personalize(
    model: PolicyModel,
    viewer_id: str,
    scanpaths: list[Scanpath],
    images: dict[str, StimulusImage],
    pcfg: PersonalizationConfig = PersonalizationConfig(),
) -> torch.Tensor:
    """Optimize a new viewer embedding by supervised NLL on the samples.

    With ``freeze_policy`` (default) every other parameter stays untouched.
    Returns the embedding, registered on the model under ``viewer_id``.
    """
    if model.cfg.mode != INDIVIDUAL:
        raise ValueError("personalization requires an individual-mode model")
    if not scanpaths:
        raise ValueError("personalization needs at least one scanpath")

    usable: list[Example] = []
    for sp in scanpaths[: pcfg.n_path]:
        if sp.stimulus_id not in images:
            raise ValueError(f"scanpath stimulus {sp.stimulus_id!r} has no image")
        kept = truncate_or_reject(sp, model.cfg.path_length)
        if kept is not None:
            usable.append(
                Example(
                    scanpath=kept,
                    image_tensor=model.prepare_image(images[sp.stimulus_id]),
                    stimulus_id=sp.stimulus_id,
                )
            )
    if not usable:
        raise ValueError(f"no sample reaches the model path length {model.cfg.path_length}")

    embedding = model.new_viewer_embedding(seed=stable_seed(viewer_id, pcfg.seed))
    params: list[torch.Tensor] = [embedding]
    if not pcfg.freeze_policy:
        params += list(model.parameters())
    optimizer = torch.optim.Adam(params, lr=pcfg.learning_rate)

    for _ in range(pcfg.steps):
        optimizer.zero_grad()
        loss = torch.zeros((), dtype=torch.float64)
        for ex in usable:
            loss = loss - model.path_log_prob(ex.scanpath, ex.image_tensor, embedding)
        loss = loss / len(usable)
        if not torch.isfinite(loss):
            raise TrainingAborted(f"non-finite personalization loss {float(loss)}")
        loss.backward()
        torch.nn.utils.clip_grad_norm_(params, 5.0)
        optimizer.step()

    model.register_viewer(viewer_id, embedding.detach().requires_grad_(True))
    return model.viewer_embeddings[viewer_id]
