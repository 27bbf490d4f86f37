"""Two-phase training: separate initialization of the pose and depth-GAN
modules, then joint adversarial fine-tuning without paired depth."""

from __future__ import annotations

import json
import logging
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .config import ExperimentConfig, config_from_dict
from .dataio import (
    DepthPool,
    HandSample,
    bone_length,
    crop_hand,
    image_to_heatmap_coords,
    make_heatmap_targets,
    normalize_depth,
    relative_depths,
)
from .depthgan import (
    Discriminator,
    Generator,
    build_discriminator,
    build_generator,
    gan_loss_discriminator,
    gan_loss_generator,
)
from .errors import (
    CheckpointError,
    ConfigMismatchError,
    EmptyPoolError,
    MissingDepthError,
    MissingInitError,
)
from .posenet import LossWeights, PoseNet, build_posenet, loss_2d, loss_dep, loss_z, task_loss

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = "dggan-ckpt-1"
PHASES = ("init_pose", "init_gan", "joint")
LOG_FIELDS = ("step", "phase", "total", "task", "loss_2d", "loss_z", "loss_dep", "gan_g", "gan_d")


def seed_everything(seed: int, deterministic: bool = True) -> None:
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)
        torch.set_num_threads(1)


@dataclass
class TrainState:
    config: ExperimentConfig
    pose: PoseNet
    generator: Generator
    discriminator: Discriminator
    opt_pose: torch.optim.Optimizer
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    rng: np.random.Generator
    phase: str = "init_pose"
    step: int = 0
    completed: list[str] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)

    def networks(self):
        return {"pose": self.pose, "generator": self.generator, "discriminator": self.discriminator}

    def optimizers(self):
        return {"pose": self.opt_pose, "generator": self.opt_g, "discriminator": self.opt_d}

    def enter(self, phase: str) -> None:
        if self.phase != phase:
            self.phase = phase
            self.step = 0


def new_state(config: ExperimentConfig) -> TrainState:
    t = config.train
    seed_everything(t.seed, t.deterministic)
    pose = build_posenet(config.model)
    gen = build_generator(config.model)
    disc = build_discriminator(config.model)
    betas = tuple(t.betas)
    return TrainState(
        config=config,
        pose=pose,
        generator=gen,
        discriminator=disc,
        opt_pose=torch.optim.Adam(pose.parameters(), lr=t.lr_pose, betas=betas),
        opt_g=torch.optim.Adam(gen.parameters(), lr=t.lr_generator, betas=betas),
        opt_d=torch.optim.Adam(disc.parameters(), lr=t.lr_discriminator, betas=betas),
        rng=np.random.default_rng(t.seed),
    )


# --------------------------------------------------------------------------- data


@dataclass
class PoseTensors:
    """Stacked network inputs and targets for a fixed list of samples."""

    ids: list[str]
    rgb: torch.Tensor
    heatmaps: torch.Tensor
    z_star: torch.Tensor
    depth_star: torch.Tensor | None

    def __len__(self):
        return len(self.ids)


def fit_input(sample: HandSample, size: int) -> HandSample:
    h, w = sample.rgb.shape[:2]
    if (h, w) == (size, size):
        return sample
    bbox = sample.bbox if sample.bbox is not None else (0.0, 0.0, float(w), float(h))
    return crop_hand(sample, bbox, size)


def prepare_pose_tensors(samples, config: ExperimentConfig, with_depth: bool) -> PoseTensors:
    """Build inputs and targets. With ``with_depth=False`` no sample's depth is read."""
    m = config.model
    hm_size = m.heatmap_size
    rgb, hms, zs, depths = [], [], [], []
    for s in samples:
        s = fit_input(s, m.input_size)
        rgb.append(s.rgb.transpose(2, 0, 1))
        kp = image_to_heatmap_coords(s.keypoints2d, m.heatmap_stride)
        hms.append(make_heatmap_targets(kp, (hm_size, hm_size), m.heatmap_sigma).maps)
        zs.append(relative_depths(s.keypoints3d, m.root_idx, tuple(m.ref_bone)))
        if with_depth:
            if s.depth is None:
                raise MissingDepthError(f"record {s.source_id!r} has no depth map; "
                                        "this phase needs ground-truth depth")
            depths.append(normalize_depth(s.depth).values[None])
    as_t = lambda xs: torch.tensor(np.stack(xs), dtype=torch.float32)  # noqa: E731
    depth_star = None
    if with_depth:
        depth_star = _resize(as_t(depths), m.regularizer.output_size)
    return PoseTensors([s.source_id for s in samples], as_t(rgb), as_t(hms), as_t(zs), depth_star)


def pool_tensor(pool: DepthPool, size: int) -> torch.Tensor:
    if len(pool) == 0:
        raise EmptyPoolError(f"depth pool {pool.origin!r} is empty")
    maps = [normalize_depth(d).values[None] if d.unit.value == "raw_mm" else d.values[None] for d in pool.items]
    return _resize(torch.tensor(np.stack(maps), dtype=torch.float32), size)


def _resize(x, size):
    if x.shape[-1] == size and x.shape[-2] == size:
        return x
    return F.interpolate(x, size=(size, size), mode="nearest")


def _batch_indices(rng: np.random.Generator, n: int, batch_size: int) -> np.ndarray:
    if batch_size <= n:
        return rng.permutation(n)[:batch_size]
    return rng.integers(0, n, size=batch_size)


def _pool_indices(rng: np.random.Generator, n: int, batch_size: int) -> np.ndarray:
    # independent uniform draws: the real-depth batch never pairs with the RGB batch
    return rng.integers(0, n, size=batch_size)


# --------------------------------------------------------------------------- steps


def _set_requires_grad(module, flag):
    for p in module.parameters():
        p.requires_grad_(flag)


def pose_objective(state: TrainState, rgb, heatmaps, z_star, depth_star):
    w = LossWeights.from_config(state.config.loss)
    hm_pred, z, d = state.pose(rgb)
    l2d = loss_2d(hm_pred, heatmaps)
    lz = loss_z(z, z_star, continuous=state.config.loss.continuous_smooth_l1)
    ldep = loss_dep(d, depth_star)
    return {"task": task_loss(lz, l2d, ldep, w), "loss_2d": l2d, "loss_z": lz, "loss_dep": ldep}


def discriminator_step(state: TrainState, rgb, real, weight: float = 1.0) -> float:
    """One ascent step on ``weight * L_GAN``; touches only discriminator parameters."""
    eps = state.config.loss.eps
    with torch.no_grad():
        fake = state.generator(rgb)
    value = gan_loss_discriminator(state.discriminator(real), state.discriminator(fake), eps)
    state.opt_d.zero_grad(set_to_none=True)
    (-weight * value).backward()
    state.opt_d.step()
    return float(value.detach())


def generator_step(state: TrainState, rgb) -> float:
    loss = _generator_adv(state, state.generator(rgb))
    state.opt_g.zero_grad(set_to_none=True)
    loss.backward()
    state.opt_g.step()
    return float(loss.detach())


def _generator_adv(state, fake):
    _set_requires_grad(state.discriminator, False)
    try:
        return gan_loss_generator(state.discriminator(fake), state.config.loss.gan_variant, state.config.loss.eps)
    finally:
        _set_requires_grad(state.discriminator, True)


def joint_objective(state: TrainState, rgb, heatmaps, z_star):
    """``lambda_t * L_task + lambda_g * L_GAN`` (generator side) with the
    generator's output as the regularizer target."""
    loss_cfg = state.config.loss
    fake = state.generator(rgb)
    target = fake if state.config.train.regularizer_grad_to_generator else fake.detach()
    terms = pose_objective(state, rgb, heatmaps, z_star, target)
    gan_g = _generator_adv(state, fake) if loss_cfg.lambda_g > 0 else torch.zeros((), dtype=fake.dtype)
    terms["gan_g"] = gan_g
    terms["total"] = loss_cfg.lambda_t * terms["task"] + loss_cfg.lambda_g * gan_g
    return terms


def _record(state, values, log_path):
    rec = {"step": state.step, "phase": state.phase}
    for key in LOG_FIELDS[2:]:
        v = values.get(key)
        rec[key] = None if v is None else float(v.detach() if torch.is_tensor(v) else v)
    state.history.append(rec)
    if log_path is not None:
        _append_log(log_path, rec)
    return rec


def _append_log(path, rec):
    path = Path(path)
    new = not path.exists()
    with open(path, "a") as fh:
        if new:
            fh.write(",".join(LOG_FIELDS) + "\n")
        fh.write(",".join("" if rec[k] is None else (rec[k] if isinstance(rec[k], str) else repr(rec[k]))
                          for k in LOG_FIELDS) + "\n")


def _n_steps(state, target, max_steps):
    remaining = max(target - state.step, 0)
    return remaining if max_steps is None else min(remaining, max_steps)


def _maybe_checkpoint(state, ckpt_dir):
    every = state.config.train.checkpoint_every
    if ckpt_dir is not None and every and state.step % every == 0:
        save_checkpoint(state, Path(ckpt_dir) / f"{state.phase}_latest.npz")


# --------------------------------------------------------------------------- phases


def init_phase_pose(config: ExperimentConfig, samples, state: TrainState | None = None, *,
                    max_steps: int | None = None, log_path=None, ckpt_dir=None) -> TrainState:
    """Fit the pose module with normalized ground-truth depth as regularizer target."""
    data = prepare_pose_tensors(samples, config, with_depth=True)
    if len(data) == 0:
        raise ValueError("init_pose needs at least one sample")
    state = state or new_state(config)
    state.enter("init_pose")
    state.pose.train()
    bs = config.train.batch_size
    for _ in range(_n_steps(state, config.train.steps_init_pose, max_steps)):
        idx = torch.from_numpy(_batch_indices(state.rng, len(data), bs))
        terms = pose_objective(state, data.rgb[idx], data.heatmaps[idx], data.z_star[idx], data.depth_star[idx])
        state.opt_pose.zero_grad(set_to_none=True)
        terms["task"].backward()
        state.opt_pose.step()
        state.step += 1
        _record(state, {**terms, "total": terms["task"]}, log_path)
        _maybe_checkpoint(state, ckpt_dir)
    if state.step >= config.train.steps_init_pose and "init_pose" not in state.completed:
        state.completed.append("init_pose")
    return state


def init_phase_gan(config: ExperimentConfig, rgb_samples, depth_pool: DepthPool,
                   state: TrainState | None = None, *, max_steps: int | None = None,
                   train_generator: bool = True, log_path=None, ckpt_dir=None) -> TrainState:
    """Alternate one discriminator ascent and one generator descent step on
    unpaired RGB images and real depth maps."""
    if len(rgb_samples) == 0:
        raise ValueError("init_gan needs a non-empty RGB set")
    real = pool_tensor(depth_pool, config.model.input_size)
    rgb = prepare_rgb(rgb_samples, config)
    state = state or new_state(config)
    state.enter("init_gan")
    state.generator.train()
    state.discriminator.train()
    bs = config.train.batch_size
    for _ in range(_n_steps(state, config.train.steps_init_gan, max_steps)):
        xs = rgb[torch.from_numpy(_batch_indices(state.rng, len(rgb), bs))]
        xt = real[torch.from_numpy(_pool_indices(state.rng, len(real), bs))]
        gan_d = discriminator_step(state, xs, xt)
        gan_g = generator_step(state, xs) if train_generator else None
        state.step += 1
        _record(state, {"gan_d": gan_d, "gan_g": gan_g}, log_path)
        _maybe_checkpoint(state, ckpt_dir)
    if state.step >= config.train.steps_init_gan and train_generator and "init_gan" not in state.completed:
        state.completed.append("init_gan")
    return state


def prepare_rgb(samples, config) -> torch.Tensor:
    size = config.model.input_size
    return torch.tensor(np.stack([fit_input(s, size).rgb.transpose(2, 0, 1) for s in samples]),
                        dtype=torch.float32)


def joint_finetune(config: ExperimentConfig, state: TrainState, samples, depth_pool: DepthPool, *,
                   max_steps: int | None = None, log_path=None, ckpt_dir=None) -> TrainState:
    """Adversarial end-to-end fine-tuning.

    Each iteration takes one discriminator ascent step on ``lambda_g * L_GAN``
    and one joint descent step of generator and pose module on
    ``lambda_t * L_task + lambda_g * L_GAN``, where the regularizer target is
    the generator's depth map. Sample depth maps are never read.
    """
    missing = [p for p in ("init_pose", "init_gan") if p not in state.completed]
    if missing and not config.train.skip_init and state.phase != "joint":
        raise MissingInitError(f"joint fine-tuning needs completed phase(s) {missing} "
                               "(or train.skip_init: true)")
    state.config = config
    data = prepare_pose_tensors(samples, config, with_depth=False)
    real = pool_tensor(depth_pool, config.model.input_size)
    state.enter("joint")
    for net in state.networks().values():
        net.train()
    bs = config.train.batch_size
    lam_g = config.loss.lambda_g
    for _ in range(_n_steps(state, config.train.steps_joint, max_steps)):
        idx = torch.from_numpy(_batch_indices(state.rng, len(data), bs))
        xt = real[torch.from_numpy(_pool_indices(state.rng, len(real), bs))]
        rgb = data.rgb[idx]
        gan_d = discriminator_step(state, rgb, xt, weight=lam_g) if lam_g > 0 else None

        terms = joint_objective(state, rgb, data.heatmaps[idx], data.z_star[idx])
        state.opt_pose.zero_grad(set_to_none=True)
        state.opt_g.zero_grad(set_to_none=True)
        terms["total"].backward()
        state.opt_pose.step()
        state.opt_g.step()
        state.step += 1
        _record(state, {**terms, "gan_d": gan_d}, log_path)
        _maybe_checkpoint(state, ckpt_dir)
    if state.step >= config.train.steps_joint and "joint" not in state.completed:
        state.completed.append("joint")
    return state


def merge_states(pose_state: TrainState, gan_state: TrainState) -> TrainState:
    """Pose module from one initialization run, depth GAN from the other."""
    return TrainState(
        config=gan_state.config,
        pose=pose_state.pose,
        generator=gan_state.generator,
        discriminator=gan_state.discriminator,
        opt_pose=pose_state.opt_pose,
        opt_g=gan_state.opt_g,
        opt_d=gan_state.opt_d,
        rng=gan_state.rng,
        phase=gan_state.phase,
        step=gan_state.step,
        completed=sorted(set(pose_state.completed) | set(gan_state.completed), key=PHASES.index),
        history=pose_state.history + gan_state.history,
    )


# --------------------------------------------------------------------------- checkpoints


def save_checkpoint(state: TrainState, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        "__version__": np.array(CHECKPOINT_VERSION),
        "__config__": np.array(json.dumps(state.config.to_dict())),
        "__meta__": np.array(json.dumps({
            "phase": state.phase,
            "step": state.step,
            "completed": state.completed,
            "rng": state.rng.bit_generator.state,
            "history": state.history,
        })),
        "__torch_rng__": torch.get_rng_state().numpy(),
    }
    for name, net in state.networks().items():
        for key, value in net.state_dict().items():
            arrays[f"param/{name}/{key}"] = value.detach().cpu().numpy()
    for name, opt in state.optimizers().items():
        sd = opt.state_dict()
        arrays[f"optim/{name}/param_groups"] = np.array(json.dumps(sd["param_groups"]))
        for idx, slots in sd["state"].items():
            for slot, value in slots.items():
                arrays[f"optim/{name}/state/{idx}/{slot}"] = (
                    value.detach().cpu().numpy() if torch.is_tensor(value) else np.asarray(value))
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)
    return path


def load_checkpoint(path, config: ExperimentConfig | None = None) -> TrainState:
    """Restore a :class:`TrainState`. With ``config`` given, the stored model
    architecture must match it; training settings come from ``config``."""
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
    except FileNotFoundError:
        raise
    except (OSError, ValueError, zipfile.BadZipFile, EOFError) as exc:
        raise CheckpointError(f"{path}: corrupt or unreadable checkpoint ({exc})") from exc
    version = str(arrays.get("__version__", ""))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version!r}, expected {CHECKPOINT_VERSION!r}")
    stored = config_from_dict(json.loads(str(arrays["__config__"])))
    if config is not None:
        diffs = _diff(stored.to_dict()["model"], config.to_dict()["model"], "model")
        if diffs:
            raise ConfigMismatchError(f"{path}: checkpoint model config differs at {', '.join(diffs)}")
    else:
        config = stored
    meta = json.loads(str(arrays["__meta__"]))
    state = new_state(config)
    try:
        for name, net in state.networks().items():
            prefix = f"param/{name}/"
            sd = {k[len(prefix):]: torch.from_numpy(v.copy()) for k, v in arrays.items() if k.startswith(prefix)}
            net.load_state_dict(sd, strict=True)
        for name, opt in state.optimizers().items():
            groups = json.loads(str(arrays[f"optim/{name}/param_groups"]))
            for g in groups:
                if "betas" in g:
                    g["betas"] = tuple(g["betas"])
            opt_state: dict = {}
            prefix = f"optim/{name}/state/"
            for key, value in arrays.items():
                if key.startswith(prefix):
                    idx, slot = key[len(prefix):].split("/")
                    opt_state.setdefault(int(idx), {})[slot] = torch.from_numpy(value.copy())
            opt.load_state_dict({"state": opt_state, "param_groups": groups})
    except (RuntimeError, KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: checkpoint does not match the network layout ({exc})") from exc
    # training hyperparameters follow the caller's config
    for name, opt in state.optimizers().items():
        lr = {"pose": config.train.lr_pose, "generator": config.train.lr_generator,
              "discriminator": config.train.lr_discriminator}[name]
        for g in opt.param_groups:
            g["lr"] = lr
    state.rng.bit_generator.state = meta["rng"]
    torch.set_rng_state(torch.from_numpy(arrays["__torch_rng__"].copy()))
    state.phase = meta["phase"]
    state.step = int(meta["step"])
    state.completed = list(meta["completed"])
    state.history = list(meta["history"])
    return state


def _diff(a, b, prefix):
    out = []
    for key in sorted(set(a) | set(b)):
        va, vb = a.get(key), b.get(key)
        if isinstance(va, dict) and isinstance(vb, dict):
            out += _diff(va, vb, f"{prefix}.{key}")
        elif va != vb:
            out.append(f"{prefix}.{key} ({va!r} != {vb!r})")
    return out
