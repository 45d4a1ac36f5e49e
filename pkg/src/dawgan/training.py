"""Adversarial training loop, checkpointing, and the ablation grid.

Data flow per sample: take a slice window from a training volume (reflect
padding at the ends), optionally augment it, transform each slice to k-space,
add measurement noise, apply a freshly seeded sampling mask, and hand the
network the zero-filled inverse alongside the measured spectrum and mask.
Volumes arrive normalized to [-1, 1] and are measured as-is — the network and
the classical baselines see the exact same forward model, and the tanh output
range matches the intensity convention.

Each cycle runs `n_critic` critic updates (Wasserstein loss with gradient
penalty on fresh interpolates) followed by one generator update on the
four-term objective. Every generator step appends one CSV row:
iteration, imse, fmse, vgg, gen_adv, critic_loss, gp_term.
"""

import csv
import dataclasses
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from . import ops
from .archive import load_archive, save_archive
from .errors import ConfigurationError, DomainError, FormatError, NumericalError
from .fileio import write_bytes_atomic
from .kspace import add_kspace_noise, forward_fft2c, inverse_fft2c, make_mask
from .losses import (FeatureExtractor, LossWeights, critic_loss_with_gp, loss_fmse,
                     loss_gen_adv, loss_imse, loss_vgg, total_loss)
from .model import Critic, CriticConfig, Generator, GeneratorConfig
from .phantom import draw_augmentation, apply_augmentation, reflect_index

LOG_COLUMNS = ("iteration", "imse", "fmse", "vgg", "gen_adv", "critic_loss", "gp_term")

ABLATION_ROWS = ("WGAN-GP+RNN", "WGAN-GP+Attention", "Attention+RNN", "DAWGAN")


@dataclass
class TrainConfig:
    run_name: str = "DAWGAN"
    n_critic: int = 5
    batch_size: int = 4
    max_generator_steps: int = 200
    learning_rate: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.9
    lambda_gp: float = 10.0
    mask_ratio: float = 0.3
    mask_kind: str = "cartesian-1d-gaussian"
    center_fraction: float = 0.04
    noise_sigma: float = 0.0
    seed: int = 0
    augment: bool = True
    adversarial: bool = True
    normalized_losses: bool = True
    checkpoint_interval: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    critic: CriticConfig = field(default_factory=CriticConfig)

    @property
    def optimizer_betas(self):
        return (self.beta1, self.beta2)

    def validate(self):
        if self.n_critic < 1:
            raise ConfigurationError(f"n_critic must be >= 1, got {self.n_critic}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_generator_steps < 0:
            raise ConfigurationError("max_generator_steps must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")
        if not (0.0 < self.mask_ratio <= 1.0):
            raise ConfigurationError(f"mask_ratio must be in (0, 1], got {self.mask_ratio}")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")
        if self.lambda_gp < 0:
            raise ConfigurationError("lambda_gp must be >= 0")
        if self.checkpoint_interval < 0:
            raise ConfigurationError("checkpoint_interval must be >= 0")
        self.weights.validate()
        self.generator.validate()
        self.critic.validate()
        return self


# -- flat key=value (de)serialization ------------------------------------------

_NESTED = {"weights": LossWeights, "generator": GeneratorConfig, "critic": CriticConfig}


def _value_to_str(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _str_to_value(s, template):
    if isinstance(template, bool):
        if s.lower() not in ("true", "false", "0", "1"):
            raise ConfigurationError(f"expected a boolean, got {s!r}")
        return s.lower() in ("true", "1")
    if isinstance(template, int):
        return int(s)
    if isinstance(template, float):
        return float(s)
    if isinstance(template, (tuple, list)):
        return tuple(int(x) for x in s.split(",") if x)
    return s


def config_to_flat(cfg: TrainConfig):
    """Flatten to sorted {key: str}; nested sections use dotted keys."""
    flat = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in _NESTED:
            for sub in dataclasses.fields(v):
                flat[f"{f.name}.{sub.name}"] = _value_to_str(getattr(v, sub.name))
        else:
            flat[f.name] = _value_to_str(v)
    return dict(sorted(flat.items()))


def config_from_flat(flat, base=None):
    """Overlay flat string entries onto `base` (default TrainConfig()); unknown
    keys are configuration errors."""
    cfg = dataclasses.replace(base) if base is not None else TrainConfig()
    for name, cls in _NESTED.items():
        setattr(cfg, name, dataclasses.replace(getattr(cfg, name)))
    valid = {f.name for f in dataclasses.fields(cfg)}
    for key, raw in flat.items():
        if "." in key:
            section, sub = key.split(".", 1)
            if section not in _NESTED:
                raise ConfigurationError(f"unknown config section {section!r} in key {key!r}")
            target = getattr(cfg, section)
            if sub not in {f.name for f in dataclasses.fields(target)}:
                raise ConfigurationError(f"unknown config key {key!r}")
            setattr(target, sub, _str_to_value(str(raw), getattr(target, sub)))
        else:
            if key not in valid or key in _NESTED:
                raise ConfigurationError(f"unknown config key {key!r}")
            setattr(cfg, key, _str_to_value(str(raw), getattr(cfg, key)))
    return cfg


def read_config_file(path):
    """Flat key=value lines; '#' starts a comment; blank lines ignored."""
    flat = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise FormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, value = line.split("=", 1)
                flat[key.strip()] = value.strip()
    except OSError as exc:
        raise FormatError(f"cannot read config file {path}: {exc}") from exc
    return flat


# -- dataset plumbing -----------------------------------------------------------


def _window_at(volume, center, T):
    L = volume.shape[0]
    half = T // 2
    idx = [reflect_index(center + o, L) for o in range(-half, half + 1)]
    return volume[idx]


def _prepare_sample(window, cfg: TrainConfig, mask_seed, noise_seed):
    """window: (T, H, W) in [-1, 1] -> dict of numpy arrays for one sample."""
    g = np.asarray(window, dtype=np.float64)
    T, H, W = g.shape
    mask = make_mask((H, W), cfg.mask_ratio, cfg.mask_kind, cfg.center_fraction, seed=mask_seed)
    m = mask.data.astype(np.float64)
    measured = np.empty((T, H, W), dtype=np.complex128)
    for t in range(T):
        y = forward_fft2c(g[t].astype(np.complex128))
        y = add_kspace_noise(y, cfg.noise_sigma, seed=noise_seed + t)
        measured[t] = y * m
    zf = np.stack([inverse_fft2c(measured[t]) for t in range(T)])
    return {
        "target": g.astype(np.float32),
        "measured": measured.astype(np.complex64),
        "mask": m.astype(np.float32),
        "zero_filled": np.stack([zf.real, zf.imag], axis=1).astype(np.float32),
    }


class WindowSampler:
    """Draws (volume, center, augmentation, mask seed, noise seed) tuples from a
    single RNG stream so the whole data schedule replays from one state."""

    def __init__(self, volumes, cfg: TrainConfig, rng):
        if not volumes:
            raise DomainError("training requires at least one volume")
        self.volumes = volumes
        self.cfg = cfg
        self.rng = rng

    def next_batch(self):
        cfg = self.cfg
        T = cfg.generator.window_T
        samples = []
        for _ in range(cfg.batch_size):
            v = self.volumes[int(self.rng.integers(len(self.volumes)))]
            center = int(self.rng.integers(v.shape[0]))
            mask_seed = int(self.rng.integers(2 ** 31 - 1))
            noise_seed = int(self.rng.integers(2 ** 31 - 1))
            window = _window_at(v, center, T)
            if cfg.augment:
                window = apply_augmentation(window, draw_augmentation(int(self.rng.integers(2 ** 31 - 1))))
            samples.append(_prepare_sample(window, cfg, mask_seed, noise_seed))
        batch = {k: torch.from_numpy(np.stack([s[k] for s in samples])) for k in samples[0]}
        return batch


# -- checkpointing --------------------------------------------------------------


@dataclass
class Checkpoint:
    cfg: TrainConfig
    generator: Generator
    critic: Critic
    opt_g: torch.optim.Adam
    opt_c: torch.optim.Adam
    step: int
    data_rng_state: dict
    torch_rng_state: torch.Tensor


def _optimizer_arrays(prefix, opt):
    arrays = {}
    for idx, state in opt.state_dict()["state"].items():
        for key, value in state.items():
            arrays[f"{prefix}.{idx}.{key}"] = value.detach().cpu().numpy().astype(np.float32)
    return arrays


def _load_optimizer_arrays(prefix, arrays, opt):
    state = {}
    for name, arr in arrays.items():
        if not name.startswith(prefix + "."):
            continue
        _, idx, key = name.split(".", 2)
        entry = state.setdefault(int(idx), {})
        t = torch.from_numpy(arr)
        entry[key] = t.reshape(()) if key == "step" and t.ndim == 0 else t
    sd = opt.state_dict()
    sd["state"] = state
    opt.load_state_dict(sd)


def save_checkpoint(ckpt: Checkpoint, path):
    arrays = {}
    for name, p in ckpt.generator.state_dict().items():
        arrays[f"gen.{name}"] = p.detach().cpu().numpy().astype(np.float32)
    for name, p in ckpt.critic.state_dict().items():
        arrays[f"critic.{name}"] = p.detach().cpu().numpy().astype(np.float32)
    arrays.update(_optimizer_arrays("optg", ckpt.opt_g))
    arrays.update(_optimizer_arrays("optc", ckpt.opt_c))
    arrays["torch_rng"] = ckpt.torch_rng_state.numpy().astype(np.uint8)
    metadata = {f"cfg.{k}": v for k, v in config_to_flat(ckpt.cfg).items()}
    metadata["step"] = str(ckpt.step)
    metadata["data_rng"] = json.dumps(ckpt.data_rng_state, sort_keys=True)
    save_archive(path, arrays, metadata)


def _build_models(cfg: TrainConfig):
    torch.manual_seed(cfg.seed)
    generator = Generator(cfg.generator)
    critic = Critic(cfg.critic, in_channels=cfg.generator.window_T)
    opt_g = torch.optim.Adam(generator.parameters(), lr=cfg.learning_rate, betas=cfg.optimizer_betas)
    opt_c = torch.optim.Adam(critic.parameters(), lr=cfg.learning_rate, betas=cfg.optimizer_betas)
    return generator, critic, opt_g, opt_c


def load_checkpoint(path) -> Checkpoint:
    arrays, metadata = load_archive(path)
    flat = {k[len("cfg."):]: v for k, v in metadata.items() if k.startswith("cfg.")}
    cfg = config_from_flat(flat).validate()
    generator, critic, opt_g, opt_c = _build_models(cfg)

    for module, prefix in ((generator, "gen"), (critic, "critic")):
        state = module.state_dict()
        loaded = {}
        for name, tensor in state.items():
            key = f"{prefix}.{name}"
            if key not in arrays:
                raise FormatError(f"checkpoint {path} is missing parameter {key!r}")
            loaded[name] = torch.from_numpy(arrays[key]).reshape(tensor.shape)
        module.load_state_dict(loaded)
    _load_optimizer_arrays("optg", arrays, opt_g)
    _load_optimizer_arrays("optc", arrays, opt_c)

    if "torch_rng" not in arrays:
        raise FormatError(f"checkpoint {path} is missing parameter 'torch_rng'")
    return Checkpoint(
        cfg=cfg,
        generator=generator,
        critic=critic,
        opt_g=opt_g,
        opt_c=opt_c,
        step=int(metadata["step"]),
        data_rng_state=json.loads(metadata["data_rng"]),
        torch_rng_state=torch.from_numpy(arrays["torch_rng"].copy()),
    )


# -- the loop -------------------------------------------------------------------


def enable_determinism():
    """Single-threaded, deterministic-kernel math for bit-stable runs."""
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)


def _gp_seed(cfg: TrainConfig, critic_update_index):
    return (cfg.seed * 1_000_003 + critic_update_index) % (2 ** 31 - 1)


def write_training_log(rows, path):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=LOG_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in LOG_COLUMNS})
    write_bytes_atomic(path, buf.getvalue().encode("utf-8"))


def _float(x):
    return float(x.detach()) if torch.is_tensor(x) else float(x)


def train(cfg: TrainConfig, volumes, split=None, out_dir=None, resume=None,
          feature_extractor=None):
    """Run the loop; returns (final Checkpoint, list of log rows).

    volumes: mapping or list of (L, H, W) arrays in [-1, 1]; `split` restricts
    training to split.train ids. `resume` continues from a Checkpoint
    (trajectory-exact in deterministic mode). If out_dir is set, the CSV log
    and checkpoints are written there.
    """
    cfg.validate()
    if isinstance(volumes, dict):
        pool = volumes
        ids = sorted(volumes)
    else:
        pool = {i: v for i, v in enumerate(volumes)}
        ids = list(range(len(pool)))
    if split is not None:
        ids = list(split.train)
    train_volumes = [np.asarray(pool[i], dtype=np.float64) for i in ids]
    if not train_volumes:
        raise DomainError("empty training split")

    if resume is not None:
        ckpt = resume
        # Everything but the step budget comes from the checkpoint so the
        # trajectory continues under the exact run that produced it.
        resumed = config_from_flat({}, base=ckpt.cfg)
        resumed.max_generator_steps = cfg.max_generator_steps
        resumed.checkpoint_interval = cfg.checkpoint_interval
        cfg = resumed.validate()
        generator, critic = ckpt.generator, ckpt.critic
        opt_g, opt_c = ckpt.opt_g, ckpt.opt_c
        step = ckpt.step
        data_rng = np.random.default_rng()
        data_rng.bit_generator.state = ckpt.data_rng_state
        torch.set_rng_state(ckpt.torch_rng_state)
    else:
        generator, critic, opt_g, opt_c = _build_models(cfg)
        step = 0
        data_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 11]))

    if feature_extractor is None and cfg.weights.gamma > 0:
        feature_extractor = FeatureExtractor(seed=0)

    sampler = WindowSampler(train_volumes, cfg, data_rng)
    rows = []

    def snapshot():
        return Checkpoint(cfg, generator, critic, opt_g, opt_c, step,
                          data_rng.bit_generator.state, torch.get_rng_state())

    def emit_checkpoint(name):
        if out_dir is not None:
            save_checkpoint(snapshot(), os.path.join(out_dir, name))

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    if cfg.max_generator_steps == 0:
        emit_checkpoint("checkpoint_final.bin")
        if out_dir is not None:
            write_training_log(rows, os.path.join(out_dir, "training_log.csv"))
        return snapshot(), rows

    while step < cfg.max_generator_steps:
        critic_loss_val, gp_val = 0.0, 0.0
        if cfg.adversarial:
            for j in range(cfg.n_critic):
                batch = sampler.next_batch()
                with torch.no_grad():
                    fake = generator(batch["zero_filled"], batch["measured"], batch["mask"])
                fake_img = fake[:, :, 0]
                real_img = batch["target"]
                result = critic_loss_with_gp(critic, real_img, fake_img, cfg.lambda_gp,
                                             seed=_gp_seed(cfg, step * cfg.n_critic + j))
                opt_c.zero_grad(set_to_none=True)
                result.total.backward()
                opt_c.step()
                critic_loss_val, gp_val = _float(result.total), _float(result.gp_term)

        batch = sampler.next_batch()
        out = generator(batch["zero_filled"], batch["measured"], batch["mask"])
        target2ch = torch.stack([batch["target"], torch.zeros_like(batch["target"])], dim=2)
        imse = loss_imse(target2ch, out, normalized=cfg.normalized_losses)
        target_k = ops.fft2c(batch["target"].to(torch.complex64))
        out_k = ops.fft2c(ops.channels_to_complex(out))
        fmse = loss_fmse(target_k, out_k, normalized=cfg.normalized_losses)
        if cfg.weights.gamma > 0:
            B, T, H, W = batch["target"].shape
            vgg = loss_vgg(batch["target"].reshape(B * T, H, W),
                           out[:, :, 0].reshape(B * T, H, W),
                           feature_extractor, normalized=cfg.normalized_losses)
        else:
            vgg = torch.zeros(())
        if cfg.adversarial:
            critic.requires_grad_(False)
            gen_adv = loss_gen_adv(critic(out[:, :, 0]))
        else:
            gen_adv = torch.zeros(())
        try:
            breakdown = total_loss(cfg.weights, imse, fmse, vgg, gen_adv)
            check = [critic_loss_val, gp_val]
            if any(x != x for x in check):
                raise NumericalError("critic loss is NaN")
        except NumericalError:
            emit_checkpoint("checkpoint_diagnostic.bin")
            raise
        opt_g.zero_grad(set_to_none=True)
        breakdown.total.backward()
        opt_g.step()
        if cfg.adversarial:
            critic.requires_grad_(True)

        step += 1
        rows.append({
            "iteration": step,
            "imse": _float(breakdown.imse),
            "fmse": _float(breakdown.fmse),
            "vgg": _float(breakdown.vgg),
            "gen_adv": _float(breakdown.gen_adv),
            "critic_loss": critic_loss_val,
            "gp_term": gp_val,
        })
        if cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0 and step < cfg.max_generator_steps:
            emit_checkpoint(f"checkpoint_{step:06d}.bin")

    emit_checkpoint("checkpoint_final.bin")
    if out_dir is not None:
        write_training_log(rows, os.path.join(out_dir, "training_log.csv"))
    return snapshot(), rows


def ablation_configs(base: TrainConfig):
    """The four ablation rows: attention off, recurrence off, adversarial off,
    and the full model."""
    base.validate()
    out = []
    for name in ABLATION_ROWS:
        cfg = config_from_flat({}, base=base)
        cfg.run_name = name
        if name == "WGAN-GP+RNN":
            cfg.generator.use_attention = False
        elif name == "WGAN-GP+Attention":
            cfg.generator.use_recurrence = False
        elif name == "Attention+RNN":
            cfg.adversarial = False
        out.append(cfg)
    return out
