"""Two-phase training: adversarial first, then the encoder against a frozen
generator/critic pair, plus the iterative latent search used by the
search-based baseline.

Phase 1 (wgan mode) follows the weight-clipping recipe: several critic
updates per generator update, every critic update followed by clamping all
critic weights into [-c, c].  Phase 2 minimizes a per-window score that
combines the normalized reconstruction residual with the critic's
intermediate-feature residual.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ContractError, TrainingDiverged
from .models import Discriminator, Encoder, Generator, ModelSpec, build_model
from .optim import Optimizer, clip_weights
from .rng import Rng
from .tensor import Tensor

_PROB_EPS = 1e-7


@dataclass
class TrainConfig:
    """Knobs for both phases; unset learning rates resolve per gan_mode."""

    gan_mode: str = "wgan"
    epochs_adversarial: int = 30
    epochs_encoder: int = 30
    batch_size: int = 64
    n_critic: int | None = None      # critic updates per generator update
    critic_warmup_steps: int = 0     # extra critic-only updates before epoch 0
    generator_ema: float | None = None   # per-step EMA decay on G weights; the
                                     # returned generator carries the average.
                                     # None resolves to 0.99 for the vanilla
                                     # mode (tames oscillation), 0 for wgan
    clip_c: float = 0.01
    latent_dim: int = 16
    feature_weight: float = 1.0      # weight on the critic-feature residual
    lr_critic: float | None = None
    lr_generator: float | None = None
    lr_encoder: float = 1e-3
    lr_baseline: float = 1e-3        # reconstruction baselines (plain MSE)
    seed: int = 0

    def __post_init__(self):
        if self.gan_mode not in ("gan", "wgan"):
            raise ContractError(f"gan_mode must be 'gan' or 'wgan', got {self.gan_mode!r}")
        if self.n_critic is None:
            self.n_critic = 5 if self.gan_mode == "wgan" else 1
        if self.lr_critic is None:
            self.lr_critic = 5e-5 if self.gan_mode == "wgan" else 1e-4
        if self.lr_generator is None:
            self.lr_generator = 5e-5 if self.gan_mode == "wgan" else 1e-4
        if self.generator_ema is None:
            self.generator_ema = 0.99 if self.gan_mode == "gan" else 0.0
        if self.n_critic < 1:
            raise ContractError("n_critic must be >= 1")
        if self.gan_mode == "wgan" and self.clip_c <= 0:
            raise ContractError("clip_c must be positive in wgan mode")
        if self.feature_weight < 0:
            raise ContractError("feature_weight must be >= 0")
        if not 0.0 <= self.generator_ema < 1.0:
            raise ContractError("generator_ema must lie in [0, 1)")

    def optimizer_kind(self) -> str:
        return "rmsprop" if self.gan_mode == "wgan" else "adam"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class PhaseLog:
    """One record per epoch plus run-level counters."""

    phase: str
    records: list[dict] = field(default_factory=list)
    critic_steps: int = 0
    generator_steps: int = 0
    warmup_steps: int = 0

    def append(self, **record) -> None:
        self.records.append(record)

    def series(self, key: str) -> list[float]:
        return [r[key] for r in self.records if key in r]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"phase": self.phase, "critic_steps": self.critic_steps,
                                 "generator_steps": self.generator_steps,
                                 "warmup_steps": self.warmup_steps}) + "\n")
            for record in self.records:
                fh.write(json.dumps(record) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PhaseLog":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        head = json.loads(lines[0])
        log = cls(phase=head["phase"], critic_steps=head.get("critic_steps", 0),
                  generator_steps=head.get("generator_steps", 0),
                  warmup_steps=head.get("warmup_steps", 0))
        log.records = [json.loads(line) for line in lines[1:]]
        return log


# -- losses ---------------------------------------------------------------------


def critic_loss_wgan(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    """mean(fake) - mean(real); the negated value estimates the Wasserstein gap."""
    if real_scores.size == 0 or fake_scores.size == 0:
        raise ContractError("critic loss needs non-empty real and fake batches")
    return fake_scores.mean() - real_scores.mean()


def generator_loss_wgan(fake_scores: Tensor) -> Tensor:
    if fake_scores.size == 0:
        raise ContractError("generator loss needs a non-empty fake batch")
    return -fake_scores.mean()


def gan_losses(real_probs: Tensor, fake_probs: Tensor) -> tuple[Tensor, Tensor]:
    """Per-term-averaged discriminator loss and non-saturating generator loss."""
    if real_probs.size == 0 or fake_probs.size == 0:
        raise ContractError("gan losses need non-empty real and fake batches")
    real_p = T.clip(real_probs, _PROB_EPS, 1.0 - _PROB_EPS)
    fake_p = T.clip(fake_probs, _PROB_EPS, 1.0 - _PROB_EPS)
    d_loss = -T.log(real_p).mean() - T.log(1.0 - fake_p).mean()
    g_loss = -T.log(fake_p).mean()
    return d_loss, g_loss


def window_scores(x: Tensor, x_hat: Tensor, f_x: Tensor, f_x_hat: Tensor,
                  feature_weight: float) -> Tensor:
    """Per-window anomaly score, shape (B,).

    score = sqrt(sum_t ||x_t - x_hat_t||^2) / n
          + (k / n_d) * sqrt(sum ||f(x) - f(x_hat)||^2)

    Residuals are squared inside the sums (RMS reading of the combined
    reconstruction + feature objective).
    """
    if feature_weight < 0:
        raise ContractError("feature weight must be >= 0")
    steps = x.shape[1]
    r = x - x_hat
    data_term = T.sqrt_or_zero_grad(T.mul(r, r).sum(axis=(1, 2))) * (1.0 / steps)
    if feature_weight == 0.0:
        return data_term
    n_d = f_x.shape[1]
    fr = f_x - f_x_hat
    feat_term = T.sqrt_or_zero_grad(T.mul(fr, fr).sum(axis=1)) * (feature_weight / n_d)
    return data_term + feat_term


def encoder_loss(x: Tensor, x_hat: Tensor, f_x: Tensor, f_x_hat: Tensor,
                 feature_weight: float) -> Tensor:
    """Batch mean of the per-window scores."""
    return window_scores(x, x_hat, f_x, f_x_hat, feature_weight).mean()


# -- phase 1: adversarial -----------------------------------------------------------


def _check_finite(value: float, what: str, epoch: int) -> None:
    if not np.isfinite(value):
        raise TrainingDiverged(f"{what} became non-finite at epoch {epoch}", epoch=epoch)


def _batches(n: int, batch_size: int, perm: np.ndarray) -> list[np.ndarray]:
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def train_adversarial(windows: np.ndarray, g_spec: ModelSpec, d_spec: ModelSpec,
                      cfg: TrainConfig, eval_windows: np.ndarray | None = None,
                      critic_hook=None) -> tuple[Generator, Discriminator, PhaseLog]:
    """Adversarial phase over normal-only windows (N, W, F).

    ``critic_hook(step_index, disc_params)`` runs after every critic update
    (after clipping in wgan mode) so invariants can be checked in tests.
    """
    rng = Rng(cfg.seed)
    gen = build_model(g_spec, rng.derive(1))
    disc = build_model(d_spec, rng.derive(2))
    shuffle_rng = rng.derive(3)
    noise_rng = rng.derive(4)
    eval_rng = rng.derive(5)

    kind = cfg.optimizer_kind()
    d_opt = Optimizer(disc.params, kind=kind, lr=cfg.lr_critic)
    g_opt = Optimizer(gen.params, kind=kind, lr=cfg.lr_generator)

    n = windows.shape[0]
    latent = cfg.latent_dim
    wgan = cfg.gan_mode == "wgan"
    log = PhaseLog(phase="adversarial")

    eval_z = None
    if eval_windows is not None and len(eval_windows):
        eval_z = eval_rng.normal((len(eval_windows), latent))

    # EMA of generator weights smooths adversarial oscillation; bias-corrected
    # against the initialization at the end
    ema_decay = cfg.generator_ema
    ema = ({name: t.data.copy() for name, t in gen.params.items()}
           if ema_decay > 0.0 else None)
    ema_init = ({name: arr.copy() for name, arr in ema.items()}
                if ema is not None else None)

    def critic_step(idx: np.ndarray, epoch: int) -> float:
        real = Tensor(windows[idx])
        z = noise_rng.normal((len(idx), latent))
        with T.no_grad():
            fake_data = gen.forward(Tensor(z)).data
        real_score, _ = disc.forward(real)
        fake_score, _ = disc.forward(Tensor(fake_data))
        if wgan:
            d_loss = critic_loss_wgan(real_score, fake_score)
        else:
            d_loss, _ = gan_losses(real_score, fake_score)
        d_val = d_loss.item()
        _check_finite(d_val, "critic loss", epoch)
        d_loss.backward()
        d_opt.step()
        if wgan:
            clip_weights(disc.params, cfg.clip_c)
        return d_val

    # optional critic-only head start so the gap estimate is meaningful from
    # the first logged epoch
    while log.warmup_steps < cfg.critic_warmup_steps:
        for idx in _batches(n, cfg.batch_size, shuffle_rng.permutation(n)):
            critic_step(idx, epoch=-1)
            log.warmup_steps += 1
            if critic_hook is not None:
                critic_hook(-log.warmup_steps, disc.params)
            if log.warmup_steps >= cfg.critic_warmup_steps:
                break

    for epoch in range(cfg.epochs_adversarial):
        started = time.perf_counter()
        d_losses, g_losses = [], []
        for idx in _batches(n, cfg.batch_size, shuffle_rng.permutation(n)):
            d_losses.append(critic_step(idx, epoch))
            log.critic_steps += 1
            if critic_hook is not None:
                critic_hook(log.critic_steps, disc.params)

            if log.critic_steps % cfg.n_critic == 0:
                z = noise_rng.normal((cfg.batch_size, latent))
                fake = gen.forward(Tensor(z))
                score, _ = disc.forward(fake)
                if wgan:
                    g_loss = generator_loss_wgan(score)
                else:
                    probs = T.clip(score, _PROB_EPS, 1.0 - _PROB_EPS)
                    g_loss = -T.log(probs).mean()
                g_val = g_loss.item()
                _check_finite(g_val, "generator loss", epoch)
                g_loss.backward()
                g_opt.step()
                disc.params.zero_grads()  # generator step must not move the critic
                log.generator_steps += 1
                g_losses.append(g_val)
                if ema is not None:
                    for name, t in gen.params.items():
                        buf = ema[name]
                        buf *= ema_decay
                        buf += (1.0 - ema_decay) * t.data

        record = {
            "epoch": epoch,
            "d_loss": float(np.mean(d_losses)) if d_losses else 0.0,
            "g_loss": float(np.mean(g_losses)) if g_losses else 0.0,
            "seconds": time.perf_counter() - started,
        }
        if eval_z is not None:
            record["eval_wasserstein"] = wasserstein_estimate(gen, disc, eval_windows, eval_z)
        log.append(**record)

    if ema is not None and log.generator_steps > 0:
        # remove the contribution of the initial weights, then adopt the average
        correction = 1.0 - ema_decay ** log.generator_steps
        for name, t in gen.params.items():
            t.data[...] = (ema[name] - ema_init[name]
                           * ema_decay ** log.generator_steps) / correction
    return gen, disc, log


def wasserstein_estimate(gen: Generator, disc: Discriminator,
                         windows: np.ndarray, z: np.ndarray) -> float:
    """Critic's real/fake mean score gap on held-out windows (higher = wider gap)."""
    with T.no_grad():
        real_score, _ = disc.forward(Tensor(windows))
        fake = gen.forward(Tensor(z))
        fake_score, _ = disc.forward(fake)
        return float(real_score.data.mean() - fake_score.data.mean())


# -- phase 2: encoder ---------------------------------------------------------------


def train_encoder(windows: np.ndarray, gen: Generator, disc: Discriminator,
                  e_spec: ModelSpec, cfg: TrainConfig,
                  eval_windows: np.ndarray | None = None,
                  encoder: Encoder | None = None) -> tuple[Encoder, PhaseLog]:
    """Fit the encoder against the frozen generator and critic.

    Pass ``encoder`` to continue training an existing model (warm start)
    instead of building a fresh one from the spec.
    """
    rng = Rng(cfg.seed)
    enc = encoder if encoder is not None else build_model(e_spec, rng.derive(6))
    shuffle_rng = rng.derive(7)

    gen.params.set_trainable(False)
    disc.params.set_trainable(False)

    e_opt = Optimizer(enc.params, kind="adam", lr=cfg.lr_encoder)
    k = cfg.feature_weight
    n = windows.shape[0]
    log = PhaseLog(phase="encoder")

    # the critic is frozen, so its features of the real windows never change
    feats_real = _features_in_batches(disc, windows, cfg.batch_size)
    feats_eval = (_features_in_batches(disc, eval_windows, cfg.batch_size)
                  if eval_windows is not None and len(eval_windows) else None)

    for epoch in range(cfg.epochs_encoder):
        started = time.perf_counter()
        losses = []
        for idx in _batches(n, cfg.batch_size, shuffle_rng.permutation(n)):
            x = Tensor(windows[idx])
            z = enc.forward(x)
            x_hat = gen.forward(z)
            _, f_x_hat = disc.forward(x_hat)
            loss = encoder_loss(x, x_hat, Tensor(feats_real[idx]), f_x_hat, k)
            val = loss.item()
            _check_finite(val, "encoder loss", epoch)
            loss.backward()
            e_opt.step()
            losses.append(val)
        record = {
            "epoch": epoch,
            "enc_loss": float(np.mean(losses)) if losses else 0.0,
            "seconds": time.perf_counter() - started,
        }
        if feats_eval is not None:
            with T.no_grad():
                x = Tensor(eval_windows)
                x_hat = gen.forward(enc.forward(x))
                _, f_x_hat = disc.forward(x_hat)
                record["eval_enc_loss"] = encoder_loss(
                    x, x_hat, Tensor(feats_eval), f_x_hat, k).item()
        log.append(**record)

    return enc, log


def _features_in_batches(disc: Discriminator, windows: np.ndarray,
                         batch_size: int) -> np.ndarray:
    chunks = []
    with T.no_grad():
        for i in range(0, len(windows), batch_size):
            _, feats = disc.forward(Tensor(windows[i:i + batch_size]))
            chunks.append(feats.data)
    return np.concatenate(chunks, axis=0)


# -- reconstruction baselines -----------------------------------------------------------


def train_autoencoder(windows: np.ndarray, spec: ModelSpec, cfg: TrainConfig,
                      eval_windows: np.ndarray | None = None):
    """Plain-MSE training for the autoencoder baseline family."""
    rng = Rng(cfg.seed)
    model = build_model(spec, rng.derive(8))
    shuffle_rng = rng.derive(9)
    opt = Optimizer(model.params, kind="adam", lr=cfg.lr_baseline, betas=(0.9, 0.999))
    n = windows.shape[0]
    log = PhaseLog(phase="autoencoder")
    for epoch in range(cfg.epochs_encoder):
        started = time.perf_counter()
        model.set_training(True)
        losses = []
        for idx in _batches(n, cfg.batch_size, shuffle_rng.permutation(n)):
            x = Tensor(windows[idx])
            r = x - model.forward(x)
            loss = T.mul(r, r).mean()
            val = loss.item()
            _check_finite(val, "autoencoder loss", epoch)
            loss.backward()
            opt.step()
            losses.append(val)
        model.set_training(False)
        record = {"epoch": epoch, "mse": float(np.mean(losses)) if losses else 0.0,
                  "seconds": time.perf_counter() - started}
        if eval_windows is not None and len(eval_windows):
            with T.no_grad():
                xe = Tensor(eval_windows)
                re = xe - model.forward(xe)
                record["eval_mse"] = T.mul(re, re).mean().item()
        log.append(**record)
    return model, log


# -- latent search (search-based baseline) ---------------------------------------------


def anogan_latent_search(x: np.ndarray, gen: Generator,
                         disc: Discriminator | None, feature_weight: float,
                         iters: int, restarts: int, rng: Rng,
                         lr: float = 0.05, lr_decay: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Gradient descent on the per-window score over the latent only.

    Runs ``restarts`` random initializations for ``iters`` steps each and
    keeps the best latent per window.  ``lr_decay`` shrinks the step
    geometrically per iteration (1.0 = constant step); the score is scale
    free near its minimum, so a decaying step is what actually converges.
    With ``disc=None`` the objective is pure reconstruction (requires
    feature_weight 0).  Returns (z_best (B, L), score (B,)).
    """
    if restarts < 1:
        raise ContractError("restarts must be >= 1")
    if disc is None and feature_weight != 0.0:
        raise ContractError("feature_weight > 0 needs a discriminator")
    gen.params.set_trainable(False)
    if disc is not None:
        disc.params.set_trainable(False)
    batch = x.shape[0]
    latent = gen.spec.latent_dim
    x_t = Tensor(x)
    if disc is not None:
        with T.no_grad():
            _, f_real = disc.forward(x_t)
        f_real_t = Tensor(f_real.data)
    else:
        f_real_t = None

    def objective(z_like: Tensor) -> Tensor:
        x_hat = gen.forward(z_like)
        if disc is None:
            return window_scores(x_t, x_hat, x_hat, x_hat, 0.0)
        _, f_hat = disc.forward(x_hat)
        return window_scores(x_t, x_hat, f_real_t, f_hat, feature_weight)

    best_z = None
    best_score = np.full(batch, np.inf)
    for _ in range(restarts):
        z = rng.normal((batch, latent))
        step = lr
        for _ in range(iters):
            zt = Tensor(z, requires_grad=True)
            objective(zt).sum().backward()  # per-window scores are independent
            z = z - step * zt.grad
            step *= lr_decay
        with T.no_grad():
            scores = objective(Tensor(z)).data
        if best_z is None:
            best_z, best_score = z, scores
        else:
            better = scores < best_score
            best_z = np.where(better[:, None], z, best_z)
            best_score = np.where(better, scores, best_score)
    return best_z, best_score
