"""Conditioned denoising diffusion over action sequences.

The planner input stacks a one-hot action block (n_actions x T) on top of an
embedding block (embed_dim x T) whose only nonzero columns are the start and
goal embeddings at t=0 and t=T-1.  Forward diffusion adds Gaussian noise to
the action block only; the embedding block is never noised and is pinned,
bit for bit, through both the forward process and ancestral sampling.

The denoiser is a two-hidden-layer tanh perceptron over the flattened blocks
plus a sinusoidal step embedding.  It predicts the clean action block, is
trained with mean squared error on that block, and sampling uses the
standard posterior mean/variance written in terms of the predicted clean
block (no noise injected at the final step).  Plans decode by per-column
argmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .optim import AdamW

STEP_EMBED_DIM = 32


# ---------------------------------------------------------------------------
# Noise schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    """betas[n], alphas[n] = 1 - betas[n], alpha_bar[n] = prod alphas, all for
    n = 1..N (stored 0-indexed)."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.betas)

    def beta(self, n: int) -> float:
        self._check(n)
        return float(self.betas[n - 1])

    def alpha(self, n: int) -> float:
        self._check(n)
        return float(self.alphas[n - 1])

    def alpha_bar(self, n: int) -> float:
        """Cumulative signal coefficient; alpha_bar(0) == 1 by convention."""
        if n == 0:
            return 1.0
        self._check(n)
        return float(self.alpha_bars[n - 1])

    def _check(self, n: int) -> None:
        if not 1 <= n <= self.n_steps:
            raise ValidationError(f"step {n} outside 1..{self.n_steps}")


def linear_schedule(n_steps: int, beta_start: float = 1e-4,
                    beta_end: float = 0.02) -> NoiseSchedule:
    if n_steps < 1:
        raise ValidationError("n_steps must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValidationError("need 0 < beta_start <= beta_end < 1")
    betas = np.linspace(beta_start, beta_end, n_steps)
    alphas = 1.0 - betas
    return NoiseSchedule(betas, alphas, np.cumprod(alphas))


# ---------------------------------------------------------------------------
# Conditioning matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditioningMatrix:
    action_block: np.ndarray  # (n_actions, T)
    embed_block: np.ndarray   # (embed_dim, T); zero except columns 0 and T-1

    @property
    def horizon(self) -> int:
        return self.action_block.shape[1]


def build_x0(action_ids, e_start: np.ndarray, e_goal: np.ndarray,
             n_actions: int, embed_dim: int) -> ConditioningMatrix:
    """One-hot action columns; embedding columns [e_start, 0, ..., 0, e_goal]."""
    horizon = len(action_ids)
    if horizon < 2:
        raise ValidationError("horizon must be >= 2")
    if e_start.shape != (embed_dim,) or e_goal.shape != (embed_dim,):
        raise ValidationError("embeddings must have shape (embed_dim,)")
    action_block = np.zeros((n_actions, horizon))
    for t, action_id in enumerate(action_ids):
        if not 0 <= action_id < n_actions:
            raise ValidationError(f"action id {action_id} outside 0..{n_actions - 1}")
        action_block[action_id, t] = 1.0
    embed_block = np.zeros((embed_dim, horizon))
    embed_block[:, 0] = e_start
    embed_block[:, -1] = e_goal
    return ConditioningMatrix(action_block, embed_block)


def forward_noise(x0: ConditioningMatrix, n: int, eps: np.ndarray,
                  schedule: NoiseSchedule) -> ConditioningMatrix:
    """Closed-form forward marginal on the action block; the embedding block
    is returned untouched (same array object)."""
    if n < 1:
        raise ValidationError(f"step {n} outside 1..{schedule.n_steps}")
    a_bar = schedule.alpha_bar(n)
    noised = np.sqrt(a_bar) * x0.action_block + np.sqrt(1.0 - a_bar) * eps
    return ConditioningMatrix(noised, x0.embed_block)


# ---------------------------------------------------------------------------
# Denoiser
# ---------------------------------------------------------------------------

def step_embedding(steps, dim: int = STEP_EMBED_DIM) -> np.ndarray:
    """Fixed sinusoidal embedding of diffusion steps, shape (batch, dim).
    Not trained."""
    steps = np.atleast_1d(np.asarray(steps, dtype=float))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = steps[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


class Denoiser:
    """Two-hidden-layer tanh MLP predicting the clean action block."""

    def __init__(self, n_actions: int, horizon: int, embed_dim: int,
                 hidden: int = 256, seed: int = 0):
        self.n_actions = n_actions
        self.horizon = horizon
        self.embed_dim = embed_dim
        self.hidden = hidden
        in_dim = (n_actions + embed_dim) * horizon + STEP_EMBED_DIM
        out_dim = n_actions * horizon
        rng = np.random.default_rng([seed, 41])
        self.params = {
            "w1": rng.standard_normal((in_dim, hidden)) / np.sqrt(in_dim),
            "b1": np.zeros(hidden),
            "w2": rng.standard_normal((hidden, hidden)) / np.sqrt(hidden),
            "b2": np.zeros(hidden),
            "w3": rng.standard_normal((hidden, out_dim)) / np.sqrt(hidden),
            "b3": np.zeros(out_dim),
        }

    def _inputs(self, action_blocks: np.ndarray, embed_blocks: np.ndarray,
                steps: np.ndarray) -> np.ndarray:
        batch = action_blocks.shape[0]
        return np.concatenate(
            [
                action_blocks.reshape(batch, -1),
                embed_blocks.reshape(batch, -1),
                step_embedding(steps),
            ],
            axis=1,
        )

    def forward_batch(self, action_blocks: np.ndarray, embed_blocks: np.ndarray,
                      steps: np.ndarray) -> np.ndarray:
        if not (np.all(np.isfinite(action_blocks)) and np.all(np.isfinite(embed_blocks))):
            raise ValidationError("denoiser inputs must be finite")
        p = self.params
        x = self._inputs(action_blocks, embed_blocks, steps)
        h1 = np.tanh(x @ p["w1"] + p["b1"])
        h2 = np.tanh(h1 @ p["w2"] + p["b2"])
        out = h2 @ p["w3"] + p["b3"]
        return out.reshape(-1, self.n_actions, self.horizon)

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


def denoiser_forward(denoiser: Denoiser, x_n: ConditioningMatrix, n: int) -> np.ndarray:
    """Predicted clean action block for a single noised matrix."""
    out = denoiser.forward_batch(
        x_n.action_block[None], x_n.embed_block[None], np.array([n], dtype=float)
    )
    return out[0]


def denoiser_gradients(
    denoiser: Denoiser,
    action_blocks: np.ndarray,
    embed_blocks: np.ndarray,
    steps: np.ndarray,
    targets: np.ndarray,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean squared error against the clean action blocks, with exact
    analytic gradients for every parameter tensor (mean over batch and
    entries, so duplicating a sample changes nothing)."""
    if action_blocks.shape[0] == 0:
        raise ValidationError("batch must be non-empty")
    p = denoiser.params
    batch = action_blocks.shape[0]
    x = denoiser._inputs(action_blocks, embed_blocks, steps)
    a1 = x @ p["w1"] + p["b1"]
    h1 = np.tanh(a1)
    a2 = h1 @ p["w2"] + p["b2"]
    h2 = np.tanh(a2)
    out = h2 @ p["w3"] + p["b3"]
    resid = out - targets.reshape(batch, -1)
    loss = float(np.mean(resid * resid))
    if not np.isfinite(loss):
        raise ValidationError("non-finite denoiser loss")

    dout = 2.0 * resid / resid.size
    g = {
        "w3": h2.T @ dout,
        "b3": dout.sum(axis=0),
    }
    dh2 = dout @ p["w3"].T
    da2 = dh2 * (1.0 - h2 * h2)
    g["w2"] = h1.T @ da2
    g["b2"] = da2.sum(axis=0)
    dh1 = da2 @ p["w2"].T
    da1 = dh1 * (1.0 - h1 * h1)
    g["w1"] = x.T @ da1
    g["b1"] = da1.sum(axis=0)
    return loss, g


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayRule:
    """Stepwise learning-rate decay over the final `last_epochs` epochs."""

    every: int
    factor: float
    last_epochs: int


@dataclass(frozen=True)
class PlannerConfig:
    n_steps: int = 50
    epochs: int = 130
    steps_per_epoch: int = 50
    peak_lr: float = 3e-4
    warmup_epochs: int = 90
    decay: DecayRule | None = None
    batch_size: int = 128
    hidden: int = 256
    beta_start: float = 1e-4
    beta_end: float = 0.02
    seed: int = 0

    def validate(self) -> None:
        if min(self.n_steps, self.epochs, self.steps_per_epoch, self.batch_size,
               self.hidden, self.warmup_epochs) < 1:
            raise ValidationError("planner config values must be positive")
        if self.warmup_epochs > self.epochs:
            raise ValidationError("warmup_epochs must be <= epochs")
        if self.peak_lr <= 0:
            raise ValidationError("peak_lr must be positive")


def learning_rate(epoch: int, config: PlannerConfig) -> float:
    """Linear warmup to peak_lr, then optional stepwise decay at the end."""
    lr = config.peak_lr * min(1.0, (epoch + 1) / config.warmup_epochs)
    rule = config.decay
    if rule is not None:
        start = config.epochs - rule.last_epochs
        if epoch >= start:
            lr *= rule.factor ** ((epoch - start) // rule.every + 1)
    return lr


@dataclass
class PlannerTrainResult:
    denoiser: Denoiser
    schedule: NoiseSchedule
    loss_per_epoch: list[float]


def train_planner(
    samples: list[tuple[tuple[int, ...], np.ndarray, np.ndarray]],
    n_actions: int,
    config: PlannerConfig,
) -> PlannerTrainResult:
    """Train the denoiser on (action_ids, E_start, E_goal) samples.

    Each step draws a batch with replacement, a uniform diffusion step per
    sample, and fresh noise; the loss is MSE between the predicted and true
    clean action blocks.  Fully deterministic for a fixed config seed.
    """
    if not samples:
        raise ValidationError("train_planner needs samples")
    config.validate()
    horizon = len(samples[0][0])
    embed_dim = samples[0][1].shape[0]
    for ids, e_s, e_g in samples:
        if len(ids) != horizon or e_s.shape != (embed_dim,) or e_g.shape != (embed_dim,):
            raise ValidationError("samples must share horizon and embedding dim")

    x0s = [build_x0(ids, e_s, e_g, n_actions, embed_dim) for ids, e_s, e_g in samples]
    actions = np.stack([m.action_block for m in x0s])
    embeds = np.stack([m.embed_block for m in x0s])

    schedule = linear_schedule(config.n_steps, config.beta_start, config.beta_end)
    denoiser = Denoiser(n_actions, horizon, embed_dim, config.hidden, config.seed)
    opt = AdamW(denoiser.params, lr=config.peak_lr)
    rng = np.random.default_rng([config.seed, 47])
    sqrt_ab = np.sqrt(schedule.alpha_bars)
    sqrt_1mab = np.sqrt(1.0 - schedule.alpha_bars)

    loss_per_epoch = []
    for epoch in range(config.epochs):
        lr = learning_rate(epoch, config)
        epoch_losses = []
        for _ in range(config.steps_per_epoch):
            idx = rng.integers(0, len(samples), size=config.batch_size)
            steps = rng.integers(1, config.n_steps + 1, size=config.batch_size)
            eps = rng.standard_normal((config.batch_size, n_actions, horizon))
            clean = actions[idx]
            noised = (sqrt_ab[steps - 1][:, None, None] * clean
                      + sqrt_1mab[steps - 1][:, None, None] * eps)
            loss, grads = denoiser_gradients(
                denoiser, noised, embeds[idx], steps.astype(float), clean
            )
            opt.step(grads, lr=lr)
            epoch_losses.append(loss)
        loss_per_epoch.append(float(np.mean(epoch_losses)))
    return PlannerTrainResult(denoiser, schedule, loss_per_epoch)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def _posterior_coefficients(schedule: NoiseSchedule, n: int) -> tuple[float, float, float]:
    """Coefficients (on predicted clean block, on current block) and variance
    of the reverse-step posterior."""
    a_bar = schedule.alpha_bar(n)
    a_bar_prev = schedule.alpha_bar(n - 1)
    beta = schedule.beta(n)
    alpha = schedule.alpha(n)
    coef_clean = np.sqrt(a_bar_prev) * beta / (1.0 - a_bar)
    coef_current = np.sqrt(alpha) * (1.0 - a_bar_prev) / (1.0 - a_bar)
    variance = beta * (1.0 - a_bar_prev) / (1.0 - a_bar)
    return coef_clean, coef_current, variance


def sample_plans(
    denoiser: Denoiser,
    e_starts: np.ndarray,
    e_goals: np.ndarray,
    horizon: int,
    schedule: NoiseSchedule,
    seed: int = 0,
    denoise_fn=None,
) -> np.ndarray:
    """Ancestral sampling for a batch of (start, goal) embedding pairs.

    The embedding block is rebuilt once per sample and reused at every step;
    only the action block evolves.  `denoise_fn` can replace the model (used
    by the oracle-reconstruction checks).  Returns (batch, horizon) action ids.
    """
    batch = e_starts.shape[0]
    embed_dim = e_starts.shape[1]
    n_actions = denoiser.n_actions
    embeds = np.zeros((batch, embed_dim, horizon))
    embeds[:, :, 0] = e_starts
    embeds[:, :, -1] = e_goals
    rng = np.random.default_rng([seed, 53])
    x = rng.standard_normal((batch, n_actions, horizon))
    predict = denoise_fn if denoise_fn is not None else (
        lambda blocks, steps: denoiser.forward_batch(blocks, embeds, steps)
    )
    for n in range(schedule.n_steps, 0, -1):
        steps = np.full(batch, float(n))
        x0_hat = predict(x, steps)
        coef_clean, coef_current, variance = _posterior_coefficients(schedule, n)
        x = coef_clean * x0_hat + coef_current * x
        if n > 1:
            x = x + np.sqrt(variance) * rng.standard_normal(x.shape)
    return np.argmax(x, axis=1)


def sample_plan(
    denoiser: Denoiser,
    e_start: np.ndarray,
    e_goal: np.ndarray,
    horizon: int,
    schedule: NoiseSchedule,
    seed: int = 0,
) -> tuple[int, ...]:
    """Single-sample convenience wrapper around sample_plans."""
    ids = sample_plans(denoiser, e_start[None], e_goal[None], horizon, schedule, seed)
    return tuple(int(i) for i in ids[0])


# ---------------------------------------------------------------------------
# Checkpoint adapters
# ---------------------------------------------------------------------------

def denoiser_tensors(denoiser: Denoiser, schedule: NoiseSchedule) -> dict[str, np.ndarray]:
    meta = np.array(
        [denoiser.n_actions, denoiser.horizon, denoiser.embed_dim, denoiser.hidden],
        dtype=float,
    )
    return {"meta": meta, "betas": schedule.betas, **denoiser.params}


def denoiser_from_tensors(tensors: dict[str, np.ndarray]) -> tuple[Denoiser, NoiseSchedule]:
    n_actions, horizon, embed_dim, hidden = (int(x) for x in tensors["meta"])
    denoiser = Denoiser(n_actions, horizon, embed_dim, hidden)
    for k in denoiser.params:
        denoiser.params[k] = np.array(tensors[k], dtype=float)
    betas = np.array(tensors["betas"], dtype=float)
    alphas = 1.0 - betas
    return denoiser, NoiseSchedule(betas, alphas, np.cumprod(alphas))
