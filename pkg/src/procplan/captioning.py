"""A toy autoregressive captioner trained with professor forcing.

The captioner is a single-layer tanh recurrence over token embeddings with
the projected observation added at every step:

    h_t = tanh(W_xh e(x_t) + W_hh h_{t-1} + W_obs o + b)
    logits_t = W_out h_t + b_out

Training mixes teacher forcing and free running per iteration: a uniform
draw p_t selects teacher forcing when p_t < ratio, and the ratio decays
linearly over training.  A small discriminator classifies generated token
sequences as teacher-forced or free-run; its binary cross-entropy, weighted
by `adversarial_weight`, is added to the captioner's token cross-entropy so
free-run generations are pushed toward teacher-forced behavior.  The
discriminator itself is updated every second iteration.

The adversarial term reaches the captioner through a straight-through
estimator: the discriminator pools hard embeddings of the sampled tokens,
while the backward pass routes gradient through the sampling distributions
as if the pooled input had been probs @ emb.  `adversarial_loss` exposes the
exact surrogate function that this gradient differentiates (via the
`st_center` argument), so it can be checked against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .optim import AdamW

BOS, EOS, PAD = 0, 1, 2
_N_SPECIALS = 3


class TokenVocabulary:
    """Dense token ids with BOS/EOS/PAD specials at 0/1/2."""

    def __init__(self, tokens: list[str] | tuple[str, ...]):
        content = sorted(set(tokens))
        if any(not t for t in content):
            raise ValidationError("empty token in vocabulary")
        self.id_of = {t: i + _N_SPECIALS for i, t in enumerate(content)}
        self.token_of = {i + _N_SPECIALS: t for i, t in enumerate(content)}

    def __len__(self) -> int:
        return len(self.id_of) + _N_SPECIALS

    def encode(self, tokens) -> tuple[int, ...]:
        return tuple(self.id_of[t] for t in tokens)

    def decode(self, ids) -> tuple[str, ...]:
        return tuple(self.token_of[i] for i in ids if i >= _N_SPECIALS)

    def save(self, path: str | Path) -> None:
        ordered = [self.token_of[i] for i in range(_N_SPECIALS, len(self))]
        Path(path).write_text("\n".join(ordered) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TokenVocabulary":
        return cls([t for t in Path(path).read_text().splitlines() if t])


def vocabulary_tokens(corpus_vocab) -> list[str]:
    """All tokens a captioner must know: every description token."""
    return list(corpus_vocab.description_token_pool())


class Mode(Enum):
    TEACHER_FORCED = "teacher_forced"
    FREE_RUN = "free_run"


@dataclass(frozen=True)
class GeneratedCaption:
    token_ids: tuple[int, ...]
    nll: float
    mode: Mode


@dataclass(frozen=True)
class SamplingSchedule:
    start_ratio: float = 0.8
    end_ratio: float = 0.1
    total_steps: int = 1

    def __post_init__(self):
        if not 0.0 <= self.end_ratio <= self.start_ratio <= 1.0:
            raise ValidationError("need 0 <= end_ratio <= start_ratio <= 1")
        if self.total_steps <= 0:
            raise ValidationError("total_steps must be positive")


def schedule_ratio(step: float, schedule: SamplingSchedule) -> float:
    """Linear interpolation from start_ratio at 0 to end_ratio at total_steps;
    steps past the end clamp to end_ratio."""
    if step < 0:
        raise ValidationError("step must be >= 0")
    if step > schedule.total_steps:
        return schedule.end_ratio
    frac = step / schedule.total_steps
    return schedule.start_ratio + (schedule.end_ratio - schedule.start_ratio) * frac


class CaptionModel:
    def __init__(self, vocab_size: int, feature_dim: int, hidden: int = 64,
                 seed: int = 0):
        rng = np.random.default_rng([seed, 29])
        s = 1.0 / np.sqrt(hidden)
        self.vocab_size = vocab_size
        self.feature_dim = feature_dim
        self.hidden = hidden
        self.params = {
            "obs_w": rng.standard_normal((hidden, feature_dim)) / np.sqrt(feature_dim),
            "obs_b": np.zeros(hidden),
            "emb": rng.standard_normal((vocab_size, hidden)) * s,
            "w_xh": rng.standard_normal((hidden, hidden)) * s,
            "w_hh": rng.standard_normal((hidden, hidden)) * s,
            "b_h": np.zeros(hidden),
            "w_out": rng.standard_normal((vocab_size, hidden)) * s,
            "b_out": np.zeros(vocab_size),
        }

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    return z - np.log(np.exp(z).sum())


def _sample(probs: np.ndarray, rng: np.random.Generator) -> int:
    u = rng.random()
    return int(min(np.searchsorted(np.cumsum(probs), u, side="right"),
                   len(probs) - 1))


def _rollout(model: CaptionModel, obs: np.ndarray, inputs: list[int]) -> dict:
    """Run the recurrence along a fixed input token path; cache everything
    needed for backprop."""
    p = model.params
    ctx = p["obs_w"] @ obs + p["obs_b"]
    h_prev = np.zeros(model.hidden)
    cache = {
        "obs": obs, "inputs": list(inputs), "ctx": ctx,
        "h": [], "h_prev": [], "logits": [], "probs": [],
    }
    for tok in inputs:
        e = p["emb"][tok]
        pre = p["w_xh"] @ e + p["w_hh"] @ h_prev + ctx + p["b_h"]
        h = np.tanh(pre)
        logits = p["w_out"] @ h + p["b_out"]
        cache["h_prev"].append(h_prev)
        cache["h"].append(h)
        cache["logits"].append(logits)
        cache["probs"].append(_softmax(logits))
        h_prev = h
    return cache


def _backward(model: CaptionModel, cache: dict, dlogits: list[np.ndarray]) -> dict:
    """BPTT from per-step logit gradients back to every parameter."""
    p = model.params
    g = model.zero_grads()
    dh_next = np.zeros(model.hidden)
    dctx = np.zeros(model.hidden)
    for t in range(len(cache["inputs"]) - 1, -1, -1):
        h = cache["h"][t]
        dh = p["w_out"].T @ dlogits[t] + dh_next
        g["w_out"] += np.outer(dlogits[t], h)
        g["b_out"] += dlogits[t]
        dpre = dh * (1.0 - h * h)
        tok = cache["inputs"][t]
        g["w_xh"] += np.outer(dpre, p["emb"][tok])
        g["w_hh"] += np.outer(dpre, cache["h_prev"][t])
        g["b_h"] += dpre
        g["emb"][tok] += p["w_xh"].T @ dpre
        dctx += dpre
        dh_next = p["w_hh"].T @ dpre
    g["obs_w"] += np.outer(dctx, cache["obs"])
    g["obs_b"] += dctx
    return g


def _sampled_rollout(model: CaptionModel, obs: np.ndarray, n_steps: int,
                     rng: np.random.Generator) -> tuple[list[int], dict]:
    """Free-run rollout of exactly n_steps: each input is the previously
    sampled token.  Returns (sampled ids, cache along the sampled path)."""
    p = model.params
    ctx = p["obs_w"] @ obs + p["obs_b"]
    h_prev = np.zeros(model.hidden)
    inputs, sampled = [], []
    cache = {"obs": obs, "ctx": ctx, "h": [], "h_prev": [], "logits": [], "probs": []}
    tok = BOS
    for _ in range(n_steps):
        e = p["emb"][tok]
        pre = p["w_xh"] @ e + p["w_hh"] @ h_prev + ctx + p["b_h"]
        h = np.tanh(pre)
        logits = p["w_out"] @ h + p["b_out"]
        probs = _softmax(logits)
        inputs.append(tok)
        cache["h_prev"].append(h_prev)
        cache["h"].append(h)
        cache["logits"].append(logits)
        cache["probs"].append(probs)
        tok = _sample(probs, rng)
        sampled.append(tok)
        h_prev = h
    cache["inputs"] = inputs
    return sampled, cache


def _truncate_at_eos(ids: list[int]) -> tuple[int, ...]:
    out = []
    for i in ids:
        if i == EOS:
            break
        if i >= _N_SPECIALS:
            out.append(i)
    return tuple(out)


def forward_generate(
    model: CaptionModel,
    obs: np.ndarray,
    mode: Mode,
    gt_tokens: tuple[int, ...] | list[int] | None = None,
    seed: int | np.random.Generator = 0,
    max_len: int = 20,
) -> GeneratedCaption:
    """One forward pass in either mode.

    Teacher forced: ground-truth tokens are the inputs and the returned nll
    is the mean negative log-likelihood of the ground truth (with EOS); the
    caption tokens are sampled from each next-token distribution.  Free run:
    the model feeds back its own samples until EOS or max_len, and nll scores
    the sampled tokens themselves.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng([seed])
    if mode is Mode.TEACHER_FORCED:
        if gt_tokens is None:
            raise ValidationError("teacher forcing requires gt_tokens")
        targets = list(gt_tokens) + [EOS]
        inputs = [BOS] + list(gt_tokens)
        cache = _rollout(model, obs, inputs)
        nll = -np.mean([_log_softmax(cache["logits"][t])[targets[t]]
                        for t in range(len(targets))])
        sampled = [_sample(cache["probs"][t], rng) for t in range(len(targets))]
        return GeneratedCaption(_truncate_at_eos(sampled), float(nll), mode)

    p = model.params
    ctx = p["obs_w"] @ obs + p["obs_b"]
    h_prev = np.zeros(model.hidden)
    tok = BOS
    emitted: list[int] = []
    log_probs: list[float] = []
    for _ in range(max_len + 1):
        e = p["emb"][tok]
        pre = p["w_xh"] @ e + p["w_hh"] @ h_prev + ctx + p["b_h"]
        h = np.tanh(pre)
        logits = p["w_out"] @ h + p["b_out"]
        probs = _softmax(logits)
        tok = _sample(probs, rng)
        log_probs.append(float(_log_softmax(logits)[tok]))
        if tok == EOS:
            break
        emitted.append(tok)
        h_prev = h
        if len(emitted) >= max_len:
            break
    nll = -float(np.mean(log_probs)) if log_probs else 0.0
    return GeneratedCaption(_truncate_at_eos(emitted), nll, Mode.FREE_RUN)


def sample_descriptions(
    model: CaptionModel, obs: np.ndarray, m: int = 20, seed: int = 0, max_len: int = 20
) -> list[GeneratedCaption]:
    """M independent free-run captions; draw i uses generator seeded (seed, i)."""
    if m < 1:
        raise ValidationError("m must be >= 1")
    return [
        forward_generate(model, obs, Mode.FREE_RUN,
                         seed=np.random.default_rng([seed, i]), max_len=max_len)
        for i in range(m)
    ]


def caption_loss(model: CaptionModel, obs: np.ndarray, inputs: list[int],
                 targets: list[int]) -> tuple[float, dict]:
    """Mean token cross-entropy of targets along a fixed input path."""
    cache = _rollout(model, obs, inputs)
    nll = -np.mean([_log_softmax(cache["logits"][t])[targets[t]]
                    for t in range(len(targets))])
    return float(nll), cache


def caption_gradients(model: CaptionModel, obs: np.ndarray, inputs: list[int],
                      targets: list[int]) -> tuple[float, dict[str, np.ndarray]]:
    loss, cache = caption_loss(model, obs, inputs, targets)
    n = len(targets)
    dlogits = []
    for t in range(n):
        d = cache["probs"][t].copy()
        d[targets[t]] -= 1.0
        dlogits.append(d / n)
    return loss, _backward(model, cache, dlogits)


# ---------------------------------------------------------------------------
# Discriminator
# ---------------------------------------------------------------------------

def _bce_with_logit(logit: float, target: float) -> float:
    return max(logit, 0.0) - logit * target + np.log1p(np.exp(-abs(logit)))


class Discriminator:
    """Mean-pooled token-embedding classifier: does a caption look
    teacher-forced (label 1) or free-run (label 0)?"""

    def __init__(self, vocab_size: int, hidden: int = 64, lr: float = 1e-3,
                 seed: int = 0):
        rng = np.random.default_rng([seed, 31])
        s = 1.0 / np.sqrt(hidden)
        self.vocab_size = vocab_size
        self.hidden = hidden
        self.params = {
            "emb": rng.standard_normal((vocab_size, hidden)) * s,
            "w1": rng.standard_normal((hidden, hidden)) * s,
            "b1": np.zeros(hidden),
            "w2": rng.standard_normal(hidden) * s,
            "b2": np.zeros(1),
        }
        self.optimizer = AdamW(self.params, lr=lr)
        self.updates = 0

    def _pool(self, token_ids) -> np.ndarray:
        if len(token_ids) == 0:
            return np.zeros(self.hidden)
        return np.mean(self.params["emb"][list(token_ids)], axis=0)

    def logit(self, token_ids) -> float:
        p = self.params
        z = np.tanh(p["w1"] @ self._pool(token_ids) + p["b1"])
        return float(p["w2"] @ z + p["b2"][0])

    def _forward_from_pooled(self, pooled: np.ndarray) -> tuple[float, np.ndarray]:
        p = self.params
        z = np.tanh(p["w1"] @ pooled + p["b1"])
        return float(p["w2"] @ z + p["b2"][0]), z

    def _dpooled(self, pooled: np.ndarray, dlogit: float) -> np.ndarray:
        """Gradient of the logit wrt the pooled input, scaled by dlogit."""
        p = self.params
        z = np.tanh(p["w1"] @ pooled + p["b1"])
        dz = dlogit * p["w2"] * (1.0 - z * z)
        return p["w1"].T @ dz

    def loss_and_grads(self, captions: list[GeneratedCaption],
                       labels: list[int]) -> tuple[float, dict[str, np.ndarray]]:
        if not captions:
            raise ValidationError("discriminator batch must be non-empty")
        if len(captions) != len(labels):
            raise ValidationError("captions and labels must align")
        p = self.params
        g = {k: np.zeros_like(v) for k, v in p.items()}
        total = 0.0
        n = len(captions)
        for cap, label in zip(captions, labels):
            pooled = self._pool(cap.token_ids)
            y, z = self._forward_from_pooled(pooled)
            total += _bce_with_logit(y, float(label))
            dy = (1.0 / (1.0 + np.exp(-y)) - float(label)) / n
            g["w2"] += dy * z
            g["b2"][0] += dy
            dz = dy * p["w2"] * (1.0 - z * z)
            g["w1"] += np.outer(dz, pooled)
            g["b1"] += dz
            dpooled = p["w1"].T @ dz
            if len(cap.token_ids) > 0:
                g["emb"][list(cap.token_ids)] += dpooled / len(cap.token_ids)
        return total / n, g


def discriminator_step(disc: Discriminator, captions: list[GeneratedCaption],
                       labels: list[int]) -> float:
    """Mean BCE of the batch, then one optimizer update on the discriminator."""
    loss, grads = disc.loss_and_grads(captions, labels)
    if not np.isfinite(loss):
        raise ValidationError("discriminator loss is not finite")
    disc.optimizer.step(grads)
    disc.updates += 1
    return loss


# ---------------------------------------------------------------------------
# Adversarial term for the captioner (straight-through)
# ---------------------------------------------------------------------------

def adversarial_loss(
    model: CaptionModel,
    disc: Discriminator,
    obs: np.ndarray,
    token_ids: tuple[int, ...],
    prefix_inputs: list[int] | None = None,
    st_center: list[np.ndarray] | None = None,
) -> float:
    """BCE(disc(caption), teacher-forced) as seen by the captioner.

    The pooled discriminator input for position t is

        emb[s_t] + (probs_t - center_t) @ emb

    with center_t defaulting to probs_t, which makes the forward value the
    plain hard-token loss while keeping the function differentiable in the
    captioner parameters.  Freezing st_center at the evaluation point turns
    this into the smooth surrogate whose analytic gradient is the
    straight-through gradient.
    """
    if len(token_ids) == 0:
        return 0.0
    inputs = prefix_inputs if prefix_inputs is not None else [BOS] + list(token_ids[:-1])
    cache = _rollout(model, obs, inputs)
    emb = disc.params["emb"]
    parts = []
    for t, tok in enumerate(token_ids):
        center = cache["probs"][t] if st_center is None else st_center[t]
        parts.append(emb[tok] + (cache["probs"][t] - center) @ emb)
    pooled = np.mean(parts, axis=0)
    y, _ = disc._forward_from_pooled(pooled)
    return _bce_with_logit(y, 1.0)


def adversarial_gradients(
    model: CaptionModel,
    disc: Discriminator,
    obs: np.ndarray,
    token_ids: tuple[int, ...],
    prefix_inputs: list[int] | None = None,
    cache: dict | None = None,
    positions: list[int] | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Straight-through gradient of the adversarial term wrt the captioner.

    Reuses a training rollout cache when given; `positions` maps each token
    to the rollout step whose distribution sampled it (identity by default).
    Discriminator parameters are treated as constants.
    """
    if len(token_ids) == 0:
        return 0.0, model.zero_grads()
    if cache is None:
        inputs = prefix_inputs if prefix_inputs is not None else [BOS] + list(token_ids[:-1])
        cache = _rollout(model, obs, inputs)
    if positions is None:
        positions = list(range(len(token_ids)))
    emb = disc.params["emb"]
    pooled = np.mean([emb[t] for t in token_ids], axis=0)
    y, _ = disc._forward_from_pooled(pooled)
    loss = _bce_with_logit(y, 1.0)
    dy = 1.0 / (1.0 + np.exp(-y)) - 1.0
    dpooled = disc._dpooled(pooled, dy)
    dprobs = emb @ dpooled / len(token_ids)
    dlogits = [np.zeros(model.vocab_size) for _ in cache["inputs"]]
    for pos in positions:
        probs = cache["probs"][pos]
        dlogits[pos] = dlogits[pos] + probs * (dprobs - probs @ dprobs)
    return loss, _backward(model, cache, dlogits)


# ---------------------------------------------------------------------------
# Professor-forcing training loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CaptionTrainConfig:
    epochs: int = 10
    lr: float = 3e-3
    adversarial_weight: float = 0.1
    ratio_start: float = 0.8
    ratio_end: float = 0.1
    disc_lr: float = 1e-3
    teacher_forcing_below: bool = True  # teacher force iff p_t < ratio
    seed: int = 0


@dataclass
class CaptionTrainResult:
    model: CaptionModel
    discriminator: Discriminator
    lc_per_epoch: list[float]
    iterations: int
    teacher_forced_iterations: int
    free_run_iterations: int


def train_professor_forcing(
    model: CaptionModel,
    disc: Discriminator,
    samples: list[tuple[np.ndarray, tuple[int, ...]]],
    config: CaptionTrainConfig,
) -> CaptionTrainResult:
    """Train the captioner with scheduled sampling plus the adversarial term.

    Each iteration processes one (observation, token ids) pair: roll out
    along the teacher-forced or free-run path, combine the cross-entropy and
    weighted adversarial logit gradients in a single backward pass, and apply
    AdamW.  The discriminator trains on the two most recent generated
    captions every second iteration.
    """
    if not samples:
        raise ValidationError("training needs at least one sample")
    total = config.epochs * len(samples)
    schedule = SamplingSchedule(config.ratio_start, config.ratio_end, total)
    rng = np.random.default_rng([config.seed, 7])
    opt = AdamW(model.params, lr=config.lr)
    disc.optimizer.lr = config.disc_lr

    buffer: list[tuple[GeneratedCaption, int]] = []
    lc_per_epoch = []
    step = 0
    n_tf = n_fr = 0
    for _ in range(config.epochs):
        order = rng.permutation(len(samples))
        epoch_lc = []
        for j in order:
            obs, gt_ids = samples[j]
            targets = list(gt_ids) + [EOS]
            ratio = schedule_ratio(step, schedule)
            p_t = rng.random()
            teacher = (p_t < ratio) if config.teacher_forcing_below else (p_t > ratio)
            if teacher:
                inputs = [BOS] + list(gt_ids)
                cache = _rollout(model, obs, inputs)
                sampled = [_sample(cache["probs"][t], rng) for t in range(len(targets))]
                n_tf += 1
            else:
                sampled, cache = _sampled_rollout(model, obs, len(targets), rng)
                n_fr += 1

            n = len(targets)
            lc = -np.mean([_log_softmax(cache["logits"][t])[targets[t]]
                           for t in range(n)])
            dlogits = []
            for t in range(n):
                d = cache["probs"][t].copy()
                d[targets[t]] -= 1.0
                dlogits.append(d / n)

            view_ids: list[int] = []
            view_pos: list[int] = []
            for t, s in enumerate(sampled):
                if s == EOS:
                    break
                if s >= _N_SPECIALS:
                    view_ids.append(s)
                    view_pos.append(t)
            view = tuple(view_ids)
            la = 0.0
            if view and config.adversarial_weight > 0.0:
                la, adv_grads = adversarial_gradients(
                    model, disc, obs, view, cache=cache, positions=view_pos
                )
            loss = lc + config.adversarial_weight * la
            if not np.isfinite(loss):
                raise ValidationError(f"non-finite training loss at iteration {step}")
            grads = _backward(model, cache, dlogits)
            if view and config.adversarial_weight > 0.0:
                for k in grads:
                    grads[k] += config.adversarial_weight * adv_grads[k]
            opt.step(grads)

            mode = Mode.TEACHER_FORCED if teacher else Mode.FREE_RUN
            buffer.append((GeneratedCaption(view, float(lc), mode), 1 if teacher else 0))
            if len(buffer) > 2:
                buffer = buffer[-2:]
            step += 1
            if step % 2 == 0:
                discriminator_step(disc, [c for c, _ in buffer], [l for _, l in buffer])
            epoch_lc.append(float(lc))
        lc_per_epoch.append(float(np.mean(epoch_lc)))
    return CaptionTrainResult(model, disc, lc_per_epoch, step, n_tf, n_fr)


# ---------------------------------------------------------------------------
# Checkpoint adapters
# ---------------------------------------------------------------------------

def captioner_tensors(model: CaptionModel) -> dict[str, np.ndarray]:
    meta = np.array([model.vocab_size, model.feature_dim, model.hidden], dtype=float)
    return {"meta": meta, **model.params}


def captioner_from_tensors(tensors: dict[str, np.ndarray]) -> CaptionModel:
    vocab_size, feature_dim, hidden = (int(x) for x in tensors["meta"])
    model = CaptionModel(vocab_size, feature_dim, hidden)
    for k in model.params:
        model.params[k] = np.array(tensors[k], dtype=float)
    return model
