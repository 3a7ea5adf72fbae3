import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from procplan.captioning import (
    BOS,
    EOS,
    CaptionModel,
    CaptionTrainConfig,
    Discriminator,
    GeneratedCaption,
    Mode,
    SamplingSchedule,
    TokenVocabulary,
    adversarial_gradients,
    adversarial_loss,
    caption_gradients,
    caption_loss,
    captioner_from_tensors,
    captioner_tensors,
    discriminator_step,
    forward_generate,
    sample_descriptions,
    schedule_ratio,
    train_professor_forcing,
)
from procplan.checkpoint import load_tensors, save_tensors
from procplan.corpus import SyntheticCorpusConfig, generate_synthetic_corpus
from procplan.errors import ValidationError


class TestSamplingSchedule:
    def test_endpoints(self):
        sched = SamplingSchedule(0.8, 0.1, 1000)
        assert schedule_ratio(0, sched) == 0.8
        assert abs(schedule_ratio(1000, sched) - 0.1) < 1e-12

    def test_midpoint(self):
        sched = SamplingSchedule(0.8, 0.1, 1000)
        assert schedule_ratio(500, sched) == pytest.approx(0.45, abs=1e-12)

    def test_clamps_past_total(self):
        sched = SamplingSchedule(0.8, 0.1, 100)
        assert schedule_ratio(5000, sched) == 0.1

    def test_monotone_non_increasing(self):
        sched = SamplingSchedule(0.8, 0.1, 333)
        values = [schedule_ratio(s, sched) for s in range(0, 334)]
        assert all(b <= a for a, b in zip(values, values[1:]))

    @settings(max_examples=100, deadline=None)
    @given(
        a=st.integers(min_value=0, max_value=1000),
        b=st.integers(min_value=0, max_value=1000),
    )
    def test_linearity(self, a, b):
        sched = SamplingSchedule(0.8, 0.1, 1000)
        lhs = schedule_ratio(a, sched) + schedule_ratio(b, sched)
        rhs = 2.0 * schedule_ratio((a + b) / 2.0, sched)
        assert abs(lhs - rhs) < 1e-12

    def test_invalid_bounds_rejected(self):
        with pytest.raises(ValidationError):
            SamplingSchedule(0.1, 0.8, 100)
        with pytest.raises(ValidationError):
            SamplingSchedule(0.8, 0.1, 0)


def tiny_vocab(n_content=5):
    return TokenVocabulary([f"w{i}" for i in range(n_content)])


def point_mass_model(vocab, sequence_ids, kappa=30.0, margin=40.0):
    """Hand-built weights whose next-token distribution is (numerically) a
    point mass along BOS -> sequence -> EOS."""
    v = len(vocab)
    model = CaptionModel(v, feature_dim=3, hidden=v, seed=0)
    p = model.params
    p["obs_w"] = np.zeros_like(p["obs_w"])
    p["obs_b"] = np.zeros_like(p["obs_b"])
    p["emb"] = np.eye(v) * kappa
    p["w_xh"] = np.eye(v)
    p["w_hh"] = np.zeros_like(p["w_hh"])
    p["b_h"] = np.zeros_like(p["b_h"])
    p["w_out"] = np.zeros((v, v))
    p["b_out"] = np.zeros(v)
    path = [BOS] + list(sequence_ids) + [EOS]
    for prev, nxt in zip(path[:-1], path[1:]):
        p["w_out"][nxt, prev] = margin
    return model


class TestForwardGenerate:
    def test_point_mass_model_scores_gt_at_zero_nll(self):
        vocab = tiny_vocab()
        gt = vocab.encode(("w0", "w3"))
        model = point_mass_model(vocab, gt)
        cap = forward_generate(model, np.zeros(3), Mode.TEACHER_FORCED, gt, seed=1)
        assert cap.nll < 1e-6
        assert cap.token_ids == gt

    def test_uniform_model_nll_is_log_vocab(self):
        vocab = TokenVocabulary([f"w{i}" for i in range(29)])
        assert len(vocab) == 32
        model = CaptionModel(len(vocab), feature_dim=3, hidden=8, seed=0)
        model.params["w_out"] = np.zeros_like(model.params["w_out"])
        model.params["b_out"] = np.zeros_like(model.params["b_out"])
        gt = vocab.encode(("w1", "w2", "w3"))
        cap = forward_generate(model, np.ones(3), Mode.TEACHER_FORCED, gt, seed=1)
        assert cap.nll == pytest.approx(np.log(32), rel=1e-12)

    def test_teacher_forced_requires_gt(self):
        model = CaptionModel(8, 3, hidden=6)
        with pytest.raises(ValidationError):
            forward_generate(model, np.zeros(3), Mode.TEACHER_FORCED)

    def test_free_run_deterministic_per_seed(self):
        model = CaptionModel(8, 3, hidden=6, seed=2)
        a = forward_generate(model, np.ones(3), Mode.FREE_RUN, seed=11)
        b = forward_generate(model, np.ones(3), Mode.FREE_RUN, seed=11)
        assert a.token_ids == b.token_ids
        assert a.nll == b.nll

    def test_free_run_point_mass_reproduces_gt(self):
        vocab = tiny_vocab()
        gt = vocab.encode(("w2", "w4", "w1"))
        model = point_mass_model(vocab, gt)
        cap = forward_generate(model, np.zeros(3), Mode.FREE_RUN, seed=5)
        assert cap.token_ids == gt
        assert cap.nll < 1e-6

    def test_free_run_respects_max_len(self):
        model = CaptionModel(8, 3, hidden=6, seed=3)
        model.params["b_out"][EOS] = -50.0  # EOS essentially never sampled
        cap = forward_generate(model, np.zeros(3), Mode.FREE_RUN, seed=1, max_len=7)
        assert len(cap.token_ids) <= 7


class TestSampleDescriptions:
    def test_m_samples_and_determinism(self):
        model = CaptionModel(9, 3, hidden=6, seed=4)
        obs = np.ones(3)
        a = sample_descriptions(model, obs, m=20, seed=3)
        b = sample_descriptions(model, obs, m=20, seed=3)
        assert len(a) == 20
        assert [c.token_ids for c in a] == [c.token_ids for c in b]
        assert all(c.mode is Mode.FREE_RUN for c in a)

    def test_single_sample_point_mass(self):
        vocab = tiny_vocab()
        gt = vocab.encode(("w1", "w0"))
        model = point_mass_model(vocab, gt)
        caps = sample_descriptions(model, np.zeros(3), m=1, seed=0)
        assert caps[0].token_ids == gt
        assert caps[0].nll < 1e-6

    def test_m_below_one_rejected(self):
        model = CaptionModel(8, 3, hidden=6)
        with pytest.raises(ValidationError):
            sample_descriptions(model, np.zeros(3), m=0)


class TestDiscriminator:
    def test_zero_weights_give_log_two(self):
        disc = Discriminator(8, hidden=6, seed=0)
        for k in disc.params:
            disc.params[k] = np.zeros_like(disc.params[k])
        caps = [
            GeneratedCaption((3, 4), 0.0, Mode.TEACHER_FORCED),
            GeneratedCaption((5,), 0.0, Mode.FREE_RUN),
        ]
        loss = discriminator_step(disc, caps, [1, 0])
        assert loss == pytest.approx(np.log(2), rel=1e-12)

    def test_all_ones_labels_logit_zero(self):
        disc = Discriminator(8, hidden=6, seed=0)
        for k in disc.params:
            disc.params[k] = np.zeros_like(disc.params[k])
        caps = [GeneratedCaption((3,), 0.0, Mode.TEACHER_FORCED)] * 4
        loss, _ = disc.loss_and_grads(caps, [1, 1, 1, 1])
        assert loss == pytest.approx(np.log(2), rel=1e-12)

    def test_perfect_separation_loss_vanishes(self):
        disc = Discriminator(8, hidden=8, seed=0)
        kappa = 30.0
        disc.params["emb"] = np.eye(8) * kappa
        disc.params["w1"] = np.eye(8)
        disc.params["b1"] = np.zeros(8)
        w2 = np.zeros(8)
        w2[3], w2[4] = 20.0, -20.0
        disc.params["w2"] = w2
        disc.params["b2"] = np.zeros(1)
        caps = [
            GeneratedCaption((3,), 0.0, Mode.TEACHER_FORCED),
            GeneratedCaption((4,), 0.0, Mode.FREE_RUN),
        ]
        assert disc.logit((3,)) == pytest.approx(20.0, rel=1e-9)
        assert disc.logit((4,)) == pytest.approx(-20.0, rel=1e-9)
        loss, _ = disc.loss_and_grads(caps, [1, 0])
        assert loss < 1e-6

    def test_empty_batch_rejected(self):
        disc = Discriminator(8)
        with pytest.raises(ValidationError):
            discriminator_step(disc, [], [])


def relative_error(a, b):
    scale = max(abs(a), abs(b), 1e-10)
    return abs(a - b) / scale


def check_gradients(loss_fn, params, grads, rng, n_coords=10, h=1e-5, tol=1e-4):
    """Central finite differences at n_coords random coordinates per tensor."""
    worst = 0.0
    for name, tensor in params.items():
        flat = tensor.reshape(-1)
        gflat = grads[name].reshape(-1)
        idx = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + h
            up = loss_fn()
            flat[i] = keep - h
            down = loss_fn()
            flat[i] = keep
            numeric = (up - down) / (2 * h)
            err = relative_error(numeric, gflat[i])
            worst = max(worst, err)
            assert err < tol, f"{name}[{i}]: analytic {gflat[i]}, numeric {numeric}"
    return worst


class TestCaptionerGradients:
    def setup_method(self):
        self.model = CaptionModel(vocab_size=9, feature_dim=4, hidden=7, seed=6)
        self.obs = np.random.default_rng(0).standard_normal(4)
        self.gt = (4, 6, 3, 8)

    def test_cross_entropy_gradients_match_finite_differences(self):
        inputs = [BOS] + list(self.gt)
        targets = list(self.gt) + [EOS]
        _, grads = caption_gradients(self.model, self.obs, inputs, targets)
        rng = np.random.default_rng(42)
        check_gradients(
            lambda: caption_loss(self.model, self.obs, inputs, targets)[0],
            self.model.params,
            grads,
            rng,
        )

    def test_adversarial_gradients_match_finite_differences(self):
        disc = Discriminator(9, hidden=7, seed=8)
        token_ids = (5, 3, 7)
        from procplan.captioning import _rollout

        inputs = [BOS] + list(token_ids[:-1])
        cache = _rollout(self.model, self.obs, inputs)
        center = [p.copy() for p in cache["probs"]]
        _, grads = adversarial_gradients(self.model, disc, self.obs, token_ids)
        rng = np.random.default_rng(43)
        check_gradients(
            lambda: adversarial_loss(
                self.model, disc, self.obs, token_ids, st_center=center
            ),
            self.model.params,
            grads,
            rng,
        )

    def test_adversarial_loss_value_matches_hard_forward(self):
        disc = Discriminator(9, hidden=7, seed=8)
        token_ids = (5, 3, 7)
        loss_default = adversarial_loss(self.model, disc, self.obs, token_ids)
        loss_grad, _ = adversarial_gradients(self.model, disc, self.obs, token_ids)
        assert loss_default == pytest.approx(loss_grad, rel=1e-12)

    def test_discriminator_gradients_match_finite_differences(self):
        disc = Discriminator(9, hidden=7, seed=9)
        caps = [
            GeneratedCaption((3, 5, 8), 0.0, Mode.TEACHER_FORCED),
            GeneratedCaption((4,), 0.0, Mode.FREE_RUN),
            GeneratedCaption((6, 7), 0.0, Mode.FREE_RUN),
        ]
        labels = [1, 0, 0]
        _, grads = disc.loss_and_grads(caps, labels)
        rng = np.random.default_rng(44)
        check_gradients(
            lambda: disc.loss_and_grads(caps, labels)[0], disc.params, grads, rng
        )


def caption_training_set(seed=0, num_videos=60):
    cfg = SyntheticCorpusConfig(
        num_tasks=3,
        actions_per_task=3,
        num_videos=num_videos,
        horizon_range=(2, 3),
        feature_dim=8,
        feature_noise_sigma=0.1,
        caption_noise_prob=0.0,
        seed=seed,
    )
    corpus = generate_synthetic_corpus(cfg)
    vocab = TokenVocabulary(corpus.vocabulary.description_token_pool())
    samples = []
    for video in corpus.videos:
        for i, seg in enumerate(video.segments):
            buckets = [video.feature_track[b]
                       for b in range(int(seg.start), int(seg.end))]
            obs = np.mean(buckets, axis=0)
            samples.append((obs, vocab.encode(video.caption_track[i])))
    return corpus, vocab, samples


class TestProfessorForcing:
    def test_loss_decreases_without_adversarial_term(self):
        _, vocab, samples = caption_training_set()
        model = CaptionModel(len(vocab), 8, hidden=32, seed=1)
        disc = Discriminator(len(vocab), hidden=16, seed=1)
        config = CaptionTrainConfig(epochs=4, lr=5e-3, adversarial_weight=0.0, seed=1)
        result = train_professor_forcing(model, disc, samples, config)
        assert result.lc_per_epoch[-1] < result.lc_per_epoch[0]

    def test_discriminator_update_cadence(self):
        _, vocab, samples = caption_training_set(num_videos=4)
        model = CaptionModel(len(vocab), 8, hidden=12, seed=1)
        disc = Discriminator(len(vocab), hidden=8, seed=1)
        n = len(samples)
        for epochs in (1, 2, 3):
            d = Discriminator(len(vocab), hidden=8, seed=1)
            m = CaptionModel(len(vocab), 8, hidden=12, seed=1)
            result = train_professor_forcing(
                m, d, samples, CaptionTrainConfig(epochs=epochs, seed=2)
            )
            assert result.iterations == epochs * n
            assert d.updates == (epochs * n) // 2

    def test_frozen_ratio_one_never_free_runs(self):
        _, vocab, samples = caption_training_set(num_videos=30)
        assert len(samples) >= 50
        samples = samples[:50]
        model = CaptionModel(len(vocab), 8, hidden=12, seed=1)
        disc = Discriminator(len(vocab), hidden=8, seed=1)
        config = CaptionTrainConfig(
            epochs=20, ratio_start=1.0, ratio_end=1.0, adversarial_weight=0.0, seed=3
        )
        result = train_professor_forcing(model, disc, samples, config)
        assert result.iterations == 1000
        assert result.free_run_iterations == 0
        assert result.teacher_forced_iterations == 1000

    def test_training_is_deterministic(self):
        _, vocab, samples = caption_training_set(num_videos=10)
        outs = []
        for _ in range(2):
            model = CaptionModel(len(vocab), 8, hidden=12, seed=5)
            disc = Discriminator(len(vocab), hidden=8, seed=5)
            result = train_professor_forcing(
                model, disc, samples, CaptionTrainConfig(epochs=2, seed=5)
            )
            outs.append((result.lc_per_epoch, model.params["w_out"].copy()))
        assert outs[0][0] == outs[1][0]
        assert np.array_equal(outs[0][1], outs[1][1])

    def test_teacher_forced_nll_not_above_free_run_on_trained_model(self):
        _, vocab, samples = caption_training_set(num_videos=90)
        model = CaptionModel(len(vocab), 8, hidden=32, seed=7)
        disc = Discriminator(len(vocab), hidden=16, seed=7)
        train_professor_forcing(
            model, disc, samples, CaptionTrainConfig(epochs=5, lr=5e-3, seed=7)
        )
        tf_nll, fr_nll = [], []
        for i, (obs, gt) in enumerate(samples[:200]):
            tf_nll.append(
                forward_generate(model, obs, Mode.TEACHER_FORCED, gt, seed=i).nll
            )
            fr_nll.append(forward_generate(model, obs, Mode.FREE_RUN, seed=i).nll)
        assert len(tf_nll) >= 200
        assert np.mean(fr_nll) - np.mean(tf_nll) >= 0.0

    def test_empty_samples_rejected(self):
        model = CaptionModel(8, 3, hidden=6)
        disc = Discriminator(8)
        with pytest.raises(ValidationError):
            train_professor_forcing(model, disc, [], CaptionTrainConfig())


class TestCaptionerCheckpoint:
    def test_round_trip(self, tmp_path):
        model = CaptionModel(11, 5, hidden=9, seed=3)
        save_tensors(captioner_tensors(model), tmp_path / "cap")
        loaded = captioner_from_tensors(load_tensors(tmp_path / "cap"))
        assert loaded.vocab_size == 11 and loaded.hidden == 9
        for k, v in model.params.items():
            assert np.array_equal(loaded.params[k], v)

    def test_vocab_round_trip(self, tmp_path):
        vocab = TokenVocabulary(["pour", "add", "milk"])
        vocab.save(tmp_path / "tokens.txt")
        loaded = TokenVocabulary.load(tmp_path / "tokens.txt")
        assert loaded.id_of == vocab.id_of
