import numpy as np
import pytest

from polyasr.model import (
    EncoderConfig,
    ModelConfig,
    ModelError,
    ModelParams,
    MultiHead,
    NonFiniteLossError,
    OptimizerState,
    Predictor,
    PredictorConfig,
    SharedHead,
    TrainConfig,
    TrainExample,
    decode_utterance,
    encode,
    init_params,
    is_trunk,
    join,
    load_checkpoint,
    lr_schedule,
    make_joiner,
    parameter_count,
    predict,
    save_checkpoint,
    train_step,
    utterance_loss,
)

from oracles import relative_error


def tiny_config(head=None, seed=0, subsample=2):
    return ModelConfig(
        feature_dim=4,
        encoder=EncoderConfig(subsample_factor=subsample, hidden_dim=8, num_layers=2),
        predictor=PredictorConfig(d_emb=8, d_hid=8),
        head=head or SharedHead(vocab_size=6),
        seed=seed,
    )


def tiny_train_config(**overrides):
    base = dict(peak_lr=1e-2, warmup_steps=5, total_steps=1000, batch_size=2)
    base.update(overrides)
    return TrainConfig(**base)


def random_example(rng, config, language_id=None, frames=8, n_targets=3, uid="u0"):
    vocab = config.vocab_size_for(language_id)
    features = rng.normal(size=(frames, config.feature_dim))
    targets = tuple(int(t) for t in rng.integers(1, vocab, size=n_targets))
    return TrainExample(uid, features, targets, language_id)


class TestEncoder:
    def test_length_arithmetic(self):
        params = init_params(tiny_config(subsample=4))
        rng = np.random.default_rng(0)
        assert encode(rng.normal(size=(12, 4)), params).shape[0] == 3
        assert encode(rng.normal(size=(13, 4)), params).shape[0] == 4

    def test_eight_fold_subsampling(self):
        config = ModelConfig(
            feature_dim=4,
            encoder=EncoderConfig(subsample_factor=8, hidden_dim=8, num_layers=1),
            predictor=PredictorConfig(d_emb=8, d_hid=8),
            head=SharedHead(vocab_size=5),
        )
        params = init_params(config)
        out = encode(np.random.default_rng(0).normal(size=(80, 4)), params)
        assert out.shape == (10, 8)

    def test_feature_dim_mismatch(self):
        params = init_params(tiny_config())
        with pytest.raises(ModelError):
            encode(np.zeros((8, 5)), params)

    def test_zero_input_gives_equal_frames(self):
        params = init_params(tiny_config())
        out = encode(np.zeros((8, 4)), params)
        assert np.all(out == out[0])

    def test_deterministic(self):
        params = init_params(tiny_config())
        feats = np.random.default_rng(1).normal(size=(10, 4))
        assert np.array_equal(encode(feats, params), encode(feats, params))


class TestPredictor:
    def test_empty_prefix_start_state(self):
        params = init_params(tiny_config())
        out = predict([], params)
        assert out.shape == (1, 8)

    def test_causality_prefixes(self):
        params = init_params(tiny_config())
        a = predict([3, 5], params)
        b = predict([3, 4], params)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
        assert not np.array_equal(a[2], b[2])

    def test_perturbing_token_changes_only_later_positions(self):
        params = init_params(tiny_config())
        a = predict([1, 2, 3, 4], params)
        b = predict([1, 2, 5, 4], params)
        np.testing.assert_array_equal(a[:3], b[:3])
        assert not np.array_equal(a[3], b[3])

    def test_multihead_same_token_differs_by_language(self):
        config = tiny_config(head=MultiHead(vocab_sizes={"l1": 6, "l2": 6}))
        params = init_params(config)
        a = predict([3], params, "l1")
        b = predict([3], params, "l2")
        np.testing.assert_array_equal(a[0], b[0])  # start state is shared trunk
        assert not np.array_equal(a[1], b[1])

    def test_out_of_range_token(self):
        params = init_params(tiny_config())
        with pytest.raises(ModelError):
            predict([17], params)


class TestJoiner:
    def test_cancellation_yields_bias(self):
        params = init_params(tiny_config())
        h = np.random.default_rng(2).normal(size=8)
        np.testing.assert_array_equal(join(h, -h, params), params.tensors["head.b"])

    def test_shared_head_ignores_language(self):
        params = init_params(tiny_config())
        h1 = np.random.default_rng(3).normal(size=8)
        h2 = np.random.default_rng(4).normal(size=8)
        np.testing.assert_array_equal(join(h1, h2, params, "x"), join(h1, h2, params, "y"))

    def test_multihead_biases_differ(self):
        config = tiny_config(head=MultiHead(vocab_sizes={"l1": 6, "l2": 6}))
        params = init_params(config)
        params.tensors["head.l1.b"][:] = 1.0
        params.tensors["head.l2.b"][:] = 2.0
        h = np.zeros(8)
        assert not np.array_equal(join(h, h, params, "l1"), join(h, h, params, "l2"))

    def test_unknown_language_under_multihead(self):
        config = tiny_config(head=MultiHead(vocab_sizes={"l1": 6}))
        params = init_params(config)
        with pytest.raises(ModelError, match="l9"):
            join(np.zeros(8), np.zeros(8), params, "l9")


class TestGradients:
    def test_full_model_finite_differences_shared(self):
        self._check(tiny_config(seed=3), language_id=None)

    def test_full_model_finite_differences_multihead(self):
        config = tiny_config(head=MultiHead(vocab_sizes={"l1": 6, "l2": 5}), seed=4)
        self._check(config, language_id="l1")

    def _check(self, config, language_id):
        rng = np.random.default_rng(11)
        params = init_params(config)
        example = random_example(rng, config, language_id, frames=9, n_targets=3)
        _, grads = utterance_loss(example.features, example.target_ids, language_id, params)
        step = 1e-5
        worst = 0.0
        for name in grads:
            tensor = params.tensors[name]
            numeric = np.zeros_like(tensor)
            it = np.nditer(tensor, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = tensor[idx]
                tensor[idx] = orig + step
                up, _ = utterance_loss(example.features, example.target_ids, language_id, params)
                tensor[idx] = orig - step
                down, _ = utterance_loss(example.features, example.target_ids, language_id, params)
                tensor[idx] = orig
                numeric[idx] = (up - down) / (2 * step)
            err = relative_error(grads[name], numeric, floor=1e-4)
            worst = max(worst, err)
            assert err < 1e-3, f"{name}: rel err {err:.2e}"
        assert worst < 1e-3


class TestTrainStep:
    def test_zero_lr_keeps_params_bitwise(self):
        config = tiny_config()
        params = init_params(config)
        rng = np.random.default_rng(5)
        batch = [random_example(rng, config, uid=f"u{i}") for i in range(2)]
        new_params, new_state, nll = train_step(
            batch, params, OptimizerState.fresh(params), tiny_train_config(peak_lr=0.0)
        )
        assert np.isfinite(nll)
        for name in params.tensors:
            assert np.array_equal(new_params.tensors[name], params.tensors[name])
        assert new_state.step == 1

    def test_overfits_fixed_batch(self):
        config = tiny_config(seed=1)
        params = init_params(config)
        state = OptimizerState.fresh(params)
        tc = tiny_train_config(peak_lr=2e-2, warmup_steps=10, total_steps=2000)
        rng = np.random.default_rng(6)
        batch = [random_example(rng, config, uid=f"u{i}", frames=8, n_targets=2) for i in range(2)]
        first = None
        nll = None
        for _ in range(200):
            params, state, nll = train_step(batch, params, state, tc)
            if first is None:
                first = nll
        assert nll < 0.5 * first

    def test_nonfinite_loss_names_utterance(self):
        config = tiny_config()
        params = init_params(config)
        params.tensors["head.b"][:] = np.nan
        rng = np.random.default_rng(7)
        batch = [random_example(rng, config, uid="bad-utt")]
        with pytest.raises(NonFiniteLossError, match="bad-utt"):
            train_step(batch, params, OptimizerState.fresh(params), tiny_train_config())

    def test_determinism(self):
        def run():
            config = tiny_config(seed=2)
            params = init_params(config)
            state = OptimizerState.fresh(params)
            rng = np.random.default_rng(8)
            tc = tiny_train_config()
            for i in range(5):
                batch = [random_example(rng, config, uid=f"u{i}")]
                params, state, _ = train_step(batch, params, state, tc)
            return params

        a, b = run(), run()
        for name in a.tensors:
            assert np.array_equal(a.tensors[name], b.tensors[name])

    def test_head_isolation_and_trunk_sharing(self):
        config = tiny_config(head=MultiHead(vocab_sizes={"l1": 6, "l2": 6}), seed=9)
        params = init_params(config)
        state = OptimizerState.fresh(params)
        tc = tiny_train_config()
        rng = np.random.default_rng(10)
        # warm the optimizer with a mixed batch first
        mixed = [
            random_example(rng, config, "l1", uid="m1"),
            random_example(rng, config, "l2", uid="m2"),
        ]
        params, state, _ = train_step(mixed, params, state, tc)
        before = {k: v.copy() for k, v in params.tensors.items()}
        only_l1 = [random_example(rng, config, "l1", uid="s1")]
        params, state, _ = train_step(only_l1, params, state, tc)
        for suffix in ("emb", "w", "b"):
            assert np.array_equal(params.tensors[f"head.l2.{suffix}"], before[f"head.l2.{suffix}"])
            assert not np.array_equal(params.tensors[f"head.l1.{suffix}"], before[f"head.l1.{suffix}"])
        trunk = [n for n in params.tensors if is_trunk(n)]
        assert any(not np.array_equal(params.tensors[n], before[n]) for n in trunk)

    def test_multihead_parameter_count_formula(self):
        sizes = {"l1": 9, "l2": 17}
        config = tiny_config(head=MultiHead(vocab_sizes=sizes))
        params = init_params(config)
        d_emb = config.predictor.d_emb
        d_hid = config.predictor.d_hid
        trunk = sum(t.size for n, t in params.tensors.items() if is_trunk(n))
        expected = trunk + sum(v * d_emb + d_hid * v + v for v in sizes.values())
        assert parameter_count(params) == expected


class TestSchedule:
    def test_endpoints(self):
        tc = TrainConfig(peak_lr=4e-4, warmup_steps=20_000, total_steps=700_000)
        assert lr_schedule(20_000, tc) == pytest.approx(4e-4, rel=1e-15)
        assert lr_schedule(700_000, tc) == pytest.approx(4e-5, rel=1e-12)
        assert lr_schedule(10_000, tc) == pytest.approx(2e-4, rel=1e-15)
        assert lr_schedule(0, tc) == 0.0

    def test_monotone_decay_after_warmup(self):
        tc = TrainConfig(peak_lr=1e-3, warmup_steps=10, total_steps=100)
        values = [lr_schedule(s, tc) for s in range(10, 101)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestCheckpoint:
    def test_resume_is_bit_identical(self, tmp_path):
        config = tiny_config(seed=12)
        tc = tiny_train_config()
        rng_batches = []
        rng = np.random.default_rng(13)
        for i in range(6):
            rng_batches.append([random_example(rng, config, uid=f"u{i}")])

        params = init_params(config)
        state = OptimizerState.fresh(params)
        for batch in rng_batches[:3]:
            params, state, _ = train_step(batch, params, state, tc)
        save_checkpoint(tmp_path / "ck.npz", params, state, tc)

        resumed_params, resumed_state, meta = load_checkpoint(tmp_path / "ck.npz")
        assert resumed_state.step == 3
        assert meta["model_config"] == config.to_dict()

        cont, cont_state = params, state
        for batch in rng_batches[3:]:
            cont, cont_state, _ = train_step(batch, cont, cont_state, tc)
            resumed_params, resumed_state, _ = train_step(
                batch, resumed_params, resumed_state, tc
            )
        for name in cont.tensors:
            assert np.array_equal(cont.tensors[name], resumed_params.tensors[name])
            assert np.array_equal(cont_state.m[name], resumed_state.m[name])
            assert np.array_equal(cont_state.v[name], resumed_state.v[name])


class TestConfigValidation:
    def test_dim_mismatch_rejected(self):
        with pytest.raises(ModelError):
            ModelConfig(
                feature_dim=4,
                encoder=EncoderConfig(hidden_dim=8),
                predictor=PredictorConfig(d_emb=8, d_hid=16),
                head=SharedHead(vocab_size=5),
            )

    def test_roundtrip_dict(self):
        config = tiny_config(head=MultiHead(vocab_sizes={"l1": 4}))
        assert ModelConfig.from_dict(config.to_dict()) == config


class TestDecodeAdapters:
    def test_decode_runs_and_is_deterministic(self):
        config = tiny_config()
        params = init_params(config)
        feats = np.random.default_rng(14).normal(size=(10, 4))
        a = decode_utterance(feats, params, mode="beam", beam_width=2)
        b = decode_utterance(feats, params, mode="beam", beam_width=2)
        assert a == b
        g = decode_utterance(feats, params, mode="greedy")
        assert all(t != 0 for t in g)

    def test_adapter_matches_predict(self):
        params = init_params(tiny_config())
        predictor = Predictor(params)
        h, state = predictor.start()
        h1, state = predictor.step(state, 3)
        h2, _ = predictor.step(state, 5)
        ref = predict([3, 5], params)
        np.testing.assert_allclose(h, ref[0], atol=1e-12)
        np.testing.assert_allclose(h1, ref[1], atol=1e-12)
        np.testing.assert_allclose(h2, ref[2], atol=1e-12)

    def test_joiner_closure_matches_join(self):
        params = init_params(tiny_config())
        joiner = make_joiner(params)
        rng = np.random.default_rng(15)
        h_enc, h_pred = rng.normal(size=8), rng.normal(size=8)
        np.testing.assert_array_equal(joiner(h_enc, h_pred), join(h_enc, h_pred, params))
