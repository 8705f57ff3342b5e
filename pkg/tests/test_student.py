"""Head/loss/optimizer tests, centered on the finite-difference oracle."""

import numpy as np
import pytest

from dcmq.errors import (AlignmentError, ParameterError, ShapeError,
                         TrainingDivergedError)
from dcmq.numerics import SeededRng, sample_gumbel
from dcmq.quantizer import init_codebooks
from dcmq.student import (AdamState, MLPHead, StudentModel, TrainConfig,
                          adam_step, cross_modal_loss, init_adam,
                          similarity_ce, target_entropy, total_loss, train)
from dcmq.targets import compute_similarity, npc, target_identity


def mlp_oracle(weights, biases, feats):
    """Loop-based forward pass: softplus hiddens, linear out, unit rows."""
    a = np.asarray(feats, dtype=np.float64)
    for i, (w, b) in enumerate(zip(weights, biases)):
        pre = a @ w + b
        a = np.log1p(np.exp(pre)) if i < len(weights) - 1 else pre
    out = np.zeros_like(a)
    for r in range(a.shape[0]):
        norm = np.linalg.norm(a[r])
        out[r] = a[r] / norm if norm else a[r]
    return out


def tiny_model(seed=0, joint=True, lam=1.0, use_gumbel=True):
    """N=4, D=8, M=2, K=4 configuration with 2-layer heads."""
    cfg = TrainConfig(M=2, K=4, D=8, lam=lam, use_gumbel=use_gumbel,
                      joint_training=joint, img_hidden=(5,), txt_hidden=(5,),
                      batch_size=4, seed=seed)
    rng = SeededRng(seed)
    books = init_codebooks(cfg.M, cfg.K, cfg.D, rng)
    img = MLPHead((6, 5, 8), rng, out_scale=0.5)
    txt = MLPHead((7, 5, 8), rng, out_scale=0.5)
    return StudentModel(img, txt, books, cfg)


def tiny_batch(seed=1, n=4):
    rng = SeededRng(seed)
    fi = rng.normal(size=(n, 6))
    ft = rng.normal(size=(n, 7))
    target = npc(compute_similarity(rng.normal(size=(n, 5)),
                                    rng.normal(size=(n, 5)))).values
    return fi, ft, target


class TestMLPHead:
    def test_identity_single_layer(self):
        head = MLPHead.from_arrays((3, 3), [np.eye(3)], [np.zeros(3)])
        feats = np.array([[3.0, 0.0, 4.0]])
        out, _ = head.forward(feats)
        np.testing.assert_allclose(out, [[0.6, 0.0, 0.8]])

    def test_zero_weights_zero_sentinel_rows(self):
        head = MLPHead.from_arrays((3, 2), [np.zeros((3, 2))], [np.zeros(2)])
        out, _ = head.forward(np.ones((4, 3)))
        np.testing.assert_array_equal(out, np.zeros((4, 2)))

    def test_matches_forward_oracle(self):
        rng = SeededRng(2)
        head = MLPHead((6, 5, 4), rng, out_scale=0.3)
        feats = rng.normal(size=(9, 6))
        out, _ = head.forward(feats)
        np.testing.assert_allclose(
            out, mlp_oracle(head.weights, head.biases, feats), atol=1e-6)

    def test_rows_unit_norm(self):
        rng = SeededRng(3)
        head = MLPHead((4, 8, 8, 5), rng, out_scale=0.1)
        out, _ = head.forward(rng.normal(size=(7, 4)))
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-9)

    def test_dim_mismatch(self):
        head = MLPHead((4, 3), SeededRng(1))
        with pytest.raises(ShapeError):
            head.forward(np.ones((2, 5)))


class TestCrossModalLoss:
    def test_perfect_prediction_hits_entropy_floor(self):
        """If similarities equal the target, CE(Q, Q) = H(Q)."""
        rng = SeededRng(4)
        t = npc(compute_similarity(rng.normal(size=(6, 4)),
                                   rng.normal(size=(6, 4)))).values
        loss = similarity_ce(t, t, 0.2)
        np.testing.assert_allclose(loss, target_entropy(t, 0.2), atol=1e-9)

    def test_uniform_prediction_identity_target(self):
        """N=2, near-one-hot target rows, uniform P: loss = ln 2."""
        z = np.array([[1.0, 0.0], [1.0, 0.0]])
        x = np.array([[0.0, 1.0], [0.0, 1.0]])  # z @ x.T is all zeros
        loss = cross_modal_loss(z, x, target_identity(2), 0.01)
        np.testing.assert_allclose(loss, np.log(2.0), atol=1e-9)

    def test_gibbs_inequality(self):
        """Any P loses to Q itself: loss >= mean target row entropy."""
        rng = SeededRng(5)
        for _ in range(100):
            t = npc(compute_similarity(rng.normal(size=(5, 3)),
                                       rng.normal(size=(5, 3)))).values
            sim = rng.normal(size=(5, 5))
            assert similarity_ce(sim, t, 0.2) >= target_entropy(t, 0.2) - 1e-12

    def test_row_shift_invariance(self):
        rng = SeededRng(6)
        sim = rng.normal(size=(4, 4))
        t = target_identity(4)
        shifted = sim + 3.7
        np.testing.assert_allclose(similarity_ce(sim, t, 0.2),
                                   similarity_ce(shifted, t, 0.2), atol=1e-6)

    def test_bad_temperature(self):
        with pytest.raises(ParameterError):
            cross_modal_loss(np.eye(2), np.eye(2), target_identity(2), 0.0)


class TestTotalLossGradients:
    """Hand-derived backprop vs central finite differences."""

    @staticmethod
    def _eval_loss(model, fi, ft, target, noise_i, noise_t):
        loss, _ = total_loss(model, fi, ft, target, noise_i, noise_t)
        return loss

    @pytest.mark.parametrize("joint,lam", [(True, 1.0), (True, 0.0),
                                           (False, 1.0)])
    def test_gradient_oracle(self, joint, lam):
        model = tiny_model(joint=joint, lam=lam)
        fi, ft, target = tiny_batch()
        rng = SeededRng(7)
        noise_i = sample_gumbel(rng, (4, 2, 4)) if lam > 0 else None
        noise_t = sample_gumbel(rng, (4, 2, 4)) if lam > 0 else None
        loss, grads = total_loss(model, fi, ft, target, noise_i, noise_t)
        assert np.isfinite(loss)

        params = model.parameters()
        assert set(grads) == set(params)
        h = 1e-6
        for name, p in params.items():
            flat = p.reshape(-1)
            grad_flat = grads[name].reshape(-1)
            for idx in range(0, flat.size, max(1, flat.size // 12)):
                orig = flat[idx]
                flat[idx] = orig + h
                up = self._eval_loss(model, fi, ft, target, noise_i, noise_t)
                flat[idx] = orig - h
                down = self._eval_loss(model, fi, ft, target, noise_i, noise_t)
                flat[idx] = orig
                numeric = (up - down) / (2 * h)
                analytic = grad_flat[idx]
                denom = max(1e-8, abs(numeric), abs(analytic))
                assert abs(numeric - analytic) / denom < 1e-3, \
                    f"{name}[{idx}]: analytic {analytic} vs numeric {numeric}"

    def test_lam_zero_equals_gumbel_disabled(self):
        """lam=0 and use_gumbel=False must follow the same gradient path."""
        fi, ft, target = tiny_batch()
        model_a = tiny_model(lam=0.0, use_gumbel=True)
        model_b = tiny_model(lam=1.0, use_gumbel=False)
        loss_a, grads_a = total_loss(model_a, fi, ft, target)
        loss_b, grads_b = total_loss(model_b, fi, ft, target)
        assert loss_a == loss_b
        for name in grads_a:
            np.testing.assert_array_equal(grads_a[name], grads_b[name])

    def test_modality_swap_symmetry(self):
        """Equal loss-term weights: swapping modalities and transposing the
        target leaves the total unchanged."""
        cfg = TrainConfig(M=2, K=4, D=8, img_hidden=(5,), txt_hidden=(5,),
                          batch_size=4)
        rng = SeededRng(8)
        books = init_codebooks(cfg.M, cfg.K, cfg.D, rng)
        h1 = MLPHead((6, 5, 8), rng, out_scale=0.5)
        h2 = MLPHead((6, 5, 8), rng, out_scale=0.5)
        fwd = StudentModel(h1, h2, books, cfg)
        rev = StudentModel(h2, h1, books, cfg)
        feats_a = rng.normal(size=(4, 6))
        feats_b = rng.normal(size=(4, 6))
        target = npc(compute_similarity(rng.normal(size=(4, 3)),
                                        rng.normal(size=(4, 3)))).values
        noise_a = sample_gumbel(rng, (4, 2, 4))
        noise_b = sample_gumbel(rng, (4, 2, 4))
        loss_fwd, _ = total_loss(fwd, feats_a, feats_b, target,
                                 noise_a, noise_b)
        loss_rev, _ = total_loss(rev, feats_b, feats_a, target.T,
                                 noise_b, noise_a)
        np.testing.assert_allclose(loss_fwd, loss_rev, atol=1e-12)

    def test_loss_lower_bound(self):
        """total >= H(Q) + H(Q^T) for any model state."""
        model = tiny_model()
        fi, ft, target = tiny_batch()
        rng = SeededRng(9)
        loss, _ = total_loss(model, fi, ft, target,
                             sample_gumbel(rng, (4, 2, 4)),
                             sample_gumbel(rng, (4, 2, 4)))
        bound = target_entropy(target, 0.2) + target_entropy(target.T, 0.2)
        assert loss >= bound - 1e-12

    def test_batch_misalignment(self):
        model = tiny_model()
        with pytest.raises(AlignmentError):
            total_loss(model, np.ones((4, 6)), np.ones((3, 7)), np.eye(4))


class TestAdamStep:
    def test_zero_gradient_keeps_params(self):
        params = {"w": np.array([1.0, -2.0])}
        state = init_adam(params)
        adam_step(params, {"w": np.zeros(2)}, state, lr=0.1)
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])

    def test_first_step_closed_form(self):
        """Constant unit gradient: first update is -lr / (1 + eps)."""
        params = {"w": np.array([0.0])}
        state = init_adam(params)
        adam_step(params, {"w": np.array([1.0])}, state, lr=0.1)
        np.testing.assert_allclose(params["w"], [-0.1], atol=1e-8)

    def test_deterministic_trajectories(self):
        def run():
            rng = SeededRng(10)
            params = {"w": rng.normal(size=8)}
            state = init_adam(params)
            for _ in range(25):
                adam_step(params, {"w": rng.normal(size=8)}, state, lr=0.01)
            return params["w"]

        assert np.array_equal(run(), run())

    def test_shape_mismatch(self):
        params = {"w": np.zeros(3)}
        state = AdamState(m={"w": np.zeros(3)}, v={"w": np.zeros(3)})
        with pytest.raises(ShapeError):
            adam_step(params, {"w": np.zeros(4)}, state, lr=0.1)


def small_training_inputs(seed=42, n=160):
    """Clustered two-modality data with matching teacher embeddings."""
    rng = SeededRng(seed)
    protos = {name: rng.normal(size=(4, dim))
              for name, dim in (("img", 10), ("txt", 12), ("teach", 8))}
    for v in protos.values():
        v /= np.linalg.norm(v, axis=1, keepdims=True)
    cls = rng.integers(0, 4, size=n)
    fi = protos["img"][cls] + 0.1 * rng.normal(size=(n, 10))
    ft = protos["txt"][cls] + 0.1 * rng.normal(size=(n, 12))
    ti = protos["teach"][cls] + 0.05 * rng.normal(size=(n, 8))
    tt = protos["teach"][cls] + 0.05 * rng.normal(size=(n, 8))
    ti /= np.linalg.norm(ti, axis=1, keepdims=True)
    tt /= np.linalg.norm(tt, axis=1, keepdims=True)
    return fi, ft, ti, tt


class TestTrain:
    CFG = dict(M=2, K=4, D=16, img_hidden=(16,), txt_hidden=(16,),
               batch_size=32, epochs=5, lr=1e-3, lr_drop_epoch=3)

    def test_zero_epochs_returns_initialized_model(self):
        fi, ft, ti, tt = small_training_inputs()
        cfg = TrainConfig(epochs=0, **{k: v for k, v in self.CFG.items()
                                       if k != "epochs"})
        model = train(cfg, fi, ft, ti, tt)
        assert model.loss_trace == []
        assert model.codebooks.codewords.shape == (2, 4, 8)

    def test_loss_decreases(self):
        fi, ft, ti, tt = small_training_inputs()
        model = train(TrainConfig(**self.CFG), fi, ft, ti, tt)
        by_epoch = {}
        for epoch, _, loss in model.loss_trace:
            by_epoch.setdefault(epoch, []).append(loss)
        assert np.mean(by_epoch[5]) < np.mean(by_epoch[1])

    def test_deterministic_given_seed(self):
        fi, ft, ti, tt = small_training_inputs()
        m1 = train(TrainConfig(**self.CFG), fi, ft, ti, tt)
        m2 = train(TrainConfig(**self.CFG), fi, ft, ti, tt)
        for name, p in m1.parameters().items():
            assert np.array_equal(p, m2.parameters()[name]), name
        assert m1.loss_trace == m2.loss_trace

    def test_row_count_mismatch(self):
        fi, ft, ti, tt = small_training_inputs()
        with pytest.raises(AlignmentError):
            train(TrainConfig(**self.CFG), fi[:-1], ft, ti, tt)
        with pytest.raises(AlignmentError):
            train(TrainConfig(**self.CFG), fi, ft, ti[:-1], tt)

    def test_missing_teacher_rejected(self):
        fi, ft, _, _ = small_training_inputs()
        with pytest.raises(ParameterError):
            train(TrainConfig(**self.CFG), fi, ft)

    def test_multihot_needs_labels(self):
        fi, ft, ti, tt = small_training_inputs()
        cfg = TrainConfig(target_mode="multihot", **self.CFG)
        with pytest.raises(ParameterError):
            train(cfg, fi, ft, ti, tt)

    def test_divergence_reported(self):
        # lr around 1e200 pushes params past sqrt(float64 max): row norms
        # overflow to inf, normalization yields NaN, loss goes non-finite.
        fi, ft, ti, tt = small_training_inputs()
        cfg = TrainConfig(**{**self.CFG, "lr": 1e200})
        with pytest.raises(TrainingDivergedError):
            train(cfg, fi, ft, ti, tt)

    def test_identity_and_multihot_modes_run(self):
        fi, ft, ti, tt = small_training_inputs(n=64)
        labels = np.zeros((64, 4), dtype=np.uint8)
        labels[np.arange(64), SeededRng(0).integers(0, 4, size=64)] = 1
        base = {**self.CFG, "epochs": 1}
        train(TrainConfig(target_mode="identity", **base), fi, ft)
        train(TrainConfig(target_mode="multihot", **base), fi, ft,
              labels=labels)
        train(TrainConfig(target_mode="raw", **base), fi, ft, ti, tt)
        train(TrainConfig(global_targets=True, **base), fi, ft, ti, tt)
