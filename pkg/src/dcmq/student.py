"""Projection heads, the distillation objective, and the training loop.

Gradients are derived by hand (no autodiff): the chain runs from the two
cross-entropy alignment losses back through row normalization, the soft
quantizer, and the MLP heads.  Every step is checked against central
finite differences in the test suite.  All math is float64; files store
float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import targets as targets_mod
from .errors import (AlignmentError, NumericInputError, ParameterError,
                     ShapeError, TrainingDivergedError)
from .numerics import SeededRng, as_finite_array, sample_gumbel, softmax_temp
from .quantizer import Codebooks, init_codebooks, pqg_backward, pqg_forward

TARGET_MODES = ("npc", "identity", "multihot", "raw")


@dataclass
class TrainConfig:
    """Hyperparameters for a training run.

    Defaults follow the standard recipe: D=256, K=16, temperatures
    {0.2, 1.0, 0.2} for the deterministic softmax, the Gumbel branch, and
    the alignment loss, Adam at 1e-5 for 20 epochs with a tenfold drop
    after epoch 10, batches of 64.
    """

    M: int = 16
    K: int = 16
    D: int = 256
    lam: float = 1.0
    tau_s: float = 0.2
    tau_g: float = 1.0
    tau_ce: float = 0.2
    lr: float = 1e-5
    epochs: int = 20
    lr_drop_epoch: int = 10
    batch_size: int = 64
    seed: int = 42
    joint_training: bool = True
    target_mode: str = "npc"
    use_gumbel: bool = True
    global_targets: bool = False
    img_hidden: tuple[int, ...] = (512,)
    txt_hidden: tuple[int, ...] = (1024, 512)

    def validate(self) -> None:
        if self.M < 1 or self.D < 1 or self.D % self.M != 0:
            raise ParameterError(f"D={self.D} must be divisible by M={self.M}")
        if self.K < 1 or self.K & (self.K - 1):
            raise ParameterError(f"K must be a power of two, got {self.K}")
        if self.lam < 0:
            raise ParameterError(f"lam must be >= 0, got {self.lam}")
        if min(self.tau_s, self.tau_g, self.tau_ce) <= 0:
            raise ParameterError("temperatures must be positive")
        if self.lr <= 0:
            raise ParameterError(f"learning rate must be positive, got {self.lr}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ParameterError("epochs must be >= 0 and batch_size >= 1")
        if self.target_mode not in TARGET_MODES:
            raise ParameterError(
                f"target_mode must be one of {TARGET_MODES}, got {self.target_mode!r}"
            )

    @property
    def effective_lam(self) -> float:
        """Gumbel branch weight actually applied (0 when disabled)."""
        return self.lam if self.use_gumbel else 0.0


# ---------------------------------------------------------------------------
# MLP heads
# ---------------------------------------------------------------------------

def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def _normalize_rows_cached(x):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms == 0.0, 1.0, norms), norms


def _normalize_rows_backward(d_unit, unit, norms):
    g = (d_unit - (d_unit * unit).sum(axis=1, keepdims=True) * unit)
    g = g / np.where(norms == 0.0, 1.0, norms)
    return np.where(norms == 0.0, 0.0, g)


@dataclass
class MLPCache:
    layer_inputs: list            # input to each affine layer
    pre_activations: list         # pre-nonlinearity values, hidden layers only
    unit_out: np.ndarray
    out_norms: np.ndarray


class MLPHead:
    """Affine stack with softplus hidden units and a linear output layer.

    The forward pass ends with row L2 normalization so head outputs live
    on the unit sphere alongside the codewords.  Softplus (ln(1 + e^a),
    derivative sigmoid) is used because a smooth ramp keeps the
    finite-difference gradient checks well conditioned.

    The output layer starts at a small scale (``out_scale``): the row
    normalization then lets tiny weight updates steer the output
    direction, which keeps training effective at the small default
    learning rate.  Hidden layers get the usual sqrt(2/fan_in) scale.
    """

    def __init__(self, dims, rng: SeededRng, out_scale: float = 1e-3):
        dims = tuple(int(d) for d in dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ParameterError(f"head needs at least [in, out] dims, got {dims}")
        self.dims = dims
        self.weights = []
        self.biases = []
        last = len(dims) - 2
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            scale = out_scale if i == last else np.sqrt(2.0 / fan_in)
            self.weights.append(rng.normal(size=(fan_in, fan_out)) * scale)
            self.biases.append(np.zeros(fan_out))

    @classmethod
    def from_arrays(cls, dims, weights, biases) -> "MLPHead":
        """Rebuild a head from stored parameter arrays (deserialization)."""
        head = cls.__new__(cls)
        head.dims = tuple(int(d) for d in dims)
        head.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        head.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for (fan_in, fan_out), w, b in zip(
                zip(head.dims[:-1], head.dims[1:]), head.weights, head.biases):
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise ShapeError(
                    f"parameter arrays do not match dims {head.dims}"
                )
        return head

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def forward(self, features) -> tuple[np.ndarray, MLPCache]:
        """Map (N, in_dim) features to unit-norm (N, out_dim) embeddings.

        Zero pre-normalization rows come back as zero rows (sentinel).
        """
        x = as_finite_array(features, "features")
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(
                f"features must be (N, {self.in_dim}), got shape {x.shape}"
            )
        layer_inputs, pre_acts = [], []
        a = x
        n_layers = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            layer_inputs.append(a)
            pre = a @ w + b
            if i < n_layers - 1:
                pre_acts.append(pre)
                a = _softplus(pre)
            else:
                a = pre
        unit, norms = _normalize_rows_cached(a)
        return unit, MLPCache(layer_inputs, pre_acts, unit, norms)

    def backward(self, cache: MLPCache, d_unit) -> dict[int, tuple]:
        """Parameter gradients for upstream gradient d_unit on the output.

        Returns {layer_index: (dW, db)}.
        """
        d_a = _normalize_rows_backward(np.asarray(d_unit, np.float64),
                                       cache.unit_out, cache.out_norms)
        grads = {}
        n_layers = len(self.weights)
        for i in range(n_layers - 1, -1, -1):
            if i < n_layers - 1:
                d_a = d_a * _sigmoid(cache.pre_activations[i])
            grads[i] = (cache.layer_inputs[i].T @ d_a, d_a.sum(axis=0))
            if i > 0:
                d_a = d_a @ self.weights[i].T
        return grads


# ---------------------------------------------------------------------------
# Alignment losses
# ---------------------------------------------------------------------------

def similarity_ce(sim, target, tau_ce: float) -> float:
    """Cross entropy between row-softmaxed similarities and targets.

    ``loss = -(1/N) * sum_ij Q_ij ln P_ij`` with P = row-softmax(sim/tau)
    and Q = row-softmax(target/tau).  Shift-invariant in ``sim`` rows.
    """
    loss, _ = _similarity_ce_grad(sim, target, tau_ce)
    return loss


def _similarity_ce_grad(sim, target, tau_ce):
    if tau_ce <= 0:
        raise ParameterError(f"tau_ce must be positive, got {tau_ce}")
    sim = as_finite_array(sim, "similarities")
    t = target.values if isinstance(target, targets_mod.TargetMatrix) else \
        as_finite_array(target, "target")
    if sim.shape != t.shape:
        raise ShapeError(f"similarity shape {sim.shape} != target shape {t.shape}")
    n = sim.shape[0]
    a = sim / tau_ce
    a = a - a.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(a).sum(axis=1, keepdims=True))
    log_p = a - log_z
    q = softmax_temp(t, tau_ce)
    loss = float(-(q * log_p).sum() / n)
    d_sim = (np.exp(log_p) - q) / (n * tau_ce)
    return loss, d_sim


def cross_modal_loss(z_rows, x_rows, target, tau_ce: float) -> float:
    """Alignment loss between quantized rows and raw rows of the other
    modality; rows are expected unit-norm already."""
    z = as_finite_array(z_rows, "z")
    x = as_finite_array(x_rows, "x")
    if z.ndim != 2 or x.ndim != 2 or z.shape[1] != x.shape[1]:
        raise ShapeError(f"incompatible shapes {z.shape} and {x.shape}")
    return similarity_ce(z @ x.T, target, tau_ce)


def target_entropy(target, tau_ce: float) -> float:
    """Mean row entropy of softmax(target/tau): the loss lower bound."""
    t = target.values if isinstance(target, targets_mod.TargetMatrix) else \
        as_finite_array(target, "target")
    q = softmax_temp(t, tau_ce)
    log_q = np.log(np.clip(q, 1e-300, None))
    return float(-(q * log_q).sum() / t.shape[0])


# ---------------------------------------------------------------------------
# Model and joint objective
# ---------------------------------------------------------------------------

@dataclass
class StudentModel:
    """Trained (or in-training) heads plus shared codebooks."""

    image_head: MLPHead
    text_head: MLPHead
    codebooks: Codebooks
    config: TrainConfig
    loss_trace: list = field(default_factory=list)  # (epoch, batch, loss)

    def parameters(self) -> dict[str, np.ndarray]:
        """Live parameter arrays keyed by name (updated in place)."""
        params = {}
        for tag, head in (("img", self.image_head), ("txt", self.text_head)):
            for i, (w, b) in enumerate(zip(head.weights, head.biases)):
                params[f"{tag}.W{i}"] = w
                params[f"{tag}.b{i}"] = b
        params["cb"] = self.codebooks.codewords
        return params

    def embed(self, features, modality: str) -> np.ndarray:
        """Unit-norm student embeddings for raw features of one modality."""
        if modality not in ("image", "text"):
            raise ParameterError(f"modality must be image or text, got {modality!r}")
        head = self.image_head if modality == "image" else self.text_head
        out, _ = head.forward(features)
        return out


def total_loss(model: StudentModel, feats_img, feats_txt, target,
               noise_img=None, noise_txt=None, rng: SeededRng | None = None
               ) -> tuple[float, dict[str, np.ndarray]]:
    """Joint alignment loss and gradients for one batch.

    With joint training, quantized embeddings of each modality align with
    the raw embeddings of the other; without it, the two quantized
    embeddings align with each other directly.  Gumbel noise is either
    passed in (frozen, for gradient checks) or sampled from ``rng``.
    Returns ``(loss, grads)`` with grads keyed like
    :meth:`StudentModel.parameters`.
    """
    cfg = model.config
    lam = cfg.effective_lam
    fi = as_finite_array(feats_img, "image features")
    ft = as_finite_array(feats_txt, "text features")
    if fi.shape[0] != ft.shape[0]:
        raise AlignmentError(
            f"batch row counts differ: {fi.shape[0]} vs {ft.shape[0]}"
        )
    n = fi.shape[0]
    if lam > 0:
        shape = (n, cfg.M, cfg.K)
        if noise_img is None:
            if rng is None:
                raise ParameterError("rng required to sample Gumbel noise")
            noise_img = sample_gumbel(rng, shape)
        if noise_txt is None:
            if rng is None:
                raise ParameterError("rng required to sample Gumbel noise")
            noise_txt = sample_gumbel(rng, shape)

    x_img, cache_img = model.image_head.forward(fi)
    x_txt, cache_txt = model.text_head.forward(ft)
    z_img_raw, qc_img = pqg_forward(x_img, model.codebooks, lam,
                                    cfg.tau_s, cfg.tau_g, noise_img)
    z_txt_raw, qc_txt = pqg_forward(x_txt, model.codebooks, lam,
                                    cfg.tau_s, cfg.tau_g, noise_txt)
    z_img, zn_img = _normalize_rows_cached(z_img_raw)
    z_txt, zn_txt = _normalize_rows_cached(z_txt_raw)

    t_values = target.values if isinstance(target, targets_mod.TargetMatrix) \
        else as_finite_array(target, "target")
    if t_values.shape != (n, n):
        raise ShapeError(f"target must be {(n, n)}, got {t_values.shape}")

    if cfg.joint_training:
        loss_a, g_a = _similarity_ce_grad(z_img @ x_txt.T, t_values, cfg.tau_ce)
        loss_b, g_b = _similarity_ce_grad(z_txt @ x_img.T, t_values.T, cfg.tau_ce)
        d_z_img = g_a @ x_txt
        d_x_txt = g_a.T @ z_img
        d_z_txt = g_b @ x_img
        d_x_img = g_b.T @ z_txt
    else:
        loss_a, g_a = _similarity_ce_grad(z_img @ z_txt.T, t_values, cfg.tau_ce)
        loss_b, g_b = _similarity_ce_grad(z_txt @ z_img.T, t_values.T, cfg.tau_ce)
        d_z_img = g_a @ z_txt + g_b.T @ z_txt
        d_z_txt = g_a.T @ z_img + g_b @ z_img
        d_x_img = np.zeros_like(x_img)
        d_x_txt = np.zeros_like(x_txt)
    loss = loss_a + loss_b

    d_zraw_img = _normalize_rows_backward(d_z_img, z_img, zn_img)
    d_zraw_txt = _normalize_rows_backward(d_z_txt, z_txt, zn_txt)
    d_x_from_q_img, d_cb_img = pqg_backward(d_zraw_img, qc_img)
    d_x_from_q_txt, d_cb_txt = pqg_backward(d_zraw_txt, qc_txt)

    grads: dict[str, np.ndarray] = {"cb": d_cb_img + d_cb_txt}
    img_grads = model.image_head.backward(cache_img, d_x_img + d_x_from_q_img)
    txt_grads = model.text_head.backward(cache_txt, d_x_txt + d_x_from_q_txt)
    for i, (dw, db) in img_grads.items():
        grads[f"img.W{i}"] = dw
        grads[f"img.b{i}"] = db
    for i, (dw, db) in txt_grads.items():
        grads[f"txt.W{i}"] = dw
        grads[f"txt.b{i}"] = db
    return loss, grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def init_adam(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(m={k: np.zeros_like(p) for k, p in params.items()},
                     v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place Adam update over the named parameter dict."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != param {p.shape} "
                             f"for {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _batch_target(cfg: TrainConfig, idx, teacher_img, teacher_txt, labels,
                  global_target):
    if global_target is not None:
        return global_target[np.ix_(idx, idx)]
    if cfg.target_mode == "identity":
        return np.eye(len(idx))
    if cfg.target_mode == "multihot":
        return targets_mod.target_multihot(labels[idx]).values
    sim = targets_mod.compute_similarity(teacher_img[idx], teacher_txt[idx])
    if cfg.target_mode == "npc":
        return targets_mod.npc(sim).values
    return sim.values  # raw


def train(cfg: TrainConfig, feats_img, feats_txt, teacher_img=None,
          teacher_txt=None, labels=None) -> StudentModel:
    """Train heads and codebooks end to end; fully deterministic by seed.

    Teacher matrices are required for the npc/raw target modes, labels for
    multihot.  Targets are built per batch from the corresponding teacher
    rows unless ``cfg.global_targets`` precomputes one matrix over the
    whole training set and slices it.
    """
    cfg.validate()
    fi = as_finite_array(feats_img, "image features")
    ft = as_finite_array(feats_txt, "text features")
    if fi.ndim != 2 or ft.ndim != 2:
        raise ShapeError("feature inputs must be 2-d matrices")
    n = fi.shape[0]
    if ft.shape[0] != n:
        raise AlignmentError(f"feature row counts differ: {n} vs {ft.shape[0]}")
    needs_teacher = cfg.target_mode in ("npc", "raw")
    if needs_teacher:
        if teacher_img is None or teacher_txt is None:
            raise ParameterError(
                f"target_mode {cfg.target_mode!r} requires teacher embeddings"
            )
        teacher_img = as_finite_array(teacher_img, "teacher_img")
        teacher_txt = as_finite_array(teacher_txt, "teacher_txt")
        if teacher_img.shape[0] != n or teacher_txt.shape[0] != n:
            raise AlignmentError("teacher row counts do not match features")
    if cfg.target_mode == "multihot":
        if labels is None:
            raise ParameterError("target_mode 'multihot' requires labels")
        labels = np.asarray(labels)
        if labels.shape[0] != n:
            raise AlignmentError("label row count does not match features")

    rng = SeededRng(cfg.seed)
    books = init_codebooks(cfg.M, cfg.K, cfg.D, rng)
    image_head = MLPHead((fi.shape[1], *cfg.img_hidden, cfg.D), rng)
    text_head = MLPHead((ft.shape[1], *cfg.txt_hidden, cfg.D), rng)
    model = StudentModel(image_head, text_head, books, cfg)

    global_target = None
    if cfg.global_targets and needs_teacher:
        sim = targets_mod.compute_similarity(teacher_img, teacher_txt)
        global_target = targets_mod.npc(sim).values \
            if cfg.target_mode == "npc" else sim.values

    params = model.parameters()
    state = init_adam(params)
    lam = cfg.effective_lam
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr / 10.0 if epoch > cfg.lr_drop_epoch else cfg.lr
        order = rng.permutation(n)
        for batch_no, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            target = _batch_target(cfg, idx, teacher_img, teacher_txt,
                                   labels, global_target)
            noise_i = noise_t = None
            if lam > 0:
                noise_i = sample_gumbel(rng, (len(idx), cfg.M, cfg.K))
                noise_t = sample_gumbel(rng, (len(idx), cfg.M, cfg.K))
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, grads = total_loss(model, fi[idx], ft[idx], target,
                                             noise_i, noise_t)
            except NumericInputError as exc:
                # Inputs were validated up front, so non-finite values mid
                # training mean the optimization blew up.
                raise TrainingDivergedError(
                    f"non-finite values at epoch {epoch}, batch {batch_no}: "
                    f"{exc}"
                ) from exc
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {batch_no}"
                )
            adam_step(params, grads, state, lr)
            model.loss_trace.append((epoch, batch_no, loss))
        for name, p in params.items():
            if not np.all(np.isfinite(p)):
                raise TrainingDivergedError(
                    f"non-finite values in {name!r} after epoch {epoch}"
                )
    return model
