"""Encoder/decoder multilayer perceptrons and their training loop.

The encoder regresses a 3D linear-RGB albedo to the 5D unit-cube
coordinates of the parameter warp; the decoder inverts that map. Both
use two rectifier hidden layers and logistic output units, so predicted
parameters always stay inside the warp's unit cube. Training minimizes
L = L_param + L_albedo + L_cycle with plain reverse-mode gradients and
bias-corrected Adam.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .space import Dataset, TRAIN_SPLIT, VAL_SPLIT


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4096
    epochs: int = 400
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    hidden_width: int = 70
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.epochs,
               self.hidden_width) <= 0:
            raise DomainError("training hyperparameters must be positive")

    def to_dict(self) -> dict:
        return {"learning_rate": self.learning_rate,
                "batch_size": self.batch_size, "epochs": self.epochs,
                "beta1": self.beta1, "beta2": self.beta2,
                "epsilon": self.epsilon, "seed": self.seed,
                "hidden_width": self.hidden_width,
                "loss_weights": list(self.loss_weights)}


@dataclass
class Mlp:
    """Fully connected network: weight matrices and bias vectors per layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def check_finite(self) -> "Mlp":
        for arr in self.weights + self.biases:
            if not np.all(np.isfinite(arr)):
                raise DomainError("network weights contain non-finite values")
        return self


@dataclass
class LossBreakdown:
    param: float
    albedo: float
    cycle: float

    @property
    def total(self) -> float:
        return self.param + self.albedo + self.cycle


def init_mlp(dims: list[int], rng: np.random.Generator) -> Mlp:
    """Uniform fan-scaled initialization, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases)


def encoder_dims(hidden_width: int = 70) -> list[int]:
    return [3, hidden_width, hidden_width, 5]


def decoder_dims(hidden_width: int = 70) -> list[int]:
    return [5, hidden_width, hidden_width, 3]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward(mlp: Mlp, x: np.ndarray):
    """Returns (output, cache of layer activations) for a (n, d_in) batch."""
    acts = [x]
    h = x
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = h @ w + b
        h = _sigmoid(z) if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return h, acts


def _backward(mlp: Mlp, acts: list[np.ndarray], d_out: np.ndarray):
    """Gradients of a scalar loss given d(loss)/d(output); also d(loss)/d(input)."""
    grads_w = [np.zeros_like(w) for w in mlp.weights]
    grads_b = [np.zeros_like(b) for b in mlp.biases]
    last = len(mlp.weights) - 1
    y = acts[-1]
    delta = d_out * y * (1.0 - y)  # logistic output units
    for i in range(last, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ mlp.weights[i].T) * (acts[i] > 0.0)
    d_in = delta @ mlp.weights[0].T if last >= 0 else d_out
    return grads_w, grads_b, d_in


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def encoder_forward(w_enc: Mlp, rgb: np.ndarray) -> np.ndarray:
    """RGB albedo(s) to predicted unit-cube parameter coordinates."""
    w_enc.check_finite()
    batch, single = _as_batch(rgb)
    out, _ = _forward(w_enc, batch)
    return out[0] if single else out


def decoder_forward(w_dec: Mlp, u: np.ndarray) -> np.ndarray:
    """Unit-cube parameter coordinates to predicted RGB albedo(s)."""
    w_dec.check_finite()
    batch, single = _as_batch(u)
    out, _ = _forward(w_dec, batch)
    return out[0] if single else out


def loss(u: np.ndarray, rgb: np.ndarray, w_enc: Mlp, w_dec: Mlp,
         weights: tuple[float, float, float] = (1.0, 1.0, 1.0)) -> LossBreakdown:
    """Three-part loss of one batch of (u, rgb) pairs."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    rgb = np.atleast_2d(np.asarray(rgb, dtype=float))
    u_hat, _ = _forward(w_enc, rgb)
    rgb_hat, _ = _forward(w_dec, u)
    rgb_cycle, _ = _forward(w_dec, u_hat)
    return LossBreakdown(
        param=weights[0] * float(np.mean((u_hat - u) ** 2)),
        albedo=weights[1] * float(np.mean(np.abs(rgb_hat - rgb))),
        cycle=weights[2] * float(np.mean(np.abs(rgb_cycle - rgb))),
    )


def _accumulate(target_w, target_b, grads_w, grads_b):
    for t, g in zip(target_w, grads_w):
        t += g
    for t, g in zip(target_b, grads_b):
        t += g


def backprop(u: np.ndarray, rgb: np.ndarray, w_enc: Mlp, w_dec: Mlp,
             weights: tuple[float, float, float] = (1.0, 1.0, 1.0)):
    """Exact gradients of the summed loss; L1 subgradient at 0 is 0.

    Returns (LossBreakdown, (enc_dw, enc_db), (dec_dw, dec_db)).
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    rgb = np.atleast_2d(np.asarray(rgb, dtype=float))
    n = u.shape[0]

    u_hat, enc_acts = _forward(w_enc, rgb)
    rgb_hat, dec_acts = _forward(w_dec, u)
    rgb_cycle, cyc_acts = _forward(w_dec, u_hat)

    l_param = weights[0] * float(np.mean((u_hat - u) ** 2))
    l_albedo = weights[1] * float(np.mean(np.abs(rgb_hat - rgb)))
    l_cycle = weights[2] * float(np.mean(np.abs(rgb_cycle - rgb)))

    # Decoder gradients: direct albedo term plus the cycle pass.
    d_rgb_hat = weights[1] * np.sign(rgb_hat - rgb) / rgb_hat.size
    dec_dw, dec_db, _ = _backward(w_dec, dec_acts, d_rgb_hat)
    d_rgb_cycle = weights[2] * np.sign(rgb_cycle - rgb) / rgb_cycle.size
    cyc_dw, cyc_db, d_u_hat_cycle = _backward(w_dec, cyc_acts, d_rgb_cycle)
    _accumulate(dec_dw, dec_db, cyc_dw, cyc_db)

    # Encoder gradients: parameter term plus the cycle pull-back.
    d_u_hat = weights[0] * 2.0 * (u_hat - u) / u_hat.size + d_u_hat_cycle
    enc_dw, enc_db, _ = _backward(w_enc, enc_acts, d_u_hat)

    del n
    return (LossBreakdown(l_param, l_albedo, l_cycle),
            (enc_dw, enc_db), (dec_dw, dec_db))


@dataclass
class AdamState:
    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    step: int = 0


def adam_init(mlp: Mlp) -> AdamState:
    return AdamState(
        m_w=[np.zeros_like(w) for w in mlp.weights],
        v_w=[np.zeros_like(w) for w in mlp.weights],
        m_b=[np.zeros_like(b) for b in mlp.biases],
        v_b=[np.zeros_like(b) for b in mlp.biases],
    )


def adam_step(mlp: Mlp, grads, state: AdamState, cfg: TrainConfig) -> None:
    """One in-place bias-corrected Adam update."""
    grads_w, grads_b = grads
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for params, gs, ms, vs in ((mlp.weights, grads_w, state.m_w, state.v_w),
                               (mlp.biases, grads_b, state.m_b, state.v_b)):
        for p, g, m, v in zip(params, gs, ms, vs):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= cfg.learning_rate * (m / corr1) / (np.sqrt(v / corr2)
                                                    + cfg.epsilon)


@dataclass
class TrainResult:
    encoder: Mlp
    decoder: Mlp
    best_encoder: Mlp
    best_decoder: Mlp
    history: list[dict] = field(default_factory=list)
    config: TrainConfig | None = None


def _clone(mlp: Mlp) -> Mlp:
    return Mlp([w.copy() for w in mlp.weights], [b.copy() for b in mlp.biases])


def _init_output_bias(mlp: Mlp, targets: np.ndarray) -> None:
    # Start the logistic output at the target mean instead of 0.5; with the
    # small default learning rate this saves most of the bias burn-in.
    mean = np.clip(targets.mean(axis=0), 1e-4, 1.0 - 1e-4)
    mlp.biases[-1][:] = np.log(mean / (1.0 - mean))


def train(ds: Dataset, cfg: TrainConfig) -> TrainResult:
    """Seeded mini-batch training; retains both final and best-val weights."""
    train_ds = ds.subset(TRAIN_SPLIT)
    val_ds = ds.subset(VAL_SPLIT)
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise DomainError("dataset must contain both train and val splits")

    rng = np.random.default_rng(cfg.seed)
    encoder = init_mlp(encoder_dims(cfg.hidden_width), rng)
    decoder = init_mlp(decoder_dims(cfg.hidden_width), rng)
    _init_output_bias(encoder, train_ds.u)
    _init_output_bias(decoder, train_ds.albedo)
    enc_state = adam_init(encoder)
    dec_state = adam_init(decoder)

    best = (np.inf, _clone(encoder), _clone(decoder))
    history: list[dict] = []
    n = len(train_ds)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            breakdown, enc_grads, dec_grads = backprop(
                train_ds.u[idx], train_ds.albedo[idx], encoder, decoder,
                cfg.loss_weights)
            if not np.isfinite(breakdown.total):
                raise DomainError(f"training diverged at epoch {epoch}")
            adam_step(encoder, enc_grads, enc_state, cfg)
            adam_step(decoder, dec_grads, dec_state, cfg)

        train_loss = loss(train_ds.u, train_ds.albedo, encoder, decoder,
                          cfg.loss_weights)
        val_loss = loss(val_ds.u, val_ds.albedo, encoder, decoder,
                        cfg.loss_weights)
        history.append({"epoch": epoch,
                        "train": train_loss, "val": val_loss})
        if val_loss.total < best[0]:
            best = (val_loss.total, _clone(encoder), _clone(decoder))

    return TrainResult(encoder=encoder, decoder=decoder,
                       best_encoder=best[1], best_decoder=best[2],
                       history=history, config=cfg)


def history_to_csv(path, history: list[dict]) -> None:
    rows = [("epoch", "train_param", "train_albedo", "train_cycle",
             "train_total", "val_param", "val_albedo", "val_cycle",
             "val_total")]
    for h in history:
        t, v = h["train"], h["val"]
        rows.append((h["epoch"], t.param, t.albedo, t.cycle, t.total,
                     v.param, v.albedo, v.cycle, v.total))
    with open(path, "w") as fh:
        for row in rows:
            fh.write(",".join(str(c) for c in row) + "\n")
