"""Sparsity-inducing LSTM autoencoder trained with hand-rolled BPTT + Adam.

The encoder stack compresses each P-step feature sequence into a code
sequence; the decoder stack expands the code back and an affine projection
maps onto the feature dimension.  The reconstruction target is the input
sequence in reverse time order.  The loss is the batch mean of the summed
squared reconstruction error plus an L1 penalty on the code, weighted by
``sparsity_weight``; the per-sequence anomaly statistic excludes the L1
term and is normalized per feature.

Everything is plain float64 numpy: gradients come from explicit
backpropagation through time (verified against finite differences in the
test suite), and the optimizer is standard bias-corrected Adam.
"""

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seeding import rng_from

_MAGIC = b"RFAE"
_VERSION = 1


class TrainingFaultError(RuntimeError):
    """Non-finite activation or gradient encountered."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the last good state."""

    def __init__(self, message: str, result: "TrainResult"):
        super().__init__(message)
        self.result = result


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LstmLayerParams:
    """One LSTM layer; gate order along the leading axis is i, f, g, o."""

    input_dim: int
    hidden_dim: int
    w: np.ndarray  # (4H, D) input weights
    u: np.ndarray  # (4H, H) recurrent weights
    b: np.ndarray  # (4H,) bias

    def __post_init__(self):
        h, d = self.hidden_dim, self.input_dim
        if self.w.shape != (4 * h, d) or self.u.shape != (4 * h, h) or self.b.shape != (4 * h,):
            raise ValueError("LSTM parameter shapes inconsistent with dims")


def init_lstm_layer(input_dim: int, hidden_dim: int, rng: np.random.Generator) -> LstmLayerParams:
    """Uniform +-1/sqrt(fan_in) weights; forget-gate bias starts at 1."""
    w = rng.uniform(-1.0, 1.0, (4 * hidden_dim, input_dim)) / math.sqrt(input_dim)
    u = rng.uniform(-1.0, 1.0, (4 * hidden_dim, hidden_dim)) / math.sqrt(hidden_dim)
    b = np.zeros(4 * hidden_dim)
    b[hidden_dim : 2 * hidden_dim] = 1.0
    return LstmLayerParams(input_dim=input_dim, hidden_dim=hidden_dim, w=w, u=u, b=b)


def _lstm_forward_batch(layer: LstmLayerParams, x: np.ndarray, h0=None, c0=None):
    """x: (B, P, D) -> (h_seq (B, P, H), final (h, c), cache of stacked activations)."""
    batch, steps, _ = x.shape
    hid = layer.hidden_dim
    h = np.zeros((batch, hid)) if h0 is None else h0
    c = np.zeros((batch, hid)) if c0 is None else c0

    h_seq = np.empty((batch, steps, hid))
    cache = {
        "x": x,
        "h_prev": np.empty((batch, steps, hid)),
        "c_prev": np.empty((batch, steps, hid)),
        "i": np.empty((batch, steps, hid)),
        "f": np.empty((batch, steps, hid)),
        "g": np.empty((batch, steps, hid)),
        "o": np.empty((batch, steps, hid)),
        "tc": np.empty((batch, steps, hid)),
    }
    for t in range(steps):
        pre = x[:, t, :] @ layer.w.T + h @ layer.u.T + layer.b
        gi = _sigmoid(pre[:, :hid])
        gf = _sigmoid(pre[:, hid : 2 * hid])
        gg = np.tanh(pre[:, 2 * hid : 3 * hid])
        go = _sigmoid(pre[:, 3 * hid :])
        cache["h_prev"][:, t] = h
        cache["c_prev"][:, t] = c
        c = gf * c + gi * gg
        tc = np.tanh(c)
        h = go * tc
        cache["i"][:, t] = gi
        cache["f"][:, t] = gf
        cache["g"][:, t] = gg
        cache["o"][:, t] = go
        cache["tc"][:, t] = tc
        h_seq[:, t] = h
    return h_seq, (h, c), cache


def _lstm_backward_batch(layer: LstmLayerParams, cache: dict, d_h_seq: np.ndarray):
    """Backprop through time for one layer.

    d_h_seq is dLoss/dh_t for every step.  Returns gradients w.r.t. the
    input sequence and the three parameter tensors.
    """
    x = cache["x"]
    batch, steps, _ = x.shape
    hid = layer.hidden_dim

    dw = np.zeros_like(layer.w)
    du = np.zeros_like(layer.u)
    db = np.zeros_like(layer.b)
    dx = np.empty_like(x)
    dh_next = np.zeros((batch, hid))
    dc_next = np.zeros((batch, hid))

    for t in range(steps - 1, -1, -1):
        gi, gf = cache["i"][:, t], cache["f"][:, t]
        gg, go = cache["g"][:, t], cache["o"][:, t]
        tc = cache["tc"][:, t]
        dh = d_h_seq[:, t] + dh_next
        dc = dh * go * (1.0 - tc * tc) + dc_next
        d_pre = np.hstack(
            [
                dc * gg * gi * (1.0 - gi),
                dc * cache["c_prev"][:, t] * gf * (1.0 - gf),
                dc * gi * (1.0 - gg * gg),
                dh * tc * go * (1.0 - go),
            ]
        )
        dw += d_pre.T @ x[:, t, :]
        du += d_pre.T @ cache["h_prev"][:, t]
        db += d_pre.sum(axis=0)
        dx[:, t, :] = d_pre @ layer.w
        dh_next = d_pre @ layer.u
        dc_next = dc * gf
    return dx, dw, du, db


def lstm_forward(layer: LstmLayerParams, sequence: np.ndarray, initial_state=None):
    """Single-sequence forward pass.

    sequence: (P, input_dim).  Returns (output (P, hidden_dim), final
    (h, c) state, cache for the backward pass).
    """
    if sequence.ndim != 2 or sequence.shape[1] != layer.input_dim:
        raise ValueError(
            f"sequence shape {sequence.shape} does not match input_dim {layer.input_dim}"
        )
    h0 = c0 = None
    if initial_state is not None:
        h0, c0 = (s[None, :] for s in initial_state)
    h_seq, (h, c), cache = _lstm_forward_batch(layer, sequence[None], h0, c0)
    return h_seq[0], (h[0], c[0]), cache


@dataclass
class AutoencoderModel:
    """Encoder/decoder LSTM stacks plus the affine output projection."""

    encoder: list[LstmLayerParams]
    decoder: list[LstmLayerParams]
    out_w: np.ndarray  # (feature_dim, last decoder hidden)
    out_b: np.ndarray  # (feature_dim,)
    sparsity_weight: float
    seq_len: int
    l1_last_only: bool = False

    def __post_init__(self):
        if not self.encoder or not self.decoder:
            raise ValueError("encoder and decoder stacks must be non-empty")
        if self.encoder[-1].hidden_dim != self.decoder[0].input_dim:
            raise ValueError("code size mismatch between encoder and decoder")
        if self.out_w.shape != (self.feature_dim, self.decoder[-1].hidden_dim):
            raise ValueError("output projection shape mismatch")

    @property
    def feature_dim(self) -> int:
        return self.encoder[0].input_dim

    @property
    def code_dim(self) -> int:
        return self.encoder[-1].hidden_dim

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """Named tensors in a stable order (checkpoint and optimizer order)."""
        named = []
        for i, layer in enumerate(self.encoder):
            named += [(f"enc{i}.w", layer.w), (f"enc{i}.u", layer.u), (f"enc{i}.b", layer.b)]
        for i, layer in enumerate(self.decoder):
            named += [(f"dec{i}.w", layer.w), (f"dec{i}.u", layer.u), (f"dec{i}.b", layer.b)]
        named += [("out.w", self.out_w), ("out.b", self.out_b)]
        return named

    def config(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "encoder_dims": [l.hidden_dim for l in self.encoder],
            "decoder_dims": [l.hidden_dim for l in self.decoder],
            "seq_len": self.seq_len,
            "sparsity_weight": self.sparsity_weight,
            "l1_last_only": self.l1_last_only,
        }


def build_model(
    feature_dim: int,
    encoder_dims: list[int],
    seq_len: int,
    sparsity_weight: float = 1e-3,
    seed: int = 0,
    decoder_dims: list[int] | None = None,
    l1_last_only: bool = False,
) -> AutoencoderModel:
    """Fresh model; the decoder mirrors the encoder stack unless overridden."""
    if decoder_dims is None:
        decoder_dims = list(reversed(encoder_dims))
    encoder, d = [], feature_dim
    for i, hid in enumerate(encoder_dims):
        encoder.append(init_lstm_layer(d, hid, rng_from(seed, "enc", i)))
        d = hid
    decoder = []
    for i, hid in enumerate(decoder_dims):
        decoder.append(init_lstm_layer(d, hid, rng_from(seed, "dec", i)))
        d = hid
    out_rng = rng_from(seed, "out")
    out_w = out_rng.uniform(-1.0, 1.0, (feature_dim, d)) / math.sqrt(d)
    out_b = np.zeros(feature_dim)
    return AutoencoderModel(
        encoder=encoder,
        decoder=decoder,
        out_w=out_w,
        out_b=out_b,
        sparsity_weight=sparsity_weight,
        seq_len=seq_len,
        l1_last_only=l1_last_only,
    )


def _run_stack(layers, x):
    caches = []
    out = x
    for layer in layers:
        out, _, cache = _lstm_forward_batch(layer, out)
        caches.append(cache)
    return out, caches


def encode(model: AutoencoderModel, features: np.ndarray) -> np.ndarray:
    """Code sequence for (P, D) or (B, P, D) features."""
    single = features.ndim == 2
    x = features[None] if single else features
    if x.shape[2] != model.feature_dim:
        raise ValueError(f"feature dim {x.shape[2]} != model dim {model.feature_dim}")
    h, _ = _run_stack(model.encoder, x)
    return h[0] if single else h


def decode(model: AutoencoderModel, code: np.ndarray) -> np.ndarray:
    """Reconstruction from a code sequence; mirrors ``encode``'s shapes.

    The affine projection has no squashing nonlinearity, so outputs are not
    clipped to the input range.  When reading the result remember that the
    training target is the time-reversed input.
    """
    single = code.ndim == 2
    h = code[None] if single else code
    if h.shape[2] != model.code_dim:
        raise ValueError(f"code dim {h.shape[2]} != model code dim {model.code_dim}")
    out, _ = _run_stack(model.decoder, h)
    y = out @ model.out_w.T + model.out_b
    return y[0] if single else y


def _forward_full(model: AutoencoderModel, x: np.ndarray):
    code, enc_caches = _run_stack(model.encoder, x)
    dec_out, dec_caches = _run_stack(model.decoder, code)
    y = dec_out @ model.out_w.T + model.out_b
    return code, dec_out, y, enc_caches, dec_caches


def _l1_batch(model: AutoencoderModel, code: np.ndarray) -> np.ndarray:
    if model.l1_last_only:
        return np.abs(code[:, -1, :]).sum(axis=1)
    return np.abs(code).sum(axis=(1, 2))


def loss(model: AutoencoderModel, batch: np.ndarray):
    """(total loss, per-sequence reconstruction errors).

    The total is mean over the batch of (summed squared error against the
    reversed input + sparsity_weight * L1 of the code).  The returned errors
    are squared error per feature with the L1 term excluded; these feed the
    anomaly threshold.
    """
    if batch.ndim != 3 or batch.shape[0] == 0:
        raise ValueError("batch must be non-empty with shape (B, P, D)")
    code, _, y, _, _ = _forward_full(model, batch)
    target = batch[:, ::-1, :]
    sse = ((y - target) ** 2).sum(axis=(1, 2))
    total = float(np.mean(sse + model.sparsity_weight * _l1_batch(model, code)))
    per_seq = sse / (batch.shape[1] * batch.shape[2])
    return total, per_seq


def loss_and_gradients(model: AutoencoderModel, batch: np.ndarray):
    """One fused forward/backward pass.

    Returns (total loss, per-sequence errors, gradient list matching
    ``model.parameters()`` order).
    """
    if batch.ndim != 3 or batch.shape[0] == 0:
        raise ValueError("batch must be non-empty with shape (B, P, D)")
    b = batch.shape[0]
    code, dec_out, y, enc_caches, dec_caches = _forward_full(model, batch)
    target = batch[:, ::-1, :]
    diff = y - target
    sse = (diff**2).sum(axis=(1, 2))
    total = float(np.mean(sse + model.sparsity_weight * _l1_batch(model, code)))
    per_seq = sse / (batch.shape[1] * batch.shape[2])

    d_y = 2.0 * diff / b
    d_out_w = np.einsum("btd,bth->dh", d_y, dec_out)
    d_out_b = d_y.sum(axis=(0, 1))
    d_h = d_y @ model.out_w

    dec_grads = []
    for layer, cache in zip(reversed(model.decoder), reversed(dec_caches)):
        d_h, dw, du, db = _lstm_backward_batch(layer, cache, d_h)
        dec_grads.append((dw, du, db))
    dec_grads.reverse()

    d_code_l1 = np.sign(code) * (model.sparsity_weight / b)
    if model.l1_last_only:
        keep_last = np.zeros_like(d_code_l1)
        keep_last[:, -1, :] = d_code_l1[:, -1, :]
        d_code_l1 = keep_last
    d_h = d_h + d_code_l1

    enc_grads = []
    for layer, cache in zip(reversed(model.encoder), reversed(enc_caches)):
        d_h, dw, du, db = _lstm_backward_batch(layer, cache, d_h)
        enc_grads.append((dw, du, db))
    enc_grads.reverse()

    grads: list[np.ndarray] = []
    for dw, du, db in enc_grads + dec_grads:
        grads += [dw, du, db]
    grads += [d_out_w, d_out_b]

    for (name, _), grad in zip(model.parameters(), grads):
        if not np.all(np.isfinite(grad)):
            raise TrainingFaultError(f"non-finite gradient in {name}")
    return total, per_seq, grads


def backprop(model: AutoencoderModel, batch: np.ndarray) -> list[np.ndarray]:
    """Gradients for every parameter tensor, in ``parameters()`` order."""
    _, _, grads = loss_and_gradients(model, batch)
    return grads


def reconstruction_errors(
    model: AutoencoderModel, features: np.ndarray, batch_size: int = 64
) -> np.ndarray:
    """Per-sequence reconstruction error (mean squared, L1 excluded)."""
    errors = np.empty(features.shape[0])
    for start in range(0, features.shape[0], batch_size):
        chunk = features[start : start + batch_size]
        _, per_seq = loss(model, chunk)
        errors[start : start + chunk.shape[0]] = per_seq
    return errors


@dataclass
class OptimizerState:
    """Adam accumulators, one pair per parameter tensor."""

    learning_rate: float
    beta1: float
    beta2: float
    eps: float
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]


def adam_init(
    model: AutoencoderModel,
    learning_rate: float = 0.02,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> OptimizerState:
    shapes = [p for _, p in model.parameters()]
    return OptimizerState(
        learning_rate=learning_rate, beta1=beta1, beta2=beta2, eps=eps, step=0,
        m=[np.zeros_like(p) for p in shapes],
        v=[np.zeros_like(p) for p in shapes],
    )


def adam_step(state: OptimizerState, model: AutoencoderModel, grads: list[np.ndarray]) -> None:
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for (_, param), grad, m, v in zip(model.parameters(), grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        param -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class TrainConfig:
    learning_rate: float = 0.02
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainResult:
    model: AutoencoderModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    stopped_epoch: int = -1


def _snapshot(model: AutoencoderModel) -> list[np.ndarray]:
    return [p.copy() for _, p in model.parameters()]


def _restore(model: AutoencoderModel, snapshot: list[np.ndarray]) -> None:
    for (_, p), saved in zip(model.parameters(), snapshot):
        np.copyto(p, saved)


def _split_loss(model: AutoencoderModel, features: np.ndarray, batch_size: int):
    total_sum = 0.0
    mse_sum = 0.0
    for start in range(0, features.shape[0], batch_size):
        chunk = features[start : start + batch_size]
        chunk_loss, per_seq = loss(model, chunk)
        total_sum += chunk_loss * chunk.shape[0]
        mse_sum += float(per_seq.sum())
    n = features.shape[0]
    return total_sum / n, mse_sum / n


def train(
    model: AutoencoderModel,
    train_features: np.ndarray,
    val_features: np.ndarray,
    config: TrainConfig,
) -> TrainResult:
    """Mini-batch Adam training on clean sequences with early stopping.

    Shuffling, init, and updates all derive from ``config.seed``, so a rerun
    with identical inputs reproduces the returned parameters bit for bit.
    On a non-finite loss the best parameters so far are restored and a
    TrainingDivergedError carrying the partial result is raised.
    """
    if train_features.shape[0] == 0 or val_features.shape[0] == 0:
        raise ValueError("training and validation splits must be non-empty")
    state = adam_init(model, config.learning_rate, config.beta1, config.beta2, config.eps)
    result = TrainResult(model=model)
    best_val = math.inf
    best_params = _snapshot(model)
    n = train_features.shape[0]

    for epoch in range(config.max_epochs):
        order = rng_from(config.seed, "shuffle", epoch).permutation(n)
        epoch_loss_sum = 0.0
        epoch_mse_sum = 0.0
        for start in range(0, n, config.batch_size):
            batch = train_features[order[start : start + config.batch_size]]
            try:
                batch_loss, per_seq, grads = loss_and_gradients(model, batch)
            except TrainingFaultError as exc:
                _restore(model, best_params)
                result.stopped_epoch = epoch
                raise TrainingDivergedError(str(exc), result) from exc
            if not math.isfinite(batch_loss):
                _restore(model, best_params)
                result.stopped_epoch = epoch
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}", result
                )
            adam_step(state, model, grads)
            epoch_loss_sum += batch_loss * batch.shape[0]
            epoch_mse_sum += float(per_seq.sum())

        val_loss, val_mse = _split_loss(model, val_features, config.batch_size)
        result.history.append(
            {
                "epoch": epoch,
                "train_loss": epoch_loss_sum / n,
                "train_mse": epoch_mse_sum / n,
                "val_loss": val_loss,
                "val_mse": val_mse,
            }
        )
        if val_loss < best_val:
            best_val = val_loss
            best_params = _snapshot(model)
            result.best_epoch = epoch
        elif epoch - result.best_epoch >= config.patience:
            break
    result.stopped_epoch = len(result.history) - 1
    _restore(model, best_params)
    return result


def save_checkpoint(path, model: AutoencoderModel, extra: dict | None = None) -> None:
    """Versioned binary checkpoint: JSON header plus float64 tensors."""
    tensors = model.parameters()
    header = {
        "config": model.config(),
        "tensors": [{"name": n, "shape": list(p.shape)} for n, p in tensors],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<2I", _VERSION, len(blob)))
        fh.write(blob)
        for _, p in tensors:
            fh.write(p.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[AutoencoderModel, dict]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, blob_len = struct.unpack("<2I", fh.read(8))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        cfg = header["config"]
        model = build_model(
            feature_dim=cfg["feature_dim"],
            encoder_dims=cfg["encoder_dims"],
            seq_len=cfg["seq_len"],
            sparsity_weight=cfg["sparsity_weight"],
            decoder_dims=cfg["decoder_dims"],
            l1_last_only=cfg["l1_last_only"],
        )
        for (name, param), spec in zip(model.parameters(), header["tensors"]):
            if name != spec["name"] or list(param.shape) != spec["shape"]:
                raise ValueError(f"{path}: tensor table mismatch at {name}")
            raw = fh.read(param.size * 8)
            np.copyto(param, np.frombuffer(raw, dtype="<f8").reshape(param.shape))
    return model, header
