"""Dense networks with hand-written forward and backward passes.

A trained ``DenseNet`` is immutable and stores float32 parameters. Training
and gradient checks run on float64 working copies (a list of per-layer dicts
keyed ``W``, ``b`` and, with batch norm, ``gamma``, ``beta``, ``rm``, ``rv``).
Optimizer state lives in ``AdamState`` next to the working copy, never on the
network.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from prefect.logging import get_logger

from drycss.bundles import read_bundle, write_bundle
from drycss.errors import DataError, DimensionMismatchError, TrainingDivergedError, UsageError

logger = get_logger(__name__)

PARAM_KEYS = ("W", "b", "gamma", "beta")
CLASSIFIER_HIDDEN = (64, 32)
RMSE_FLOOR = 1e-12


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 1000
    noise_std: float = 0.05
    dropout: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise UsageError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 1:
            raise UsageError(f"batch size and epochs must be >= 1, got {self.batch_size}, {self.epochs}")
        if self.noise_std < 0:
            raise UsageError(f"noise std must be >= 0, got {self.noise_std}")
        if not 0.0 <= self.dropout <= 1.0:
            raise UsageError(f"dropout rate must lie in [0, 1], got {self.dropout}")


@dataclass(frozen=True)
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (n_in, n_out)
    bias: np.ndarray
    activation: str = "relu"
    batch_norm: BatchNorm | None = None

    @property
    def n_in(self) -> int:
        return int(self.weight.shape[0])

    @property
    def n_out(self) -> int:
        return int(self.weight.shape[1])


@dataclass(frozen=True)
class DenseNet:
    layers: tuple[Layer, ...]
    hyper: Hyperparams = field(default_factory=Hyperparams)
    seed: int = 0
    history: tuple[float, ...] = ()
    rmse_history: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.layers:
            raise DataError("network has no layers")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.n_out != nxt.n_in:
                raise DimensionMismatchError(f"layer widths do not chain: {prev.n_out} -> {nxt.n_in}")
        for layer in self.layers:
            if layer.activation not in ("relu", "linear"):
                raise DataError(f"unknown activation {layer.activation!r}")
            arrays = [layer.weight, layer.bias]
            if layer.batch_norm is not None:
                bn = layer.batch_norm
                arrays += [bn.gamma, bn.beta, bn.running_mean, bn.running_var]
                if (bn.running_var < 0).any():
                    raise DataError("batch-norm running variance is negative")
            if not all(np.isfinite(a).all() for a in arrays):
                raise DataError("network parameters contain non-finite values")

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out


@dataclass(frozen=True)
class LatentCodec:
    encoder: DenseNet
    decoder: DenseNet
    latent_dim: int
    n_variables: int = 1
    final_loss: float = float("nan")

    def __post_init__(self):
        if self.encoder.n_out != self.latent_dim or self.decoder.n_in != self.latent_dim:
            raise DimensionMismatchError(
                f"encoder/decoder widths {self.encoder.n_out}/{self.decoder.n_in} != latent {self.latent_dim}"
            )
        if self.decoder.n_out != self.encoder.n_in:
            raise DimensionMismatchError("decoder output width differs from encoder input width")


# ---------------------------------------------------------------------------
# Working copies
# ---------------------------------------------------------------------------

def _work(net: DenseNet) -> list[dict]:
    work = []
    for layer in net.layers:
        entry = {
            "W": layer.weight.astype(np.float64),
            "b": layer.bias.astype(np.float64),
            "act": layer.activation,
        }
        if layer.batch_norm is not None:
            bn = layer.batch_norm
            entry.update(
                gamma=bn.gamma.astype(np.float64),
                beta=bn.beta.astype(np.float64),
                rm=bn.running_mean.astype(np.float64),
                rv=bn.running_var.astype(np.float64),
                momentum=bn.momentum,
                eps=bn.eps,
            )
        work.append(entry)
    return work


def _f32(a: np.ndarray) -> np.ndarray:
    out = np.asarray(a, dtype=np.float32).copy()
    out.setflags(write=False)
    return out


def _freeze(work: list[dict], **kwargs) -> DenseNet:
    layers = []
    for entry in work:
        bn = None
        if "gamma" in entry:
            bn = BatchNorm(
                _f32(entry["gamma"]), _f32(entry["beta"]), _f32(entry["rm"]), _f32(entry["rv"]),
                momentum=entry["momentum"], eps=entry["eps"],
            )
        layers.append(Layer(_f32(entry["W"]), _f32(entry["b"]), entry["act"], bn))
    return DenseNet(tuple(layers), **kwargs)


def _forward(work, x, *, training_bn: bool, rng=None, dropout: float = 0.0, update_stats: bool = False):
    cache = []
    h = x
    last = len(work) - 1
    for idx, layer in enumerate(work):
        c = {"h_in": h}
        z = h @ layer["W"] + layer["b"]
        if "gamma" in layer:
            if training_bn:
                mu, var = z.mean(axis=0), z.var(axis=0)
                if update_stats:
                    m, n = layer["momentum"], z.shape[0]
                    layer["rm"] = (1 - m) * layer["rm"] + m * mu
                    unbiased = var * n / (n - 1) if n > 1 else var
                    layer["rv"] = (1 - m) * layer["rv"] + m * unbiased
            else:
                mu, var = layer["rm"], layer["rv"]
            inv = 1.0 / np.sqrt(var + layer["eps"])
            zhat = (z - mu) * inv
            y = layer["gamma"] * zhat + layer["beta"]
            c.update(zhat=zhat, inv=inv, batch=training_bn)
        else:
            y = z
        c["y"] = y
        a = np.maximum(y, 0.0) if layer["act"] == "relu" else y
        if dropout > 0.0 and idx < last:
            mask = (rng.random(a.shape) >= dropout) / (1.0 - dropout)
            a = a * mask
            c["mask"] = mask
        cache.append(c)
        h = a
    return h, cache


def _backward(work, cache, d_out) -> list[dict]:
    grads: list[dict] = [{} for _ in work]
    d = d_out
    for idx in reversed(range(len(work))):
        layer, c, g = work[idx], cache[idx], grads[idx]
        if "mask" in c:
            d = d * c["mask"]
        if layer["act"] == "relu":
            d = d * (c["y"] > 0)
        if "gamma" in layer:
            g["gamma"] = (d * c["zhat"]).sum(axis=0)
            g["beta"] = d.sum(axis=0)
            dzhat = d * layer["gamma"]
            if c["batch"]:
                n = d.shape[0]
                d = c["inv"] / n * (n * dzhat - dzhat.sum(axis=0) - c["zhat"] * (dzhat * c["zhat"]).sum(axis=0))
            else:
                d = dzhat * c["inv"]
        g["W"] = c["h_in"].T @ d
        g["b"] = d.sum(axis=0)
        if idx > 0:
            d = d @ layer["W"].T
    return grads


def forward(
    net: DenseNet,
    X,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
    dropout: float | None = None,
):
    """Output and backward cache. Training mode uses batch statistics and hidden dropout.

    ``dropout`` overrides the network's own rate in training mode.
    """
    X = _as_input(net, X)
    if not training:
        dropout = 0.0
    elif dropout is None:
        dropout = net.hyper.dropout
    if training and rng is None:
        rng = np.random.default_rng(net.seed)
    return _forward(_work(net), X, training_bn=training, rng=rng, dropout=dropout)


def backward(net: DenseNet, cache: list[dict], d_out) -> list[dict[str, np.ndarray]]:
    """Parameter gradients for an upstream gradient on the network output."""
    return _backward(_work(net), cache, np.asarray(d_out, dtype=np.float64))


def _as_input(net: DenseNet, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != net.n_in:
        raise DimensionMismatchError(f"input width {X.shape[1]} does not match network input {net.n_in}")
    return X


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: list[dict]
    v: list[dict]
    t: int = 0

    @classmethod
    def zeros_like(cls, work: list[dict]) -> "AdamState":
        def zeros():
            return [{k: np.zeros_like(layer[k]) for k in PARAM_KEYS if k in layer} for layer in work]

        return cls(zeros(), zeros())


def adam_step(work: list[dict], grads: list[dict], state: AdamState, hyper: Hyperparams) -> None:
    state.t += 1
    b1, b2 = hyper.beta1, hyper.beta2
    correction1 = 1.0 - b1**state.t
    correction2 = 1.0 - b2**state.t
    for layer, g, m, v in zip(work, grads, state.m, state.v):
        for key, grad in g.items():
            m[key] = b1 * m[key] + (1 - b1) * grad
            v[key] = b2 * v[key] + (1 - b2) * grad * grad
            step = (m[key] / correction1) / (np.sqrt(v[key] / correction2) + hyper.adam_eps)
            layer[key] = layer[key] - hyper.learning_rate * step


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def hourglass_widths(p: int, latent_dim: int) -> list[int]:
    widths = []
    h = p // 2
    while h > latent_dim:
        widths.append(h)
        h //= 2
    return widths


def _dense(rng, n_in: int, n_out: int, activation: str, batch_norm: bool) -> dict:
    scale = np.sqrt((2.0 if activation == "relu" else 1.0) / n_in)
    entry = {
        "W": rng.standard_normal((n_in, n_out)) * scale,
        "b": np.zeros(n_out),
        "act": activation,
    }
    if batch_norm:
        entry.update(
            gamma=np.ones(n_out), beta=np.zeros(n_out), rm=np.zeros(n_out), rv=np.ones(n_out),
            momentum=0.1, eps=1e-5,
        )
    return entry


def _chain(rng, dims: list[int], linear: bool) -> list[dict]:
    last = len(dims) - 2
    return [
        _dense(rng, dims[i], dims[i + 1], "linear" if (linear or i == last) else "relu", not linear and i < last)
        for i in range(len(dims) - 1)
    ]


def build_encoder(p: int, latent_dim: int, rng: np.random.Generator, linear: bool = False) -> list[dict]:
    widths = [] if linear else hourglass_widths(p, latent_dim)
    return _chain(rng, [p, *widths, latent_dim], linear)


def build_decoder(latent_dim: int, p: int, rng: np.random.Generator, linear: bool = False) -> list[dict]:
    widths = [] if linear else hourglass_widths(p, latent_dim)[::-1]
    return _chain(rng, [latent_dim, *widths, p], linear)


def build_classifier(latent_dim: int, rng: np.random.Generator, hidden=CLASSIFIER_HIDDEN) -> list[dict]:
    dims = [latent_dim, *hidden, 1]
    return [
        _dense(rng, dims[i], dims[i + 1], "relu" if i < len(dims) - 2 else "linear", False)
        for i in range(len(dims) - 1)
    ]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _mse(out, target):
    diff = out - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def _rmse(out, target):
    err = out[:, 0] - target
    value = float(np.sqrt(np.mean(err * err)))
    d = err / (err.size * max(value, RMSE_FLOOR))
    return value, d[:, None]


def _train(work, X, target, hyper, rng, loss, corrupt, dropout, what, after_epoch=None) -> list[float]:
    n = X.shape[0]
    state = AdamState.zeros_like(work)
    history = []
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            xb = corrupt(X[idx], rng)
            out, cache = _forward(work, xb, training_bn=True, rng=rng, dropout=dropout, update_stats=True)
            value, d_out = loss(out, target[idx])
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch, hyper.learning_rate, what)
            adam_step(work, _backward(work, cache, d_out), state, hyper)
            total += value * len(idx)
        history.append(total / n)
        if after_epoch is not None:
            after_epoch(work)
    return history


def _block_dropout(X, rng, rate: float, noise_std: float, n_variables: int) -> np.ndarray:
    out = X + noise_std * rng.standard_normal(X.shape) if noise_std > 0 else X.copy()
    if rate > 0:
        block = X.shape[1] // n_variables
        dropped = rng.random(X.shape[0]) < rate
        which = rng.integers(0, n_variables, size=X.shape[0])
        cols = np.arange(X.shape[1]) // block
        out[dropped[:, None] & (cols[None, :] == which[:, None])] = 0.0
    return out


def _rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    init_seq, train_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(train_seq)


def train_autoencoder(
    X,
    latent_dim: int,
    hyper: Hyperparams = Hyperparams(),
    seed: int = 0,
    *,
    n_variables: int = 1,
    linear: bool = False,
) -> LatentCodec:
    """Hourglass autoencoder on normalized spectral features.

    Inputs get Gaussian noise, then each sample loses one randomly chosen
    variable block with probability ``hyper.dropout``; the loss is mean squared
    error against the clean input. ``final_loss`` is the last epoch's mean
    training loss.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise DataError(f"autoencoder input must be n x p, got shape {X.shape}")
    p = X.shape[1]
    if n_variables < 1 or p % n_variables:
        raise DataError(f"feature width {p} does not split into {n_variables} variable blocks")
    if not 1 <= latent_dim <= p:
        raise DataError(f"latent size {latent_dim} outside 1..{p}")
    init_rng, train_rng = _rngs(seed)
    encoder = build_encoder(p, latent_dim, init_rng, linear)
    decoder = build_decoder(latent_dim, p, init_rng, linear)
    work = encoder + decoder

    def corrupt(xb, rng):
        return _block_dropout(xb, rng, hyper.dropout, hyper.noise_std, n_variables)

    history = _train(work, X, X, hyper, train_rng, _mse, corrupt, 0.0, "autoencoder")
    n_enc = len(encoder)
    return LatentCodec(
        encoder=_freeze(work[:n_enc], hyper=hyper, seed=seed, history=tuple(history)),
        decoder=_freeze(work[n_enc:], hyper=hyper, seed=seed),
        latent_dim=latent_dim,
        n_variables=n_variables,
        final_loss=history[-1],
    )


def encode(codec: LatentCodec, X) -> np.ndarray:
    out, _ = forward(codec.encoder, X)
    return out


def decode(codec: LatentCodec, Z) -> np.ndarray:
    out, _ = forward(codec.decoder, Z)
    return out


def train_classifier(Z, y, hyper: Hyperparams = Hyperparams(), seed: int = 0, hidden=CLASSIFIER_HIDDEN) -> DenseNet:
    """Dense regressor on latent vectors with a linear output and RMSE loss.

    ``rmse_history`` holds the inference-mode RMSE on the clean training set,
    before training and after every epoch.
    """
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if Z.ndim != 2 or y.shape != (Z.shape[0],):
        raise DimensionMismatchError(f"latent matrix {Z.shape} and labels {y.shape} do not line up")
    if not np.isin(y, (0.0, 1.0)).all():
        raise DataError("classifier labels must be 0 or 1")
    if hyper.dropout >= 1.0:
        raise UsageError("classifier dropout must be below 1")
    init_rng, train_rng = _rngs(seed)
    work = build_classifier(Z.shape[1], init_rng, hidden)

    rmse_history = []

    def track(w):
        out, _ = _forward(w, Z, training_bn=False)
        rmse_history.append(_rmse(out, y)[0])

    def corrupt(zb, rng):
        return zb + hyper.noise_std * rng.standard_normal(zb.shape) if hyper.noise_std > 0 else zb

    track(work)
    history = _train(work, Z, y, hyper, train_rng, _rmse, corrupt, hyper.dropout, "classifier", track)
    return _freeze(work, hyper=hyper, seed=seed, history=tuple(history), rmse_history=tuple(rmse_history))


def predict_nn(classifier: DenseNet, codec: LatentCodec, X) -> np.ndarray:
    if classifier.n_in != codec.latent_dim:
        raise DimensionMismatchError(
            f"classifier input {classifier.n_in} does not match latent size {codec.latent_dim}"
        )
    out, _ = forward(classifier, encode(codec, X))
    return out[:, 0]


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GradientCheckResult:
    max_error: float
    compared: int
    skipped: int


def gradient_check_report(
    net: DenseNet,
    X,
    targets=None,
    *,
    bn_mode: str = "frozen",
    step: float = 1e-3,
    max_checks: int | None = None,
    seed: int = 0,
) -> GradientCheckResult:
    """Analytic gradients of an MSE loss against central differences.

    Runs on float64 copies of the parameters. A parameter is skipped when the
    ±step perturbation changes any relu on/off pattern, which covers exact-zero
    pre-activations. Relative error is |a − n| / max(|a| + |n|, 1e-8).
    """
    if bn_mode not in ("frozen", "batch"):
        raise UsageError(f"unknown batch-norm mode {bn_mode!r}")
    work = _work(net)
    X = _as_input(net, X)
    rng = np.random.default_rng(seed)
    if targets is None:
        targets = rng.standard_normal((X.shape[0], net.n_out))
    batch = bn_mode == "batch"

    def evaluate():
        out, cache = _forward(work, X, training_bn=batch)
        pattern = [c["y"] > 0 for c, layer in zip(cache, work) if layer["act"] == "relu"]
        return out, cache, pattern

    out, cache = forward(net, X, training=batch, dropout=0.0)
    _, d_out = _mse(out, targets)
    grads = backward(net, cache, d_out)
    base = evaluate()[2]

    worst, compared, skipped = 0.0, 0, 0
    for li, layer in enumerate(work):
        for key in PARAM_KEYS:
            if key not in layer:
                continue
            arr = layer[key]
            positions = np.arange(arr.size)
            if max_checks is not None and arr.size > max_checks:
                positions = np.sort(rng.choice(arr.size, size=max_checks, replace=False))
            for flat in positions:
                pos = np.unravel_index(flat, arr.shape)
                orig = arr[pos]
                arr[pos] = orig + step
                out_p, _, pat_p = evaluate()
                arr[pos] = orig - step
                out_m, _, pat_m = evaluate()
                arr[pos] = orig
                if any(not np.array_equal(a, b) for a, b in zip(pat_p + pat_m, base + base)):
                    skipped += 1
                    continue
                numeric = (_mse(out_p, targets)[0] - _mse(out_m, targets)[0]) / (2 * step)
                analytic = grads[li][key][pos]
                rel = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-8)
                worst = max(worst, rel)
                compared += 1
    return GradientCheckResult(worst, compared, skipped)


def gradient_check(net: DenseNet, X, **kwargs) -> float:
    return gradient_check_report(net, X, **kwargs).max_error


def network_from_layers(layers: list[dict], **kwargs) -> DenseNet:
    """Freeze builder output (or any working copy) into a DenseNet."""
    return _freeze(layers, **kwargs)


# ---------------------------------------------------------------------------
# Bundles
# ---------------------------------------------------------------------------

def _topology(net: DenseNet) -> list[dict]:
    return [
        {
            "n_in": layer.n_in,
            "n_out": layer.n_out,
            "activation": layer.activation,
            "batch_norm": None
            if layer.batch_norm is None
            else {"momentum": layer.batch_norm.momentum, "eps": layer.batch_norm.eps},
        }
        for layer in net.layers
    ]


def _net_arrays(net: DenseNet, prefix: str) -> dict[str, np.ndarray]:
    arrays = {}
    for i, layer in enumerate(net.layers):
        arrays[f"{prefix}.{i}.weight"] = layer.weight
        arrays[f"{prefix}.{i}.bias"] = layer.bias
        if layer.batch_norm is not None:
            bn = layer.batch_norm
            arrays[f"{prefix}.{i}.gamma"] = bn.gamma
            arrays[f"{prefix}.{i}.beta"] = bn.beta
            arrays[f"{prefix}.{i}.running_mean"] = bn.running_mean
            arrays[f"{prefix}.{i}.running_var"] = bn.running_var
    return arrays


def _net_from(topology: list[dict], arrays: dict, prefix: str, hyper: dict, seed: int) -> DenseNet:
    layers = []
    for i, spec in enumerate(topology):
        bn = None
        if spec["batch_norm"] is not None:
            bn = BatchNorm(
                _f32(arrays[f"{prefix}.{i}.gamma"]),
                _f32(arrays[f"{prefix}.{i}.beta"]),
                _f32(arrays[f"{prefix}.{i}.running_mean"]),
                _f32(arrays[f"{prefix}.{i}.running_var"]),
                momentum=spec["batch_norm"]["momentum"],
                eps=spec["batch_norm"]["eps"],
            )
        layers.append(
            Layer(_f32(arrays[f"{prefix}.{i}.weight"]), _f32(arrays[f"{prefix}.{i}.bias"]), spec["activation"], bn)
        )
    return DenseNet(tuple(layers), hyper=Hyperparams(**hyper), seed=seed)


@dataclass(frozen=True)
class NnModel:
    codec: LatentCodec
    classifier: DenseNet
    size: int
    seed: int = 0
    lineage: str | None = None


def save_nn(model: NnModel, path: str | Path) -> Path:
    header = {
        "kind": "nn",
        "size": model.size,
        "seed": model.seed,
        "lineage": model.lineage,
        "n_variables": model.codec.n_variables,
        "final_loss": model.codec.final_loss,
        "hyper": asdict(model.classifier.hyper),
        "codec_hyper": asdict(model.codec.encoder.hyper),
        "topology": {
            "encoder": _topology(model.codec.encoder),
            "decoder": _topology(model.codec.decoder),
            "classifier": _topology(model.classifier),
        },
    }
    arrays = {
        **_net_arrays(model.codec.encoder, "encoder"),
        **_net_arrays(model.codec.decoder, "decoder"),
        **_net_arrays(model.classifier, "classifier"),
    }
    return write_bundle(path, header, arrays)


def load_nn(path: str | Path) -> NnModel:
    header, arrays = read_bundle(path)
    if header.get("kind") != "nn":
        raise DataError(f"bundle {path} holds a {header.get('kind')} model, not nn")
    topo = header["topology"]
    seed = int(header["seed"])
    encoder = _net_from(topo["encoder"], arrays, "encoder", header["codec_hyper"], seed)
    decoder = _net_from(topo["decoder"], arrays, "decoder", header["codec_hyper"], seed)
    codec = LatentCodec(
        encoder, decoder, encoder.n_out, n_variables=int(header["n_variables"]), final_loss=header["final_loss"]
    )
    classifier = _net_from(topo["classifier"], arrays, "classifier", header["hyper"], seed)
    return NnModel(codec, classifier, int(header["size"]), seed, header.get("lineage"))
