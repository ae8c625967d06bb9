"""Feature-controllable VAE over flattened surfaces.

Encoder q(z | x, y) and decoder p(x | y, z) are residual dense nets
(module ``nn``); training minimizes summed-squared reconstruction plus a
beta-weighted closed-form KL to the standard Gaussian prior, one noise
draw per datum.  Surfaces and features are standardized with dataset
statistics before entering the networks and restored at the API
boundary.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ivsgen import nn
from ivsgen.errors import FormatError
from ivsgen.features import FEATURE_NAMES, FeatureVector
from ivsgen.surfaces import GridSpec, IVSurface, surface_from_flat

CHECKPOINT_VERSION = 1
LOG_VAR_CLAMP = 20.0
DEFAULT_BETA = 5e-8
DECODE_FLOOR = 1e-4  # decoded vols clipped here; keeps surfaces valid

ENCODER_HIDDEN = [256, 128]
DECODER_HIDDEN = [128, 256]


@dataclass(frozen=True)
class PosteriorParams:
    mu_z: np.ndarray
    log_var_z: np.ndarray


@dataclass
class CvaeModel:
    grid: GridSpec
    feature_names: tuple[str, ...]
    d_z: int
    beta: float
    encoder: nn.ResidualNet
    decoder: nn.ResidualNet
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    seed: int = 0
    feature_ranges: dict[str, tuple[float, float]] | None = None

    @property
    def d_y(self) -> int:
        return len(self.feature_names)

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for name, arr in self.encoder.param_items():
            out[f"enc.{name}"] = arr
        for name, arr in self.decoder.param_items():
            out[f"dec.{name}"] = arr
        return out

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for _, arr in sorted(self.params().items()):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def build_model(
    grid: GridSpec,
    feature_names=("level",),
    d_z: int = 5,
    beta: float = DEFAULT_BETA,
    seed: int = 0,
) -> CvaeModel:
    """Fresh model with He/Xavier init and identity normalization."""
    for name in feature_names:
        if name not in FEATURE_NAMES:
            raise ValueError(f"unknown feature {name!r}")
    if beta <= 0:
        raise ValueError("beta must be positive")
    d = grid.size
    d_y = len(feature_names)
    rng = np.random.default_rng(seed)
    encoder = nn.build_residual_net(rng, d + d_y, ENCODER_HIDDEN, [d_z, d_z])
    decoder = nn.build_residual_net(rng, d_z + d_y, DECODER_HIDDEN, [d])
    return CvaeModel(
        grid=grid,
        feature_names=tuple(feature_names),
        d_z=d_z,
        beta=beta,
        encoder=encoder,
        decoder=decoder,
        x_mean=np.zeros(d),
        x_std=np.ones(d),
        y_mean=np.zeros(d_y),
        y_std=np.ones(d_y),
        seed=seed,
    )


def set_normalization(model: CvaeModel, x_flat: np.ndarray, y_mat: np.ndarray) -> None:
    """Per-pixel and per-feature standardization statistics from data."""
    model.x_mean = x_flat.mean(axis=0)
    model.x_std = np.maximum(x_flat.std(axis=0), 1e-8)
    model.y_mean = y_mat.mean(axis=0)
    model.y_std = np.maximum(y_mat.std(axis=0), 1e-8)


def _norm_x(model, x_flat):
    return (x_flat - model.x_mean) / model.x_std


def _norm_y(model, y):
    return (y - model.y_mean) / model.y_std


def _feature_array(model: CvaeModel, y: FeatureVector) -> np.ndarray:
    """Model-ordered feature values; ``y`` may carry extra features."""
    missing = [n for n in model.feature_names if n not in y.names]
    if missing:
        raise ValueError(
            f"feature set {y.names} is missing {missing} required by the model"
        )
    return np.array([y[n] for n in model.feature_names])


def encode(model: CvaeModel, x: IVSurface, y: FeatureVector) -> PosteriorParams:
    """Posterior parameters (mu_z, log_var_z); log-variance clamped."""
    x_norm = _norm_x(model, x.flatten())[None, :]
    y_norm = _norm_y(model, _feature_array(model, y))[None, :]
    (mu, log_var), _ = model.encoder.forward(np.concatenate([x_norm, y_norm], axis=1))
    return PosteriorParams(
        mu_z=mu[0].copy(),
        log_var_z=np.clip(log_var[0], -LOG_VAR_CLAMP, LOG_VAR_CLAMP),
    )


def reparameterize(p: PosteriorParams, eps: np.ndarray) -> np.ndarray:
    """z = mu + exp(log_var / 2) * eps."""
    if eps.shape != p.mu_z.shape:
        raise ValueError("eps must match posterior dimension")
    return p.mu_z + np.exp(0.5 * p.log_var_z) * eps


def decode_values(model: CvaeModel, y_arr: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Flat de-normalized surface values for raw (y, z) arrays."""
    y_norm = _norm_y(model, np.asarray(y_arr, dtype=np.float64))[None, :]
    z = np.asarray(z, dtype=np.float64)[None, :]
    (xhat_norm,), _ = model.decoder.forward(np.concatenate([z, y_norm], axis=1))
    raw = xhat_norm[0] * model.x_std + model.x_mean
    return np.maximum(raw, DECODE_FLOOR)


def decode(model: CvaeModel, y: FeatureVector, z: np.ndarray) -> IVSurface:
    """Deterministic decoded surface for (y, z)."""
    if np.asarray(z).shape != (model.d_z,):
        raise ValueError(f"z must have shape ({model.d_z},)")
    return surface_from_flat(model.grid, decode_values(model, _feature_array(model, y), z))


def generate(model: CvaeModel, y: FeatureVector, z: np.ndarray | None = None, seed: int | None = None) -> IVSurface:
    """Decode with the given z, or a fresh prior sample when absent."""
    if z is None:
        z = np.random.default_rng(seed).standard_normal(model.d_z)
    return decode(model, y, z)


# --------------------------------------------------------------------------
# ELBO and training
# --------------------------------------------------------------------------


def _elbo_batch(model: CvaeModel, x_norm: np.ndarray, y_norm: np.ndarray, eps: np.ndarray,
                want_grads: bool = True):
    """Batched loss (means over samples) and parameter gradients.

    Reconstruction is 0.5 * ||x - xhat||^2 summed over pixels; KL is the
    closed Gaussian form; total = rec + beta * kl.
    """
    batch = x_norm.shape[0]
    enc_in = np.concatenate([x_norm, y_norm], axis=1)
    (mu, log_var_raw), enc_cache = model.encoder.forward(enc_in)
    clamp_mask = (np.abs(log_var_raw) < LOG_VAR_CLAMP).astype(float)
    log_var = np.clip(log_var_raw, -LOG_VAR_CLAMP, LOG_VAR_CLAMP)
    sigma = np.exp(0.5 * log_var)
    z = mu + sigma * eps

    dec_in = np.concatenate([z, y_norm], axis=1)
    (xhat, ), dec_cache = model.decoder.forward(dec_in)
    diff = xhat - x_norm
    rec = 0.5 * np.sum(diff**2) / batch
    var = sigma**2
    kl = 0.5 * np.sum(mu**2 + var - 1.0 - log_var) / batch
    total = rec + model.beta * kl
    if not np.isfinite(total):
        raise FloatingPointError("non-finite loss")
    if not want_grads:
        return total, rec, kl, diff, None

    d_xhat = diff / batch
    dec_grads, d_dec_in = model.decoder.backward(dec_cache, [d_xhat])
    dz = d_dec_in[:, : model.d_z]
    scale = model.beta / batch
    d_mu = dz + scale * mu
    d_log_var = dz * eps * 0.5 * sigma + scale * 0.5 * (var - 1.0)
    enc_grads, _ = model.encoder.backward(enc_cache, [d_mu, d_log_var * clamp_mask])

    grads = {f"dec.{k}": v for k, v in dec_grads.items()}
    grads.update({f"enc.{k}": v for k, v in enc_grads.items()})
    return total, rec, kl, diff, grads


def elbo_loss(model: CvaeModel, x: IVSurface, y: FeatureVector, eps: np.ndarray):
    """(total, reconstruction, kl) for a single sample with frozen eps."""
    x_norm = _norm_x(model, x.flatten())[None, :]
    y_norm = _norm_y(model, _feature_array(model, y))[None, :]
    total, rec, kl, _, _ = _elbo_batch(model, x_norm, y_norm, eps[None, :], want_grads=False)
    return total, rec, kl


def elbo_gradients(model: CvaeModel, x_norm, y_norm, eps):
    """Loss triple plus gradients; exposed for gradient verification."""
    total, rec, kl, _, grads = _elbo_batch(model, x_norm, y_norm, eps)
    return (total, rec, kl), grads


def kl_closed_form(mu: np.ndarray, log_var: np.ndarray) -> float:
    """KL(N(mu, diag(exp(log_var))) || N(0, I))."""
    var = np.exp(log_var)
    return float(0.5 * np.sum(mu**2 + var - 1.0 - log_var))


def train(
    model: CvaeModel,
    surfaces,
    labels,
    epochs: int,
    batch_size: int = 64,
    seed: int = 0,
    learning_rate: float = 3e-4,
):
    """Adam/minibatch training; returns a per-epoch log.

    One noise draw per datum per visit.  On divergence (non-finite loss)
    training aborts and the last completed epoch's parameters are
    restored.  Deterministic given the seed (single-threaded).
    """
    if not surfaces:
        raise ValueError("dataset must be nonempty")
    if len(labels) != len(surfaces):
        raise ValueError("labels must align with surfaces")
    x_flat = np.stack([s.flatten() for s in surfaces])
    y_mat = np.stack([_feature_array(model, lab) for lab in labels])
    set_normalization(model, x_flat, y_mat)
    model.feature_ranges = {
        name: (float(y_mat[:, k].min()), float(y_mat[:, k].max()))
        for k, name in enumerate(model.feature_names)
    }
    x_norm = _norm_x(model, x_flat)
    y_norm = _norm_y(model, y_mat)

    params = model.params()
    state = nn.AdamState(learning_rate=learning_rate)
    rng = np.random.default_rng(seed)
    n = x_flat.shape[0]
    log = []
    snapshot = {k: v.copy() for k, v in params.items()}
    for epoch in range(epochs):
        perm = rng.permutation(n)
        epoch_total = 0.0
        epoch_sq = 0.0
        try:
            for start in range(0, n, batch_size):
                idx = perm[start : start + batch_size]
                eps = rng.standard_normal((idx.size, model.d_z))
                total, rec, kl, diff, grads = _elbo_batch(
                    model, x_norm[idx], y_norm[idx], eps
                )
                nn.adam_step(state, params, grads)
                epoch_total += total * idx.size
                epoch_sq += np.sum((diff * model.x_std) ** 2)
        except FloatingPointError:
            for k, v in params.items():
                v[...] = snapshot[k]
            log.append({"epoch": epoch, "diverged": True})
            break
        snapshot = {k: v.copy() for k, v in params.items()}
        log.append(
            {
                "epoch": epoch,
                "total_loss": float(epoch_total / n),
                "reconstruction_mse": float(epoch_sq / (n * model.grid.size)),
            }
        )
    return log


# --------------------------------------------------------------------------
# Checkpoints: header.json + params.bin (little-endian f64, declaration order)
# --------------------------------------------------------------------------


def save_checkpoint(model: CvaeModel, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    def net_spec(net):
        return {
            "layers": [
                {"shape": list(l.weights.shape), "activation": l.activation}
                for l in net.block.body
            ],
            "projection_shape": list(net.block.projection.shape),
            "heads": [
                {"shape": list(h.weights.shape), "activation": h.activation}
                for h in net.heads
            ],
        }

    header = {
        "version": CHECKPOINT_VERSION,
        "grid": {
            "m_values": model.grid.m_values.tolist(),
            "tau_values": model.grid.tau_values.tolist(),
        },
        "feature_names": list(model.feature_names),
        "d_z": model.d_z,
        "beta": model.beta,
        "seed": model.seed,
        "normalization": {
            "x_mean": model.x_mean.tolist(),
            "x_std": model.x_std.tolist(),
            "y_mean": model.y_mean.tolist(),
            "y_std": model.y_std.tolist(),
        },
        "feature_ranges": model.feature_ranges,
        "encoder": net_spec(model.encoder),
        "decoder": net_spec(model.decoder),
    }
    blob = np.concatenate(
        [arr.ravel() for _, arr in model.encoder.param_items()]
        + [arr.ravel() for _, arr in model.decoder.param_items()]
    ).astype("<f8")
    (path / "header.json").write_text(json.dumps(header, indent=2))
    (path / "params.bin").write_bytes(blob.tobytes())


def load_checkpoint(path) -> CvaeModel:
    path = Path(path)
    try:
        header = json.loads((path / "header.json").read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"no header.json under {path}") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {header.get('version')!r}")
    grid = GridSpec(
        m_values=np.array(header["grid"]["m_values"]),
        tau_values=np.array(header["grid"]["tau_values"]),
    )

    def rebuild(spec):
        body = [
            nn.DenseLayer(
                weights=np.zeros(l["shape"]), bias=np.zeros(l["shape"][0]),
                activation=l["activation"],
            )
            for l in spec["layers"]
        ]
        projection = np.zeros(spec["projection_shape"])
        heads = [
            nn.DenseLayer(
                weights=np.zeros(h["shape"]), bias=np.zeros(h["shape"][0]),
                activation=h["activation"],
            )
            for h in spec["heads"]
        ]
        return nn.ResidualNet(block=nn.ShortcutBlock(body=body, projection=projection), heads=heads)

    encoder = rebuild(header["encoder"])
    decoder = rebuild(header["decoder"])
    model = CvaeModel(
        grid=grid,
        feature_names=tuple(header["feature_names"]),
        d_z=int(header["d_z"]),
        beta=float(header["beta"]),
        encoder=encoder,
        decoder=decoder,
        x_mean=np.array(header["normalization"]["x_mean"]),
        x_std=np.array(header["normalization"]["x_std"]),
        y_mean=np.array(header["normalization"]["y_mean"]),
        y_std=np.array(header["normalization"]["y_std"]),
        seed=int(header.get("seed", 0)),
        feature_ranges={k: tuple(v) for k, v in header["feature_ranges"].items()}
        if header.get("feature_ranges")
        else None,
    )
    blob = np.frombuffer((path / "params.bin").read_bytes(), dtype="<f8")
    expected = sum(arr.size for _, arr in encoder.param_items()) + sum(
        arr.size for _, arr in decoder.param_items()
    )
    if blob.size != expected:
        raise FormatError(
            f"params.bin has {blob.size} floats, header declares {expected}"
        )
    offset = 0
    for _, arr in list(encoder.param_items()) + list(decoder.param_items()):
        arr[...] = blob[offset : offset + arr.size].reshape(arr.shape)
        offset += arr.size
    return model
