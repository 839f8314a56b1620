"""Variational autoencoder in plain numpy, used to learn latent uncertainty sets.

Encoder and decoder are three-layer ReLU MLPs. Gradients are computed by hand
(reverse mode through each affine/ReLU layer), both for training and for the
decoder vector-Jacobian products used by projected gradient ascent.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .uncertainty import CalibrationResult, calibrate_gamma

FORMAT_VERSION = 1
_model_ids = itertools.count()


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch, batch):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")


class StaleCacheError(ValueError):
    pass


# -- MLP --------------------------------------------------------------------


@dataclass
class MlpParams:
    """Affine layers ``W h + b``; ReLU between layers, identity on the output."""

    weights: list
    biases: list

    def __post_init__(self):
        self.weights = [np.asarray(W, dtype=float) for W in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape[0] != b.size:
                raise ValueError(f"layer {k}: weight rows {W.shape[0]} != bias size {b.size}")
            if k and W.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k}: input dim does not chain")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {k}: non-finite parameters")

    @property
    def in_dim(self):
        return self.weights[0].shape[1]

    @property
    def out_dim(self):
        return self.weights[-1].shape[0]

    @property
    def activations(self):
        return ["relu"] * (len(self.weights) - 1) + ["identity"]

    @classmethod
    def init(cls, sizes, rng):
        Ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            Ws.append(rng.uniform(-bound, bound, (fan_out, fan_in)))
            bs.append(rng.uniform(-bound, bound, fan_out))
        return cls(Ws, bs)

    def copy(self):
        return MlpParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def forward(self, X):
        """Batch forward pass; returns output and the per-layer inputs/pre-activations."""
        h = X
        cache = []
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ W.T + b
            cache.append((h, a))
            h = np.maximum(a, 0.0) if k < last else a
        return h, cache

    def backward(self, cache, grad_out):
        """Gradients w.r.t. parameters and input; ReLU'(0) is taken as 0."""
        gW, gb = [None] * len(self.weights), [None] * len(self.weights)
        g = grad_out
        last = len(self.weights) - 1
        for k in range(last, -1, -1):
            h, a = cache[k]
            if k < last:
                g = g * (a > 0)
            gW[k] = g.T @ h
            gb[k] = g.sum(axis=0)
            g = g @ self.weights[k]
        return gW, gb, g

    def input_vjp(self, cache, grad_out):
        g = grad_out
        last = len(self.weights) - 1
        for k in range(last, -1, -1):
            if k < last:
                g = g * (cache[k][1] > 0)
            g = g @ self.weights[k]
        return g

    def to_dict(self):
        return {
            "shapes": [list(W.shape) for W in self.weights],
            "weights": [W.ravel().tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "activations": self.activations,
        }

    @classmethod
    def from_dict(cls, d):
        Ws = [np.asarray(w, dtype=float).reshape(s) for w, s in zip(d["weights"], d["shapes"])]
        return cls(Ws, d["biases"])


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- VAE --------------------------------------------------------------------


@dataclass(frozen=True)
class DecodeCache:
    model_id: int
    version: int
    z: np.ndarray
    layers: list = field(repr=False)


def kl_standard_normal(mean, logvar):
    """``KL(N(mean, exp(logvar)) || N(0, I))`` per row."""
    return 0.5 * np.sum(mean**2 + np.exp(logvar) - logvar - 1.0, axis=-1)


class VAE(TransformerMixin, BaseEstimator):
    """Gaussian VAE; ``transform`` encodes to posterior means, ``inverse_transform`` decodes.

    Per-sample loss is ``||x - f(z)||^2 / D + beta * KL`` on z-scored inputs, with
    the z-score statistics taken from the training data. The parameters with the
    lowest validation loss seen during training are kept. The small default
    ``beta`` keeps low-dimensional posteriors from collapsing onto the prior.
    """

    def __init__(
        self,
        latent_dim=2,
        hidden_width=64,
        epochs=200,
        batch_size=64,
        lr=1e-3,
        beta=0.01,
        random_state=0,
    ):
        self.latent_dim = latent_dim
        self.hidden_width = hidden_width
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.beta = beta
        self.random_state = random_state

    # parameters --------------------------------------------------------------

    def _set_params(self, encoder, decoder):
        self.encoder_ = encoder
        self.decoder_ = decoder
        self._version = getattr(self, "_version", 0) + 1
        if not hasattr(self, "_model_id"):
            self._model_id = next(_model_ids)

    def _init_params(self, D, rng):
        L, H = self.latent_dim, self.hidden_width
        enc = MlpParams.init([D, H, H, 2 * L], rng)
        dec = MlpParams.init([L, H, H, D], rng)
        return enc, dec

    def _loss_and_grads(self, enc, dec, X, eps, need_grad=True):
        L = self.latent_dim
        n, D = X.shape
        head, enc_cache = enc.forward(X)
        mean, logvar = head[:, :L], head[:, L:]
        std = np.exp(0.5 * logvar)
        z = mean + std * eps
        recon, dec_cache = dec.forward(z)
        resid = recon - X
        rec = np.sum(resid**2, axis=1) / D
        kl = kl_standard_normal(mean, logvar)
        loss = float(np.mean(rec + self.beta * kl))
        if not need_grad:
            return loss, None
        g_recon = 2.0 * resid / (D * n)
        dW_dec, db_dec, g_z = dec.backward(dec_cache, g_recon)
        g_mean = g_z + self.beta * mean / n
        g_logvar = g_z * eps * 0.5 * std + self.beta * 0.5 * (np.exp(logvar) - 1.0) / n
        dW_enc, db_enc, _ = enc.backward(enc_cache, np.hstack([g_mean, g_logvar]))
        return loss, (dW_enc, db_enc, dW_dec, db_dec)

    def fit(self, X, y=None, X_val=None):
        X = check_array(X)
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        X_val = X if X_val is None else check_array(X_val)
        rng = np.random.default_rng(self.random_state)
        self.n_features_in_ = X.shape[1]
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        self.scale_ = np.where(scale > 0, scale, 1.0)
        Xs = (X - self.mean_) / self.scale_
        Vs = (X_val - self.mean_) / self.scale_

        enc, dec = self._init_params(X.shape[1], rng)
        val_eps = rng.standard_normal((Vs.shape[0], self.latent_dim))
        best_val, _ = self._loss_and_grads(enc, dec, Vs, val_eps, need_grad=False)
        best = (enc.copy(), dec.copy())
        history = [{"epoch": 0, "train_loss": None, "val_loss": best_val}]

        params = enc.weights + enc.biases + dec.weights + dec.biases
        opt = _Adam(params, self.lr)
        n = Xs.shape[0]
        for epoch in range(1, self.epochs + 1):
            order = rng.permutation(n)
            total = 0.0
            for bi, start in enumerate(range(0, n, self.batch_size)):
                idx = order[start : start + self.batch_size]
                eps = rng.standard_normal((idx.size, self.latent_dim))
                loss, (dWe, dbe, dWd, dbd) = self._loss_and_grads(enc, dec, Xs[idx], eps)
                if not np.isfinite(loss):
                    raise TrainingDivergedError(epoch, bi)
                opt.step(params, dWe + dbe + dWd + dbd)
                total += loss * idx.size
            val, _ = self._loss_and_grads(enc, dec, Vs, val_eps, need_grad=False)
            if not np.isfinite(val):
                raise TrainingDivergedError(epoch, -1)
            history.append({"epoch": epoch, "train_loss": total / n, "val_loss": val})
            if val < best_val:
                best_val = val
                best = (enc.copy(), dec.copy())
        self._set_params(*best)
        self.history_ = history
        self.best_val_loss_ = best_val
        return self

    # inference ---------------------------------------------------------------

    def _standardize(self, X):
        return (X - self.mean_) / self.scale_

    def encode_stats(self, X):
        check_is_fitted(self, "encoder_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        head, _ = self.encoder_.forward(self._standardize(X))
        L = self.latent_dim
        return head[:, :L], head[:, L:]

    def transform(self, X):
        return self.encode_stats(X)[0]

    def inverse_transform(self, Z):
        check_is_fitted(self, "decoder_")
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        out, _ = self.decoder_.forward(Z)
        return out * self.scale_ + self.mean_

    def decode_with_cache(self, z):
        """Decode a single latent vector, keeping what :meth:`vjp` needs."""
        check_is_fitted(self, "decoder_")
        z = np.asarray(z, dtype=float).reshape(1, -1)
        out, layers = self.decoder_.forward(z)
        xi = out[0] * self.scale_ + self.mean_
        return xi, DecodeCache(self._model_id, self._version, z[0].copy(), layers)

    def vjp(self, cache: DecodeCache, upstream):
        """``upstream' d(decode)/dz`` at the cached point."""
        if cache.model_id != self._model_id or cache.version != self._version:
            raise StaleCacheError("decode cache was produced by different model parameters")
        g = np.asarray(upstream, dtype=float).reshape(1, -1) * self.scale_
        return self.decoder_.input_vjp(cache.layers, g)[0]

    def sample(self, n, random_state=None):
        """Generate ``n`` samples by decoding standard normal latents."""
        rng = np.random.default_rng(random_state)
        return self.inverse_transform(rng.standard_normal((n, self.latent_dim)))

    def loss(self, X, random_state=0):
        check_is_fitted(self, "encoder_")
        Xs = self._standardize(check_array(X))
        eps = np.random.default_rng(random_state).standard_normal((Xs.shape[0], self.latent_dim))
        return self._loss_and_grads(self.encoder_, self.decoder_, Xs, eps, need_grad=False)[0]

    # persistence ---------------------------------------------------------------

    def to_dict(self):
        check_is_fitted(self, "encoder_")
        return {
            "version": FORMAT_VERSION,
            "config": self.get_params(),
            "encoder": self.encoder_.to_dict(),
            "decoder": self.decoder_.to_dict(),
            "standardizer": {"mean": self.mean_.tolist(), "scale": self.scale_.tolist()},
            "history": getattr(self, "history_", []),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version", 0) > FORMAT_VERSION:
            raise ValueError(f"model format version {d['version']} is newer than supported")
        model = cls(**d["config"])
        model.mean_ = np.asarray(d["standardizer"]["mean"], dtype=float)
        model.scale_ = np.asarray(d["standardizer"]["scale"], dtype=float)
        model.n_features_in_ = model.mean_.size
        model.history_ = d.get("history", [])
        model._set_params(MlpParams.from_dict(d["encoder"]), MlpParams.from_dict(d["decoder"]))
        return model

    @classmethod
    def from_params(cls, encoder: MlpParams, decoder: MlpParams, mean=None, scale=None, **config):
        """Wrap explicit encoder/decoder parameters; the standardizer defaults to identity."""
        D = decoder.out_dim
        if encoder.in_dim != D or encoder.out_dim != 2 * decoder.in_dim:
            raise ValueError("encoder must map R^D to R^(2L) and decoder R^L to R^D")
        model = cls(latent_dim=decoder.in_dim, **config)
        model.mean_ = np.zeros(D) if mean is None else np.asarray(mean, dtype=float)
        model.scale_ = np.ones(D) if scale is None else np.asarray(scale, dtype=float)
        model.n_features_in_ = D
        model.history_ = []
        model._set_params(encoder, decoder)
        return model

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def train_vae(train, val, config=None) -> VAE:
    """Fit a :class:`VAE` with keyword ``config`` (latent_dim, hidden_width, epochs, ...)."""
    config = dict(config or {})
    if "seed" in config:
        config["random_state"] = config.pop("seed")
    if "L" in config:
        config["latent_dim"] = config.pop("L")
    return VAE(**config).fit(train, X_val=val)


def encode(model: VAE, xi) -> np.ndarray:
    z = model.transform(np.atleast_2d(xi))
    return z[0] if np.ndim(xi) == 1 else z


def decode(model: VAE, z) -> np.ndarray:
    xi = model.inverse_transform(np.atleast_2d(z))
    return xi[0] if np.ndim(z) <= 1 else xi


def decoder_vjp(model: VAE, cache: DecodeCache, upstream) -> np.ndarray:
    return model.vjp(cache, upstream)


# -- latent ball ----------------------------------------------------------------


@dataclass(frozen=True)
class LatentBall:
    gamma: float
    latent_dim: int
    calibration: CalibrationResult = None

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("radius must be nonnegative")

    def to_dict(self):
        return {
            "kind": "latent",
            "gamma": self.gamma,
            "latent_dim": self.latent_dim,
            "calibration": None if self.calibration is None else self.calibration.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        cal = d.get("calibration")
        return cls(d["gamma"], d["latent_dim"], CalibrationResult(**cal) if cal else None)


def calibrate_latent(model: VAE, calibration, alpha=0.95, delta=0.05) -> LatentBall:
    radii = np.linalg.norm(model.transform(calibration), axis=1)
    res = calibrate_gamma(radii, alpha, delta)
    return LatentBall(res.gamma, model.latent_dim, res)


def sample_latent_ball(ball: LatentBall, rng) -> np.ndarray:
    """Uniform point in the latent ball of radius ``ball.gamma``."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    direction = rng.standard_normal(ball.latent_dim)
    direction /= np.linalg.norm(direction)
    return ball.gamma * rng.random() ** (1.0 / ball.latent_dim) * direction
