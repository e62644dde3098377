"""Hierarchical VAE over normalized SDF lattices.

Encoder: three conv -> ReLU -> batch-norm blocks produce the global code; each
of the local codes comes from two fully-connected layers fed the global code,
the channel-averaged first-block features and the previous local code.
Decoder: a fully-connected layer into the last encoder shape followed by
transposed convolutions mirroring the encoder, ending in a sigmoid.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from ..sdf import SdfGrid
from . import layers as L

BCE_CLAMP = 1e-7
BCE_LOGIT_LIMIT = float(np.log((1.0 - BCE_CLAMP) / BCE_CLAMP))
LOGVAR_BIAS_INIT = -4.0
LOGVAR_RANGE = (-12.0, 4.0)


def _clamp_logvar(raw):
    lv = np.clip(raw, *LOGVAR_RANGE)
    return lv, (raw > LOGVAR_RANGE[0]) & (raw < LOGVAR_RANGE[1])


class DivergenceError(FloatingPointError):
    """Non-finite activations, losses or gradients."""

    def __init__(self, message, last_good=None, batch_index=None):
        super().__init__(message)
        self.last_good = last_good
        self.batch_index = batch_index


@dataclass
class LearnerConfig:
    """Network and training hyperparameters.

    Defaults are the published full-scale setting (41^3 lattices, 4096 models,
    1000 epochs, lr 5e-3, batch 64).  :meth:`desk` gives the 17^3 preset used by
    the bundled synthetic corpus.  ``d_max_cells`` sets the signed-distance
    range (in lattice cells) mapped onto the occupancy scale.
    """

    resolution: tuple = (41, 41, 41)
    global_dim: int = 20
    local_count: int = 5
    local_dim: int = 10
    channels: tuple = (32, 64, 128)
    kernels: tuple = (6, 5, 4)
    strides: tuple = (2, 2, 1)
    fc_width: int = 100
    learning_rate: float = 5e-3
    batch_size: int = 64
    epochs: int = 1000
    kl_weight: float = 1.0
    kl_warmup: float = 0.1
    optimizer: str = "adam"
    bn_momentum: float = 0.9
    decoder_batchnorm: bool = True
    d_max_cells: float = 4.0
    checkpoint_every: int = 50
    seed: int = 0

    def __post_init__(self):
        self.resolution = tuple(int(r) for r in np.broadcast_to(self.resolution, 3))
        self.channels = tuple(int(c) for c in self.channels)
        self.kernels = tuple(int(k) for k in self.kernels)
        self.strides = tuple(int(s) for s in self.strides)
        for name in ("global_dim", "local_count", "local_dim", "fc_width", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not (len(self.channels) == len(self.kernels) == len(self.strides) == 3):
            raise ValueError("channels, kernels and strides need three entries each")
        if not self.d_max_cells > 0:
            raise ValueError("d_max_cells must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        self.sizes()

    @classmethod
    def desk(cls, **overrides) -> "LearnerConfig":
        base = dict(resolution=(17, 17, 17), channels=(16, 32, 64), kernels=(3, 3, 3), strides=(2, 2, 1),
                    batch_size=10, epochs=200, d_max_cells=0.5)
        base.update(overrides)
        return cls(**base)

    @property
    def latent_size(self) -> int:
        return self.global_dim + self.local_count * self.local_dim

    def sizes(self) -> list[tuple[int, int, int]]:
        """Spatial shape of the input and of each conv output."""
        out = [self.resolution]
        for k, s in zip(self.kernels, self.strides):
            nxt = tuple(L.conv_out(n, k, s) for n in out[-1])
            if min(nxt) < 1:
                raise ValueError(f"conv stack collapses: {out[-1]} with kernel {k}, stride {s}")
            out.append(nxt)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("resolution", "channels", "kernels", "strides"):
            d[key] = list(d[key])
        return d


@dataclass
class LatentVector:
    global_code: np.ndarray
    local_codes: list

    def flat(self) -> np.ndarray:
        return np.concatenate([self.global_code] + list(self.local_codes))

    @classmethod
    def from_flat(cls, vec, config: LearnerConfig) -> "LatentVector":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (config.latent_size,):
            raise ValueError(f"latent length {vec.shape} does not match config ({config.latent_size})")
        g = vec[:config.global_dim].copy()
        rest = vec[config.global_dim:].reshape(config.local_count, config.local_dim)
        return cls(g, [r.copy() for r in rest])


@dataclass
class LearnerParams:
    config: LearnerConfig
    weights: dict = field(default_factory=dict)
    state: dict = field(default_factory=dict)

    def copy(self) -> "LearnerParams":
        return LearnerParams(copy.deepcopy(self.config), {k: v.copy() for k, v in self.weights.items()},
                             {k: v.copy() for k, v in self.state.items()})


# ---------------------------------------------------------------------------
# parameters


def param_shapes(cfg: LearnerConfig) -> tuple[dict, dict]:
    """Trainable tensor shapes and running-statistic shapes, in declaration order."""
    c = (1,) + cfg.channels
    k = cfg.kernels
    sizes = cfg.sizes()
    flat = cfg.channels[2] * int(np.prod(sizes[3]))
    w: dict = {}
    s: dict = {}
    for i in range(3):
        w[f"enc.conv{i + 1}.w"] = (c[i + 1], c[i], k[i], k[i], k[i])
        w[f"enc.conv{i + 1}.b"] = (c[i + 1],)
        w[f"enc.bn{i + 1}.gamma"] = (c[i + 1],)
        w[f"enc.bn{i + 1}.beta"] = (c[i + 1],)
        s[f"enc.bn{i + 1}.running_mean"] = (c[i + 1],)
        s[f"enc.bn{i + 1}.running_var"] = (c[i + 1],)
    for head in ("mu", "logvar"):
        w[f"enc.global.{head}.w"] = (cfg.global_dim, flat)
        w[f"enc.global.{head}.b"] = (cfg.global_dim,)
    pooled = cfg.channels[0]
    for i in range(cfg.local_count):
        n_in = cfg.global_dim + pooled + (cfg.local_dim if i > 0 else 0)
        p = f"enc.local{i + 1}"
        w[f"{p}.fc1.w"] = (cfg.fc_width, n_in)
        w[f"{p}.fc1.b"] = (cfg.fc_width,)
        w[f"{p}.fc2.w"] = (cfg.fc_width, cfg.fc_width)
        w[f"{p}.fc2.b"] = (cfg.fc_width,)
        for head in ("mu", "logvar"):
            w[f"{p}.{head}.w"] = (cfg.local_dim, cfg.fc_width)
            w[f"{p}.{head}.b"] = (cfg.local_dim,)
    w["dec.fc.w"] = (flat, cfg.latent_size)
    w["dec.fc.b"] = (flat,)
    for i in (3, 2, 1):
        w[f"dec.deconv{i}.w"] = (c[i], c[i - 1], k[i - 1], k[i - 1], k[i - 1])
        w[f"dec.deconv{i}.b"] = (c[i - 1],)
        if i > 1 and cfg.decoder_batchnorm:
            w[f"dec.bn{i}.gamma"] = (c[i - 1],)
            w[f"dec.bn{i}.beta"] = (c[i - 1],)
            s[f"dec.bn{i}.running_mean"] = (c[i - 1],)
            s[f"dec.bn{i}.running_var"] = (c[i - 1],)
    return w, s


def init_params(cfg: LearnerConfig, seed: int | None = None) -> LearnerParams:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    wshapes, sshapes = param_shapes(cfg)
    weights = {}
    for name, shape in wshapes.items():
        if name.endswith(".gamma"):
            weights[name] = np.ones(shape)
        elif name.endswith(".logvar.b"):
            weights[name] = np.full(shape, LOGVAR_BIAS_INIT)
        elif name.endswith((".b", ".beta")):
            weights[name] = np.zeros(shape)
        else:
            fan_in = shape[0] * int(np.prod(shape[2:])) if ".deconv" in name else int(np.prod(shape[1:]))
            std = np.sqrt(2.0 / fan_in)
            if ".logvar." in name:
                std *= 0.01
            weights[name] = rng.normal(0.0, std, size=shape)
    state = {name: (np.ones(shape) if name.endswith("var") else np.zeros(shape))
             for name, shape in sshapes.items()}
    return LearnerParams(cfg, weights, state)


def zero_params(cfg: LearnerConfig) -> LearnerParams:
    p = init_params(cfg, seed=0)
    for k in p.weights:
        p.weights[k] = np.zeros_like(p.weights[k])
    return p


# ---------------------------------------------------------------------------
# forward / backward


def as_batch(grids, cfg: LearnerConfig) -> np.ndarray:
    """Stack normalized grids (SdfGrid or arrays) into (N, 1, X, Y, Z)."""
    if isinstance(grids, np.ndarray) and grids.ndim == 5:
        x = np.asarray(grids, dtype=np.float64)
    elif isinstance(grids, np.ndarray) and grids.ndim == 4:
        x = np.asarray(grids, dtype=np.float64)[:, None]
    else:
        if isinstance(grids, (SdfGrid, np.ndarray)):
            grids = [grids]
        arrs = [g.values if isinstance(g, SdfGrid) else np.asarray(g) for g in grids]
        x = np.stack([np.asarray(a, dtype=np.float64) for a in arrs])[:, None]
    if x.shape[2:] != cfg.resolution:
        raise ValueError(f"grid resolution {x.shape[2:]} does not match config {cfg.resolution}")
    return x


def draw_noise(cfg: LearnerConfig, n: int, seed) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, cfg.global_dim)), rng.standard_normal((n, cfg.local_count, cfg.local_dim))


def _encode(W, S, x, cfg, train, noise):
    """Returns (global mu, logvar, z), per-local (mu, logvar, z) lists, cache."""
    cache = {"masks": [], "enc": [], "bn_stats": {}}
    h = x
    for i in range(3):
        z, c_conv = L.conv3d_forward(h, W[f"enc.conv{i + 1}.w"], W[f"enc.conv{i + 1}.b"], cfg.strides[i])
        r, mask = L.relu_forward(z)
        h, c_bn, stats = L.batchnorm_forward(r, W[f"enc.bn{i + 1}.gamma"], W[f"enc.bn{i + 1}.beta"], train,
                                             S.get(f"enc.bn{i + 1}.running_mean"),
                                             S.get(f"enc.bn{i + 1}.running_var"))
        cache["masks"].append(mask)
        cache["enc"].append((c_conv, mask, c_bn))
        cache["bn_stats"][f"enc.bn{i + 1}"] = stats
        if i == 0:
            h1_shape = h.shape
            pooled = h.mean(axis=(2, 3, 4))
    n = x.shape[0]
    feat = h.reshape(n, -1)
    cache["feat_shape"] = h.shape
    cache["h1_shape"] = h1_shape
    mu_g, c_mu = L.linear_forward(feat, W["enc.global.mu.w"], W["enc.global.mu.b"])
    lv_g, c_lv = L.linear_forward(feat, W["enc.global.logvar.w"], W["enc.global.logvar.b"])
    lv_g, lv_mask = _clamp_logvar(lv_g)
    cache["masks"].append(lv_mask)
    eps_g, eps_l = noise if noise is not None else (None, None)
    z_g = mu_g if eps_g is None else mu_g + np.exp(0.5 * lv_g) * eps_g
    cache["global"] = (c_mu, c_lv, mu_g, lv_g, eps_g, lv_mask)
    locals_ = []
    prev = None
    for i in range(cfg.local_count):
        p = f"enc.local{i + 1}"
        inp = np.concatenate([z_g, pooled] + ([prev] if i > 0 else []), axis=1)
        a1, c1 = L.linear_forward(inp, W[f"{p}.fc1.w"], W[f"{p}.fc1.b"])
        r1, m1 = L.relu_forward(a1)
        a2, c2 = L.linear_forward(r1, W[f"{p}.fc2.w"], W[f"{p}.fc2.b"])
        r2, m2 = L.relu_forward(a2)
        mu, cm = L.linear_forward(r2, W[f"{p}.mu.w"], W[f"{p}.mu.b"])
        lv, cl = L.linear_forward(r2, W[f"{p}.logvar.w"], W[f"{p}.logvar.b"])
        lv, lv_mask = _clamp_logvar(lv)
        eps = None if eps_l is None else eps_l[:, i]
        zi = mu if eps is None else mu + np.exp(0.5 * lv) * eps
        cache["masks"] += [m1, m2, lv_mask]
        locals_.append({"c1": c1, "m1": m1, "c2": c2, "m2": m2, "cm": cm, "cl": cl, "lv_mask": lv_mask,
                        "mu": mu, "lv": lv, "eps": eps, "z": zi})
        prev = zi
    cache["locals"] = locals_
    return (mu_g, lv_g, z_g), locals_, cache


def _decode(W, S, latent, cfg, train):
    cache = {"masks": [], "bn_stats": {}}
    sizes = cfg.sizes()
    n = latent.shape[0]
    d, c_fc = L.linear_forward(latent, W["dec.fc.w"], W["dec.fc.b"])
    r, m_fc = L.relu_forward(d)
    h = r.reshape((n, cfg.channels[2]) + sizes[3])
    cache["fc"] = (c_fc, m_fc)
    cache["masks"].append(m_fc)
    blocks = []
    for i in (3, 2, 1):
        y, c_dc = L.deconv3d_forward(h, W[f"dec.deconv{i}.w"], W[f"dec.deconv{i}.b"], cfg.strides[i - 1],
                                     sizes[i - 1])
        if i > 1:
            h, mask = L.relu_forward(y)
            c_bn = None
            if cfg.decoder_batchnorm:
                h, c_bn, stats = L.batchnorm_forward(h, W[f"dec.bn{i}.gamma"], W[f"dec.bn{i}.beta"], train,
                                                     S.get(f"dec.bn{i}.running_mean"),
                                                     S.get(f"dec.bn{i}.running_var"))
                cache["bn_stats"][f"dec.bn{i}"] = stats
            cache["masks"].append(mask)
            blocks.append((c_dc, mask, c_bn))
        else:
            blocks.append((c_dc, None, None))
            logits = y
    cache["blocks"] = blocks
    return logits, cache


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise DivergenceError(f"non-finite values in {what}")


def forward_loss(W, S, x, cfg: LearnerConfig, noise, kl_weight: float, train: bool = True):
    """ELBO-style loss of a batch with fixed reparameterization noise.

    Returns (loss, parts, cache); ``cache`` feeds :func:`backward`.
    """
    (mu_g, lv_g, z_g), locals_, enc_cache = _encode(W, S, x, cfg, train, noise)
    latent = np.concatenate([z_g] + [loc["z"] for loc in locals_], axis=1)
    logits, dec_cache = _decode(W, S, latent, cfg, train)
    p = L.sigmoid(logits)
    # clamping p to [c, 1 - c] is clamping the logit to +-logit(1 - c); working
    # in logit space avoids the cancellation in log(1 - p) near p = 1
    zc = np.clip(logits, -BCE_LOGIT_LIMIT, BCE_LOGIT_LIMIT)
    n = x.shape[0]
    bce = x * np.logaddexp(0.0, -zc) + (1.0 - x) * np.logaddexp(0.0, zc)
    per_sample_recon = bce.reshape(n, -1).sum(axis=1)
    kl_terms = [0.5 * (mu_g ** 2 + np.exp(lv_g) - 1.0 - lv_g)]
    kl_terms += [0.5 * (loc["mu"] ** 2 + np.exp(loc["lv"]) - 1.0 - loc["lv"]) for loc in locals_]
    per_sample_kl = sum(t.sum(axis=1) for t in kl_terms)
    recon = per_sample_recon.mean()
    kl = per_sample_kl.mean()
    loss = recon + kl_weight * kl
    per_sample = per_sample_recon + kl_weight * per_sample_kl
    if not np.isfinite(loss):
        bad = int(np.flatnonzero(~np.isfinite(per_sample))[0]) if np.any(~np.isfinite(per_sample)) else None
        raise DivergenceError("non-finite loss", batch_index=bad)
    cache = {"enc": enc_cache, "dec": dec_cache, "p": p, "x": x, "kl_weight": kl_weight,
             "clamped": np.abs(logits) > BCE_LOGIT_LIMIT}
    cache["masks"] = enc_cache["masks"] + dec_cache["masks"] + [cache["clamped"]]
    return float(loss), {"reconstruction": float(recon), "kl": float(kl), "total": float(loss)}, cache


def backward(W, cfg: LearnerConfig, cache) -> dict:
    """Exact reverse-mode gradient of :func:`forward_loss` w.r.t. every weight."""
    g = {k: np.zeros_like(v) for k, v in W.items()}
    x, p = cache["x"], cache["p"]
    n = x.shape[0]
    wkl = cache["kl_weight"]
    dec, enc = cache["dec"], cache["enc"]

    dlogits = np.where(cache["clamped"], 0.0, (p - x) / n)
    dh = dlogits
    for i, (c_dc, mask, c_bn) in zip((3, 2, 1)[::-1], dec["blocks"][::-1]):
        if i > 1:
            if c_bn is not None:
                dh, g[f"dec.bn{i}.gamma"], g[f"dec.bn{i}.beta"] = L.batchnorm_backward(dh, c_bn)
            dh = L.relu_backward(dh, mask)
        dh, g[f"dec.deconv{i}.w"], g[f"dec.deconv{i}.b"] = L.deconv3d_backward(dh, c_dc)
    c_fc, m_fc = dec["fc"]
    dd = L.relu_backward(dh.reshape(n, -1), m_fc)
    dlatent, g["dec.fc.w"], g["dec.fc.b"] = L.linear_backward(dd, c_fc)

    G, D = cfg.global_dim, cfg.local_dim
    dz_g = dlatent[:, :G].copy()
    dz_local = [dlatent[:, G + i * D:G + (i + 1) * D].copy() for i in range(cfg.local_count)]
    dpooled = np.zeros((n, cfg.channels[0]))
    locals_ = enc["locals"]
    for i in reversed(range(cfg.local_count)):
        loc = locals_[i]
        pfx = f"enc.local{i + 1}"
        dz = dz_local[i]
        sigma = np.exp(0.5 * loc["lv"])
        dmu = dz + wkl * loc["mu"] / n
        dlv = wkl * 0.5 * (np.exp(loc["lv"]) - 1.0) / n
        if loc["eps"] is not None:
            dlv = dlv + dz * 0.5 * sigma * loc["eps"]
        dr2a, g[f"{pfx}.mu.w"], g[f"{pfx}.mu.b"] = L.linear_backward(dmu, loc["cm"])
        dr2b, g[f"{pfx}.logvar.w"], g[f"{pfx}.logvar.b"] = L.linear_backward(dlv * loc["lv_mask"], loc["cl"])
        da2 = L.relu_backward(dr2a + dr2b, loc["m2"])
        dr1, g[f"{pfx}.fc2.w"], g[f"{pfx}.fc2.b"] = L.linear_backward(da2, loc["c2"])
        da1 = L.relu_backward(dr1, loc["m1"])
        dinp, g[f"{pfx}.fc1.w"], g[f"{pfx}.fc1.b"] = L.linear_backward(da1, loc["c1"])
        dz_g += dinp[:, :G]
        dpooled += dinp[:, G:G + cfg.channels[0]]
        if i > 0:
            dz_local[i - 1] += dinp[:, G + cfg.channels[0]:]

    c_mu, c_lv, mu_g, lv_g, eps_g, lv_mask = enc["global"]
    dmu_g = dz_g + wkl * mu_g / n
    dlv_g = wkl * 0.5 * (np.exp(lv_g) - 1.0) / n
    if eps_g is not None:
        dlv_g = dlv_g + dz_g * 0.5 * np.exp(0.5 * lv_g) * eps_g
    df1, g["enc.global.mu.w"], g["enc.global.mu.b"] = L.linear_backward(dmu_g, c_mu)
    df2, g["enc.global.logvar.w"], g["enc.global.logvar.b"] = L.linear_backward(dlv_g * lv_mask, c_lv)
    dh = (df1 + df2).reshape(enc["feat_shape"])
    for i in (2, 1, 0):
        c_conv, mask, c_bn = enc["enc"][i]
        if i == 0:
            spatial = np.prod(enc["h1_shape"][2:])
            dh = dh + (dpooled / spatial)[:, :, None, None, None]
        dh, g[f"enc.bn{i + 1}.gamma"], g[f"enc.bn{i + 1}.beta"] = L.batchnorm_backward(dh, c_bn)
        dh = L.relu_backward(dh, mask)
        dh, g[f"enc.conv{i + 1}.w"], g[f"enc.conv{i + 1}.b"] = L.conv3d_backward(dh, c_conv)
    for k, v in g.items():
        if not np.all(np.isfinite(v)):
            raise DivergenceError(f"non-finite gradient for {k}")
    return g


def kink_signature(cache) -> list:
    """ReLU and clamp masks of a forward pass; equal signatures mean the loss
    is smooth between the two evaluated points along a straight line."""
    return cache["masks"]


# ---------------------------------------------------------------------------
# public operations


def elbo_loss(batch, params: LearnerParams, seed, kl_weight: float | None = None):
    """(loss, {"reconstruction", "kl", "total"}) with batch-statistics batch-norm
    and reparameterization noise drawn from ``seed``."""
    cfg = params.config
    x = as_batch(batch, cfg)
    if len(x) == 0:
        raise ValueError("empty batch")
    kl_weight = cfg.kl_weight if kl_weight is None else kl_weight
    loss, parts, _ = forward_loss(params.weights, params.state, x, cfg, draw_noise(cfg, len(x), seed), kl_weight)
    return loss, parts


def loss_and_gradients(batch, params: LearnerParams, seed, kl_weight: float | None = None):
    cfg = params.config
    x = as_batch(batch, cfg)
    if len(x) == 0:
        raise ValueError("empty batch")
    kl_weight = cfg.kl_weight if kl_weight is None else kl_weight
    loss, parts, cache = forward_loss(params.weights, params.state, x, cfg,
                                      draw_noise(cfg, len(x), seed), kl_weight)
    grads = backward(params.weights, cfg, cache)
    stats = {**cache["enc"]["bn_stats"], **cache["dec"]["bn_stats"]}
    return loss, parts, grads, stats


def gradients(batch, params: LearnerParams, seed, kl_weight: float | None = None) -> dict:
    """Parameter-shaped gradient of :func:`elbo_loss` (same seed, same noise)."""
    return loss_and_gradients(batch, params, seed, kl_weight)[2]


def encode(grids, params: LearnerParams, mode: str = "deterministic", seed=None):
    """Latent codes for a grid or a sequence of grids (inference batch-norm).

    ``mode="deterministic"`` returns posterior means; ``"sampled"`` draws
    mean + exp(logvar / 2) * N(0, 1) for each code in turn.
    """
    single = isinstance(grids, SdfGrid) or (isinstance(grids, np.ndarray) and grids.ndim == 3)
    cfg = params.config
    x = as_batch(grids, cfg)
    if mode == "deterministic":
        noise = None
    elif mode == "sampled":
        noise = draw_noise(cfg, len(x), seed)
    else:
        raise ValueError(f"unknown encode mode {mode!r}")
    (mu_g, lv_g, z_g), locals_, _ = _encode(params.weights, params.state, x, cfg, False, noise)
    _check_finite(z_g, "global code")
    out = []
    for n in range(len(x)):
        codes = [loc["z"][n].copy() for loc in locals_]
        for c in codes:
            _check_finite(c, "local code")
        out.append(LatentVector(z_g[n].copy(), codes))
    return out[0] if single else out


def posterior(grids, params: LearnerParams):
    """Global and local (mu, logvar) pairs, inference mode."""
    cfg = params.config
    x = as_batch(grids, cfg)
    (mu_g, lv_g, _), locals_, _ = _encode(params.weights, params.state, x, cfg, False, None)
    return (mu_g, lv_g), [(loc["mu"], loc["lv"]) for loc in locals_]


def decode(latents, params: LearnerParams) -> np.ndarray:
    """Occupancy-scale grids in (0, 1) for one latent (returns (X, Y, Z)) or a
    sequence / (N, D) array of latents (returns (N, X, Y, Z))."""
    cfg = params.config
    if isinstance(latents, LatentVector):
        z = latents.flat()[None]
        single = True
    else:
        z = np.asarray([l.flat() if isinstance(l, LatentVector) else l for l in latents], dtype=np.float64)
        single = False
        if z.ndim == 1:
            z = z[None]
            single = True
    if z.shape[1] != cfg.latent_size:
        raise ValueError(f"latent length {z.shape[1]} does not match config ({cfg.latent_size})")
    logits, _ = _decode(params.weights, params.state, z, cfg, False)
    _check_finite(logits, "decoder output")
    out = L.sigmoid(logits)[:, 0]
    return out[0] if single else out


def encode_dataset(dataset, params: LearnerParams, batch_size: int = 64) -> list:
    """Deterministic codes for every grid, in order."""
    out = []
    dataset = list(dataset)
    for s in range(0, len(dataset), batch_size):
        out += encode(dataset[s:s + batch_size], params)
    return out
