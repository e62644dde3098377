"""Central finite-difference check of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LearnerConfig, LearnerParams, backward, draw_noise, forward_loss, init_params


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    entries: int
    smooth: bool


def tiny_config(**overrides) -> LearnerConfig:
    """5^3 input, 2-d global code plus one 2-d local code, two channels per layer."""
    base = dict(resolution=(5, 5, 5), channels=(2, 2, 2), kernels=(2, 2, 2), strides=(1, 1, 1), global_dim=2,
                local_count=1, local_dim=2, fc_width=4, batch_size=2, epochs=1)
    base.update(overrides)
    return LearnerConfig(**base)


def random_point(cfg: LearnerConfig, seed: int, jitter: float = 0.1):
    """Randomized parameters, a random batch in [0, 1] and a noise seed."""
    rng = np.random.default_rng(seed)
    params = init_params(cfg, seed=int(rng.integers(2 ** 63)))
    for k, v in params.weights.items():
        params.weights[k] = v + jitter * rng.standard_normal(v.shape)
    x = rng.uniform(0.0, 1.0, size=(cfg.batch_size, 1) + cfg.resolution)
    return params, x, int(rng.integers(2 ** 63))


def _same_masks(a, b) -> bool:
    return all(np.array_equal(m1, m2) for m1, m2 in zip(a, b))


def relative_error(analytic, numeric, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def resolution_floor(loss: float, h: float, rtol: float) -> float:
    """Magnitude below which a difference quotient cannot resolve a gradient to ``rtol``.

    Evaluating the loss carries roundoff of order eps * |L|, so the quotient is
    uncertain by about eps * |L| / h. Entries smaller than that divided by
    ``rtol`` (e.g. a bias feeding batch norm, whose gradient is exactly zero)
    are compared in absolute terms.
    """
    return float(np.finfo(np.float64).eps * abs(loss) / (h * rtol))


def check_gradients(params: LearnerParams, x, noise_seed, kl_weight: float = 1.0, h: float = 1e-4,
                    floor: float = 1e-6, rtol: float = 1e-4) -> GradCheckResult:
    """Compare every gradient entry with (L(w + h) - L(w - h)) / 2h.

    The denominator of the relative error is max(|a|, |n|, floor) with floor
    raised to :func:`resolution_floor` when that is larger.

    ``smooth`` is False when some perturbation flips a rectifier, a log-variance
    clamp or the cross-entropy clamp, i.e. the loss has a kink inside
    [w - h, w + h] and the difference quotient is not a derivative estimate.
    """
    cfg = params.config
    noise = draw_noise(cfg, len(x), noise_seed)
    loss, _, cache = forward_loss(params.weights, params.state, x, cfg, noise, kl_weight)
    floor = max(floor, resolution_floor(loss, h, rtol))
    base_masks = [m.copy() for m in cache["masks"]]
    grads = backward(params.weights, cfg, cache)
    worst = (0.0, "", ())
    entries = 0
    for name, w in params.weights.items():
        for idx in np.ndindex(w.shape):
            trial = dict(params.weights)
            trial[name] = w.copy()
            trial[name][idx] = w[idx] + h
            lp, _, cp = forward_loss(trial, params.state, x, cfg, noise, kl_weight)
            trial[name][idx] = w[idx] - h
            lm, _, cm = forward_loss(trial, params.state, x, cfg, noise, kl_weight)
            if not (_same_masks(base_masks, cp["masks"]) and _same_masks(base_masks, cm["masks"])):
                return GradCheckResult(float("nan"), name, idx, entries, False)
            err = relative_error(grads[name][idx], (lp - lm) / (2.0 * h), floor)
            entries += 1
            if err > worst[0]:
                worst = (err, name, idx)
    return GradCheckResult(worst[0], worst[1], worst[2], entries, True)


def min_batch_variance(params: LearnerParams, x, noise_seed, kl_weight: float = 1.0) -> float:
    """Smallest per-channel batch variance entering any batch-norm layer."""
    cfg = params.config
    _, _, cache = forward_loss(params.weights, params.state, x, cfg, draw_noise(cfg, len(x), noise_seed), kl_weight)
    stats = {**cache["enc"]["bn_stats"], **cache["dec"]["bn_stats"]}
    return min(float(np.min(var)) for _, var in stats.values())


def check_random_points(count: int, seed: int = 0, cfg: LearnerConfig | None = None, max_draws: int | None = None,
                        min_bn_variance: float = 0.05, **kw) -> list[GradCheckResult]:
    """Check ``count`` random points.

    Points are redrawn when a batch-norm channel is nearly constant across
    the batch (variance below ``min_bn_variance``; the 1/sigma factor makes the
    second-order stencil error swamp the comparison there) or when the +-h
    stencil crosses a kink.
    """
    cfg = cfg or tiny_config()
    out = []
    draws = 0
    max_draws = max_draws or 10 * count
    while len(out) < count:
        if draws >= max_draws:
            raise RuntimeError(f"only {len(out)} kink-free points in {draws} draws")
        params, x, noise_seed = random_point(cfg, seed * 1_000_003 + draws)
        draws += 1
        if min_batch_variance(params, x, noise_seed, kw.get("kl_weight", 1.0)) < min_bn_variance:
            continue
        res = check_gradients(params, x, noise_seed, **kw)
        if res.smooth:
            out.append(res)
    return out
