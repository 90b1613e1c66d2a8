"""Policy and value MLPs with hand-written backward passes.

Both trunks are ``obs -> tanh(64) -> tanh(64) -> head`` by default.  The
policy head is either a factored categorical (one K-way softmax per thrust
axis) or a diagonal Gaussian with a state-independent log-std.  Weights are
stored ``(fan_in, fan_out)`` and inputs are batched row-wise.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from proxrl.actions import ActionSpaceSpec
from proxrl.errors import CheckpointError, DomainError, NonFiniteLossError

CATEGORICAL = "categorical"
GAUSSIAN = "gaussian"
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

CHECKPOINT_MAGIC = b"PRXRLNN\x00"
CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    obs_dim: int
    kind: str
    n_choices: int | None
    hidden: tuple[int, ...]
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1

    def copy(self) -> "MlpParams":
        return MlpParams(self.obs_dim, self.kind, self.n_choices, self.hidden,
                         {k: v.copy() for k, v in self.arrays.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def meta(self) -> dict:
        return {"obs_dim": self.obs_dim, "kind": self.kind, "n_choices": self.n_choices,
                "hidden": list(self.hidden)}


@dataclass
class ActionDistribution:
    kind: str
    logits: np.ndarray | None = None  # (..., 3, K)
    mean: np.ndarray | None = None  # (..., 3)
    log_std: np.ndarray | None = None  # (3,)

    def probs(self) -> np.ndarray:
        return np.exp(log_softmax(self.logits))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _orthogonal(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    return gain * q[:fan_in, :fan_out]


def init_params(obs_dim: int, space: ActionSpaceSpec, hidden=(64, 64), seed: int = 0) -> MlpParams:
    rng = np.random.default_rng(seed)
    hidden = tuple(int(h) for h in hidden)
    if space.is_discrete:
        kind, K, out_dim = CATEGORICAL, space.choices, 3 * space.choices
    else:
        kind, K, out_dim = GAUSSIAN, None, 3
    params = MlpParams(obs_dim, kind, K, hidden)
    for prefix, head_dim, head_gain in (("pi", out_dim, 0.01), ("v", 1, 1.0)):
        sizes = (obs_dim,) + hidden + (head_dim,)
        for i in range(len(sizes) - 1):
            gain = head_gain if i == len(sizes) - 2 else math.sqrt(2.0)
            params.arrays[f"{prefix}_W{i}"] = _orthogonal(rng, sizes[i], sizes[i + 1], gain)
            params.arrays[f"{prefix}_b{i}"] = np.zeros(sizes[i + 1])
    if kind == GAUSSIAN:
        params.arrays["log_std"] = np.full(3, math.log(0.5 * space.u_max))
    return params


def _trunk(params: MlpParams, prefix: str, x: np.ndarray):
    acts = [x]
    h = x
    L = params.n_layers
    for i in range(L):
        z = h @ params.arrays[f"{prefix}_W{i}"] + params.arrays[f"{prefix}_b{i}"]
        h = np.tanh(z) if i < L - 1 else z
        acts.append(h)
    return acts


def _trunk_backward(params: MlpParams, prefix: str, acts, dout: np.ndarray, grads: dict):
    L = params.n_layers
    d = dout
    for i in reversed(range(L)):
        grads[f"{prefix}_W{i}"] += acts[i].T @ d
        grads[f"{prefix}_b{i}"] += d.sum(axis=0)
        if i > 0:
            d = (d @ params.arrays[f"{prefix}_W{i}"].T) * (1.0 - acts[i] ** 2)


def _as_batch(params: MlpParams, obs) -> tuple[np.ndarray, bool]:
    x = np.asarray(obs, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.obs_dim:
        raise DomainError(f"observation shape {np.shape(obs)} does not match obs_dim={params.obs_dim}")
    return x, single


def _distribution(params: MlpParams, head: np.ndarray) -> ActionDistribution:
    if params.kind == CATEGORICAL:
        return ActionDistribution(CATEGORICAL, logits=head.reshape(head.shape[:-1] + (3, params.n_choices)))
    log_std = np.clip(params.arrays["log_std"], LOG_STD_MIN, LOG_STD_MAX)
    return ActionDistribution(GAUSSIAN, mean=head, log_std=log_std)


def forward(params: MlpParams, obs) -> tuple[ActionDistribution, np.ndarray | float]:
    """Action distribution and state value for one observation or a batch."""
    x, single = _as_batch(params, obs)
    head = _trunk(params, "pi", x)[-1]
    value = _trunk(params, "v", x)[-1][:, 0]
    if single:
        return _distribution(params, head[0]), float(value[0])
    return _distribution(params, head), value


def log_prob(dist: ActionDistribution, actions) -> np.ndarray:
    if dist.kind == CATEGORICAL:
        logp = log_softmax(dist.logits)
        idx = np.asarray(actions)[..., None]
        return np.take_along_axis(logp, idx, axis=-1)[..., 0].sum(axis=-1)
    z = (np.asarray(actions, dtype=float) - dist.mean) / np.exp(dist.log_std)
    return (-0.5 * z * z - dist.log_std - HALF_LOG_2PI).sum(axis=-1)


def entropy(dist: ActionDistribution) -> np.ndarray:
    if dist.kind == CATEGORICAL:
        logp = log_softmax(dist.logits)
        return -(np.exp(logp) * logp).sum(axis=(-2, -1))
    h = float((dist.log_std + 0.5 + HALF_LOG_2PI).sum())
    return np.full(dist.mean.shape[:-1], h) if dist.mean.ndim > 1 else h


def sample(dist: ActionDistribution, rng: np.random.Generator, deterministic: bool = False):
    """Draw an action choice; returns ``(choice, log_prob, entropy)``.

    Categorical choices are per-axis indices.  Gaussian choices are raw,
    unclamped reals; the log-probability refers to the unclamped value.
    """
    if dist.kind == CATEGORICAL:
        if deterministic:
            choice = dist.logits.argmax(axis=-1)
        else:
            cdf = np.cumsum(dist.probs(), axis=-1)
            u = rng.random(cdf.shape[:-1])[..., None] * cdf[..., -1:]
            choice = np.minimum((cdf <= u).sum(axis=-1), dist.logits.shape[-1] - 1)
    else:
        if deterministic:
            choice = dist.mean.copy()
        else:
            choice = dist.mean + np.exp(dist.log_std) * rng.standard_normal(dist.mean.shape)
    return choice, log_prob(dist, choice), entropy(dist)


@dataclass(frozen=True)
class LossSpec:
    clip_eps: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.0


def gradients(params: MlpParams, loss_spec: LossSpec, batch: dict):
    """PPO loss and its exact gradient with respect to every parameter.

    ``batch`` holds ``obs``, ``actions``, ``old_log_probs``, ``advantages``
    and ``returns``.  The loss is the batch mean of
    ``-min(r A, clip(r) A) + value_coef (V - R)^2 - entropy_coef H``.
    """
    x = np.asarray(batch["obs"], dtype=float)
    B = len(x)
    if B == 0:
        raise DomainError("empty batch")
    actions = np.asarray(batch["actions"])
    adv = np.asarray(batch["advantages"], dtype=float)
    ret = np.asarray(batch["returns"], dtype=float)
    old_logp = np.asarray(batch["old_log_probs"], dtype=float)
    eps = loss_spec.clip_eps

    pi_acts = _trunk(params, "pi", x)
    v_acts = _trunk(params, "v", x)
    head = pi_acts[-1]
    value = v_acts[-1][:, 0]
    dist = _distribution(params, head)

    if dist.kind == CATEGORICAL:
        logp_all = log_softmax(dist.logits)  # (B, 3, K)
        p = np.exp(logp_all)
        logp = np.take_along_axis(logp_all, actions[..., None], axis=-1)[..., 0].sum(axis=-1)
        h_axis = -(p * logp_all).sum(axis=-1)  # (B, 3)
        ent = h_axis.sum(axis=-1)
    else:
        sigma = np.exp(dist.log_std)
        z = (actions - dist.mean) / sigma
        logp = (-0.5 * z * z - dist.log_std - HALF_LOG_2PI).sum(axis=-1)
        ent = np.full(B, float((dist.log_std + 0.5 + HALF_LOG_2PI).sum()))

    log_ratio = logp - old_logp
    ratio = np.exp(log_ratio)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    surrogate = np.minimum(unclipped, clipped)
    v_err = value - ret
    per_sample = -surrogate + loss_spec.value_coef * v_err**2 - loss_spec.entropy_coef * ent
    if not np.isfinite(per_sample).all():
        bad = int(np.flatnonzero(~np.isfinite(per_sample))[0])
        raise NonFiniteLossError(bad)

    # d(loss)/d(logp): min() follows the unclipped branch when it is the smaller one
    d_logp = np.where(unclipped <= clipped, -unclipped, 0.0) / B
    grads = params.zeros_like()

    if dist.kind == CATEGORICAL:
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, actions[..., None], 1.0, axis=-1)
        d_logits = d_logp[:, None, None] * (onehot - p)
        d_logits += (loss_spec.entropy_coef / B) * p * (logp_all + h_axis[..., None])
        d_head = d_logits.reshape(B, -1)
    else:
        d_head = d_logp[:, None] * z / sigma
        d_ls = (d_logp[:, None] * (z * z - 1.0)).sum(axis=0) - loss_spec.entropy_coef
        raw = params.arrays["log_std"]
        grads["log_std"] += np.where((raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX), d_ls, 0.0)

    _trunk_backward(params, "pi", pi_acts, d_head, grads)
    d_value = (2.0 * loss_spec.value_coef / B) * v_err
    _trunk_backward(params, "v", v_acts, d_value[:, None], grads)

    info = {
        "loss": float(per_sample.mean()),
        "policy_loss": float(-surrogate.mean()),
        "value_loss": float((v_err**2).mean()),
        "entropy": float(ent.mean()),
        "approx_kl": float(((ratio - 1.0) - log_ratio).mean()),
        "clip_fraction": float((np.abs(ratio - 1.0) > eps).mean()),
        "mean_ratio": float(ratio.mean()),
    }
    return info, grads


def loss_value(params: MlpParams, loss_spec: LossSpec, batch: dict) -> float:
    return gradients(params, loss_spec, batch)[0]["loss"]


def save_checkpoint(path, params: MlpParams, extra: dict | None = None) -> None:
    """Little-endian layout: magic, version, JSON meta, shape table, float64 data, CRC32."""
    meta = params.meta()
    if extra:
        meta["extra"] = extra
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION),
             struct.pack("<I", len(meta_bytes)), meta_bytes,
             struct.pack("<I", len(params.arrays))]
    for name, arr in params.arrays.items():
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for arr in params.arrays.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(parts)
    blob = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[MlpParams, dict]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a policy checkpoint: expected magic bytes "
                              f"{CHECKPOINT_MAGIC!r}, found {blob[:8]!r}")
    if len(blob) < 20:
        raise CheckpointError(f"{path} is truncated")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path} failed its CRC32 check (corrupt or truncated)")
    try:
        off = 8
        (version,) = struct.unpack_from("<I", body, off); off += 4
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (mlen,) = struct.unpack_from("<I", body, off); off += 4
        meta = json.loads(body[off:off + mlen]); off += mlen
        (count,) = struct.unpack_from("<I", body, off); off += 4
        table = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, off); off += 2
            name = body[off:off + nlen].decode(); off += nlen
            (ndim,) = struct.unpack_from("<I", body, off); off += 4
            shape = struct.unpack_from(f"<{ndim}I", body, off); off += 4 * ndim
            table.append((name, shape))
        arrays = {}
        for name, shape in table:
            size = int(np.prod(shape)) if shape else 1
            arrays[name] = np.frombuffer(body, dtype="<f8", count=size, offset=off).reshape(shape).astype(float)
            off += 8 * size
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
    if off != len(body):
        raise CheckpointError(f"{path}: {len(body) - off} trailing bytes after parameter data")
    params = MlpParams(meta["obs_dim"], meta["kind"], meta["n_choices"], tuple(meta["hidden"]), arrays)
    return params, meta.get("extra", {})
