"""Deterministic simulator of correlated per-agent feature maps.

Generative model
----------------
A shared latent field evolves as a stationary AR(1) process over frames:

    Z_0   = smoothed unit-variance Gaussian field
    Z_t   = alpha * Z_{t-1} + sqrt(1 - alpha^2) * eps_t

where every innovation eps_t is an independent smoothed unit field, so the
per-cell marginal stays unit-variance and corr(Z_t, Z_0) = alpha^t. Agent k
observes, on its visible cells,

    F_k = rho * Z_t + sqrt(1 - rho^2) * eta_k + sigma_obs * w_k

with eta_k a private smoothed unit field and w_k white measurement noise.
With sigma_obs = 0 the Pearson correlation between two agents on co-visible
cells is exactly rho^2 (more generally rho^2 / (1 + sigma_obs^2)), which is
what makes the decoder-side-information rate claims checkable.

Smoothing is a 5x5 box blur applied twice with wrap-around boundaries, then
rescaled to exact unit per-cell variance; wrap keeps the field statistics
identical at every cell. All randomness is drawn from streams keyed by
hashing (seed, stream tag, indices), so adding agents or frames never
perturbs existing ones and generation is reproducible under any scheduling.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import (
    ConfigError,
    FormatError,
    ShapeMismatchError,
    UndefinedCorrelationError,
)
from .features import FeatureMap, Mask

# Stream tags for seed derivation. Never renumber: fixtures depend on them.
STREAM_SCENE = 1
STREAM_AGENT = 2
STREAM_OBS = 3
STREAM_POSE = 4
STREAM_EVAL_SCENE = 5
STREAM_TRAIN_SCENE = 6
STREAM_KMEANS = 7

_BLUR_SIZE = 5
# Two passes of a separable 5x5 box give the separable kernel k1 (x) k1 with
# k1 = box*box; per-cell variance of the blurred white field is (sum k1^2)^2,
# so dividing by sum(k1^2) restores exact unit variance under wrap boundaries.
_K1 = np.convolve(np.full(_BLUR_SIZE, 1.0 / _BLUR_SIZE), np.full(_BLUR_SIZE, 1.0 / _BLUR_SIZE))
_FIELD_STD = float(np.sum(_K1 * _K1))


def derive_seed(*parts: int) -> int:
    """Collision-resistant 64-bit stream seed from non-negative integer parts."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        value = int(part)
        if value < 0:
            raise ConfigError(f"seed parts must be non-negative, got {value}")
        h.update(value.to_bytes(16, "little"))
    return int.from_bytes(h.digest(), "little")


def _rng(*parts: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))


def _unit_field(rng: np.random.Generator, channels: int, height: int, width: int) -> np.ndarray:
    white = rng.standard_normal((channels, height, width))
    size = (1, _BLUR_SIZE, _BLUR_SIZE)
    smooth = uniform_filter(uniform_filter(white, size=size, mode="wrap"), size=size, mode="wrap")
    return smooth / _FIELD_STD


@dataclass(frozen=True)
class ScenarioConfig:
    """Deterministic description of agents, correlation and codec-facing knobs."""

    num_agents: int = 2
    channels: int = 32
    height: int = 128
    width: int = 128
    rho: float = 0.9
    sigma_obs: float = 0.0
    visibility_overlap: float = 1.0
    alpha: float = 0.8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_agents < 2:
            raise ConfigError(f"num_agents must be >= 2, got {self.num_agents}")
        for name in ("channels", "height", "width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must be in [0,1], got {self.rho}")
        if self.sigma_obs < 0.0:
            raise ConfigError(f"sigma_obs must be >= 0, got {self.sigma_obs}")
        if not 0.0 <= self.visibility_overlap <= 1.0:
            raise ConfigError(f"visibility_overlap must be in [0,1], got {self.visibility_overlap}")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError(f"alpha must be in [0,1), got {self.alpha}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit an unsigned 64-bit integer")


@dataclass(frozen=True)
class Scene:
    """Shared latent field at one frame index."""

    latent: np.ndarray
    t: int

    def __post_init__(self) -> None:
        arr = np.array(self.latent, dtype=np.float64, order="C")
        if arr.ndim != 3 or not np.isfinite(arr).all():
            raise ConfigError("scene latent must be a finite 3-d array")
        arr.flags.writeable = False
        object.__setattr__(self, "latent", arr)


def generate_scene(cfg: ScenarioConfig, t: int) -> Scene:
    """Latent field at frame t, deterministic in (cfg.seed, t)."""
    if t < 0:
        raise ConfigError(f"frame index must be >= 0, got {t}")
    z = _unit_field(_rng(cfg.seed, STREAM_SCENE, 0), cfg.channels, cfg.height, cfg.width)
    innov = np.sqrt(1.0 - cfg.alpha**2)
    for step in range(1, t + 1):
        eps = _unit_field(_rng(cfg.seed, STREAM_SCENE, step), cfg.channels, cfg.height, cfg.width)
        z = cfg.alpha * z + innov * eps
    return Scene(z, t)


def _covisible_cells(cfg: ScenarioConfig) -> int:
    return int(round(cfg.visibility_overlap * cfg.height * cfg.width))


def visibility_mask(cfg: ScenarioConfig, agent_id: int) -> Mask:
    """Agent's visible region: the common co-visible prefix plus a private chunk.

    Cells are indexed row-major. The first round(overlap * H * W) cells are
    visible to every agent; the remainder is split into contiguous per-agent
    chunks, so any two agents share exactly the common prefix.
    """
    if not 0 <= agent_id < cfg.num_agents:
        raise ConfigError(f"agent_id {agent_id} out of range for {cfg.num_agents} agents")
    total = cfg.height * cfg.width
    common = _covisible_cells(cfg)
    rest = total - common
    flat = np.zeros(total, dtype=bool)
    flat[:common] = True
    lo = common + (agent_id * rest) // cfg.num_agents
    hi = common + ((agent_id + 1) * rest) // cfg.num_agents
    flat[lo:hi] = True
    return Mask(flat.reshape(cfg.height, cfg.width))


def covisible_mask(cfg: ScenarioConfig, agent_a: int, agent_b: int) -> Mask:
    """Cells visible to both agents."""
    a = visibility_mask(cfg, agent_a)
    b = visibility_mask(cfg, agent_b)
    return Mask(a.bits & b.bits)


def observe(scene: Scene, agent_id: int, cfg: ScenarioConfig) -> FeatureMap:
    """Agent's feature map at the scene's frame; zeros outside its visibility."""
    if not 0 <= agent_id < cfg.num_agents:
        raise ConfigError(f"agent_id {agent_id} out of range for {cfg.num_agents} agents")
    if scene.latent.shape != (cfg.channels, cfg.height, cfg.width):
        raise ShapeMismatchError(
            f"scene latent shape {scene.latent.shape} does not match config "
            f"({cfg.channels},{cfg.height},{cfg.width})"
        )
    eta = _unit_field(
        _rng(cfg.seed, STREAM_AGENT, agent_id, scene.t), cfg.channels, cfg.height, cfg.width
    )
    f = cfg.rho * scene.latent + np.sqrt(1.0 - cfg.rho**2) * eta
    if cfg.sigma_obs > 0.0:
        white = _rng(cfg.seed, STREAM_OBS, agent_id, scene.t).standard_normal(f.shape)
        f = f + cfg.sigma_obs * white
    vis = visibility_mask(cfg, agent_id)
    f = f * vis.bits[np.newaxis, :, :]
    return FeatureMap(f)


def translate(f: FeatureMap, dh: int, dw: int) -> FeatureMap:
    """Shift the map by whole cells, zero-filling vacated cells."""
    out = np.zeros(f.shape, dtype=np.float32)
    h, w = f.height, f.width
    src_h = slice(max(0, -dh), min(h, h - dh))
    src_w = slice(max(0, -dw), min(w, w - dw))
    dst_h = slice(max(0, dh), min(h, h + dh))
    dst_w = slice(max(0, dw), min(w, w + dw))
    if src_h.start < src_h.stop and src_w.start < src_w.stop:
        out[:, dst_h, dst_w] = f.values[:, src_h, src_w]
    return FeatureMap(out)


def perturb_pose(f: FeatureMap, sigma_pose: float, seed: int) -> FeatureMap:
    """Integer translation with offsets round(Normal(0, sigma_pose)) per axis."""
    if sigma_pose < 0.0:
        raise ConfigError(f"sigma_pose must be >= 0, got {sigma_pose}")
    if sigma_pose == 0.0:
        return f
    offsets = np.random.default_rng(seed).normal(0.0, sigma_pose, size=2)
    dh, dw = (int(np.rint(v)) for v in offsets)
    return translate(f, dh, dw)


def empirical_correlation(a: FeatureMap, b: FeatureMap, mask: Mask) -> float:
    """Pearson correlation over masked cells, pooled across channels."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"feature map shapes differ: {a.shape} vs {b.shape}")
    if (a.height, a.width) != (mask.height, mask.width):
        raise ShapeMismatchError("mask spatial dims do not match the feature maps")
    if mask.count() < 2:
        raise ConfigError("correlation needs at least 2 masked cells")
    x = a.values[:, mask.bits].astype(np.float64).ravel()
    y = b.values[:, mask.bits].astype(np.float64).ravel()
    x = x - x.mean()
    y = y - y.mean()
    nx = float(np.sqrt(np.dot(x, x)))
    ny = float(np.sqrt(np.dot(y, y)))
    if nx == 0.0 or ny == 0.0:
        raise UndefinedCorrelationError("correlation undefined for constant input")
    r = float(np.dot(x, y) / (nx * ny))
    return min(1.0, max(-1.0, r))


def scene_config(cfg: ScenarioConfig, index: int, stream: str = "eval") -> ScenarioConfig:
    """Config for the index-th independent scene of an evaluation or training set."""
    tags = {"eval": STREAM_EVAL_SCENE, "train": STREAM_TRAIN_SCENE}
    if stream not in tags:
        raise ConfigError(f"unknown scene stream {stream!r}")
    if index < 0:
        raise ConfigError(f"scene index must be >= 0, got {index}")
    return replace(cfg, seed=derive_seed(cfg.seed, tags[stream], index))


_SCENARIO_FIELDS = {
    "num_agents": int,
    "channels": int,
    "height": int,
    "width": int,
    "rho": float,
    "sigma_obs": float,
    "visibility_overlap": float,
    "alpha": float,
    "seed": int,
}


def save_scenario(cfg: ScenarioConfig, path) -> None:
    """Write the flat key-value scenario file ('key = value' per line)."""
    lines = [f"{name} = {getattr(cfg, name)}" for name in _SCENARIO_FIELDS]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_scenario(path) -> ScenarioConfig:
    values: dict[str, object] = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, value = (part.strip() for part in line.partition("="))
            if key not in _SCENARIO_FIELDS:
                raise FormatError(f"{path}:{lineno}: unknown scenario key {key!r}")
            try:
                values[key] = _SCENARIO_FIELDS[key](value)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return ScenarioConfig(**values)
