"""Link-level orchestration: budgeted communication, fusion, sweeps, CSV.

A link run generates the sender and receiver observations (with optional
pose noise and frame delay on the sender), prunes, encodes, measures the
serialized message length, decodes with the receiver's local feature, and
reports two metrics:

  * reconstruction MSE against the pruned sender feature (the codec target),
  * fusion-fidelity MSE: max-fusion with the reconstruction versus
    max-fusion with the uncompressed, unpruned sender feature - the fused
    result an unconstrained link would have produced. With the whole
    communication path replaced by an identity channel this is exactly 0.

Sweeps aggregate link runs over independently seeded scenes. Rate and
robustness sweeps share one evaluation path, so the unperturbed robustness
row is bit-identical to the rate-distortion point at the same knobs. All
rows carry the full knob tuple and are emitted in sorted key order, making
CSV outputs reproducible byte-for-byte.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .codec import (
    CodecParams,
    DecoderFit,
    decode_message,
    decode_unconditional,
    encode_message,
    fit_conditional_decoder,
    fit_encoder_projection,
    project_cells,
)
from .errors import ConfigError, DecodeError
from .features import FeatureMap, elementwise_max, mse
from .pruning import mask_from_scores, score_map
from .quantizer import Codebook, train_codebook
from .simulate import (
    STREAM_KMEANS,
    STREAM_POSE,
    ScenarioConfig,
    derive_seed,
    generate_scene,
    observe,
    perturb_pose,
    scene_config,
)

# Frame index all evaluations run at, so delayed senders (delay <= 4) stay in
# range and rate and robustness sweeps see identical data at (sigma=0, delay=0).
DEFAULT_EVAL_T = 4

CSV_HEADER = "tau,K,D,rho,sigma_pose,delay,payload_bytes,recon_mse,fusion_mse,conditional,seed,scenes"

_KMEANS_SAMPLE_LIMIT = 65536


@dataclass(frozen=True)
class LinkResult:
    """Outcome of one directed sender -> receiver exchange."""

    sender: int
    receiver: int
    payload_bytes: int
    budget: int | None
    within_budget: bool
    recon_mse: float
    fusion_mse: float
    failed: bool = False


@dataclass(frozen=True)
class RDPoint:
    """One knob setting of a rate-distortion sweep, averaged over scenes."""

    tau: float
    codebook_size: int
    embed_dim: int
    payload_bytes: float
    recon_mse: float
    fusion_mse: float
    scenes: int


@dataclass(frozen=True)
class SweepRow:
    """One CSV row; column order mirrors CSV_HEADER."""

    tau: float
    codebook_size: int
    embed_dim: int
    rho: float
    sigma_pose: float
    delay: int
    payload_bytes: float
    recon_mse: float
    fusion_mse: float
    conditional: int
    seed: int
    scenes: int

    def as_csv(self) -> str:
        fields = (
            self.tau,
            self.codebook_size,
            self.embed_dim,
            self.rho,
            self.sigma_pose,
            self.delay,
            self.payload_bytes,
            self.recon_mse,
            self.fusion_mse,
            self.conditional,
            self.seed,
            self.scenes,
        )
        return ",".join(_format_value(v) for v in fields)

    def sort_key(self):
        return (
            self.tau,
            self.codebook_size,
            self.embed_dim,
            self.sigma_pose,
            self.delay,
            -self.conditional,
        )


def _format_value(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


@dataclass(frozen=True)
class FittedCodec:
    """A trained codec plus the decoder fit diagnostics."""

    params: CodecParams
    codebook: Codebook
    decoder_fit: DecoderFit


def fit_codec(
    cfg: ScenarioConfig,
    codebook_size: int = 64,
    embed_dim: int = 64,
    train_scenes: int = 8,
    kmeans_iters: int = 25,
    ridge_lambda: float = 1e-3,
    context_radius: int = 1,
    train_tau: float = 0.0,
) -> FittedCodec:
    """Fit projection, codebook and decoders on seeded training scenes.

    Training scenes come from a dedicated seed stream, so evaluation scenes
    drawn from the default stream are held out. The codebook is trained on
    the latents of cells that survive pruning at train_tau; decoder rows use
    every ordered agent pair of every training scene.
    """
    if train_scenes < 1:
        raise ConfigError(f"train_scenes must be >= 1, got {train_scenes}")
    observations: list[list[FeatureMap]] = []
    for s in range(train_scenes):
        cfg_s = scene_config(cfg, s, stream="train")
        scene = generate_scene(cfg_s, 0)
        observations.append([observe(scene, a, cfg_s) for a in range(cfg.num_agents)])

    pooled = [f for per_scene in observations for f in per_scene]
    projection, mean = fit_encoder_projection(pooled, embed_dim)
    params = CodecParams(
        projection=projection,
        mean=mean,
        codebook_hash=0,
        context_radius=context_radius,
        ridge_lambda=ridge_lambda,
    )

    masks = [
        [mask_from_scores(score_map(f), train_tau) for f in per_scene]
        for per_scene in observations
    ]
    latent_blocks = []
    for per_scene, per_masks in zip(observations, masks):
        for f, m in zip(per_scene, per_masks):
            flat = m.bits.ravel()
            if flat.any():
                latent_blocks.append(project_cells(f.cell_vectors()[flat], params))
    latents = np.concatenate(latent_blocks, axis=0)
    step = max(1, -(-latents.shape[0] // _KMEANS_SAMPLE_LIMIT))
    codebook = train_codebook(
        latents[::step], codebook_size, kmeans_iters, derive_seed(cfg.seed, STREAM_KMEANS)
    )
    params = CodecParams(
        projection=projection,
        mean=mean,
        codebook_hash=codebook.version_hash,
        context_radius=context_radius,
        ridge_lambda=ridge_lambda,
    )

    pairs = []
    for per_scene, per_masks in zip(observations, masks):
        for j in range(cfg.num_agents):
            for i in range(cfg.num_agents):
                if i == j:
                    continue
                pruned = FeatureMap(per_scene[j].values * per_masks[j].bits[np.newaxis])
                pairs.append((pruned, per_masks[j], per_scene[i]))
    fit = fit_conditional_decoder(pairs, params, codebook)
    return FittedCodec(params=params.with_decoder_fit(fit), codebook=codebook, decoder_fit=fit)


def fuse_all(f_local: FeatureMap, reconstructions: Sequence[FeatureMap]) -> FeatureMap:
    """Element-wise max over the local feature and every reconstruction."""
    fused = f_local
    for recon in reconstructions:
        fused = elementwise_max(fused, recon)
    return fused


def run_link(
    cfg: ScenarioConfig,
    t: int,
    sender: int,
    receiver: int,
    params: CodecParams,
    cb: Codebook,
    tau: float = 0.0,
    sigma_pose: float = 0.0,
    delay: int = 0,
    budget: int | None = None,
    conditional: bool = True,
) -> LinkResult:
    """One directed exchange at frame t with optional sender-side perturbations.

    The sender transmits its feature from frame max(0, t - delay), optionally
    pose-shifted; the receiver decodes against its current local feature. A
    link whose serialized message exceeds the budget is dropped (truncation
    would break entropy decodability), as is a link whose decode fails; the
    receiver then falls back to its local feature only.
    """
    if sender == receiver:
        raise ConfigError("sender and receiver must differ")
    if delay < 0:
        raise ConfigError(f"delay must be >= 0, got {delay}")

    f_local = observe(generate_scene(cfg, t), receiver, cfg)
    t_send = max(0, t - delay)
    f_sender = observe(generate_scene(cfg, t_send), sender, cfg)
    if sigma_pose > 0.0:
        f_sender = perturb_pose(
            f_sender, sigma_pose, derive_seed(cfg.seed, STREAM_POSE, sender, t)
        )

    mask = mask_from_scores(score_map(f_sender), tau)
    pruned = FeatureMap(f_sender.values * mask.bits[np.newaxis])
    msg = encode_message(pruned, mask, params, cb)
    payload = len(msg.to_bytes())
    within = budget is None or payload <= budget

    failed = False
    recon = FeatureMap.zeros(*f_sender.shape)
    if within:
        try:
            if conditional:
                recon = decode_message(msg, f_local, params, cb)
            else:
                recon = decode_unconditional(msg, params, cb)
        except DecodeError:
            failed = True
            recon = FeatureMap.zeros(*f_sender.shape)

    fused = fuse_all(f_local, [recon] if (within and not failed) else [])
    oracle = fuse_all(f_local, [f_sender])
    return LinkResult(
        sender=sender,
        receiver=receiver,
        payload_bytes=payload,
        budget=budget,
        within_budget=within,
        recon_mse=mse(recon, pruned),
        fusion_mse=mse(fused, oracle),
        failed=failed,
    )


@dataclass(frozen=True)
class PointStats:
    payload_bytes: float
    recon_mse: float
    fusion_mse: float


def evaluate_point(
    cfg: ScenarioConfig,
    params: CodecParams,
    cb: Codebook,
    tau: float,
    sigma_pose: float = 0.0,
    delay: int = 0,
    scenes: int = 3,
    conditional: bool = True,
    budget: int | None = None,
    t_eval: int = DEFAULT_EVAL_T,
    sender: int = 1,
    receiver: int = 0,
) -> PointStats:
    """Mean link metrics over independently seeded evaluation scenes."""
    if scenes < 1:
        raise ConfigError(f"scenes must be >= 1, got {scenes}")
    payloads, recons, fusions = [], [], []
    for s in range(scenes):
        cfg_s = scene_config(cfg, s, stream="eval")
        res = run_link(
            cfg_s,
            t_eval,
            sender,
            receiver,
            params,
            cb,
            tau=tau,
            sigma_pose=sigma_pose,
            delay=delay,
            budget=budget,
            conditional=conditional,
        )
        payloads.append(res.payload_bytes)
        recons.append(res.recon_mse)
        fusions.append(res.fusion_mse)
    return PointStats(
        payload_bytes=float(np.mean(payloads)),
        recon_mse=float(np.mean(recons)),
        fusion_mse=float(np.mean(fusions)),
    )


def rd_sweep(
    cfg: ScenarioConfig,
    taus: Sequence[float] = tuple(v / 10 for v in range(10)),
    codebook_sizes: Sequence[int] = (64,),
    embed_dim: int = 64,
    scenes_per_point: int = 3,
    train_scenes: int = 6,
    budget: int | None = None,
    t_eval: int = DEFAULT_EVAL_T,
) -> list[RDPoint]:
    """Rate-distortion grid over tau and codebook size, one codec fit per size."""
    if not taus or not codebook_sizes:
        raise ConfigError("sweep grids must be non-empty")
    points = []
    for k in codebook_sizes:
        fitted = fit_codec(
            cfg, codebook_size=k, embed_dim=embed_dim, train_scenes=train_scenes
        )
        for tau in taus:
            stats = evaluate_point(
                cfg,
                fitted.params,
                fitted.codebook,
                tau=tau,
                scenes=scenes_per_point,
                budget=budget,
                t_eval=t_eval,
            )
            points.append(
                RDPoint(
                    tau=float(tau),
                    codebook_size=int(k),
                    embed_dim=int(embed_dim),
                    payload_bytes=stats.payload_bytes,
                    recon_mse=stats.recon_mse,
                    fusion_mse=stats.fusion_mse,
                    scenes=scenes_per_point,
                )
            )
    return points


def rd_points_to_rows(points: Sequence[RDPoint], cfg: ScenarioConfig) -> list[SweepRow]:
    return [
        SweepRow(
            tau=p.tau,
            codebook_size=p.codebook_size,
            embed_dim=p.embed_dim,
            rho=cfg.rho,
            sigma_pose=0.0,
            delay=0,
            payload_bytes=p.payload_bytes,
            recon_mse=p.recon_mse,
            fusion_mse=p.fusion_mse,
            conditional=1,
            seed=cfg.seed,
            scenes=p.scenes,
        )
        for p in points
    ]


def robustness_sweep(
    cfg: ScenarioConfig,
    sigmas: Sequence[float],
    delays: Sequence[int],
    params: CodecParams,
    cb: Codebook,
    tau: float = 0.0,
    scenes: int = 3,
    embed_dim: int | None = None,
    t_eval: int = DEFAULT_EVAL_T,
) -> list[SweepRow]:
    """Full sigma x delay grid, one row per combination per decoder variant.

    Each combination is evaluated twice - conditional and unconditional
    decoding on identical scene data - so the side-information benefit under
    perturbation can be read off row pairs.
    """
    if not sigmas or not delays:
        raise ConfigError("sigma and delay lists must be non-empty")
    d = params.embed_dim if embed_dim is None else embed_dim
    rows = []
    for sigma in sigmas:
        for delay in delays:
            for conditional in (1, 0):
                stats = evaluate_point(
                    cfg,
                    params,
                    cb,
                    tau=tau,
                    sigma_pose=float(sigma),
                    delay=int(delay),
                    scenes=scenes,
                    conditional=bool(conditional),
                    t_eval=t_eval,
                )
                rows.append(
                    SweepRow(
                        tau=float(tau),
                        codebook_size=cb.size,
                        embed_dim=int(d),
                        rho=cfg.rho,
                        sigma_pose=float(sigma),
                        delay=int(delay),
                        payload_bytes=stats.payload_bytes,
                        recon_mse=stats.recon_mse,
                        fusion_mse=stats.fusion_mse,
                        conditional=conditional,
                        seed=cfg.seed,
                        scenes=scenes,
                    )
                )
    return rows


def write_csv(rows: Sequence[SweepRow], path_or_handle) -> None:
    """Emit the documented CSV schema with rows in sorted key order."""
    ordered = sorted(rows, key=SweepRow.sort_key)
    text = "\n".join([CSV_HEADER] + [row.as_csv() for row in ordered]) + "\n"
    if isinstance(path_or_handle, io.TextIOBase):
        path_or_handle.write(text)
    else:
        with open(path_or_handle, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)


def read_csv(path) -> list[SweepRow]:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ConfigError(f"unexpected CSV header: {header!r}")
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 12:
                raise ConfigError(f"expected 12 CSV fields, got {len(parts)}: {line!r}")
            rows.append(
                SweepRow(
                    tau=float(parts[0]),
                    codebook_size=int(parts[1]),
                    embed_dim=int(parts[2]),
                    rho=float(parts[3]),
                    sigma_pose=float(parts[4]),
                    delay=int(parts[5]),
                    payload_bytes=float(parts[6]),
                    recon_mse=float(parts[7]),
                    fusion_mse=float(parts[8]),
                    conditional=int(parts[9]),
                    seed=int(parts[10]),
                    scenes=int(parts[11]),
                )
            )
    return rows


def summarize_rows(rows: Sequence[SweepRow]) -> str:
    """Compact per-(K, D, conditional) summary of a sweep CSV."""
    groups: dict[tuple[int, int, int], list[SweepRow]] = {}
    for row in rows:
        groups.setdefault((row.codebook_size, row.embed_dim, row.conditional), []).append(row)
    lines = ["K,D,conditional,rows,payload_min,payload_max,recon_min,recon_max"]
    for key in sorted(groups):
        members = groups[key]
        payloads = [r.payload_bytes for r in members]
        recons = [r.recon_mse for r in members]
        lines.append(
            ",".join(
                [
                    str(key[0]),
                    str(key[1]),
                    str(key[2]),
                    str(len(members)),
                    _format_value(min(payloads)),
                    _format_value(max(payloads)),
                    _format_value(min(recons)),
                    _format_value(max(recons)),
                ]
            )
        )
    return "\n".join(lines) + "\n"
