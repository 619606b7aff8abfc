"""The conditional codec: linear encoder, discrete bottleneck, context decoder.

Sender side: per-cell channel vectors are mean-centered, projected to a
D-dimensional latent (PCA fit offline), vector-quantized against a shared
codebook, and entropy-coded into a self-describing message. Encoding never
sees any receiver-side data; a message is a pure function of the pruned
feature, the mask, the codec parameters and the codebook.

Receiver side: the local feature is turned into a per-cell context vector
(the projected box-mean of a small neighborhood), and a ridge-fit linear
decoder maps [dequantized latent | context | 1] back to channel space. The
unconditional decoder, fit on the same data without the context block, is
kept alongside as the ablation baseline; because it is nested inside the
conditional model, its training objective can never beat the conditional
one.

An optional gradient fine-tune step updates the projection and decoder with
the quantizer treated as identity in the backward pass, and refreshes the
codebook by an exponential moving average over assigned latents.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import (
    CodebookMismatchError,
    ConfigError,
    FormatError,
    InsufficientDataError,
    ShapeMismatchError,
    StepRejectedError,
)
from .features import FeatureMap, Mask
from .quantizer import Codebook, dequantize, quantize_map
from .rans import RANS_L, FrequencyTable, build_freq_table, rans_decode, rans_encode
from .wire import Message

DEFAULT_PRECISION = 12

_DCCP_MAGIC = b"DCCP"
_DCCP_VERSION = 1
_DCCP_HEADER = struct.Struct("<4sBBHHBdddQ")
_FLAG_HAS_COND = 1
_FLAG_HAS_UNCOND = 2


def _frozen_f64(values, shape, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, order="C")
    if arr.shape != shape:
        raise ConfigError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ConfigError(f"{name} contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class CodecParams:
    """All learnable state of one codec except the codebook itself.

    projection/mean define the encoder (and the context branch, which shares
    them); w_cond maps [latent | context | 1] to channels, w_uncond maps
    [latent | 1]. The codebook is referenced by version hash so a mismatch
    between encoder and decoder is detected instead of silently corrupting.
    """

    projection: np.ndarray
    mean: np.ndarray
    codebook_hash: int
    context_radius: int = 1
    ridge_lambda: float = 1e-3
    recon_weight: float = 1.0
    commitment_beta: float = 0.25
    w_cond: np.ndarray | None = None
    w_uncond: np.ndarray | None = None

    def __post_init__(self) -> None:
        proj = np.array(self.projection, dtype=np.float64, order="C")
        if proj.ndim != 2 or min(proj.shape) < 1:
            raise ConfigError("projection must be a D x C matrix")
        d, c = proj.shape
        object.__setattr__(self, "projection", _frozen_f64(proj, (d, c), "projection"))
        object.__setattr__(self, "mean", _frozen_f64(self.mean, (c,), "mean"))
        if self.context_radius < 0:
            raise ConfigError(f"context_radius must be >= 0, got {self.context_radius}")
        if self.ridge_lambda < 0.0:
            raise ConfigError(f"ridge_lambda must be >= 0, got {self.ridge_lambda}")
        if self.recon_weight < 0.0 or self.commitment_beta < 0.0:
            raise ConfigError("loss weights must be >= 0")
        if self.w_cond is not None:
            object.__setattr__(
                self, "w_cond", _frozen_f64(self.w_cond, (2 * d + 1, c), "w_cond")
            )
        if self.w_uncond is not None:
            object.__setattr__(
                self, "w_uncond", _frozen_f64(self.w_uncond, (d + 1, c), "w_uncond")
            )

    @property
    def embed_dim(self) -> int:
        return self.projection.shape[0]

    @property
    def channels(self) -> int:
        return self.projection.shape[1]

    def with_decoder_fit(self, fit: "DecoderFit") -> "CodecParams":
        return replace(self, w_cond=fit.w_cond, w_uncond=fit.w_uncond)


@dataclass(frozen=True)
class ContextMap:
    """Per-cell D-vector context, spatially aligned with the decoded latent."""

    vectors: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.vectors, dtype=np.float64, order="C")
        if arr.ndim != 3:
            raise ConfigError("context map must be (H, W, D)")
        if not np.isfinite(arr).all():
            raise ConfigError("context map contains non-finite values")
        arr.flags.writeable = False
        object.__setattr__(self, "vectors", arr)

    def flat(self) -> np.ndarray:
        h, w, d = self.vectors.shape
        return self.vectors.reshape(h * w, d)


def fit_encoder_projection(
    training_features: Sequence[FeatureMap], embed_dim: int
) -> tuple[np.ndarray, np.ndarray]:
    """PCA over pooled per-cell channel vectors -> (D x C matrix, C mean).

    Principal directions are ordered by decreasing variance with a fixed sign
    convention (the largest-magnitude component of each direction is made
    positive). Directions beyond the data rank, and rows beyond C when
    D > C, are zero-padded.
    """
    if embed_dim < 1:
        raise ConfigError(f"embed_dim must be >= 1, got {embed_dim}")
    if not training_features:
        raise InsufficientDataError("no training features given")
    c = training_features[0].channels
    pooled = []
    for f in training_features:
        if f.channels != c:
            raise ShapeMismatchError("training features disagree on channel count")
        pooled.append(f.cell_vectors())
    x = np.concatenate(pooled, axis=0)
    if x.shape[0] < embed_dim:
        raise InsufficientDataError(
            f"need at least {embed_dim} pooled cells to fit the projection, got {x.shape[0]}"
        )
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / x.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    tol = max(float(eigvals[0]), 0.0) * 1e-10
    proj = np.zeros((embed_dim, c), dtype=np.float64)
    for row in range(min(embed_dim, c)):
        if eigvals[row] <= tol:
            break
        direction = eigvecs[:, row]
        peak = int(np.argmax(np.abs(direction)))
        if direction[peak] < 0:
            direction = -direction
        proj[row] = direction
    return proj, mean


def project_cells(cells: np.ndarray, params: CodecParams) -> np.ndarray:
    """(M, C) channel vectors -> (M, D) latents through the encoder projection."""
    return (cells - params.mean) @ params.projection.T


def si_context(f_local: FeatureMap, params: CodecParams) -> ContextMap:
    """Project the (2r+1)^2 box-mean around each cell; zero padding at borders.

    The box mean uses a fixed divisor, so border cells (whose windows hang
    over the zero padding) genuinely differ from interior ones.
    """
    if f_local.channels != params.channels:
        raise ShapeMismatchError(
            f"local feature has {f_local.channels} channels, codec expects {params.channels}"
        )
    r = params.context_radius
    values = f_local.values.astype(np.float64)
    if r > 0:
        size = (1, 2 * r + 1, 2 * r + 1)
        values = uniform_filter(values, size=size, mode="constant", cval=0.0)
    cells = values.reshape(params.channels, -1).T
    ctx = project_cells(cells, params)
    return ContextMap(ctx.reshape(f_local.height, f_local.width, params.embed_dim))


def _require_matching_codebook(params: CodecParams, cb: Codebook) -> None:
    if params.codebook_hash != cb.version_hash:
        raise CodebookMismatchError(
            f"codec params reference codebook {params.codebook_hash:#x}, "
            f"got {cb.version_hash:#x}"
        )
    if cb.dim != params.embed_dim:
        raise CodebookMismatchError(
            f"codebook dimension {cb.dim} != codec embed_dim {params.embed_dim}"
        )


def encode_message(
    f_pruned: FeatureMap,
    mask: Mask,
    params: CodecParams,
    cb: Codebook,
    precision: int = DEFAULT_PRECISION,
) -> Message:
    """Quantize and entropy-code the unpruned cells into a wire message.

    Encoding takes no receiver-side input whatsoever: the message is a pure
    function of (f_pruned, mask, params, cb, precision).
    """
    if (f_pruned.height, f_pruned.width) != (mask.height, mask.width):
        raise ShapeMismatchError("mask does not match the feature map")
    if f_pruned.channels != params.channels:
        raise ShapeMismatchError(
            f"feature has {f_pruned.channels} channels, codec expects {params.channels}"
        )
    _require_matching_codebook(params, cb)

    flat = mask.bits.ravel()
    n = int(flat.sum())
    if n > 0:
        cells = f_pruned.cell_vectors()[flat]
        latents = project_cells(cells, params)
        idx = quantize_map(latents, cb)
        table = build_freq_table(idx, cb.size, precision)
        payload, state = rans_encode(idx, table)
        freqs = table.freqs
    else:
        payload, state = b"", RANS_L
        freqs = np.zeros(cb.size, dtype=np.int64)
    return Message(
        channels=f_pruned.channels,
        height=f_pruned.height,
        width=f_pruned.width,
        embed_dim=params.embed_dim,
        codebook_size=cb.size,
        precision=precision,
        codebook_hash=cb.version_hash,
        mask=mask,
        num_symbols=n,
        freqs=freqs,
        payload=payload,
        final_state=state,
    )


@dataclass(frozen=True)
class DecoderFit:
    """Ridge solutions for the conditional decoder and its nested baseline.

    Both objectives (residual + ridge penalty, sum form) are evaluated in the
    common conditional design space - the unconditional weights are embedded
    with zero context coefficients - so cond_objective <= uncond_objective
    holds exactly, not just in exact arithmetic.
    """

    w_cond: np.ndarray
    w_uncond: np.ndarray
    cond_objective: float
    uncond_objective: float
    num_cells: int


def _solve_ridge(x: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    gram = x.T @ x + lam * np.eye(x.shape[1])
    try:
        return np.linalg.solve(gram, x.T @ y)
    except np.linalg.LinAlgError as exc:
        raise InsufficientDataError(
            "singular normal equations; increase ridge_lambda"
        ) from exc


def _ridge_objective(x: np.ndarray, y: np.ndarray, w: np.ndarray, lam: float) -> float:
    resid = x @ w - y
    return float(np.sum(resid * resid) + lam * np.sum(w * w))


def _decoder_rows(
    pairs: Sequence[tuple[FeatureMap, Mask, FeatureMap]],
    params: CodecParams,
    cb: Codebook,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack (dequantized latent, context, target) rows over unpruned cells."""
    deq_rows, ctx_rows, targets = [], [], []
    for sender_pruned, mask, receiver in pairs:
        if (sender_pruned.height, sender_pruned.width) != (mask.height, mask.width):
            raise ShapeMismatchError("mask does not match the sender feature")
        if sender_pruned.shape != receiver.shape:
            raise ShapeMismatchError("sender and receiver features must share a shape")
        flat = mask.bits.ravel()
        if not flat.any():
            continue
        cells = sender_pruned.cell_vectors()[flat]
        latents = project_cells(cells, params)
        idx = quantize_map(latents, cb)
        deq_rows.append(dequantize(idx, cb))
        ctx_rows.append(si_context(receiver, params).flat()[flat])
        targets.append(cells)
    if not deq_rows:
        raise InsufficientDataError("no unpruned cells in the training pairs")
    return (
        np.concatenate(deq_rows, axis=0),
        np.concatenate(ctx_rows, axis=0),
        np.concatenate(targets, axis=0),
    )


def fit_conditional_decoder(
    pairs: Sequence[tuple[FeatureMap, Mask, FeatureMap]],
    params: CodecParams,
    cb: Codebook,
    ridge_lambda: float | None = None,
) -> DecoderFit:
    """Closed-form ridge fit of the conditional decoder and nested baseline.

    pairs are (pruned sender feature, its mask, receiver feature) triples;
    rows are collected over every unpruned cell. If the solved conditional
    objective numerically exceeds the embedded unconditional one (possible
    when the context carries nothing), the embedded solution is installed
    instead, preserving the nested-model guarantee exactly.
    """
    _require_matching_codebook(params, cb)
    lam = params.ridge_lambda if ridge_lambda is None else ridge_lambda
    if lam < 0.0:
        raise ConfigError(f"ridge_lambda must be >= 0, got {lam}")
    deq, ctx, y = _decoder_rows(pairs, params, cb)
    m = deq.shape[0]
    d = params.embed_dim
    if m < 2 * d + 1:
        raise InsufficientDataError(
            f"need at least {2 * d + 1} unpruned training cells, got {m}"
        )
    ones = np.ones((m, 1), dtype=np.float64)
    x_cond = np.concatenate([deq, ctx, ones], axis=1)
    x_uncond = np.concatenate([deq, ones], axis=1)

    w_uncond = _solve_ridge(x_uncond, y, lam)
    w_cond = _solve_ridge(x_cond, y, lam)

    w_embedded = np.zeros_like(w_cond)
    w_embedded[:d] = w_uncond[:d]
    w_embedded[-1] = w_uncond[-1]
    uncond_objective = _ridge_objective(x_cond, y, w_embedded, lam)
    cond_objective = _ridge_objective(x_cond, y, w_cond, lam)
    if cond_objective > uncond_objective:
        w_cond, cond_objective = w_embedded, uncond_objective
    return DecoderFit(
        w_cond=w_cond,
        w_uncond=w_uncond,
        cond_objective=cond_objective,
        uncond_objective=uncond_objective,
        num_cells=m,
    )


def _decode_symbols(msg: Message, cb: Codebook) -> np.ndarray:
    table = FrequencyTable(msg.freqs, msg.precision)
    idx = rans_decode(msg.payload, table, msg.num_symbols, msg.final_state)
    return idx


def _check_decode_inputs(msg: Message, params: CodecParams, cb: Codebook) -> None:
    if msg.codebook_hash != cb.version_hash:
        raise CodebookMismatchError(
            f"message was coded against codebook {msg.codebook_hash:#x}, "
            f"got {cb.version_hash:#x}"
        )
    _require_matching_codebook(params, cb)
    if msg.codebook_size != cb.size or msg.embed_dim != cb.dim:
        raise CodebookMismatchError("message header disagrees with the codebook geometry")
    if msg.channels != params.channels:
        raise ShapeMismatchError(
            f"message carries {msg.channels} channels, codec expects {params.channels}"
        )


def decode_message(
    msg: Message, f_local: FeatureMap, params: CodecParams, cb: Codebook
) -> FeatureMap:
    """Conditional reconstruction of the sender feature using local context.

    Pruned cells come back as exact zeros; the result is fusion-ready.
    """
    _check_decode_inputs(msg, params, cb)
    if params.w_cond is None:
        raise ConfigError("conditional decoder weights are not fitted")
    if f_local.shape != (msg.channels, msg.height, msg.width):
        raise ShapeMismatchError(
            f"local feature shape {f_local.shape} does not match message header "
            f"({msg.channels},{msg.height},{msg.width})"
        )
    out = np.zeros((msg.channels, msg.height, msg.width), dtype=np.float32)
    if msg.num_symbols > 0:
        idx = _decode_symbols(msg, cb)
        deq = dequantize(idx, cb)
        flat = msg.mask.bits.ravel()
        ctx = si_context(f_local, params).flat()[flat]
        ones = np.ones((deq.shape[0], 1), dtype=np.float64)
        x = np.concatenate([deq, ctx, ones], axis=1)
        recon = x @ params.w_cond
        out.reshape(msg.channels, -1)[:, flat] = recon.T.astype(np.float32)
    return FeatureMap(out)


def decode_unconditional(msg: Message, params: CodecParams, cb: Codebook) -> FeatureMap:
    """Reconstruction without the side-information branch (ablation baseline)."""
    _check_decode_inputs(msg, params, cb)
    if params.w_uncond is None:
        raise ConfigError("unconditional decoder weights are not fitted")
    out = np.zeros((msg.channels, msg.height, msg.width), dtype=np.float32)
    if msg.num_symbols > 0:
        idx = _decode_symbols(msg, cb)
        deq = dequantize(idx, cb)
        flat = msg.mask.bits.ravel()
        ones = np.ones((deq.shape[0], 1), dtype=np.float64)
        x = np.concatenate([deq, ones], axis=1)
        recon = x @ params.w_uncond
        out.reshape(msg.channels, -1)[:, flat] = recon.T.astype(np.float32)
    return FeatureMap(out)


def _box_mean_cells(f: FeatureMap, radius: int) -> np.ndarray:
    values = f.values.astype(np.float64)
    if radius > 0:
        size = (1, 2 * radius + 1, 2 * radius + 1)
        values = uniform_filter(values, size=size, mode="constant", cval=0.0)
    return values.reshape(f.channels, -1).T


def finetune_step(
    params: CodecParams,
    cb: Codebook,
    batch: Sequence[tuple[FeatureMap, FeatureMap]],
    lr: float,
    assignments: np.ndarray | None = None,
    update_codebook: bool = True,
    ema_decay: float = 0.99,
) -> tuple[CodecParams, Codebook, float]:
    """One gradient step on the encoder projection, mean and conditional decoder.

    The quantizer's Jacobian is replaced by identity (straight-through): the
    decoder consumes the assigned codewords in the forward pass while the
    reconstruction gradient flows into the projection as if it consumed the
    latents. The loss is recon_weight * reconstruction MSE plus the codebook
    and commitment terms; the codebook itself carries no gradient and is
    refreshed by an exponential moving average over assigned latents when
    update_codebook is set. Passing precomputed assignments freezes the
    quantizer, which makes the step a plain smooth gradient step.

    Returns (updated params, updated codebook, loss before the step). The
    loss is evaluated at the incoming parameters; a non-finite loss or
    gradient rejects the step and leaves every input untouched.
    """
    if lr < 0.0:
        raise ConfigError(f"lr must be >= 0, got {lr}")
    if not batch:
        raise ConfigError("finetune batch must be non-empty")
    if params.w_cond is None:
        raise ConfigError("conditional decoder weights are not fitted")
    _require_matching_codebook(params, cb)

    sender_cells, box_cells = [], []
    for f_sender, f_receiver in batch:
        if f_sender.shape != f_receiver.shape:
            raise ShapeMismatchError("batch features must share a shape")
        if f_sender.channels != params.channels:
            raise ShapeMismatchError("batch channel count does not match the codec")
        sender_cells.append(f_sender.cell_vectors())
        box_cells.append(_box_mean_cells(f_receiver, params.context_radius))
    v = np.concatenate(sender_cells, axis=0)
    b = np.concatenate(box_cells, axis=0)
    m = v.shape[0]
    c = params.channels
    d = params.embed_dim

    z = project_cells(v, params)
    if assignments is None:
        assign = quantize_map(z, cb)
    else:
        assign = np.asarray(assignments, dtype=np.int64)
        if assign.shape != (m,):
            raise ShapeMismatchError(
                f"assignments must have one entry per cell ({m}), got {assign.shape}"
            )
    # Overflow to inf/nan here is exactly the condition the rejection path
    # reports, so numpy warnings are suppressed rather than surfaced.
    with np.errstate(over="ignore", invalid="ignore"):
        codewords = dequantize(assign, cb)
        ctx = project_cells(b, params)
        ones = np.ones((m, 1), dtype=np.float64)
        x = np.concatenate([codewords, ctx, ones], axis=1)
        resid = x @ params.w_cond - v

        gap = z - codewords
        l_rec = float(np.mean(resid * resid))
        l_gap = float(np.sum(gap * gap) / m)
        loss = params.recon_weight * l_rec + l_gap + params.commitment_beta * l_gap

        g_resid = (2.0 * params.recon_weight / (m * c)) * resid
        g_w = x.T @ g_resid
        g_x = g_resid @ params.w_cond.T
        g_z = g_x[:, :d] + (2.0 * params.commitment_beta / m) * gap
        g_ctx = g_x[:, d : 2 * d]
        g_proj = g_z.T @ (v - params.mean) + g_ctx.T @ (b - params.mean)
        g_mean = -params.projection.T @ (g_z.sum(axis=0) + g_ctx.sum(axis=0))

    if not np.isfinite(loss) or not (
        np.isfinite(g_w).all() and np.isfinite(g_proj).all() and np.isfinite(g_mean).all()
    ):
        raise StepRejectedError("non-finite fine-tune loss or gradient; step rejected")

    new_params = replace(
        params,
        projection=params.projection - lr * g_proj,
        mean=params.mean - lr * g_mean,
        w_cond=params.w_cond - lr * g_w,
    )
    new_cb = cb
    if update_codebook:
        if not 0.0 <= ema_decay < 1.0:
            raise ConfigError(f"ema_decay must be in [0,1), got {ema_decay}")
        updated = cb.codewords.astype(np.float64).copy()
        for k in np.unique(assign):
            updated[k] = ema_decay * updated[k] + (1.0 - ema_decay) * z[assign == k].mean(axis=0)
        new_cb = Codebook(updated)
        new_params = replace(new_params, codebook_hash=new_cb.version_hash)
    return new_params, new_cb, loss


def save_codec_params(params: CodecParams, path) -> None:
    """Write the versioned DCCP container (header + f64 LE weight blocks)."""
    flags = 0
    if params.w_cond is not None:
        flags |= _FLAG_HAS_COND
    if params.w_uncond is not None:
        flags |= _FLAG_HAS_UNCOND
    with open(path, "wb") as fh:
        fh.write(
            _DCCP_HEADER.pack(
                _DCCP_MAGIC,
                _DCCP_VERSION,
                flags,
                params.channels,
                params.embed_dim,
                params.context_radius,
                params.ridge_lambda,
                params.recon_weight,
                params.commitment_beta,
                params.codebook_hash,
            )
        )
        fh.write(params.projection.astype("<f8").tobytes())
        fh.write(params.mean.astype("<f8").tobytes())
        if params.w_cond is not None:
            fh.write(params.w_cond.astype("<f8").tobytes())
        if params.w_uncond is not None:
            fh.write(params.w_uncond.astype("<f8").tobytes())


def load_codec_params(path) -> CodecParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _DCCP_HEADER.size:
        raise FormatError("codec params file too short for header")
    magic, version, flags, c, d, radius, lam, recon_w, beta, cb_hash = _DCCP_HEADER.unpack_from(
        data, 0
    )
    if magic != _DCCP_MAGIC:
        raise FormatError(f"bad codec params magic {magic!r}")
    if version != _DCCP_VERSION:
        raise FormatError(f"unsupported codec params version {version}")
    pos = _DCCP_HEADER.size

    def block(rows: int, cols: int, what: str) -> np.ndarray:
        nonlocal pos
        nbytes = 8 * rows * cols
        if pos + nbytes > len(data):
            raise FormatError(f"codec params file truncated in {what}")
        arr = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols)
        pos += nbytes
        return arr

    projection = block(d, c, "projection")
    mean = block(1, c, "mean")[0]
    w_cond = block(2 * d + 1, c, "w_cond") if flags & _FLAG_HAS_COND else None
    w_uncond = block(d + 1, c, "w_uncond") if flags & _FLAG_HAS_UNCOND else None
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes in codec params file")
    return CodecParams(
        projection=projection,
        mean=mean,
        codebook_hash=cb_hash,
        context_radius=radius,
        ridge_lambda=lam,
        recon_weight=recon_w,
        commitment_beta=beta,
        w_cond=w_cond,
        w_uncond=w_uncond,
    )
