"""Bit-exact multi-view compression and joint decompression."""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import bitstream, checkerboard, rangecoder
from .config import LAMBDAS
from .entropy import slice_rate
from .model import ParaHydra
from .tensor import Tensor, no_grad, round_half_away
from .transforms import InputError, encode_view, padded_size, para_jd


def lambda_index(lam: Optional[float]) -> int:
    if lam is not None and lam in LAMBDAS:
        return LAMBDAS.index(int(lam))
    return 255


@dataclass
class ViewCode:
    segments: list[bytes]  # z segment, then one per slice
    estimated_bits: list[float]
    y_hat: np.ndarray  # [1,N,h,w]
    z_hat: np.ndarray


@dataclass
class EncodeResult:
    data: bytes
    header: bitstream.BitstreamHeader
    views: list[ViewCode]

    @property
    def bpp(self) -> float:
        h = self.header
        return 8 * len(self.data) / (h.k * h.orig_h * h.orig_w)

    def view_bpp(self) -> list[float]:
        h = self.header
        return [8 * sum(map(len, v.segments)) / (h.orig_h * h.orig_w) for v in self.views]

    def latent_hashes(self) -> list[str]:
        return [latent_hash(v.y_hat) for v in self.views]


@dataclass
class DecodeResult:
    images: list[np.ndarray]  # [3,H,W] in [0,1]
    y_hat: list[np.ndarray]
    header: bitstream.BitstreamHeader
    consistency: list[list[np.ndarray]] = field(default_factory=list)

    def latent_hashes(self) -> list[str]:
        return [latent_hash(y) for y in self.y_hat]


def latent_hash(y: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(y, dtype="<f8").tobytes()).hexdigest()[:16]


def _as_batch(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        img = img[None]
    return img


# ---------------------------------------------------------------------------
# per-view coding
# ---------------------------------------------------------------------------


def encode_one(model: ParaHydra, x: np.ndarray) -> ViewCode:
    """Encode one view using no information from any other view."""
    em = model.entropy
    sc = model.cfg.slice_channels
    with no_grad():
        y_t, z_t = encode_view(x, model.encoder, model.hyper_enc)
        y = y_t.data
        z_sym = round_half_away(z_t.data)
        segments = [rangecoder.encode_symbols(z_sym.reshape(-1), em.prior.tables(z_sym.shape))]
        z_est = rangecoder.symbol_bits(
            z_sym.reshape(-1).astype(np.int64),
            em.prior.pmf(z_sym.shape),
        ).sum()
        estimates = [float(z_est)]
        phi_h = model.hyper_dec(Tensor(z_sym))
        H, W = y.shape[2:]
        mask = checkerboard._mask(H, W)
        decoded: list[Tensor] = []
        for i in range(model.cfg.slices):
            cur = y[:, i * sc : (i + 1) * sc]
            phi_ch = em.pccm_context(decoded, i, like=y_t)
            pa = em.anchor_params(i, phi_ch, phi_h)
            s_a = round_half_away(cur - pa.mu.data)
            anchor_only = np.where(mask, s_a + pa.mu.data, 0.0)
            pn = em.nonanchor_params(i, phi_ch, phi_h, Tensor(anchor_only))
            s_n = round_half_away(cur - pn.mu.data)
            y_i = np.where(mask, s_a + pa.mu.data, s_n + pn.mu.data)

            enc = rangecoder.RangeEncoder()
            for s, p, sel in ((s_a, pa, mask), (s_n, pn, ~mask)):
                syms = s[:, :, sel].reshape(-1).astype(np.int64)
                tables = rangecoder.build_gaussian_tables(np.zeros(syms.shape), p.sigma.data[:, :, sel].reshape(-1))
                rangecoder.encode_into(enc, syms, rangecoder.cumulative(tables))
            segments.append(enc.finish())
            mu = np.where(mask, pa.mu.data, pn.mu.data)
            sigma = np.where(mask, pa.sigma.data, pn.sigma.data)
            estimates.append(slice_rate(y_i, mu, sigma))
            decoded.append(Tensor(y_i))
        y_hat = np.concatenate([d.data for d in decoded], axis=1)
    return ViewCode(segments, estimates, y_hat, z_sym)


def decode_one(model: ParaHydra, segments: Sequence[bytes], latent_hw: tuple[int, int]) -> np.ndarray:
    """Recover one view's y_hat bit-exactly from its segments."""
    em = model.entropy
    n, sc = model.cfg.channels, model.cfg.slice_channels
    H, W = latent_hw
    zshape = (1, n, H // 4, W // 4)
    with no_grad():
        z_sym = rangecoder.decode_symbols(segments[0], em.prior.tables(zshape)).astype(np.float64).reshape(zshape)
        phi_h = model.hyper_dec(Tensor(z_sym))
        mask = checkerboard._mask(H, W)
        like = Tensor(np.zeros((1, n, H, W)))
        decoded: list[Tensor] = []
        for i in range(model.cfg.slices):
            seg = segments[1 + i]
            dec = rangecoder.RangeDecoder(seg)
            phi_ch = em.pccm_context(decoded, i, like=like)
            pa = em.anchor_params(i, phi_ch, phi_h)
            s_a = np.zeros((1, sc, H, W))
            sig = pa.sigma.data[:, :, mask].reshape(-1)
            tables = rangecoder.build_gaussian_tables(np.zeros(sig.shape), sig)
            s_a[:, :, mask] = rangecoder.decode_from(dec, rangecoder.cumulative(tables)).reshape(1, sc, -1)
            anchor_only = np.where(mask, s_a + pa.mu.data, 0.0)
            pn = em.nonanchor_params(i, phi_ch, phi_h, Tensor(anchor_only))
            s_n = np.zeros((1, sc, H, W))
            sig = pn.sigma.data[:, :, ~mask].reshape(-1)
            tables = rangecoder.build_gaussian_tables(np.zeros(sig.shape), sig)
            s_n[:, :, ~mask] = rangecoder.decode_from(dec, rangecoder.cumulative(tables)).reshape(1, sc, -1)
            if not dec.exhausted:
                raise rangecoder.CorruptStreamError(
                    f"slice {i} segment: consumed {dec.pos - rangecoder.FLUSH_PAD} of {len(seg)} declared bytes"
                )
            decoded.append(Tensor(np.where(mask, s_a + pa.mu.data, s_n + pn.mu.data)))
        return np.concatenate([d.data for d in decoded], axis=1)


# ---------------------------------------------------------------------------
# multi-view
# ---------------------------------------------------------------------------


def compress(
    model: ParaHydra, images: Sequence[np.ndarray], lam: Optional[float] = None, workers: int = 1
) -> EncodeResult:
    """Encode K views (each [3,H,W] or [1,3,H,W] in [0,1]) independently."""
    if not images:
        raise InputError("need at least one view")
    batch = [_as_batch(im) for im in images]
    shape = batch[0].shape
    for k, b in enumerate(batch):
        if b.shape != shape or b.shape[0] != 1:
            raise InputError(f"view {k} has shape {b.shape}, expected {shape} with batch 1")
    h, w = shape[2:]
    ph, pw = padded_size(h, w)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            views = list(pool.map(lambda x: encode_one(model, x), batch))
    else:
        views = [encode_one(model, x) for x in batch]
    header = bitstream.BitstreamHeader(len(views), h, w, ph, pw, lambda_index(lam), model.cfg.slices)
    data = bitstream.pack(header, [v.segments for v in views])
    return EncodeResult(data, header, views)


def decompress(model: ParaHydra, data: bytes, probe: bool = False, workers: int = 1) -> DecodeResult:
    """Entropy-decode every view (optionally in parallel), then reconstruct them jointly."""
    header, segs = bitstream.unpack(data)
    if header.n_slices != model.cfg.slices:
        raise bitstream.FormatError(f"stream has {header.n_slices} slices, model expects {model.cfg.slices}")
    latent_hw = (header.pad_h // 16, header.pad_w // 16)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            y_hat = list(pool.map(lambda s: decode_one(model, s, latent_hw), segs))
    else:
        y_hat = [decode_one(model, s, latent_hw) for s in segs]
    with no_grad():
        recon = para_jd([Tensor(y) for y in y_hat], model.decoder, (header.orig_h, header.orig_w))
    images = [r.data[0] for r in recon]
    result = DecodeResult(images, y_hat, header)
    if probe:
        result.consistency = consistency_maps(model, y_hat)
    return result


def consistency_maps(model: ParaHydra, y_hat: Sequence[np.ndarray]) -> list[list[np.ndarray]]:
    """Per main view, the first-stage joint-decoder consistency map against every other view."""
    from .pmifm import pmifm_consistency_probe

    out = []
    with no_grad():
        lat = [Tensor(y) for y in y_hat]
        for k in range(len(lat)):
            sides = [lat[j] for j in range(len(lat)) if j != k]
            maps = pmifm_consistency_probe(lat[k], sides, model.decoder.fuse1)
            out.append([m.data[0] for m in maps])
    return out
