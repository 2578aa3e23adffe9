"""Synthetic paired sequences with known alignment, and the evaluation tasks.

Each sequence follows a latent Gaussian random walk; the visual and language
streams are fixed random linear views of the same walk plus independent
noise, so frame ``t`` of one modality belongs with frame ``t`` of the other.
The linear views are drawn from ``map_seed`` and the trajectories from
``seed``: two datasets with the same ``map_seed`` and different ``seed``
share the observation model, which is what a held-out split needs.

Tasks:

* retrieval: for each visual frame, is the best-matching language frame of
  the same sequence the right one? Ties count as misses.
* chronology: shuffle the visual frames, assign them greedily to language
  slots by cosine similarity, report mean absolute displacement in frames.
* masked recovery: masked-prediction error of the model divided by that of
  predicting each sequence's mean clean embedding.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .dpg import WindowSpec
from .errors import FormatError, MagicError, ShapeError, TruncationError, VersionError
from .model import TsadpModel, encode_language, encode_visual, predict_masked
from .numeric import l2_normalize
from .trainer import MaskSpec, mask_rng, sample_mask

MAGIC = b"TSDS"
VERSION = 1
_U32 = struct.Struct("<I")


@dataclass(frozen=True)
class SynthConfig:
    num_sequences: int = 200
    T: int = 8
    d_visual: int = 16
    d_language: int = 16
    latent_dim: int = 4
    drift_scale: float = 1.0
    noise_scale: float = 0.05
    seed: int = 0
    map_seed: int = 0

    def __post_init__(self):
        for name in ("num_sequences", "T", "d_visual", "d_language", "latent_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")
        for name in ("drift_scale", "noise_scale"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")


class PairedSequence(NamedTuple):
    visual: np.ndarray    # (T, d_visual)
    language: np.ndarray  # (T, d_language)
    latent: np.ndarray    # (T, latent_dim)


class SynthDataset(list):
    """A list of :class:`PairedSequence` with dimension bookkeeping."""

    def __init__(self, sequences, d_visual: int, d_language: int, latent_dim: int):
        super().__init__(sequences)
        self.d_visual = d_visual
        self.d_language = d_language
        self.latent_dim = latent_dim

    def split(self, n: int) -> tuple["SynthDataset", "SynthDataset"]:
        dims = (self.d_visual, self.d_language, self.latent_dim)
        return SynthDataset(self[:n], *dims), SynthDataset(self[n:], *dims)


def observation_maps(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([cfg.map_seed, 0x3A95])
    scale = 1.0 / np.sqrt(cfg.latent_dim)
    m_v = rng.normal(0.0, scale, size=(cfg.d_visual, cfg.latent_dim))
    m_l = rng.normal(0.0, scale, size=(cfg.d_language, cfg.latent_dim))
    return m_v, m_l


def generate_dataset(cfg: SynthConfig, visual_map=None, language_map=None) -> SynthDataset:
    """Draw ``cfg.num_sequences`` paired sequences.

    ``visual_map`` / ``language_map`` override the random observation maps
    (shapes (d_visual, latent_dim) and (d_language, latent_dim)).
    """
    m_v, m_l = observation_maps(cfg)
    if visual_map is not None:
        m_v = np.asarray(visual_map, dtype=np.float64)
    if language_map is not None:
        m_l = np.asarray(language_map, dtype=np.float64)
    if m_v.shape != (cfg.d_visual, cfg.latent_dim) or m_l.shape != (cfg.d_language, cfg.latent_dim):
        raise ShapeError(f"observation maps {m_v.shape}, {m_l.shape} do not match config")
    rng = np.random.default_rng([cfg.seed, 0xDA7A])
    sequences = []
    for _ in range(cfg.num_sequences):
        start = rng.standard_normal(cfg.latent_dim)
        steps = cfg.drift_scale * rng.standard_normal((cfg.T - 1, cfg.latent_dim))
        latent = np.vstack([start, start + np.cumsum(steps, axis=0)])
        visual = latent @ m_v.T + cfg.noise_scale * rng.standard_normal((cfg.T, cfg.d_visual))
        language = latent @ m_l.T + cfg.noise_scale * rng.standard_normal((cfg.T, cfg.d_language))
        sequences.append(PairedSequence(visual, language, latent))
    return SynthDataset(sequences, cfg.d_visual, cfg.d_language, cfg.latent_dim)


def dataset_bytes(ds: SynthDataset) -> bytes:
    """TSDS layout: magic, version, count, d_visual, d_language, latent_dim
    (u32 LE), then per sequence T (u32) and the visual, language and latent
    blocks as row-major float64 LE."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    for value in (VERSION, len(ds), ds.d_visual, ds.d_language, ds.latent_dim):
        buf.write(_U32.pack(value))
    for seq in ds:
        buf.write(_U32.pack(seq.visual.shape[0]))
        for block in seq:
            buf.write(np.ascontiguousarray(block, dtype="<f8").tobytes())
    return buf.getvalue()


def save_dataset(ds: SynthDataset, path) -> None:
    Path(path).write_bytes(dataset_bytes(ds))


def read_dataset(data: bytes) -> SynthDataset:
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise TruncationError(f"dataset truncated while reading {what} at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    magic = take(4, "magic")
    if magic != MAGIC:
        raise MagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, count, d_v, d_l, d_z = struct.unpack("<5I", take(20, "header"))
    if version != VERSION:
        raise VersionError(f"unsupported dataset version {version}, expected {VERSION}")
    sequences = []
    for i in range(count):
        T = _U32.unpack(take(4, f"length of sequence {i}"))[0]
        blocks = [np.frombuffer(take(8 * T * d, f"sequence {i}"), dtype="<f8")
                  .reshape(T, d).astype(np.float64) for d in (d_v, d_l, d_z)]
        sequences.append(PairedSequence(*blocks))
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after last sequence")
    return SynthDataset(sequences, d_v, d_l, d_z)


def load_dataset(path) -> SynthDataset:
    return read_dataset(Path(path).read_bytes())


def check_compatible(model: TsadpModel, ds: SynthDataset) -> None:
    if model.d_visual != ds.d_visual or model.d_language != ds.d_language:
        raise ShapeError(
            f"model expects visual/language dims ({model.d_visual}, {model.d_language}), "
            f"dataset has ({ds.d_visual}, {ds.d_language})")


def _similarities(model: TsadpModel, seq, window: WindowSpec) -> np.ndarray:
    z_v = l2_normalize(encode_visual(model, seq[0], window))
    z_l = l2_normalize(encode_language(model, seq[1]))
    return z_v @ z_l.T


def eval_retrieval(model: TsadpModel, dataset, window: WindowSpec = WindowSpec(1)) -> float:
    correct = 0
    total = 0
    for seq in dataset:
        sim = _similarities(model, seq, window)
        T = sim.shape[0]
        for t in range(T):
            others = np.delete(sim[t], t)
            if others.size == 0 or sim[t, t] > others.max():
                correct += 1
        total += T
    return correct / total


def greedy_assignment(sim: np.ndarray) -> np.ndarray:
    """Match rows to columns by repeatedly taking the largest remaining entry.

    Not an optimal matching. Equal entries are taken in row-major order.
    """
    n = sim.shape[0]
    flat_order = np.argsort(-sim, axis=None, kind="stable")
    assigned = np.full(n, -1)
    used = np.zeros(n, dtype=bool)
    for flat in flat_order:
        r, c = divmod(int(flat), n)
        if assigned[r] < 0 and not used[c]:
            assigned[r] = c
            used[c] = True
    return assigned


def eval_chronology(model: TsadpModel, dataset, rng: np.random.Generator,
                    window: WindowSpec = WindowSpec(1)) -> float:
    """Mean |assigned slot - true slot| over all frames, in frames.

    Visual embeddings are computed on the sequence in its true order, then
    presented to the matcher in a shuffled order.
    """
    errors = []
    for seq in dataset:
        sim = _similarities(model, seq, window)
        perm = rng.permutation(sim.shape[0])
        assigned = greedy_assignment(sim[perm])
        errors.append(np.abs(assigned - perm))
    return float(np.mean(np.concatenate(errors)))


def eval_masked_recovery(model: TsadpModel, dataset, mask_spec: MaskSpec,
                         window: WindowSpec = WindowSpec(1)) -> float:
    model_err = 0.0
    base_err = 0.0
    for i, seq in enumerate(dataset):
        mask = sample_mask(seq[0].shape[0], mask_spec, mask_rng(mask_spec, i))
        if not mask:
            continue
        truth = encode_visual(model, seq[0], window)
        mean = truth.mean(axis=0)
        pred = predict_masked(model, seq[0], mask, window)
        for t in mask:
            model_err += float(np.sum((pred[t] - truth[t]) ** 2))
            base_err += float(np.sum((mean - truth[t]) ** 2))
    if base_err == 0.0:
        return 0.0 if model_err == 0.0 else float("inf")
    return model_err / base_err


@dataclass(frozen=True)
class BenchResult:
    retrieval_accuracy: float
    chronology_mae: float
    masked_mse_ratio: float


def evaluate(model: TsadpModel, dataset, window: WindowSpec = WindowSpec(1),
             seed: int = 0, mask_rate: float = 0.25) -> BenchResult:
    """All three tasks with seeds derived from ``seed``."""
    if isinstance(dataset, SynthDataset):
        check_compatible(model, dataset)
    return BenchResult(
        eval_retrieval(model, dataset, window),
        eval_chronology(model, dataset, np.random.default_rng([seed, 0xC4]), window),
        eval_masked_recovery(model, dataset, MaskSpec(mask_rate, seed=seed + 1), window),
    )
