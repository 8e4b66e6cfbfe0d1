"""Losses, Adam updates, the training loop for all modes, denoising and ablations."""

from __future__ import annotations

import dataclasses
import enum
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .imgcore import Image, ImageError, InterpKind, threads_from_env
from .msp import VariantSet, msp_variants
from .net import ArchConfig, S2SNet, build_model, save_checkpoint
from .simulate import ConfigError, _from_mapping

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, history: "TrainHistory", checkpoint: Optional[Path] = None):
        super().__init__(message)
        self.history = history
        self.checkpoint = checkpoint


class LossConfig(str, enum.Enum):
    MSE_L1 = "mse_l1"
    MSE_MSE = "mse_mse"
    L1_L1 = "l1_l1"
    MSE_ONLY = "mse_only"
    L1_MSE = "l1_mse"

    @property
    def rec_flavor(self) -> str:
        return "l1" if self in (LossConfig.L1_L1, LossConfig.L1_MSE) else "mse"

    @property
    def con_flavor(self) -> Optional[str]:
        return {LossConfig.MSE_L1: "l1", LossConfig.MSE_MSE: "mse", LossConfig.L1_L1: "l1",
                LossConfig.MSE_ONLY: None, LossConfig.L1_MSE: "mse"}[self]


class BranchConfig(str, enum.Enum):
    HML = "hml"
    HL = "hl"
    ML = "ml"
    HM = "hm"
    ONE = "one"

    @property
    def scales(self) -> tuple:
        return {"hml": (1.0, 0.5, 0.25), "hl": (1.0, 0.25), "ml": (0.5, 0.25),
                "hm": (1.0, 0.5), "one": (1.0, 0.5, 0.25)}[self.value]

    @property
    def n_encoders(self) -> int:
        return 1 if self is BranchConfig.ONE else len(self.scales)

    def encoder_for(self, k: int) -> int:
        return 0 if self is BranchConfig.ONE else k


class TrainMode(str, enum.Enum):
    SPECKLE2SELF = "speckle2self"
    NOISE2TRUE = "noise2true"
    NOISE2NOISE = "noise2noise"


def _enum(cls, value):
    if isinstance(value, cls):
        return value
    try:
        return cls(str(value).lower())
    except ValueError:
        raise ConfigError(f"invalid {cls.__name__} {value!r}; choose from {[m.value for m in cls]}") from None


@dataclass(frozen=True)
class TrainConfig:
    mode: TrainMode = TrainMode.SPECKLE2SELF
    loss: LossConfig = LossConfig.MSE_L1
    branches: BranchConfig = BranchConfig.HML
    interp: InterpKind = InterpKind.BILINEAR
    lr: float = 0.001
    batch_size: int = 16
    epochs: int = 3000
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", _enum(TrainMode, self.mode))
        object.__setattr__(self, "loss", _enum(LossConfig, self.loss))
        object.__setattr__(self, "branches", _enum(BranchConfig, self.branches))
        try:
            object.__setattr__(self, "interp", InterpKind.parse(self.interp))
        except ImageError as exc:
            raise ConfigError(str(exc)) from None
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Laptop-sized profile: batch 8, 300 epochs."""
        base = dict(batch_size=8, epochs=300)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return _from_mapping(cls, data)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, enum.Enum):
                d[k] = v.value
        return d

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def arch_for(self, base: ArchConfig = ArchConfig()) -> ArchConfig:
        """Architecture with the encoder count this config trains."""
        n = self.branches.n_encoders if self.mode is TrainMode.SPECKLE2SELF else 1
        return dataclasses.replace(base, n_branches=n)


@dataclass
class EpochRecord:
    epoch: int
    total_loss: float
    rec_loss: float
    con_loss: float
    wall_seconds: float


@dataclass
class TrainHistory:
    records: List[EpochRecord] = field(default_factory=list)
    metadata: Dict = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = ["epoch,total_loss,rec_loss,con_loss,wall_seconds"]
        for r in self.records:
            lines.append(f"{r.epoch},{r.total_loss:.9g},{r.rec_loss:.9g},{r.con_loss:.9g},{r.wall_seconds:.3f}")
        return "\n".join(lines) + "\n"


# -------------------------------------------------------------------- losses

def _diff(a: torch.Tensor, b: torch.Tensor, flavor: str) -> torch.Tensor:
    if a.shape != b.shape:
        raise ImageError(f"dimension mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    d = a - b
    if flavor == "mse":
        return (d * d).mean()
    if flavor == "l1":
        return d.abs().mean()
    raise ValueError(f"unknown loss flavor {flavor!r}")


def rec_term(outputs: Sequence[torch.Tensor], targets: Sequence[torch.Tensor], flavor: str) -> torch.Tensor:
    if len(outputs) != len(targets):
        raise ValueError("outputs and variants differ in length")
    return sum(_diff(o, t, flavor) for o, t in zip(outputs, targets))


def con_term(outputs: Sequence[torch.Tensor], flavor: str) -> torch.Tensor:
    """Sum over unordered pairs k < l."""
    if len(outputs) < 2:
        raise ValueError("consistency loss needs at least two outputs")
    total = outputs[0].new_zeros(())
    for k in range(len(outputs)):
        for l in range(k + 1, len(outputs)):
            total = total + _diff(outputs[k], outputs[l], flavor)
    return total


def loss_terms(outputs, targets, cfg: LossConfig):
    cfg = _enum(LossConfig, cfg)
    rec = rec_term(outputs, targets, cfg.rec_flavor)
    if cfg.con_flavor is None or len(outputs) < 2:
        con = rec.new_zeros(())
    else:
        con = con_term(outputs, cfg.con_flavor)
    return rec + con, rec, con


def _t(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    arr = x.pixels if isinstance(x, Image) else np.asarray(x, dtype=np.float64)
    return torch.tensor(np.array(arr, dtype=np.float64))


def _variant_list(variants) -> list:
    return list(variants.variants) if isinstance(variants, VariantSet) else list(variants)


def loss_rec(outputs, variants, flavor: str = "mse") -> float:
    return float(rec_term([_t(o) for o in outputs], [_t(v) for v in _variant_list(variants)], flavor))


def loss_con(outputs, flavor: str = "l1") -> float:
    return float(con_term([_t(o) for o in outputs], flavor))


def total_loss(outputs, variants, cfg: LossConfig = LossConfig.MSE_L1) -> float:
    total, _, _ = loss_terms([_t(o) for o in outputs], [_t(v) for v in _variant_list(variants)], cfg)
    return float(total)


def loss_n2c(output, clean) -> float:
    return float(_diff(_t(output), _t(clean), "mse"))


def loss_n2n(output, other_noisy, seed: Optional[int] = None, other_seed: Optional[int] = None) -> float:
    if seed is not None and other_seed is not None and seed == other_seed:
        warnings.warn("observations not independent: both noisy realizations share a seed",
                      RuntimeWarning, stacklevel=2)
    return float(_diff(_t(output), _t(other_noisy), "mse"))


# ------------------------------------------------------------------ optimizer

@dataclass
class AdamState:
    m: List[torch.Tensor]
    v: List[torch.Tensor]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[torch.Tensor]) -> "AdamState":
        return cls([torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params])


def optimizer_step(params: Sequence[torch.Tensor], grads: Sequence[Optional[torch.Tensor]],
                   state: AdamState, cfg: TrainConfig, names: Optional[Sequence[str]] = None) -> AdamState:
    """In-place Adam update with bias correction; returns the advanced state."""
    if len(params) != len(grads):
        raise ValueError("gradient list does not match parameter list")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)}")
        if not torch.isfinite(g).all():
            label = names[i] if names else f"#{i}"
            raise FloatingPointError(f"non-finite gradient in parameter block {label}")
    state.step += 1
    b1, b2, eps, lr = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.lr
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            if g is None:
                continue
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            denom = (v / bc2).sqrt_().add_(eps)
            p.addcdiv_(m, denom, value=-lr / bc1)
    return state


# ------------------------------------------------------------------- training

def _stack(images: Sequence[Image]) -> np.ndarray:
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ImageError(f"training images must share dimensions, got {sorted(shapes)}")
    return np.stack([im.pixels for im in images])


def build_inputs(noisy: Sequence[Image], cfg: TrainConfig, clean=None, other=None) -> tuple:
    """(inputs (N, K, H, W), targets (N, 1, H, W) or None) as float32 tensors."""
    if cfg.mode is TrainMode.SPECKLE2SELF:
        arr = np.stack([msp_variants(im, cfg.branches.scales, cfg.interp).stack() for im in noisy])
        return torch.from_numpy(arr.astype(np.float32)), None
    partner = clean if cfg.mode is TrainMode.NOISE2TRUE else other
    if partner is None or len(partner) != len(noisy):
        raise ValueError(f"mode {cfg.mode.value} requires one paired image per noisy input")
    x = _stack(noisy)[:, None]
    y = _stack(partner)[:, None]
    if x.shape != y.shape:
        raise ImageError("paired images must match the noisy inputs in size")
    return torch.from_numpy(x.astype(np.float32)), torch.from_numpy(y.astype(np.float32))


def batch_loss(model: S2SNet, xb: torch.Tensor, yb: Optional[torch.Tensor], cfg: TrainConfig):
    if cfg.mode is TrainMode.SPECKLE2SELF:
        targets = [xb[:, k:k + 1] for k in range(xb.shape[1])]
        outputs = [model(t, cfg.branches.encoder_for(k)) for k, t in enumerate(targets)]
        return loss_terms(outputs, targets, cfg.loss)
    out = model(xb, 0)
    rec = _diff(out, yb, "mse")
    return rec, rec, rec.new_zeros(())


def train(model: S2SNet, dataset: Sequence[Image], cfg: TrainConfig, clean=None, other=None,
          checkpoint_dir=None, progress=None):
    """Optimise ``model`` in place on ``dataset``; returns (model, TrainHistory)."""
    if len(dataset) == 0:
        raise ValueError("empty training set")
    need = cfg.branches.n_encoders if cfg.mode is TrainMode.SPECKLE2SELF else 1
    if model.arch.n_branches < need:
        raise ValueError(f"{cfg.branches.value} needs {need} encoders, model has {model.arch.n_branches}")
    stride = model.arch.stride
    if dataset[0].height % stride or dataset[0].width % stride:
        raise ImageError(f"training images must be padded to multiples of {stride}")
    torch.set_num_threads(threads_from_env())
    x, y = build_inputs(dataset, cfg, clean, other)
    params = list(model.parameters())
    names = [n for n, _ in model.named_parameters()]
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(cfg.seed)
    hist = TrainHistory(metadata={"config": cfg.to_dict(), "arch": model.arch.to_dict(),
                                  "model_seed": model.seed, "n_images": len(dataset)})
    ckdir = Path(checkpoint_dir) if checkpoint_dir else None
    n = x.shape[0]
    model.train()
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        sums = np.zeros(3)
        steps = 0
        for s in range(0, n, cfg.batch_size):
            idx = torch.from_numpy(order[s:s + cfg.batch_size])
            xb = x[idx]
            yb = y[idx] if y is not None else None
            total, rec, con = batch_loss(model, xb, yb, cfg)
            if not torch.isfinite(total):
                path = None
                if ckdir is not None:
                    path = ckdir / "last_good.s2s"
                    save_checkpoint(model, path)
                raise TrainingAborted(f"non-finite loss at epoch {epoch}", hist, path)
            grads = torch.autograd.grad(total, params, allow_unused=True)
            try:
                optimizer_step(params, grads, state, cfg, names)
            except FloatingPointError as exc:
                path = None
                if ckdir is not None:
                    path = ckdir / "last_good.s2s"
                    save_checkpoint(model, path)
                raise TrainingAborted(str(exc), hist, path) from exc
            sums += [total.item(), rec.item(), con.item()]
            steps += 1
        mean = sums / steps
        hist.records.append(EpochRecord(epoch, mean[0], mean[1], mean[2], time.perf_counter() - t0))
        if progress is not None:
            progress(hist.records[-1])
        if ckdir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_checkpoint(model, ckdir / f"epoch_{epoch:05d}.s2s")
    model.eval()
    return model, hist


# ----------------------------------------------------------------- inference

def pad_to_stride(arr: np.ndarray, stride: int) -> tuple:
    h, w = arr.shape
    ph = (-h) % stride
    pw = (-w) % stride
    mode = "reflect" if (ph < h and pw < w) else "symmetric"
    return np.pad(arr, ((0, ph), (0, pw)), mode=mode), (h, w)


def denoise(model: S2SNet, img: Image) -> Image:
    padded, (h, w) = pad_to_stride(img.pixels, model.arch.stride)
    p = next(model.parameters())
    xt = torch.as_tensor(padded, dtype=p.dtype)[None, None]
    with torch.no_grad():
        out = model(xt, 0)[0, 0].double().numpy()
    return Image(np.clip(out[:h, :w], 0.0, 1.0), img.spacing)


def denoise_many(model: S2SNet, images: Sequence[Image], batch: int = 16) -> List[Image]:
    return [denoise(model, im) for im in images]


# ------------------------------------------------------------------ ablations

def train_and_eval(train_noisy, test_noisy, test_clean, cfg: TrainConfig, arch: ArchConfig = ArchConfig(),
                   model_seed: int = 0, train_clean=None, train_other=None, progress=None) -> dict:
    """Train one configuration from scratch and score it on a held-out set."""
    from .evalx import glcm_homogeneity, psnr, ssim

    model = build_model(cfg.arch_for(arch), model_seed)
    t0 = time.perf_counter()
    model, hist = train(model, train_noisy, cfg, clean=train_clean, other=train_other, progress=progress)
    seconds = time.perf_counter() - t0
    outs = denoise_many(model, test_noisy)
    return {
        "model": model, "history": hist, "outputs": outs, "train_seconds": seconds,
        "ssim": float(np.mean([ssim(o, c) for o, c in zip(outs, test_clean)])),
        "psnr": float(np.mean([psnr(o, c) for o, c in zip(outs, test_clean)])),
        "homogeneity": float(np.mean([glcm_homogeneity(o) for o in outs])),
    }


ABLATION_SUITES = {
    "loss": [("loss", v) for v in LossConfig],
    "interp": [("interp", v) for v in InterpKind],
    "scales": [("branches", v) for v in BranchConfig],
}


def run_ablation(suite: str, train_noisy, test_noisy, test_clean, base: TrainConfig,
                 arch: ArchConfig = ArchConfig(), model_seed: int = 0, progress=None) -> List[dict]:
    """Train every member of an ablation suite identically; rows sorted by mean SSIM."""
    if suite not in ABLATION_SUITES:
        raise ConfigError(f"unknown ablation suite {suite!r}; choose from {sorted(ABLATION_SUITES)}")
    rows = []
    for fieldname, value in ABLATION_SUITES[suite]:
        cfg = base.replace(**{fieldname: value})
        res = train_and_eval(train_noisy, test_noisy, test_clean, cfg, arch, model_seed, progress=progress)
        rows.append({"suite": suite, "setting": value.value, "ssim": res["ssim"], "psnr": res["psnr"],
                     "homogeneity": res["homogeneity"], "train_seconds": res["train_seconds"]})
    rows.sort(key=lambda r: -r["ssim"])
    return rows
