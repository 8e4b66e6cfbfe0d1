"""Command-line entry point: simulate, train, denoise, eval, analyze, ablate, baseline, replay.

Exit codes: 0 success, 2 config error, 3 training abort, 4 artifact-format error.
Every command owns its ``--out`` run directory (guarded by a lock file) and
leaves exactly one ``run_manifest.json`` there.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .imgcore import Image, ImageError, InterpKind, extract_patch, load_image, save_image
from .simulate import ConfigError, SimConfig, file_sha256, random_phantom, write_dataset

log = logging.getLogger("usdespeckle")

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_FORMAT = 0, 2, 3, 4
MANIFEST = "run_manifest.json"
LOCK = ".s2s.lock"
# columns that legitimately differ between replays (timings)
VOLATILE_COLUMNS = {"history.csv": {"wall_seconds"}, "ablation.csv": {"train_seconds"}}

EVAL_COLUMNS = ["method", "image", "reference", "psnr", "ssim", "homogeneity", "status"]
ABLATION_COLUMNS = ["rank", "suite", "setting", "ssim", "psnr", "homogeneity", "train_seconds", "winner"]
FREQ_COLUMNS = ["image", "operator", "low_mean", "high_mean", "separation"]
SVD_COLUMNS = ["image", "patch_x", "patch_z", "patch_size", "index", "singular_value", "energy_top5"]


# ------------------------------------------------------------------ plumbing

@dataclasses.dataclass
class RunManifest:
    command: List[str]
    config: Dict
    seeds: Dict
    artifacts: Dict[str, str] = dataclasses.field(default_factory=dict)
    wall_seconds: float = 0.0
    version: str = __version__
    extra: Dict = dataclasses.field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "RunManifest":
        try:
            data = json.loads(Path(path).read_text())
            return cls(**data)
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"cannot read manifest {path}: {exc}") from exc


class RunDir:
    """Exclusive ownership of a run directory for the lifetime of one command."""

    def __init__(self, path):
        self.path = Path(path)

    def __enter__(self):
        self.path.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path / LOCK, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(f"run directory {self.path} is locked by another command "
                              f"(remove {LOCK} if stale)") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        try:
            (self.path / LOCK).unlink()
        except FileNotFoundError:
            pass
        return False


def hash_artifacts(run_dir: Path) -> Dict[str, str]:
    out = {}
    for p in sorted(run_dir.rglob("*")):
        if p.is_file() and p.name not in (MANIFEST, LOCK):
            out[p.relative_to(run_dir).as_posix()] = file_sha256(p)
    return out


def finish(run_dir: Path, manifest: RunManifest, t0: float) -> None:
    manifest.wall_seconds = round(time.perf_counter() - t0, 3)
    manifest.artifacts = hash_artifacts(run_dir)
    (run_dir / MANIFEST).write_text(manifest.to_json())


def append_csv(path: Path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    """Append rows, writing the header only when the file is new."""
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        if new:
            w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in columns})


def _fmt(v):
    if isinstance(v, float):
        if np.isinf(v):
            return "inf"
        if np.isnan(v):
            return "nan"
        return f"{v:.6f}"
    return v


def load_toml(path) -> dict:
    if path is None:
        return {}
    try:
        import tomllib  # type: ignore
    except ModuleNotFoundError:  # python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


def _section(conf: dict, name: str) -> dict:
    sec = conf.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section [{name}] must be a table")
    return dict(sec)


def _check_sections(conf: dict, allowed: Sequence[str]) -> None:
    unknown = set(conf) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}; allowed {list(allowed)}")


def list_images(path) -> List[Path]:
    p = Path(path)
    if p.is_file():
        return [p]
    if not p.is_dir():
        raise FileNotFoundError(f"no such file or directory: {p}")
    files = sorted(q for q in p.iterdir() if q.suffix.lower() in (".png", ".pgm", ".pnm"))
    if not files:
        raise FileNotFoundError(f"no PNG/PGM images in {p}")
    return files


def load_dataset(path) -> dict:
    d = Path(path)
    if not d.is_dir():
        raise FileNotFoundError(f"dataset directory {d} does not exist")
    out = {}
    for key in ("noisy", "clean", "noisy2"):
        files = sorted(d.glob(f"{key}_[0-9][0-9][0-9][0-9].png"))
        out[key] = [load_image(f) for f in files]
    if not out["noisy"]:
        raise FileNotFoundError(f"no noisy_%04d.png images in {d}")
    return out


# ------------------------------------------------------------------ commands

def cmd_simulate(args) -> int:
    conf = load_toml(args.config)
    _check_sections(conf, ["sim", "phantom"])
    sim = _section(conf, "sim")
    if "tilt_angles" in sim:
        sim["tilt_angles"] = tuple(sim["tilt_angles"])
    cfg = SimConfig.from_dict(sim)
    ph = _section(conf, "phantom")
    names = None
    if args.targets:
        files = list_images(args.targets)
        targets = [load_image(f) for f in files]
        names = [f.name for f in files]
    else:
        n = int(args.random if args.random is not None else ph.get("count", 0))
        if n < 1:
            raise ConfigError("give --targets DIR or a positive --random N / [phantom] count")
        rng = np.random.default_rng(int(ph.get("seed", args.seed)))
        size = int(ph.get("size", cfg.grid_w))
        texture = float(ph.get("texture", 0.08))
        targets = [random_phantom(rng, size, texture) for _ in range(n)]
    out = Path(args.out)
    t0 = time.perf_counter()
    with RunDir(out):
        ds = write_dataset(targets, cfg, out, args.seed, names,
                           pair_seed_offset=args.pair_offset, write_manifest=False)
        seeds = {"base_seed": args.seed, "per_image": [r["seed"] for r in ds["images"]]}
        if args.pair_offset is not None:
            seeds["pair_offset"] = args.pair_offset
        man = RunManifest(command=list(args.argv), config={"sim": cfg.to_dict(), "phantom": ph},
                          seeds=seeds, extra={"dataset": ds["images"]})
        finish(out, man, t0)
    print(f"wrote {len(targets)} pairs to {out}")
    return EXIT_OK


def _train_config(args, conf):
    from .net import DESK_ARCH, FULL_SCALE_ARCH, ArchConfig
    from .train import TrainConfig

    tr = _section(conf, "train")
    arch_d = _section(conf, "arch")
    if args.profile == "paper":
        base, arch = TrainConfig(), FULL_SCALE_ARCH
    else:
        base, arch = TrainConfig.desk(), DESK_ARCH
    merged = base.to_dict()
    merged.update(tr)
    for key in ("mode", "loss", "branches", "interp", "epochs", "batch_size", "lr", "seed", "checkpoint_every"):
        v = getattr(args, key, None)
        if v is not None:
            merged[key] = v
    cfg = TrainConfig.from_dict(merged)
    ad = arch.to_dict()
    ad.update(arch_d)
    try:
        arch = ArchConfig.from_dict(ad)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [arch]: {exc}") from exc
    return cfg, cfg.arch_for(arch)


def cmd_train(args) -> int:
    from .net import build_model, save_checkpoint
    from .train import TrainingAborted, TrainMode, train

    conf = load_toml(args.config)
    _check_sections(conf, ["train", "arch"])
    cfg, arch = _train_config(args, conf)
    data = load_dataset(args.data)
    clean = other = None
    if cfg.mode is TrainMode.NOISE2TRUE:
        clean = data["clean"]
    elif cfg.mode is TrainMode.NOISE2NOISE:
        other = data["noisy2"]
        if not other:
            raise ConfigError("noise2noise needs noisy2_%04d.png partners (simulate --pair-offset)")
    out = Path(args.out)
    t0 = time.perf_counter()
    with RunDir(out):
        model = build_model(arch, args.model_seed)
        man = RunManifest(command=list(args.argv), config={"train": cfg.to_dict(), "arch": arch.to_dict()},
                          seeds={"train_seed": cfg.seed, "model_seed": args.model_seed},
                          extra={"data": str(Path(args.data))})

        def progress(rec):
            if args.verbose:
                print(f"epoch {rec.epoch} loss {rec.total_loss:.6f} rec {rec.rec_loss:.6f} con {rec.con_loss:.6f}")

        try:
            model, hist = train(model, data["noisy"], cfg, clean=clean, other=other,
                                checkpoint_dir=out, progress=progress)
        except TrainingAborted as exc:
            (out / "history.csv").write_text(exc.history.to_csv())
            man.extra["aborted"] = str(exc)
            finish(out, man, t0)
            print(f"training aborted: {exc}; last good checkpoint {exc.checkpoint}", file=sys.stderr)
            return EXIT_ABORT
        save_checkpoint(model, out / "final.s2s")
        (out / "history.csv").write_text(hist.to_csv())
        finish(out, man, t0)
    print(f"final loss {hist.records[-1].total_loss:.6f}; checkpoint {out / 'final.s2s'}")
    return EXIT_OK


def cmd_denoise(args) -> int:
    from .net import load_checkpoint
    from .train import denoise

    expect = None
    if args.config:
        from .net import ArchConfig
        conf = load_toml(args.config)
        if "arch" in conf:
            try:
                expect = ArchConfig.from_dict(_section(conf, "arch"))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid [arch]: {exc}") from exc
    model = load_checkpoint(args.checkpoint, expect)
    files = list_images(args.input)
    out = Path(args.out)
    t0 = time.perf_counter()
    with RunDir(out):
        for f in files:
            save_image(denoise(model, load_image(f)), out / (f.stem + ".png"))
        man = RunManifest(command=list(args.argv), config={"arch": model.arch.to_dict()},
                          seeds={"model_seed": model.seed},
                          extra={"checkpoint_sha256": file_sha256(args.checkpoint),
                                 "inputs": [f.name for f in files]})
        finish(out, man, t0)
    print(f"denoised {len(files)} image(s) into {out}")
    return EXIT_OK


def _reference_for(pred: Path, ref_root: Path) -> Path:
    if ref_root.is_file():
        return ref_root
    # a dataset directory pairs noisy_XXXX with clean_XXXX
    for prefix in ("noisy2_", "noisy_"):
        if pred.name.startswith(prefix):
            clean = ref_root / ("clean_" + pred.name[len(prefix):])
            if clean.exists():
                return clean
    return ref_root / pred.name


def eval_rows(preds: Sequence[Path], ref_root: Path, method: str) -> List[dict]:
    from .evalx import evaluate_pair, format_metric

    rows = []
    for p in preds:
        ref = _reference_for(p, ref_root)
        row = {"method": method, "image": p.name, "reference": ref.name}
        try:
            m = evaluate_pair(load_image(p), load_image(ref))
            row.update(psnr=format_metric(m["psnr"]), ssim=format_metric(m["ssim"]),
                       homogeneity=format_metric(m["homogeneity"]), status="ok")
        except (ImageError, FileNotFoundError) as exc:
            # flag the row and keep going
            row.update(psnr="", ssim="", homogeneity="", status=f"error: {exc}")
        rows.append(row)
    return rows


def cmd_eval(args) -> int:
    preds = list_images(args.pred)
    ref_root = Path(args.ref)
    if not ref_root.exists():
        raise FileNotFoundError(f"reference {ref_root} does not exist")
    out = Path(args.out)
    t0 = time.perf_counter()
    with RunDir(out):
        rows = eval_rows(preds, ref_root, args.method)
        append_csv(out / "metrics.csv", EVAL_COLUMNS, rows)
        finish(out, RunManifest(list(args.argv), {"method": args.method}, {}), t0)
    bad = sum(r["status"] != "ok" for r in rows)
    print(f"evaluated {len(rows)} image(s), {bad} flagged")
    return EXIT_OK


def _band_png(arr: np.ndarray) -> Image:
    lo, hi = float(arr.min()), float(arr.max())
    scaled = (arr - lo) / (hi - lo) if hi > lo else np.zeros_like(arr)
    return Image(scaled)


def _write_matrix(path: Path, mat: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"v{j}" for j in range(mat.shape[1])])
        for row in mat:
            w.writerow([_fmt(float(v)) for v in row])


def cmd_analyze(args) -> int:
    from .evalx import singular_spectrum, spectral_energy_topk
    from .msp import band_split, cross_scale_corr, default_mask_half_width, lpf_variants, msp_variants

    files = list_images(args.input)
    out = Path(args.out)
    t0 = time.perf_counter()
    with RunDir(out):
        if args.kind == "freq":
            scales = tuple(float(s) for s in args.scales.split(","))
            ks = tuple(int(k) for k in args.lpf.split(","))
            rows = []
            for f in files:
                img = load_image(f)
                m = args.mask_half_width or default_mask_half_width(img.width, img.height)
                for name, vs in (("msp", msp_variants(img, scales, args.interp)), ("lpf", lpf_variants(img, ks))):
                    rep = cross_scale_corr(vs, m)
                    _write_matrix(out / f"{f.stem}_{name}_low_corr.csv", rep.low_corr)
                    _write_matrix(out / f"{f.stem}_{name}_high_corr.csv", rep.high_corr)
                    for i, v in enumerate(vs.variants):
                        bp = band_split(v, m)
                        save_image(_band_png(bp.low), out / f"{f.stem}_{name}{i}_low.png")
                        save_image(_band_png(bp.high), out / f"{f.stem}_{name}{i}_high.png")
                    rows.append({"image": f.name, "operator": name, "low_mean": rep.low_mean,
                                 "high_mean": rep.high_mean, "separation": rep.low_mean - rep.high_mean})
            append_csv(out / "freq_summary.csv", FREQ_COLUMNS, rows)
            config = {"scales": scales, "lpf": ks, "interp": InterpKind.parse(args.interp).value,
                      "mask_half_width": args.mask_half_width}
        else:
            rows = []
            for f in files:
                img = load_image(f)
                n = args.patch
                x0 = args.x if args.x is not None else (img.width - n) // 2
                z0 = args.z if args.z is not None else (img.height - n) // 2
                sv = singular_spectrum(extract_patch(img, x0, z0, n, n))
                top = spectral_energy_topk(sv, 5)
                for i, s in enumerate(sv.values):
                    rows.append({"image": f.name, "patch_x": x0, "patch_z": z0, "patch_size": n,
                                 "index": i, "singular_value": float(s), "energy_top5": top})
            append_csv(out / "svd_spectra.csv", SVD_COLUMNS, rows)
            config = {"patch": args.patch, "x": args.x, "z": args.z}
        finish(out, RunManifest(list(args.argv), config, {}), t0)
    print(f"analyzed {len(files)} image(s) into {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .train import run_ablation

    conf = load_toml(args.config)
    _check_sections(conf, ["train", "arch"])
    cfg, arch = _train_config(args, conf)
    trn = load_dataset(args.data)
    tst = load_dataset(args.test)
    if len(tst["clean"]) != len(tst["noisy"]):
        raise ConfigError("test set needs one clean_%04d.png per noisy image")
    out = Path(args.out)
    t0 = time.perf_counter()
    with RunDir(out):
        rows = run_ablation(args.suite, trn["noisy"], tst["noisy"], tst["clean"], cfg, arch, args.model_seed)
        winner = rows[0]["setting"]
        for i, r in enumerate(rows, 1):
            r.update(rank=i, winner=winner)
        append_csv(out / "ablation.csv", ABLATION_COLUMNS, rows)
        finish(out, RunManifest(list(args.argv), {"train": cfg.to_dict(), "arch": arch.to_dict()},
                                {"train_seed": cfg.seed, "model_seed": args.model_seed}), t0)
    print(f"{args.suite} ablation winner: {winner}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    from .baselines import NlmConfig, SradConfig, nlm, srad

    method = args.method or args.method_opt
    if method not in ("srad", "nlm"):
        raise ConfigError("baseline method must be srad or nlm")
    conf = load_toml(args.config)
    _check_sections(conf, ["srad", "nlm"])
    if method == "srad":
        sec = _section(conf, "srad")
        if "homogeneous_roi" in sec:
            sec["homogeneous_roi"] = tuple(sec["homogeneous_roi"])
        cfg = SradConfig.from_dict(sec)
        fn = srad
    else:
        cfg = NlmConfig.from_dict(_section(conf, "nlm"))
        fn = nlm
    files = list_images(args.input)
    out = Path(args.out)
    t0 = time.perf_counter()
    with RunDir(out):
        outs = []
        for f in files:
            p = out / (f.stem + ".png")
            save_image(fn(load_image(f), cfg), p)
            outs.append(p)
        if args.ref:
            append_csv(out / "metrics.csv", EVAL_COLUMNS, eval_rows(outs, Path(args.ref), method))
        finish(out, RunManifest(list(args.argv), {method: dataclasses.asdict(cfg)}, {}), t0)
    print(f"{method}: filtered {len(files)} image(s) into {out}")
    return EXIT_OK


def _numeric_equal(a: Path, b: Path, volatile: set) -> bool:
    if not volatile:
        return file_sha256(a) == file_sha256(b)
    with open(a) as fa, open(b) as fb:
        ra, rb = list(csv.DictReader(fa)), list(csv.DictReader(fb))
    if len(ra) != len(rb):
        return False
    keys = [k for k in (ra[0].keys() if ra else []) if k not in volatile]
    return all(x[k] == y[k] for x, y in zip(ra, rb) for k in keys)


def cmd_replay(args) -> int:
    """Re-run a manifest's command into a fresh directory and compare artifacts."""
    man = RunManifest.load(args.manifest)
    argv = list(man.command)
    if "--out" not in argv:
        raise ConfigError("manifest command has no --out to redirect")
    i = argv.index("--out")
    argv[i + 1] = str(args.out)
    code = main(argv)
    if code != EXIT_OK:
        return code
    new = RunManifest.load(Path(args.out) / MANIFEST)
    src_dir = Path(args.manifest).parent
    mismatched = []
    for name, digest in man.artifacts.items():
        if name not in new.artifacts:
            mismatched.append(name)
        elif new.artifacts[name] != digest:
            vol = VOLATILE_COLUMNS.get(Path(name).name, set())
            if not (vol and _numeric_equal(src_dir / name, Path(args.out) / name, vol)):
                mismatched.append(name)
    extra = sorted(set(new.artifacts) - set(man.artifacts))
    if mismatched or extra:
        print(f"replay differs: {mismatched + extra}", file=sys.stderr)
        return 1
    print(f"replay identical: {len(man.artifacts)} artifact(s)")
    return EXIT_OK


# --------------------------------------------------------------------- parser

def _train_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML file with [train] / [arch] tables")
    p.add_argument("--profile", choices=["desk", "paper"], default="desk")
    p.add_argument("--mode", choices=["speckle2self", "noise2true", "noise2noise"])
    p.add_argument("--loss", choices=["mse_l1", "mse_mse", "l1_l1", "mse_only", "l1_mse"])
    p.add_argument("--branches", choices=["hml", "hl", "ml", "hm", "one"])
    p.add_argument("--interp", choices=["bilinear", "area", "bicubic"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int, help="shuffle seed")
    p.add_argument("--model-seed", dest="model_seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="usdespeckle", description="Self-supervised ultrasound despeckling toolkit")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate clean/noisy B-mode pairs")
    p.add_argument("--targets", help="directory of grayscale target images")
    p.add_argument("--random", type=int, help="generate N random phantoms instead of --targets")
    p.add_argument("--config", help="TOML file with [sim] and [phantom] tables")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pair-offset", dest="pair_offset", type=int,
                   help="also write an independent noisy2 realization with seed offset")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a despeckling network")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    _train_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("denoise", help="denoise an image or a directory of images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="TOML with an [arch] table the checkpoint must match")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("eval", help="PSNR / SSIM / GLCM homogeneity against references")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", default="pred")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="frequency-band correlation or singular spectra")
    p.add_argument("kind", choices=["freq", "svd"])
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scales", default="1.0,0.5,0.25")
    p.add_argument("--interp", default="bilinear", choices=["bilinear", "area", "bicubic"])
    p.add_argument("--lpf", default="1,5,9", help="Gaussian kernel sizes of the low-pass comparison")
    p.add_argument("--mask-half-width", dest="mask_half_width", type=int)
    p.add_argument("--patch", type=int, default=48)
    p.add_argument("--x", type=int)
    p.add_argument("--z", type=int)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("ablate", help="train every member of an ablation suite")
    p.add_argument("suite", choices=["loss", "interp", "scales"])
    p.add_argument("--data", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    _train_options(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("baseline", help="classical SRAD / NLM filters")
    p.add_argument("method", nargs="?", choices=["srad", "nlm"])
    p.add_argument("--method", dest="method_opt", choices=["srad", "nlm"])
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="TOML file with [srad] / [nlm] tables")
    p.add_argument("--ref", help="clean references for a metrics CSV")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("replay", help="re-run a manifest and check byte-identical outputs")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replay)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    from .net import CheckpointError

    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    args.argv = argv
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ImageError as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
