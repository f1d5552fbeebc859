"""Command-line entry point.

    edgeformer generate  --out runs/a --seed 1
    edgeformer pretrain  --out runs/a --set epochs=2
    edgeformer finetune  --out runs/a --set pretrained=runs/a/edge_mae.ckpt
    edgeformer baseline  --out runs/a --set model=convkb
    edgeformer evaluate  --out runs/a --set checkpoint=runs/a/edge_transformer.ckpt
    edgeformer gradcheck

Configuration is a flat ``key = value`` file (``--config``) overridden by
repeated ``--set key=value`` and ``--seed``. Reports and traces go to
stdout, logs to stderr. Exit status: 0 success, 1 validation error,
2 I/O or format error; failures print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from .baselines import BASELINES, init_baseline, intimacy_scores, predict_baseline
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ModelConfig, TrainConfig, parse_ratio
from .data import DatasetSpec, EdgeDataset, Standardizer, generate_dataset, read_csv, split_dataset, write_csv
from .evaluation import evaluate_scores
from .exceptions import EdgeformerError, FormatError, ValidationError
from .mae import init_mae_params, mae_forward, sample_masks, transfer_encoder
from .params import ParamStore
from .training import baseline_loop, finetune_loop, init_rng, pretrain_loop
from .transformer import edge_logits, init_edge_transformer, predict_logits

logger = logging.getLogger("edgeformer")

COMMANDS = ("generate", "pretrain", "finetune", "baseline", "evaluate", "gradcheck")
GRADCHECK_TOLERANCE = 1e-4


def _int_or_none(v: str):
    return None if v.lower() in ("", "none") else int(v)


def _float_or_none(v: str):
    return None if v.lower() in ("", "none") else float(v)


def _str_or_none(v: str):
    return None if v.lower() in ("", "none") else v


def _candidates(v: str):
    if "-" in v.strip().lstrip("-"):
        lo, hi = v.split("-", 1)
        return (int(lo), int(hi))
    return int(v)


# key -> (parser, default). Closed schema: anything else is rejected.
SCHEMA: dict[str, tuple] = {
    "seed": (int, 0),
    # model
    "d_model": (int, 48),
    "n_heads": (int, 3),
    "n_encoder_layers": (int, 2),
    "n_decoder_layers": (int, 1),
    "ffn_dim": (_int_or_none, None),
    "mask_ratio": (parse_ratio, 1.0 / 3.0),
    "dropout": (float, 0.0),
    # optimisation (None -> per-mode default)
    "learning_rate": (_float_or_none, None),
    "weight_decay": (float, 0.05),
    "batch_size": (int, 256),
    "epochs": (_int_or_none, None),
    "max_steps": (_int_or_none, None),
    "clip_norm": (_float_or_none, 1.0),
    "beta1": (float, 0.9),
    "beta2": (float, 0.999),
    "adam_eps": (float, 1e-8),
    "standardize": (lambda v: v.lower() in ("1", "true", "yes"), True),
    # synthetic data
    "n_head_nodes": (int, 1000),
    "candidates_per_head": (_candidates, 10),
    "dim_head_features": (int, 16),
    "dim_edge_features": (int, 4),
    "dim_tail_features": (int, 16),
    "planted_bias": (float, -2.0),
    "signal": (float, 2.5),
    "intimacy_weight": (float, 0.75),
    "unlabeled_fraction": (float, 0.5),
    "split_ratio": (float, 0.8),
    "latent_dim": (int, 0),
    "homophily": (float, 0.6),
    "feature_noise": (float, 1.0),
    # paths and model selection
    "data_dir": (_str_or_none, None),
    "train_path": (_str_or_none, None),
    "val_path": (_str_or_none, None),
    "unlabeled_path": (_str_or_none, None),
    "checkpoint": (_str_or_none, None),
    "pretrained": (_str_or_none, None),
    "model": (str, "edge_transformer"),
    "intimacy_index": (int, 0),
    "gradcheck_step": (float, 1e-5),
}


@dataclass
class RunConfig:
    values: dict
    out: Path

    def __getitem__(self, key):
        return self.values[key]

    def canonical(self) -> str:
        return json.dumps(self.values, sort_keys=True, separators=(",", ":"), default=list)

    def model_config(self, widths) -> ModelConfig:
        v = self.values
        return ModelConfig(d_model=v["d_model"], n_heads=v["n_heads"], n_encoder_layers=v["n_encoder_layers"],
                           n_decoder_layers=v["n_decoder_layers"], ffn_dim=v["ffn_dim"],
                           dim_head_features=widths[0], dim_edge_features=widths[1],
                           dim_tail_features=widths[2], mask_ratio=v["mask_ratio"], dropout=v["dropout"])

    def train_config(self, mode: str) -> TrainConfig:
        v = self.values
        base = TrainConfig.pretrain_defaults() if mode == "pretrain" else TrainConfig.finetune_defaults(mode=mode)
        return base.replace(learning_rate=v["learning_rate"] or base.learning_rate,
                            epochs=v["epochs"] or base.epochs, weight_decay=v["weight_decay"],
                            batch_size=v["batch_size"], seed=v["seed"], betas=(v["beta1"], v["beta2"]),
                            eps=v["adam_eps"], clip_norm=v["clip_norm"], max_steps=v["max_steps"])

    def dataset_spec(self) -> DatasetSpec:
        v = self.values
        return DatasetSpec(n_head_nodes=v["n_head_nodes"], candidates_per_head=v["candidates_per_head"],
                           dim_head_features=v["dim_head_features"], dim_edge_features=v["dim_edge_features"],
                           dim_tail_features=v["dim_tail_features"], bias=v["planted_bias"], signal=v["signal"],
                           intimacy_weight=v["intimacy_weight"], unlabeled_fraction=v["unlabeled_fraction"],
                           split_ratio=v["split_ratio"], seed=v["seed"], latent_dim=v["latent_dim"],
                           homophily=v["homophily"], feature_noise=v["feature_noise"])

    def data_path(self, key: str, filename: str) -> Path:
        if self.values[key]:
            return Path(self.values[key])
        return Path(self.values["data_dir"] or self.out) / filename


def parse_config_text(text: str, origin: str = "config") -> dict[str, str]:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{origin}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        raw[key] = value
    return raw


def build_run_config(config_path: str | None, overrides: list[str], seed: int | None, out: str) -> RunConfig:
    raw: dict[str, str] = {}
    if config_path:
        raw.update(parse_config_text(Path(config_path).read_text(encoding="utf-8"), config_path))
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        raw[key] = value
    if seed is not None:
        raw["seed"] = str(seed)
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ValidationError(f"unknown config keys: {unknown}")
    values = {k: default for k, (_, default) in SCHEMA.items()}
    for key, text in raw.items():
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(text)
        except (ValueError, EdgeformerError) as exc:
            raise ValidationError(f"bad value for {key}: {text!r} ({exc})") from None
    return RunConfig(values, Path(out))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

class _Inputs:
    """Files a command read, hashed into its manifest."""

    def __init__(self):
        self.paths: list[Path] = []

    def csv(self, path: Path) -> EdgeDataset:
        data = read_csv(path)
        self.paths.append(Path(path))
        return data

    def checkpoint(self, path) -> Checkpoint:
        ckpt = load_checkpoint(path)
        self.paths.append(Path(path))
        return ckpt


def _emit(line: str) -> None:
    sys.stdout.write(line + "\n")
    sys.stdout.flush()


def _emit_trace(trace: list[float]) -> None:
    for epoch, loss in enumerate(trace, start=1):
        _emit(json.dumps({"epoch": epoch, "loss": loss}, separators=(",", ":")))


def cmd_generate(cfg: RunConfig, inputs: _Inputs) -> list[Path]:
    spec = cfg.dataset_spec()
    data = generate_dataset(spec)
    train, val = split_dataset(data.labeled(), spec.split_ratio, spec.seed)
    paths = [cfg.out / "train.csv", cfg.out / "val.csv"]
    write_csv(train, paths[0])
    write_csv(val, paths[1])
    unlabeled = data.unlabeled()
    if len(unlabeled):
        paths.append(cfg.out / "unlabeled.csv")
        write_csv(unlabeled, paths[-1])
    _emit(json.dumps({"train": len(train), "val": len(val), "unlabeled": len(unlabeled)}, separators=(",", ":")))
    return paths


def cmd_pretrain(cfg: RunConfig, inputs: _Inputs) -> list[Path]:
    data = inputs.csv(cfg.data_path("unlabeled_path", "unlabeled.csv"))
    model_config = cfg.model_config(data.widths)
    result = pretrain_loop(data, model_config, cfg.train_config("pretrain"), standardize=cfg["standardize"])
    path = cfg.out / "edge_mae.ckpt"
    save_checkpoint(result.checkpoint, path)
    _emit_trace(result.trace)
    return [path]


def cmd_finetune(cfg: RunConfig, inputs: _Inputs) -> list[Path]:
    data = inputs.csv(cfg.data_path("train_path", "train.csv"))
    init = stats = None
    if cfg["pretrained"]:
        ckpt = inputs.checkpoint(cfg["pretrained"])
        if ckpt.kind != "edge_mae":
            raise ValidationError(f"pretrained checkpoint has kind {ckpt.kind!r}, expected 'edge_mae'")
        model_config = ModelConfig.from_dict(ckpt.model_config)
        init = transfer_encoder(ckpt.params, model_config, init_rng(cfg["seed"]))
        stats = Standardizer.from_dict(ckpt.standardization)
    else:
        model_config = cfg.model_config(data.widths)
    result = finetune_loop(data, model_config, cfg.train_config("finetune"), init=init, standardizer=stats,
                           standardize=cfg["standardize"])
    path = cfg.out / "edge_transformer.ckpt"
    save_checkpoint(result.checkpoint, path)
    _emit_trace(result.trace)
    return [path]


def cmd_baseline(cfg: RunConfig, inputs: _Inputs) -> list[Path]:
    name = cfg["model"]
    data = inputs.csv(cfg.data_path("train_path", "train.csv"))
    model_config = cfg.model_config(data.widths)
    path = cfg.out / f"{name}.ckpt"
    if name == "intimacy":
        intimacy_scores(data.x_edge, cfg["intimacy_index"])
        ckpt = Checkpoint("intimacy", model_config.to_dict(), ParamStore(), None,
                          {"seed": cfg["seed"], "intimacy_index": cfg["intimacy_index"]})
        save_checkpoint(ckpt, path)
        return [path]
    if name not in BASELINES:
        raise ValidationError(f"unknown baseline {name!r}; choose from {('intimacy',) + BASELINES}")
    result = baseline_loop(name, data, model_config, cfg.train_config(name), standardize=cfg["standardize"])
    save_checkpoint(result.checkpoint, path)
    _emit_trace(result.trace)
    return [path]


def _score(kind: str, ckpt: Checkpoint | None, data: EdgeDataset, cfg: RunConfig) -> np.ndarray:
    if kind == "intimacy":
        index = ckpt.metadata.get("intimacy_index", 0) if ckpt else cfg["intimacy_index"]
        return intimacy_scores(data.x_edge, index)
    if ckpt is not None:
        model_config = ModelConfig.from_dict(ckpt.model_config)
        params, stats = ckpt.params, Standardizer.from_dict(ckpt.standardization)
    else:
        model_config = cfg.model_config(data.widths)
        rng = init_rng(cfg["seed"])
        params = init_edge_transformer(model_config, rng) if kind == "edge_transformer" else \
            init_baseline(kind, model_config, rng)
        stats = Standardizer().fit(*data.features) if cfg["standardize"] else Standardizer()
    blocks = stats.transform(*data.features)
    if kind == "edge_transformer":
        return predict_logits(*blocks, params, model_config)
    if kind in BASELINES:
        return predict_baseline(kind, *blocks, params, model_config)
    raise ValidationError(f"cannot evaluate model kind {kind!r}")


def cmd_evaluate(cfg: RunConfig, inputs: _Inputs) -> list[Path]:
    data = inputs.csv(cfg.data_path("val_path", "val.csv"))
    ckpt = inputs.checkpoint(cfg["checkpoint"]) if cfg["checkpoint"] else None
    kind = ckpt.kind if ckpt else cfg["model"]
    if kind == "edge_mae":
        raise ValidationError("an edge_mae checkpoint must be fine-tuned before evaluation")
    report = evaluate_scores(data, _score(kind, ckpt, data, cfg), seed=cfg["seed"], model=kind)
    line = report.to_json()
    path = cfg.out / "report.json"
    path.write_text(line + "\n", encoding="utf-8")
    _emit(line)
    return [path]


def cmd_gradcheck(cfg: RunConfig, inputs: _Inputs) -> list[Path]:
    config = ModelConfig(d_model=8, n_heads=2, n_encoder_layers=1, n_decoder_layers=1, ffn_dim=16,
                         dim_head_features=3, dim_edge_features=2, dim_tail_features=3)
    rng = np.random.default_rng(cfg["seed"])
    xh, xr, xt = rng.normal(size=(1, 3)), rng.normal(size=(1, 2)), rng.normal(size=(1, 3))
    label = np.array([1.0])
    h = cfg["gradcheck_step"]
    et = init_edge_transformer(config, rng)
    err_et = ad.grad_check(lambda p: ad.bce_with_logits(edge_logits(xh, xr, xt, p, config), label), et, h)
    mae = init_mae_params(config, rng)
    masks = sample_masks(1, config.mask_ratio, rng)
    err_mae = ad.grad_check(lambda p: mae_forward(xh, xr, xt, masks, p, config).loss, mae, h)
    worst = max(err_et, err_mae)
    _emit(json.dumps({"edge_transformer": err_et, "edge_mae": err_mae, "max": worst,
                      "tolerance": GRADCHECK_TOLERANCE}, separators=(",", ":")))
    if worst >= GRADCHECK_TOLERANCE:
        raise ValidationError(f"gradient check failed: max relative error {worst:.3g}")
    return []


HANDLERS = {
    "generate": cmd_generate,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "baseline": cmd_baseline,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


# ---------------------------------------------------------------------------
# plumbing
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(cfg: RunConfig, command: str, artifacts: list[Path], inputs: list[Path] = ()) -> Path:
    manifest = {
        "command": command,
        "config": json.loads(cfg.canonical()),
        "config_hash": hashlib.sha256(cfg.canonical().encode("utf-8")).hexdigest(),
        "seed": cfg["seed"],
        "inputs": {str(p): _sha256(p) for p in inputs},
        "artifacts": {p.name: _sha256(p) for p in artifacts},
    }
    path = cfg.out / f"manifest.{command}.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return path


@contextlib.contextmanager
def output_lock(out: Path):
    lock = out / ".edgeformer.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OSError(f"output directory {out} is locked by another run ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            lock.unlink()


def _thread_limit() -> int | None:
    value = os.environ.get("EDGEFORMER_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        raise ValidationError(f"EDGEFORMER_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise ValidationError("EDGEFORMER_THREADS must be >= 1")
    return n


class _Parser(argparse.ArgumentParser):
    # usage errors become the same one-line JSON failure as everything else
    def error(self, message):
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="edgeformer", description="Edge Transformer / Edge MAE toolkit")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    parser.add_argument("--seed", type=int, help="shortcut for --set seed=N")
    parser.add_argument("--out", default=".", help="output directory (default: current directory)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def _fail(exc: BaseException, code: int) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "exit": code, "message": str(exc)}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ValidationError as exc:
        return _fail(exc, 1)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_run_config(args.config, args.overrides, args.seed, args.out)
        threads = _thread_limit()
        cfg.out.mkdir(parents=True, exist_ok=True)
        with output_lock(cfg.out), threadpool_limits(limits=threads):
            inputs = _Inputs()
            artifacts = HANDLERS[args.command](cfg, inputs)
            write_manifest(cfg, args.command, artifacts, inputs.paths)
    except (FormatError, OSError) as exc:
        return _fail(exc, 2)
    except (ValidationError, EdgeformerError) as exc:
        return _fail(exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
