"""Alternating GAN training, checkpoints, evaluation, sequence prediction and ablation grids."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import pickle
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from .age import DEFAULT_MAX_AGE, age_difference_code, cosine_scale, encode_age
from .data import (Corpus, FoldAssignment, TrainingPair, build_pairs, rank_indicators_anova,
                   select_indicators, split_folds)
from .errors import ConfigError, NumericError
from .losses import (TARGET_MODES, LossWeights, adv_loss_d, adv_loss_g, asp_loss, dm_loss_d, dm_loss_g,
                     total_generator_loss)
from .metrics import (CLASS_PAIRS, EvalReport, build_report, classifier_feature_fn, ssim, to_unit,
                      train_feature_classifier)
from .networks import ModelConfig, TGANModels

log = logging.getLogger(__name__)

LOSS_TERMS = ("adv", "asp", "dm")
CKPT_FORMAT = "tgan-checkpoint-v1"
LOG_COLUMNS = ["epoch", "lr", "d_adv", "d_dm", "g_adv", "g_asp", "g_dm", "g_total", "val_ssim"]


def desk_model_config(image_size: int = 64, **overrides) -> ModelConfig:
    """Quarter-width networks that train in minutes on one CPU core, with the input-residual output."""
    base = dict(image_size=image_size, gen_widths=(16, 32, 64, 128), adv_widths=(16, 32, 64, 128),
                ind_widths=(16, 32, 64, 128), fpn_width=32, cond_hidden=128, d_a=32, d_k=32,
                input_residual=True)
    base.update(overrides)
    return ModelConfig(**base)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    lr_init: float = 1e-5
    lr_min: float = 1e-8
    anneal_cycle_epochs: int = 30
    batch_size: int = 16
    alpha: float = 1.0
    beta: float = 100.0
    gamma: float = 1.2
    seed: int = 0
    loss_set: tuple[str, ...] = LOSS_TERMS
    asp_mode: str = "complement"
    target_mode: str = "target"
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    indicators: str = "all"
    k_folds: int = 5
    holdout_fraction: float = 0.1
    split_seed: int = 0
    fold_id: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        terms = tuple(sorted(set(self.loss_set), key=LOSS_TERMS.index)) if set(self.loss_set) <= set(LOSS_TERMS) else None
        if terms is None:
            raise ConfigError(f"loss_set entries must be in {LOSS_TERMS}, got {self.loss_set}")
        if "adv" not in terms:
            raise ConfigError("loss_set must contain adv")
        object.__setattr__(self, "loss_set", terms)
        if self.lr_min > self.lr_init:
            raise ConfigError(f"lr_min {self.lr_min} > lr_init {self.lr_init}")
        if self.asp_mode not in ("literal", "complement"):
            raise ConfigError(f"asp_mode must be literal or complement, got {self.asp_mode!r}")
        if self.target_mode not in TARGET_MODES:
            raise ConfigError(f"target_mode must be one of {TARGET_MODES}, got {self.target_mode!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.anneal_cycle_epochs < 1:
            raise ConfigError("epochs, batch_size and anneal_cycle_epochs must be >= 1")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.gamma)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "model"}
        d["loss_set"] = list(self.loss_set)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        model = ModelConfig.from_dict(d.pop("model", {}))
        if "loss_set" in d:
            d["loss_set"] = tuple(d["loss_set"])
        return cls(model=model, **d)

    def to_lines(self) -> str:
        """Plain key=value rendering (model fields prefixed with ``model.``)."""
        out = []
        for k, v in self.to_dict().items():
            if k == "model":
                for mk, mv in v.items():
                    out.append(f"model.{mk}={_render(mv)}")
            else:
                out.append(f"{k}={_render(v)}")
        return "\n".join(out) + "\n"


def _render(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def parse_config_text(text: str) -> dict:
    """Parse key=value lines (``#`` comments allowed) into a nested override dict."""
    out: dict = {"model": {}}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key.startswith("model."):
            out["model"][key[6:]] = val
        else:
            out[key] = val
    return out


def _coerce(kind, raw: str):
    if kind in (bool, "bool"):
        if raw.lower() not in ("true", "false", "1", "0"):
            raise ConfigError(f"expected true/false, got {raw!r}")
        return raw.lower() in ("true", "1")
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    if kind in (str, "str"):
        return raw
    if "tuple" in str(kind):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        return tuple(int(s) if s.lstrip("-").isdigit() else s for s in items)
    raise ConfigError(f"cannot coerce {raw!r} to {kind}")


def apply_overrides(cfg: TrainConfig, overrides: dict) -> TrainConfig:
    """Apply string-valued overrides (as parsed from a config file or flags)."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    mtypes = {f.name: f.type for f in fields(ModelConfig)}
    top, model = {}, {}
    for k, v in overrides.items():
        if k == "model":
            for mk, mv in v.items():
                if mk not in mtypes:
                    raise ConfigError(f"unknown model config key {mk!r}")
                model[mk] = _coerce(mtypes[mk], mv) if isinstance(mv, str) else mv
            continue
        if k not in types:
            raise ConfigError(f"unknown config key {k!r}")
        top[k] = _coerce(types[k], v) if isinstance(v, str) else v
    try:
        return replace(cfg, model=replace(cfg.model, **model), **top)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# --------------------------------------------------------------------------- schedule


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    t = (epoch % cfg.anneal_cycle_epochs) / cfg.anneal_cycle_epochs
    return cfg.lr_min + 0.5 * (cfg.lr_init - cfg.lr_min) * (1.0 + math.cos(math.pi * t))


# --------------------------------------------------------------------------- tensors


def image_to_tensor(img) -> torch.Tensor:
    """uint8 H x W -> float32 in [-1, 1]."""
    return torch.from_numpy(np.asarray(img, dtype=np.float32) / 127.5 - 1.0)


def tensor_to_uint8(t: torch.Tensor) -> np.ndarray:
    return np.clip(np.round((t.detach().double().numpy() + 1.0) * 127.5), 0, 255).astype(np.uint8)


@dataclass
class PairBatch:
    x: torch.Tensor
    y: torch.Tensor
    diff: torch.Tensor
    scale: dict
    ind: torch.Tensor
    mask: torch.Tensor

    def __len__(self):
        return self.x.shape[0]

    def take(self, idx) -> "PairBatch":
        idx = torch.as_tensor(idx, dtype=torch.long)
        return PairBatch(self.x[idx], self.y[idx], self.diff[idx], {k: v[idx] for k, v in self.scale.items()},
                         self.ind[idx], self.mask[idx])


def pairs_to_batch(pairs: list[TrainingPair], columns: list[int]) -> PairBatch:
    x = torch.stack([image_to_tensor(p.x_i) for p in pairs])[:, None]
    y = torch.stack([image_to_tensor(p.y_j) for p in pairs])[:, None]
    diff = torch.from_numpy(np.stack([p.diff.values for p in pairs]).astype(np.float32))
    scale = {m: torch.tensor([cosine_scale(p.a_i, p.a_j, m) for p in pairs], dtype=torch.float32)
             for m in ("literal", "complement")}
    mask = np.stack([p.target_mask[columns] for p in pairs])
    ind = np.where(mask, np.stack([p.target_indicators[columns] for p in pairs]), 0.0)
    return PairBatch(x, y, diff, scale, torch.from_numpy(ind.astype(np.float32)), torch.from_numpy(mask))


# --------------------------------------------------------------------------- trainer


class Trainer:
    def __init__(self, cfg: TrainConfig, model_cfg: ModelConfig | None = None):
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        self.models = TGANModels(model_cfg or cfg.model)
        betas = (cfg.adam_beta1, cfg.adam_beta2)
        self.opt_g = torch.optim.Adam(self.models.generator.parameters(), lr=cfg.lr_init, betas=betas)
        self.d_params = list(self.models.adv.parameters()) + list(self.models.indicator.parameters())
        self.opt_d = torch.optim.Adam(self.d_params, lr=cfg.lr_init, betas=betas)

    def set_lr(self, lr: float) -> None:
        for opt in (self.opt_g, self.opt_d):
            for group in opt.param_groups:
                group["lr"] = lr

    def d_step(self, b: PairBatch) -> dict:
        """Patch head on real vs generated pairs; indicator head on real targets only."""
        m = self.models
        with torch.no_grad():
            fake = m.generator(b.x, b.diff)
        self.opt_d.zero_grad(set_to_none=True)
        l_adv = adv_loss_d(m.adv(b.x, b.y), m.adv(b.x, fake))
        l_dm = dm_loss_d(m.indicator(b.y), b.ind, b.mask)
        (l_adv + l_dm).backward()
        self.opt_d.step()
        return {"d_adv": l_adv.item(), "d_dm": l_dm.item()}

    def generator_terms(self, b: PairBatch) -> dict:
        cfg, m = self.cfg, self.models
        fake = m.generator(b.x, b.diff)
        terms = {"adv": adv_loss_g(m.adv(b.x, fake))}
        if "asp" in cfg.loss_set:
            ref = b.y if cfg.target_mode == "target" else b.x
            terms["asp"] = asp_loss(fake, ref, b.scale[cfg.asp_mode])
        if "dm" in cfg.loss_set:
            with torch.no_grad():
                pred_real = m.indicator(b.y)
            terms["dm"] = dm_loss_g(m.indicator(fake), pred_real, b.mask)
        return terms

    def g_step(self, b: PairBatch) -> dict:
        for p in self.d_params:
            p.requires_grad_(False)
        try:
            self.opt_g.zero_grad(set_to_none=True)
            terms = self.generator_terms(b)
            zero = torch.zeros(())
            total = total_generator_loss(terms["adv"], terms.get("asp", zero), terms.get("dm", zero),
                                         self.cfg.weights)
            total.backward()
            self.opt_g.step()
        finally:
            for p in self.d_params:
                p.requires_grad_(True)
        out = {f"g_{k}": v.item() for k, v in terms.items()}
        out["g_total"] = total.item()
        return out

    @torch.no_grad()
    def generate(self, b: PairBatch, chunk: int = 64) -> torch.Tensor:
        g = self.models.generator
        return torch.cat([g(b.x[i:i + chunk], b.diff[i:i + chunk]) for i in range(0, len(b), chunk)])


# --------------------------------------------------------------------------- checkpoints


def save_checkpoint(path, models: TGANModels, cfg: TrainConfig, meta: dict) -> Path:
    path = Path(path)
    payload = {
        "format": CKPT_FORMAT,
        "model_config": models.cfg.to_dict(),
        "train_config": cfg.to_dict(),
        "meta": meta,
        "generator": models.generator.state_dict(),
        "adv": models.adv.state_dict(),
        "indicator": models.indicator.state_dict(),
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)
    return path


@dataclass
class Checkpoint:
    models: TGANModels
    train_config: TrainConfig
    meta: dict

    @property
    def model_config(self) -> ModelConfig:
        return self.models.cfg

    @property
    def columns(self) -> list[int]:
        return list(self.meta["indicator_columns"])

    @property
    def folds(self) -> FoldAssignment:
        return FoldAssignment.from_dict(self.meta["folds"])


def load_checkpoint(path, expected: ModelConfig | None = None) -> Checkpoint:
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    except (OSError, RuntimeError, pickle.UnpicklingError, EOFError) as exc:
        raise ConfigError(f"{path}: cannot read checkpoint ({exc})") from exc
    if not isinstance(payload, dict) or payload.get("format") != CKPT_FORMAT:
        raise ConfigError(f"{path}: not a {CKPT_FORMAT} archive")
    cfg = ModelConfig.from_dict(payload["model_config"])
    if expected is not None and expected != cfg:
        diffs = {k: (v, getattr(cfg, k)) for k, v in expected.to_dict().items() if cfg.to_dict()[k] != v}
        raise ConfigError(f"{path}: model config mismatch (expected, stored) = {diffs}")
    models = TGANModels(cfg)
    models.generator.load_state_dict(payload["generator"])
    models.adv.load_state_dict(payload["adv"])
    models.indicator.load_state_dict(payload["indicator"])
    models.eval()
    return Checkpoint(models, TrainConfig.from_dict(payload["train_config"]), payload["meta"])


# --------------------------------------------------------------------------- training


@dataclass
class RunArtifacts:
    run_dir: Path
    log: list[dict]
    best_epoch: int
    best_val_ssim: float
    config: TrainConfig

    @property
    def ckpt_best(self) -> Path:
        return self.run_dir / "ckpt_best"

    @property
    def ckpt_last(self) -> Path:
        return self.run_dir / "ckpt_last"

    @property
    def log_path(self) -> Path:
        return self.run_dir / "log.csv"


def _cell(v) -> str:
    return "" if v is None else repr(float(v))


def resolve_folds(cfg: TrainConfig, corpus: Corpus, folds: FoldAssignment | None) -> FoldAssignment:
    folds = folds or split_folds(corpus, cfg.k_folds, cfg.holdout_fraction, cfg.split_seed)
    known = {s.subject_id for s in corpus.subjects}
    assigned = set(folds.test).union(*map(set, folds.folds))
    if assigned != known:
        raise ConfigError(f"fold assignment does not match corpus ({len(assigned ^ known)} subjects differ)")
    return folds


def train(cfg: TrainConfig, corpus: Corpus, run_dir, fold_id: int | None = None,
          folds: FoldAssignment | None = None) -> RunArtifacts:
    fold_id = cfg.fold_id if fold_id is None else fold_id
    cfg = replace(cfg, fold_id=fold_id)
    folds = resolve_folds(cfg, corpus, folds)
    train_ids, val_ids, _ = folds.partition(fold_id)
    train_corpus = corpus.subset(train_ids)

    ranking = rank_indicators_anova(train_corpus) if cfg.indicators.startswith("top") else []
    columns = select_indicators(cfg.indicators, ranking, corpus.n_indicators, seed=cfg.seed)
    model_cfg = replace(cfg.model, image_size=corpus.image_size, n_indicators=len(columns))
    cfg = replace(cfg, model=model_cfg)

    train_pairs = build_pairs(train_corpus, model_cfg.code_length)
    val_pairs = build_pairs(corpus.subset(val_ids), model_cfg.code_length)
    if not train_pairs:
        raise ConfigError("no training pairs in this fold")
    tb = pairs_to_batch(train_pairs, columns)
    vb = pairs_to_batch(val_pairs, columns) if val_pairs else None

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.resolved").write_text(cfg.to_lines())
    meta = {"indicator_columns": columns, "folds": folds.to_dict(), "fold_id": fold_id,
            "corpus_hash": corpus.content_hash(), "n_train_pairs": len(train_pairs),
            "n_val_pairs": len(val_pairs)}

    torch.use_deterministic_algorithms(True)
    trainer = Trainer(cfg, model_cfg)
    order_rng = np.random.default_rng(cfg.seed)
    rows: list[dict] = []
    best_epoch, best_ssim = -1, -math.inf
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        trainer.set_lr(lr)
        trainer.models.train()
        sums: dict[str, float] = {}
        order = order_rng.permutation(len(tb))
        n_batches = 0
        for bi, start in enumerate(range(0, len(tb), cfg.batch_size)):
            batch = tb.take(order[start:start + cfg.batch_size])
            try:
                stats = {**trainer.d_step(batch), **trainer.g_step(batch)}
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} batch {bi}: {exc}") from exc
            for k, v in stats.items():
                if not math.isfinite(v):
                    raise NumericError(f"epoch {epoch} batch {bi}: loss {k} = {v}")
                sums[k] = sums.get(k, 0.0) + v
            n_batches += 1
        trainer.models.eval()
        val_ssim = None
        if vb is not None:
            gen = tensor_to_uint8(trainer.generate(vb))
            val_ssim = float(np.mean([ssim(to_unit(g[0]), to_unit(p.y_j)) for g, p in zip(gen, val_pairs)]))
        row = {"epoch": epoch, "lr": lr, "val_ssim": val_ssim}
        for k in LOG_COLUMNS[2:-1]:
            row[k] = sums[k] / n_batches if k in sums else None
        rows.append(row)
        _write_log(run_dir / "log.csv", rows)
        epoch_meta = {**meta, "epoch": epoch, "val_ssim": val_ssim}
        save_checkpoint(run_dir / "ckpt_last", trainer.models, cfg, epoch_meta)
        score = val_ssim if val_ssim is not None else -epoch
        if score > best_ssim:
            best_epoch, best_ssim = epoch, score
            save_checkpoint(run_dir / "ckpt_best", trainer.models, cfg, epoch_meta)
        log.info("epoch %d lr=%.3g g_total=%.4f val_ssim=%s", epoch, lr, row["g_total"], val_ssim)
    return RunArtifacts(run_dir, rows, best_epoch, best_ssim, cfg)


def _write_log(path: Path, rows: list[dict]) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r["epoch"]] + [_cell(r[k]) for k in LOG_COLUMNS[1:]])
    os.replace(tmp, path)


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (float(v) if v != "" else None) for k, v in row.items()} for row in csv.DictReader(fh)]


# --------------------------------------------------------------------------- inference


def predict_sequence(checkpoint, x_i, age_i: float, target_ages) -> list[np.ndarray]:
    """Generate one uint8 image per target age, each directly from ``x_i``."""
    ck = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    cfg = ck.model_config
    targets = [float(a) for a in target_ages]
    for a in targets:
        if a <= age_i:
            raise ValueError(f"target age {a} must exceed input age {age_i}")
    if not targets:
        return []
    ai = encode_age(age_i, cfg.code_length, DEFAULT_MAX_AGE)
    diffs = np.stack([age_difference_code(ai, encode_age(a, cfg.code_length, DEFAULT_MAX_AGE)).values
                      for a in targets]).astype(np.float32)
    x = image_to_tensor(x_i)[None, None].expand(len(targets), 1, *np.shape(x_i)).contiguous()
    ck.models.eval()
    with torch.no_grad():
        out = ck.models.generator(x, torch.from_numpy(diffs))
    return [img[0] for img in tensor_to_uint8(out)]


def split_subjects(folds: FoldAssignment, fold_id: int, split: str) -> list[str]:
    train_ids, val_ids, test_ids = folds.partition(fold_id)
    table = {"train": train_ids, "val": val_ids, "test": test_ids, "all": train_ids + val_ids + test_ids}
    if split not in table:
        raise ConfigError(f"split must be one of {list(table)}, got {split!r}")
    return table[split]


def train_classifiers(corpus: Corpus, folds: FoldAssignment, fold_id: int, seed: int = 0) -> dict:
    train_ids, val_ids, test_ids = folds.partition(fold_id)
    return {key: train_feature_classifier(corpus, key, train_ids + val_ids, test_ids, seed=seed)
            for key in CLASS_PAIRS}


def evaluate(checkpoint, corpus: Corpus, split: str = "test", classifiers: dict | None = None,
             dfd_elementwise: bool = False, dfd_logits: bool = False, out_dir=None,
             folds: FoldAssignment | None = None) -> EvalReport:
    """Generate every pair of ``split`` and report metrics by term.

    ``checkpoint`` is a path, a loaded Checkpoint, or ``"identity"`` (requires ``folds``)
    for the no-change baseline that returns ``x_i`` unchanged.
    """
    identity = isinstance(checkpoint, str) and checkpoint == "identity"
    if identity:
        if folds is None:
            raise ConfigError("identity evaluation needs an explicit fold assignment")
        fold_id, columns, ck = 0, list(range(corpus.n_indicators)), None
    else:
        ck = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
        if ck.model_config.image_size != corpus.image_size:
            raise ConfigError(f"checkpoint built for {ck.model_config.image_size}px, corpus is {corpus.image_size}px")
        folds = folds or ck.folds
        fold_id, columns = ck.meta["fold_id"], ck.columns
        if ck.meta.get("corpus_hash") not in (None, corpus.content_hash()):
            log.warning("corpus differs from the one the checkpoint was trained on")
    resolve_folds(TrainConfig(), corpus, folds)

    pairs = build_pairs(corpus.subset(split_subjects(folds, fold_id, split)))
    ind_pred = None
    if identity or not pairs:
        generated = [p.x_i for p in pairs]
    else:
        b = pairs_to_batch(pairs, columns)
        ck.models.eval()
        with torch.no_grad():
            generated = [g[0] for g in tensor_to_uint8(torch.cat(
                [ck.models.generator(b.x[i:i + 64], b.diff[i:i + 64]) for i in range(0, len(b), 64)]))]
            ind_pred = torch.cat([ck.models.indicator(b.y[i:i + 64]) for i in range(0, len(b), 64)]).double().numpy()

    if classifiers is None:
        seed = 0 if ck is None else ck.train_config.seed
        classifiers = train_classifiers(corpus, folds, fold_id, seed)
    feature_fns = {k: classifier_feature_fn(c, dfd_logits) for k, c in classifiers.items()}
    extra = {"classifier_heldout_accuracy": {k: c.heldout_accuracy for k, c in classifiers.items()},
             "model": "identity" if identity else "checkpoint",
             "dfd_features": "logits" if dfd_logits else "penultimate",
             "indicator_columns": columns}
    report = build_report(pairs, generated, split, fold_id, feature_fns, ind_pred, columns,
                          dfd_elementwise, extra)
    if out_dir is not None:
        write_report(report, out_dir, pairs, generated)
    return report


def write_report(report: EvalReport, out_dir, pairs=None, generated=None, n_samples: int = 6) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "report.txt").write_text(report.table() + "\n")
    if pairs:
        # keep the longest-gap pairs for the figure grid
        idx = sorted(range(len(pairs)), key=lambda k: -pairs[k].gap)[:n_samples]
        np.savez_compressed(
            out / "samples.npz",
            x=np.stack([pairs[k].x_i for k in idx]), y=np.stack([pairs[k].y_j for k in idx]),
            y_hat=np.stack([generated[k] for k in idx]),
            age_i=np.array([pairs[k].age_i for k in idx]), age_j=np.array([pairs[k].age_j for k in idx]),
        )
    return out / "report.json"


# --------------------------------------------------------------------------- ablation

LOSS_GRID = [
    ("L_adv", ("adv",)),
    ("L_asp+L_adv", ("adv", "asp")),
    ("L_dm+L_adv", ("adv", "dm")),
    ("L_asp+L_dm+L_adv", ("adv", "asp", "dm")),
]


def loss_grid() -> list[tuple[str, dict]]:
    return [(label, {"loss_set": terms}) for label, terms in LOSS_GRID]


def indicator_grid(specs=("top:1", "top:5", "top:10", "random:5")) -> list[tuple[str, dict]]:
    def label(s):
        if s == "all":
            return "ALL"
        mode, _, k = s.partition(":")
        return f"Top {k}" if mode == "top" else f"Random {k}"
    return [(label(s), {"indicators": s}) for s in specs]


@dataclass
class AblationResult:
    rows: list[tuple[str, EvalReport]]

    def to_dict(self) -> dict:
        return {"rows": [{"label": lab, "report": rep.to_dict()} for lab, rep in self.rows]}

    def table(self) -> str:
        head = f"{'Setting':<20} {'MAE':>9} {'SSIM':>7} {'PSNR':>7} {'SSIM(long)':>11} {'Ind.MAE':>8} {'Ind.R2':>7}"
        lines = [head, "-" * len(head)]
        for lab, rep in self.rows:
            a, lg, ind = rep.strata["all"], rep.strata["long"], rep.indicators or {}
            lines.append(
                f"{lab:<20} {_num(a.get('mae'), 5):>9} {_num(a.get('ssim'), 4):>7} {_num(a.get('psnr'), 2):>7} "
                f"{_num(lg.get('ssim'), 4):>11} {_num(ind.get('mae'), 4):>8} {_num(ind.get('r2'), 3):>7}"
            )
        return "\n".join(lines)


def _num(v, nd) -> str:
    return "-" if v is None else f"{v:.{nd}f}"


def run_ablation(corpus: Corpus, grid: list[tuple[str, dict]], base_cfg: TrainConfig, out_root,
                 folds: FoldAssignment | None = None) -> AblationResult:
    if not grid:
        raise ConfigError("ablation grid is empty")
    out_root = Path(out_root)
    folds = resolve_folds(base_cfg, corpus, folds)
    classifiers = train_classifiers(corpus, folds, base_cfg.fold_id, base_cfg.seed)
    rows = []
    for label, overrides in grid:
        cfg = replace(base_cfg, **overrides)
        slug = label.replace(" ", "_").replace("+", "_")
        art = train(cfg, corpus, out_root / slug, folds=folds)
        rep = evaluate(art.ckpt_best, corpus, "test", classifiers=classifiers, out_dir=out_root / slug / "eval")
        rep.extra["label"] = label
        rows.append((label, rep))
    result = AblationResult(rows)
    (out_root / "ablation.json").write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True))
    (out_root / "ablation.txt").write_text(result.table() + "\n")
    return result
