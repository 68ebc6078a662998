"""Image-quality metrics, Disease Feature Distance, indicator regression metrics and evaluation reports.

All image metrics work in the [0, 1] pixel domain (disk bytes / 255).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError

log = logging.getLogger(__name__)

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
MAPE_FLOOR = 1e-6
CLASS_PAIRS = {"ad_cn": ("AD", "CN"), "ad_mci": ("AD", "MCI")}


def to_unit(img) -> np.ndarray:
    """uint8 -> [0, 1]; float arrays are assumed to be in [-1, 1] network range."""
    a = np.asarray(img)
    if a.dtype == np.uint8:
        return a.astype(np.float64) / 255.0
    return (a.astype(np.float64) + 1.0) / 2.0


def _pair(a, b, what: str) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_map(a, b, data_range: float = 1.0) -> np.ndarray:
    a, b = _pair(a, b, "ssim")
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise ShapeError(f"ssim needs 2-D images of side >= {SSIM_WINDOW}, got {a.shape}")
    win = torch.from_numpy(gaussian_window())[None, None]
    ta = torch.from_numpy(a)[None, None]
    tb = torch.from_numpy(b)[None, None]
    blur = lambda t: F.conv2d(t, win)  # valid positions only
    mu_a, mu_b = blur(ta), blur(tb)
    var_a = blur(ta * ta) - mu_a ** 2
    var_b = blur(tb * tb) - mu_b ** 2
    cov = blur(ta * tb) - mu_a * mu_b
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return (num / den)[0, 0].numpy()


def ssim(a, b, data_range: float = 1.0) -> float:
    return float(ssim_map(a, b, data_range).mean())


def psnr(a, b) -> float:
    """PSNR with peak 1.0; identical images return ``PSNR_CAP``."""
    return psnr_flagged(a, b)[0]


def psnr_flagged(a, b) -> tuple[float, bool]:
    a, b = _pair(a, b, "psnr")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP, True
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP), False


def image_error_metrics(a, b) -> dict:
    a, b = _pair(a, b, "image_error_metrics")
    d = a - b
    return {"mae": float(np.mean(np.abs(d))), "mse": float(np.mean(d ** 2))}


# --------------------------------------------------------------------------- indicator metrics


def indicator_metrics(pred, truth, mask) -> dict:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != truth.shape or mask.shape != truth.shape:
        raise ShapeError(f"indicator_metrics: shapes {pred.shape}, {truth.shape}, {mask.shape}")
    p, t = pred[mask], truth[mask]
    if p.size == 0:
        raise ValueError("indicator_metrics: no observed cells")
    err = p - t
    mse = float(np.mean(err ** 2))
    keep = np.abs(t) >= MAPE_FLOOR
    mape = float(np.mean(np.abs(err[keep]) / np.abs(t[keep]))) if keep.any() else math.nan
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    r2 = 1.0 - float(np.sum(err ** 2)) / ss_tot if ss_tot > 0 else math.nan
    return {
        "mae": float(np.mean(np.abs(err))),
        "mse": mse,
        "mape": mape,
        "rmse": math.sqrt(mse),
        "r2": r2,
        "n_observed": int(p.size),
        "mape_skipped": int((~keep).sum()),
    }


# --------------------------------------------------------------------------- DFD


class FeatureClassifier(nn.Module):
    def __init__(self, feature_width: int = 64, channels: tuple[int, ...] = (16, 32, 64)):
        super().__init__()
        layers: list[nn.Module] = []
        cin = 1
        for c in channels:
            layers += [nn.Conv2d(cin, c, 3, 2, 1), nn.ReLU()]
            cin = c
        self.conv = nn.Sequential(*layers)
        self.fc1 = nn.Linear(cin, feature_width)
        self.fc2 = nn.Linear(feature_width, 2)
        self.feature_width = feature_width
        self.heldout_accuracy: float | None = None
        self.classes: tuple[str, str] = ("", "")

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Representation entering the final fully connected layer."""
        return F.relu(self.fc1(self.conv(x).mean(dim=(2, 3))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.features(x))


def _images_tensor(images) -> torch.Tensor:
    arr = np.stack([to_unit(im) for im in images]).astype(np.float32) * 2.0 - 1.0
    return torch.from_numpy(arr)[:, None]


def train_feature_classifier(corpus, class_pair: str = "ad_cn", train_ids=None, heldout_ids=None,
                             seed: int = 0, epochs: int = 30, feature_width: int = 64, lr: float = 2e-3,
                             batch_size: int = 32) -> FeatureClassifier:
    if class_pair not in CLASS_PAIRS:
        raise ConfigError(f"class pair must be one of {list(CLASS_PAIRS)}, got {class_pair!r}")
    pos, neg = CLASS_PAIRS[class_pair]

    def collect(ids):
        keep = None if ids is None else set(ids)
        xs, ys = [], []
        for s in corpus.subjects:
            if keep is not None and s.subject_id not in keep:
                continue
            for v in s.visits:
                if v.diagnosis in (pos, neg):
                    xs.append(v.image)
                    ys.append(1 if v.diagnosis == pos else 0)
        return xs, np.array(ys, dtype=np.int64)

    xs, ys = collect(train_ids)
    if (ys == 1).sum() == 0 or (ys == 0).sum() == 0:
        raise ConfigError(f"classifier {class_pair}: both classes must be present in the training split")

    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    model = FeatureClassifier(feature_width)
    model.classes = (pos, neg)
    x = _images_tensor(xs)
    y = torch.from_numpy(ys)
    counts = torch.bincount(y, minlength=2).double()
    weight = (counts.sum() / (2 * counts)).float()
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    for _ in range(epochs):
        order = torch.randperm(len(y), generator=gen)
        for start in range(0, len(y), batch_size):
            idx = order[start:start + batch_size]
            opt.zero_grad()
            loss = F.cross_entropy(model(x[idx]), y[idx], weight=weight)
            loss.backward()
            opt.step()
    model.eval()
    if heldout_ids is not None:
        hx, hy = collect(heldout_ids)
        if len(hy):
            with torch.no_grad():
                acc = (model(_images_tensor(hx)).argmax(1).numpy() == hy).mean()
            model.heldout_accuracy = float(acc)
    return model


def classifier_feature_fn(classifier: FeatureClassifier, use_logits: bool = False):
    def f(images) -> np.ndarray:
        with torch.no_grad():
            x = _images_tensor(images)
            out = classifier(x) if use_logits else classifier.features(x)
        return out.double().numpy()
    return f


def dfd(gen_images, real_images, feature_fn, elementwise: bool = False) -> dict:
    """Sum and mean over pairs of the distance between classifier features of generated and real images.

    ``feature_fn`` maps a list of images to an (N, F) array. The default distance is
    the Euclidean norm; ``elementwise`` sums absolute feature differences instead.
    """
    if len(gen_images) != len(real_images):
        raise ShapeError(f"dfd: {len(gen_images)} generated vs {len(real_images)} real images")
    n = len(gen_images)
    if n == 0:
        return {"sum": 0.0, "mean": None, "n": 0}
    fg = np.asarray(feature_fn(gen_images), dtype=np.float64)
    fr = np.asarray(feature_fn(real_images), dtype=np.float64)
    d = np.abs(fg - fr).sum(axis=1) if elementwise else np.sqrt(((fg - fr) ** 2).sum(axis=1))
    total = float(d.sum())
    return {"sum": total, "mean": total / n, "n": n}


# --------------------------------------------------------------------------- reports


STRATA = ("short", "long", "all")


@dataclass
class EvalReport:
    split: str
    fold: int | None
    strata: dict
    dfd: dict
    indicators: dict | None
    baseline: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "fold": self.fold,
            "strata": self.strata,
            "dfd": self.dfd,
            "indicators": self.indicators,
            "baseline": self.baseline,
            "extra": self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False, default=_json_default)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["split"], d.get("fold"), d["strata"], d["dfd"], d.get("indicators"),
                   d.get("baseline", {}), d.get("extra", {}))

    def table(self) -> str:
        lines = [f"split={self.split} fold={self.fold}",
                 f"{'Term':<6} {'n':>5} {'MAE x1e-2':>10} {'MSE':>9} {'SSIM':>7} {'PSNR':>7} "
                 f"{'DFD(AD/CN)':>11} {'DFD(AD/MCI)':>12}"]
        for term in STRATA:
            s = self.strata[term]
            if s.get("absent"):
                lines.append(f"{term:<6} {0:>5}  (absent)")
                continue
            dfd_cn = self.dfd.get("by_term", {}).get(term, {}).get("ad_cn")
            dfd_mci = self.dfd.get("by_term", {}).get(term, {}).get("ad_mci")
            lines.append(
                f"{term:<6} {s['n']:>5} {s['mae'] * 100:>10.4f} {s['mse']:>9.5f} {s['ssim']:>7.4f} "
                f"{s['psnr']:>7.3f} {_fmt(dfd_cn):>11} {_fmt(dfd_mci):>12}"
            )
        if self.baseline:
            lines.append("identity baseline SSIM: " + ", ".join(
                f"{t}={self.baseline[t]['ssim']:.4f}" for t in STRATA if self.baseline.get(t) and not self.baseline[t].get("absent")))
        if self.indicators:
            i = self.indicators
            lines.append(f"indicators: MAE={i['mae']:.5f} MSE={i['mse']:.5f} MAPE={_fmt(i['mape'])} "
                         f"RMSE={i['rmse']:.5f} R2={_fmt(i['r2'])} n_observed={i['n_observed']}")
        return "\n".join(lines)


def _fmt(v) -> str:
    return "-" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.4f}"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def _nan_to_none(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def stratum_metrics(gen_images, target_images) -> dict:
    """Mean MAE/MSE/SSIM/PSNR over aligned image lists; empty input is marked absent."""
    n = len(gen_images)
    if n == 0:
        return {"n": 0, "absent": True, "mae": None, "mse": None, "ssim": None, "psnr": None}
    rows = []
    capped = 0
    for g, t in zip(gen_images, target_images):
        a, b = to_unit(g), to_unit(t)
        e = image_error_metrics(a, b)
        p, flag = psnr_flagged(a, b)
        capped += flag
        rows.append((e["mae"], e["mse"], ssim(a, b), p))
    m = np.mean(np.array(rows), axis=0)
    return {"n": n, "absent": False, "mae": float(m[0]), "mse": float(m[1]), "ssim": float(m[2]),
            "psnr": float(m[3]), "psnr_capped": int(capped)}


def build_report(pairs, generated, split: str, fold, feature_fns: dict | None = None,
                 ind_pred=None, ind_columns=None, elementwise_dfd: bool = False,
                 extra: dict | None = None) -> EvalReport:
    """Assemble an EvalReport from pairs, their generated images (uint8) and optional indicator predictions.

    ``feature_fns`` maps class-pair keys (``ad_cn``, ``ad_mci``) to feature functions;
    DFD for a class pair uses the pairs whose target diagnosis belongs to that pair.
    ``ind_pred`` is an (N, P) array aligned with ``pairs``, compared against the
    target visits' observed indicators (restricted to ``ind_columns`` when given).
    """
    if len(pairs) != len(generated):
        raise ShapeError(f"{len(pairs)} pairs vs {len(generated)} generated images")
    strata, baseline = {}, {}
    by_term = {}
    for term in STRATA:
        idx = [k for k, p in enumerate(pairs) if term == "all" or p.term == term]
        strata[term] = stratum_metrics([generated[k] for k in idx], [pairs[k].y_j for k in idx])
        baseline[term] = stratum_metrics([pairs[k].x_i for k in idx], [pairs[k].y_j for k in idx])
        by_term[term] = {}
        for key, fn in (feature_fns or {}).items():
            cls = CLASS_PAIRS[key]
            sel = [k for k in idx if pairs[k].target_diagnosis in cls]
            res = dfd([generated[k] for k in sel], [pairs[k].y_j for k in sel], fn, elementwise_dfd)
            by_term[term][key] = res["mean"]
            by_term[term][key + "_sum"] = res["sum"]
            by_term[term][key + "_n"] = res["n"]
    dfd_block = {key: by_term["all"].get(key) for key in CLASS_PAIRS}
    dfd_block.update({f"{key}_sum": by_term["all"].get(key + "_sum") for key in CLASS_PAIRS})
    dfd_block["by_term"] = by_term
    dfd_block["distance"] = "elementwise" if elementwise_dfd else "euclidean"

    indicators = None
    if ind_pred is not None and len(pairs):
        truth = np.stack([p.target_indicators for p in pairs])
        mask = np.stack([p.target_mask for p in pairs])
        if ind_columns is not None:
            truth, mask = truth[:, ind_columns], mask[:, ind_columns]
        if mask.any():
            indicators = _nan_to_none(indicator_metrics(ind_pred, np.where(mask, truth, 0.0), mask))
    return EvalReport(split, fold, strata, dfd_block, indicators, baseline, extra or {})
