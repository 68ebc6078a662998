"""Static figures from evaluation reports: metric bars, loss curves, sample grids, comparisons."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import STRATA, EvalReport  # noqa: E402

METRICS = (("mae", "MAE"), ("mse", "MSE"), ("ssim", "SSIM"), ("psnr", "PSNR (dB)"))
LOSS_KEYS = ("d_adv", "d_dm", "g_adv", "g_asp", "g_dm", "g_total")


def _present(rep: EvalReport) -> tuple[list[str], list[str]]:
    shown = [t for t in STRATA if not rep.strata.get(t, {}).get("absent", True)]
    return shown, [t for t in STRATA if t not in shown]


def metric_bars(rep: EvalReport, path: Path) -> Path:
    shown, absent = _present(rep)
    fig, axes = plt.subplots(1, len(METRICS), figsize=(3.2 * len(METRICS), 3.2))
    for ax, (key, label) in zip(axes, METRICS):
        vals = [rep.strata[t][key] for t in shown]
        base = [rep.baseline.get(t, {}).get(key) for t in shown]
        x = np.arange(len(shown))
        ax.bar(x - 0.2, vals, 0.4, label="generated")
        if all(b is not None for b in base) and base:
            ax.bar(x + 0.2, base, 0.4, label="input (identity)")
        ax.set_xticks(x, shown)
        ax.set_title(label)
    note = f" (no pairs: {', '.join(absent)})" if absent else ""
    axes[0].legend(fontsize=7, title=("strata" + note) if note else None, title_fontsize=7)
    fig.suptitle(f"split={rep.split} fold={rep.fold}")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def loss_curves(log_path: Path | None, path: Path) -> Path:
    from .training import read_log

    fig, (ax, ax_v) = plt.subplots(1, 2, figsize=(9, 3.2))
    if log_path is not None and Path(log_path).exists():
        rows = read_log(log_path)
        ep = [r["epoch"] for r in rows]
        for k in LOSS_KEYS:
            ys = [r[k] for r in rows]
            if any(y is not None for y in ys):
                ax.plot(ep, [np.nan if y is None else y for y in ys], label=k)
        ax.set_yscale("symlog", linthresh=1e-2)
        ax.legend(fontsize=7)
        ax_v.plot(ep, [np.nan if r["val_ssim"] is None else r["val_ssim"] for r in rows], color="k")
    else:
        ax.text(0.5, 0.5, "no training log", ha="center", va="center", transform=ax.transAxes)
    ax.set_xlabel("epoch")
    ax.set_title("losses")
    ax_v.set_xlabel("epoch")
    ax_v.set_title("validation SSIM")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def sample_grid(samples_path: Path | None, path: Path) -> Path:
    """Rows: input, generated, |ŷ−x|, |ŷ−y|, target."""
    if samples_path is None or not Path(samples_path).exists():
        fig, ax = plt.subplots(figsize=(4, 2))
        ax.axis("off")
        ax.text(0.5, 0.5, "no samples", ha="center", va="center")
    else:
        s = np.load(samples_path)
        x, y, yh = (s[k].astype(np.float64) / 255.0 for k in ("x", "y", "y_hat"))
        rows = [("input", x, "gray"), ("generated", yh, "gray"), ("|ŷ−x|", np.abs(yh - x), "magma"),
                ("|ŷ−y|", np.abs(yh - y), "magma"), ("target", y, "gray")]
        n = len(x)
        fig, axes = plt.subplots(len(rows), n, figsize=(1.6 * n, 1.6 * len(rows)), squeeze=False)
        for r, (label, imgs, cmap) in enumerate(rows):
            vmax = 1.0 if cmap == "gray" else max(float(imgs.max()), 1e-3)
            for c in range(n):
                ax = axes[r, c]
                ax.imshow(imgs[c], cmap=cmap, vmin=0, vmax=vmax)
                ax.set_xticks([])
                ax.set_yticks([])
                if c == 0:
                    ax.set_ylabel(label, fontsize=8)
                if r == 0:
                    ax.set_title(f"{s['age_i'][c]:.1f}→{s['age_j'][c]:.1f}", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def comparison(reports: list[tuple[Path, EvalReport]], path: Path) -> Path:
    fig, axes = plt.subplots(1, len(METRICS), figsize=(3.2 * len(METRICS), 3.4))
    width = 0.8 / len(reports)
    omitted = set()
    for ax, (key, label) in zip(axes, METRICS):
        for i, (p, rep) in enumerate(reports):
            shown, absent = _present(rep)
            omitted.update(absent)
            x = np.array([STRATA.index(t) for t in shown], dtype=float)
            ax.bar(x - 0.4 + width * (i + 0.5), [rep.strata[t][key] for t in shown], width,
                   label=rep.extra.get("label") or p.parent.name or str(p))
        ax.set_xticks(range(len(STRATA)), STRATA)
        ax.set_title(label)
    axes[0].legend(fontsize=7, title=f"(no pairs: {', '.join(sorted(omitted))})" if omitted else None,
                   title_fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_reports(reports: list[tuple[Path, EvalReport]], out: Path, log_path: Path | None = None) -> list[Path]:
    out = Path(out)
    files = []
    for i, (p, rep) in enumerate(reports):
        prefix = "" if len(reports) == 1 else f"r{i}_"
        run_log = log_path
        if run_log is None and rep.extra.get("run_dir"):
            run_log = Path(rep.extra["run_dir"]) / "log.csv"
        files.append(metric_bars(rep, out / f"{prefix}metrics.png"))
        files.append(loss_curves(run_log, out / f"{prefix}losses.png"))
        files.append(sample_grid(Path(p).parent / "samples.npz", out / f"{prefix}samples.png"))
    if len(reports) > 1:
        files.append(comparison(reports, out / "comparison.png"))
    return files
