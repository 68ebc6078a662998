"""Synthetic longitudinal phantom corpus: generation, persistence, pairing, folds and ANOVA ranking.

Each subject carries a latent disease state. Images are procedurally rendered
brain-like slices (skull ring, cortical band, ventricles) whose atrophy follows
the subject's severity trajectory; indicators are noisy affine read-outs of the
same state, with MCAR missingness applied at the cell level.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .age import DEFAULT_LENGTH, DEFAULT_MAX_AGE, AgeCode, AgeDiffCode, age_difference_code, encode_age
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

MIN_AGE = 55.0
MAX_AGE = 97.3
SHORT_TERM_YEARS = 3.0
DIAGNOSES = ("CN", "MCI", "AD")
MCI_THRESHOLD = 0.25
AD_THRESHOLD = 0.6
N_COUPLED = 6
N_NOISE = 4
IMAGE_SIZES = (32, 64, 128)
INDICATOR_DECIMALS = 6


@dataclass(frozen=True)
class LatentState:
    severity: float  # baseline severity before onset
    onset_age: float
    progression_rate: float  # severity per year after onset
    morphology_seed: int

    def severity_at(self, age_years: float) -> float:
        s = self.severity + self.progression_rate * max(0.0, age_years - self.onset_age)
        return float(min(max(s, 0.0), 1.0))


def diagnosis_for(severity: float) -> str:
    if severity < MCI_THRESHOLD:
        return "CN"
    if severity < AD_THRESHOLD:
        return "MCI"
    return "AD"


@dataclass
class Visit:
    age_years: float
    image: np.ndarray  # uint8, H x W
    indicators: np.ndarray  # float64, NaN where unobserved
    mask: np.ndarray  # bool, True = observed
    diagnosis: str


@dataclass
class PhantomSubject:
    subject_id: str
    latent: LatentState
    visits: list[Visit]


@dataclass
class ScheduleParams:
    """Visit-schedule mixture. Gap kinds: 6 months, 1 year, 2 years, multi-year."""

    gap_weights: tuple[float, ...] = (0.38, 0.32, 0.11, 0.19)
    multi_year_range: tuple[float, float] = (3.5, 6.0)
    visit_count_weights: tuple[float, ...] = (0.3, 0.3, 0.2, 0.1, 0.1)  # for 2..6 visits
    first_age_range: tuple[float, float] = (58.0, 85.0)
    target_short_fraction: float = 0.6453


@dataclass
class Corpus:
    subjects: list[PhantomSubject]
    params: dict = field(default_factory=dict)

    @property
    def n_indicators(self) -> int:
        return int(self.params.get("n_indicators", N_COUPLED + N_NOISE))

    @property
    def image_size(self) -> int:
        return int(self.params["image_size"])

    def subject(self, subject_id: str) -> PhantomSubject:
        for s in self.subjects:
            if s.subject_id == subject_id:
                return s
        raise KeyError(subject_id)

    def subset(self, subject_ids) -> "Corpus":
        keep = set(subject_ids)
        return Corpus([s for s in self.subjects if s.subject_id in keep], dict(self.params))

    def visits(self):
        for s in self.subjects:
            yield from s.visits

    def observed_fraction(self) -> float:
        masks = [v.mask for v in self.visits()]
        return float(np.concatenate(masks).mean())

    def missing_fraction(self) -> float:
        return 1.0 - self.observed_fraction()

    def short_term_fraction(self) -> float:
        pairs = build_pairs(self)
        return sum(p.term == "short" for p in pairs) / max(len(pairs), 1)

    def content_hash(self) -> str:
        """Hash of every image byte, indicator value and mask; stable across save/load."""
        h = hashlib.sha256()
        h.update(json.dumps(self.params, sort_keys=True).encode())
        for s in self.subjects:
            h.update(s.subject_id.encode())
            h.update(json.dumps(asdict(s.latent), sort_keys=True).encode())
            for v in s.visits:
                h.update(f"{v.age_years:.1f}|{v.diagnosis}".encode())
                h.update(np.ascontiguousarray(v.image).tobytes())
                h.update(np.nan_to_num(v.indicators, nan=-9999.0).tobytes())
                h.update(v.mask.astype(np.uint8).tobytes())
        return h.hexdigest()


# --------------------------------------------------------------------------- rendering


def _geometry(morphology_seed: int) -> dict:
    rng = np.random.default_rng(morphology_seed)
    return {
        "ax": rng.uniform(0.78, 0.86),
        "ay": rng.uniform(0.86, 0.94),
        "theta": rng.uniform(-0.12, 0.12),
        "cx": rng.uniform(-0.03, 0.03),
        "cy": rng.uniform(-0.03, 0.03),
        "cortex": rng.uniform(0.11, 0.15),
        "vent_dx": rng.uniform(0.13, 0.17),
        "vent_dy": rng.uniform(-0.08, 0.0),
        "vent_a": rng.uniform(0.060, 0.075),
        "vent_b": rng.uniform(0.17, 0.21),
        "vent_tilt": rng.uniform(0.15, 0.3),
        "tex_freq": rng.uniform(2.0, 6.0, size=(3, 2)),
        "tex_phase": rng.uniform(0, 2 * np.pi, size=3),
        "tex_amp": rng.uniform(0.02, 0.04, size=3),
    }


# ventricle area grows as (1 + VENT_GROWTH * severity); cortex thins as (1 - CORTEX_LOSS * severity)
VENT_GROWTH = 4.0
CORTEX_LOSS = 0.6
BRAIN_SHRINK = 0.08


def phantom_features(latent: LatentState, age_years: float) -> dict:
    """Analytic geometry behind a rendered phantom: severity, ventricle area fraction, cortex thickness."""
    g = _geometry(latent.morphology_seed)
    sev = latent.severity_at(age_years)
    scale2 = 1.0 + VENT_GROWTH * sev
    # two ellipses with semi-axes (a, b) * sqrt(scale2), in a 2x2 normalized frame
    vent_frac = 2 * math.pi * g["vent_a"] * g["vent_b"] * scale2 / 4.0
    thickness = g["cortex"] * (1.0 - CORTEX_LOSS * sev)
    return {"severity": sev, "ventricle_fraction": vent_frac, "cortical_thickness": thickness}


def _soft_inside(r: np.ndarray, edge: float, width: float) -> np.ndarray:
    return np.clip(0.5 - (r - edge) / width, 0.0, 1.0)


def render_phantom(latent: LatentState, age_years: float, image_size: int) -> np.ndarray:
    if not (MIN_AGE <= age_years <= MAX_AGE):
        raise ValueError(f"age {age_years} outside [{MIN_AGE}, {MAX_AGE}]")
    if image_size < 16:
        raise ConfigError(f"image_size too small: {image_size}")
    g = _geometry(latent.morphology_seed)
    feats = phantom_features(latent, age_years)
    sev = feats["severity"]

    n = image_size
    coords = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    c, s = math.cos(g["theta"]), math.sin(g["theta"])
    u = c * (xx - g["cx"]) + s * (yy - g["cy"])
    v = -s * (xx - g["cx"]) + c * (yy - g["cy"])
    r = np.sqrt((u / g["ax"]) ** 2 + (v / g["ay"]) ** 2)
    w = 2.0 / n / g["ax"]  # about one pixel in radius units

    img = np.zeros((n, n))
    head = _soft_inside(r, 1.0, w)
    img = img * (1 - head) + 0.85 * head
    inner = _soft_inside(r, 0.91, w)
    img = img * (1 - inner) + 0.12 * inner
    r_brain = 0.87 - BRAIN_SHRINK * sev
    brain = _soft_inside(r, r_brain, w)
    img = img * (1 - brain) + 0.50 * brain
    white = _soft_inside(r, r_brain - feats["cortical_thickness"], w)
    tex = np.zeros_like(img)
    for k in range(3):
        fx, fy = g["tex_freq"][k]
        tex += g["tex_amp"][k] * np.sin(np.pi * (fx * u + fy * v) + g["tex_phase"][k])
    img = img * (1 - white) + (0.78 + tex) * white

    grow = math.sqrt(1.0 + VENT_GROWTH * sev)
    a, b = g["vent_a"] * grow, g["vent_b"] * grow
    for side in (-1.0, 1.0):
        t = side * g["vent_tilt"]
        du, dv = u - side * g["vent_dx"], v - g["vent_dy"]
        pu = math.cos(t) * du + math.sin(t) * dv
        pv = -math.sin(t) * du + math.cos(t) * dv
        rv = np.sqrt((pu / a) ** 2 + (pv / b) ** 2)
        vent = _soft_inside(rv, 1.0, 2.0 / n / a)
        img = img * (1 - vent) + 0.10 * vent

    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


# --------------------------------------------------------------------------- indicators


# rows: indicator 1..6; columns: intercept, severity, ventricle (scaled), thickness (scaled)
_COUPLING = np.array(
    [
        [0.5, 0.3, 1.0, 0.0],
        [0.2, 0.0, 0.0, 1.0],
        [1.0, -0.9, -0.2, 0.0],  # MMSE-like: falls with severity
        [0.1, 1.2, 0.0, 0.0],
        [0.3, 0.7, 0.4, 0.0],
        [0.9, -0.5, 0.0, 0.4],
    ]
)
_VENT_SCALE = 0.1
_THICK_SCALE = 0.14
NOISE_SIGMA = 0.05


def derive_indicators(latent: LatentState, age_years: float, noise_seed: int | None,
                      n_extra_noise: int = 0, noise_sigma: float = NOISE_SIGMA) -> np.ndarray:
    """Raw (un-normalized) indicators: six disease-coupled, then pure-noise ones.

    ``noise_seed=None`` disables noise.
    """
    f = phantom_features(latent, age_years)
    basis = np.array([1.0, f["severity"], f["ventricle_fraction"] / _VENT_SCALE,
                      f["cortical_thickness"] / _THICK_SCALE])
    n_noise = N_NOISE + n_extra_noise
    values = np.concatenate([_COUPLING @ basis, np.full(n_noise, 0.5)])
    if noise_seed is not None and noise_sigma > 0:
        rng = np.random.default_rng(noise_seed)
        values = values + rng.normal(0.0, noise_sigma, size=values.shape)
    return values


def apply_missingness(visits: list[Visit], rate, seed: int) -> list[Visit]:
    """Drop indicator cells independently with probability ``rate`` (scalar or per-indicator)."""
    rates = np.atleast_1d(np.asarray(rate, dtype=float))
    if np.any(rates < 0) or np.any(rates >= 1):
        raise ConfigError(f"missing rate must be in [0, 1), got {rate}")
    rng = np.random.default_rng(seed)
    out = []
    for v in visits:
        drop = rng.random(v.indicators.shape[0]) < np.broadcast_to(rates, v.indicators.shape)
        mask = v.mask & ~drop
        ind = np.where(mask, v.indicators, np.nan)
        out.append(Visit(v.age_years, v.image, ind, mask, v.diagnosis))
    return out


# --------------------------------------------------------------------------- corpus generation


def _draw_latent(rng: np.random.Generator, first_age: float, morphology_seed: int) -> LatentState:
    kind = rng.random()
    if kind < 0.2:
        # stable healthy subject
        return LatentState(0.0, MAX_AGE, 0.0, morphology_seed)
    base = float(rng.uniform(0.0, 0.6))
    onset = float(first_age - rng.uniform(0.0, 4.0))
    rate = float(rng.uniform(0.02, 0.05))
    return LatentState(round(base, 4), round(onset, 2), round(rate, 4), morphology_seed)


def _draw_schedule(rng: np.random.Generator, sp: ScheduleParams) -> list[float]:
    k = int(rng.choice(np.arange(2, 2 + len(sp.visit_count_weights)), p=np.asarray(sp.visit_count_weights)))
    lo, hi = sp.first_age_range
    age = round(float(rng.uniform(lo, hi)), 1)
    ages = [age]
    gaps = [0.5, 1.0, 2.0]
    while len(ages) < k:
        kind = int(rng.choice(4, p=np.asarray(sp.gap_weights)))
        gap = gaps[kind] if kind < 3 else float(rng.uniform(*sp.multi_year_range))
        age = round(age + gap, 1)
        if age > MAX_AGE:
            break
        ages.append(age)
    if len(ages) < 2:
        # back-fill a six-month follow-up so every subject has two records
        ages.insert(0, round(ages[0] - 0.5, 1))
    return ages


def generate_corpus(n_subjects: int, image_size: int = 64, missing_rate: float = 0.3348, seed: int = 42,
                    schedule_params: ScheduleParams | None = None, n_extra_noise: int = 0,
                    indicator_missing_rates=None, noise_sigma: float = NOISE_SIGMA) -> Corpus:
    if n_subjects < 1:
        raise ConfigError(f"n_subjects must be >= 1, got {n_subjects}")
    if image_size not in IMAGE_SIZES:
        raise ConfigError(f"image_size must be one of {IMAGE_SIZES}, got {image_size}")
    if not (0.0 <= missing_rate < 1.0):
        raise ConfigError(f"missing_rate must be in [0, 1), got {missing_rate}")
    sp = schedule_params or ScheduleParams()
    n_ind = N_COUPLED + N_NOISE + n_extra_noise

    root = np.random.SeedSequence(seed)
    subject_seqs = root.spawn(n_subjects)
    raw: list[tuple[str, LatentState, list[float], list[np.ndarray], list[np.ndarray]]] = []
    for idx, ss in enumerate(subject_seqs):
        sched_ss, latent_ss, noise_ss = ss.spawn(3)
        rng = np.random.default_rng(sched_ss)
        ages = _draw_schedule(rng, sp)
        morph_seed = int(np.random.default_rng(latent_ss).integers(0, 2**31 - 1))
        latent = _draw_latent(np.random.default_rng(latent_ss.spawn(1)[0]), ages[0], morph_seed)
        noise_seeds = noise_ss.generate_state(len(ages))
        images = [render_phantom(latent, a, image_size) for a in ages]
        inds = [derive_indicators(latent, a, int(ns), n_extra_noise, noise_sigma) for a, ns in zip(ages, noise_seeds)]
        raw.append((f"S{idx:04d}", latent, ages, images, inds))

    all_inds = np.stack([x for r in raw for x in r[4]])
    mean = all_inds.mean(axis=0)
    std = all_inds.std(axis=0)
    std[std == 0] = 1.0

    rates = missing_rate if indicator_missing_rates is None else np.asarray(indicator_missing_rates, dtype=float)
    miss_seq = root.spawn(n_subjects + 1)[-1]  # independent of the per-subject streams
    subjects = []
    for (sid, latent, ages, images, inds), mseed in zip(raw, miss_seq.generate_state(n_subjects)):
        visits = []
        for a, img, x in zip(ages, images, inds):
            z = np.round((x - mean) / std, INDICATOR_DECIMALS)
            visits.append(Visit(a, img, z, np.ones(n_ind, dtype=bool), diagnosis_for(latent.severity_at(a))))
        subjects.append(PhantomSubject(sid, latent, apply_missingness(visits, rates, int(mseed))))

    params = {
        "generator": "phantom-v1",
        "n_subjects": n_subjects,
        "image_size": image_size,
        "missing_rate": missing_rate,
        "indicator_missing_rates": None if indicator_missing_rates is None else list(map(float, rates)),
        "seed": seed,
        "n_indicators": n_ind,
        "n_extra_noise": n_extra_noise,
        "noise_sigma": noise_sigma,
        "schedule": asdict(sp),
        "indicator_mean": [float(m) for m in mean],
        "indicator_std": [float(s) for s in std],
    }
    # normalize through JSON so params compare equal after a save/load round trip
    return Corpus(subjects, json.loads(json.dumps(params)))


# --------------------------------------------------------------------------- pairs and folds


@dataclass
class TrainingPair:
    subject_id: str
    x_i: np.ndarray
    y_j: np.ndarray
    a_i: AgeCode
    a_j: AgeCode
    diff: AgeDiffCode
    target_indicators: np.ndarray
    target_mask: np.ndarray
    term: str
    target_diagnosis: str = ""

    @property
    def age_i(self) -> float:
        return self.a_i.age_years

    @property
    def age_j(self) -> float:
        return self.a_j.age_years

    @property
    def gap(self) -> float:
        return round(self.a_j.age_years - self.a_i.age_years, 6)


def term_for_gap(gap_years: float) -> str:
    return "long" if round(gap_years, 6) > SHORT_TERM_YEARS else "short"


def build_pairs(corpus: Corpus, code_length: int = DEFAULT_LENGTH, max_age: float = DEFAULT_MAX_AGE) -> list[TrainingPair]:
    pairs = []
    codes: dict[float, AgeCode] = {}

    def code(age):
        if age not in codes:
            codes[age] = encode_age(age, code_length, max_age)
        return codes[age]

    for s in corpus.subjects:
        if len(s.visits) < 2:
            log.warning("subject %s has %d visit(s); skipped", s.subject_id, len(s.visits))
            continue
        for vi, vj in itertools.combinations(s.visits, 2):
            if vj.age_years <= vi.age_years:
                continue
            ai, aj = code(vi.age_years), code(vj.age_years)
            pairs.append(TrainingPair(
                s.subject_id, vi.image, vj.image, ai, aj, age_difference_code(ai, aj),
                vj.indicators, vj.mask, term_for_gap(vj.age_years - vi.age_years), vj.diagnosis,
            ))
    return pairs


@dataclass
class FoldAssignment:
    test: list[str]
    folds: list[list[str]]
    seed: int

    @property
    def k(self) -> int:
        return len(self.folds)

    def partition(self, fold_id: int) -> tuple[list[str], list[str], list[str]]:
        """(train, validation, test) subject ids for ``fold_id``."""
        if not (0 <= fold_id < self.k):
            raise ConfigError(f"fold_id {fold_id} outside [0, {self.k})")
        train = [sid for f, ids in enumerate(self.folds) if f != fold_id for sid in ids]
        return train, list(self.folds[fold_id]), list(self.test)

    def which(self, subject_id: str) -> str:
        if subject_id in self.test:
            return "test"
        for f, ids in enumerate(self.folds):
            if subject_id in ids:
                return f"fold{f}"
        raise KeyError(subject_id)

    def to_dict(self) -> dict:
        return {"test": self.test, "folds": self.folds, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "FoldAssignment":
        return cls(list(d["test"]), [list(f) for f in d["folds"]], int(d["seed"]))


def split_folds(corpus: Corpus, k: int = 5, holdout_fraction: float = 0.1, seed: int = 0) -> FoldAssignment:
    ids = [s.subject_id for s in corpus.subjects]
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if len(ids) < k + 1:
        raise ConfigError(f"need at least k+1={k + 1} subjects, got {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    n_test = min(max(1, int(round(len(ids) * holdout_fraction))), len(ids) - k)
    test = sorted(ids[i] for i in order[:n_test])
    rest = order[n_test:]
    folds = [sorted(ids[i] for i in chunk) for chunk in np.array_split(rest, k)]
    return FoldAssignment(test, folds, seed)


# --------------------------------------------------------------------------- ANOVA ranking


def anova_f(values: np.ndarray, groups: np.ndarray) -> float:
    """One-way ANOVA F statistic of ``values`` grouped by ``groups``."""
    values = np.asarray(values, dtype=float)
    labels = np.unique(groups)
    n, k = values.size, labels.size
    if k < 2 or n <= k:
        raise ValueError("need at least two groups and more samples than groups")
    grand = values.mean()
    ssb = ssw = 0.0
    for g in labels:
        x = values[groups == g]
        ssb += x.size * (x.mean() - grand) ** 2
        ssw += ((x - x.mean()) ** 2).sum()
    if ssb <= 1e-12 * max(1.0, ssw):
        return 0.0
    if ssw == 0:
        return math.inf
    return float((ssb / (k - 1)) / (ssw / (n - k)))


def rank_indicators_anova(corpus: Corpus) -> list[tuple[int, float]]:
    """(indicator index, F) sorted by F descending, over observed cells only."""
    visits = list(corpus.visits())
    labels = np.array([v.diagnosis for v in visits])
    classes = np.unique(labels)
    if classes.size < 2:
        raise ConfigError("ANOVA ranking needs at least two diagnosis classes")
    ind = np.stack([v.indicators for v in visits])
    mask = np.stack([v.mask for v in visits])
    ranking = []
    for p in range(ind.shape[1]):
        obs = mask[:, p]
        counts = [int((labels[obs] == c).sum()) for c in classes]
        if min(counts) < 2:
            log.warning("indicator %d has < 2 observed values in some class; excluded", p)
            continue
        ranking.append((p, anova_f(ind[obs, p], labels[obs])))
    ranking.sort(key=lambda t: (-t[1], t[0]))
    return ranking


def select_indicators(spec: str, ranking: list[tuple[int, float]], n_indicators: int, seed: int = 0) -> list[int]:
    """Resolve ``all`` / ``top:K`` / ``random:K`` into sorted indicator indices."""
    if spec == "all":
        return list(range(n_indicators))
    mode, _, k = spec.partition(":")
    if mode not in ("top", "random") or not k.isdigit() or int(k) < 1:
        raise ConfigError(f"indicator selection must be all, top:K or random:K; got {spec!r}")
    k = int(k)
    if k > n_indicators:
        raise ConfigError(f"cannot select {k} of {n_indicators} indicators")
    if mode == "top":
        return sorted(p for p, _ in ranking[:k])
    return sorted(int(p) for p in np.random.default_rng(seed).choice(n_indicators, size=k, replace=False))


# --------------------------------------------------------------------------- persistence


def _fmt_age(age: float) -> str:
    return f"{age:.1f}"


def save_corpus(corpus: Corpus, directory) -> Path:
    d = Path(directory)
    (d / "images").mkdir(parents=True, exist_ok=True)
    n_ind = corpus.n_indicators
    header = ["subject_id", "age_years", "image_path", "diagnosis"] + [f"ind_{p + 1:02d}" for p in range(n_ind)]
    rows = []
    for s in corpus.subjects:
        (d / "images" / s.subject_id).mkdir(parents=True, exist_ok=True)
        for v in s.visits:
            rel = f"images/{s.subject_id}/{_fmt_age(v.age_years)}.png"
            Image.fromarray(v.image, mode="L").save(d / rel)
            cells = [f"{x:.{INDICATOR_DECIMALS}f}" if m else "" for x, m in zip(v.indicators, v.mask)]
            rows.append([s.subject_id, _fmt_age(v.age_years), rel, v.diagnosis] + cells)
    tmp = d / "metadata.csv.tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, d / "metadata.csv")
    meta = {"params": corpus.params, "latents": {s.subject_id: asdict(s.latent) for s in corpus.subjects}}
    (d / "corpus.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return d


def load_corpus(directory) -> Corpus:
    d = Path(directory)
    for name in ("metadata.csv", "corpus.json"):
        if not (d / name).is_file():
            raise DataError(f"{d / name}: missing")
    try:
        meta = json.loads((d / "corpus.json").read_text())
        params, latents = meta["params"], meta["latents"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"{d / 'corpus.json'}: malformed ({exc})") from exc

    by_subject: dict[str, list[Visit]] = {}
    seen = set()
    with open(d / "metadata.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:4] != ["subject_id", "age_years", "image_path", "diagnosis"]:
            raise DataError(f"{d / 'metadata.csv'}: bad header {header}")
        n_ind = len(header) - 4
        for lineno, row in enumerate(reader, start=2):
            where = f"{d / 'metadata.csv'} row {lineno}"
            if len(row) != len(header):
                raise DataError(f"{where}: expected {len(header)} fields, got {len(row)}")
            sid, age_s, rel, diag = row[:4]
            try:
                age = float(age_s)
                vals = [float(c) if c.strip() else math.nan for c in row[4:]]
            except ValueError as exc:
                raise DataError(f"{where}: {exc}") from exc
            if diag not in DIAGNOSES:
                raise DataError(f"{where}: unknown diagnosis {diag!r}")
            if (sid, age) in seen:
                raise DataError(f"{where}: duplicate (subject, age) = ({sid}, {age_s})")
            seen.add((sid, age))
            path = d / rel
            if not path.is_file():
                raise DataError(f"{where}: image file {path} not found")
            with Image.open(path) as im:
                image = np.array(im.convert("L"), dtype=np.uint8)
            ind = np.array(vals, dtype=float)
            by_subject.setdefault(sid, []).append(Visit(age, image, ind, ~np.isnan(ind), diag))
    if n_ind != int(params.get("n_indicators", n_ind)):
        raise DataError(f"{d / 'metadata.csv'}: {n_ind} indicator columns, corpus.json says {params['n_indicators']}")

    subjects = []
    for sid, visits in by_subject.items():
        if sid not in latents:
            raise DataError(f"{d / 'corpus.json'}: no latent state for subject {sid}")
        visits.sort(key=lambda v: v.age_years)
        subjects.append(PhantomSubject(sid, LatentState(**latents[sid]), visits))
    return Corpus(subjects, params)


def corpora_equal(a: Corpus, b: Corpus) -> bool:
    if a.params != b.params or len(a.subjects) != len(b.subjects):
        return False
    for sa, sb in zip(a.subjects, b.subjects):
        if sa.subject_id != sb.subject_id or sa.latent != sb.latent or len(sa.visits) != len(sb.visits):
            return False
        for va, vb in zip(sa.visits, sb.visits):
            if (va.age_years != vb.age_years or va.diagnosis != vb.diagnosis
                    or not np.array_equal(va.image, vb.image)
                    or not np.array_equal(va.mask, vb.mask)
                    or not np.array_equal(va.indicators, vb.indicators, equal_nan=True)):
                return False
    return True
