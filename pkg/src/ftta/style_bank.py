"""Bank of source-domain low-band amplitudes and the deployed style pair.

Each training image contributes one masked amplitude. Styles are scored by
the accuracy the classifier reaches on the validation set after restyling it
fully into that style; the deployed pair is the most mutually distant pair
(masked-amplitude L2) among the top-k scorers.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .spectral import load_style_amplitude, masked_low_band, save_style_amplitude, stylize

PREDICT_CHUNK = 256


class StyleBankError(ValueError):
    """Invalid style-bank construction or selection request."""


@dataclass
class StyleEntry:
    style_id: int
    amplitude: np.ndarray  # full grid, zero outside the low-pass mask
    source: str = ""
    score: float | None = None


@dataclass
class StyleBank:
    beta: float
    entries: list[StyleEntry] = field(default_factory=list)
    k: int | None = None
    chosen_pair: tuple[int, int] | None = None

    def entry(self, style_id: int) -> StyleEntry:
        for e in self.entries:
            if e.style_id == style_id:
                return e
        raise StyleBankError(f"no style with id {style_id}")

    def pair_amplitudes(self) -> tuple[np.ndarray, np.ndarray]:
        if self.chosen_pair is None:
            raise StyleBankError("style pair not selected yet; run scoring and selection")
        a, b = self.chosen_pair
        return self.entry(a).amplitude, self.entry(b).amplitude

    @property
    def scored(self) -> bool:
        return all(e.score is not None for e in self.entries)


def worker_count(n_tasks: int) -> int:
    """Worker pool size for style scoring; FTTA_THREADS caps it (default 1)."""
    raw = os.environ.get("FTTA_THREADS", "1")
    try:
        cap = max(1, int(raw))
    except ValueError:
        cap = 1
    return max(1, min(cap, n_tasks))


def build_bank(train_images, beta: float, sources: list[str] | None = None) -> StyleBank:
    """One masked low-band amplitude per training image (unscored)."""
    images = np.asarray(train_images, dtype=np.float64)
    if images.ndim != 3 or images.shape[0] < 2:
        raise StyleBankError(
            f"need at least 2 training images shaped [N, H, W], got shape {images.shape}")
    entries = []
    for i, img in enumerate(images):
        label = sources[i] if sources else f"train[{i}]"
        entries.append(StyleEntry(style_id=i, amplitude=masked_low_band(img, beta),
                                  source=label))
    return StyleBank(beta=float(beta), entries=entries)


def _restyled_accuracy(model, entry: StyleEntry, images: np.ndarray,
                       labels: np.ndarray, beta: float) -> float:
    restyled = np.stack([stylize(img, entry.amplitude, 1.0, beta) for img in images])
    hits = 0
    for start in range(0, len(restyled), PREDICT_CHUNK):
        chunk = restyled[start: start + PREDICT_CHUNK]
        preds = np.argmax(model.predict(chunk), axis=1)
        hits += int((preds == labels[start: start + PREDICT_CHUNK]).sum())
    return hits / len(images)


def score_styles(bank: StyleBank, model, val_images, val_labels) -> StyleBank:
    """Score each style by restyled-validation accuracy (in place)."""
    images = np.asarray(val_images, dtype=np.float64)
    labels = np.asarray(val_labels)
    if images.ndim != 3 or images.shape[0] == 0:
        raise StyleBankError(f"validation set must be nonempty [N, H, W], got {images.shape}")
    if labels.shape != (images.shape[0],):
        raise StyleBankError(
            f"{images.shape[0]} validation images but labels shape {labels.shape}")

    workers = worker_count(len(bank.entries))
    if workers == 1:
        scores = [_restyled_accuracy(model, e, images, labels, bank.beta)
                  for e in bank.entries]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(
                lambda e: _restyled_accuracy(model, e, images, labels, bank.beta),
                bank.entries))
    for entry, score in zip(bank.entries, scores):
        entry.score = float(score)
    return bank


def amplitude_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.sum((a - b) ** 2)))


def select_pair(bank: StyleBank, k: int) -> tuple[int, int]:
    """Most mutually distant pair among the top-k scorers.

    Top-k ties break toward the smaller style id; distance ties toward the
    lexicographically smallest id pair. Records k and the pair on the bank.
    """
    n = len(bank.entries)
    if k < 2:
        raise StyleBankError(f"k must be at least 2, got {k}")
    if k > n:
        raise StyleBankError(f"k={k} exceeds bank size {n}")
    if not bank.scored:
        raise StyleBankError("bank is unscored; run score_styles first")

    ranked = sorted(bank.entries, key=lambda e: (-e.score, e.style_id))[:k]
    best_pair: tuple[int, int] | None = None
    best_dist = -1.0
    for ea, eb in combinations(sorted(ranked, key=lambda e: e.style_id), 2):
        d = amplitude_distance(ea.amplitude, eb.amplitude)
        pair = (ea.style_id, eb.style_id)
        if d > best_dist or (d == best_dist and pair < best_pair):
            best_dist = d
            best_pair = pair
    bank.k = int(k)
    bank.chosen_pair = best_pair
    return best_pair


def save_bank(bank: StyleBank, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {
        "beta": bank.beta,
        "k": bank.k,
        "chosen_pair": list(bank.chosen_pair) if bank.chosen_pair else None,
        "entries": [],
    }
    for e in bank.entries:
        filename = f"style_{e.style_id:04d}.ftta"
        save_style_amplitude(directory / filename, e.amplitude, bank.beta)
        index["entries"].append({"style_id": e.style_id, "file": filename,
                                 "source": e.source, "score": e.score})
    (directory / "index.json").write_text(json.dumps(index, sort_keys=True, indent=1))


def load_bank(directory: str | Path) -> StyleBank:
    directory = Path(directory)
    index = json.loads((directory / "index.json").read_text())
    entries = []
    for item in index["entries"]:
        amplitude, beta = load_style_amplitude(directory / item["file"])
        if beta != index["beta"]:
            raise StyleBankError(
                f"{item['file']}: beta {beta} disagrees with index beta {index['beta']}")
        entries.append(StyleEntry(style_id=item["style_id"], amplitude=amplitude,
                                  source=item.get("source", ""), score=item.get("score")))
    pair = index.get("chosen_pair")
    return StyleBank(beta=float(index["beta"]), entries=entries,
                     k=index.get("k"), chosen_pair=tuple(pair) if pair else None)
