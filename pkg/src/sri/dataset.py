"""Observational data model, synthetic data generation and CSV ingestion.

A :class:`Dataset` is stored column-wise (numpy arrays) rather than as a list
of records; :meth:`Dataset.observations` yields per-unit :class:`Observation`
views when record access is wanted.

Missing coder labels and gold labels are encoded as ``-1``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Iterator, Sequence

import numpy as np

MISSING = -1


class DataFormatError(ValueError):
    """Raised when a CSV file does not follow the documented schema."""

    def __init__(self, row: int, message: str):
        self.row = row
        super().__init__(f"row {row}: {message}")


@dataclass(frozen=True)
class Observation:
    t: int
    y_embed: np.ndarray
    z: np.ndarray
    s: int
    labels: tuple[int, ...]
    gold: int | None = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-wise container for ``n`` units.

    Attributes
    ----------
    t : (n,) int array of the binary predictor.
    y : (n, d) float array, the unit embeddings.
    z : (n, p) float array of control covariates (``p`` may be 0).
    s : (n,) int array, 1 when the unit was annotated.
    labels : (n, J) int array of coder labels, ``-1`` where ``s == 0``.
    gold : (n,) int array of true labels or ``None``; ``-1`` marks unknown.
    num_classes : number of label categories ``C + 1``.
    pred : optional (n,) array of machine predictions.
    """

    t: np.ndarray
    y: np.ndarray
    z: np.ndarray
    s: np.ndarray
    labels: np.ndarray
    num_classes: int = 2
    gold: np.ndarray | None = None
    pred: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.t)
        if self.y.ndim != 2 or self.z.ndim != 2 or self.labels.ndim != 2:
            raise ValueError("y, z and labels must be 2-D")
        for name in ("y", "z", "s", "labels"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} rows, expected {n}")
        if self.gold is not None and len(self.gold) != n:
            raise ValueError("gold length mismatch")
        if self.pred is not None and len(self.pred) != n:
            raise ValueError("pred length mismatch")
        if n and not np.isin(self.t, (0, 1)).all():
            raise ValueError("t must be 0/1")
        if n and not np.isin(self.s, (0, 1)).all():
            raise ValueError("s must be 0/1")
        lab = self.labels
        if lab.shape[1]:
            present = lab != MISSING
            if (present.any(axis=1) != (self.s == 1)).any() or (present.any(axis=1) != present.all(axis=1)).any():
                raise ValueError("labels must be present for all coders iff s == 1")
            if (lab[present] < 0).any() or (lab[present] >= self.num_classes).any():
                raise ValueError("label outside {0..C}")

    @property
    def n(self) -> int:
        return len(self.t)

    @property
    def d(self) -> int:
        return self.y.shape[1]

    @property
    def p(self) -> int:
        return self.z.shape[1]

    @property
    def num_coders(self) -> int:
        return self.labels.shape[1]

    @property
    def labeled(self) -> np.ndarray:
        return np.flatnonzero(self.s == 1)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(
            self,
            t=self.t[idx], y=self.y[idx], z=self.z[idx], s=self.s[idx],
            labels=self.labels[idx],
            gold=None if self.gold is None else self.gold[idx],
            pred=None if self.pred is None else self.pred[idx],
        )

    def observations(self) -> Iterator[Observation]:
        for i in range(self.n):
            labels = tuple(int(v) for v in self.labels[i]) if self.s[i] else ()
            gold = None
            if self.gold is not None and self.gold[i] != MISSING:
                gold = int(self.gold[i])
            yield Observation(int(self.t[i]), self.y[i], self.z[i], int(self.s[i]), labels, gold)


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic embedding DGP.

    ``coef_seed`` fixes the per-coordinate treatment coefficients separately
    from the unit draws (``None`` reuses ``seed``), so that replications can
    share one population.  ``noise="coordinate"`` draws an independent error
    per embedding coordinate instead of one per unit.  ``z_levels > 0`` adds
    one discrete covariate shifting the treatment probability and the
    embedding.
    """

    n: int
    d: int = 2048
    treat_prob: float = 0.5
    coef_low: float = 0.0
    coef_high: float = 1.0
    intercept: float = 1.0
    slope: float = 0.2
    seed: int = 0
    coef_seed: int | None = None
    noise: str = "unit"
    z_levels: int = 0
    z_treat_shift: float = 0.2
    z_embed_shift: float = 0.5

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("n must be >= 0")
        if self.coef_low > self.coef_high:
            raise ValueError("coef_low must not exceed coef_high")
        if self.noise not in ("unit", "coordinate"):
            raise ValueError("noise must be 'unit' or 'coordinate'")

    def coefficients(self) -> np.ndarray:
        seed = self.seed if self.coef_seed is None else self.coef_seed
        rng = np.random.default_rng([seed, 0xC0EF])
        return rng.uniform(self.coef_low, self.coef_high, size=self.d)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _draw_units(config: SynthConfig, n: int, alpha: np.ndarray, rng: np.random.Generator):
    if config.z_levels > 0:
        z = rng.integers(0, config.z_levels, size=n).astype(float)
        centered = z - (config.z_levels - 1) / 2.0
        prob = np.clip(config.treat_prob + config.z_treat_shift * centered / max(config.z_levels, 1), 0.05, 0.95)
    else:
        z = np.empty(0)
        prob = np.full(n, config.treat_prob)
    t = (rng.random(n) < prob).astype(np.int64)
    if config.noise == "unit":
        eps = rng.standard_normal(n)[:, None]
    else:
        eps = rng.standard_normal((n, config.d))
    y = t[:, None] * alpha[None, :] + eps
    if config.z_levels > 0:
        y = y + config.z_embed_shift * z[:, None]
        z = z[:, None]
    else:
        z = np.empty((n, 0))
    gold = (_sigmoid(config.intercept + config.slope * y.sum(axis=1)) > 0.5).astype(np.int64)
    return t, y, z, gold


def generate_synthetic(config: SynthConfig) -> Dataset:
    """Draw a fully annotated dataset whose single label equals the gold label."""
    alpha = config.coefficients()
    rng = np.random.default_rng([config.seed, 0xDA7A])
    t, y, z, gold = _draw_units(config, config.n, alpha, rng)
    return Dataset(
        t=t, y=y, z=z, s=np.ones(config.n, dtype=np.int64),
        labels=gold[:, None].copy(), num_classes=2, gold=gold,
    )


def oracle_effect(config: SynthConfig, draws: int = 10**6, chunk: int = 50_000) -> tuple[float, float]:
    """Monte Carlo estimate of ``E[L|T=1] - E[L|T=0]`` and its standard error.

    Uses the population coefficients of ``config`` with fresh unit draws.
    """
    alpha = config.coefficients()
    rng = np.random.default_rng([config.seed, 0x0AC1E])
    sums = np.zeros(2)
    sq = np.zeros(2)
    counts = np.zeros(2)
    remaining = draws
    while remaining > 0:
        m = min(chunk, remaining)
        t, _, _, gold = _draw_units(config, m, alpha, rng)
        for level in (0, 1):
            g = gold[t == level]
            sums[level] += g.sum()
            sq[level] += (g * g).sum()
            counts[level] += len(g)
        remaining -= m
    means = sums / counts
    var = sq / counts - means**2
    effect = float(means[1] - means[0])
    se = float(math.sqrt(var[1] / counts[1] + var[0] / counts[0]))
    return effect, se


def flip_labels(labels: np.ndarray, accuracy: float, num_classes: int, rng: np.random.Generator) -> np.ndarray:
    """Keep each label with probability ``accuracy``, else move it uniformly to another class."""
    labels = np.asarray(labels, dtype=np.int64)
    flip = rng.random(len(labels)) >= accuracy
    if num_classes < 2:
        return labels.copy()
    shift = rng.integers(1, num_classes, size=len(labels))
    out = labels.copy()
    out[flip] = (labels[flip] + shift[flip]) % num_classes
    return out


def corrupt_labels(dataset: Dataset, coder_accuracies: Sequence[float], seed: int) -> Dataset:
    """Replace the labels with one independently corrupted copy of gold per coder."""
    if dataset.gold is None or (dataset.gold == MISSING).any():
        raise ValueError("corrupt_labels requires gold labels for every unit")
    for acc in coder_accuracies:
        if not 0.5 < acc <= 1.0:
            raise ValueError(f"coder accuracy {acc} must lie in (0.5, 1.0]")
    rng = np.random.default_rng([seed, 0xC0DE])
    cols = [flip_labels(dataset.gold, acc, dataset.num_classes, rng) for acc in coder_accuracies]
    labels = np.stack(cols, axis=1) if cols else np.empty((dataset.n, 0), dtype=np.int64)
    labels[dataset.s == 0] = MISSING
    return replace(dataset, labels=labels)


def sample_annotations(dataset: Dataset, label_fraction: float, seed: int) -> Dataset:
    """Keep annotations on a uniformly random subset of ``round(n * label_fraction)`` units."""
    if not 0.0 < label_fraction <= 1.0:
        raise ValueError("label_fraction must lie in (0, 1]")
    rng = np.random.default_rng([seed, 0x5A3])
    n_lab = int(round(dataset.n * label_fraction))
    chosen = rng.choice(dataset.n, size=n_lab, replace=False)
    s = np.zeros(dataset.n, dtype=np.int64)
    s[chosen] = 1
    if dataset.num_coders and (dataset.labels[chosen] == MISSING).any():
        raise ValueError("cannot annotate units whose labels were never drawn")
    labels = dataset.labels.copy()
    labels[s == 0] = MISSING
    return replace(dataset, s=s, labels=labels)


@dataclass(frozen=True)
class FoldAssignment:
    fold_of: np.ndarray
    k: int

    def indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def complement(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)


def split_folds(n: int, k: int, seed: int) -> FoldAssignment:
    if k < 1 or k > n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng([seed, 0xF01D])
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[rng.permutation(n)] = np.arange(n) % k
    return FoldAssignment(fold_of=fold_of, k=k)


# -- CSV ---------------------------------------------------------------------

@dataclass(frozen=True)
class CsvSchema:
    """Optional hints for :func:`load_csv`.

    ``num_classes`` overrides the class count inferred from the largest label.
    """

    num_classes: int | None = None


def _column_groups(header: list[str]):
    groups: dict[str, list[tuple[int, int]]] = {"z": [], "y": [], "l": []}
    singles: dict[str, int] = {}
    for pos, name in enumerate(header):
        name = name.strip()
        prefix, _, rest = name.partition("_")
        if prefix in groups and rest.isdigit():
            groups[prefix].append((int(rest), pos))
        elif name in ("t", "s", "gold", "pred"):
            singles[name] = pos
        else:
            raise DataFormatError(1, f"unknown column {name!r}")
    for key in ("t", "s"):
        if key not in singles:
            raise DataFormatError(1, f"missing required column {key!r}")
    ordered = {}
    for prefix, items in groups.items():
        items.sort()
        if [i for i, _ in items] != list(range(len(items))):
            raise DataFormatError(1, f"{prefix}_* columns must be numbered 0..m-1")
        ordered[prefix] = [pos for _, pos in items]
    return singles, ordered


def load_csv(path, schema: CsvSchema | None = None) -> Dataset:
    """Read a dataset from ``t,s,z_*,y_*,l_*[,gold][,pred]`` CSV.

    Row numbers in errors count the header as row 1.
    """
    schema = schema or CsvSchema()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(1, "empty file, header required") from None
        singles, cols = _column_groups(header)
        t, s, z, y, lab, gold, pred = [], [], [], [], [], [], []
        for rownum, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(rownum, f"expected {len(header)} cells, found {len(row)}")
            try:
                ti = int(row[singles["t"]])
                si = int(row[singles["s"]])
                zi = [float(row[c]) for c in cols["z"]]
                yi = [float(row[c]) for c in cols["y"]]
            except ValueError as exc:
                raise DataFormatError(rownum, f"malformed numeric cell ({exc})") from None
            if ti not in (0, 1) or si not in (0, 1):
                raise DataFormatError(rownum, "t and s must be 0 or 1")
            li = []
            for c in cols["l"]:
                cell = row[c].strip()
                if cell == "":
                    if si == 1:
                        raise DataFormatError(rownum, f"s=1 but label column {header[c]} is empty")
                    li.append(MISSING)
                    continue
                if si == 0:
                    raise DataFormatError(rownum, "label present on a row with s=0")
                try:
                    li.append(int(cell))
                except ValueError:
                    raise DataFormatError(rownum, f"label {cell!r} is not an integer") from None
                if li[-1] < 0 or (schema.num_classes is not None and li[-1] >= schema.num_classes):
                    raise DataFormatError(rownum, f"label {li[-1]} outside the class range")
            if "gold" in singles:
                cell = row[singles["gold"]].strip()
                try:
                    gold.append(int(cell) if cell else MISSING)
                except ValueError:
                    raise DataFormatError(rownum, f"gold {cell!r} is not an integer") from None
                if gold[-1] < MISSING or (schema.num_classes is not None and gold[-1] >= schema.num_classes):
                    raise DataFormatError(rownum, f"gold {gold[-1]} outside the class range")
            if "pred" in singles:
                try:
                    pred.append(float(row[singles["pred"]]))
                except ValueError:
                    raise DataFormatError(rownum, "malformed pred cell") from None
            t.append(ti)
            s.append(si)
            z.append(zi)
            y.append(yi)
            lab.append(li)
    n = len(t)
    labels = np.array(lab, dtype=np.int64).reshape(n, len(cols["l"]))
    gold_arr = np.array(gold, dtype=np.int64) if "gold" in singles else None
    if schema.num_classes is not None:
        num_classes = schema.num_classes
    else:
        top = max(int(labels.max(initial=0)), int(gold_arr.max(initial=0)) if gold_arr is not None else 0)
        num_classes = max(top + 1, 2)
    return Dataset(
        t=np.array(t, dtype=np.int64),
        y=np.array(y, dtype=float).reshape(n, len(cols["y"])),
        z=np.array(z, dtype=float).reshape(n, len(cols["z"])),
        s=np.array(s, dtype=np.int64),
        labels=labels,
        num_classes=num_classes,
        gold=gold_arr,
        pred=np.array(pred, dtype=float) if "pred" in singles else None,
    )


def write_csv(dataset: Dataset, path) -> None:
    """Write ``dataset`` in the format read by :func:`load_csv` (floats round-trip exactly)."""
    header = ["t", "s"]
    header += [f"z_{i}" for i in range(dataset.p)]
    header += [f"y_{i}" for i in range(dataset.d)]
    header += [f"l_{i}" for i in range(dataset.num_coders)]
    if dataset.gold is not None:
        header.append("gold")
    if dataset.pred is not None:
        header.append("pred")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(dataset.n):
            row = [str(int(dataset.t[i])), str(int(dataset.s[i]))]
            row += [repr(float(v)) for v in dataset.z[i]]
            row += [repr(float(v)) for v in dataset.y[i]]
            row += ["" if v == MISSING else str(int(v)) for v in dataset.labels[i]]
            if dataset.gold is not None:
                row.append("" if dataset.gold[i] == MISSING else str(int(dataset.gold[i])))
            if dataset.pred is not None:
                row.append(repr(float(dataset.pred[i])))
            w.writerow(row)
