"""Monte Carlo sweeps over the synthetic design.

A plan is a flat ``key = value`` text file (``#`` starts a comment; lists are
comma-separated)::

    design = perfect            # or noisy
    n = 5000
    d = 64
    label_fraction = 0.1
    machine_accuracies = 0.7, 0.8, 0.9
    coder_accuracies = 0.9      # noisy design only
    replications = 100
    estimators = sri, naive, ppi, dsl
    k = 2
    base_seed = 2024

Replication ``r`` draws its units, annotation sample and estimator seeds from
``(base_seed, r)`` alone, so every grid cell sees the same units (common
random numbers); coder corruption and machine predictions get their own
streams keyed additionally by the grid position.  The SRI estimates do not
depend on the machine predictions and are computed once per replication and
coder accuracy.
"""

from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from functools import lru_cache

import numpy as np

from .dataset import SynthConfig, corrupt_labels, flip_labels, generate_synthetic, oracle_effect, sample_annotations
from .estimators import dsl_estimate, naive_estimate, ppi_estimate, sri_noisy, sri_perfect
from .network import NetworkConfig

PLAN_ESTIMATORS = ("sri", "naive", "ppi", "dsl")
REPORT_COLUMNS = ("design", "machine_acc", "coder_acc", "estimator", "bias", "abs_bias", "rmse", "mean_se",
                  "coverage_95", "mean_runtime", "replications", "failures", "oracle_effect", "oracle_se")
RAW_COLUMNS = ("design", "machine_acc", "coder_acc", "estimator", "replication", "estimate", "se",
               "covered", "runtime", "error")


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class SimPlan:
    design: str = "perfect"
    n: int = 5000
    d: int = 64
    label_fraction: float = 0.1
    machine_accuracies: tuple = (0.8,)
    coder_accuracies: tuple = (0.9,)
    replications: int = 100
    estimators: tuple = PLAN_ESTIMATORS
    k: int | None = None
    base_seed: int = 2024
    learning_rate: float = 1e-3
    max_epochs: int = 200
    batch_size: int = 256
    patience: int = 5
    oracle_draws: int = 10**6
    noise: str = "unit"

    def __post_init__(self):
        if self.design not in ("perfect", "noisy"):
            raise PlanError("design must be 'perfect' or 'noisy'")
        if self.replications < 1:
            raise PlanError("replications must be >= 1")
        if self.n < 2 or self.d < 1:
            raise PlanError("n >= 2 and d >= 1 required")
        if not 0 < self.label_fraction <= 1:
            raise PlanError("label_fraction must lie in (0, 1]")
        for name in ("machine_accuracies", "coder_accuracies"):
            grid = getattr(self, name)
            if not grid:
                raise PlanError(f"{name} must be non-empty")
            for acc in grid:
                if not 0.5 < acc <= 1.0:
                    raise PlanError(f"{name}: accuracy {acc} outside (0.5, 1.0]")
        if not self.estimators or set(self.estimators) - set(PLAN_ESTIMATORS):
            raise PlanError(f"estimators must be a non-empty subset of {', '.join(PLAN_ESTIMATORS)}")
        if self.k is not None and self.k < 2:
            raise PlanError("k must be >= 2")

    @property
    def folds(self) -> int:
        if self.k is not None:
            return self.k
        return 2 if self.design == "perfect" else 5

    @property
    def coder_grid(self) -> tuple:
        return self.coder_accuracies if self.design == "noisy" else (None,)

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(learning_rate=self.learning_rate, max_epochs=self.max_epochs,
                             batch_size=self.batch_size, patience=self.patience)

    def synth_config(self, seed: int, n: int | None = None) -> SynthConfig:
        return SynthConfig(n=self.n if n is None else n, d=self.d, seed=seed, coef_seed=self.base_seed,
                           noise=self.noise)


_PLAN_KEYS = {f.name for f in fields(SimPlan)}


def parse_plan(text: str) -> SimPlan:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PlanError(f"plan line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _PLAN_KEYS:
            raise PlanError(f"plan line {lineno}: unknown key {key!r}")
        if key in values:
            raise PlanError(f"plan line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _cast(key, value)
        except ValueError:
            raise PlanError(f"plan line {lineno}: bad value {value!r} for {key}") from None
    return SimPlan(**values)


def _cast(key, value):
    if key in ("machine_accuracies", "coder_accuracies"):
        return tuple(float(v) for v in value.split(",") if v.strip())
    if key == "estimators":
        return tuple(v.strip() for v in value.split(",") if v.strip())
    if key in ("design", "noise"):
        return value
    if key in ("label_fraction", "learning_rate"):
        return float(value)
    if key == "k" and value.lower() in ("", "auto", "none"):
        return None
    number = float(value)
    if number != int(number):
        raise ValueError(value)
    return int(number)


def format_plan(plan: SimPlan) -> str:
    lines = []
    for key, value in asdict(plan).items():
        if isinstance(value, tuple):
            value = ", ".join(str(v) for v in value)
        lines.append(f"{key} = {'auto' if value is None else value}")
    return "\n".join(lines) + "\n"


def load_plan(path) -> SimPlan:
    with open(path, encoding="utf-8") as fh:
        return parse_plan(fh.read())


# -- replications -------------------------------------------------------------------

def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


@lru_cache(maxsize=16)
def _oracle(d, base_seed, noise, draws):
    cfg = SynthConfig(n=0, d=d, seed=derive_seed(base_seed, 0x0AC1E), coef_seed=base_seed, noise=noise)
    return oracle_effect(cfg, draws=draws)


def plan_oracle(plan: SimPlan) -> tuple[float, float]:
    return _oracle(plan.d, plan.base_seed, plan.noise, plan.oracle_draws)


def _record(plan, machine_acc, coder_acc, name, rep, oracle, est=None, runtime=0.0, error=""):
    row = {"design": plan.design, "machine_acc": machine_acc, "coder_acc": coder_acc, "estimator": name,
           "replication": rep, "estimate": math.nan, "se": math.nan, "covered": math.nan,
           "runtime": runtime, "error": error}
    if est is not None:
        lo, hi = est.ci
        row.update(estimate=est.diff, se=est.se_diff, covered=float(lo <= oracle <= hi))
    return row


def _timed(fn, *args, **kwargs):
    start = time.perf_counter()
    try:
        est = fn(*args, **kwargs)
    except Exception as exc:  # a failed replication is recorded, not fatal
        return None, time.perf_counter() - start, f"{type(exc).__name__}: {exc}".replace("\n", " ")
    return est, time.perf_counter() - start, ""


def run_replication(plan: SimPlan, rep: int) -> list[dict]:
    """Every estimator on every grid cell for one replication."""
    oracle, _ = plan_oracle(plan)
    full = generate_synthetic(plan.synth_config(derive_seed(plan.base_seed, rep, 0)))
    annot_seed = derive_seed(plan.base_seed, rep, 3)
    est_seed = derive_seed(plan.base_seed, rep, 4) % (2**31)
    rows = []
    for ci, coder_acc in enumerate(plan.coder_grid):
        if coder_acc is None:
            data = sample_annotations(full, plan.label_fraction, annot_seed)
            sri_fn = sri_perfect
        else:
            noisy = corrupt_labels(full, [coder_acc, coder_acc], derive_seed(plan.base_seed, rep, 1, ci))
            data = sample_annotations(noisy, plan.label_fraction, annot_seed)
            sri_fn = sri_noisy
        sri_result = None
        if "sri" in plan.estimators:
            sri_result = _timed(sri_fn, data, plan.folds, plan.network_config(), est_seed)
        for mi, machine_acc in enumerate(plan.machine_accuracies):
            rng = np.random.default_rng(derive_seed(plan.base_seed, rep, 2, mi))
            preds = flip_labels(full.gold, machine_acc, full.num_classes, rng).astype(float)
            for name in plan.estimators:
                if name == "sri":
                    est, runtime, err = sri_result
                else:
                    fn = {"naive": naive_estimate, "ppi": ppi_estimate, "dsl": dsl_estimate}[name]
                    est, runtime, err = _timed(fn, data, preds)
                rows.append(_record(plan, machine_acc, coder_acc, name, rep, oracle, est, runtime, err))
    return rows


def _worker_count(workers):
    if workers is None:
        workers = int(os.environ.get("SRI_WORKERS", "1") or 1)
    return max(1, workers)


def run_replications(plan: SimPlan, workers: int | None = None, reps=None) -> list[dict]:
    reps = list(range(plan.replications)) if reps is None else list(reps)
    workers = _worker_count(workers)
    plan_oracle(plan)
    if workers == 1:
        chunks = [run_replication(plan, r) for r in reps]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run_replication, [plan] * len(reps), reps))
    return sorted((row for chunk in chunks for row in chunk), key=_raw_key(plan))


def _raw_key(plan):
    order = {name: i for i, name in enumerate(plan.estimators)}

    def key(row):
        coder = -1.0 if row["coder_acc"] is None else row["coder_acc"]
        return (coder, row["machine_acc"], order[row["estimator"]], row["replication"])

    return key


# -- aggregation ---------------------------------------------------------------------

@dataclass
class SimulationReport:
    rows: list
    oracle_effect: float
    oracle_se: float
    raw: list

    def to_csv(self, timing: bool = False) -> str:
        return report_csv(self.rows, timing)

    def raw_csv(self, timing: bool = False) -> str:
        return _csv(RAW_COLUMNS, [_format_raw(r, timing) for r in self.raw])


def aggregate(raw: list[dict], oracle: float, oracle_se: float, plan: SimPlan) -> list[dict]:
    groups = {}
    for row in sorted(raw, key=_raw_key(plan)):
        groups.setdefault((row["coder_acc"], row["machine_acc"], row["estimator"]), []).append(row)
    out = []
    for (coder_acc, machine_acc, name), rows in groups.items():
        ok = [r for r in rows if not r["error"]]
        est = np.array([r["estimate"] for r in ok])
        err = est - oracle
        row = {"design": plan.design, "machine_acc": machine_acc, "coder_acc": coder_acc, "estimator": name,
               "replications": len(rows), "failures": len(rows) - len(ok),
               "oracle_effect": oracle, "oracle_se": oracle_se}
        if ok:
            bias = float(err.mean())
            row.update(bias=bias, abs_bias=abs(bias), rmse=float(np.sqrt((err**2).mean())),
                       mean_se=float(np.mean([r["se"] for r in ok])),
                       coverage_95=float(np.mean([r["covered"] for r in ok])),
                       mean_runtime=float(np.mean([r["runtime"] for r in ok])))
        else:
            row.update(bias=math.nan, abs_bias=math.nan, rmse=math.nan, mean_se=math.nan,
                       coverage_95=math.nan, mean_runtime=math.nan)
        out.append(row)
    return out


def run_monte_carlo(plan: SimPlan, workers: int | None = None) -> SimulationReport:
    raw = run_replications(plan, workers)
    oracle, oracle_se = plan_oracle(plan)
    return SimulationReport(aggregate(raw, oracle, oracle_se, plan), oracle, oracle_se, raw)


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def _csv(columns, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def report_csv(rows: list[dict], timing: bool = False) -> str:
    """Report rows as CSV; runtimes are blank unless ``timing`` (they are not reproducible)."""
    return _csv(REPORT_COLUMNS, [r if timing else {**r, "mean_runtime": None} for r in rows])


def _format_raw(row, timing):
    return row if timing else {**row, "runtime": None}


def read_report(text: str) -> list[dict]:
    """Parse a report CSV back into rows (numbers as floats, blanks as None)."""
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        row = {}
        for key, value in rec.items():
            if value == "":
                row[key] = None
            elif key in ("design", "estimator", "error"):
                row[key] = value
            else:
                try:
                    row[key] = float(value)
                except ValueError:
                    row[key] = value
        rows.append(row)
    return rows


def format_table(rows: list[dict], columns=None) -> str:
    """Fixed-width table of report rows for terminal display."""
    columns = columns or [c for c in REPORT_COLUMNS if any(r.get(c) is not None for r in rows)]

    def cell(column, v):
        if v is None:
            return "-"
        if column in ("replications", "failures"):
            return str(int(v))
        if isinstance(v, float):
            return "nan" if math.isnan(v) else f"{v:.4f}"
        return str(v)

    body = [[cell(c, r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) if body else len(c) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.rjust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines)


def paper_scale(plan: SimPlan) -> SimPlan:
    """The full-size design: 20,000 units, 2048-dimensional embeddings, 200 replications."""
    return replace(plan, n=20000, d=2048, replications=200, learning_rate=2e-5)
