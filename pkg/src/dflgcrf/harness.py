"""Missingness sweeps: fit every model per (mechanism, fraction, seed) and score R²."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .baselines import BaselineSpec, Kind, fit_baseline
from .data import (MAX_MISSING_FRACTION, Mechanism, MissingnessSpec, TemporalDataset,
                   induce_missingness, load_dataset, masked_nodes, temporal_split)
from .dfl import DflArch, DflOptions, dfl_predict, fit_dfl
from .synth import GeneratorConfig, generate_network

log = logging.getLogger(__name__)

DFL_KIND = "DFL_GCRF"
DEFAULT_FRACTIONS = (0.0, 0.05, 0.10, 0.20, 0.40, 0.60, 0.80)
RESULT_COLUMNS = ("model", "mechanism", "fraction", "seed", "r2", "status")


class MetricError(ValueError):
    pass


def r_squared(y, mu) -> float:
    """Coefficient of determination clipped to ``[0, 1]``."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if y.shape != mu.shape or y.ndim != 1 or len(y) < 2:
        raise MetricError("need two equal-length vectors with at least two entries")
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0:
        raise MetricError("R² is undefined for a constant target")
    r2 = 1.0 - np.sum((y - mu) ** 2) / ss_tot
    return float(min(1.0, max(0.0, r2)))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelEntry:
    kind: str
    hyperparams: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind != DFL_KIND:
            Kind(self.kind)
            BaselineSpec(self.kind, self.hyperparams)
        else:
            unknown = set(self.hyperparams) - set(DflArch.__dataclass_fields__) - set(
                DflOptions.__dataclass_fields__)
            if unknown:
                raise ValueError(f"unknown DFL settings: {sorted(unknown)}")

    def dfl_settings(self, seed: int) -> tuple[DflArch, DflOptions]:
        a = {k: v for k, v in self.hyperparams.items() if k in DflArch.__dataclass_fields__}
        o = {k: v for k, v in self.hyperparams.items() if k in DflOptions.__dataclass_fields__}
        a.setdefault("seed", seed)
        return DflArch(**a), DflOptions(**o)


@dataclass(frozen=True)
class SweepConfig:
    models: tuple
    seeds: tuple = (0,)
    mechanisms: tuple = (Mechanism.AT_RANDOM,)
    fractions: tuple = DEFAULT_FRACTIONS
    split: int | None = None
    data_path: str | None = None
    generator: GeneratorConfig | None = None

    def __post_init__(self):
        models = tuple(m if isinstance(m, ModelEntry) else ModelEntry(**m) if isinstance(m, dict)
                       else ModelEntry(m) for m in self.models)
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "mechanisms", tuple(Mechanism(m) for m in self.mechanisms))
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if isinstance(self.generator, dict):
            object.__setattr__(self, "generator", GeneratorConfig.from_dict(self.generator))
        if not models or not self.seeds:
            raise ValueError("sweep needs at least one model and one seed")
        if not self.mechanisms or not self.fractions:
            raise ValueError("sweep needs at least one mechanism and one fraction")
        if any(not 0 <= f <= MAX_MISSING_FRACTION for f in self.fractions):
            raise ValueError("fractions must lie in [0, 0.8]")
        if (self.data_path is None) == (self.generator is None):
            raise ValueError("give exactly one of data_path and generator")

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        d = dict(d)
        if "fractions" in d:
            d["fractions"] = tuple(d["fractions"])
        for key in ("models", "seeds", "mechanisms"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        return {"models": [asdict(m) for m in self.models], "seeds": list(self.seeds),
                "mechanisms": [m.value for m in self.mechanisms], "fractions": list(self.fractions),
                "split": self.split, "data_path": self.data_path,
                "generator": None if self.generator is None else asdict(self.generator)}

    def dataset(self, seed: int) -> TemporalDataset:
        """Pristine dataset for one sweep seed (a fresh draw when synthetic)."""
        if self.generator is not None:
            gen = GeneratorConfig(**{**asdict(self.generator), "seed": self.generator.seed + seed})
            return generate_network(gen)[0]
        return load_dataset(self.data_path)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    model: str
    mechanism: str
    fraction: float
    seed: int
    r2: float
    status: str = "ok"


@dataclass
class EvalReport:
    rows: list
    timings: list = field(default_factory=list)

    def cells(self):
        out = {}
        for r in self.rows:
            out.setdefault((r.model, r.mechanism, r.fraction), []).append(r)
        return out

    def aggregates(self) -> dict:
        """Median and interquartile range of R² over seeds for every cell."""
        agg = {}
        for key, rows in self.cells().items():
            vals = np.array([r.r2 for r in rows if r.status == "ok"])
            if vals.size:
                q1, med, q3 = np.percentile(vals, [25, 50, 75])
                agg[key] = {"median": float(med), "iqr": float(q3 - q1), "n": int(vals.size),
                            "failed": len(rows) - int(vals.size)}
            else:
                agg[key] = {"median": float("nan"), "iqr": float("nan"), "n": 0,
                            "failed": len(rows)}
        return agg

    def median(self, model: str, mechanism: str, fraction: float) -> float:
        mech = Mechanism(mechanism).value
        return self.aggregates()[(model, mech, float(fraction))]["median"]

    @property
    def n_failed(self) -> int:
        return sum(r.status != "ok" for r in self.rows)

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows]}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls([ReportRow(**r) for r in d["rows"]])


def _fit_predict(entry: ModelEntry, seed: int, train, test) -> np.ndarray:
    if entry.kind == DFL_KIND:
        arch, opts = entry.dfl_settings(seed)
        model = fit_dfl(train, arch, opts)
        return dfl_predict(model, test.features[-1])
    model = fit_baseline(BaselineSpec(entry.kind, entry.hyperparams, seed), train)
    return model.predict(test.features[-1])


def run_sweep(cfg: SweepConfig) -> EvalReport:
    """Evaluate every configured model on every (seed, mechanism, fraction) cell.

    All models in a cell see the same masked copy of the pristine data.
    Cells with identical masks (e.g. fraction 0 under every mechanism) are
    computed once. A model failure marks its row failed and the sweep goes on.
    """
    rows, timings = [], []
    for seed in cfg.seeds:
        pristine = cfg.dataset(seed)
        t = cfg.split if cfg.split is not None else pristine.n_steps - 1
        cache = {}
        for mech in cfg.mechanisms:
            for frac in cfg.fractions:
                spec = MissingnessSpec(mech, frac, seed)
                key = tuple(masked_nodes(pristine, spec, train_steps=t))
                if key not in cache:
                    ds = induce_missingness(pristine, spec, train_steps=t) if frac > 0 else pristine
                    train, test = temporal_split(ds, t)
                    y_test = test.targets[-1]
                    results = []
                    for entry in cfg.models:
                        start = time.perf_counter()
                        try:
                            r2, status = r_squared(y_test, _fit_predict(entry, seed, train, test)), "ok"
                        except Exception as exc:  # noqa: BLE001 - a failed cell must not end the sweep
                            log.warning("%s failed (seed=%d, %s, %.2f): %s", entry.kind, seed,
                                        mech.value, frac, exc)
                            r2, status = float("nan"), "failed"
                        results.append((entry.kind, r2, status, time.perf_counter() - start))
                    cache[key] = results
                for kind, r2, status, elapsed in cache[key]:
                    rows.append(ReportRow(kind, mech.value, frac, seed, r2, status))
                    timings.append((kind, mech.value, frac, seed, elapsed))
                log.info("seed %d %s %.2f done", seed, mech.value, frac)
    return EvalReport(rows, timings)


def _num(x: float) -> str:
    return repr(float(x))


def emit_report(report: EvalReport, out_dir) -> list[Path]:
    """Write ``results.csv``, one curve CSV per (mechanism, model) and ``summary.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "results.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in report.rows:
            w.writerow([r.model, r.mechanism, _num(r.fraction), r.seed, _num(r.r2), r.status])
    written.append(path)

    agg = report.aggregates()
    curve_dir = out / "curves"
    curve_dir.mkdir(exist_ok=True)
    models = list(dict.fromkeys(r.model for r in report.rows))
    mechs = list(dict.fromkeys(r.mechanism for r in report.rows))
    for mech in mechs:
        for model in models:
            pts = sorted((f, a["median"]) for (m, me, f), a in agg.items() if m == model and me == mech)
            path = curve_dir / f"{mech}__{model}.csv"
            with path.open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["fraction", "median_r2"])
                for f, med in pts:
                    w.writerow([_num(f), _num(med)])
            written.append(path)

    fractions = sorted({r.fraction for r in report.rows})
    base = 0.0 if 0.0 in fractions else fractions[0]
    summary = []
    for model in models:
        vals = [a["median"] for (m, me, f), a in agg.items() if m == model and f == base]
        summary.append((model, float(np.nanmedian(vals)) if np.isfinite(vals).any() else float("nan")))
    summary.sort(key=lambda kv: (-kv[1] if np.isfinite(kv[1]) else np.inf, kv[0]))
    width = max(len("model"), *(len(m) for m in models))
    lines = [f"Median R^2 at missing fraction {base:g}", "",
             f"{'model':<{width}}  R^2", f"{'-' * width}  ------"]
    lines += [f"{m:<{width}}  {v:.4f}" for m, v in summary]
    if report.n_failed:
        lines += ["", f"{report.n_failed} failed cell(s)"]
    path = out / "summary.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(path)
    return written


def read_results(path) -> list[ReportRow]:
    """Parse a ``results.csv`` written by :func:`emit_report`."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [ReportRow(r["model"], r["mechanism"], float(r["fraction"]), int(r["seed"]),
                          float(r["r2"]), r["status"]) for r in reader]


def save_report(report: EvalReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=1) + "\n", encoding="utf-8")


def load_report(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
