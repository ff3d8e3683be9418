"""Configuration, seeding, confidence intervals, worker pools and atomic result files."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
from scipy import stats

from macrostab.model import DerivedConstants, JumpKernel, Model, RateTable, derive_constants
from macrostab.rng import seed_sequence

# first element of every replica's seed path, one per experiment
EXPERIMENT_KEYS = {
    "stability": 1, "hydro": 2, "propagation": 3, "density": 4, "coalescence": 5,
    "audit": 6, "compare": 7, "flux": 8,
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kernel: JumpKernel
    rates: RateTable
    constants: DerivedConstants
    n_values: tuple[int, ...] = (50, 100, 200)
    eps: float = 0.1
    replicas: int = 200
    seed: int = 1
    out: str | None = None
    threads: int = 1
    audit: bool = False
    event_log: str | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1")
        ns = tuple(int(n) for n in self.n_values)
        if any(n < 1 for n in ns) or any(b <= a for a, b in zip(ns, ns[1:])):
            raise ConfigError(f"n_values must be positive and increasing, got {list(ns)}")
        self.n_values = ns

    def opt(self, key: str, default=None):
        return self.options.get(key, default)

    def echo(self) -> dict:
        c = self.constants
        return {
            "kernel": self.kernel.to_dict(),
            "rates": {"K": self.rates.K, "b": np.asarray(self.rates.b).tolist()},
            "constants": {"L": c.L, "n": c.n, "M0": c.M0, "m_eps": c.m_eps, "eps": c.eps,
                          "V": c.V, "v_L": c.v_L, "outside_hypotheses": c.outside_hypotheses},
            "n_values": list(self.n_values),
            "eps": self.eps,
            "replicas": self.replicas,
            "seed": self.seed,
            "audit": self.audit,
            "options": _jsonable(self.options),
        }


def make_config(model: Model | tuple[JumpKernel, RateTable], *, eps: float | None = None,
                L: float | None = None, **kw) -> ExperimentConfig:
    """Build a config from a model; ``run`` section values fill in unset fields."""
    if isinstance(model, Model):
        kernel, rates, run = model.kernel, model.rates, dict(model.run)
    else:
        (kernel, rates), run = model, {}
    eps = float(eps if eps is not None else run.get("eps", 0.1))
    if L is None and "L" in run:
        L = float(run["L"])
    constants = derive_constants(kernel, rates, eps, L=L)
    for key in ("seed", "replicas", "threads"):
        if kw.get(key) is None and key in run:
            kw[key] = int(run[key])
    if kw.get("n_values") is None and "n_values" in run:
        kw["n_values"] = tuple(run["n_values"])
    kw = {k: v for k, v in kw.items() if v is not None}
    return ExperimentConfig(kernel, rates, constants, eps=eps, **kw)


@dataclass
class ExperimentResult:
    name: str
    config: dict
    rows: list[dict]
    aggregates: list[dict]
    plot: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    wall_time: float = 0.0
    extra_files: dict = field(default_factory=dict)

    def aggregate(self, **match) -> dict:
        for a in self.aggregates:
            if all(a.get(k) == v for k, v in match.items()):
                return a
        raise KeyError(match)

    def summary(self) -> dict:
        return {"experiment": self.name, "config": self.config, "aggregates": self.aggregates,
                "meta": self.meta}

    def write(self, out_dir) -> list[Path]:
        """summary.json, replicas.csv and plot.csv, each written to a temp file and renamed."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "summary.json", out / "replicas.csv", out / "plot.csv"]
        atomic_write(paths[0], json.dumps(_jsonable(self.summary()), indent=2, sort_keys=True) + "\n")
        atomic_write(paths[1], rows_to_csv(self.rows))
        atomic_write(paths[2], rows_to_csv(self.plot or self.aggregates))
        for name, rows in sorted(self.extra_files.items()):
            paths.append(out / name)
            atomic_write(paths[-1], rows_to_csv(rows))
        return paths


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    cols = list(rows[0])
    for r in rows[1:]:
        cols.extend(k for k in r if k not in cols)
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k, "")) for k in cols})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def atomic_write(path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def clopper_pearson(k: int, n: int, alpha: float = 0.05) -> tuple[float, float]:
    """Exact binomial confidence interval for k successes out of n."""
    if n == 0:
        return 0.0, 1.0
    lo = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - alpha / 2, k + 1, n - k))
    return lo, hi


def frequency(k: int, n: int, **extra) -> dict:
    lo, hi = clopper_pearson(k, n)
    return {**extra, "count": int(k), "trials": int(n), "freq": k / n if n else 0.0,
            "ci_lo": lo, "ci_hi": hi}


def non_increasing(freqs: list[dict]) -> bool:
    """Point estimates non-increasing up to one CI width of the later estimate."""
    for a, b in zip(freqs, freqs[1:]):
        if b["freq"] > a["freq"] + (b["ci_hi"] - b["ci_lo"]):
            return False
    return True


def replica_seed(cfg: ExperimentConfig, name: str, *path: int) -> np.random.SeedSequence:
    return seed_sequence(cfg.seed, EXPERIMENT_KEYS[name], *path)


def build_id() -> str:
    """Hash of the package sources, so results can be tied to the code that produced them."""
    root = Path(__file__).resolve().parents[1]
    h = hashlib.sha1()
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


def run_tasks(fn: Callable, tasks: list, threads: int = 1) -> list:
    """Map fn over tasks, in order; a process pool when threads > 1."""
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * threads))))


def meta(cfg: ExperimentConfig, **extra) -> dict[str, Any]:
    return {"seed": cfg.seed, "build_id": build_id(), **extra}
