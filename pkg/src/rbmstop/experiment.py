"""End-to-end experiment runner: config, multi-seed training, aggregation, sampling.

Configs are INI files (section headers, ``key = value`` lines)::

    [dataset]
    family = ran
    n_visible = 10
    seed = 0

    [model]
    n_hidden = 10

    [training]
    learning_rate = 0.02
    n_gibbs = 1

    [monitors]
    xi = DA:0, DA:1, DA:2, DA:3, DS:1
    sampled_xi = 1

    [run]
    seeds = 0-9
    out = runs/ran10

Anything omitted takes the defaults of :class:`ExperimentConfig`.
"""

from __future__ import annotations

import configparser
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import Dataset, generate, save_dataset
from .errors import TrainingDiverged
from .metrics import (
    ExactLikelihoodMonitor,
    ReconstructionMonitor,
    StopDecision,
    TraceSeries,
    XiMonitor,
    aggregate,
    detect_stop,
    write_csv,
    write_metadata,
)
from .model import BinaryState, RbmParams, gibbs_chain, spawn_rngs
from .neighborhood import build_index, sample_neighborhood
from .training import InitSpec, TrainConfig, train

log = logging.getLogger(__name__)

# Picked by sweeping until the seed-averaged log-likelihood shows a clear
# interior maximum within 50000 epochs (see README).
DEFAULT_LEARNING_RATES = {"bs": 0.5, "lse": 0.3, "ran": 0.02}
DEFAULT_HIDDEN = {"bs": 8, "lse": 10, "ran": 10}
EXACT_DEFAULT_MAX_VISIBLE = 20

VARIANTS = ("DA", "DS")


class ConfigError(ValueError):
    pass


def _family_key(family: str) -> str:
    f = family.lower()
    if f in ("bs", "bars_and_stripes"):
        return "bs"
    if f in ("lse", "labeled_shifter"):
        return "lse"
    if f.startswith("ran"):
        return "ran"
    raise ConfigError(f"unknown dataset family {family!r}")


@dataclass
class ExperimentConfig:
    family: str = "ran"
    n_visible: int | None = 10
    data_seed: int = 0
    shift_mode: str = "circular"
    n_hidden: int | None = None
    weight_std: float = 0.01
    train: TrainConfig | None = None  # None: protocol defaults with the family's learning rate
    exact_ll: bool | None = None  # None: on when n_visible <= exact_max_visible
    exact_max_visible: int = EXACT_DEFAULT_MAX_VISIBLE
    reconstruction: bool = True
    xi: list[tuple[str, int]] = field(default_factory=lambda: [("DA", d) for d in range(4)])
    sampled_xi: list[int] = field(default_factory=list)
    sampled_size: int | None = None
    sampled_include_training: bool = True
    sum_probs: bool = True
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    workers: int = 1
    out: str = "runs/experiment"
    keep_params: bool = True
    smoothing_window: int = 5
    patience: int = 0

    def __post_init__(self):
        key = _family_key(self.family)
        if key == "ran" and (self.n_visible is None or self.n_visible % 2):
            raise ConfigError("random datasets need an even n_visible")
        if key != "ran":
            self.n_visible = None
        if self.n_hidden is None:
            self.n_hidden = DEFAULT_HIDDEN[key]
        if self.n_hidden < 1:
            raise ConfigError("n_hidden must be >= 1")
        if self.train is None:
            self.train = TrainConfig(learning_rate=DEFAULT_LEARNING_RATES[key])
        for variant, d in self.xi:
            if variant not in VARIANTS or d < 0:
                raise ConfigError(f"bad xi monitor {variant}:{d}")
        if any(d < 0 for d in self.sampled_xi):
            raise ConfigError("sampled_xi distances must be >= 0")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.smoothing_window < 1:
            raise ConfigError("smoothing_window must be >= 1")

    @property
    def d_max(self) -> int:
        return max([d for _, d in self.xi] + self.sampled_xi + [0])

    def dataset(self) -> Dataset:
        return generate(self.family, self.n_visible, self.data_seed, self.shift_mode)


def _parse_bool(text: str) -> bool | None:
    t = text.strip().lower()
    if t in ("auto", ""):
        return None
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_int_list(text: str) -> list[int]:
    """``"0-3, 7"`` -> ``[0, 1, 2, 3, 7]``."""
    out: list[int] = []
    for part in text.replace(" ", "").split(","):
        if "-" in part:
            first, last = part.split("-", 1)
            out.extend(range(int(first), int(last) + 1))
        elif part:
            out.append(int(part))
    return out


def _parse_xi(text: str) -> list[tuple[str, int]]:
    out = []
    for part in text.replace(" ", "").split(","):
        if part:
            variant, _, d = part.partition(":")
            out.append((variant.upper(), int(d)))
    return out


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), overrides)


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Build a config from INI text; ``overrides`` use the same (section-free) keys."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    flat: dict[str, str] = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            flat[key] = value
    for key, value in (overrides or {}).items():
        if value is not None:
            flat[key] = str(value)
    try:
        return _from_flat(flat)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


_TRAIN_KEYS = {
    "n_gibbs": int, "learning_rate": float, "momentum": float, "epochs": int,
    "measure_every": int, "weight_decay": float, "max_abs_weight": float,
}


def _from_flat(flat: dict[str, str]) -> ExperimentConfig:
    known = set(_TRAIN_KEYS) | {
        "family", "n_visible", "seed", "data_seed", "shift_mode", "n_hidden", "weight_std",
        "batch_size", "exact_ll", "exact_max_visible", "reconstruction", "xi", "sampled_xi",
        "sampled_size", "sampled_include_training", "sum_probs", "seeds", "workers", "out",
        "keep_params", "smoothing_window", "patience",
    }
    unknown = set(flat) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    family = flat.get("family", "ran")
    train_kwargs = {k: conv(flat[k]) for k, conv in _TRAIN_KEYS.items() if k in flat}
    train_kwargs.setdefault("learning_rate", DEFAULT_LEARNING_RATES[_family_key(family)])
    if "batch_size" in flat and flat["batch_size"].strip().lower() not in ("", "full", "none"):
        train_kwargs["batch_size"] = int(flat["batch_size"])
    kwargs: dict = {"train": TrainConfig(**train_kwargs)}
    kwargs["family"] = family
    if "n_visible" in flat:
        kwargs["n_visible"] = int(flat["n_visible"])
    elif family.lower().startswith("ran") and family[3:].isdigit():
        kwargs["n_visible"] = int(family[3:])
    elif not family.lower().startswith("ran"):
        kwargs["n_visible"] = None
    seed_key = "data_seed" if "data_seed" in flat else "seed"
    if seed_key in flat:
        kwargs["data_seed"] = int(flat[seed_key])
    for key, conv in (("shift_mode", str), ("weight_std", float), ("exact_max_visible", int),
                      ("sampled_size", int), ("workers", int), ("out", str),
                      ("smoothing_window", int), ("patience", int), ("n_hidden", int)):
        if key in flat:
            kwargs[key] = conv(flat[key].strip())
    for key in ("exact_ll", "reconstruction", "sampled_include_training", "sum_probs", "keep_params"):
        if key in flat:
            value = _parse_bool(flat[key])
            if value is None and key != "exact_ll":
                raise ConfigError(f"{key} must be true or false")
            kwargs[key] = value
    if "xi" in flat:
        kwargs["xi"] = _parse_xi(flat["xi"])
    if "sampled_xi" in flat:
        kwargs["sampled_xi"] = parse_int_list(flat["sampled_xi"])
    if "seeds" in flat:
        kwargs["seeds"] = parse_int_list(flat["seeds"])
    return ExperimentConfig(**kwargs)


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical INI text; ``load_config(dump_config(cfg))`` reproduces ``cfg``."""
    parser = configparser.ConfigParser()
    parser["dataset"] = {"family": cfg.family, "data_seed": str(cfg.data_seed),
                         "shift_mode": cfg.shift_mode}
    if cfg.n_visible is not None:
        parser["dataset"]["n_visible"] = str(cfg.n_visible)
    parser["model"] = {"n_hidden": str(cfg.n_hidden), "weight_std": repr(cfg.weight_std)}
    t = cfg.train
    parser["training"] = {
        "n_gibbs": str(t.n_gibbs), "learning_rate": repr(t.learning_rate),
        "momentum": repr(t.momentum), "epochs": str(t.epochs),
        "measure_every": str(t.measure_every),
        "batch_size": "full" if t.batch_size is None else str(t.batch_size),
        "weight_decay": repr(t.weight_decay), "max_abs_weight": repr(t.max_abs_weight),
    }
    parser["monitors"] = {
        "exact_ll": "auto" if cfg.exact_ll is None else str(cfg.exact_ll).lower(),
        "exact_max_visible": str(cfg.exact_max_visible),
        "reconstruction": str(cfg.reconstruction).lower(),
        "xi": ", ".join(f"{v}:{d}" for v, d in cfg.xi),
        "sampled_xi": ", ".join(str(d) for d in cfg.sampled_xi),
        "sampled_include_training": str(cfg.sampled_include_training).lower(),
        "sum_probs": str(cfg.sum_probs).lower(),
    }
    if cfg.sampled_size is not None:
        parser["monitors"]["sampled_size"] = str(cfg.sampled_size)
    parser["run"] = {
        "seeds": ", ".join(str(s) for s in cfg.seeds),
        "workers": str(cfg.workers),
        "out": cfg.out,
        "keep_params": str(cfg.keep_params).lower(),
        "smoothing_window": str(cfg.smoothing_window),
        "patience": str(cfg.patience),
    }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def exact_enabled(cfg: ExperimentConfig, n_visible: int) -> bool:
    return n_visible <= cfg.exact_max_visible if cfg.exact_ll is None else cfg.exact_ll


def build_monitors(cfg: ExperimentConfig, dataset: Dataset, index, seed: int) -> list:
    exact = exact_enabled(cfg, dataset.n_visible)
    monitors: list = []
    if exact:
        monitors.append(ExactLikelihoodMonitor(dataset))
    if cfg.reconstruction:
        monitors.append(ReconstructionMonitor(dataset, cfg.train.n_gibbs))
    for variant, d in cfg.xi:
        keys = index.ball_keys(d) if variant == "DA" else index.shell_keys(d)
        if keys.size == 0:
            raise ConfigError(f"neighborhood {variant} at d={d} is empty for {dataset.name}")
        monitors.append(XiMonitor(dataset, f"{variant}_d{d}", keys, exact and cfg.sum_probs))
    if cfg.sampled_xi:
        rng = sampled_neighborhood_rng(seed)
        size = cfg.sampled_size or len(dataset)
        for d in cfg.sampled_xi:
            sample = sample_neighborhood(index, d, size, rng, cfg.sampled_include_training)
            monitors.append(XiMonitor(dataset, f"DAs_d{d}", sample.keys, exact and cfg.sum_probs))
    return monitors


def sampled_neighborhood_rng(seed: int) -> np.random.Generator:
    # stream 4 of the run seed; streams 0-3 belong to training
    return spawn_rngs(seed, 5)[4]


@dataclass
class RunResult:
    seed: int
    trace: TraceSeries
    diverged_at: int | None = None


def run_single(cfg: ExperimentConfig, seed: int, dataset: Dataset | None = None,
               index=None) -> RunResult:
    dataset = dataset if dataset is not None else cfg.dataset()
    if index is None:
        index = build_index(dataset, cfg.d_max)
    monitors = build_monitors(cfg, dataset, index, seed)
    init = InitSpec(cfg.n_hidden, cfg.weight_std)
    try:
        trace = train(dataset, cfg.train, init, seed, monitors, keep_params=cfg.keep_params,
                      max_visible=max(cfg.exact_max_visible, dataset.n_visible))
        diverged = None
    except TrainingDiverged as exc:
        log.warning("seed %d: %s", seed, exc)
        trace, diverged = exc.trace, exc.epoch
    trace.metadata.update({
        "dataset": dataset.generator_spec,
        "n_hidden": str(cfg.n_hidden),
        "learning_rate": repr(cfg.train.learning_rate),
    })
    return RunResult(seed, trace, diverged)


def _worker(args):
    cfg, seed = args
    return run_single(cfg, seed)


def save_params_snapshots(trace: TraceSeries, path) -> None:
    epochs = sorted(trace.params)
    np.savez_compressed(
        path,
        epochs=np.array(epochs, dtype=np.int64),
        W=np.array([trace.params[e].W for e in epochs]),
        b=np.array([trace.params[e].b for e in epochs]),
        c=np.array([trace.params[e].c for e in epochs]),
    )


def load_params(path, epoch: int | None = None) -> RbmParams:
    """Parameters saved at ``epoch`` (the last snapshot when omitted)."""
    with np.load(path) as data:
        epochs = list(data["epochs"])
        if epoch is None:
            k = len(epochs) - 1
        elif epoch in epochs:
            k = epochs.index(epoch)
        else:
            raise KeyError(f"no snapshot at epoch {epoch} in {path}")
        return RbmParams(data["W"][k], data["b"][k], data["c"][k])


def trace_path(out: Path, seed: int) -> Path:
    return out / f"trace_seed{seed}.csv"


def params_path(out: Path, seed: int) -> Path:
    return out / f"params_seed{seed}.npz"


def stop_columns(trace: TraceSeries) -> list[str]:
    return [c for c in trace.columns if c.startswith(("log_likelihood", "log_xi"))]


def format_stop_report(aggregate_trace: TraceSeries, traces: dict[int, TraceSeries],
                       window: int, patience: int) -> tuple[str, dict]:
    lines = [f"# smoothing_window={window} patience={patience}",
             "criterion\tscope\tstop_epoch\tvalue"]
    stops: dict = {}
    for column in stop_columns(aggregate_trace):
        decision = detect_stop(aggregate_trace, column, window, patience)
        stops[(column, "mean")] = decision
        lines.append(f"{column}\tmean\t{decision.stop_epoch}\t{decision.trace_value_at_stop!r}")
        for seed, trace in traces.items():
            if len(trace) >= window:
                d = detect_stop(trace, column, window, patience)
                stops[(column, seed)] = d
                lines.append(f"{column}\tseed{seed}\t{d.stop_epoch}\t{d.trace_value_at_stop!r}")
    return "\n".join(lines) + "\n", stops


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Train every seed, then write traces, the seed average and a stop report.

    Returns a summary with the output directory, per-seed divergence epochs
    and the stop decisions keyed by ``(column, "mean" | seed)``.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = cfg.dataset()
    (out / "config.ini").write_text(dump_config(cfg))
    save_dataset(dataset, out / "dataset.txt")

    if cfg.workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_worker, [(cfg, s) for s in cfg.seeds]))
    else:
        index = build_index(dataset, cfg.d_max)
        results = [run_single(cfg, s, dataset, index) for s in cfg.seeds]

    traces = {}
    for res in results:
        write_csv(res.trace, trace_path(out, res.seed))
        write_metadata(res.trace.metadata, str(trace_path(out, res.seed)) + ".meta")
        if cfg.keep_params and res.trace.params:
            save_params_snapshots(res.trace, params_path(out, res.seed))
        traces[res.seed] = res.trace

    agg = aggregate(list(traces.values()))
    agg.metadata["seeds"] = ",".join(str(s) for s in cfg.seeds)
    write_csv(agg, out / "aggregate.csv")
    write_metadata(agg.metadata, str(out / "aggregate.csv") + ".meta")
    stops: dict = {}
    if len(agg) >= cfg.smoothing_window:
        report, stops = format_stop_report(agg, traces, cfg.smoothing_window, cfg.patience)
        (out / "stops.tsv").write_text(report)
    diverged = {r.seed: r.diverged_at for r in results if r.diverged_at is not None}
    return {"out": str(out), "diverged": diverged, "stops": stops, "aggregate": agg,
            "traces": traces}


def generate_samples(params: RbmParams, count: int, burn_in: int, thin: int,
                     rng: np.random.Generator) -> list[BinaryState]:
    """Visible states from one Gibbs chain started at a uniform random state."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if burn_in < 0 or thin < 1:
        raise ValueError("burn_in must be >= 0 and thin >= 1")
    x = (rng.random(params.n_visible) < 0.5).astype(np.uint8)
    if burn_in:
        x, _, _ = gibbs_chain(params, x, burn_in, rng)
    samples = []
    for _ in range(count):
        x, _, _ = gibbs_chain(params, x, thin, rng)
        samples.append(BinaryState.from_bits(x))
    return samples
