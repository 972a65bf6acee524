"""Reconstruction errors, training monitors, traces and stop detection."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy.special import logsumexp

from .errors import ParseError
from .exact import DEFAULT_MAX_VISIBLE, all_free_energies
from .model import (
    RbmParams,
    as_state_array,
    free_energies,
    gibbs_chain,
    keys_to_states,
    sigmoid,
    softplus,
    states_to_keys,
)
from .neighborhood import log_xi_from_free_energies


def recon_errors_prob(params: RbmParams, states) -> np.ndarray:
    """-log P(x | E[h|x]) per state, with the mean-field hidden vector fed back."""
    x = as_state_array(states).astype(float)
    mean_h = sigmoid(x @ params.W.T + params.c)
    logits = mean_h @ params.W + params.b
    # -[x log s(a) + (1-x) log(1-s(a))] = softplus(a) - x*a
    return (softplus(logits) - x * logits).sum(axis=1)


def recon_error_prob(params: RbmParams, x) -> float:
    return float(recon_errors_prob(params, x)[0])


def recon_errors_sq(params: RbmParams, states, n: int, rng: np.random.Generator) -> np.ndarray:
    x = as_state_array(states)
    xn, _, _ = gibbs_chain(params, x, n, rng)
    return ((x.astype(float) - xn) ** 2).sum(axis=1)


def recon_error_sq(params: RbmParams, x, n: int, rng: np.random.Generator) -> float:
    """||x - x_n||^2 for the endpoint of an n-step chain started at x."""
    return float(recon_errors_sq(params, x, n, rng)[0])


class Probe:
    """Per-measurement view of the model shared by all monitors.

    The full table of free energies is built on first request and reused,
    so monitors that need log Z and monitors over large neighborhoods share
    one enumeration.
    """

    def __init__(self, params: RbmParams, epoch: int, rng: np.random.Generator | None = None,
                 max_visible: int = DEFAULT_MAX_VISIBLE):
        self.params = params
        self.epoch = epoch
        self.rng = rng
        self.max_visible = max_visible
        self._all_f = None
        self._log_z = None

    @property
    def all_free_energies(self) -> np.ndarray:
        if self._all_f is None:
            self._all_f = all_free_energies(self.params, self.max_visible)
        return self._all_f

    @property
    def log_Z(self) -> float:
        if self._log_z is None:
            self._log_z = float(logsumexp(self.all_free_energies))
        return self._log_z

    def free_energies(self, keys: np.ndarray, states: np.ndarray | None = None) -> np.ndarray:
        if self._all_f is not None:
            return self._all_f[keys]
        if states is None:
            states = keys_to_states(keys, self.params.n_visible)
        return free_energies(self.params, states)


class ExactLikelihoodMonitor:
    def __init__(self, dataset):
        self.keys = states_to_keys(as_state_array(dataset))
        self.columns = ["log_likelihood_sum", "log_likelihood_mean"]

    def __call__(self, probe: Probe) -> dict:
        lp = probe.all_free_energies[self.keys] - probe.log_Z
        return {"log_likelihood_sum": float(lp.sum()), "log_likelihood_mean": float(lp.mean())}


class ReconstructionMonitor:
    """Mean R(x) and mean ||x - x_n||^2 over the training set."""

    def __init__(self, dataset, n_gibbs: int = 1):
        self.x = as_state_array(dataset)
        self.n_gibbs = n_gibbs
        self.columns = ["recon_prob", "recon_sq"]

    def __call__(self, probe: Probe) -> dict:
        return {
            "recon_prob": float(recon_errors_prob(probe.params, self.x).mean()),
            "recon_sq": float(recon_errors_sq(probe.params, self.x, self.n_gibbs, probe.rng).mean()),
        }


class XiMonitor:
    """log xi for one denominator set, plus its probability mass when exact."""

    def __init__(self, dataset, label: str, denom_keys: np.ndarray, with_sum_probs: bool = False):
        x = as_state_array(dataset)
        self.data_keys = states_to_keys(x)
        self.data_states = x
        self.denom_keys = np.asarray(denom_keys, dtype=np.int64)
        if self.denom_keys.size == 0:
            raise ValueError(f"denominator set {label} is empty")
        self.denom_states = keys_to_states(self.denom_keys, x.shape[1])
        self.label = label
        self.with_sum_probs = with_sum_probs
        self.columns = [f"log_xi_{label}"] + ([f"sum_probs_{label}"] if with_sum_probs else [])

    def __call__(self, probe: Probe) -> dict:
        f_data = probe.free_energies(self.data_keys, self.data_states)
        f_denom = probe.free_energies(self.denom_keys, self.denom_states)
        row = {f"log_xi_{self.label}": log_xi_from_free_energies(f_data, f_denom)}
        if self.with_sum_probs:
            row[f"sum_probs_{self.label}"] = float(np.exp(logsumexp(f_denom) - probe.log_Z))
        return row


@dataclass
class TraceSeries:
    columns: list[str]
    epochs: list[int] = field(default_factory=list)
    rows: list[list[float]] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)
    params: dict[int, RbmParams] = field(default_factory=dict, repr=False)
    final_params: RbmParams | None = field(default=None, repr=False)

    def append(self, epoch: int, values: Mapping[str, float]):
        if self.epochs and epoch <= self.epochs[-1]:
            raise ValueError(f"epoch {epoch} does not follow {self.epochs[-1]}")
        missing = [c for c in self.columns if c not in values]
        if missing:
            raise ValueError(f"missing columns {missing} at epoch {epoch}")
        self.epochs.append(int(epoch))
        self.rows.append([float(values[c]) for c in self.columns])

    def column(self, name: str) -> np.ndarray:
        if name == "epoch":
            return np.array(self.epochs, dtype=float)
        try:
            idx = self.columns.index(name)
        except ValueError:
            raise KeyError(f"unknown column {name!r}; have {self.columns}") from None
        return np.array([r[idx] for r in self.rows], dtype=float)

    def __len__(self) -> int:
        return len(self.epochs)

    def __eq__(self, other):
        if not isinstance(other, TraceSeries):
            return NotImplemented
        return (self.columns == other.columns and self.epochs == other.epochs
                and self.rows == other.rows)


def run_monitors(monitors: Iterable, probe: Probe) -> dict:
    row: dict[str, float] = {}
    for monitor in monitors:
        row.update(monitor(probe))
    return row


@dataclass(frozen=True)
class StopDecision:
    stop_epoch: int
    criterion: str
    trace_value_at_stop: float


def _windowed_mean(values: np.ndarray, left: int, right: int) -> np.ndarray:
    padded = np.concatenate([np.full(left, np.nan), values, np.full(right, np.nan)])
    windows = np.lib.stride_tricks.sliding_window_view(padded, left + right + 1)
    with np.errstate(invalid="ignore"):
        return np.nanmean(windows, axis=1)


def smooth(values, window: int, causal: bool = False) -> np.ndarray:
    """Moving average; centered with shrinking edges, or trailing when ``causal``."""
    values = np.asarray(values, dtype=float)
    if window <= 1:
        return values.copy()
    if causal:
        return _windowed_mean(values, window - 1, 0)
    left = (window - 1) // 2
    return _windowed_mean(values, left, window - 1 - left)


def detect_stop(trace: TraceSeries, criterion_column: str, smoothing_window: int = 5,
                patience: int = 0) -> StopDecision:
    """Epoch at which training should stop according to one trace column.

    ``patience=0`` picks the global maximum of the centered moving average
    (earliest on ties). Otherwise the column is smoothed causally and the
    stop is the running-max epoch once ``patience`` consecutive measurements
    fail to beat it; a trace that never stalls returns its running max.
    """
    values = trace.column(criterion_column)
    if smoothing_window < 1:
        raise ValueError("smoothing_window must be >= 1")
    if len(values) < smoothing_window or len(values) == 0:
        raise ValueError(f"trace has {len(values)} rows, shorter than window {smoothing_window}")
    epochs = trace.epochs
    values = np.where(np.isnan(values), -np.inf, values)
    if patience <= 0:
        s = smooth(values, smoothing_window)
        k = int(np.argmax(s))
        return StopDecision(epochs[k], criterion_column, float(s[k]))
    s = smooth(values, smoothing_window, causal=True)
    best, stale = 0, 0
    for k in range(1, len(s)):
        if s[k] > s[best]:
            best, stale = k, 0
        else:
            stale += 1
            if stale >= patience:
                break
    return StopDecision(epochs[best], criterion_column, float(s[best]))


def fraction_non_increasing(values, window: int = 5) -> float:
    s = smooth(values, window)
    if s.size < 2:
        return 1.0
    return float(np.mean(np.diff(s) <= 0))


def aggregate(traces: list[TraceSeries]) -> TraceSeries:
    """Row-wise mean over runs, truncated to the epochs all runs share."""
    if not traces:
        raise ValueError("nothing to aggregate")
    columns = traces[0].columns
    for t in traces[1:]:
        if t.columns != columns:
            raise ValueError("traces have different columns")
    length = min(len(t) for t in traces)
    epochs = traces[0].epochs[:length]
    for t in traces[1:]:
        if t.epochs[:length] != epochs:
            raise ValueError("traces are measured at different epochs")
    stacked = np.array([t.rows[:length] for t in traces], dtype=float).reshape(len(traces), length, len(columns))
    out = TraceSeries(list(columns), metadata={"runs": str(len(traces))})
    for epoch, row in zip(epochs, stacked.mean(axis=0)):
        out.append(epoch, dict(zip(columns, row.tolist())))
    return out


def write_csv(trace: TraceSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch"] + trace.columns)
        for epoch, row in zip(trace.epochs, trace.rows):
            writer.writerow([epoch] + [repr(v) for v in row])


def read_csv(path, expected_columns: list[str] | None = None) -> TraceSeries:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if not header or header[0] != "epoch":
            raise ParseError(f"{path}: first column must be 'epoch'", 1)
        columns = header[1:]
        if expected_columns is not None:
            for name in expected_columns:
                if name not in columns:
                    raise ParseError(f"{path}: missing column {name!r}", 1)
        trace = TraceSeries(columns)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
            try:
                values = [float(v) for v in row[1:]]
                trace.append(int(row[0]), dict(zip(columns, values)))
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
    meta = Path(str(path) + ".meta")
    if meta.exists():
        trace.metadata = read_metadata(meta)
    return trace


def write_metadata(metadata: Mapping[str, str], path) -> None:
    lines = [f"{k}={_one_line(v)}" for k, v in metadata.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def _one_line(value) -> str:
    text = str(value)
    if "\n" in text:
        raise ValueError("metadata values must fit on one line")
    return text


def read_metadata(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            out[key] = value
    return out


def interior_maximum_margin(values) -> float:
    """How far the peak rises above the higher endpoint (negative if no interior max)."""
    values = np.asarray(values, dtype=float)
    return float(np.max(values) - max(values[0], values[-1]))
