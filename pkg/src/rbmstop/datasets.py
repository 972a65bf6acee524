"""Training sets: bars and stripes, labeled shifter ensemble, random problems.

Text format (also used for neighborhood shell files)::

    # name=BS
    # n_visible=16
    # generator=bars_and_stripes
    0000000000000000
    ...

Character ``i`` of a state line is bit ``i`` of the state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError
from .model import BinaryState, keys_to_states, make_rng, states_to_keys

SHIFTER_CODES = ("001", "010", "100")


@dataclass(frozen=True, eq=False)
class Dataset:
    array: np.ndarray
    name: str = ""
    generator_spec: str = ""
    keys: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        arr = np.atleast_2d(np.asarray(self.array)).astype(np.uint8)
        if arr.size == 0:
            raise ValueError("dataset has no states")
        if ((arr != 0) & (arr != 1)).any():
            raise ValueError("dataset entries must be 0 or 1")
        keys = states_to_keys(arr)
        if np.unique(keys).size != keys.size:
            raise ValueError("dataset contains duplicate states")
        arr.setflags(write=False)
        object.__setattr__(self, "array", arr)
        object.__setattr__(self, "keys", keys)

    @property
    def n_visible(self) -> int:
        return self.array.shape[1]

    @property
    def states(self) -> list[BinaryState]:
        return [BinaryState(int(k), self.n_visible) for k in self.keys]

    def __len__(self) -> int:
        return self.array.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.array if dtype is None else self.array.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.name == other.name and self.generator_spec == other.generator_spec
                and np.array_equal(self.array, other.array))

    @classmethod
    def from_keys(cls, keys, n_visible: int, name: str = "", generator_spec: str = "") -> "Dataset":
        return cls(keys_to_states(np.asarray(keys, dtype=np.int64), n_visible), name, generator_spec)


def gen_bars_and_stripes(side: int = 4) -> Dataset:
    """All images with each row uniform or each column uniform, blank and full once."""
    images = []
    seen = set()
    for family in ("rows", "cols"):
        for mask in range(1 << side):
            line = np.array([(mask >> i) & 1 for i in range(side)], dtype=np.uint8)
            img = np.repeat(line[:, None], side, axis=1) if family == "rows" else np.tile(line, (side, 1))
            flat = img.ravel()
            key = flat.tobytes()
            if key not in seen:
                seen.add(key)
                images.append(flat)
    return Dataset(np.array(images), "BS", f"bars_and_stripes side={side}")


def _shift(pattern: np.ndarray, code: str, mode: str) -> np.ndarray:
    if code == "010":
        return pattern.copy()
    step = 1 if code == "001" else -1
    if mode == "circular":
        return np.roll(pattern, -step)
    out = np.zeros_like(pattern)
    if step == 1:
        out[:-1] = pattern[1:]
    else:
        out[1:] = pattern[:-1]
    return out


def gen_labeled_shifter(width: int = 8, mode: str = "circular") -> Dataset:
    """pattern | code | shifted pattern, for every pattern and each of the three codes.

    Code ``001`` shifts left (toward bit 0), ``010`` copies, ``100`` shifts right.
    ``mode`` is ``"circular"`` (rotation) or ``"zero"`` (zero fill).
    """
    if mode not in ("circular", "zero"):
        raise ValueError(f"unknown shift mode {mode!r}")
    rows = []
    for p in range(1 << width):
        pattern = np.array([(p >> i) & 1 for i in range(width)], dtype=np.uint8)
        for code in SHIFTER_CODES:
            code_bits = np.array([int(ch) for ch in code], dtype=np.uint8)
            rows.append(np.concatenate([pattern, code_bits, _shift(pattern, code, mode)]))
    return Dataset(np.array(rows), "LSE", f"labeled_shifter width={width} mode={mode}")


def gen_random(n_visible: int, seed: int) -> Dataset:
    """2^(n_visible/2) distinct uniform states, kept in first-draw order."""
    if n_visible <= 0 or n_visible % 2:
        raise ValueError("n_visible must be a positive even integer")
    count = 1 << (n_visible // 2)
    rng = make_rng(seed)
    keys: list[int] = []
    seen: set[int] = set()
    while len(keys) < count:
        k = int(rng.integers(0, 1 << n_visible))
        if k not in seen:
            seen.add(k)
            keys.append(k)
    return Dataset.from_keys(keys, n_visible, f"RAN{n_visible}", f"random n_visible={n_visible} seed={seed}")


def generate(family: str, n_visible: int | None = None, seed: int = 0, shift_mode: str = "circular") -> Dataset:
    family = family.lower()
    if family in ("bs", "bars_and_stripes"):
        return gen_bars_and_stripes()
    if family in ("lse", "labeled_shifter"):
        return gen_labeled_shifter(mode=shift_mode)
    if family.startswith("ran"):
        if n_visible is None and family[3:]:
            n_visible = int(family[3:])
        if n_visible is None:
            raise ValueError("random datasets need n_visible")
        return gen_random(n_visible, seed)
    raise ValueError(f"unknown dataset family {family!r}")


def regenerate(generator_spec: str) -> Dataset:
    """Rebuild a dataset from its ``generator_spec`` string."""
    family, *params = generator_spec.split()
    try:
        kw = dict(p.split("=", 1) for p in params)
        if family == "bars_and_stripes":
            return gen_bars_and_stripes(int(kw.get("side", 4)))
        if family == "labeled_shifter":
            return gen_labeled_shifter(int(kw.get("width", 8)), kw.get("mode", "circular"))
        if family == "random":
            return gen_random(int(kw["n_visible"]), int(kw["seed"]))
    except (KeyError, ValueError) as exc:
        raise ValueError(f"bad generator spec {generator_spec!r}: {exc}") from None
    raise ValueError(f"unknown generator {family!r}")


def format_states(arr: np.ndarray) -> str:
    arr = np.atleast_2d(np.asarray(arr, dtype=np.uint8))
    if arr.size == 0:
        return ""
    lines = np.hstack([arr + ord("0"), np.full((arr.shape[0], 1), ord("\n"), dtype=np.uint8)])
    return lines.astype(np.uint8).tobytes().decode("ascii")


def parse_state_line(text: str, n_visible: int | None, lineno: int) -> np.ndarray:
    if not text or set(text) - {"0", "1"}:
        raise ParseError(f"not a binary state: {text!r}", lineno)
    if n_visible is not None and len(text) != n_visible:
        raise ParseError(f"expected {n_visible} bits, got {len(text)}", lineno)
    return np.frombuffer(text.encode("ascii"), dtype=np.uint8) - ord("0")


def save_dataset(dataset: Dataset, path) -> None:
    header = (f"# name={dataset.name}\n# n_visible={dataset.n_visible}\n"
              f"# generator={dataset.generator_spec}\n")
    Path(path).write_text(header + format_states(dataset.array))


def load_dataset(path) -> Dataset:
    meta: dict[str, str] = {}
    rows = []
    n_visible = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value.strip()
                if key.strip() == "n_visible":
                    try:
                        n_visible = int(value)
                    except ValueError:
                        raise ParseError(f"bad n_visible {value!r}", lineno) from None
                continue
            rows.append(parse_state_line(line, n_visible, lineno))
            if n_visible is None:
                n_visible = len(line)
    if not rows:
        raise ParseError(f"{path}: no states")
    try:
        return Dataset(np.array(rows), meta.get("name", ""), meta.get("generator", ""))
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
