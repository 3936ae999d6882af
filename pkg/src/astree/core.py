"""Shared domain types, parameter validation and exact dyadic bookkeeping."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "AstreeError",
    "ValidationError",
    "ConvergenceError",
    "ConditioningError",
    "Parameters",
    "PathWord",
    "Profile",
    "Trajectory",
    "SeriesControl",
    "Truncation",
    "validate",
    "dyadic_mass",
    "format_real",
]

ANALYTIC_C_FLOOR = 1.05


class AstreeError(Exception):
    """Base class for all package errors."""


class ValidationError(AstreeError, ValueError):
    """Invalid parameters or malformed input."""


class ConvergenceError(AstreeError, ArithmeticError):
    """A truncated series or integrator failed to meet its stopping rule."""


class ConditioningError(AstreeError, ArithmeticError):
    """Predicted cancellation exceeds what the working precision can resolve."""


def format_real(x) -> str:
    """Serialize a real with 17 significant digits."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class Parameters:
    c: float
    r: float = 1.0
    h: int | None = None


def validate(params: Parameters, context: str = "simulate") -> Parameters:
    """Check ``params`` for the given context and return a normalized copy.

    ``context`` is ``"simulate"`` (any ``c > 0``) or ``"analytic"``
    (closed-form moments, which need ``c > 1``).
    """
    if context not in ("simulate", "analytic"):
        raise ValueError(f"unknown context {context!r}")
    try:
        c = float(params.c)
        r = float(params.r)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"non-numeric parameter: {exc}") from None
    if not math.isfinite(c) or c <= 0:
        raise ValidationError(f"c must be a finite positive number, got {params.c!r}")
    if context == "analytic" and c <= 1:
        raise ValidationError(f"analytic evaluation requires c>1, got c={c:g}")
    if not math.isfinite(r) or r <= 0:
        raise ValidationError(f"r must be a finite positive number, got {params.r!r}")
    h = params.h
    if h is not None:
        if isinstance(h, bool) or int(h) != h or h < 0:
            raise ValidationError(f"h must be a nonnegative integer, got {h!r}")
        h = int(h)
    return Parameters(c=c, r=r, h=h)


def check_analytic_c(c: float) -> float:
    """Validate ``c`` for the q-series based formulas.

    Values in ``(1, 1.05)`` are refused: the alternating sums there lose more
    digits than any fixed precision budget recovers in reasonable time.
    """
    c = validate(Parameters(c), "analytic").c
    if c < ANALYTIC_C_FLOOR:
        raise ValidationError(
            f"analytic evaluation is ill-conditioned for c<{ANALYTIC_C_FLOOR} (got c={c:g})"
        )
    return c


@dataclass(frozen=True, order=True)
class PathWord:
    """A vertex of the complete binary tree, as a word over ``{0, 1}``."""

    bits: str = ""

    def __post_init__(self):
        if any(ch not in "01" for ch in self.bits):
            raise ValidationError(f"path must be a 0/1 string, got {self.bits!r}")

    @property
    def depth(self) -> int:
        return len(self.bits)

    def child(self, bit: int) -> "PathWord":
        return PathWord(self.bits + ("1" if bit else "0"))

    def is_ancestor_of(self, other: "PathWord") -> bool:
        """Strict ancestor relation."""
        return self.depth < other.depth and other.bits.startswith(self.bits)

    @classmethod
    def from_int(cls, value: int, depth: int) -> "PathWord":
        if depth == 0:
            return cls("")
        return cls(format(value, f"0{depth}b"))


@dataclass(frozen=True)
class Profile:
    """External-vertex counts indexed by depth; trailing zeros are dropped."""

    counts: tuple[int, ...] = (1,)

    def __post_init__(self):
        counts = tuple(int(x) for x in self.counts)
        if any(x < 0 for x in counts):
            raise ValidationError("profile counts must be nonnegative")
        while counts and counts[-1] == 0:
            counts = counts[:-1]
        object.__setattr__(self, "counts", counts)

    @classmethod
    def initial(cls) -> "Profile":
        return cls((1,))

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, int]) -> "Profile":
        if not mapping:
            return cls(())
        if min(mapping) < 0:
            raise ValidationError("depths must be nonnegative")
        counts = [0] * (max(mapping) + 1)
        for depth, count in mapping.items():
            counts[depth] = count
        return cls(tuple(counts))

    def __getitem__(self, depth: int) -> int:
        return self.counts[depth] if 0 <= depth < len(self.counts) else 0

    def as_dict(self) -> dict[int, int]:
        return {n: x for n, x in enumerate(self.counts) if x}

    @property
    def max_depth(self) -> int:
        return len(self.counts) - 1

    @property
    def total(self) -> int:
        return sum(self.counts)


def dyadic_mass(p: Profile | Mapping[int, int]) -> Fraction:
    """Exact value of ``sum_n 2**-n * X_n``.

    Equals 1 for every state reachable from the root-only start.
    """
    counts = p.as_dict() if isinstance(p, Profile) else dict(p)
    if not counts:
        return Fraction(0)
    top = max(counts)
    scaled = sum(int(x) << (top - n) for n, x in counts.items())
    return Fraction(scaled, 1 << top)


@dataclass(frozen=True)
class SeedRecord:
    seed: int
    stream: int = 0


@dataclass(frozen=True)
class Trajectory:
    """Event log of one simulation run plus profile snapshots.

    ``events_time`` and ``events_depth`` are parallel arrays; each event is
    the split of one external vertex at the given depth.
    """

    events_time: np.ndarray
    events_depth: np.ndarray
    snapshots: tuple[tuple[float, Profile], ...]
    final_time: float
    final: Profile
    seed: SeedRecord
    params: Parameters
    status: str = "ok"

    @property
    def n_events(self) -> int:
        return len(self.events_time)

    def replay(self) -> list[tuple[float, Profile]]:
        """Rebuild the snapshots by applying the event log to the root state."""
        counts = [1]
        out = []
        j = 0
        times = self.events_time
        depths = self.events_depth
        for when, _ in self.snapshots:
            while j < len(times) and times[j] <= when:
                _apply_split(counts, int(depths[j]))
                j += 1
            out.append((when, Profile(tuple(counts))))
        return out

    def replay_final(self) -> Profile:
        counts = [1]
        for d in self.events_depth:
            _apply_split(counts, int(d))
        return Profile(tuple(counts))


def _apply_split(counts: list[int], depth: int) -> None:
    if depth >= len(counts) or counts[depth] <= 0:
        raise ValidationError(f"split at depth {depth} with no external vertex there")
    if depth + 1 >= len(counts):
        counts.append(0)
    counts[depth] -= 1
    counts[depth + 1] += 2


def replay_masses(events_depth: Iterable[int]) -> Iterable[Fraction]:
    """Yield the exact dyadic mass after each event of a log."""
    counts = [1]
    for d in events_depth:
        _apply_split(counts, int(d))
        yield dyadic_mass({n: x for n, x in enumerate(counts) if x})


@dataclass(frozen=True)
class SeriesControl:
    """Truncation and precision policy for infinite sums and products.

    ``precision`` is ``"auto"`` (double, escalated to extended precision when
    the predicted rounding error is too large), ``"double"`` (never escalate;
    raise instead) or ``"extended"`` (always use ``digits`` decimal digits).
    """

    rel_tol: float = 1e-14
    consec: int = 3
    k_max: int = 200
    precision: str = "auto"
    digits: int = 50
    max_digits: int = 400

    def __post_init__(self):
        if self.precision not in ("auto", "double", "extended"):
            raise ValidationError(f"unknown precision mode {self.precision!r}")
        if self.rel_tol <= 0 or self.consec < 1 or self.k_max < 1:
            raise ValidationError("invalid series control")


@dataclass(frozen=True)
class Truncation:
    """Where a truncated sum stopped and the size of its last term."""

    stop_index: int
    last_term: float
    converged: bool = True
    digits: int | None = None  # None means double precision


DEFAULT_CONTROL = SeriesControl()


# --- flat-file formats -------------------------------------------------------


def metadata_lines(meta: Mapping[str, object] | None) -> list[str]:
    if not meta:
        return []
    return [f"# {key}: {value}" for key, value in meta.items()]


def write_csv(path_or_stream, header: Sequence[str], rows: Iterable[Sequence], meta=None,
              trailer: Sequence[str] = ()) -> None:
    """Write rows as CSV, reals with 17 significant digits, comment header first."""
    own = isinstance(path_or_stream, (str, bytes)) or hasattr(path_or_stream, "__fspath__")
    fh = open(path_or_stream, "w", newline="") if own else path_or_stream
    try:
        for line in metadata_lines(meta):
            fh.write(line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
        for line in trailer:
            fh.write(line + "\n")
    finally:
        if own:
            fh.close()


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return format_real(v)
    if hasattr(v, "__float__") and not isinstance(v, str):
        return format_real(float(v))
    return v


def read_csv_rows(path_or_stream) -> tuple[list[str], list[tuple[int, list[str]]]]:
    """Return the header and ``(line_number, fields)`` rows, skipping comments."""
    if isinstance(path_or_stream, str) and "\n" in path_or_stream:
        fh = io.StringIO(path_or_stream)
        own = False
    elif isinstance(path_or_stream, (str, bytes)) or hasattr(path_or_stream, "__fspath__"):
        fh = open(path_or_stream, newline="")
        own = True
    else:
        fh = path_or_stream
        own = False
    try:
        header = None
        rows = []
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = next(csv.reader([stripped]))
            if header is None:
                header = [f.strip() for f in fields]
            else:
                rows.append((lineno, [f.strip() for f in fields]))
    finally:
        if own:
            fh.close()
    if header is None:
        raise ValidationError("empty CSV input")
    return header, rows


def write_profile_csv(path_or_stream, profile: Profile, meta=None) -> None:
    rows = ((n, x) for n, x in enumerate(profile.counts))
    write_csv(path_or_stream, ("depth", "count"), rows, meta)


def read_profile_csv(path_or_stream) -> Profile:
    header, rows = read_csv_rows(path_or_stream)
    if header != ["depth", "count"]:
        raise ValidationError(f"expected header depth,count, got {','.join(header)}")
    mapping = {}
    for lineno, fields in rows:
        try:
            mapping[int(fields[0])] = int(fields[1])
        except (ValueError, IndexError):
            raise ValidationError(f"line {lineno}: malformed row {fields}") from None
    return Profile.from_mapping(mapping)


def write_events_csv(path_or_stream, traj: Trajectory, meta=None) -> None:
    rows = zip(traj.events_time.tolist(), traj.events_depth.tolist())
    write_csv(path_or_stream, ("time", "depth"), rows, meta)


def read_events_csv(path_or_stream) -> tuple[np.ndarray, np.ndarray]:
    header, rows = read_csv_rows(path_or_stream)
    if header != ["time", "depth"]:
        raise ValidationError(f"expected header time,depth, got {','.join(header)}")
    times = np.array([float(f[0]) for _, f in rows], dtype=np.float64)
    depths = np.array([int(f[1]) for _, f in rows], dtype=np.int64)
    return times, depths
