"""Seeded Monte Carlo sweeps over one model parameter axis."""
from __future__ import annotations

import hashlib
import json
import os
import re
import struct
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError
from .geometry import sample_instance, vertex_visibility_connected
from .model import ModelSpec, threshold_margin
from .recovery import genie_labels, recover

MODE_EXACT = "exact"
MODE_ALMOST_EXACT = "almost_exact"
MODE_GENIE = "genie_error_rate"
MODE_CONNECTIVITY = "connectivity"

_MODES = (MODE_EXACT, MODE_ALMOST_EXACT, MODE_GENIE, MODE_CONNECTIVITY)

CSV_HEADER = "value,trials,successes,mean_agreement,mean_mistakes,margin,mean_runtime_ms"

_AXIS_RE = re.compile(
    r"^(lambda|n"
    r"|prior\[(?P<pi>\d+)\]"
    r"|P\[(?P<i>\d+)\]\[(?P<j>\d+)\]\.(?P<attr>p|mean|variance))$"
)


@dataclass(frozen=True)
class SweepMode:
    """What each trial measures and what counts as success."""

    kind: str
    epsilon: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in _MODES:
            raise DomainError(f"unknown sweep mode {self.kind!r}")
        if self.kind == MODE_ALMOST_EXACT and not 0.0 < self.epsilon < 1.0:
            raise DomainError("almost-exact mode needs epsilon in (0, 1)")

    def to_json(self) -> dict:
        doc = {"kind": self.kind}
        if self.kind == MODE_ALMOST_EXACT:
            doc["epsilon"] = self.epsilon
        return doc

    @staticmethod
    def from_json(doc: dict) -> "SweepMode":
        return SweepMode(kind=doc["kind"], epsilon=float(doc.get("epsilon", 0.0)))


@dataclass(frozen=True)
class SweepPlan:
    base_spec: ModelSpec
    axis: str
    values: tuple[float, ...]
    trials_per_value: int
    master_seed: int
    mode: SweepMode

    def __post_init__(self) -> None:
        if not _AXIS_RE.match(self.axis):
            raise DomainError(f"unrecognized axis path {self.axis!r}")
        if not self.values:
            raise DomainError("sweep needs at least one axis value")
        if self.trials_per_value < 1:
            raise DomainError("trials_per_value must be positive")
        set_axis(self.base_spec, self.axis, self.values[0])  # validate early

    def to_json(self) -> dict:
        return {
            "base_spec": self.base_spec.to_json(),
            "axis": self.axis,
            "values": list(self.values),
            "trials_per_value": self.trials_per_value,
            "master_seed": self.master_seed,
            "mode": self.mode.to_json(),
        }

    @staticmethod
    def from_json(doc: dict) -> "SweepPlan":
        return SweepPlan(
            base_spec=ModelSpec.from_json(doc["base_spec"]),
            axis=doc["axis"],
            values=tuple(float(v) for v in doc["values"]),
            trials_per_value=int(doc["trials_per_value"]),
            master_seed=int(doc["master_seed"]),
            mode=SweepMode.from_json(doc["mode"]),
        )


def set_axis(spec: ModelSpec, axis: str, value: float) -> ModelSpec:
    """Return a copy of the spec with one parameter replaced.

    Setting a prior entry rescales the remaining entries so the vector still
    sums to one.
    """
    match = _AXIS_RE.match(axis)
    if match is None:
        raise DomainError(f"unrecognized axis path {axis!r}")
    doc = spec.to_json()
    if axis == "lambda":
        doc["lambda"] = value
    elif axis == "n":
        doc["n"] = value
    elif match.group("pi") is not None:
        idx = int(match.group("pi"))
        prior = doc["prior"]
        if idx >= len(prior):
            raise DomainError(f"prior index {idx} out of range")
        if not 0.0 < value < 1.0:
            raise DomainError("prior entries must lie strictly in (0, 1)")
        rest = sum(p for q, p in enumerate(prior) if q != idx)
        scale = (1.0 - value) / rest
        doc["prior"] = [value if q == idx else p * scale for q, p in enumerate(prior)]
    else:
        i, j = int(match.group("i")), int(match.group("j"))
        attr = match.group("attr")
        if i >= len(doc["P"]) or j >= len(doc["P"]):
            raise DomainError(f"matrix index ({i}, {j}) out of range")
        doc["P"][i][j][attr] = value
        doc["P"][j][i][attr] = value  # keep symmetry
    return ModelSpec.from_json(doc)


def trial_seed(master_seed: int, value_index: int, trial: int) -> int:
    """Stable 64-bit seed derived from (master seed, value index, trial)."""
    h = hashlib.blake2b(
        struct.pack("<qQQ", master_seed, value_index, trial), digest_size=8
    )
    return int.from_bytes(h.digest(), "little")


@dataclass
class TrialOutcome:
    success: bool
    agreement: float
    mistakes: int
    runtime_ms: float


@dataclass
class ValueSummary:
    value: float
    trials: int
    successes: int
    mean_agreement: float
    mean_mistakes: float
    margin: float
    mean_runtime_ms: float


@dataclass
class SweepResult:
    plan: SweepPlan
    rows: list[ValueSummary]
    errors: list[tuple[int, int, str]] = field(default_factory=list)


def run_trial(plan: SweepPlan, value_index: int, trial: int) -> TrialOutcome:
    spec = set_axis(plan.base_spec, plan.axis, plan.values[value_index])
    seed = trial_seed(plan.master_seed, value_index, trial)
    t0 = time.perf_counter()
    instance = sample_instance(spec, seed)
    mode = plan.mode
    if mode.kind == MODE_CONNECTIVITY:
        connected = vertex_visibility_connected(instance)
        return TrialOutcome(
            success=connected,
            agreement=1.0 if connected else 0.0,
            mistakes=0,
            runtime_ms=(time.perf_counter() - t0) * 1000.0,
        )
    if mode.kind == MODE_GENIE:
        labels_arr = np.asarray(spec.labels, dtype=np.int64)
        genie = labels_arr[genie_labels(instance)]
        mistakes = int(np.count_nonzero(genie != instance.truth))
        n = max(1, instance.num_vertices)
        return TrialOutcome(
            success=mistakes == 0,
            agreement=1.0 - mistakes / n,
            mistakes=mistakes,
            runtime_ms=(time.perf_counter() - t0) * 1000.0,
        )
    report = recover(instance)
    mistakes = instance.num_vertices - int(
        round(report.agreement * instance.num_vertices)
    )
    if mode.kind == MODE_EXACT:
        success = report.agreement == 1.0
    else:
        success = report.agreement >= 1.0 - mode.epsilon
    return TrialOutcome(
        success=success,
        agreement=report.agreement,
        mistakes=mistakes,
        runtime_ms=(time.perf_counter() - t0) * 1000.0,
    )


def _worker(args: tuple[str, int, int]) -> tuple[int, int, Optional[TrialOutcome], str]:
    plan_json, value_index, trial = args
    plan = SweepPlan.from_json(json.loads(plan_json))
    try:
        return value_index, trial, run_trial(plan, value_index, trial), ""
    except Exception as exc:  # noqa: BLE001 - errors are data here
        return value_index, trial, None, f"{type(exc).__name__}: {exc}"


def run_sweep(plan: SweepPlan, workers: Optional[int] = None) -> SweepResult:
    """Run every (value, trial) cell of the plan and aggregate per value.

    Trial failures are recorded as (value_index, trial, message) and excluded
    from the per-value averages. Worker count comes from the GHCM_WORKERS
    environment variable when not given; results are identical either way.
    """
    if workers is None:
        workers = int(os.environ.get("GHCM_WORKERS", "1"))
    tasks = [
        (value_index, trial)
        for value_index in range(len(plan.values))
        for trial in range(plan.trials_per_value)
    ]
    outcomes: dict[tuple[int, int], TrialOutcome] = {}
    errors: list[tuple[int, int, str]] = []
    if workers > 1:
        import concurrent.futures

        plan_json = json.dumps(plan.to_json())
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            for vi, tr, outcome, err in pool.map(
                _worker, [(plan_json, vi, tr) for vi, tr in tasks]
            ):
                if outcome is None:
                    errors.append((vi, tr, err))
                else:
                    outcomes[(vi, tr)] = outcome
    else:
        for vi, tr in tasks:
            try:
                outcomes[(vi, tr)] = run_trial(plan, vi, tr)
            except Exception as exc:  # noqa: BLE001 - errors are data here
                errors.append((vi, tr, f"{type(exc).__name__}: {exc}"))
    rows = []
    for vi, value in enumerate(plan.values):
        spec = set_axis(plan.base_spec, plan.axis, value)
        cell = [
            outcomes[(vi, tr)]
            for tr in range(plan.trials_per_value)
            if (vi, tr) in outcomes
        ]
        trials = len(cell)
        rows.append(
            ValueSummary(
                value=float(value),
                # errored trials stay in the count; averages use completed ones
                trials=plan.trials_per_value,
                successes=sum(1 for o in cell if o.success),
                mean_agreement=(
                    sum(o.agreement for o in cell) / trials if trials else 0.0
                ),
                mean_mistakes=(
                    sum(o.mistakes for o in cell) / trials if trials else 0.0
                ),
                margin=threshold_margin(spec),
                mean_runtime_ms=(
                    sum(o.runtime_ms for o in cell) / trials if trials else 0.0
                ),
            )
        )
    return SweepResult(plan=plan, rows=rows, errors=errors)


def emit_csv(result: SweepResult) -> str:
    """Serialize per-value summaries, 9 significant digits, LF line endings."""
    lines = [CSV_HEADER]
    for row in result.rows:
        lines.append(
            "{:.9g},{},{},{:.9g},{:.9g},{:.9g},{:.9g}".format(
                row.value,
                row.trials,
                row.successes,
                row.mean_agreement,
                row.mean_mistakes,
                row.margin,
                row.mean_runtime_ms,
            )
        )
    return "\n".join(lines) + "\n"


def parse_csv(text: str) -> list[ValueSummary]:
    lines = [ln for ln in text.split("\n") if ln]
    if not lines or lines[0] != CSV_HEADER:
        raise DomainError("missing or malformed sweep CSV header")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 7:
            raise DomainError(f"malformed sweep CSV row: {ln!r}")
        rows.append(
            ValueSummary(
                value=float(parts[0]),
                trials=int(parts[1]),
                successes=int(parts[2]),
                mean_agreement=float(parts[3]),
                mean_mistakes=float(parts[4]),
                margin=float(parts[5]),
                mean_runtime_ms=float(parts[6]),
            )
        )
    return rows
