"""Round metrics (accuracy spread, sparsity, symmetry, cross-group edges) and serialization."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .graph import CollabGraph

CSV_COLUMNS = (
    "round", "mean_test_acc", "acc_variance", "sparsity", "symmetry_pct", "cross_group_frac",
    "models_sent", "models_received", "oracle_calls", "peak_foreign_models",
)


@dataclass
class CommLedger:
    models_sent: int = 0
    models_received: int = 0
    oracle_calls: int = 0
    peak_foreign_models: int = 0

    def hold(self, count: int):
        self.peak_foreign_models = max(self.peak_foreign_models, int(count))


@dataclass
class RoundRecord:
    round: int
    mean_test_accuracy: float
    accuracy_variance: float
    graph_sparsity: float
    symmetry_pct: float
    benign_to_malicious_frac: float | None = None
    comm: CommLedger = field(default_factory=CommLedger)

    def csv_row(self) -> list[str]:
        return [
            str(self.round), fmt(self.mean_test_accuracy), fmt(self.accuracy_variance),
            fmt(self.graph_sparsity), fmt(self.symmetry_pct), fmt(self.benign_to_malicious_frac),
            str(self.comm.models_sent), str(self.comm.models_received),
            str(self.comm.oracle_calls), str(self.comm.peak_foreign_models),
        ]

    def to_json(self) -> str:
        return json.dumps(_rounded(asdict(self)), sort_keys=True)


def fmt(x: float | None) -> str:
    """Reals are written with 10 significant digits; missing values as an empty field."""
    return "" if x is None else f"{x:.10g}"


def _rounded(obj):
    if isinstance(obj, float):
        return float(fmt(obj))
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v) for v in obj]
    return obj


def records_to_csv(records: Iterable[RoundRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow(r.csv_row())
    return buf.getvalue()


def mean_and_variance(values: Sequence[float]) -> tuple[float, float]:
    """Arithmetic mean and population variance."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ConfigError("no values to summarize")
    mean = float(v.mean())
    return mean, float(np.mean((v - mean) ** 2))


def _edges(selected: Sequence[Iterable[int]]) -> set[tuple[int, int]]:
    # (k, j) means client k aggregates client j
    return {(k, int(j)) for k, row in enumerate(selected) for j in row if int(j) != k}


def sparsity(selected: Sequence[Iterable[int]], n: int) -> float:
    if n < 2:
        return 1.0
    return 1.0 - len(_edges(selected)) / (n * (n - 1))


def symmetry_pct(selected: Sequence[Iterable[int]], n: int | None = None) -> float:
    """Share (in %) of connected unordered pairs whose edge exists in both directions.

    A graph with no edges counts as fully symmetric.
    """
    edges = _edges(selected)
    pairs = {(min(e), max(e)) for e in edges}
    if not pairs:
        return 100.0
    mutual = sum(1 for a, b in pairs if (a, b) in edges and (b, a) in edges)
    return 100.0 * mutual / len(pairs)


def cross_group_fraction(selected: Sequence[Iterable[int]], benign: Iterable[int],
                         malicious: Iterable[int]) -> tuple[float, dict[int, float]]:
    """Fraction of benign clients' selected edges that point at malicious clients.

    Returns the pooled fraction and a per-benign-client fraction (clients with no
    selected edges map to 0.0).
    """
    benign, malicious = set(benign), set(malicious)
    if benign & malicious:
        raise ConfigError("benign and malicious groups overlap")
    total = cross = 0
    per_client = {}
    for k in sorted(benign):
        row = [int(j) for j in selected[k] if int(j) != k]
        bad = sum(1 for j in row if j in malicious)
        per_client[k] = bad / len(row) if row else 0.0
        total += len(row)
        cross += bad
    return (cross / total if total else 0.0), per_client


def graph_to_json(graph: CollabGraph, round_: int) -> str:
    doc = {
        "round": round_,
        "budget": graph.budget,
        "omega": [sorted(int(j) for j in row) for row in graph.omega],
        "selected": [sorted(int(j) for j in row) for row in graph.selected],
    }
    return json.dumps(doc, sort_keys=True)


def graph_from_json(text: str) -> tuple[CollabGraph, int]:
    doc = json.loads(text)
    omega = doc["omega"]
    return CollabGraph(len(omega), omega, doc["selected"], doc["budget"]), doc["round"]


def graph_to_dot(graph: CollabGraph, round_: int) -> str:
    """Directed edges ``j -> k`` (k aggregates j): selected in red, omega-only in blue."""
    lines = [f"digraph round_{round_} {{"]
    lines += [f"  {k};" for k in range(graph.n)]
    for k in range(graph.n):
        sel = set(int(j) for j in graph.selected[k])
        for j in sorted(set(int(j) for j in graph.omega[k]) | sel):
            if j == k:
                continue
            color = "red" if j in sel else "blue"
            lines.append(f"  {j} -> {k} [color={color}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_graph(graph: CollabGraph, round_: int) -> tuple[str, str]:
    return graph_to_json(graph, round_), graph_to_dot(graph, round_)
