"""Parameter and multiply-accumulate accounting.

A forward pass executed inside `collect()` is traced: convolutions report
their MAC counts, named parameter tensors are attributed (once) to the
operator scope that consumes them, and every entered scope gets a report
row even when it costs nothing. The convention is deliberately narrow so
zero-cost claims are crisp: only conv2d (including 1x1 "linear" convs)
contributes MACs; elementwise ops, pooling, softmax, normalization, and
index rearrangements all count 0.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import dataclass, field


@dataclass
class CountRow:
    params: int = 0
    macs: int = 0


@dataclass
class CountReport:
    """Per-operator rows plus derived totals; rows never double-count."""

    rows: dict[str, CountRow] = field(default_factory=dict)

    def row(self, name: str) -> CountRow:
        if name not in self.rows:
            self.rows[name] = CountRow()
        return self.rows[name]

    def total(self, prefix: str = "") -> tuple[int, int]:
        p = m = 0
        for name, row in self.rows.items():
            if name == prefix or name.startswith(prefix + "/") or not prefix:
                p += row.params
                m += row.macs
        return p, m

    def module_totals(self) -> dict[str, dict[str, int]]:
        modules = sorted({name.split("/", 1)[0] for name in self.rows})
        out = {}
        for mod in modules:
            p, m = self.total(mod)
            out[mod] = {"params": p, "macs": m}
        return out

    def to_dict(self) -> dict:
        return {
            "rows": {k: {"params": v.params, "macs": v.macs} for k, v in self.rows.items()},
            "totals": self.module_totals(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class _Collector:
    def __init__(self, report: CountReport):
        self.report = report
        self.stack: list[str] = []
        self.seen_params: set[int] = set()

    def path(self) -> str:
        return "/".join(self.stack)


_ACTIVE: _Collector | None = None


@contextmanager
def collect(report: CountReport, root: str):
    """Trace one forward pass into `report`, with all rows under `root/`."""
    global _ACTIVE
    if _ACTIVE is not None:
        raise RuntimeError("a counting collection is already active")
    _ACTIVE = _Collector(report)
    _ACTIVE.stack.append(root)
    report.row(root)
    try:
        yield report
    finally:
        _ACTIVE = None


@contextmanager
def scope(name: str):
    """Name the operator whose ops execute inside this block."""
    if _ACTIVE is None:
        yield
        return
    _ACTIVE.stack.append(name)
    _ACTIVE.report.row(_ACTIVE.path())
    try:
        yield
    finally:
        _ACTIVE.stack.pop()


def add_macs(n: int):
    if _ACTIVE is not None:
        _ACTIVE.report.row(_ACTIVE.path()).macs += int(n)


def saw_param(tensor):
    """Attribute a named parameter to the current scope, once per collection."""
    if _ACTIVE is None:
        return
    key = id(tensor)
    if key in _ACTIVE.seen_params:
        return
    _ACTIVE.seen_params.add(key)
    _ACTIVE.report.row(_ACTIVE.path()).params += int(tensor.size)
