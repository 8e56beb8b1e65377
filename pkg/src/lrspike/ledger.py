"""Accounting of scalars exchanged between neighbouring partitions."""

from __future__ import annotations

from dataclasses import dataclass, field

STAGES = ("reduced-matvec", "precond-apply", "recovery")


@dataclass
class CommLedger:
    """Per-stage message and scalar counters. Counts only ever grow."""

    stages: dict = field(default_factory=lambda: {s: {"messages": 0, "scalars": 0} for s in STAGES})

    def send(self, stage: str, scalars: int) -> None:
        if stage not in self.stages:
            raise KeyError(f"unknown stage {stage!r}")
        if scalars <= 0:
            return
        entry = self.stages[stage]
        entry["messages"] += 1
        entry["scalars"] += int(scalars)

    def scalars(self, stage: str | None = None) -> int:
        if stage is None:
            return sum(v["scalars"] for v in self.stages.values())
        return self.stages[stage]["scalars"]

    def messages(self, stage: str | None = None) -> int:
        if stage is None:
            return sum(v["messages"] for v in self.stages.values())
        return self.stages[stage]["messages"]

    def snapshot(self) -> dict:
        return {s: dict(v) for s, v in self.stages.items()}

    def merge(self, other: "CommLedger") -> None:
        for s, v in other.stages.items():
            self.stages[s]["messages"] += v["messages"]
            self.stages[s]["scalars"] += v["scalars"]


def _maybe_send(ledger: CommLedger | None, stage: str, scalars: int) -> None:
    if ledger is not None:
        ledger.send(stage, scalars)
