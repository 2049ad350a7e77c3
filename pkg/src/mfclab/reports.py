"""Probe reports: a uniform pass/fail + provenance record for all checks."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field


@dataclass(frozen=True)
class ProbeReport:
    name: str
    samples: int
    statistic: float
    threshold: float | None
    direction: str = "leq"  # statistic {leq|lt|geq|ge} threshold
    provenance: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        # pure function of (statistic, threshold, direction); report-only probes
        # (threshold None) always pass
        if self.threshold is None:
            return True
        if self.direction == "leq":
            return self.statistic <= self.threshold
        if self.direction == "lt":
            return self.statistic < self.threshold
        if self.direction == "geq":
            return self.statistic >= self.threshold
        raise ValueError(f"unknown direction {self.direction!r}")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "samples": self.samples,
            "statistic": self.statistic,
            "threshold": self.threshold,
            "direction": self.direction,
            "passed": self.passed,
            "provenance": self.provenance,
            "details": self.details,
        }


def report_from_json(doc: dict) -> ProbeReport:
    return ProbeReport(
        name=doc["name"],
        samples=doc["samples"],
        statistic=doc["statistic"],
        threshold=doc["threshold"],
        direction=doc.get("direction", "leq"),
        provenance=doc.get("provenance", {}),
        details=doc.get("details", {}),
    )


def write_reports_json(path, reports) -> None:
    with open(path, "w") as fh:
        json.dump([r.to_json() for r in reports], fh, indent=2, sort_keys=True)


def write_reports_csv(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["probe", "statistic", "threshold", "pass"])
        for r in reports:
            w.writerow([r.name, repr(r.statistic),
                        "" if r.threshold is None else repr(r.threshold),
                        "true" if r.passed else "false"])
