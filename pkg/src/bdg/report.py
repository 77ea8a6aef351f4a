"""Test reports and their JUnit XML / JSON renderings."""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from dataclasses import asdict, dataclass, field
from typing import Any

PASS = "pass"
FAIL = "fail"
ERROR = "error"
NOT_ACHIEVED = "not achieved within training budget"


def verdict(success_rate: float, threshold: float) -> str:
    """Pass iff the success rate reaches the threshold."""
    return PASS if success_rate >= threshold else FAIL


@dataclass
class EpisodeRecord:
    seed: int
    success: bool
    events: dict[str, int]
    episodic_return: float
    ticks: int
    assertions: list[bool] = field(default_factory=list)


@dataclass
class EvalStats:
    episodes: int
    success_rate: float
    per_episode: list[EpisodeRecord] = field(default_factory=list)

    @classmethod
    def from_records(cls, records: list[EpisodeRecord]) -> "EvalStats":
        if not records:
            raise ValueError("evaluation needs at least one episode")
        return cls(len(records), sum(r.success for r in records) / len(records), records)


@dataclass
class ScenarioResult:
    feature: str
    scenario: str
    verdict: str
    threshold: float
    assertions: list[str]
    stats: EvalStats | None = None
    reason: str | None = None
    wall_clock: float = 0.0

    @property
    def success_rate(self) -> float | None:
        return None if self.stats is None else self.stats.success_rate


@dataclass
class TestReport:
    __test__ = False  # not a pytest class

    results: list[ScenarioResult]
    wall_clock: float = 0.0

    @property
    def totals(self) -> dict[str, int]:
        out = {PASS: 0, FAIL: 0, ERROR: 0}
        for r in self.results:
            out[r.verdict] += 1
        return {"tests": len(self.results), "passed": out[PASS], "failures": out[FAIL], "errors": out[ERROR]}

    @property
    def exit_code(self) -> int:
        totals = self.totals
        if totals["errors"]:
            return 2
        if totals["failures"]:
            return 1
        return 0

    def to_dict(self) -> dict[str, Any]:
        return {"results": [asdict(r) for r in self.results], "totals": self.totals, "wall_clock": self.wall_clock}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TestReport":
        results = []
        for r in data["results"]:
            r = dict(r)
            if r.get("stats") is not None:
                s = dict(r["stats"])
                s["per_episode"] = [EpisodeRecord(**e) for e in s["per_episode"]]
                r["stats"] = EvalStats(**s)
            results.append(ScenarioResult(**r))
        return cls(results, data.get("wall_clock", 0.0))


def to_json(report: TestReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def from_json(text: str) -> TestReport:
    return TestReport.from_dict(json.loads(text))


def to_junit_xml(report: TestReport) -> str:
    root = ET.Element("testsuites")
    features: dict[str, list[ScenarioResult]] = {}
    for r in report.results:
        features.setdefault(r.feature, []).append(r)
    totals = report.totals
    root.set("tests", str(totals["tests"]))
    root.set("failures", str(totals["failures"]))
    root.set("errors", str(totals["errors"]))
    root.set("time", f"{report.wall_clock:.3f}")
    for feature, results in features.items():
        suite = ET.SubElement(root, "testsuite")
        suite.set("name", feature)
        suite.set("tests", str(len(results)))
        suite.set("failures", str(sum(r.verdict == FAIL for r in results)))
        suite.set("errors", str(sum(r.verdict == ERROR for r in results)))
        suite.set("skipped", "0")
        suite.set("time", f"{sum(r.wall_clock for r in results):.3f}")
        for r in results:
            case = ET.SubElement(suite, "testcase")
            case.set("classname", feature)
            case.set("name", r.scenario)
            case.set("time", f"{r.wall_clock:.3f}")
            if r.verdict == FAIL:
                node = ET.SubElement(case, "failure")
                node.set("message", r.reason or NOT_ACHIEVED)
                node.set("type", "AssertionNotAchieved")
                rate = "n/a" if r.success_rate is None else f"{r.success_rate:.4f}"
                lines = [f"success_rate={rate} threshold={r.threshold}"]
                lines += [f"Then {text}" for text in r.assertions]
                node.text = "\n".join(lines)
            elif r.verdict == ERROR:
                node = ET.SubElement(case, "error")
                node.set("message", r.reason or "error")
                node.set("type", "ScenarioError")
                node.text = r.reason or ""
    ET.indent(root)
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="unicode") + "\n"
