import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA = {
    "A1": "gradient soundness (finite differences, >= 20 seeds, rel err < 1e-4)",
    "A2": "gate-equivalence oracles (all-off, dense LoRA, explicit per-object delta)",
    "A3": "STE / Gumbel-sigmoid contracts",
    "A4": "metric oracles (brute force on 500 random 8x8 pairs)",
    "A5": "corruption contracts",
    "A6": "component ordering on corrupted toy eval (full >= memory > base + 1.0)",
    "A7": "clean retention (|adapted - base| <= 1.0 J&F point)",
    "A8": "freeze and parameter-count contracts",
    "A9": "determinism of train-moga and eval",
    "A10": "gate consistency on a static clip + export-gates cardinality",
}

_results: dict[str, list[str]] = {}
_details: dict[str, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(id): test belongs to an acceptance criterion")


def record_detail(cid: str, text: str) -> None:
    """Attach a measured value to a criterion's summary line."""
    _details.setdefault(cid, []).append(text)


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if call.when == "call" or call.excinfo is not None:
        outcome = "passed" if call.excinfo is None else (
            "skipped" if call.excinfo.errisinstance(__import__("pytest").skip.Exception) else "failed")
        _results.setdefault(marker.args[0], []).append(outcome)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid, title in CRITERIA.items():
        outs = _results.get(cid)
        if not outs:
            status = "NOT RUN"
        elif "failed" in outs:
            status = "FAIL"
        elif all(o == "skipped" for o in outs):
            status = "SKIP"
        else:
            status = "PASS"
        extra = ("  [" + "; ".join(_details[cid]) + "]") if cid in _details else ""
        tr.write_line(f"{cid:<4} {status:<8} {title}{extra}")
