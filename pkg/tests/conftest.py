import numpy as np
import pytest

import selc_lab as sl


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_noisy_view():
    """A 300-sample 3-class blob set with 40% symmetric noise injected."""
    spec = sl.BlobSpec(n=300, dim=8, num_classes=3, cluster_std=0.4, seed=5)
    x, y = sl.generate_blobs(spec, split="train")
    tm = sl.build_symmetric_q(3, 0.4)
    ds = sl.make_noisy_dataset(x, y, tm, seed=11)
    return ds


def _criterion_key(nodeid: str):
    # test_criterion_03_whatever -> 3
    marker = "test_criterion_"
    idx = nodeid.find(marker)
    if idx < 0:
        return None
    tail = nodeid[idx + len(marker):]
    digits = ""
    for ch in tail:
        if ch.isdigit():
            digits += ch
        else:
            break
    return int(digits) if digits else None


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One visible pass/fail line per acceptance criterion."""
    lines = {}
    for status, verdict in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            num = _criterion_key(nodeid)
            if num is not None and "test_acceptance" in nodeid:
                name = nodeid.split("::")[-1].replace(f"test_criterion_{num:02d}_", "").replace("_", " ")
                lines[num] = f"criterion {num} ({name}): {verdict}"
    if lines:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance criteria")
        for num in sorted(lines):
            terminalreporter.write_line("  " + lines[num])
