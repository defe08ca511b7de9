import os
from pathlib import Path

import numpy as np
import pytest
import torch


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


def public_dataset(name):
    """Path to a converted public dataset container, or skip.

    Set CROSSVIEW_DATA to a directory holding e.g. ``ip_cube.f32`` and
    ``ip_gt.u16`` (with their .json sidecars), produced by ``crossview convert``.
    """
    root = os.environ.get("CROSSVIEW_DATA")
    if not root:
        pytest.skip("CROSSVIEW_DATA not set; public dataset unavailable")
    path = Path(root) / name
    if not path.exists():
        pytest.skip(f"{path} not present")
    return path


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        passed, detail = RESULTS[number]
        verdict = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
        terminalreporter.write_line(f"criterion {number}: {verdict}  {detail}")
