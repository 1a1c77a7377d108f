import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vqa_augment.dataset import DatasetRow, QuestionType  # noqa: E402
from vqa_augment.model import ModelConfig, RowInputs, init_params  # noqa: E402

# gradient-check fixture: E=4, H=4, h=3, N=3 frames, L=4 tokens (2 question + 2 answer)
TINY = ModelConfig(E=4, D=6, H=4, h=3)


def make_row(row_id="r0", candidates=("a", "b", "c", "d", "e"), label=0, qtype=QuestionType.Col,
             split="train", question="what is it", clip_id=None):
    return DatasetRow(row_id=row_id, clip_id=clip_id or f"clip_{row_id}", question=question,
                      candidates=tuple(candidates), label=label, qtype=qtype, split=split)


@pytest.fixture
def tiny_params():
    return init_params(TINY, seed=7, dtype=np.float64)


@pytest.fixture
def tiny_inputs():
    rng = np.random.default_rng(1234)
    q = rng.normal(size=(2, TINY.E))
    answers = tuple(rng.normal(size=(2, TINY.E)) for _ in range(5))
    video = rng.uniform(-1, 1, size=(3, TINY.D))
    return RowInputs(q, answers, video, label=2)


# --- acceptance reporting ------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, text = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        _CRITERIA[n] = (status, text)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, text = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {text}")
