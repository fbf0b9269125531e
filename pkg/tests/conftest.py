import shutil

import pytest

from trafficbench.pipeline import PipelineConfig, run_all
from trafficbench.synth import make_minicorpus


@pytest.fixture(scope="session")
def minicorpus(tmp_path_factory):
    """Generated mini-corpus with every stage already run; treat as read-only."""
    root = tmp_path_factory.mktemp("minicorpus")
    cfg_path = make_minicorpus(root, seed=7)
    cfg = PipelineConfig.load(cfg_path)
    summary = run_all(cfg)
    return {"root": root, "config_path": cfg_path, "cfg": cfg, "summary": summary}


@pytest.fixture
def corpus_copy(minicorpus, tmp_path):
    """Writable copy of the mini-corpus inputs (no outputs)."""
    root = tmp_path / "mc"
    shutil.copytree(minicorpus["root"], root, ignore=shutil.ignore_patterns("out"))
    return root


def pytest_terminal_summary(terminalreporter):
    from _acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        status, name, detail = RESULTS[n]
        line = f"criterion {n:>2} {status}: {name}"
        terminalreporter.write_line(line + (f" -- {detail}" if detail else ""))
