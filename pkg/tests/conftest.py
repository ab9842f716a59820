import contextlib

import pytest

from mvkt import diff
from mvkt.models import BackboneConfig
from mvkt.signal import Dataset
from mvkt.synth import SynthConfig, synth_generate
from mvkt.trainer import TrainConfig

diff.configure_determinism()

TINY_BACKBONE = BackboneConfig(stem_channels=8, n_blocks=2, proj_dim=16)


def tiny_train_config(**kw):
    base = dict(epochs=2, batch_size=16, negatives=32, seed=0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_dataset():
    manifest, records = synth_generate(SynthConfig(n_records=120, length=200))
    return Dataset(manifest, records)


ACCEPTANCE_LINES: list[str] = []


@contextlib.contextmanager
def criterion(number: int, title: str, detail: dict):
    """Record one PASS/FAIL line per acceptance criterion; ``detail`` is filled by the test."""
    try:
        yield
    except BaseException as e:
        line = f"criterion {number} FAIL  {title}  {_fmt(detail)}  ({type(e).__name__}: {str(e).splitlines()[0] if str(e) else ''})"
        print(line)
        ACCEPTANCE_LINES.append(line)
        raise
    line = f"criterion {number} PASS  {title}  {_fmt(detail)}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def _fmt(detail: dict) -> str:
    return " ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in detail.items())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
