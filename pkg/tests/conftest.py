from pathlib import Path

import numpy as np
import pytest

from fmla.config import TOY_GRADCHECK, load_run_config
from fmla.model import FMLAModel, ModelConfig

FIXTURES = Path(__file__).parent / "fixtures"
UCR_ROOT = Path(__file__).resolve().parents[1] / "data" / "UCR"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_config() -> ModelConfig:
    return load_run_config(None, TOY_GRADCHECK).model


@pytest.fixture
def toy_model(toy_config) -> FMLAModel:
    return FMLAModel(toy_config)


@pytest.fixture
def fixture_dir() -> Path:
    return FIXTURES / "UCR"


def tiny_config(**kw) -> ModelConfig:
    base = dict(num_blocks=2, d=16, num_heads=2, C=4, dcn_channels=(8, 8), seq_len=32, num_classes=2)
    base.update(kw)
    return ModelConfig(**base)


ACCEPTANCE: dict[int, str] = {}


def verdict(number: int, title: str, ok: bool, detail: str) -> bool:
    """Record one acceptance line; the terminal summary prints them in order."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
