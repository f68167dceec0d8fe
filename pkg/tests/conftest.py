"""
Test configuration for reqvec.

Settings are rebuilt for every test from a clean environment, with `.env`
loading disabled. Small synthetic corpora, a vocabulary and a tiny encoder
are built once per session.
"""

from __future__ import annotations

import os
import sys
from pathlib import Path

import pytest


def _ensure_project_root_on_syspath() -> None:
    # tests/ directory
    here = Path(__file__).resolve()
    # project root = parent of tests/
    project_root = here.parent.parent

    if str(project_root) not in sys.path:
        sys.path.insert(0, str(project_root))


_ensure_project_root_on_syspath()


@pytest.fixture(autouse=True)
def clean_settings(monkeypatch):
    """
    Reset the settings singleton for each test.

    No REQVEC_* variable from the caller's shell and no `.env` file leaks
    into a test.
    """
    for var in [name for name in os.environ if name.startswith("REQVEC_")]:
        monkeypatch.delenv(var, raising=False)

    import reqvec.config as config_module
    from pydantic_settings import SettingsConfigDict

    test_config = SettingsConfigDict(
        env_file=None,  # No .env file loading
        env_file_encoding="utf-8",
        extra="ignore",
    )
    monkeypatch.setattr(config_module.Settings, "model_config", test_config)
    monkeypatch.setattr(config_module, "settings", config_module.Settings())


@pytest.fixture(scope="session")
def train_corpus():
    from reqvec.schemas import SyntheticSpec
    from reqvec.synthetic import generate_synthetic_corpus

    return generate_synthetic_corpus(SyntheticSpec(normal=60, split="train", seed=11))


@pytest.fixture(scope="session")
def inference_corpus():
    from reqvec.schemas import SyntheticSpec
    from reqvec.synthetic import generate_synthetic_corpus

    return generate_synthetic_corpus(SyntheticSpec(normal=30, anomaly=30, seed=12))


@pytest.fixture(scope="session")
def small_vocab(train_corpus, inference_corpus):
    from reqvec.tokenizer import train_bbpe

    return train_bbpe([train_corpus, inference_corpus], vocab_size=420, seed=0)


@pytest.fixture(scope="session")
def tiny_config(small_vocab):
    from reqvec.schemas import EncoderConfig

    return EncoderConfig(
        num_layers=2,
        num_heads=2,
        hidden_size=16,
        max_seq_len=96,
        vocab_size=small_vocab.size,
        dropout=0.0,
        seed=3,
    )


@pytest.fixture(scope="session")
def tiny_encoder(tiny_config):
    from reqvec.encoder import init_encoder

    return init_encoder(tiny_config)
