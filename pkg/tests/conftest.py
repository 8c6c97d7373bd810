from __future__ import annotations

import shutil
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent
DEMO_DIR = REPO_ROOT / "fixtures" / "mock_exam"


@pytest.fixture
def demo_tree(tmp_path) -> Path:
    """A throwaway copy of the bundled offline demo, safe to write into."""
    target = tmp_path / "demo"
    shutil.copytree(DEMO_DIR, target)
    return target
