"""Record real API responses from the bundled demo exam as test fixtures.

Run from the repository root after any API change:

    python3 frontend/scripts/record_fixtures.py

The script replays the offline demo pipeline into a temporary directory,
serves it through the in-process HTTP client, and snapshots the JSON
bodies the console's contract tests assert against.
"""
from __future__ import annotations

import json
import os
import shutil
import sys
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from rubricon.service import pipeline
from rubricon.service.api import create_app
from rubricon.service.config import load_run_config
from rubricon.store import task_id_for

REPO_ROOT = Path(__file__).resolve().parent.parent.parent
DEMO_DIR = REPO_ROOT / "fixtures" / "mock_exam"
OUT_DIR = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def _dump(name: str, payload: object) -> None:
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    path = OUT_DIR / name
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {path.relative_to(REPO_ROOT)}")


def main() -> int:
    os.environ["RUBRICON_FIXED_TIME"] = "2026-01-01T00:00:00+00:00"
    with tempfile.TemporaryDirectory() as scratch:
        tree = Path(scratch) / "demo"
        shutil.copytree(DEMO_DIR, tree)
        config = load_run_config(tree / "run.yaml")
        transcripts = tree / "transcripts.jsonl"
        pipeline.extract_stage(config, tree / "pages", transcripts)
        # queue the unanswered item too so the fixtures cover all reasons
        pipeline.grade_stage(config, transcripts, "demo1", review_unanswered=True)

        app = create_app(config.runs_dir, truth_path=tree / "truth.yaml")
        with TestClient(app) as client:
            _dump("runs.json", client.get("/api/runs").json())
            _dump("queue.json", client.get("/api/runs/demo1/queue").json())
            detail_id = task_id_for("demo1", "s02", "2")
            _dump("task_detail.json", client.get(f"/api/tasks/{detail_id}").json())

            target = task_id_for("demo1", "s02", "3")
            resolved = client.post(
                f"/api/tasks/{target}/resolve",
                json={"points": "1.5", "reviewer": "casey", "note": "matches the worked integral"},
            )
            assert resolved.status_code == 200, resolved.text
            _dump("resolved_task.json", resolved.json())

            conflict = client.post(
                f"/api/tasks/{target}/resolve",
                json={"points": "1", "reviewer": "robin"},
            )
            assert conflict.status_code == 409, conflict.text
            _dump("error_409.json", conflict.json())

            _dump("report.json", client.get("/api/runs/demo1/report").json())
    return 0


if __name__ == "__main__":
    sys.exit(main())
