import logging

from config.settings import configure_settings
from services.run_logger import RunLogger, get_run_logger


def test_log_run_appends_json_lines(tmp_path):
    run_logger = RunLogger(str(tmp_path / "logs"))
    run_logger.log_run("simulate", {"seed": 3, "rule": "naive"}, 0, 12, summary={"clicks": [1, 2]})
    run_logger.log_run("check", {"seed": 4}, 1, 30, error="violation", outputs=["results/cex.txt"])
    runs = run_logger.read_runs()
    assert [r["command"] for r in runs] == ["simulate", "check"]
    assert runs[0]["seed"] == 3
    assert runs[0]["summary"] == {"clicks": [1, 2]}
    assert runs[1]["outputs"] == ["results/cex.txt"]
    assert runs[0]["session_id"] == runs[1]["session_id"] == run_logger.get_session_id()


def test_read_runs_without_a_log_file(tmp_path):
    assert RunLogger(str(tmp_path / "empty")).read_runs() == []


def test_unwritable_log_is_reported_not_raised(tmp_path, caplog):
    blocked = tmp_path / "blocked"
    blocked.write_text("not a directory")
    with caplog.at_level(logging.ERROR):
        RunLogger(str(blocked)).log_run("sweep", {"seed": 1}, 0, 5)
    assert "Failed to write run log entry" in caplog.text


def test_global_logger_follows_the_logs_directory(tmp_path):
    first = get_run_logger()
    assert get_run_logger() is first
    configure_settings(logs_directory=str(tmp_path / "other"))
    second = get_run_logger()
    assert second is not first
    assert second.log_file_path == tmp_path / "other" / "runs.jsonl"
