import subprocess
from pathlib import Path

import pytest

GIT_ENV = {
    "GIT_AUTHOR_NAME": "tester",
    "GIT_AUTHOR_EMAIL": "tester@example.com",
    "GIT_COMMITTER_NAME": "tester",
    "GIT_COMMITTER_EMAIL": "tester@example.com",
    "GIT_AUTHOR_DATE": "2020-01-01T00:00:00 +0000",
    "GIT_COMMITTER_DATE": "2020-01-01T00:00:00 +0000",
    "HOME": "/tmp",
}


def git(repo: Path, *args: str, date: str | None = None):
    env = dict(GIT_ENV)
    if date:
        env["GIT_AUTHOR_DATE"] = env["GIT_COMMITTER_DATE"] = date
    subprocess.run(
        ["git", "-C", str(repo), *args],
        check=True,
        env=env,
        capture_output=True,
    )


def make_repo(root: Path, name: str = "repo") -> Path:
    repo = root / name
    repo.mkdir(parents=True)
    git(repo, "init", "-q", "-b", "main")
    return repo


def commit_file(repo: Path, relpath: str, content: str, message: str, date=None):
    target = repo / relpath
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(content, encoding="utf-8")
    git(repo, "add", relpath)
    git(repo, "commit", "-q", "-m", message, "--allow-empty", date=date)


PRE_FIX_APP = """\
import sqlite3

def get_user(db, uid):
    q = "SELECT * FROM users WHERE id=" + uid
    return db.execute(q)

def unrelated():
    return 42
"""

POST_FIX_APP = """\
import sqlite3

def get_user(db, uid):
    q = "SELECT * FROM users WHERE id=?"
    return db.execute(q, (uid,))

def unrelated():
    return 42
"""


@pytest.fixture
def fixture_repo(tmp_path):
    """3-commit repo: init, SQL-injection fix editing app.py lines 4-5, typo."""
    repo = make_repo(tmp_path)
    commit_file(repo, "app.py", PRE_FIX_APP, "init", date="2020-01-01T00:00:00 +0000")
    commit_file(
        repo, "app.py", POST_FIX_APP, "SQL injection fixed",
        date="2020-01-02T00:00:00 +0000",
    )
    commit_file(
        repo, "README.md", "readme\n", "typo", date="2020-01-03T00:00:00 +0000"
    )
    return repo
