"""Mine vulnerability-fix commits from local git repositories.

Walks every commit reachable from any ref, keeps single-parent commits
whose message matches a keyword filter, and extracts the parent-side
(pre-fix) image of each modified .py file together with the pre-fix
line numbers the fix touched.
"""

from __future__ import annotations

import difflib
import logging
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

from .errors import MiningError

log = logging.getLogger(__name__)

DEFAULT_PATTERNS = (
    "sql injection fixed",
    "sql injection prevented",
    "fix sql injection",
    "prevent sql injection",
)

# commits touching more files than this are treated as mass refactors
DEFAULT_MAX_FILES = 50


@dataclass(frozen=True)
class KeywordFilter:
    patterns: tuple[str, ...] = DEFAULT_PATTERNS

    def __post_init__(self):
        if not self.patterns:
            raise ValueError("keyword filter needs at least one pattern")
        if any(not p for p in self.patterns):
            raise ValueError("keyword patterns must be non-empty")

    @classmethod
    def from_file(cls, path: str | Path) -> "KeywordFilter":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        patterns = tuple(ln.strip() for ln in lines if ln.strip())
        return cls(patterns)


@dataclass(frozen=True)
class MinedChange:
    repo_id: str
    commit_id: str
    file_path: str
    pre_image: str
    changed_lines: tuple[int, ...]
    commit_message: str

    def __post_init__(self):
        if not self.changed_lines:
            raise ValueError("changed_lines must be non-empty")
        if list(self.changed_lines) != sorted(set(self.changed_lines)):
            raise ValueError("changed_lines must be strictly increasing")
        nlines = _count_lines(self.pre_image)
        if self.changed_lines[-1] > nlines:
            raise ValueError(
                f"changed line {self.changed_lines[-1]} beyond file end ({nlines} lines)"
            )
        if not self.file_path.endswith(".py"):
            raise ValueError("only Python sources are mined")


def match_commit(message: str, keyword_filter: KeywordFilter) -> bool:
    """True iff any pattern occurs case-insensitively in the message."""
    lowered = message.lower()
    return any(p.lower() in lowered for p in keyword_filter.patterns)


def _count_lines(text: str) -> int:
    if not text:
        return 0
    return text.count("\n") + (0 if text.endswith("\n") else 1)


def _split_lines(text: str) -> list[str]:
    # split on \n only so the count agrees with pylex.line_spans
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def changed_pre_lines(pre: str, post: str) -> list[int]:
    """1-based pre-image lines deleted or replaced by the pre→post edit.

    Pure insertions are anchored to the pre-image line immediately before
    the insertion point, clamped into [1, line count].
    """
    pre_lines = _split_lines(pre)
    post_lines = _split_lines(post)
    nlines = len(pre_lines)
    if nlines == 0:
        return []
    changed: set[int] = set()
    matcher = difflib.SequenceMatcher(a=pre_lines, b=post_lines, autojunk=False)
    for tag, i1, i2, j1, j2 in matcher.get_opcodes():
        if tag in ("replace", "delete"):
            changed.update(range(i1 + 1, i2 + 1))
        elif tag == "insert":
            changed.add(min(max(i1, 1), nlines))
    return sorted(changed)


def _git(repo: Path, *args: str) -> bytes:
    proc = subprocess.run(
        ["git", "-C", str(repo), *args],
        capture_output=True,
    )
    if proc.returncode != 0:
        raise MiningError(
            f"git {' '.join(args[:2])} failed in {repo}: "
            + proc.stderr.decode("utf-8", "replace").strip()
        )
    return proc.stdout


@dataclass
class _Commit:
    commit_id: str
    parents: list[str]
    timestamp: int
    message: str


def _list_commits(repo: Path) -> list[_Commit]:
    raw = _git(
        repo, "log", "--all", "--format=%H%x1f%P%x1f%ct%x1f%B%x1e"
    ).decode("utf-8", "replace")
    commits = []
    for record in raw.split("\x1e"):
        record = record.strip("\n")
        if not record:
            continue
        cid, parents, ts, message = record.split("\x1f", 3)
        commits.append(
            _Commit(cid, parents.split() if parents else [], int(ts), message)
        )
    return commits


def _changed_py_files(repo: Path, parent: str, commit: str) -> tuple[list[str], int]:
    """(modified .py paths, total changed file count) for one commit."""
    raw = _git(
        repo, "diff-tree", "-r", "--no-renames", "--name-status", parent, commit
    ).decode("utf-8", "replace")
    modified = []
    total = 0
    for line in raw.splitlines():
        if not line or "\t" not in line:
            continue
        status, path = line.split("\t", 1)
        total += 1
        if status == "M" and path.endswith(".py"):
            modified.append(path)
    return modified, total


def _blob(repo: Path, commit: str, path: str) -> bytes:
    return _git(repo, "show", f"{commit}:{path}")


def mine_repository(
    repo_path: str | Path,
    keyword_filter: KeywordFilter | None = None,
    max_files: int = DEFAULT_MAX_FILES,
    repo_id: str | None = None,
) -> list[MinedChange]:
    """Extract one MinedChange per modified .py file of each matching commit.

    Merge commits and root commits are skipped, as are commits touching
    more than max_files files. Output order is deterministic:
    (commit time, commit id, file path).
    """
    repo = Path(repo_path)
    keyword_filter = keyword_filter or KeywordFilter()
    if repo_id is None:
        repo_id = repo.name
    if not (repo / ".git").exists() and not (repo / "HEAD").exists():
        raise MiningError(f"{repo} is not a git repository")
    commits = _list_commits(repo)
    if not commits:
        raise MiningError(f"{repo} has no commits")

    matching = [
        c
        for c in commits
        if len(c.parents) == 1 and match_commit(c.message, keyword_filter)
    ]
    matching.sort(key=lambda c: (c.timestamp, c.commit_id))

    results: list[MinedChange] = []
    for commit in matching:
        parent = commit.parents[0]
        try:
            files, total = _changed_py_files(repo, parent, commit.commit_id)
        except MiningError as exc:
            log.warning("skipping commit %s: %s", commit.commit_id, exc)
            continue
        if total > max_files:
            log.info(
                "skipping commit %s: touches %d files (> %d)",
                commit.commit_id,
                total,
                max_files,
            )
            continue
        for path in sorted(files):
            try:
                pre_bytes = _blob(repo, parent, path)
                post_bytes = _blob(repo, commit.commit_id, path)
            except MiningError as exc:
                log.warning(
                    "skipping %s in commit %s: %s", path, commit.commit_id, exc
                )
                continue
            try:
                pre = pre_bytes.decode("utf-8")
                post = post_bytes.decode("utf-8")
            except UnicodeDecodeError:
                log.warning(
                    "skipping %s in commit %s: not valid UTF-8",
                    path,
                    commit.commit_id,
                )
                continue
            lines = changed_pre_lines(pre, post)
            if not lines:
                continue
            results.append(
                MinedChange(
                    repo_id=repo_id,
                    commit_id=commit.commit_id,
                    file_path=path,
                    pre_image=pre,
                    changed_lines=tuple(lines),
                    commit_message=commit.message,
                )
            )
    return results


def mine_repositories(
    repo_paths: list[str | Path],
    keyword_filter: KeywordFilter | None = None,
    max_files: int = DEFAULT_MAX_FILES,
) -> list[MinedChange]:
    """Mine several repositories; results concatenated in repo order."""
    out: list[MinedChange] = []
    for path in repo_paths:
        out.extend(mine_repository(path, keyword_filter, max_files))
    return out
