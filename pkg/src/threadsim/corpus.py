"""Ingestion of Reddit JSONL dumps and conversation-tree reconstruction.

Input lines follow the Pushshift/Politosphere field names (``id``,
``parent_id``, ``link_id``, ``author``, ``body``, ``created_utc``,
``subreddit``); extra fields are ignored. Records are grouped into one
:class:`ConversationTree` per post, and comments that cannot be attached
to a post are kept aside as orphans so nothing is silently lost.
"""
from __future__ import annotations

import datetime as dt
import json
import re
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Iterator

from .errors import CycleDetected, EmptyInput

DELETED_AUTHORS = frozenset({"[deleted]", "[removed]"})
UNAVAILABLE = "[unavailable]"

_PREFIX_RE = re.compile(r"^t\d_")


class Kind(str, Enum):
    POST = "Post"
    COMMENT = "Comment"


def strip_prefix(ref: str | None) -> str | None:
    """Drop a Reddit fullname prefix (``t1_``, ``t3_``...) if present."""
    if ref is None:
        return None
    return _PREFIX_RE.sub("", ref, count=1)


@dataclass(frozen=True)
class RawRecord:
    id: str
    author: str
    body: str
    created_utc: int
    subreddit: str
    kind: Kind
    parent_id: str | None = None
    link_id: str | None = None

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "author": self.author,
            "body": self.body,
            "created_utc": self.created_utc,
            "subreddit": self.subreddit,
        }
        if self.kind is Kind.COMMENT:
            d["parent_id"] = self.parent_id
            d["link_id"] = self.link_id
        return d


@dataclass(frozen=True)
class Diagnostic:
    line: int
    reason: str

    def to_dict(self) -> dict:
        return {"line": self.line, "reason": self.reason}


@dataclass
class ParsedDump:
    records: list[RawRecord]
    skipped: list[Diagnostic]
    n_lines: int = 0  # non-blank lines seen


def _record_from_obj(obj: dict) -> RawRecord:
    if not isinstance(obj, dict):
        raise ValueError("line is not a JSON object")
    rid = strip_prefix(obj.get("id"))
    if not isinstance(rid, str) or not rid:
        raise ValueError("missing or empty id")
    author = obj.get("author")
    if not isinstance(author, str) or not author:
        raise ValueError("missing author")
    try:
        created = int(float(obj.get("created_utc")))
    except (TypeError, ValueError):
        raise ValueError("created_utc is not a number") from None
    if created <= 0:
        raise ValueError("created_utc must be positive")

    parent = obj.get("parent_id") or None
    link = obj.get("link_id") or None
    if (parent is None) != (link is None):
        raise ValueError("comment needs both parent_id and link_id")
    kind = Kind.COMMENT if parent is not None else Kind.POST

    body = obj.get("body")
    if body is None and kind is Kind.POST:
        # submissions carry title/selftext instead of body
        parts = [obj.get("title") or "", obj.get("selftext") or ""]
        body = "\n\n".join(p for p in parts if p)
    if not isinstance(body, str):
        raise ValueError("missing body")

    return RawRecord(
        id=rid,
        author=author,
        body=body,
        created_utc=created,
        subreddit=str(obj.get("subreddit") or ""),
        kind=kind,
        parent_id=strip_prefix(parent),
        link_id=strip_prefix(link),
    )


def parse_dump(lines: Iterable[str], *, allow_empty: bool = False) -> ParsedDump:
    """Parse JSONL text into records.

    Malformed lines and duplicate ids are skipped with a diagnostic that
    carries the 1-based line number. Raises :class:`EmptyInput` when no
    valid record remains (unless ``allow_empty``).
    """
    records: list[RawRecord] = []
    skipped: list[Diagnostic] = []
    seen: set[str] = set()
    n_lines = 0
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        n_lines += 1
        try:
            rec = _record_from_obj(json.loads(line))
        except json.JSONDecodeError as exc:
            skipped.append(Diagnostic(lineno, f"invalid JSON: {exc.msg}"))
            continue
        except ValueError as exc:
            skipped.append(Diagnostic(lineno, str(exc)))
            continue
        if rec.id in seen:
            skipped.append(Diagnostic(lineno, f"duplicate id {rec.id}"))
            continue
        seen.add(rec.id)
        records.append(rec)
    if not records and not allow_empty:
        raise EmptyInput(f"no valid records ({len(skipped)} lines skipped)")
    return ParsedDump(records, skipped, n_lines)


def parse_files(paths: Iterable, *, allow_empty: bool = False) -> ParsedDump:
    """Parse several dump files as one logical stream (ids unique across files)."""

    def lines() -> Iterator[str]:
        for p in paths:
            with open(p, encoding="utf-8") as fh:
                yield from fh

    return parse_dump(lines(), allow_empty=allow_empty)


def _child_key(node: "CommentNode"):
    return (node.record.created_utc, node.record.id)


@dataclass(frozen=True)
class CommentNode:
    record: RawRecord
    children: tuple["CommentNode", ...] = ()

    @property
    def id(self) -> str:
        return self.record.id

    def walk(self) -> Iterator["CommentNode"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))


@dataclass(frozen=True)
class ConversationTree:
    root: RawRecord
    comments: tuple[CommentNode, ...] = ()

    @property
    def id(self) -> str:
        return self.root.id

    @property
    def subreddit(self) -> str:
        return self.root.subreddit

    def walk(self) -> Iterator[CommentNode]:
        """Pre-order traversal of comment nodes (root post excluded)."""
        for top in self.comments:
            yield from top.walk()

    @property
    def size(self) -> int:
        return 1 + len(self._index)

    @cached_property
    def _index(self) -> dict[str, CommentNode]:
        return {n.id: n for n in self.walk()}

    def node(self, comment_id: str) -> CommentNode | None:
        return self._index.get(comment_id)

    def __contains__(self, comment_id: str) -> bool:
        return comment_id in self._index

    def ancestors(self, comment_id: str) -> list[RawRecord]:
        """Comment records from the top-level comment down to the parent of ``comment_id``."""
        chain: list[RawRecord] = []
        cur = self._index[comment_id].record
        while cur.parent_id != self.root.id:
            cur = self._index[cur.parent_id].record
            chain.append(cur)
        chain.reverse()
        return chain

    def parent_record(self, comment_id: str) -> RawRecord:
        rec = self._index[comment_id].record
        if rec.parent_id == self.root.id:
            return self.root
        return self._index[rec.parent_id].record

    # serialization
    def to_dict(self) -> dict:
        def node_dict(n: CommentNode) -> dict:
            d = n.record.to_dict()
            d["children"] = [node_dict(c) for c in n.children]
            return d

        return {
            "id": self.id,
            "subreddit": self.subreddit,
            "root": self.root.to_dict(),
            "comments": [node_dict(c) for c in self.comments],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConversationTree":
        def make_node(nd: dict) -> CommentNode:
            rec = _record_from_obj({k: v for k, v in nd.items() if k != "children"})
            return CommentNode(rec, tuple(make_node(c) for c in nd.get("children", [])))

        root = _record_from_obj(d["root"])
        return cls(root, tuple(make_node(c) for c in d.get("comments", [])))


@dataclass(frozen=True)
class Orphan:
    record: RawRecord
    reason: str  # missing_parent | orphan_ancestor | link_mismatch

    def to_dict(self) -> dict:
        return {"reason": self.reason, "record": self.record.to_dict()}


@dataclass
class Forest:
    trees: list[ConversationTree]
    orphans: list[Orphan] = field(default_factory=list)

    def __iter__(self):
        return iter(self.trees)

    def __len__(self) -> int:
        return len(self.trees)

    @property
    def n_nodes(self) -> int:
        return sum(t.size for t in self.trees)

    def comments(self) -> Iterator[tuple[ConversationTree, CommentNode]]:
        for tree in self.trees:
            for node in tree.walk():
                yield tree, node

    @cached_property
    def _locator(self) -> dict[str, ConversationTree]:
        loc = {}
        for tree in self.trees:
            loc[tree.id] = tree
            for n in tree.walk():
                loc[n.id] = tree
        return loc

    def tree_of(self, record_id: str) -> ConversationTree | None:
        return self._locator.get(record_id)

    def record(self, record_id: str) -> RawRecord | None:
        tree = self.tree_of(record_id)
        if tree is None:
            return None
        if tree.id == record_id:
            return tree.root
        return tree.node(record_id).record


def build_forest(records: Iterable[RawRecord]) -> Forest:
    """Attach comments to their parents and return one tree per post.

    Children are ordered by ``(created_utc, id)`` and trees by the same key
    on their root, so the result does not depend on input order. Raises
    :class:`CycleDetected` if parent links loop.
    """
    posts: dict[str, RawRecord] = {}
    comments: dict[str, RawRecord] = {}
    for rec in records:
        (posts if rec.kind is Kind.POST else comments)[rec.id] = rec

    # cycle check over comment->comment parent links
    state: dict[str, int] = {}  # 1 = on current path, 2 = done
    for start in comments:
        path = []
        cur = start
        while cur in comments and state.get(cur) != 2:
            if state.get(cur) == 1:
                raise CycleDetected(f"parent links loop through comment {cur}")
            state[cur] = 1
            path.append(cur)
            cur = comments[cur].parent_id
        for cid in path:
            state[cid] = 2

    # resolve each comment's fate by walking up to a post
    fate: dict[str, str | None] = {}  # None = attached, otherwise orphan reason

    def resolve(cid: str) -> str | None:
        trail = []
        cur = cid
        while cur not in fate:
            rec = comments[cur]
            if rec.parent_id in posts:
                fate[cur] = None if rec.link_id == rec.parent_id else "link_mismatch"
                break
            if rec.parent_id not in comments:
                fate[cur] = "missing_parent"
                break
            trail.append(cur)
            cur = rec.parent_id
        for t in reversed(trail):
            parent_fate = fate[comments[t].parent_id]
            if parent_fate is not None:
                fate[t] = "orphan_ancestor"
            elif comments[t].link_id != comments[comments[t].parent_id].link_id:
                fate[t] = "link_mismatch"
            else:
                fate[t] = None
        return fate[cid]

    children: dict[str, list[str]] = defaultdict(list)
    orphans: list[Orphan] = []
    for cid, rec in comments.items():
        reason = resolve(cid)
        if reason is None:
            children[rec.parent_id].append(cid)
        else:
            orphans.append(Orphan(rec, reason))

    def make(cid: str) -> CommentNode:
        kids = sorted((make(k) for k in children.get(cid, ())), key=_child_key)
        return CommentNode(comments[cid], tuple(kids))

    trees = []
    for pid, post in posts.items():
        tops = sorted((make(k) for k in children.get(pid, ())), key=_child_key)
        trees.append(ConversationTree(post, tuple(tops)))
    trees.sort(key=lambda t: (t.root.created_utc, t.root.id))
    orphans.sort(key=lambda o: (o.record.created_utc, o.record.id))
    return Forest(trees, orphans)


# canonical serialization

def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def forest_to_jsonl(forest: Forest) -> str:
    return "".join(_dumps(t.to_dict()) + "\n" for t in forest.trees)


def orphans_to_jsonl(forest: Forest) -> str:
    return "".join(_dumps(o.to_dict()) + "\n" for o in forest.orphans)


def forest_from_jsonl(text: str, orphans_text: str = "") -> Forest:
    trees = [ConversationTree.from_dict(json.loads(l)) for l in text.splitlines() if l.strip()]
    orphans = []
    for line in orphans_text.splitlines():
        if line.strip():
            d = json.loads(line)
            orphans.append(Orphan(_record_from_obj(d["record"]), d["reason"]))
    return Forest(trees, orphans)


def flatten(forest: Forest) -> list[RawRecord]:
    """All records (posts, attached comments, orphans) in canonical order."""
    out = []
    for tree in forest.trees:
        out.append(tree.root)
        out.extend(n.record for n in tree.walk())
    out.extend(o.record for o in forest.orphans)
    return out


def records_to_jsonl(records: Iterable[RawRecord]) -> str:
    return "".join(_dumps(r.to_dict()) + "\n" for r in records)


# windows, users, histories, targets

@dataclass(frozen=True)
class Window:
    """Half-open UTC interval ``[start, end)`` in epoch seconds."""

    start: int
    end: int

    @classmethod
    def from_dates(cls, start: str | dt.date, end: str | dt.date) -> "Window":
        def ts(d) -> int:
            if isinstance(d, str):
                d = dt.date.fromisoformat(d)
            return int(dt.datetime(d.year, d.month, d.day, tzinfo=dt.timezone.utc).timestamp())

        return cls(ts(start), ts(end))

    @classmethod
    def year(cls, year: int) -> "Window":
        return cls.from_dates(dt.date(year, 1, 1), dt.date(year + 1, 1, 1))

    def __contains__(self, ts: int) -> bool:
        return self.start <= ts < self.end

    def as_dates(self) -> tuple[str, str]:
        f = lambda t: dt.datetime.fromtimestamp(t, dt.timezone.utc).date().isoformat()  # noqa: E731
        return f(self.start), f(self.end)


def _in(window: Window | None, ts: int) -> bool:
    return window is None or ts in window


def _authors(forest: Forest, window: Window | None) -> set[str]:
    found = {node.record.author for _, node in forest.comments() if _in(window, node.record.created_utc)}
    found.update(o.record.author for o in forest.orphans if _in(window, o.record.created_utc))
    return found


def select_users(
    forest_hist: Forest,
    forest_target: Forest,
    hist_window: Window | None = None,
    target_window: Window | None = None,
) -> list[str]:
    """Authors commenting in both windows, deleted sentinels excluded, sorted."""
    both = _authors(forest_hist, hist_window) & _authors(forest_target, target_window)
    return sorted(both - DELETED_AUTHORS)


@dataclass(frozen=True)
class HistoryEntry:
    user_comment: str
    replied_to: str
    created_utc: int = 0
    comment_id: str = ""


@dataclass(frozen=True)
class UserHistory:
    author: str
    entries: tuple[HistoryEntry, ...]
    window: tuple[str, str] | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def to_dict(self) -> dict:
        return {
            "author": self.author,
            "window": list(self.window) if self.window else None,
            "entries": [
                {"comment_id": e.comment_id, "created_utc": e.created_utc,
                 "user_comment": e.user_comment, "replied_to": e.replied_to}
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UserHistory":
        entries = tuple(
            HistoryEntry(e["user_comment"], e["replied_to"], e.get("created_utc", 0), e.get("comment_id", ""))
            for e in d["entries"]
        )
        window = tuple(d["window"]) if d.get("window") else None
        return cls(d["author"], entries, window)


def extract_history(
    author: str,
    forest_hist: Forest,
    window: Window | None = None,
) -> UserHistory:
    """Pair each of ``author``'s comments with the text it replied to.

    Orphaned comments whose parent is not in the dump get the
    ``[unavailable]`` placeholder instead of being dropped.
    """
    orphan_by_id = {o.record.id: o.record for o in forest_hist.orphans}
    found: list[HistoryEntry] = []
    for tree, node in forest_hist.comments():
        rec = node.record
        if rec.author == author and _in(window, rec.created_utc):
            parent = tree.parent_record(rec.id)
            found.append(HistoryEntry(rec.body, parent.body, rec.created_utc, rec.id))
    for orphan in forest_hist.orphans:
        rec = orphan.record
        if rec.author == author and _in(window, rec.created_utc):
            parent = orphan_by_id.get(rec.parent_id) or forest_hist.record(rec.parent_id)
            replied = parent.body if parent is not None else UNAVAILABLE
            found.append(HistoryEntry(rec.body, replied, rec.created_utc, rec.id))
    found.sort(key=lambda e: (e.created_utc, e.comment_id))
    return UserHistory(author, tuple(found), window.as_dates() if window else None)


@dataclass(frozen=True)
class TargetComment:
    tree_ref: str
    node_ref: str
    author: str
    body: str
    created_utc: int = 0
    path: tuple[str, ...] = ()  # root id, then ancestor comment ids down to the parent

    @property
    def ref(self) -> str:
        return f"{self.tree_ref}/{self.node_ref}"

    def to_dict(self) -> dict:
        return {
            "tree_ref": self.tree_ref,
            "node_ref": self.node_ref,
            "author": self.author,
            "body": self.body,
            "created_utc": self.created_utc,
            "path": list(self.path),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TargetComment":
        return cls(d["tree_ref"], d["node_ref"], d["author"], d["body"],
                   d.get("created_utc", 0), tuple(d.get("path", ())))


def extract_targets(author: str, forest_target: Forest, window: Window | None = None) -> list[TargetComment]:
    """The author's leaf comments (no replies), each with its root-to-parent path."""
    out = []
    for tree, node in forest_target.comments():
        rec = node.record
        if rec.author != author or node.children or not _in(window, rec.created_utc):
            continue
        path = (tree.id,) + tuple(r.id for r in tree.ancestors(rec.id))
        out.append(TargetComment(tree.id, rec.id, author, rec.body, rec.created_utc, path))
    out.sort(key=lambda t: (t.created_utc, t.node_ref))
    return out
