"""Prompt construction for the four simulation conditions.

Every prompt shares the same role-game instruction and thread context;
the conditions differ only in the user-history block:

* ``RealHistory``   - the target author's own earlier comments, in place
* ``NoHistory``     - no history block (null model)
* ``ProCandidate``  - a scripted supporter reply, moved to the head of the prompt
* ``AntiCandidate`` - a scripted opponent reply, moved to the head of the prompt
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

from .corpus import ConversationTree, HistoryEntry, TargetComment, UserHistory
from .errors import MissingHistory, OversizeContext, TargetNotFound


class ScenarioKind(str, Enum):
    REAL_HISTORY = "RealHistory"
    NO_HISTORY = "NoHistory"
    PRO_CANDIDATE = "ProCandidate"
    ANTI_CANDIDATE = "AntiCandidate"


class Candidate(str, Enum):
    TRUMP = "Trump"
    CLINTON = "Clinton"


class Stance(str, Enum):
    PRO = "Pro"
    ANTI = "Anti"


PREAMBLE = (
    "User: We are playing a role game. I'm about to give you a post from Reddit with some "
    "comments. You will have to reply to the last one as its author would."
)

_INSTRUCTION = (
    PREAMBLE + "\n\n"
    "In order to do it, I will give you some previous relevant comments from the user whose "
    "text you have to simulate.\n\n"
    "The user you have to simulate is: <user>.\n\n"
)
_HISTORY_BLOCK = "The following are some previous comments from the user you have to simulate:\n\n<user_history>\n\n"
_THREAD = (
    "Now this is the thread where user <user> interacted; at the end, you'll have to reply as "
    "user <user> would.\n\n"
    "Post: <post>\n\n"
    "<comments>\n\n"
    "Assistant: User <user> replies:"
)

TEMPLATE = _INSTRUCTION + _HISTORY_BLOCK + _THREAD
PLACEHOLDERS = ("<user>", "<user_history>", "<post>", "<comments>")

# Scripted histories for the supporter / opponent conditions, kept verbatim
# (typographic apostrophes included).
_FICTITIOUS: dict[tuple[Candidate, Stance], tuple[str, str]] = {
    (Candidate.CLINTON, Stance.PRO): (
        "That’s why Hillary should’ve been president in the first place! She has the experience "
        "and the vision to lead this country forward. She’s spent decades fighting for women’s "
        "rights, healthcare, and working families. We need someone like her who actually "
        "understands policy and diplomacy, not just empty slogans.",
        "The country is at a critical crossroads, and we need a leader with experience, "
        "intelligence, and compassion. It’s time for someone who can tackle tough issues with "
        "grace and dignity, not divisive rhetoric.",
    ),
    (Candidate.TRUMP, Stance.PRO): (
        "That’s exactly why we need Trump back!  He’s the only one who actually put America "
        "first and didn’t bow down to the political elites. Under Trump, we had a strong "
        "economy, secure borders, and respect on the world stage. No one else will fight for "
        "the people like he does.",
        "America is facing big challenges, and it’s time for a leader who will bring us "
        "together to find real solutions. We can’t keep going down the path of division and "
        "hatred. We need someone who cares about all Americans, not just their base.",
    ),
    (Candidate.CLINTON, Stance.ANTI): (
        "Hillary Clinton is the last person this country needs. Her record is full of "
        "scandals, dishonesty, and failed policies. She represents corruption and the "
        "political establishment that has ignored regular Americans for years. Supporting her "
        "is supporting the same broken system that’s failed us time and time again.",
        "The country is at a critical crossroads, and we need a leader with experience, "
        "intelligence, and compassion. It’s time for someone who can tackle tough issues with "
        "grace and dignity, not divisive rhetoric.",
    ),
    (Candidate.TRUMP, Stance.ANTI): (
        "Donald Trump is exactly the kind of leader we don’t need. He spent his entire time in "
        "office stirring up anger, spreading lies, and tearing this country apart. His focus "
        "was never on unity or progress—it was always on dividing Americans and feeding his "
        "own ego. Electing him again would be a huge step backward.",
        "It’s time we move past the anger and division in our politics. We need leaders who "
        "prioritize unity and progress for all Americans, not just those who agree with them.",
    ),
}


def fictitious_history(candidate: Candidate | str, stance: Stance | str, author: str = "<user>") -> UserHistory:
    said, replied = _FICTITIOUS[(Candidate(candidate), Stance(stance))]
    return UserHistory(author, (HistoryEntry(said, replied),))


def estimate_tokens(text: str) -> int:
    """ceil(utf-8 bytes / 4)."""
    return math.ceil(len(text.encode("utf-8")) / 4)


def hash_author(name: str, salt: str = "") -> str:
    return "user_" + hashlib.sha256((salt + name).encode("utf-8")).hexdigest()[:10]


@dataclass(frozen=True)
class BranchContext:
    post: str
    comments: tuple[tuple[str, str], ...]  # (author, body), root side first

    @property
    def text(self) -> str:
        return "\n\n".join([f"Post: {self.post}", *self.comment_lines()])

    def comment_lines(self) -> list[str]:
        return [f"{author}: {body}" for author, body in self.comments]


def render_branch(tree: ConversationTree, target: TargetComment) -> BranchContext:
    """Root post plus every ancestor comment of ``target`` (target excluded)."""
    if target.tree_ref != tree.id or target.node_ref not in tree:
        raise TargetNotFound(f"{target.node_ref} not in tree {tree.id}")
    ancestors = tree.ancestors(target.node_ref)
    return BranchContext(tree.root.body, tuple((r.author, r.body) for r in ancestors))


def render_history(history: UserHistory, user: str) -> str:
    return "\n\n".join(
        f'User {user} says: "{e.user_comment}"\nin reply to: "{e.replied_to}"' for e in history.entries
    )


def _fill(template: str, values: dict[str, str]) -> str:
    # single pass so substituted text is never rescanned for placeholders
    return re.sub("|".join(map(re.escape, values)), lambda m: values[m.group(0)], template)


def scenario_template(scenario: ScenarioKind) -> str:
    if scenario is ScenarioKind.REAL_HISTORY:
        return TEMPLATE
    if scenario is ScenarioKind.NO_HISTORY:
        return _INSTRUCTION + _THREAD
    return _HISTORY_BLOCK + _INSTRUCTION + _THREAD


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.0
    top_p: float = 1.0
    model_name: str = "gpt-4"

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p {self.top_p} outside (0, 1]")

    def to_dict(self) -> dict:
        return {"temperature": self.temperature, "top_p": self.top_p, "model_name": self.model_name}


@dataclass(frozen=True)
class PromptBundle:
    scenario: ScenarioKind
    target_ref: str
    author: str
    text: str
    token_estimate: int
    candidate: Candidate | None = None
    generation_params: GenerationParams = field(default_factory=GenerationParams)
    history_entries: int = 0
    dropped_history: int = 0
    dropped_comments: int = 0

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.value,
            "candidate": self.candidate.value if self.candidate else None,
            "target_ref": self.target_ref,
            "author": self.author,
            "text": self.text,
            "token_estimate": self.token_estimate,
            "history_entries": self.history_entries,
            "dropped_history": self.dropped_history,
            "dropped_comments": self.dropped_comments,
        }

    @classmethod
    def from_dict(cls, d: dict, params: GenerationParams | None = None) -> "PromptBundle":
        return cls(
            scenario=ScenarioKind(d["scenario"]),
            target_ref=d["target_ref"],
            author=d["author"],
            text=d["text"],
            token_estimate=d["token_estimate"],
            candidate=Candidate(d["candidate"]) if d.get("candidate") else None,
            generation_params=params or GenerationParams(),
            history_entries=d.get("history_entries", 0),
            dropped_history=d.get("dropped_history", 0),
            dropped_comments=d.get("dropped_comments", 0),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)


def build_prompt(
    branch: BranchContext,
    history: UserHistory | None,
    scenario: ScenarioKind | str,
    author: str,
    *,
    target_ref: str = "",
    candidate: Candidate | str | None = None,
    params: GenerationParams | None = None,
    token_budget: int | None = None,
    estimator: Callable[[str], int] = estimate_tokens,
) -> PromptBundle:
    """Render one generation prompt.

    When ``token_budget`` is set and exceeded, the oldest history entries are
    dropped first (one is always kept), then thread comments starting from the
    one nearest the post (the direct parent is always kept). The post and the
    instruction text are never cut; if that still does not fit,
    :class:`OversizeContext` is raised.
    """
    scenario = ScenarioKind(scenario)
    candidate = Candidate(candidate) if candidate is not None else None
    if scenario is ScenarioKind.NO_HISTORY:
        if history is not None and len(history):
            raise ValueError("NoHistory prompts take no history")
        history = None
    elif history is None or not len(history):
        raise MissingHistory(f"{scenario.value} prompt needs a non-empty history")

    entries = list(history.entries) if history else []
    comments = list(branch.comments)
    template = scenario_template(scenario)
    dropped_h = dropped_c = 0

    def render() -> str:
        values = {
            "<user>": author,
            "<post>": branch.post,
            "<comments>": "\n\n".join(f"{a}: {b}" for a, b in comments),
            "<user_history>": render_history(UserHistory(author, tuple(entries)), author),
        }
        return _fill(template, values)

    text = render()
    if token_budget is not None:
        while estimator(text) > token_budget:
            if len(entries) > 1:
                entries.pop(0)
                dropped_h += 1
            elif len(comments) > 1:
                comments.pop(0)
                dropped_c += 1
            else:
                raise OversizeContext(
                    f"prompt needs {estimator(text)} tokens, budget is {token_budget}"
                )
            text = render()

    return PromptBundle(
        scenario=scenario,
        target_ref=target_ref,
        author=author,
        text=text,
        token_estimate=estimator(text),
        candidate=candidate,
        generation_params=params or GenerationParams(),
        history_entries=len(entries),
        dropped_history=dropped_h,
        dropped_comments=dropped_c,
    )


def build_scenarios(
    tree: ConversationTree,
    target: TargetComment,
    history: UserHistory | None,
    candidate: Candidate | str,
    scenarios=tuple(ScenarioKind),
    *,
    params: GenerationParams | None = None,
    token_budget: int | None = None,
    anonymize_salt: str | None = None,
    estimator: Callable[[str], int] = estimate_tokens,
) -> list[PromptBundle]:
    """All requested scenario prompts for one target."""
    branch = render_branch(tree, target)
    author = target.author
    if anonymize_salt is not None:
        author = hash_author(author, anonymize_salt)
        branch = replace(branch, comments=tuple((hash_author(a, anonymize_salt), b) for a, b in branch.comments))
    out = []
    for sc in map(ScenarioKind, scenarios):
        if sc is ScenarioKind.REAL_HISTORY:
            if history is None or not len(history):
                continue
            hist = history
        elif sc is ScenarioKind.NO_HISTORY:
            hist = None
        else:
            stance = Stance.PRO if sc is ScenarioKind.PRO_CANDIDATE else Stance.ANTI
            hist = fictitious_history(candidate, stance, author)
        out.append(
            build_prompt(branch, hist, sc, author, target_ref=target.ref, candidate=candidate,
                         params=params, token_budget=token_budget, estimator=estimator)
        )
    return out
