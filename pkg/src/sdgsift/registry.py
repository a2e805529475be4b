"""Machine-readable registry of the 17 UN Sustainable Development Goals.

The registry is loaded from a JSON data file so that goals 2-17 can be
extended (targets filled in) without touching code. Target descriptions are
stored verbatim and injected into prompts unmodified.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import IO, Iterable

GOAL_MIN = 1
GOAL_MAX = 17

_TARGET_ID_RE = re.compile(r"^(\d{1,2})\.([1-9]\d*)$")


class RegistryError(ValueError):
    """A registry file violates the schema or a goal/target invariant."""


class UnknownGoalError(KeyError):
    """Lookup of a goal number that is not in the registry."""


@dataclass(frozen=True)
class SdgTarget:
    id: str
    description: str


@dataclass(frozen=True)
class SdgGoal:
    number: int
    name: str
    definition: str
    targets: tuple[SdgTarget, ...]

    def target_ids(self) -> tuple[str, ...]:
        return tuple(t.id for t in self.targets)


class Registry:
    """Immutable goal lookup table; safe to share across workers."""

    def __init__(self, goals: Iterable[SdgGoal]):
        self._goals: dict[int, SdgGoal] = {}
        for goal in goals:
            if goal.number in self._goals:
                raise RegistryError(f"duplicate goal number {goal.number}")
            self._goals[goal.number] = goal
        self._targets: dict[str, SdgTarget] = {
            t.id: t for g in self._goals.values() for t in g.targets
        }

    def get_goal(self, number: int) -> SdgGoal:
        try:
            return self._goals[number]
        except KeyError:
            raise UnknownGoalError(f"goal {number} not in registry") from None

    def get_target(self, target_id: str) -> SdgTarget:
        try:
            return self._targets[target_id]
        except KeyError:
            raise UnknownGoalError(f"target {target_id!r} not in registry") from None

    def goals(self) -> list[SdgGoal]:
        return [self._goals[n] for n in sorted(self._goals)]

    def __contains__(self, number: int) -> bool:
        return number in self._goals

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Registry):
            return NotImplemented
        return self._goals == other._goals

    def to_dict(self) -> dict:
        return {
            "goals": [
                {
                    "number": g.number,
                    "name": g.name,
                    "definition": g.definition,
                    "targets": [
                        {"id": t.id, "description": t.description} for t in g.targets
                    ],
                }
                for g in self.goals()
            ]
        }


def _parse_goal(raw: dict) -> SdgGoal:
    try:
        number = int(raw["number"])
        name = str(raw["name"]).strip()
        definition = str(raw["definition"]).strip()
        raw_targets = raw.get("targets", [])
    except (KeyError, TypeError, ValueError) as exc:
        raise RegistryError(f"malformed goal entry: {exc}") from exc

    if not GOAL_MIN <= number <= GOAL_MAX:
        raise RegistryError(f"goal number {number} outside {GOAL_MIN}..{GOAL_MAX}")
    if not name or not definition:
        raise RegistryError(f"goal {number}: name and definition must be non-empty")

    targets = []
    for raw_t in raw_targets:
        tid = str(raw_t.get("id", "")).strip()
        desc = str(raw_t.get("description", "")).strip()
        m = _TARGET_ID_RE.match(tid)
        if m is None:
            raise RegistryError(f"goal {number}: malformed target id {tid!r}")
        if int(m.group(1)) != number:
            raise RegistryError(
                f"goal {number}: target {tid!r} has mismatched goal prefix"
            )
        if not desc:
            raise RegistryError(f"target {tid}: description must be non-empty")
        targets.append(SdgTarget(id=tid, description=desc))
    return SdgGoal(number=number, name=name, definition=definition, targets=tuple(targets))


def load_registry(source: str | Path | IO[str]) -> Registry:
    """Load a registry from a JSON file path or an open text stream."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fp:
            payload = json.load(fp)
    else:
        payload = json.load(source)
    if not isinstance(payload, dict) or not isinstance(payload.get("goals"), list):
        raise RegistryError("registry file must be an object with a 'goals' array")
    return Registry(_parse_goal(raw) for raw in payload["goals"])


def dump_registry(registry: Registry, fp: IO[str]) -> None:
    json.dump(registry.to_dict(), fp, ensure_ascii=False, indent=2)
    fp.write("\n")


def default_registry() -> Registry:
    """Registry shipped with the package: SDG 1 fully populated, 2-17 stubs."""
    data = resources.files("sdgsift.data").joinpath("sdg_registry.json")
    with data.open("r", encoding="utf-8") as fp:
        return load_registry(fp)
