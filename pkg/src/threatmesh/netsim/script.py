"""Line-oriented scenario scripts: ``tick <n>: <actor> <command> <args...>``."""

import re
import shlex
from pathlib import Path
from typing import NamedTuple, Union

from threatmesh.errors import ConfigError

_LINE = re.compile(r"^tick\s+(\d+)\s*:\s*(\S+)\s+(\S+)(.*)$")


class ScriptStep(NamedTuple):
    tick: int
    actor: str
    command: str
    args: tuple[str, ...]
    line: int


def parse_script(text: str) -> list[ScriptStep]:
    """
    Parses a scenario script. Blank lines and ``#`` comments are skipped; steps are returned in tick
    order, keeping file order within a tick.
    """
    steps = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        match = _LINE.match(line)
        if match is None:
            raise ConfigError(f"script line {number}: expected 'tick <n>: <actor> <command> <args...>', got {raw!r}")
        tick, actor, command, rest = match.groups()
        try:
            args = tuple(shlex.split(rest))
        except ValueError as e:
            raise ConfigError(f"script line {number}: {e}") from e
        steps.append(ScriptStep(int(tick), actor, command, args, number))
    return sorted(steps, key=lambda step: (step.tick, step.line))


def load_script(path: Union[str, Path]) -> list[ScriptStep]:
    return parse_script(Path(path).read_text())
