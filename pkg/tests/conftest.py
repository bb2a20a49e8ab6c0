from __future__ import annotations

from hypothesis import strategies as st

from blueprint_rl.trace import Blueprint, BlueprintObject, BoundingBox, ReasoningTrace

# Free text without the reserved tag/fence tokens; arbitrary unicode otherwise.
_RESERVED = ("<think>", "</think>", "<answer>", "</answer>", "```")
text_st = st.text(max_size=40).filter(lambda s: not any(t in s for t in _RESERVED))
name_st = text_st.filter(bool)
coord_st = st.integers(0, 20_000).map(lambda v: v / 10)


@st.composite
def boxes(draw):
    x1, x2 = sorted((draw(coord_st), draw(coord_st)))
    y1, y2 = sorted((draw(coord_st), draw(coord_st)))
    return BoundingBox(x1, y1, x2, y2)


@st.composite
def blueprint_objects(draw):
    return BlueprintObject(draw(name_st), draw(boxes()), draw(text_st), draw(text_st))


@st.composite
def traces(draw, max_objects: int = 6):
    objects = draw(st.lists(blueprint_objects(), max_size=max_objects))
    return ReasoningTrace(Blueprint(tuple(objects)), draw(text_st), draw(text_st))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
