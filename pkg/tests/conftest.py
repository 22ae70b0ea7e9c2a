import pytest

from local_sfm.synthetic import SceneSpec, generate_scene


@pytest.fixture(scope="session")
def plane_scene():
    return generate_scene(SceneSpec(geometry="textured-plane-stack", seed=0))


@pytest.fixture(scope="session")
def surfel_scene():
    return generate_scene(SceneSpec(seed=0))


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one summary line per acceptance criterion."""

    def report(number: int, passed: bool, detail: str) -> None:
        _ACCEPTANCE_LINES.append(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
