import pytest


class CriterionOutput:
    """Prints acceptance-criterion lines through pytest's capture."""

    def __init__(self, capfd):
        self._capfd = capfd

    def announce(self, ok: bool, label: str, detail: str = "") -> None:
        suffix = f" ({detail})" if detail else ""
        self.line(f"[{'PASS' if ok else 'FAIL'}] {label}{suffix}")

    def line(self, text: str) -> None:
        with self._capfd.disabled():
            print(text, flush=True)


@pytest.fixture
def criterion_output(capfd):
    return CriterionOutput(capfd)
