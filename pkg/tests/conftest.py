import pytest

from stylestego.config import TrainConfig


def tiny(**overrides) -> TrainConfig:
    """A model small enough for per-test construction and gradient checks."""
    d = dict(crop_size=32, msg_len=16, n_res=2, enc_widths=(4, 4, 8, 8, 8), msg_channels=8,
             dec_widths=(8, 8, 4, 4), disc_width=4, ext_widths=(8, 8, 8, 8), head_widths=(4, 4, 4),
             reduction=4, iterations=3, lr=1e-3)
    d.update(overrides)
    return TrainConfig(**d)


@pytest.fixture
def tiny_cfg() -> TrainConfig:
    return tiny()


# acceptance criteria append (criterion, passed, detail); printed after the run
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(ACCEPTANCE, key=lambda r: int(r[0].split()[0])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
