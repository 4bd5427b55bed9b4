import pytest

from refill.data import load_corpus, make_synthetic_corpus
from refill.train import TrainConfig

_acceptance_results: list[tuple[str, bool, str]] = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    """Register one acceptance-criterion outcome for the terminal summary."""
    _acceptance_results.append((name, passed, detail))
    assert passed, f"{name}: {detail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _acceptance_results:
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] {name}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)


def tiny_train_config(**overrides):
    """Desk-scale training configuration used across the test suite."""
    base = dict(
        resolution=64,
        batch_size=8,
        total_steps=10,
        seed=7,
        gen_base_channels=16,
        gen_channel_cap=64,
        critic_base_channels=8,
        critic_channel_cap=32,
        ext_width=0.125,
        aux_base_channels=8,
        aux_channel_cap=32,
        feature_width=4,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_corpus")
    make_synthetic_corpus(out, count=8, resolution=64, seed=1)
    return load_corpus(out, out / "labels.csv", resolution=64, cache=True)


@pytest.fixture(scope="session")
def eval_corpus(tmp_path_factory):
    """72 synthetic faces: 8 train + 64 test for evaluation runs."""
    out = tmp_path_factory.mktemp("eval_corpus")
    make_synthetic_corpus(out, count=72, resolution=64, seed=2)
    return load_corpus(out, out / "labels.csv", resolution=64, cache=True)
