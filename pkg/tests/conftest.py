import pytest

from wsseg.config import Config
from wsseg.data import gen_synthetic


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    """12 train and 4 val scenes at 16 px, i.e. a 2x2 patch grid."""
    root = tmp_path_factory.mktemp("tiny")
    gen_synthetic(root, seed=11, n=12, image_size=16, split="train")
    gen_synthetic(root, seed=12, n=4, image_size=16, split="val")
    return root


@pytest.fixture
def tiny_cfg(tiny_root):
    return Config(image_size=16, patch_size=8, embed_dim=8, num_heads=2, num_blocks=1,
                  token_dim=2, hidden_dim=4, head_hidden=4, k=2, batch_size=4, epochs=1,
                  crf_iterations=2, data_root=str(tiny_root))


ACCEPTANCE_LINES = {}


def record_criterion(number, title, ok, detail):
    """Remember one acceptance outcome; printed in the terminal summary."""
    ACCEPTANCE_LINES[number] = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    print(ACCEPTANCE_LINES[number])
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
