import pytest

from kdd_data import make_lines


@pytest.fixture
def kdd_file(tmp_path):
    p = tmp_path / "kdd.txt"
    p.write_text("\n".join(make_lines(600, seed=1)) + "\n")
    return p
