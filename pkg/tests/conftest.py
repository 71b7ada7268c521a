import numpy as np
import pytest

HEADER = "label," + ",".join(f"pixel{i}" for i in range(1, 785))


def write_csv(path, labels, pixels, newline="\n"):
    rows = [HEADER] + [
        ",".join([str(int(lbl))] + [str(int(v)) for v in row]) for lbl, row in zip(labels, pixels)
    ]
    path.write_text(newline.join(rows) + newline)
    return path


@pytest.fixture
def csv_writer(tmp_path):
    counter = iter(range(1000))

    def make(labels, pixels=None, newline="\n", seed=0):
        labels = list(labels)
        if pixels is None:
            pixels = np.random.default_rng(seed).integers(0, 256, size=(len(labels), 784))
        return write_csv(tmp_path / f"data{next(counter)}.csv", labels, pixels, newline)

    return make


def class_pattern_dataset(n, seed=0, noise=0.0):
    """Each class has one fixed random 28x28 pattern; samples cycle through classes."""
    from signcnn.data import Dataset

    rng = np.random.default_rng(seed)
    patterns = rng.random((24, 28, 28, 1)).astype(np.float32)
    labels = np.arange(n) % 24
    images = patterns[labels]
    if noise:
        images = np.clip(images + rng.normal(scale=noise, size=images.shape), 0, 1).astype(np.float32)
    return Dataset(images, labels.astype(np.int64))


# ----------------------------------------------------------------------
# acceptance summary: one line per criterion, PASS only if all its tests pass

_criteria: dict = {}


def pytest_runtest_logreport(report):
    mark = _criterion_marks.get(report.nodeid)
    if mark is None:
        return
    number, title = mark
    entry = _criteria.setdefault(number, {"title": title, "passed": 0, "failed": 0, "skipped": 0})
    if report.failed:
        entry["failed"] += 1
    elif report.skipped:
        entry["skipped"] += 1
    elif report.when == "call":
        entry["passed"] += 1


_criterion_marks: dict = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _criterion_marks[item.nodeid] = tuple(m.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        ok = e["failed"] == 0 and e["skipped"] == 0 and e["passed"] > 0
        checks = e["passed"] + e["failed"] + e["skipped"]
        terminalreporter.write_line(
            f"criterion {number:2d}  {'PASS' if ok else 'FAIL'}  {e['title']} "
            f"({e['passed']}/{checks} checks passed)"
        )
