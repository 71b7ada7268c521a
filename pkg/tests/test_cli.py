import shlex
import sys

import numpy as np
import pytest

from conftest import write_csv
from signcnn.cli import EXIT_FORMAT, EXIT_IO, EXIT_OK, main
from signcnn.data import GrayImage, encode_pgm
from signcnn.metrics import load_history


@pytest.fixture(scope="module")
def csv_path(tmp_path_factory):
    """Balanced 240-row CSV of class-specific patterns, plus 2 rows of label 24."""
    rng = np.random.default_rng(0)
    patterns = rng.integers(0, 256, size=(24, 784))
    labels = list(np.arange(240) % 24) + [24, 24]
    pixels = np.clip(patterns[np.array(labels) % 24] + rng.integers(-20, 21, size=(242, 784)), 0, 255)
    return write_csv(tmp_path_factory.mktemp("csv") / "train.csv", labels, pixels)


@pytest.fixture(scope="module")
def trained(csv_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("model") / "m.sgn"
    code = main(["train", str(csv_path), "--out", str(out), "--max-epochs", "1", "--batch-size", "16", "--seed", "1"])
    assert code == EXIT_OK
    return out


def test_train_one_epoch(trained, csv_path, capsys):
    hist = load_history(f"{trained}.history.tsv")
    assert len(hist) == 1


def test_train_output_and_dropped(csv_path, tmp_path, capsys):
    out = tmp_path / "m.sgn"
    assert main(["train", str(csv_path), "--out", str(out), "--max-epochs", "2", "--batch-size", "32"]) == 0
    text = capsys.readouterr().out
    assert "2 dropped" in text
    assert "train 192 / validation 48" in text
    assert "epoch   2" in text and "best epoch" in text


def test_train_missing_file_no_outputs(tmp_path, capsys):
    out = tmp_path / "m.sgn"
    code = main(["train", str(tmp_path / "missing.csv"), "--out", str(out)])
    assert code == EXIT_IO
    assert list(tmp_path.iterdir()) == []
    assert "error" in capsys.readouterr().err


def test_train_malformed_csv(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("label,p\n1,2\n")
    assert main(["train", str(bad), "--out", str(tmp_path / "m.sgn")]) == EXIT_FORMAT
    assert not (tmp_path / "m.sgn").exists()


def test_eval_untrained_near_chance(csv_path, tmp_path, capsys):
    fresh = tmp_path / "fresh.sgn"
    assert main(["train", str(csv_path), "--out", str(fresh), "--max-epochs", "0"]) == 0
    assert not (tmp_path / "fresh.sgn.history.tsv").exists()
    capsys.readouterr()
    assert main(["eval", str(csv_path), str(fresh)]) == 0
    text = capsys.readouterr().out
    acc = float(text.split("accuracy")[1].split()[0])
    assert abs(acc - 1 / 24) <= 0.05


def test_eval_confusion(trained, csv_path, capsys):
    assert main(["eval", str(csv_path), str(trained), "--confusion"]) == 0
    lines = capsys.readouterr().out.splitlines()
    idx = next(i for i, ln in enumerate(lines) if ln.startswith("confusion"))
    matrix = lines[idx + 2 : idx + 26]
    assert len(matrix) == 24
    assert all(len(row.split()) == 25 for row in matrix)
    assert sum(int(v) for row in matrix for v in row.split()[1:]) == 240


def test_eval_corrupt_model(trained, csv_path, tmp_path):
    data = bytearray(trained.read_bytes())
    data[-20] ^= 0xFF
    bad = tmp_path / "bad.sgn"
    bad.write_bytes(bytes(data))
    assert main(["eval", str(csv_path), str(bad)]) == EXIT_FORMAT


def test_predict(trained, tmp_path, capsys):
    img = tmp_path / "a.pgm"
    img.write_bytes(encode_pgm(GrayImage.from_array(np.full((28, 28), 90))))
    assert main(["predict", str(trained), str(img)]) == 0
    letter, conf = capsys.readouterr().out.split()
    assert letter in "ABCDEFGHIJKLMNOPQRSTUVWX" and 0 <= float(conf) <= 1


def test_predict_bad_image(trained, tmp_path):
    img = tmp_path / "x.pgm"
    img.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
    assert main(["predict", str(trained), str(img)]) == EXIT_FORMAT


def frames_dir(tmp_path, n=3):
    d = tmp_path / "frames"
    d.mkdir()
    rng = np.random.default_rng(0)
    for i in range(n):
        (d / f"{i}.pgm").write_bytes(encode_pgm(GrayImage.from_array(rng.integers(0, 256, (30, 30)))))
    return d


def test_stream_directory(trained, tmp_path, capsys):
    assert main(["stream", str(trained), str(frames_dir(tmp_path)), "--silent"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [ln.split("\t")[0] for ln in lines] == ["0.pgm", "1.pgm", "2.pgm"]


def test_stream_speak_cmd(tmp_path, capsys):
    from signcnn.model import build_model, save

    m = build_model()
    m.layers[-1].params["weights"][:] = 0
    m.layers[-1].params["bias"][:] = 0
    m.layers[-1].params["bias"][0] = 20.0  # 'A' with confidence ~1
    model_path = save(m, tmp_path / "a.sgn")
    spoken = tmp_path / "spoken.txt"
    script = "import sys; open(sys.argv[1], 'a').write(sys.argv[2])"
    template = f"{shlex.quote(sys.executable)} -c {shlex.quote(script)} {shlex.quote(str(spoken))} {{letter}}"
    assert main(["stream", str(model_path), str(frames_dir(tmp_path)), "--speak-cmd", template]) == 0
    # three confident 'A' frames within one debounce window -> one invocation
    assert spoken.read_text() == "A"


def test_stream_missing_dir(trained, tmp_path):
    assert main(["stream", str(trained), str(tmp_path / "nope")]) == EXIT_IO


def test_plot(trained, tmp_path, capsys):
    out = tmp_path / "curves.svg"
    assert main(["plot", f"{trained}.history.tsv", str(out)]) == 0
    assert out.read_text().count("<polyline") == 4


def test_plot_malformed(tmp_path):
    h = tmp_path / "h.tsv"
    h.write_text("epoch,loss\n")
    assert main(["plot", str(h), str(tmp_path / "o.svg")]) == EXIT_FORMAT
    assert not (tmp_path / "o.svg").exists()


def test_summary(capsys):
    assert main(["summary"]) == 0
    assert "394,008" in capsys.readouterr().out


def test_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2


def test_seeded_training_reproducible(csv_path, tmp_path):
    paths = []
    for name in ("a.sgn", "b.sgn"):
        p = tmp_path / name
        main(["train", str(csv_path), "--out", str(p), "--max-epochs", "1", "--batch-size", "32", "--seed", "7"])
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert (tmp_path / "a.sgn.history.tsv").read_text() == (tmp_path / "b.sgn.history.tsv").read_text()
