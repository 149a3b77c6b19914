import json

import pytest

from scenematch.cli import main
from scenematch.graph import load_dataset
from scenematch.train import EpochLog


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data.json"
    assert main(["synth", "--seed", "3", "--pairs", "6", "--n", "3", "--m", "4", "--d", "8",
                 "--out", str(data)]) == 0
    config = root / "config.json"
    config.write_text(json.dumps(dict(d=8, K=2, batch_size=6, epochs=3, learning_rate=1e-2,
                                      val_fraction=0.0)))
    return root


def test_synth_writes_valid_dataset(workdir):
    data = load_dataset(workdir / "data.json")
    assert len(data) == 6 and data[0].image_graph.n_nodes == 3 and data[0].text_graph.n_nodes == 4


def test_train_logs_and_checkpoint(workdir, capsys):
    code = main(["train", "--config", str(workdir / "config.json"), "--data", str(workdir / "data.json"),
                 "--out", str(workdir / "model.ckpt"), "--log", str(workdir / "epochs.tsv"),
                 "--figures", str(workdir / "figs")])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split("\t") == list(EpochLog.HEADER)
    logs = [EpochLog.from_tsv(line) for line in lines[1:]]
    assert [e.epoch for e in logs] == [0, 1, 2]
    assert (workdir / "epochs.tsv").read_text().strip().splitlines() == lines
    assert (workdir / "model.ckpt").exists()
    assert (workdir / "figs" / "training_curves.png").stat().st_size > 0


def test_eval_sweep(workdir, capsys):
    code = main(["eval", "--ckpt", str(workdir / "model.ckpt"), "--data", str(workdir / "data.json"),
                 "--sweep", "0,0.3", "--figures", str(workdir / "figs")])
    assert code == 0
    rows = [line.split("\t") for line in capsys.readouterr().out.strip().splitlines()]
    assert len(rows) == 3 and [float(r[0]) for r in rows[1:]] == [0.0, 0.3]
    for r in rows[1:]:
        values = [float(x) for x in r[1:]]
        assert len(values) == 7 and values[-1] == pytest.approx(sum(values[:6]), abs=1e-9)
    assert (workdir / "figs" / "delta_sweep.png").stat().st_size > 0


def test_retrieve_by_pair_id_with_explanation(workdir, capsys):
    fig = workdir / "figs" / "pairs.png"
    code = main(["retrieve", "--ckpt", str(workdir / "model.ckpt"), "--query", "p00002",
                 "--gallery", str(workdir / "data.json"), "--topk", "3", "--explain", "--pairs", "4",
                 "--figure", str(fig)])
    assert code == 0
    out = capsys.readouterr().out.strip().splitlines()
    hits = [line for line in out if line[0].isdigit()]
    pairs = [line for line in out if line.startswith("#\t") and line.split("\t")[1].isdigit()]
    assert len(hits) == 3 and len(pairs) == 4
    assert fig.stat().st_size > 0


def test_retrieve_unknown_pair_fails(workdir, capsys):
    code = main(["retrieve", "--ckpt", str(workdir / "model.ckpt"), "--query", "nope",
                 "--gallery", str(workdir / "data.json")])
    assert code != 0
    assert "nope" in capsys.readouterr().err


def test_gradcheck_exit_codes(capsys):
    assert main(["gradcheck", "--linear"]) == 0
    assert "max" in capsys.readouterr().out
    assert main(["gradcheck", "--linear", "--inject-fault"]) == 1
