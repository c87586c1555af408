import math

import numpy as np
import pytest

from tilda import cli
from tilda.corpus import corpus_from_dir, write_tree_corpus
from tilda.model import (CategoryVarParams, ModelParams, TopicVarParams, TrainedModel,
                         load_model, save_model)

from conftest import make_corpus


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def gen_dir(tmp_path, capsys):
    d = tmp_path / "gen"
    code, _, _ = run(capsys, "generate", "--k", 3, "--depth", 2, "--branching", 2, "--docs", 5,
                     "--doc-length", 30, "--vocab-size", 40, "--seed", 1, "--output", d)
    assert code == 0
    return d


def write_model(path, kappas, alphas, lam, labels=None, gamma=1.0, eta=1.0):
    K = len(kappas[0])
    parents = [-1] + [0] * (len(kappas) - 1)
    cats = [CategoryVarParams(float(K), np.array(k, dtype=float)) for k in kappas]
    m = TrainedModel(ModelParams(K, gamma, eta, alphas), parents, cats,
                     TopicVarParams(np.asarray(lam, dtype=float)), 0)
    save_model(path, m)
    V = m.topics.V
    cli._vocab_path(path).write_text("".join(f"t{v}\n" for v in range(V)))
    labels = labels or [""] + [f"c{i}" for i in range(1, len(kappas))]
    cli._labels_path(path).write_text("".join(f"{t}\t{lab}\t1\n" for t, lab in enumerate(labels)))
    return path


def test_generate_is_deterministic(tmp_path, capsys, gen_dir):
    other = tmp_path / "again"
    run(capsys, "generate", "--k", 3, "--depth", 2, "--branching", 2, "--docs", 5,
        "--doc-length", 30, "--vocab-size", 40, "--seed", 1, "--output", other)
    for name in ("vocab.txt", "docs.txt", "latents.txt"):
        assert (gen_dir / name).read_bytes() == (other / name).read_bytes()


def test_generate_depth_one_is_flat(tmp_path, capsys):
    run(capsys, "generate", "--depth", 1, "--docs", 4, "--output", tmp_path / "f")
    c = corpus_from_dir(tmp_path / "f")
    assert c.n_nodes == 1 and c.n_docs == 4


@pytest.mark.parametrize("bad", [["--k", "0"], ["--alpha", "-1"], ["--depth", "x"]])
def test_generate_rejects_bad_flags(tmp_path, capsys, bad):
    code, _, err = run(capsys, "generate", "--output", tmp_path / "x", *bad)
    assert code == 2 and "error" in err


def test_train_defaults_and_outputs(tmp_path, capsys, gen_dir):
    model = tmp_path / "m.tilda"
    log = tmp_path / "train.log"
    code, out, err = run(capsys, "train", "--corpus", gen_dir, "--k", 3, "--output", model,
                         "--log", log, "--max-sweeps", 5)
    assert code == 0
    m = load_model(model)
    assert m.params.gamma == 1.0 and np.all(m.params.alpha == 1.0)
    rows = [line.split("\t") for line in log.read_text().splitlines()]
    assert [int(r[0]) for r in rows] == list(range(len(rows)))
    assert len(rows) <= 6 and all(len(r) == 3 for r in rows)
    assert err.count("\n") >= len(rows)
    assert cli._vocab_path(model).exists() and cli._labels_path(model).exists()


def test_train_single_topic(tmp_path, capsys, gen_dir):
    code, _, _ = run(capsys, "train", "--corpus", gen_dir, "--k", 1, "--output", tmp_path / "m")
    assert code == 0
    assert load_model(tmp_path / "m").params.K == 1


def test_train_requires_corpus(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--k", 2, "--output", tmp_path / "m")
    assert code == 2 and "--corpus" in err


def test_train_uci_corpus(tmp_path, capsys):
    (tmp_path / "dw.txt").write_text("2\n3\n4\n1 1 2\n1 3 1\n2 2 4\n2 3 1\n")
    (tmp_path / "v.txt").write_text("a\nb\nc\n")
    code, _, _ = run(capsys, "train", "--corpus", tmp_path / "dw.txt", "--k", 2,
                     "--output", tmp_path / "m")
    assert code == 2
    code, _, _ = run(capsys, "train", "--corpus", tmp_path / "dw.txt", "--vocab",
                     tmp_path / "v.txt", "--k", 2, "--output", tmp_path / "m", "--threads", 2)
    assert code == 0
    assert load_model(tmp_path / "m").n_docs == 2


def test_train_missing_file_is_runtime_error(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--corpus", tmp_path / "nope", "--vocab", tmp_path / "v",
                       "--k", 2, "--output", tmp_path / "m")
    assert code == 1 and "error" in err


def test_topics_output(tmp_path, capsys):
    lam = [[1.0, 5.0, 3.0, 3.0], [2.0, 2.0, 2.0, 2.0]]
    m = write_model(tmp_path / "m", [[0.5, 0.5]], [1.0], lam)
    code, out, _ = run(capsys, "topics", "--model", m, "--top-n", 3)
    lines = out.splitlines()
    assert code == 0 and lines[0] == "topic\trank\tterm\tweight"
    rows = [line.split("\t") for line in lines[1:]]
    assert [r[2] for r in rows if r[0] == "0"] == ["t1", "t2", "t3"]
    assert [r[2] for r in rows if r[0] == "1"] == ["t0", "t1", "t2"]
    assert float(rows[0][3]) == pytest.approx(5 / 12, rel=1e-5)


def test_topics_eight_and_zero(tmp_path, capsys):
    m = write_model(tmp_path / "m", [[0.5, 0.5]], [1.0], np.ones((2, 10)))
    _, out, _ = run(capsys, "topics", "--model", m, "--top-n", 8)
    assert len(out.splitlines()) == 1 + 16
    _, out, _ = run(capsys, "topics", "--model", m, "--top-n", 0)
    assert out.splitlines() == ["topic\trank\tterm\tweight"]


def test_corrupt_model_reports_line(tmp_path, capsys):
    m = write_model(tmp_path / "m", [[0.5, 0.5]], [1.0], np.ones((2, 3)))
    lines = m.read_text().splitlines()
    lines[2] = "1 x 2"
    m.write_text("\n".join(lines) + "\n")
    code, _, err = run(capsys, "topics", "--model", m)
    assert code == 1 and "line 3" in err


def categories(capsys, path, *extra):
    code, out, _ = run(capsys, "categories", "--model", path, *extra)
    assert code == 0
    lines = out.splitlines()
    rows = [line.split("\t") for line in lines[1:] if not line.startswith("aggregate")]
    agg = [float(line.split("\t")[2]) for line in lines if line.startswith("aggregate")]
    return rows, agg


def test_categories_symmetric_aggregate(tmp_path, capsys):
    m = write_model(tmp_path / "m", [[0.5, 0.5], [0.9, 0.1], [0.1, 0.9]], [1.0, 3.0, 2.0],
                    np.ones((2, 3)))
    rows, agg = categories(capsys, m)
    assert len(rows) == 3
    np.testing.assert_allclose(agg, [0.5, 0.5])
    for r in rows:
        assert sum(float(x) for x in r[5].split()) == pytest.approx(1.0, abs=1e-5)


def test_categories_sorted_by_alpha(tmp_path, capsys):
    m = write_model(tmp_path / "m", [[0.5, 0.5], [0.9, 0.1], [0.1, 0.9]], [1.0, 3.0, 2.0],
                    np.ones((2, 3)))
    rows, _ = categories(capsys, m, "--sort", "alpha")
    assert [r[0] for r in rows] == ["1", "2", "0"]
    assert rows[0][3] == "0" and rows[1][3] == "1"
    rows, agg = categories(capsys, m, "--level", 0)
    np.testing.assert_allclose(agg, [0.5, 0.5])


def test_categories_single_node(tmp_path, capsys):
    m = write_model(tmp_path / "m", [[0.2, 0.8]], [1.0], np.ones((2, 3)))
    rows, agg = categories(capsys, m)
    assert len(rows) == 1
    np.testing.assert_allclose(agg, [0.2, 0.8], rtol=1e-5)


def heldout(tmp_path, lines, vocab=None):
    d = tmp_path / "held"
    d.mkdir()
    (d / "vocab.txt").write_text("".join(f"{t}\n" for t in (vocab or [f"t{v}" for v in range(10)])))
    (d / "docs.txt").write_text("".join(line + "\n" for line in lines))
    return d


def test_eval_uniform_unigram(tmp_path, capsys):
    m = write_model(tmp_path / "m", [[1.0]], [1.0], np.ones((1, 10)))
    h = heldout(tmp_path, ["\t0:2 3:1", "\t9:4", "\t5:1"])
    code, out, _ = run(capsys, "eval", "--model", m, "--heldout", h, "--per-doc")
    lines = out.splitlines()
    assert code == 0 and len(lines) == 3
    summary = lines[-1].split("\t")
    assert float(summary[1]) == pytest.approx(math.log(0.1), abs=1e-6)
    assert summary[summary.index("docs_skipped") + 1] == "1"


def test_eval_per_doc_rows(tmp_path, capsys):
    m = write_model(tmp_path / "m", [[1.0]], [1.0], np.ones((1, 10)))
    h = heldout(tmp_path, ["\t0:2", "\t1:3", "\t2:2 4:2"])
    _, out, _ = run(capsys, "eval", "--model", m, "--heldout", h, "--per-doc",
                    "--split", "first-half")
    assert len(out.splitlines()) == 4


def test_eval_vocabulary_mismatch(tmp_path, capsys):
    m = write_model(tmp_path / "m", [[1.0]], [1.0], np.ones((1, 10)))
    vocab = [f"t{v}" for v in range(4)] + [f"new{i}" for i in range(7)]
    h = heldout(tmp_path, ["\t0:2"], vocab)
    code, _, err = run(capsys, "eval", "--model", m, "--heldout", h)
    assert code == 1
    assert "new0 new1 new2 new3 new4" in err and "new5" not in err


def test_generate_train_eval_round_trip(tmp_path, capsys):
    g = tmp_path / "g"
    assert run(capsys, "generate", "--k", 5, "--depth", 3, "--docs", 4, "--doc-length", 20,
               "--vocab-size", 60, "--output", g)[0] == 0
    assert run(capsys, "split", "--corpus", g, "--output", tmp_path / "s")[0] == 0
    m = tmp_path / "m"
    assert run(capsys, "train", "--corpus", tmp_path / "s" / "train", "--k", 5, "--output", m,
               "--learn-alpha", "--max-sweeps", 5)[0] == 0
    code, out, _ = run(capsys, "eval", "--model", m, "--heldout", tmp_path / "s" / "heldout")
    assert code == 0 and float(out.split("\t")[1]) < 0
    code, out, _ = run(capsys, "eval", "--model", m, "--heldout", tmp_path / "s" / "heldout",
                       "--root")
    assert code == 0
