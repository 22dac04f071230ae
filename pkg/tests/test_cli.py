import json
import os

import numpy as np
import pytest

from relerm.checkpoint import (export_embeddings, load_checkpoint,
                               save_checkpoint)
from relerm.cli import main, parse_config, ConfigError
from relerm.losses import ParamStore


# -- checkpoints --------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    params = ParamStore(3, 2, seed=5)
    params.embedding(0)
    params.embedding(7)
    params.category_embedding(1)
    params.weights[:] = np.arange(6).reshape(3, 2)
    params.bias[:] = [0.5, -0.5]
    path = str(tmp_path / "c.bin")
    save_checkpoint(params, path)
    back = load_checkpoint(path)
    assert back.dim == 3 and back.label_dim == 2 and back.seed == 5
    assert set(back.embeddings) == {0, 7}
    for v in (0, 7):
        assert np.array_equal(back.embeddings[v], params.embeddings[v])
    assert np.array_equal(back.category_embeddings[1],
                          params.category_embeddings[1])
    assert np.array_equal(back.weights, params.weights)
    assert np.array_equal(back.bias, params.bias)


def test_checkpoint_bytes_deterministic(tmp_path):
    def build():
        params = ParamStore(2, 1, seed=1)
        params.embedding(3)
        params.embedding(1)
        return params
    a, b = str(tmp_path / "a.bin"), str(tmp_path / "b.bin")
    save_checkpoint(build(), a)
    save_checkpoint(build(), b)
    assert open(a, "rb").read() == open(b, "rb").read()


def test_checkpoint_rejects_junk(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"JUNKxxxxxxxx")
    with pytest.raises(ValueError):
        load_checkpoint(str(p))


def test_export_embeddings(tmp_path):
    path = str(tmp_path / "emb.tsv")
    export_embeddings({2: np.array([1.5, -2.0]), 0: np.array([0.0, 0.25])}, path)
    lines = open(path).read().splitlines()
    assert lines[0].split("\t")[0] == "0"
    assert lines[1] == "2\t1.5\t-2.0"


# -- config parsing -----------------------------------------------------------

def test_parse_config_and_overrides(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# comment\nseed = 3\nsampler.retention = 0.2\n")
    cfg = parse_config(str(cfg_file), ["sampler.retention=0.4", "x=y"])
    assert cfg == {"seed": "3", "sampler.retention": "0.4", "x": "y"}
    with pytest.raises(ConfigError):
        parse_config(None, ["notkeyvalue"])
    bad = tmp_path / "bad.cfg"
    bad.write_text("just words\n")
    with pytest.raises(ConfigError):
        parse_config(str(bad), [])


# -- CLI subcommands ----------------------------------------------------------

def write_path3(tmp_path):
    edges = tmp_path / "edges.txt"
    edges.write_text("0 1\n1 2\n")
    return str(edges)


def test_cli_missing_seed_is_config_error(tmp_path, capsys):
    edges = write_path3(tmp_path)
    rc = main(["sample", "--set", f"graph.edges={edges}",
               "--set", f"output.dir={tmp_path}"])
    assert rc == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["kind"] == "config"
    assert any("seed" in v for v in err["violations"])


def test_cli_collects_multiple_violations(tmp_path, capsys):
    rc = main(["train", "--set", "sampler.algorithm=bogus",
               "--set", "train.steps=-5"])
    assert rc == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert len(err["violations"]) >= 3  # seed, graph, algorithm, steps


def test_cli_ingest_and_cache(tmp_path, capsys):
    edges = write_path3(tmp_path)
    rc = main(["ingest", "--set", "seed=1", "--set", f"graph.edges={edges}",
               "--set", f"output.dir={tmp_path}"])
    assert rc == 0
    rec = json.loads(capsys.readouterr().out.strip())
    assert rec["vertices"] == 3 and rec["edges"] == 2
    assert os.path.exists(rec["cache"])
    assert os.path.exists(rec["cache"] + ".ids.json")


def test_cli_sample_writes_records(tmp_path, capsys):
    edges = write_path3(tmp_path)
    rc = main(["sample", "--set", "seed=2", "--set", f"graph.edges={edges}",
               "--set", f"output.dir={tmp_path}", "--set", "sample.count=4",
               "--set", "sampler.algorithm=rw_induced",
               "--set", "sampler.walk_length=2"])
    assert rc == 0
    lines = open(tmp_path / "samples.jsonl").read().splitlines()
    header = json.loads(lines[0])
    assert header == {"record": "header", "seed": 2}
    assert len(lines) == 5
    for line in lines[1:]:
        rec = json.loads(line)
        assert rec["source"] == "rw_induced"


def test_cli_train_deterministic(tmp_path, capsys):
    edges = write_path3(tmp_path)
    outs = []
    for name in ("runA", "runB"):
        out = tmp_path / name
        rc = main(["train", "--set", "seed=3", "--set", f"graph.edges={edges}",
                   "--set", f"output.dir={out}", "--set", "train.steps=30",
                   "--set", "train.embedding_dim=4",
                   "--set", "sampler.retention=0.6"])
        assert rc == 0
        outs.append(out)
    for fname in ("checkpoint.bin", "trace.jsonl", "embeddings.tsv"):
        a = (outs[0] / fname).read_bytes()
        b = (outs[1] / fname).read_bytes()
        assert a == b, f"{fname} differs between identical runs"


def test_cli_train_steps_zero_checkpoint_is_initialization(tmp_path, capsys):
    edges = write_path3(tmp_path)
    out = tmp_path / "zero"
    rc = main(["train", "--set", "seed=4", "--set", f"graph.edges={edges}",
               "--set", f"output.dir={out}", "--set", "train.steps=0",
               "--set", "train.embedding_dim=4"])
    assert rc == 0
    params = load_checkpoint(str(out / "checkpoint.bin"))
    fresh = ParamStore(4, 0, seed=4)
    for v, vec in params.embeddings.items():
        assert np.array_equal(vec, fresh.embedding(int(v)))


def test_cli_eval_two_stage(tmp_path, capsys):
    # small ring with alternating labels; just exercises the pipeline
    edges = tmp_path / "ring.txt"
    n = 12
    edges.write_text("".join(f"{i} {(i + 1) % n}\n" for i in range(n)))
    labels = tmp_path / "labels.txt"
    labels.write_text("".join(f"{i} {i % 2}\n" for i in range(n)))
    out = tmp_path / "eval"
    rc = main(["eval", "--set", "seed=5", "--set", f"graph.edges={edges}",
               "--set", f"labels.path={labels}", "--set", "labels.dim=2",
               "--set", f"output.dir={out}", "--set", "train.steps=50",
               "--set", "train.embedding_dim=4", "--set", "eval.seeds=2",
               "--set", "sampler.retention=0.5"])
    assert rc == 0
    lines = open(out / "results.csv").read().splitlines()
    assert lines[0] == "# seed=5"
    assert lines[1] == "protocol,sampler,test_scheme,macro_f1"
    proto, sampler, scheme, score = lines[2].split(",")
    assert proto == "two_stage" and scheme == "uniform_vertex"
    assert 0.0 <= float(score) <= 1.0


def test_cli_simulate_mecke(tmp_path, capsys):
    out = tmp_path / "sim"
    rc = main(["simulate", "--set", "seed=6", "--set", f"output.dir={out}",
               "--set", "simulate.experiment=mecke",
               "--set", "simulate.sizes=30", "--set", "simulate.replicates=3"])
    assert rc == 0
    lines = open(out / "simulate.jsonl").read().splitlines()
    assert json.loads(lines[0])["seed"] == 6
    recs = [json.loads(l) for l in lines[1:]]
    assert len(recs) == 3
    assert all(r["statistic"] == "edge_count" for r in recs)


def test_cli_riskcheck_builtin_fixture(tmp_path, capsys):
    out = tmp_path / "rc"
    rc = main(["riskcheck", "--set", "seed=7", "--set", f"output.dir={out}",
               "--set", "riskcheck.samples=20000"])
    assert rc == 0
    report = json.loads(open(out / "riskcheck.json").read())
    assert report["seed"] == 7
    assert {c["sampler"] for c in report["checks"]} == {"p_sampling", "rw_induced"}
    for check in report["checks"]:
        assert check["pass"]
        assert check["risk_z"] < 4.0 and check["max_grad_z"] < 4.0


def test_cli_runtime_error_exit_code(tmp_path, capsys):
    rc = main(["train", "--set", "seed=8",
               "--set", "graph.cache=/nonexistent/g.bin",
               "--set", f"output.dir={tmp_path}"])
    assert rc == 2  # caught at config validation: path does not exist
