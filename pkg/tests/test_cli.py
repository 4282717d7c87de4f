import json

import numpy as np
import pytest

from telesim import cli
from telesim import circuits as c

SOURCE_OBJ = {
    "width": 2,
    "layers": [[{"gate": "H", "targets": [0]}], [{"gate": "CNOT", "targets": [0, 1]}]],
    "measured": [0, 1],
}


@pytest.fixture
def source_path(tmp_path):
    path = tmp_path / "src.json"
    path.write_text(json.dumps(SOURCE_OBJ))
    return str(path)


@pytest.fixture
def flattened_path(tmp_path, source_path):
    out = tmp_path / "flat.json"
    rc = cli.main(["compile", source_path, "--out", str(out)])
    assert rc == 0
    return str(out)


def _read_records(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def test_compile_writes_flattened_with_provenance(flattened_path):
    obj = json.loads(open(flattened_path).read())
    assert obj["guess"] == "0000"
    prov = obj["provenance"]
    assert prov["gadgets"] == 1
    assert prov["k"] == 4
    assert prov["correction_table"]["00,00"] == ["I", "I"]
    nc = c.nonadaptive_from_obj(obj)
    assert c.depth(nc.base) == 4


def test_compile_malformed_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    rc = cli.main(["compile", str(bad), "--out", str(tmp_path / "x.json")])
    assert rc != 0
    assert "malformed JSON" in capsys.readouterr().err


def test_compile_rejects_bad_gate_set(tmp_path):
    obj = dict(SOURCE_OBJ, layers=[[{"gate": "CZ", "targets": [0, 1]}]])
    path = tmp_path / "cz.json"
    path.write_text(json.dumps(obj))
    rc = cli.main(["compile", str(path), "--out", str(tmp_path / "x.json")])
    assert rc != 0


def test_postselect_record(flattened_path, tmp_path):
    out = tmp_path / "records.jsonl"
    rc = cli.main(
        ["postselect", flattened_path, "--trials", "400", "--seed", "9", "--out", str(out)]
    )
    assert rc == 0
    (rec,) = _read_records(out)
    assert rec["pass"] is True
    assert abs(rec["metrics"]["exact_hit_probability"] - 1 / 16) < 1e-10
    assert rec["metrics"]["tv_distance_to_source"] < 1e-9
    assert 0.0 < rec["metrics"]["empirical_hit_rate"] < 0.2


def test_postselect_seed_replay_byte_identical(flattened_path, tmp_path):
    out1, out2 = tmp_path / "r1.jsonl", tmp_path / "r2.jsonl"
    for out in (out1, out2):
        rc = cli.main(
            ["postselect", flattened_path, "--trials", "100", "--seed", "3", "--out", str(out)]
        )
        assert rc == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_bell_uniformity(flattened_path, tmp_path):
    out = tmp_path / "records.jsonl"
    rc = cli.main(["bell-uniformity", flattened_path, "--out", str(out)])
    assert rc == 0
    (rec,) = _read_records(out)
    assert rec["metrics"]["max_deviation"] < 1e-10


def test_depth3_compare(tmp_path):
    circ = {
        "width": 6,
        "layers": [
            [
                {"gate": "H", "targets": [0]},
                {"gate": "CNOT", "targets": [2, 3]},
                {"gate": "CNOT", "targets": [4, 5]},
            ],
            [{"gate": "CNOT", "targets": [1, 2]}, {"gate": "CNOT", "targets": [3, 4]}],
        ],
        "measured": [0, 1, 2, 3],
    }
    path = tmp_path / "d3.json"
    path.write_text(json.dumps(circ))
    out = tmp_path / "records.jsonl"
    rc = cli.main(["depth3", str(path), "--seed", "2", "--out", str(out)])
    assert rc == 0
    (rec,) = _read_records(out)
    assert rec["metrics"]["max_conditional_deviation"] < 1e-9
    assert rec["metrics"]["peak_amplitude_entries"] <= 16


def test_depth3_rejects_depth_four(tmp_path):
    circ = {
        "width": 2,
        "layers": [
            [{"gate": "H", "targets": [0]}],
            [{"gate": "H", "targets": [1]}],
            [{"gate": "CNOT", "targets": [0, 1]}],
        ],
        "measured": [0],
    }
    path = tmp_path / "d4.json"
    path.write_text(json.dumps(circ))
    rc = cli.main(["depth3", str(path), "--out", str(tmp_path / "r.jsonl")])
    assert rc != 0


def test_amgame_planted_big(tmp_path):
    spec = {"n": 10, "k": 9, "members": [5, 9], "expect": "big"}
    path = tmp_path / "set.json"
    path.write_text(json.dumps(spec))
    out = tmp_path / "records.jsonl"
    rc = cli.main(
        ["amgame", "--set-spec", str(path), "--d", "32", "--trials", "50", "--seed", "1", "--out", str(out)]
    )
    assert rc == 0
    (rec,) = _read_records(out)
    assert rec["metrics"]["verdict"] == "big"
    assert rec["metrics"]["soundness_vacuous"] is True


def test_amgame_planted_mask_small(tmp_path):
    spec = {"n": 10, "k": 9, "members": [], "expect": "small"}
    path = tmp_path / "set.json"
    path.write_text(json.dumps(spec))
    out = tmp_path / "records.jsonl"
    rc = cli.main(
        ["amgame", "--set-spec", str(path), "--d", "32", "--trials", "30", "--seed", "1", "--out", str(out)]
    )
    assert rc == 0
    (rec,) = _read_records(out)
    assert rec["metrics"]["acceptance_rate"] == 0.0


def test_amgame_rejects_large_epsilon(tmp_path, capsys):
    spec = {"n": 10, "k": 9, "members": []}
    path = tmp_path / "set.json"
    path.write_text(json.dumps(spec))
    rc = cli.main(["amgame", "--set-spec", str(path), "--epsilon", "0.4"])
    assert rc != 0
    assert "epsilon" in capsys.readouterr().err


def test_amgame_circuit_mode(flattened_path, tmp_path):
    out = tmp_path / "records.jsonl"
    rc = cli.main(
        [
            "amgame",
            "--circuit",
            flattened_path,
            "--coin-width",
            "10",
            "--d",
            "32",
            "--trials",
            "10",
            "--seed",
            "6",
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    (rec,) = _read_records(out)
    assert rec["metrics"]["verdict"] in ("big", "small")


def test_selftest(tmp_path):
    out = tmp_path / "records.jsonl"
    rc = cli.main(["selftest", "--seed", "5", "--out", str(out)])
    assert rc == 0
    records = _read_records(out)
    assert len(records) == 5
    assert all(r["pass"] for r in records)
    names = {r["experiment"] for r in records}
    assert "selftest.amgame" in names
