import json

import numpy as np
import pytest

from metastab import cli
from metastab import io as mio
from metastab.errors import EigenFailure, ParseError
from metastab.models import DogGraphSpec, dog_graph, random_reversible, two_state
from metastab.simulate import worker_count
from metastab.transforms import Partition


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


# -- file formats -----------------------------------------------------------------

def test_chain_round_trip_with_tuple_labels(tmp_path):
    c, part = dog_graph(DogGraphSpec(3))
    mio.save_chain(c, tmp_path / "c.json")
    mio.save_partition(part, c.labels, tmp_path / "p.json")
    c2 = mio.load_chain(tmp_path / "c.json")
    assert c2.labels == c.labels
    np.testing.assert_array_equal(c2.rates.toarray(), c.rates.toarray())
    p2 = mio.load_partition(tmp_path / "p.json", c2)
    for a, b in zip(p2.wells, part.wells):
        np.testing.assert_array_equal(np.sort(a), np.sort(b))


def test_atomic_write_refuses_overwrite(tmp_path):
    path = tmp_path / "x.txt"
    mio.atomic_write(path, "one")
    with pytest.raises(FileExistsError):
        mio.atomic_write(path, "two")
    mio.atomic_write(path, "two", overwrite=True)
    assert path.read_text() == "two"
    assert [p.name for p in tmp_path.iterdir()] == ["x.txt"]


@pytest.mark.parametrize("doc,key", [
    ({"states": [0, 1]}, "'rates'"),
    ({"rates": []}, "'states'"),
    ({"states": [0, 1], "rates": [[0, 5, 1.0]]}, "'rates' entry 0"),
    ({"states": [0, 1], "rates": [[0, 1, "x"]]}, "'rates' entry 0"),
])
def test_chain_parse_errors_name_key(doc, key):
    with pytest.raises(ParseError, match=key):
        mio.chain_from_json(doc)


def test_invalid_json_reports_position():
    with pytest.raises(ParseError, match="line 1, column"):
        mio.chain_from_json('{"states": [0, 1], ')


def test_partition_unknown_label():
    c = two_state(1, 1)
    with pytest.raises(ParseError, match="'wells' entry 1"):
        mio.partition_from_json({"wells": [[0], [7]]}, c)


def test_csv_round_trip(tmp_path):
    path = tmp_path / "t.csv"
    mio.write_csv(path, ("t", "state"), [(0.0, (1, 2)), (0.5, "a")])
    rows = mio.read_csv(path, ("t", "state"))
    assert rows == [[0.0, "[1, 2]"], [0.5, "a"]]
    with pytest.raises(ParseError, match="line 1"):
        mio.read_csv(path, ("t", "d"))


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("METASTAB_THREADS", "2")
    assert worker_count(8) == 2
    assert worker_count(1) == 1


# -- command line -------------------------------------------------------------------

def test_model_and_overwrite(tmp_path, capsys):
    code, out, _ = run(capsys, "model", "dog", "--N", 4, "--out", tmp_path)
    assert code == 0 and "49 states" in out
    assert json.loads((tmp_path / "chain.json").read_text())["states"][0] == [-4, -4]
    code, _, err = run(capsys, "model", "dog", "--N", 4, "--out", tmp_path)
    assert code == 2 and "exists" in err
    code, _, _ = run(capsys, "model", "dog", "--N", 4, "--out", tmp_path, "--overwrite")
    assert code == 0


def test_analyze_two_state(tmp_path, capsys):
    c = two_state(2.0, 3.0)
    mio.save_chain(c, tmp_path / "c.json")
    mio.save_partition(Partition(2, ([0], [1])), c.labels, tmp_path / "p.json")
    code, _, _ = run(capsys, "analyze", "--chain", tmp_path / "c.json", "--partition",
                     tmp_path / "p.json", "--out", tmp_path / "r")
    assert code == 0
    rep = json.loads((tmp_path / "r" / "report.json").read_text())
    assert rep["gap"] == pytest.approx(5.0, rel=1e-12)
    assert rep["capacities"][0][1] == pytest.approx(6 / 5, rel=1e-12)
    np.testing.assert_allclose(rep["pi"], [0.6, 0.4])


def test_analyze_dog_csv(tmp_path, capsys):
    run(capsys, "model", "dog", "--N", 8, "--out", tmp_path)
    code, _, _ = run(capsys, "analyze", "--chain", tmp_path / "chain.json", "--partition",
                     tmp_path / "partition.json", "--format", "csv", "--out", tmp_path / "r")
    assert code == 0
    rep = json.loads((tmp_path / "r" / "report.json").read_text())
    c, part = dog_graph(DogGraphSpec(8))
    from metastab.potential import capacity
    from metastab.spectral import spectral_gap
    assert rep["gap"] == pytest.approx(spectral_gap(c).gap, rel=1e-10)
    assert rep["capacities"][0][1] == pytest.approx(
        capacity(c, *part.wells).value, rel=1e-10)
    pi = mio.read_csv(tmp_path / "r" / "pi.csv", ("state", "weight"))
    assert len(pi) == c.n
    mix = mio.read_csv(tmp_path / "r" / "mixing.csv", ("t", "d"))
    assert mix[0][0] == 0.0


def test_analyze_malformed(tmp_path, capsys):
    (tmp_path / "c.json").write_text('{"states": [0, 1]}')
    (tmp_path / "p.json").write_text('{"wells": [[0], [1]]}')
    code, _, err = run(capsys, "analyze", "--chain", tmp_path / "c.json", "--partition",
                       tmp_path / "p.json", "--out", tmp_path)
    assert code == 2 and "'rates'" in err


def test_numeric_failure_exit(tmp_path, capsys, monkeypatch):
    c = two_state(1.0, 1.0)
    mio.save_chain(c, tmp_path / "c.json")
    mio.save_partition(Partition(2, ([0], [1])), c.labels, tmp_path / "p.json")

    def broken(chain):
        raise EigenFailure("forced")

    monkeypatch.setattr(cli, "spectral_gap", broken)
    code, _, err = run(capsys, "analyze", "--chain", tmp_path / "c.json", "--partition",
                       tmp_path / "p.json", "--out", tmp_path)
    assert code == 3 and "forced" in err


def test_verify_identities(tmp_path, capsys):
    code, out, _ = run(capsys, "verify", "identities", "--seed", 7, "--count", 20,
                       "--out", tmp_path)
    assert code == 0 and "identities: PASS" in out
    data = json.loads((tmp_path / "verify-identities.json").read_text())
    assert data["rows"]


def test_verify_usage_errors(capsys):
    assert run(capsys, "verify", "nonsense")[0] == 2
    assert run(capsys, "verify", "fdd", "--model", "dog", "--N", 8)[0] == 2
    assert run(capsys, "verify", "polymer", "--model", "dog")[0] == 2


def test_verify_two_valley_dog(capsys):
    code, out, _ = run(capsys, "verify", "two-valley", "--model", "dog", "--N", 16)
    assert code == 0
    assert "16" in out and "ratio" in out


def test_verify_fdd_dog(capsys):
    code, out, _ = run(capsys, "verify", "fdd", "--model", "dog", "--N", 8, "--n", 5000,
                       "--seed", 1)
    assert code == 0 and "fdd: PASS" in out


def test_family_two_params(tmp_path, capsys):
    code, _, err = run(capsys, "family", "polymer", "--params", 3, 4, "--out", tmp_path)
    assert code == 2 and "FamilyTooSmall" in err


def test_family_polymer_reproducible(tmp_path, capsys):
    for sub in ("a", "b"):
        code, out, _ = run(capsys, "family", "polymer", "--params", 3, 4, 5,
                           "--out", tmp_path / sub)
        assert code == 0 and "l1_gap" in out
    for name in ("conditions.json", "trends.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    data = json.loads((tmp_path / "a" / "conditions.json").read_text())
    assert data["trends"]["l1_gap"]["verdict"] == "satisfied-trend"
    assert data["thresholds"]["vanish_factor"] == 2.0


def test_sample_needs_seed_and_is_reproducible(tmp_path, capsys):
    c = random_reversible(5, seed=0)
    mio.save_chain(c, tmp_path / "c.json")
    assert run(capsys, "sample", "--chain", tmp_path / "c.json", "--init", 0,
               "--horizon", 5)[0] == 2
    for sub in ("a", "b"):
        code, _, _ = run(capsys, "sample", "--chain", tmp_path / "c.json", "--init", 0,
                         "--horizon", 5, "--seed", 3, "--out", tmp_path / sub)
        assert code == 0
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == \
        (tmp_path / "b" / "trajectory.csv").read_bytes()
    assert run(capsys, "sample", "--chain", tmp_path / "c.json", "--init", 99,
               "--horizon", 5, "--seed", 3, "--out", tmp_path / "c")[0] == 2
