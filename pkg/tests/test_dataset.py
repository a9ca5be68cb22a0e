import csv
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldnet.dataset import (MEAN_LISTENER, UNKNOWN_INDEX, DatasetError, ListenerRegistry, ParseError, Rating, Sample,
                           compute_mean_scores, extend_with_mean_listener, iterate_training_triples, load_dataset,
                           make_dataset, random_split, write_dataset)

from conftest import tiny_dataset


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


HEADER = ("sample_id", "system_id", "listener_id", "score", "audio_path")


def test_singleton_file(tmp_path):
    p = write_csv(tmp_path / "r.csv", HEADER, [("s", "sys", "l", "3.0", "s.wav")])
    ds = load_dataset(p)
    assert len(ds.samples) == 1 and ds.registry.n_listeners == 1
    assert dict(ds.mean_scores) == {"s": 3.0}
    assert ds.samples["s"].audio_path == tmp_path / "s.wav"


@pytest.mark.parametrize("scores, mean", [((4, 4, 4, 4), 4.0), ((1, 5), 3.0), ((2, 3, 4, 5), 3.5)])
def test_mean_scores(scores, mean):
    ratings = [Rating("x", f"l{i}", float(v)) for i, v in enumerate(scores)]
    ds = make_dataset([Sample("x", "s", "x.wav")], ratings)
    assert compute_mean_scores(ds)["x"] == pytest.approx(mean, abs=1e-12)


def test_sample_without_ratings_is_named():
    with pytest.raises(DatasetError, match="lonely"):
        make_dataset([Sample("x", "s", "x.wav"), Sample("lonely", "s", "y.wav")], [Rating("x", "a", 3.0)])


def test_validation_errors(tmp_path):
    with pytest.raises(DatasetError):
        Rating("x", "a", 5.5)
    with pytest.raises(DatasetError, match="unknown sample"):
        make_dataset([Sample("x", "s", "x.wav")], [Rating("y", "a", 3.0)])
    with pytest.raises(DatasetError, match="duplicate"):
        make_dataset([Sample("x", "s", "x.wav")], [Rating("x", "a", 3.0), Rating("x", "a", 4.0)])
    with pytest.raises(DatasetError, match="reserved"):
        make_dataset([Sample("x", "s", "x.wav")], [Rating("x", MEAN_LISTENER, 3.0)])


def test_parse_error_names_line(tmp_path):
    p = write_csv(tmp_path / "r.csv", HEADER, [("a", "s", "l", "3", ""), ("b", "s", "l", "oops", "")])
    with pytest.raises(ParseError, match=r"r\.csv:3"):
        load_dataset(p)
    p = write_csv(tmp_path / "o.csv", HEADER, [("a", "s", "l", "7", "")])
    with pytest.raises(DatasetError, match="outside"):
        load_dataset(p)
    p = write_csv(tmp_path / "m.csv", ("sample_id", "score"), [("a", "3")])
    with pytest.raises(ParseError, match="missing column"):
        load_dataset(p)


def test_split_file_checks(tmp_path):
    p = write_csv(tmp_path / "r.csv", HEADER, [("a", "s", "l", "3", ""), ("b", "s", "l", "4", "")])
    sp = write_csv(tmp_path / "s.csv", ("sample_id", "split"), [("a", "train"), ("b", "valid")])
    with pytest.raises(DatasetError, match="empty split"):
        load_dataset(p, split_spec=sp)
    sp = write_csv(tmp_path / "s2.csv", ("sample_id", "split"), [("a", "train")])
    with pytest.raises(DatasetError, match="without a split"):
        load_dataset(p, split_spec=sp)
    sp = write_csv(tmp_path / "s3.csv", ("sample_id", "split"), [("a", "train"), ("b", "dev")])
    with pytest.raises(ParseError):
        load_dataset(p, split_spec=sp)


def test_registry_orders_training_listeners_first():
    samples = [Sample("a", "s", "a.wav", "train"), Sample("b", "s", "b.wav", "test")]
    ratings = [Rating("a", "zed", 3.0), Rating("a", "amy", 2.0), Rating("b", "bob", 4.0), Rating("b", "amy", 1.0)]
    ds = make_dataset(samples, ratings)
    assert ds.registry.names == ("amy", "zed")
    assert ds.registry.index("zed") == 1
    assert ds.registry.index("bob") == UNKNOWN_INDEX
    with pytest.raises(KeyError):
        ds.registry.index("nobody")


def test_registry_round_trip_and_checks():
    reg = ListenerRegistry(("a", "b"), ("c",), 2)
    assert ListenerRegistry.from_dict(reg.to_dict()) == reg
    assert reg.index(MEAN_LISTENER) == 2 and reg.embedding_rows == 3
    with pytest.raises(DatasetError):
        ListenerRegistry(("a", "b"), mean_listener_index=1)
    with pytest.raises(DatasetError):
        ListenerRegistry(("a", "a"))


def test_extend_with_mean_listener_counts_and_values():
    ds = tiny_dataset(n_systems=3, per_system=4, listeners=("a", "b", "c"))
    n_train = len(ds.split("train"))
    ext = extend_with_mean_listener(ds)
    assert len(ext.training_ratings()) == n_train * (3 + 1)
    assert ext.registry.mean_listener_index == 3 and ext.registry.embedding_rows == 4
    new = [r for r in ext.ratings if r.listener_id == MEAN_LISTENER]
    assert all(ext.samples[r.sample_id].split == "train" for r in new)
    assert {r.sample_id: r.score for r in new} == {s.sample_id: ds.mean_scores[s.sample_id] for s in ds.split("train")}
    assert set(ds.ratings) <= set(ext.ratings)
    assert compute_mean_scores(ext) == pytest.approx(dict(ds.mean_scores), abs=1e-9)
    with pytest.raises(DatasetError):
        extend_with_mean_listener(ext)


def test_two_sample_extension_scores():
    samples = [Sample("p", "s", "p.wav"), Sample("q", "s", "q.wav")]
    ratings = [Rating("p", "a", 2.0), Rating("p", "b", 4.0), Rating("q", "a", 4.5)]
    ext = extend_with_mean_listener(make_dataset(samples, ratings))
    assert sorted(r.score for r in ext.ratings if r.listener_id == MEAN_LISTENER) == [3.0, 4.5]


def test_extension_rejects_empty_train():
    with pytest.raises(DatasetError):
        extend_with_mean_listener(make_dataset([Sample("x", "s", "x.wav", "test")], [Rating("x", "a", 3.0)]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_epoch_is_a_permutation(seed):
    ds = tiny_dataset(seed=seed % 7)
    triples = list(iterate_training_triples(ds, seed))
    expected = Counter((r.sample_id, ds.registry.index(r.listener_id), r.score) for r in ds.training_ratings())
    assert Counter((s.sample_id, li, v) for s, li, v in triples) == expected
    assert triples == list(iterate_training_triples(ds, seed))


def test_loading_is_repeatable_and_round_trips(tmp_path):
    ds = tiny_dataset()
    write_dataset(ds, tmp_path / "r.csv", tmp_path / "s.csv", audio_root=tmp_path)
    a = load_dataset(tmp_path / "r.csv", tmp_path, tmp_path / "s.csv")
    b = load_dataset(tmp_path / "r.csv", tmp_path, tmp_path / "s.csv")
    assert a == b
    assert set(a.ratings) == set(ds.ratings)
    assert {k: v.split for k, v in a.samples.items()} == {k: v.split for k, v in ds.samples.items()}


def test_random_split_sizes_and_determinism():
    ids = [f"u{i}" for i in range(20)]
    a = random_split(ids, (12, 4, 4), seed=1)
    assert Counter(a.values()) == {"train": 12, "valid": 4, "test": 4}
    assert a == random_split(list(reversed(ids)), (12, 4, 4), seed=1)
    with pytest.raises(DatasetError):
        random_split(ids, (1, 1, 1), seed=0)


def test_no_split_means_all_train(tmp_path):
    p = write_csv(tmp_path / "r.csv", HEADER, [("a", "s", "l", "3", ""), ("b", "s", "l", "4", "")])
    assert load_dataset(p).split_sizes() == {"train": 2, "valid": 0, "test": 0}


def test_curated_preset_requires_split_file(tmp_path):
    p = write_csv(tmp_path / "r.csv", HEADER, [("a", "s", "l", "3", "")])
    with pytest.raises(DatasetError, match="curated"):
        load_dataset(p, split_spec="bvcc")
