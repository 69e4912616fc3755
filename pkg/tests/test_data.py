import numpy as np
import pytest

from mbib.data import (FEW, MANY, MEDIUM, ClassFrequencyTable, CsvFormatError, batch_iterator,
                       exponential_profile, load_csv, synthesize_gaussian, write_csv)
from mbib.numerics import make_rng


def test_profile_endpoints():
    assert exponential_profile(2, 100, 100).counts == (100, 1)
    # 100 * 100**(-1/2) = 10
    assert exponential_profile(3, 100, 100).counts == (100, 10, 1)
    assert exponential_profile(5, 37, 1).counts == (37,) * 5


def test_profile_properties():
    t = exponential_profile(10, 800, 100)
    c = np.array(t.counts)
    assert np.all(np.diff(c) <= 0)
    assert t.total == c.sum()
    assert t.imbalance_factor == max(c) / min(c)
    assert c[-1] == 8
    with pytest.raises(ValueError):
        exponential_profile(3, 100, 0.5)


def test_groups_partition():
    t = ClassFrequencyTable((500, 101, 100, 20, 19, 1))
    assert t.groups == (MANY, MANY, MEDIUM, MEDIUM, FEW, FEW)
    scaled = ClassFrequencyTable((60, 30, 5), many_threshold=50, few_threshold=10)
    assert scaled.groups == (MANY, MEDIUM, FEW)
    with pytest.raises(ValueError, match="empty class"):
        ClassFrequencyTable((3, 0))


def test_synthesis_deterministic():
    freq = exponential_profile(4, 50, 10)
    a_tr, a_te = synthesize_gaussian(freq, 3, 2.0, make_rng(5))
    b_tr, b_te = synthesize_gaussian(freq, 3, 2.0, make_rng(5))
    assert a_tr.features.tobytes() == b_tr.features.tobytes()
    assert a_te.features.tobytes() == b_te.features.tobytes()
    assert np.bincount(a_tr.labels).tolist() == list(freq.counts)
    assert np.bincount(a_te.labels).tolist() == [100] * 4


def _nearest_centroid_balanced_acc(train, test):
    K = train.num_classes
    cents = np.stack([train.features[train.labels == k].mean(axis=0) for k in range(K)])
    d = ((test.features[:, None, :] - cents[None]) ** 2).sum(-1)
    pred = d.argmin(axis=1)
    return np.mean([(pred[test.labels == k] == k).mean() for k in range(K)])


def test_well_separated_classes_are_easy():
    freq = exponential_profile(2, 100, 10)
    tr, te = synthesize_gaussian(freq, 2, 10.0, make_rng(0))
    assert _nearest_centroid_balanced_acc(tr, te) >= 0.99


def test_no_signal_gives_chance():
    K, per = 4, 500
    freq = ClassFrequencyTable((200,) * K)
    tr, te = synthesize_gaussian(freq, 3, 0.0, make_rng(1), test_per_class=per)
    acc = _nearest_centroid_balanced_acc(tr, te)
    sigma = np.sqrt((1 / K) * (1 - 1 / K) / (K * per))
    assert abs(acc - 1 / K) <= 3 * sigma


def test_csv_roundtrip(tmp_path):
    tr, _ = synthesize_gaussian(exponential_profile(3, 20, 4), 4, 1.5, make_rng(2))
    path = tmp_path / "d.csv"
    write_csv(tr, path)
    back = load_csv(path)
    np.testing.assert_allclose(back.features, tr.features, rtol=0, atol=1e-9)
    np.testing.assert_array_equal(back.labels, tr.labels)
    assert back.frequency_table.counts == tr.frequency_table.counts


def test_csv_counts_and_errors(tmp_path):
    p = tmp_path / "ok.csv"
    p.write_text("0,1.0,2.0\n0,0.5,0.1\n1,3,4\n")
    d = load_csv(p)
    assert d.frequency_table.counts == (2, 1)
    assert d.dim == 2
    bad = tmp_path / "ragged.csv"
    bad.write_text("0,1.0,2.0\n1,1.0\n")
    with pytest.raises(CsvFormatError, match=":2: ragged"):
        load_csv(bad)
    nonnum = tmp_path / "nn.csv"
    nonnum.write_text("0,1.0\n1,abc\n")
    with pytest.raises(CsvFormatError, match=":2: non-numeric"):
        load_csv(nonnum)
    empty = tmp_path / "e.csv"
    empty.write_text("")
    with pytest.raises(CsvFormatError, match="empty"):
        load_csv(empty)


def test_batches_cover_epoch():
    tr, _ = synthesize_gaussian(exponential_profile(3, 30, 5), 2, 1.0, make_rng(3))
    rng = make_rng(9)
    whole = list(batch_iterator(tr, len(tr), rng))
    assert len(whole) == 1 and whole[0][0].shape[0] == len(tr)
    e1 = list(batch_iterator(tr, 7, rng))
    e2 = list(batch_iterator(tr, 7, rng))
    assert [len(b[1]) for b in e1][-1] == len(tr) % 7 or len(tr) % 7 == 0

    def rows(epoch):
        return np.concatenate([b[0] for b in epoch])

    r1, r2 = rows(e1), rows(e2)
    assert sorted(map(tuple, r1)) == sorted(map(tuple, tr.features))
    assert sorted(map(tuple, r2)) == sorted(map(tuple, tr.features))
    assert not np.array_equal(r1, r2)
