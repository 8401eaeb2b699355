import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detpp.events import (
    DataValidationError,
    EventSequence,
    extract_horizon_targets,
    load_sequences,
    save_sequences,
)
from detpp.synth import generate_markov_bursts


def _write(tmp_path, lines):
    path = tmp_path / "data.jsonl"
    path.write_text("".join(line + "\n" for line in lines))
    return path


def test_load_two_events(tmp_path):
    path = _write(tmp_path, ['{"id":"s0","events":[[0.5,1],[1.0,0]]}'])
    (seq,) = load_sequences(path)
    assert seq.id == "s0"
    assert seq.events == [(0.5, 1), (1.0, 0)]


def test_tie_rejected_with_sequence_id(tmp_path):
    path = _write(tmp_path, ['{"id":"s1","events":[[1.0,0],[1.0,1]]}'])
    with pytest.raises(DataValidationError, match="s1"):
        load_sequences(path)


def test_empty_file(tmp_path):
    assert load_sequences(_write(tmp_path, [])) == []


def test_malformed_line_names_line_number(tmp_path):
    path = _write(tmp_path, ['{"id":"a","events":[]}', "{not json"])
    with pytest.raises(DataValidationError, match=":2:"):
        load_sequences(path)


def test_label_out_of_vocabulary(tmp_path):
    path = _write(tmp_path, ['{"id":"a","events":[[0.1,4]]}'])
    with pytest.raises(DataValidationError, match="L=4"):
        load_sequences(path, num_labels=4)


def test_round_trip_single_and_empty(tmp_path):
    seq = EventSequence.from_events("x", [(0.25, 2), (1.5, 0), (7.125, 1)])
    save_sequences([seq], tmp_path / "a.jsonl")
    assert load_sequences(tmp_path / "a.jsonl") == [seq]
    save_sequences([], tmp_path / "b.jsonl")
    assert (tmp_path / "b.jsonl").read_text() == ""
    assert load_sequences(tmp_path / "b.jsonl") == []


def test_round_trip_generated(tmp_path):
    seqs = generate_markov_bursts(4, 20.0, 5, 1000)
    save_sequences(seqs, tmp_path / "g.jsonl")
    back = load_sequences(tmp_path / "g.jsonl")
    assert len(back) == 1000
    for a, b in zip(seqs, back):
        assert a.id == b.id
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.labels, b.labels)


def test_saved_format_is_plain_jsonl(tmp_path):
    seq = EventSequence.from_events("q", [(0.5, 1)])
    save_sequences([seq], tmp_path / "q.jsonl")
    assert json.loads((tmp_path / "q.jsonl").read_text()) == {"id": "q", "events": [[0.5, 1]]}


def _times(seq, target):
    return [float(t) for t in target.times]


def test_horizon_targets_hand_example():
    seq = EventSequence.from_events("s", [(1, 0), (2, 0), (3, 0)])
    out = extract_horizon_targets(seq, 1.5, 10, 1)
    assert [n for n, _ in out] == [0, 1, 2]
    assert [_times(seq, t) for _, t in out] == [[2.0], [3.0], []]


def test_horizon_targets_far_apart_are_empty():
    seq = EventSequence.from_events("s", [(0, 0), (10, 1)])
    assert [len(t) for _, t in extract_horizon_targets(seq, 1.0, 4)] == [0, 0]


def test_horizon_target_truncated_to_k():
    seq = EventSequence.from_events("s", [(0, 0), (0.1, 0), (0.2, 1), (0.3, 0)])
    _, target = extract_horizon_targets(seq, 10.0, 2)[0]
    assert _times(seq, target) == [0.1, 0.2]


def test_right_endpoint_included():
    seq = EventSequence.from_events("s", [(0, 0), (1.0, 1), (1.5, 1)])
    _, target = extract_horizon_targets(seq, 1.0, 5)[0]
    assert _times(seq, target) == [1.0]


def test_min_history_skips_early_anchors():
    seq = EventSequence.from_events("s", [(0, 0), (1, 0), (2, 0)])
    assert [n for n, _ in extract_horizon_targets(seq, 1.0, 2, min_history=2)] == [1, 2]


@settings(max_examples=200, deadline=None)
@given(
    gaps=st.lists(st.floats(0.01, 3.0), min_size=1, max_size=30),
    horizon=st.floats(0.05, 10.0),
    k=st.integers(1, 8),
)
def test_window_membership_and_prefix_truncation(gaps, horizon, k):
    times = np.cumsum(gaps)
    seq = EventSequence(id="h", times=times, labels=np.zeros(len(times), dtype=np.int64))
    for n, target in extract_horizon_targets(seq, horizon, k):
        assert len(target) <= k
        inside = [j for j in range(n + 1, len(times)) if times[n] < times[j] <= times[n] + horizon]
        # the target is exactly the earliest min(k, |window|) window members
        np.testing.assert_array_equal(target.times, times[inside[:k]])
        assert np.all(np.diff(target.times) > 0)
