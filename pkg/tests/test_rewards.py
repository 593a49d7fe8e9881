import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dialpol.errors import ValidationError
from dialpol.rewards import (EpisodeFeatures, EpisodeOutcome, load_iq_estimator, progress_bucket,
                             reward_iq, reward_ts, table_iq_estimator)


def test_reward_values():
    assert reward_ts(EpisodeOutcome(10, True)) == 10
    assert reward_ts(EpisodeOutcome(10, False)) == -10
    assert reward_ts(EpisodeOutcome(0, True)) == 20
    assert reward_iq(EpisodeOutcome(5, iq=5)) == 15
    assert reward_iq(EpisodeOutcome(6, iq=3)) == 4
    for t in range(50):
        assert reward_iq(EpisodeOutcome(t, iq=1)) == -t


@pytest.mark.parametrize("iq", [0, 6, None, 2.5, True])
def test_iq_out_of_range(iq):
    with pytest.raises(ValidationError):
        reward_iq(EpisodeOutcome(3, iq=iq))


@given(t=st.integers(0, 10_000), iq=st.integers(1, 5), success=st.booleans())
def test_reward_properties(t, iq, success):
    assert reward_iq(EpisodeOutcome(t, iq=5)) == reward_ts(EpisodeOutcome(t, True))
    assert reward_ts(EpisodeOutcome(t + 1, success)) < reward_ts(EpisodeOutcome(t, success))
    assert reward_iq(EpisodeOutcome(t + 1, iq=iq)) < reward_iq(EpisodeOutcome(t, iq=iq))
    if iq < 5:
        assert reward_iq(EpisodeOutcome(t, iq=iq + 1)) > reward_iq(EpisodeOutcome(t, iq=iq))


def test_table_estimator(tmp_path):
    est = table_iq_estimator({"buckets": [1, 2, 3, 4, 5]})
    assert est.estimate(EpisodeFeatures(4, 1.0, True)) == 5
    assert est.estimate(EpisodeFeatures(4, 0.0, False)) == 1
    assert est.estimate(EpisodeFeatures(4, 0.5, False)) == 3
    assert table_iq_estimator({"buckets": [0, 9, 3, 3, 3]}).buckets == (1, 5, 3, 3, 3)
    assert [progress_bucket(p) for p in (0, 0.19, 0.2, 0.99, 1)] == [0, 0, 1, 4, 4]
    with pytest.raises(ValidationError):
        table_iq_estimator({"buckets": [1, 2, 3]})
    with pytest.raises(ValidationError):
        table_iq_estimator({})
    p = tmp_path / "iq.json"
    p.write_text(json.dumps({"buckets": [2, 2, 2, 2, 2]}))
    assert load_iq_estimator(p).estimate(EpisodeFeatures(1, 0.3, False)) == 2
