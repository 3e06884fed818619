import pytest

from mobilis.errors import ConfigError
from mobilis.records import DEFAULT_T_START, CdrRecord, ObservationWindow

from conftest import T0


class TestObservationWindow:
    def test_default_is_twelve_days(self):
        w = ObservationWindow.default()
        assert w.n_days == 12
        assert w.t_start == DEFAULT_T_START
        assert w.t_end - w.t_start == 12 * 86400
        assert w.day_boundaries[0] == w.t_start

    def test_default_starts_on_a_friday(self):
        import datetime
        d = datetime.datetime.fromtimestamp(DEFAULT_T_START, datetime.timezone.utc)
        assert (d.year, d.month, d.day) == (2008, 7, 4)
        assert d.weekday() == 4  # Friday

    def test_contains_is_closed(self, window12):
        assert window12.contains(window12.t_start)
        assert window12.contains(window12.t_end)
        assert not window12.contains(window12.t_start - 1)
        assert not window12.contains(window12.t_end + 1)

    def test_day_index(self, window12):
        assert window12.day_index(T0) == 0
        assert window12.day_index(T0 + 86400) == 1
        assert window12.day_index(T0 + 86400 - 1) == 0
        assert window12.day_index(window12.t_end) == 11  # clamped into last day

    def test_hour_index(self, window12):
        assert window12.hour_index(T0) == 0
        assert window12.hour_index(T0 + 3600) == 1
        assert window12.hour_index(window12.t_end) == 12 * 24 - 1

    def test_empty_window_rejected(self):
        with pytest.raises(ConfigError):
            ObservationWindow(T0, T0)

    def test_non_increasing_boundaries_rejected(self):
        with pytest.raises(ConfigError):
            ObservationWindow(T0, T0 + 100, (T0, T0))

    def test_first_boundary_must_be_start(self):
        with pytest.raises(ConfigError):
            ObservationWindow(T0, T0 + 100, (T0 + 1,))


class TestCdrRecord:
    def test_fields(self):
        rec = CdrRecord("42", T0, "T7", 1.5, -2.5)
        assert (rec.subscriber_id, rec.timestamp, rec.tower_id) == ("42", T0, "T7")
        assert (rec.x, rec.y) == (1.5, -2.5)
