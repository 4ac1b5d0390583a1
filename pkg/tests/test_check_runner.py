import pytest

from fiberlim.test_runner import Check, decreasing, run_check, run_checks


def failing_check():
    raise ZeroDivisionError("division by zero")


class TestRunChecks:
    def test_meta_counts(self):
        summary = run_checks([
            Check("first", lambda: (True, {"value": 1})),
            Check("second", lambda: (False, {})),
            Check("third", lambda: (1, {})),
            Check("broken", failing_check),
        ])
        assert summary["meta"] == {
            "total_checks": 4,
            "passing": 2,
            "failing": 1,
            "errors": 1,
            "pass_rate_percent": 66.67,
        }
        assert [check["name"] for check in summary["passing_checks"]] == ["first", "third"]
        assert summary["passing_checks"][1]["is_passing"] is True

    def test_error_is_captured(self):
        result = run_check(Check("broken", failing_check))
        assert result["name"] == "broken"
        assert "division by zero" in result["error"]

    def test_result_dict_has_no_timing(self):
        result = run_check(Check("named", lambda: (True, {"x": 0.5}), "a description"))
        assert result == {"name": "named", "is_passing": True, "description": "a description", "details": {"x": 0.5}}

    def test_empty_run(self):
        assert run_checks([])["meta"]["pass_rate_percent"] == 0


@pytest.mark.parametrize("values, expected", [
    ([3.0, 2.0, 1.0], True),
    ([1.0], True),
    ([], True),
    ([2.0, 2.0], False),
    ([1.0, 0.5, 0.7], False),
])
def test_decreasing(values, expected):
    assert decreasing(values) is expected
