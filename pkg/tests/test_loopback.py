import threading

import pytest

from rbox.loopback import CalcError, CalcState, eval_code


def run(state, code):
    return eval_code(state, code)


def test_arithmetic():
    assert run(CalcState(), "1+2") == ("3", True)
    assert run(CalcState(), "2 * 3 + 4") == ("10", True)
    assert run(CalcState(), "2 * (3 + 4)") == ("14", True)
    assert run(CalcState(), "10 - 2 - 3") == ("5", True)


def test_assignment_keeps_state_and_is_invisible():
    state = CalcState()
    assert run(state, "x <- 41") == (None, False)
    assert state.variables["x"] == 41
    assert run(state, "x + 1") == ("42", True)
    assert state.variables["x"] == 41  # expression did not reassign


def test_sequence_value_of_last_statement():
    state = CalcState()
    assert run(state, "x <- 41; x + 1") == ("42", True)
    assert state.variables["x"] == 41


def test_newlines_separate_statements():
    state = CalcState()
    assert run(state, "a <- 2\nb <- 3\na * b") == ("6", True)


def test_division_truncates_toward_zero():
    assert run(CalcState(), "7/2") == ("3", True)
    assert run(CalcState(), "0 - 7/2") == ("-3", True)
    assert run(CalcState(), "(0-7)/2") == ("-3", True)


def test_divide_by_zero():
    with pytest.raises(CalcError) as exc:
        run(CalcState(), "1/0")
    assert exc.value.ename == "DivideByZero"


def test_undefined_variable():
    with pytest.raises(CalcError) as exc:
        run(CalcState(), "nope + 1")
    assert exc.value.ename == "UndefinedVariable"


def test_syntax_error():
    for bad in ["1 +", "(", "1 2", "foo(1)", "<- 5", ")"]:
        with pytest.raises(CalcError) as exc:
            run(CalcState(), bad)
        assert exc.value.ename == "SyntaxError", bad


def test_unary_minus():
    assert run(CalcState(), "-5 + 2") == ("-3", True)


def test_empty_code_produces_nothing():
    assert run(CalcState(), "") == (None, False)
    assert run(CalcState(), " ; ;") == (None, False)


def test_sleep_returns_ms_and_is_interruptible():
    state = CalcState()
    assert run(state, "sleep(1)") == ("1", True)
    event = threading.Event()
    event.set()
    with pytest.raises(CalcError) as exc:
        eval_code(state, "sleep(5000)", event)
    assert exc.value.ename == "Interrupted"


def test_deterministic():
    a = CalcState()
    b = CalcState()
    program = ["x <- 7", "y <- x * 3", "y - x", "y / 2"]
    outs_a = [run(a, p) for p in program]
    outs_b = [run(b, p) for p in program]
    assert outs_a == outs_b
