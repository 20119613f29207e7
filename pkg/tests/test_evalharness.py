import json
import random
import tracemalloc

import pytest

import oracles
from conftest import synthetic_trace
from ctrlsum.control import ABORTED, IterationTrace, Outcome
from ctrlsum.errors import EmptyInput, EmptyPopulation, LengthMismatch, SchemaError
from ctrlsum.evalharness import (
    NOT_APPLICABLE,
    ControlStats,
    RunSet,
    compute_stats,
    dumps_trace,
    format_cell,
    iter_traces,
    load_runset,
    parse_cell,
    parse_table,
    persist_traces,
    render_table,
    report,
    rmse,
    stats_by_label,
    trajectory_rows,
)

SUCCESS_ITERS = [0, 0, 1, 2, 3, 0, 4, 2]


def ten_traces():
    traces = [synthetic_trace(f"s{i}", it) for i, it in enumerate(SUCCESS_ITERS)]
    traces += [synthetic_trace("f1", None), synthetic_trace("f2", None)]
    return traces


def test_ten_trace_fixture():
    st = compute_stats(ten_traces())
    assert st.failure_rate == 20.0
    assert st.avg_iterations == 1.5
    assert st.avg_iterations_refinements_only == pytest.approx(12 / 5)
    assert (st.n_success, st.n_failure) == (8, 2)
    assert format_cell(st) == "20.00% / 1.50"


def test_all_fail_is_not_applicable():
    st = compute_stats([synthetic_trace("a", None), synthetic_trace("b", None)])
    assert st.failure_rate == 100.0 and st.avg_iterations is None
    assert format_cell(st) == f"100.00% / {NOT_APPLICABLE}"
    assert parse_cell(format_cell(st)) == (100.0, None)


def test_single_draft_success():
    st = compute_stats([synthetic_trace("a", 0)])
    assert (st.failure_rate, st.avg_iterations) == (0.0, 0.0)
    assert st.avg_iterations_refinements_only is None


def test_aborted_excluded():
    aborted = IterationTrace("x", synthetic_trace("x", 0).target, synthetic_trace("x", 0).strategy, 20, (), Outcome(ABORTED),
                             "fp", "ModelUnavailable: down")
    assert compute_stats(ten_traces() + [aborted]) == compute_stats(ten_traces())
    with pytest.raises(EmptyPopulation):
        compute_stats([aborted])
    assert RunSet(ten_traces() + [aborted]).n_aborted == 1


def test_cell_format_examples():
    assert format_cell(ControlStats(0.0, 2.8666, None, 30, 0)) == "0.00% / 2.87"
    assert parse_cell("0.00% / 2.87") == (0.0, 2.87)
    with pytest.raises(ValueError):
        parse_cell("nonsense")


def test_brute_force_recount():
    rng = random.Random(5)
    for _ in range(50):
        iters = [rng.choice([None, 0, 1, 2, 5, 20]) for _ in range(rng.randint(1, 30))]
        st = compute_stats([synthetic_trace(f"t{i}", it) for i, it in enumerate(iters)])
        succ = [i for i in iters if i is not None]
        assert st.failure_rate == pytest.approx(100 * iters.count(None) / len(iters), abs=1e-12)
        if succ:
            assert st.avg_iterations == pytest.approx(sum(succ) / len(succ), abs=1e-12)
        else:
            assert st.avg_iterations is None


def test_stats_by_label_and_table_parse_back():
    traces = [synthetic_trace(f"h{i}", it, label="high") for i, it in enumerate([0, 1, None])]
    traces += [synthetic_trace(f"n{i}", it, label="normal", target_value=85.0) for i, it in enumerate([2, 2])]
    grouped = stats_by_label(traces)
    assert list(grouped) == [("extractiveness", "high"), ("extractiveness", "normal"), ("extractiveness", "avg")]
    assert grouped[("extractiveness", "avg")].failure_rate == 20.0
    parsed = parse_table(render_table(grouped))
    for key, st in grouped.items():
        fail, avg = parsed[key]
        assert fail == round(st.failure_rate, 2)
        assert avg == (None if st.avg_iterations is None else round(st.avg_iterations, 2))


def test_rmse():
    assert rmse([85, 90], [80, 95]) == 5.0
    rng = random.Random(1)
    for _ in range(100):
        n = rng.randint(1, 40)
        a = [rng.uniform(0, 100) for _ in range(n)]
        b = [rng.uniform(0, 100) for _ in range(n)]
        assert rmse(a, b) == pytest.approx(oracles.rmse(a, b), abs=1e-12)
    with pytest.raises(LengthMismatch):
        rmse([1.0], [])
    with pytest.raises(EmptyInput):
        rmse([], [])


def test_persist_load_round_trip(tmp_path):
    path = tmp_path / "t.jsonl"
    assert persist_traces(ten_traces(), path) == 10
    loaded = load_runset(path)
    assert loaded.traces == ten_traces()
    assert loaded.config_fingerprint == "fp"


def test_truncated_line_reports_line_number(tmp_path):
    path = tmp_path / "t.jsonl"
    persist_traces(ten_traces()[:3], path)
    text = path.read_text(encoding="utf-8").splitlines()
    text[1] = text[1][: len(text[1]) // 2]
    path.write_text("\n".join(text) + "\n", encoding="utf-8")
    with pytest.raises(SchemaError) as info:
        list(iter_traces(path))
    assert info.value.line == 2
    assert "line 2" in str(info.value)


def test_invalid_trace_rejected(tmp_path):
    path = tmp_path / "t.jsonl"
    d = synthetic_trace("a", 1).to_dict()
    d["outcome"]["at_iteration"] = 0
    path.write_text(json.dumps(d) + "\n", encoding="utf-8")
    with pytest.raises(SchemaError):
        list(iter_traces(path))


def test_mixed_fingerprints_rejected():
    with pytest.raises(SchemaError):
        RunSet([synthetic_trace("a", 0, fingerprint="x"), synthetic_trace("b", 0, fingerprint="y")])


def test_streaming_memory_is_bounded(tmp_path):
    path = tmp_path / "big.jsonl"
    persist_traces((synthetic_trace(f"s{i}", i % 5 if i % 7 else None) for i in range(1000)), path)
    size = path.stat().st_size
    tracemalloc.start()
    count = 0
    for _ in iter_traces(path):
        count += 1
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert count == 1000
    assert peak < size / 4


def test_report_contents(tmp_path):
    runs = RunSet(ten_traces())
    rep = report(runs)
    assert "20.00% / 1.50" in rep.text
    paths = rep.write(tmp_path / "r")
    data = json.loads(paths["json"].read_text(encoding="utf-8"))
    assert data["overall"]["failure_rate"] == 20.0
    assert parse_table(rep.text.split("## Single-attribute control\n\n")[1])[("extractiveness", "high")] == (20.0, 1.5)
    csv_lines = paths["csv"].read_text(encoding="utf-8").splitlines()
    assert len(csv_lines) - 1 == len(trajectory_rows(runs)) == sum(len(t.records) for t in runs.traces)


def test_dumps_is_stable():
    t = synthetic_trace("a", 2)
    assert dumps_trace(t) == dumps_trace(IterationTrace.from_dict(json.loads(dumps_trace(t))))
