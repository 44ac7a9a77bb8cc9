import numpy as np
import pytest

from rmpkit import bench


def test_slope_fit_linear_exact():
    points = [(n, 3.7e-6 * n) for n in (10, 20, 40, 80)]
    fit = bench.fit_loglog_slope(points)
    assert fit.slope == pytest.approx(1.0, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)


def test_slope_fit_quadratic_exact():
    points = [(n, 2e-8 * n ** 2) for n in (10, 20, 40, 80)]
    fit = bench.fit_loglog_slope(points)
    assert fit.slope == pytest.approx(2.0, abs=1e-12)


def test_slope_fit_needs_two_points():
    with pytest.raises(ValueError):
        bench.fit_loglog_slope([(10, 1.0)])


def test_spec_validation():
    with pytest.raises(ValueError):
        bench.BenchSpec(trials=0)
    with pytest.raises(ValueError):
        bench.BenchSpec(lengths=(8, 4))
    with pytest.raises(ValueError):
        bench.BenchSpec(algorithms=("fancy",))


def test_tiny_benchmark_runs_all_algorithms():
    spec = bench.BenchSpec(lengths=(1, 2), trials=3, warmup=1,
                           algorithms=("rmp2", "naive",
                                       "naive_memory_safe", "rmpflow"))
    result = bench.run_benchmark(spec)
    assert len(result.rows) == 8
    first = result.rows[0]
    assert first.node_count == 1 + 4 * 1
    for row in result.rows:
        assert row.mean_s > 0 and row.median_s > 0
    assert set(result.slopes) == set(spec.algorithms)


def test_csv_schema(tmp_path):
    spec = bench.BenchSpec(lengths=(1, 2), trials=2, warmup=1,
                           algorithms=("rmp2",))
    result = bench.run_benchmark(spec)
    path = tmp_path / "bench.csv"
    bench.write_csv(result, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "algorithm,length,N,trials,mean_s,std_s,median_s"
    assert len(lines) == 3
    assert lines[1].startswith("rmp2,1,5,2,")
