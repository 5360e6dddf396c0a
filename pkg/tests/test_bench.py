import json
from dataclasses import replace

import jsonschema
import numpy as np
import pytest

from earlyexit.bench import (
    CURVES_JSON_SCHEMA,
    CurvePoint,
    SweepConfig,
    evaluate,
    export_curves,
    read_curves,
    sweep,
    truncated_baseline,
)
from earlyexit.errors import ConfigError, InputError
from earlyexit.exit_policy import Criterion, ExitConfig
from earlyexit.model import forward_full

from oracles import brute_force_exit


def replay_oracle(params, data, delta, window, criterion, eps, s1=True, s2=True):
    """Per-example replay: full forward, then the brute-force exit rule."""
    m = params.cfg.depth
    correct, hist = 0, [0] * m
    for ids, gold in zip(data.ids, data.labels):
        probs = [list(p.probs) for p in forward_full(ids, params).dists]
        _, layer, _ = brute_force_exit(probs, delta, window, criterion, eps, s1, s2)
        hist[layer - 1] += 1
        correct += int(np.argmax(probs[layer - 1]) == gold)
    return correct / len(data), hist


class TestEvaluate:
    def test_disabled_is_full_depth(self, small_run):
        params, _, _, test = small_run
        point = evaluate(params, test, ExitConfig.disabled())
        assert point.mean_cost_ratio == 1.0
        full = np.mean([forward_full(ids, params).dists[-1].label == y for ids, y in zip(test.ids, test.labels)])
        assert point.accuracy == full
        assert point.exit_histogram[-1] == len(test)

    def test_delta_one_costs_one_layer(self, small_run):
        params, _, _, test = small_run
        point = evaluate(params, test, ExitConfig(delta=1.0))
        assert point.mean_cost_ratio == pytest.approx(1 / params.cfg.depth, abs=1e-15)

    @pytest.mark.parametrize("criterion", list(Criterion))
    def test_matches_replay_oracle(self, small_run, criterion):
        params, _, _, test = small_run
        data = test.subset(np.arange(50))
        cfg = ExitConfig(delta=0.3, window_size=2, criterion=criterion, range_epsilon=0.05)
        point = evaluate(params, data, cfg)
        acc, hist = replay_oracle(params, data, 0.3, 2, criterion.value, 0.05)
        assert point.accuracy == acc
        assert point.exit_histogram == hist
        m = params.cfg.depth
        assert point.mean_cost_ratio == pytest.approx(
            sum((i + 1) * c for i, c in enumerate(hist)) / (m * len(data)), abs=1e-15)

    def test_order_independent(self, small_run):
        params, _, _, test = small_run
        cfg = ExitConfig(delta=0.4)
        perm = np.random.default_rng(0).permutation(len(test))
        a, b = evaluate(params, test, cfg), evaluate(params, test.subset(perm), cfg)
        assert (a.accuracy, a.exit_histogram) == (b.accuracy, b.exit_histogram)

    def test_class_mismatch(self, small_run):
        params, _, _, test = small_run
        with pytest.raises(ConfigError):
            evaluate(params, replace(test, num_classes=3), ExitConfig())


class TestSweep:
    def test_stage1_off_single_point(self, small_run):
        params, _, _, test = small_run
        points = sweep(params, test, SweepConfig([0.0], ExitConfig(stage2_enabled=False)))
        assert len(points) == 1 and points[0].mean_cost_ratio == 1.0

    def test_cost_non_increasing(self, small_run):
        params, _, _, test = small_run
        for crit in Criterion:
            points = sweep(params, test, SweepConfig(exit_template=ExitConfig(window_size=2, criterion=crit)))
            costs = [p.mean_cost_ratio for p in points]
            assert len(points) == 11
            assert all(a >= b for a, b in zip(costs, costs[1:]))

    def test_endpoints_match_evaluate(self, small_run):
        params, _, _, test = small_run
        template = ExitConfig(window_size=3, criterion=Criterion.STABLE_LABEL)
        points = sweep(params, test, SweepConfig(exit_template=template))
        for p in (points[0], points[-1]):
            ref = evaluate(params, test, replace(template, delta=p.delta))
            assert (p.accuracy, p.exit_histogram, p.mean_cost_ratio) == (
                ref.accuracy, ref.exit_histogram, ref.mean_cost_ratio)

    def test_grid_validation(self):
        with pytest.raises(ConfigError):
            SweepConfig([0.5, 0.1])
        with pytest.raises(ConfigError):
            SweepConfig([0.0, 1.2])


class TestTruncated:
    def test_full_depth_equals_disabled(self, small_run):
        params, _, _, test = small_run
        m = params.cfg.depth
        (base,) = truncated_baseline(params, test, [m])
        assert base.accuracy == evaluate(params, test, ExitConfig.disabled()).accuracy
        assert base.cost_ratio == 1.0

    def test_depth_one_cost(self, small_run):
        params, _, _, test = small_run
        (base,) = truncated_baseline(params, test, [1])
        assert base.cost_ratio == 1 / params.cfg.depth

    def test_matches_layer_labels(self, small_run):
        params, _, _, test = small_run
        traces = [forward_full(ids, params) for ids in test.ids]
        for base in truncated_baseline(params, test, [1, 2, 3]):
            expected = np.mean([t.dists[base.depth - 1].label == y for t, y in zip(traces, test.labels)])
            assert base.accuracy == expected

    def test_out_of_range(self, small_run):
        params, _, _, test = small_run
        with pytest.raises(ConfigError):
            truncated_baseline(params, test, [0])
        with pytest.raises(ConfigError):
            truncated_baseline(params, test, [params.cfg.depth + 1])


POINTS = [
    CurvePoint(0.1, 0.9, 0.75, [0, 1, 2, 1], "monotone", "s1s2"),
    CurvePoint(0.2, 0.875, 0.5, [1, 2, 1, 0], "monotone", "s1s2"),
]


class TestExport:
    def test_csv_single_point(self, tmp_path):
        export_curves(POINTS[:1], tmp_path / "c.csv")
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert len(lines) == 2
        assert lines[0] == "delta,accuracy,cost_ratio,layer_1,layer_2,layer_3,layer_4"

    def test_csv_round_trip(self, tmp_path):
        export_curves(POINTS, tmp_path / "c.csv")
        back = read_curves(tmp_path / "c.csv")
        for a, b in zip(POINTS, back):
            assert (a.delta, a.accuracy, a.mean_cost_ratio, a.exit_histogram) == (
                b.delta, b.accuracy, b.mean_cost_ratio, b.exit_histogram)

    def test_json_schema_and_round_trip(self, tmp_path):
        export_curves(POINTS, tmp_path / "c.json")
        doc = json.loads((tmp_path / "c.json").read_text())
        jsonschema.validate(doc, CURVES_JSON_SCHEMA)
        assert read_curves(tmp_path / "c.json") == POINTS

    def test_empty(self, tmp_path):
        with pytest.raises(InputError):
            export_curves([], tmp_path / "c.csv")

    def test_unwritable(self, tmp_path):
        with pytest.raises(OSError):
            export_curves(POINTS, tmp_path / "missing" / "c.csv")
