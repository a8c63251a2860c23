import numpy as np
import pytest

from unbalance_lab.sweep import (
    DEFAULT_GRIDS,
    IncompleteSweepError,
    MethodPlan,
    PlanError,
    SweepPlan,
    assemble_matrix,
    kxi_trend,
    plan_from_dict,
    plan_to_dict,
    run_cell,
    run_sweep,
    select_best,
    _cell_data,
)


def tiny_plan(**kw):
    base = dict(
        problem="CI",
        unbalance_grid=(0.5, 0.9),
        complexity_grid=(1.0,),
        methods=(MethodPlan("h_star"), MethodPlan("fbi", {"xi": (0.0, 2.0)})),
        synth={"n_train": 400, "n_features": 12, "set_size": 3},
        runs_per_cell=2,
        base_seed=5,
        epochs=2,
        n_validation=400,
        n_selection=200,
        hidden=(8,),
    )
    base.update(kw)
    return SweepPlan(**base)


class TestPlan:
    def test_roundtrip(self):
        plan = tiny_plan()
        again = plan_from_dict(plan_to_dict(plan))
        assert again == plan

    def test_validation_errors(self):
        with pytest.raises(PlanError, match="problem"):
            tiny_plan(problem="XX")
        with pytest.raises(PlanError, match="confounder"):
            tiny_plan(methods=(MethodPlan("peo"),))
        with pytest.raises(PlanError, match="unbalance"):
            tiny_plan(unbalance_grid=(0.4,))
        with pytest.raises(PlanError, match="complexity_grid"):
            tiny_plan(complexity_grid=())
        with pytest.raises(PlanError, match="exactly one"):
            tiny_plan(synth=None)

    def test_default_grids_used(self):
        mp = MethodPlan("fbi")
        cands = mp.candidates()
        assert len(cands) == len(DEFAULT_GRIDS["fbi"]["xi"])

    def test_candidate_product(self):
        mp = MethodPlan("peo", {"lambda": (0.5, 1.0), "epsilon": (0.0, 0.1)})
        cands = mp.candidates()
        assert len(cands) == 4
        assert {"epsilon": 0.0, "lambda": 0.5} in cands

    def test_task_count(self):
        plan = tiny_plan()
        # (1 h_star + 2 fbi) configs x 2 cells x 2 runs
        assert len(plan.tasks()) == 3 * 2 * 2


class TestRunCell:
    def test_deterministic_record(self):
        plan = tiny_plan()
        a = run_cell(plan, "h_star", {}, 1.0, 0.9, 0)
        b = run_cell(plan, "h_star", {}, 1.0, 0.9, 0)
        assert a == b

    def test_fbi_xi_zero_reproduces_h_star(self):
        plan = tiny_plan()
        a = run_cell(plan, "fbi", {"xi": 0.0}, 1.0, 0.9, 1)
        b = run_cell(plan, "h_star", {}, 1.0, 0.9, 1)
        for key in ("sel_underg", "sel_overg", "underg", "overg"):
            assert a[key] == b[key]

    def test_methods_share_cell_data(self):
        plan = tiny_plan()
        t1, s1, v1 = _cell_data(plan, 1.0, 0.9, 0)
        t2, s2, v2 = _cell_data(plan, 1.0, 0.9, 0)
        assert np.array_equal(t1.X, t2.X)
        assert np.array_equal(v1.X, v2.X)

    def test_runs_use_disjoint_streams(self):
        plan = tiny_plan()
        t1, _, _ = _cell_data(plan, 1.0, 0.9, 0)
        t2, _, _ = _cell_data(plan, 1.0, 0.9, 1)
        assert not np.array_equal(t1.X, t2.X)


def _rec(method, hyper, sel_u, sel_o, theta=1.0, unb=0.9, run=0, under=None, over=None, k=None):
    return {
        "method": method, "theta_y": theta, "unbalance": unb, "run": run,
        "hyper": hyper, "k": k,
        "sel_underg": sel_u, "sel_overg": sel_o,
        "underg": under if under is not None else sel_u,
        "overg": over if over is not None else sel_o,
        "fpr_gap": None, "fnr_gap": None,
    }


class TestSelectBest:
    def test_max_min_rule(self):
        records = [
            _rec("cc", {"C": 1.0}, 0.5, 0.9),
            _rec("cc", {"C": 2.0}, 0.75, 0.8),
            _rec("cc", {"C": 3.0}, 0.6, 0.85),
        ]
        assert select_best(records) == {"C": 2.0}

    def test_single_candidate(self):
        assert select_best([_rec("cc", {"C": 7.0}, 0.1, 0.2)]) == {"C": 7.0}

    def test_tie_breaks(self):
        # equal min -> higher mean wins
        records = [
            _rec("cc", {"C": 1.0}, 0.7, 0.9),
            _rec("cc", {"C": 2.0}, 0.7, 0.8),
        ]
        assert select_best(records) == {"C": 1.0}
        # equal min and mean -> smaller hyperparameter
        records = [
            _rec("cc", {"C": 5.0}, 0.9, 0.7),
            _rec("cc", {"C": 2.0}, 0.7, 0.9),
        ]
        assert select_best(records) == {"C": 2.0}

    def test_invariant_under_reordering(self):
        records = [
            _rec("cc", {"C": 1.0}, 0.5, 0.9),
            _rec("cc", {"C": 2.0}, 0.75, 0.8),
            _rec("cc", {"C": 3.0}, 0.6, 0.85),
        ]
        assert select_best(records[::-1]) == select_best(records)

    def test_averages_over_runs(self):
        records = [
            _rec("cc", {"C": 1.0}, 0.9, 0.9, run=0),
            _rec("cc", {"C": 1.0}, 0.1, 0.1, run=1),  # mean min 0.5
            _rec("cc", {"C": 2.0}, 0.6, 0.6, run=0),
            _rec("cc", {"C": 2.0}, 0.6, 0.6, run=1),  # mean min 0.6
        ]
        assert select_best(records) == {"C": 2.0}


class TestAssemble:
    def _full_records(self, plan, value=None):
        records = []
        for task in plan.tasks():
            v = value
            if v is None:
                v = 0.6 if task["run"] == 0 else 0.8
            records.append(_rec(task["method"], task["hyper"], v, v,
                                theta=task["theta_y"], unb=task["unbalance"],
                                run=task["run"], k=9.0 if task["method"] == "fbi" else None))
        return records

    def test_hand_built_stats(self):
        plan = tiny_plan()
        records = self._full_records(plan)  # runs {0.6, 0.8} per cell
        matrix = assemble_matrix(plan, records)
        assert matrix.under_mean["h_star"][0, 0] == pytest.approx(0.7)
        assert matrix.under_std["h_star"][0, 0] == pytest.approx(0.1)  # population

    def test_single_run_zero_std(self):
        plan = tiny_plan(runs_per_cell=1)
        records = self._full_records(plan, value=0.5)
        matrix = assemble_matrix(plan, records)
        assert np.all(matrix.under_std["h_star"] == 0.0)

    def test_constant_metric_mean(self):
        plan = tiny_plan()
        records = self._full_records(plan, value=0.42)
        matrix = assemble_matrix(plan, records)
        assert np.all(matrix.over_mean["fbi"] == pytest.approx(0.42))

    def test_incomplete_cell_error(self):
        plan = tiny_plan()
        records = self._full_records(plan)[:-2]
        with pytest.raises(IncompleteSweepError, match="missing"):
            assemble_matrix(plan, records)

    def test_grey_column(self):
        plan = tiny_plan()
        matrix = assemble_matrix(plan, self._full_records(plan))
        grey = matrix.grey_column("h_star", "underg")
        assert grey.shape == (1,)
        assert grey[0] == pytest.approx(0.1)


class TestKxiTrend:
    def test_arithmetic(self):
        plan = tiny_plan()
        records = []
        for task in plan.tasks():
            xi = task["hyper"].get("xi")
            # make xi=0 win at unbalance 0.5 and xi=2 at 0.9
            good = (xi == 0.0 and task["unbalance"] == 0.5) or (
                xi == 2.0 and task["unbalance"] == 0.9
            )
            score = 0.9 if good or task["method"] == "h_star" else 0.5
            records.append(_rec(task["method"], task["hyper"], score, score,
                                theta=task["theta_y"], unb=task["unbalance"],
                                run=task["run"],
                                k=4.0 if task["method"] == "fbi" else None))
        rows = kxi_trend(plan, records)
        by_unb = {r["unbalance"]: r for r in rows}
        assert by_unb[0.5]["k_pow_xi"] == pytest.approx(1.0)  # xi=0 -> K^0
        assert by_unb[0.9]["k_pow_xi"] == pytest.approx(16.0)  # 4^2

    def test_half_exponent(self):
        plan = tiny_plan(methods=(MethodPlan("fbi", {"xi": (0.5,)}),),
                         unbalance_grid=(0.8,), runs_per_cell=1)
        records = [_rec("fbi", {"xi": 0.5}, 0.9, 0.9, theta=1.0, unb=0.8, k=4.0)]
        rows = kxi_trend(plan, records)
        assert rows[0]["k_pow_xi"] == pytest.approx(2.0)  # 4^0.5

    def test_no_fbi_records(self):
        plan = tiny_plan(methods=(MethodPlan("h_star"),))
        assert kxi_trend(plan, []) == []


class TestRunSweepEndToEnd:
    def test_outputs_and_determinism(self, tmp_path):
        plan = tiny_plan()
        m1 = run_sweep(plan, tmp_path / "a", workers=1)
        run_sweep(plan, tmp_path / "b", workers=1)
        for name in ("matrix_h_star_underg_mean.csv", "matrix_fbi_overg_std.csv",
                     "kxi_trend.csv", "selected_hypers.csv", "runs.jsonl"):
            a = (tmp_path / "a" / name).read_bytes()
            b = (tmp_path / "b" / name).read_bytes()
            assert a == b, name
        assert m1.under_mean["h_star"].shape == (1, 2)

    def test_refusal_and_resume(self, tmp_path):
        plan = tiny_plan()
        out = tmp_path / "out"
        run_sweep(plan, out, workers=1)
        from unbalance_lab.sweep import SweepOutputError

        with pytest.raises(SweepOutputError, match="resume"):
            run_sweep(plan, out, workers=1)
        # truncate records to simulate an interrupted run, then resume
        lines = (out / "runs.jsonl").read_text().strip().splitlines()
        (out / "runs.jsonl").write_text("\n".join(lines[: len(lines) // 2]) + "\n")
        run_sweep(plan, out, workers=1, resume=True)
        clean = run_sweep(plan, tmp_path / "clean", workers=1)
        resumed = (out / "matrix_fbi_underg_mean.csv").read_bytes()
        fresh = (tmp_path / "clean" / "matrix_fbi_underg_mean.csv").read_bytes()
        assert resumed == fresh

    def test_resume_plan_mismatch(self, tmp_path):
        plan = tiny_plan()
        out = tmp_path / "out"
        run_sweep(plan, out, workers=1)
        other = tiny_plan(base_seed=6)
        from unbalance_lab.sweep import SweepOutputError

        with pytest.raises(SweepOutputError, match="differs"):
            run_sweep(other, out, workers=1, resume=True)
