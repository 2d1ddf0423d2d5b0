import numpy as np
import pandas as pd
import pytest

from iscm.exceptions import (
    ConfigError,
    DuplicateRow,
    InputError,
    MissingCell,
    NonNumericValue,
    TooFewPrePeriods,
    UnknownUnit,
)
from iscm.panel import (
    PanelDataset,
    PanelSchema,
    PredictorSpec,
    RoleAssignment,
    assign_roles,
    canonical_schema,
    donor_pool,
    load_panel,
    predictor_matrices,
    save_panel,
    split_periods,
)

from conftest import build_panel, tiny_roles


def write_long_csv(path, units, periods, value_fn, extra_cols=None, skip=None, dup=None):
    rows = []
    for u in units:
        for t in periods:
            if skip and (u, t) == skip:
                continue
            row = {"country": u, "year": t, "gdp": value_fn(u, t)}
            for name, fn in (extra_cols or {}).items():
                row[name] = fn(u, t)
            rows.append(row)
            if dup and (u, t) == dup:
                rows.append(dict(row))
    pd.DataFrame(rows).to_csv(path, index=False)


BASIC = PanelSchema(unit="country", time="year", outcome="gdp", intervention_time=1990)


class TestLoadPanel:
    def test_reunification_layout(self, tmp_path):
        # 17 units x 44 periods, 1960-2003, cut after 1990
        units = [f"c{i}" for i in range(17)]
        periods = list(range(1960, 2004))
        rng = np.random.default_rng(0)
        vals = {(u, t): rng.normal() for u in units for t in periods}
        write_long_csv(tmp_path / "p.csv", units, periods, lambda u, t: vals[(u, t)])
        panel = load_panel(tmp_path / "p.csv", BASIC)
        assert panel.n_units == 17
        assert panel.n_periods == 44
        pre, post = split_periods(panel)
        assert len(pre) == 31 and len(post) == 13

    def test_minimal_grid(self, tmp_path):
        write_long_csv(tmp_path / "p.csv", ["a", "b", "c"], [1, 2, 3, 4], lambda u, t: 1.0)
        panel = load_panel(
            tmp_path / "p.csv",
            PanelSchema(unit="country", time="year", outcome="gdp", intervention_time=2),
        )
        assert panel.n_units == 3 and panel.n_periods == 4

    def test_missing_cell_names_gap(self, tmp_path):
        write_long_csv(
            tmp_path / "p.csv", ["a", "b"], [1, 2, 3], lambda u, t: 1.0, skip=("b", 2)
        )
        schema = PanelSchema(unit="country", time="year", outcome="gdp", intervention_time=2)
        with pytest.raises(MissingCell, match=r"'b'.*2"):
            load_panel(tmp_path / "p.csv", schema)

    def test_duplicate_row(self, tmp_path):
        write_long_csv(
            tmp_path / "p.csv", ["a", "b"], [1, 2, 3], lambda u, t: 1.0, dup=("a", 3)
        )
        schema = PanelSchema(unit="country", time="year", outcome="gdp", intervention_time=2)
        with pytest.raises(DuplicateRow, match=r"'a'.*3"):
            load_panel(tmp_path / "p.csv", schema)

    def test_non_numeric_cell(self, tmp_path):
        write_long_csv(
            tmp_path / "p.csv",
            ["a", "b"],
            [1, 2, 3],
            lambda u, t: "oops" if (u, t) == ("b", 3) else 1.0,
        )
        schema = PanelSchema(unit="country", time="year", outcome="gdp", intervention_time=2)
        with pytest.raises(NonNumericValue, match="oops"):
            load_panel(tmp_path / "p.csv", schema)

    def test_too_few_pre_periods(self, tmp_path):
        write_long_csv(tmp_path / "p.csv", ["a", "b"], [1, 2, 3], lambda u, t: 1.0)
        schema = PanelSchema(unit="country", time="year", outcome="gdp", intervention_time=1)
        with pytest.raises(TooFewPrePeriods):
            load_panel(tmp_path / "p.csv", schema)

    def test_no_post_periods(self, tmp_path):
        write_long_csv(tmp_path / "p.csv", ["a", "b"], [1, 2, 3], lambda u, t: 1.0)
        schema = PanelSchema(unit="country", time="year", outcome="gdp", intervention_time=3)
        with pytest.raises(InputError):
            load_panel(tmp_path / "p.csv", schema)

    def test_predictor_window_mean(self, tmp_path):
        write_long_csv(
            tmp_path / "p.csv",
            ["a", "b", "c"],
            [1, 2, 3, 4],
            lambda u, t: 0.0,
            extra_cols={"inv": lambda u, t: {"a": 10.0, "b": 20.0, "c": 30.0}[u] + t},
        )
        schema = PanelSchema(
            unit="country",
            time="year",
            outcome="gdp",
            intervention_time=3,
            predictors=(PredictorSpec(name="inv_mean", column="inv", window=(1, 3)),),
        )
        panel = load_panel(tmp_path / "p.csv", schema)
        assert panel.predictors["inv_mean"] == pytest.approx([12.0, 22.0, 32.0])

    def test_predictor_window_past_cut_rejected(self, tmp_path):
        write_long_csv(
            tmp_path / "p.csv",
            ["a", "b"],
            [1, 2, 3, 4],
            lambda u, t: 0.0,
            extra_cols={"inv": lambda u, t: 1.0},
        )
        schema = PanelSchema(
            unit="country",
            time="year",
            outcome="gdp",
            intervention_time=3,
            predictors=(PredictorSpec(name="x", column="inv", window=(2, 4)),),
        )
        with pytest.raises(ConfigError, match="past the"):
            load_panel(tmp_path / "p.csv", schema)

    def test_windowless_predictor_must_be_constant(self, tmp_path):
        write_long_csv(
            tmp_path / "p.csv",
            ["a", "b"],
            [1, 2, 3],
            lambda u, t: 0.0,
            extra_cols={"inv": lambda u, t: t},
        )
        schema = PanelSchema(
            unit="country",
            time="year",
            outcome="gdp",
            intervention_time=2,
            predictors=(PredictorSpec(name="x", column="inv", window=None),),
        )
        with pytest.raises(ConfigError, match="not constant"):
            load_panel(tmp_path / "p.csv", schema)


class TestRoundTrip:
    def test_save_and_reload_bit_for_bit(self, tmp_path):
        rng = np.random.default_rng(3)
        panel = build_panel(
            rng.normal(size=(4, 7)) * 1e4,
            intervention_time=5,
            predictors={
                "m1": rng.normal(size=4),
                "m2": rng.uniform(size=4) / 3.0,
            },
        )
        save_panel(panel, tmp_path / "p.csv")
        again = load_panel(tmp_path / "p.csv", canonical_schema(panel))
        assert again.units == panel.units
        assert again.periods == panel.periods
        assert (again.outcomes == panel.outcomes).all()
        for name in panel.predictor_names:
            assert (again.predictors[name] == panel.predictors[name]).all()


class TestSplitPeriods:
    def test_small_examples(self):
        panel = build_panel(np.zeros((3, 4)), intervention_time=3)
        pre, post = split_periods(panel)
        assert pre == [1, 2, 3] and post == [4]

        panel = build_panel(np.zeros((3, 10)), intervention_time=5)
        pre, post = split_periods(panel)
        assert len(pre) == 5 and len(post) == 5

    def test_partition_property(self):
        T = 9
        for cut_label in range(2, T):
            panel = build_panel(np.zeros((3, T)), intervention_time=cut_label)
            pre, post = split_periods(panel)
            assert len(pre) + len(post) == T
            assert pre + post == list(panel.periods)


class TestPredictorMatrices:
    def test_single_donor(self):
        panel = build_panel(np.arange(8.0).reshape(2, 4), intervention_time=2)
        X1, X0 = predictor_matrices(panel, "u0")
        assert X0.shape == (1, 1)

    def test_column_order_matches_donor_list(self):
        # every donor has a unique predictor value, so the mapping is checkable
        preds = {"p": np.array([0.0, 10.0, 20.0, 30.0, 40.0])}
        panel = build_panel(np.zeros((5, 4)), intervention_time=2, predictors=preds)
        donors = ["u3", "u1", "u4"]  # one pure control left out
        X1, X0 = predictor_matrices(panel, "u0", donors)
        assert X0.shape == (1, 3)
        assert list(X0[0]) == [30.0, 10.0, 40.0]

    def test_exhaustive_column_mapping(self):
        rng = np.random.default_rng(1)
        preds = {f"p{k}": rng.normal(size=6) for k in range(3)}
        panel = build_panel(rng.normal(size=(6, 5)), intervention_time=3, predictors=preds)
        donors = [u for u in panel.units if u != "u2"]
        X1, X0 = predictor_matrices(panel, "u2", donors)
        for j, d in enumerate(donors):
            expected = [preds[f"p{k}"][panel.unit_index(d)] for k in range(3)]
            assert list(X0[:, j]) == expected

    def test_unknown_unit(self):
        panel = build_panel(np.zeros((3, 4)), intervention_time=2)
        with pytest.raises(UnknownUnit):
            predictor_matrices(panel, "nope")
        with pytest.raises(UnknownUnit):
            predictor_matrices(panel, "u0", ["u1", "ghost"])


class TestRoles:
    def test_assign_roles_derives_pure_controls(self):
        panel = build_panel(np.zeros((6, 4)), intervention_time=2)
        roles = assign_roles(panel, "u0", ["u1"])
        assert roles.pure_controls == ("u2", "u3", "u4", "u5")
        assert roles.affected_units == ("u0", "u1")

    def test_overlapping_groups_rejected(self):
        with pytest.raises(InputError):
            RoleAssignment("a", ("a",), ("b", "c", "d"))

    def test_empty_pure_controls_rejected(self):
        with pytest.raises(InputError):
            RoleAssignment("a", ("b",), ())

    def test_small_pool_warns(self):
        with pytest.warns(UserWarning, match="pure control"):
            RoleAssignment("a", ("b",), ("c",))

    def test_unknown_unit_in_roles(self):
        panel = build_panel(np.zeros((4, 4)), intervention_time=2)
        with pytest.raises(UnknownUnit):
            assign_roles(panel, "u0", ["ghost"])

    def test_donor_pools(self):
        panel = build_panel(np.zeros((6, 4)), intervention_time=2)
        roles = assign_roles(panel, "u0", ["u1"])
        assert donor_pool(panel, roles, "u0") == ("u1", "u2", "u3", "u4", "u5")
        assert donor_pool(panel, roles, "u0", restricted=True) == ("u2", "u3", "u4", "u5")
        assert donor_pool(panel, roles, "u1", restricted=True) == ("u2", "u3", "u4", "u5")
        assert donor_pool(panel, roles, "u2", restricted=True) == ("u3", "u4", "u5")


class TestDatasetInvariants:
    def test_periods_must_increase(self):
        with pytest.raises(InputError):
            PanelDataset(
                units=("a", "b"),
                periods=(3, 2, 4),
                outcomes=np.zeros((2, 3)),
                intervention_time=3,
            )

    def test_outcomes_readonly(self):
        panel = build_panel(np.zeros((3, 4)), intervention_time=2)
        with pytest.raises(ValueError):
            panel.outcomes[0, 0] = 5.0

    def test_predictor_length_checked(self):
        with pytest.raises(InputError):
            build_panel(
                np.zeros((3, 4)), intervention_time=2, predictors={"p": np.zeros(2)}
            )

    def test_truncated_keeps_predictors(self):
        panel = build_panel(np.arange(12.0).reshape(3, 4), intervention_time=3)
        sub = panel.truncated(3, 2)
        assert sub.periods == (1, 2, 3)
        assert sub.intervention_time == 2
        assert (sub.predictors["pre_mean"] == panel.predictors["pre_mean"]).all()
