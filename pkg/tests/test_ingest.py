import pytest

from didni.exceptions import ValidationError
from didni.ingest import (
    ColumnMapping,
    GridSettings,
    ingest_csv,
    parse_scenario_file,
)


def write_csv(tmp_path, rows, header="unit,time,outcome,treated"):
    path = tmp_path / "panel.csv"
    path.write_text("\n".join([header, *rows]) + "\n")
    return path


WELL_FORMED = [
    "a,1,0.1,1", "a,2,0.3,1", "a,3,0.2,1", "a,4,0.9,1",
    "b,1,0.0,0", "b,2,0.1,0", "b,3,0.1,0", "b,4,0.2,0",
]


class TestIngestCsv:
    def test_happy_path(self, tmp_path):
        path = write_csv(tmp_path, WELL_FORMED)
        result = ingest_csv(path, ColumnMapping(), t0=3)
        assert result.data.t_max == 4
        assert result.data.t0 == 3
        assert result.data.n_units == 2
        assert result.time_map == {"1": 1, "2": 2, "3": 3, "4": 4}

    def test_calendar_times_mapped_to_indices(self, tmp_path):
        rows = []
        for unit, treated in (("x", 1), ("y", 0)):
            for year in range(2005, 2012):
                rows.append(f"{unit},{year},0.5,{treated}")
        path = write_csv(tmp_path, rows)
        result = ingest_csv(path, ColumnMapping(), t0=2009)
        assert result.data.t_max == 7
        assert result.data.t0 == 5  # 2009 is the 5th observed year
        assert result.time_map["2005"] == 1
        assert result.time_map["2011"] == 7
        assert len(result.mapping_rows()) == 7

    def test_duplicate_cell_names_row(self, tmp_path):
        rows = list(WELL_FORMED) + ["a,4,0.5,1"]
        path = write_csv(tmp_path, rows)
        with pytest.raises(ValidationError, match="row") as err:
            ingest_csv(path, ColumnMapping(), t0=3)
        assert "a" in str(err.value)

    def test_missing_columns_listed(self, tmp_path):
        path = write_csv(tmp_path, ["a,1,0.1", "b,1,0.2"], header="unit,time,outcome")
        with pytest.raises(ValidationError, match="missing columns.*treated"):
            ingest_csv(path, ColumnMapping(), t0=1)

    def test_non_numeric_outcome_names_rows(self, tmp_path):
        rows = list(WELL_FORMED)
        rows[2] = "a,3,not_a_number,1"
        path = write_csv(tmp_path, rows)
        with pytest.raises(ValidationError, match="numeric.*rows \\[4\\]"):
            ingest_csv(path, ColumnMapping(), t0=3)

    def test_treated_must_be_boolean(self, tmp_path):
        rows = list(WELL_FORMED)
        rows[0] = "a,1,0.1,maybe"
        path = write_csv(tmp_path, rows)
        with pytest.raises(ValidationError, match="boolean"):
            ingest_csv(path, ColumnMapping(), t0=3)

    def test_treated_flip_within_unit(self, tmp_path):
        rows = list(WELL_FORMED)
        rows[3] = "a,4,0.9,0"
        path = write_csv(tmp_path, rows)
        with pytest.raises(ValidationError, match="constant per unit"):
            ingest_csv(path, ColumnMapping(), t0=3)

    def test_unbalanced_panel_rejected(self, tmp_path):
        path = write_csv(tmp_path, WELL_FORMED[:-1])
        with pytest.raises(ValidationError, match="missing cells"):
            ingest_csv(path, ColumnMapping(), t0=3)

    def test_t0_must_be_observed(self, tmp_path):
        path = write_csv(tmp_path, WELL_FORMED)
        with pytest.raises(ValidationError, match="not an observed time"):
            ingest_csv(path, ColumnMapping(), t0=7)

    def test_cluster_and_subgroup_columns(self, tmp_path):
        rows = [
            "a,1,0.1,1,c1,0", "a,2,0.3,1,c1,0",
            "b,1,0.0,0,c2,1", "b,2,0.1,0,c2,1",
            "c,1,0.0,0,c2,0", "c,2,0.1,0,c2,0",
        ]
        path = write_csv(tmp_path, rows,
                         header="unit,time,outcome,treated,state,placebo")
        result = ingest_csv(
            path, ColumnMapping(cluster="state", subgroup="placebo"), t0=2
        )
        assert result.data.cluster_ids is not None
        assert result.data.subgroup.sum() == 2

    def test_missing_file(self):
        with pytest.raises(ValidationError, match="not found"):
            ingest_csv("/nonexistent/panel.csv", ColumnMapping(), t0=1)


SCENARIO_FILE = """
# example
trials = 40
seed = 9
alpha = 0.1
delta = effect
models = none linear

[scenario]
n_treated = 4
n_comparison = 8
n_pre = 5
n_post = 3
violation = linear
violation_slope = 0.1
effect_sd = 0.5

[scenario]
n_treated = 3
n_comparison = 6
n_pre = 4
n_post = 4
"""


class TestScenarioFile:
    def test_parse(self, tmp_path):
        path = tmp_path / "grid.cfg"
        path.write_text(SCENARIO_FILE)
        settings, scenarios = parse_scenario_file(path)
        assert settings == GridSettings(trials=40, seed=9, alpha=0.1, delta=None,
                                        models=("none", "linear"),
                                        ri_replications=199)
        assert len(scenarios) == 2
        assert scenarios[0].violation == "linear"
        assert scenarios[0].trials == 40
        assert scenarios[1].effect_sd == 1.0

    def test_seeds_are_content_derived(self, tmp_path):
        path_a = tmp_path / "a.cfg"
        path_a.write_text(SCENARIO_FILE)
        reversed_blocks = SCENARIO_FILE.split("[scenario]")
        path_b = tmp_path / "b.cfg"
        path_b.write_text(
            reversed_blocks[0]
            + "[scenario]"
            + reversed_blocks[2]
            + "[scenario]"
            + reversed_blocks[1]
        )
        _, forward = parse_scenario_file(path_a)
        _, backward = parse_scenario_file(path_b)
        assert {c.seed for c in forward} == {c.seed for c in backward}

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("trials = 10\nwombats = 3\n[scenario]\nn_treated = 1\n")
        with pytest.raises(ValidationError, match="wombats"):
            parse_scenario_file(path)

    def test_missing_required_field(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("[scenario]\nn_treated = 3\nn_comparison = 5\nn_pre = 4\n")
        with pytest.raises(ValidationError, match="n_post"):
            parse_scenario_file(path)

    def test_bad_section(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("[grid]\ntrials = 2\n")
        with pytest.raises(ValidationError, match="unknown section"):
            parse_scenario_file(path)

    def test_no_blocks(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("trials = 2\n")
        with pytest.raises(ValidationError, match="no \\[scenario\\]"):
            parse_scenario_file(path)

    def test_repo_example_parses(self):
        from pathlib import Path

        example = Path(__file__).resolve().parents[1] / "scenarios" / "example.cfg"
        settings, scenarios = parse_scenario_file(example)
        assert len(scenarios) == 3
        assert settings.models == ("none", "linear", "quadratic", "cubic")
