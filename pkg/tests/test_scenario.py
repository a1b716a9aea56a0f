"""Scenario file validation: schema shape, cross-reference resolution,
and the bundled corpus."""

import copy

import pytest

from corpus import CORPUS, corpus_doc
from authprop.errors import InvalidScenario
from authprop.scenario import (
    SCHEMA_VERSION,
    load_scenario,
    parse_scenario,
    scenario_schema,
    validate_scenario,
)
from authprop.workflow import OnDeny, TemporalPolicy


def base_doc() -> dict:
    return copy.deepcopy(corpus_doc("due_diligence"))


class TestSchemaPass:
    def test_schema_declares_the_current_version(self):
        assert scenario_schema()["properties"]["version"]["const"] == SCHEMA_VERSION

    def test_corpus_is_valid(self):
        for name in CORPUS:
            assert validate_scenario(corpus_doc(name)) == [], name

    def test_non_object_rejected(self):
        diags = validate_scenario([1, 2, 3])
        assert diags and all(d.startswith("schema:") for d in diags)

    def test_missing_required_field(self):
        doc = base_doc()
        del doc["graph"]
        assert any("graph" in d for d in validate_scenario(doc))

    def test_wrong_version_rejected(self):
        doc = base_doc()
        doc["version"] = 99
        assert any("version" in d for d in validate_scenario(doc))

    def test_unknown_top_level_key_rejected(self):
        doc = base_doc()
        doc["surprise"] = True
        assert validate_scenario(doc)

    def test_bad_enum_value(self):
        doc = base_doc()
        doc["config"]["temporal_policy"] = "whenever"
        assert any("temporal_policy" in d for d in validate_scenario(doc))


class TestSemanticPass:
    def _diags(self, mutate):
        doc = base_doc()
        mutate(doc)
        return validate_scenario(doc)

    def test_unknown_tuple_resource(self):
        diags = self._diags(lambda d: d["tuples"][0]["relation"].__setitem__("resource", "ghost"))
        assert any("unknown resource 'ghost'" in x for x in diags)

    def test_duplicate_tuple_label(self):
        def mutate(d):
            d["tuples"][1]["label"] = d["tuples"][0]["label"]

        assert any("duplicate tuple label" in x for x in self._diags(mutate))

    def test_empty_validity_window(self):
        def mutate(d):
            d["tuples"][0]["valid_from"] = 5
            d["tuples"][0]["valid_until"] = 5

        assert any("empty validity window" in x for x in self._diags(mutate))

    def test_token_scope_unknown_resource(self):
        def mutate(d):
            d["tokens"][0]["scope"].append(["ghost", "read"])

        assert any("scope names unknown resource" in x for x in self._diags(mutate))

    def test_attenuation_parent_must_precede(self):
        def mutate(d):
            d["tokens"][1]["parent"] = "tok-future"

        assert any("not defined earlier" in x for x in self._diags(mutate))

    def test_unknown_agent_and_token_refs(self):
        def mutate(d):
            d["graph"]["vertices"][0]["agent"] = "ghost"
            d["graph"]["vertices"][1]["token"] = "tok-ghost"

        diags = self._diags(mutate)
        assert any("unknown agent" in x for x in diags)
        assert any("not in the delegation plan" in x for x in diags)

    def test_unknown_recipient(self):
        def mutate(d):
            for v in d["graph"]["vertices"]:
                if v["kind"] == "return":
                    v["recipient"] = "ghost"

        assert any("unknown recipient" in x for x in self._diags(mutate))

    def test_graph_cycle_reported(self):
        def mutate(d):
            d["graph"]["edges"].append(["v5-deliver", "v1-fin"])

        diags = self._diags(mutate)
        assert any("cycle" in x for x in diags)

    def test_event_targets_must_resolve(self):
        def mutate(d):
            d.setdefault("events", []).append(
                {"kind": "revoke_tuple", "target": "no-such-label", "at": 1}
            )

        assert any("unknown tuple label" in x for x in self._diags(mutate))

    def test_event_ticks_non_decreasing(self):
        def mutate(d):
            d["events"] = [
                {"kind": "revoke_tuple", "target": d["tuples"][0]["label"], "at": 5},
                {"kind": "revoke_tuple", "target": d["tuples"][1]["label"], "at": 2},
            ]

        assert any("non-decreasing" in x for x in self._diags(mutate))

    def test_fault_targets_must_resolve(self):
        def mutate(d):
            d["faults"] = [{"kind": "scope_widening_fallback", "vertex": "v-ghost"}]

        assert any("unknown vertex" in x for x in self._diags(mutate))


class TestLoadAndParse:
    def test_load_raises_with_all_diagnostics(self):
        doc = base_doc()
        doc["tuples"][0]["relation"]["resource"] = "ghost"
        doc["graph"]["vertices"][0]["agent"] = "nobody"
        with pytest.raises(InvalidScenario) as exc_info:
            load_scenario(doc)
        assert len(exc_info.value.diagnostics) == 2

    def test_load_from_missing_file(self, tmp_path):
        with pytest.raises(InvalidScenario):
            load_scenario(tmp_path / "nope.json")

    def test_load_from_unparseable_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(InvalidScenario):
            load_scenario(path)

    def test_parse_preserves_config_and_expectations(self):
        scenario = parse_scenario(base_doc())
        assert scenario.scenario_id == "due-diligence"
        assert scenario.temporal_policy is TemporalPolicy.ACCESS_TIME
        assert scenario.on_deny is OnDeny.SKIP_AND_MARK_PARTIAL
        assert scenario.expected is not None

    def test_policy_is_optional_in_the_file(self):
        scenario = parse_scenario(corpus_doc("revocation_race"))
        assert scenario.temporal_policy is None
