from __future__ import annotations

import pytest

from pestpipe.catalog import seeded_taxonomy
from pestpipe.classes import (CROSS_CROP_FULL, CROSS_CROP_HEALTHY, COMBINED,
                              BASELINE, INTEGRATION, ClassScheme, ScenarioConfig,
                              SchemeError, SchemeRule, apply_scheme,
                              build_class_scheme, class_counts,
                              compose_cross_crop, identity_class_name,
                              main_scheme)

from conftest import make_record

TAX = seeded_taxonomy()

# Training/test image counts for the cucumber and eggplant leaf datasets used
# in the scenario comparisons (scarce-class counts deliberately asymmetric).
CUCUMBER_TRAIN = {
    "broad mite": 1031, "Kanzawa spider mite": 1452,
    "twospotted spider mite": 3173, "tobacco whitefly": 5353,
    "cotton aphid": 2056, "melon thrips": 3332, "healthy": 17010,
}
CUCUMBER_TEST = {
    "broad mite": 823, "Kanzawa spider mite": 1141,
    "twospotted spider mite": 230, "tobacco whitefly": 1435,
    "cotton aphid": 222, "melon thrips": 319, "healthy": 1358,
}
EGGPLANT_TRAIN = {
    "Kanzawa spider mite": 1900, "twospotted spider mite": 1274,
    "cotton aphid": 2458, "green peach aphid": 4267,
}
EGGPLANT_TEST = {
    "Kanzawa spider mite": 379, "twospotted spider mite": 113,
    "cotton aphid": 208, "green peach aphid": 311,
}
# other-crop supplements for the full cross-crop scenario
DONOR_COUNTS = {
    "healthy": 34709,          # 51,719 - 17,010
    "melon thrips": 9354,      # 12,686 - 3,332
    "twospotted spider mite": 4681,  # 7,854 - 3,173
}


def _bulk(prefix: str, label: str, crop: str, n: int):
    return [make_record(f"{prefix}-{label[:6]}-{i:06d}", crop=crop,
                        pest_label=label, seconds_offset=i * 2)
            for i in range(n)]


def _cucumber_train_records():
    records = []
    for label, n in CUCUMBER_TRAIN.items():
        records.extend(_bulk("ctr", label, "cucumber", n))
    return records


def _donor_records():
    records = []
    records.extend(_bulk("don-t", "healthy", "tomato", 20000))
    records.extend(_bulk("don-s", "healthy", "strawberry", 14709))
    records.extend(_bulk("don-e", "melon thrips", "eggplant", 9354))
    records.extend(_bulk("don-m", "twospotted spider mite", "eggplant", 4681))
    return records


def _scheme(scenario: ScenarioConfig) -> ClassScheme:
    return build_class_scheme(TAX, scenario)


THRIPS_C = identity_class_name("melon thrips", "leaf_front", "cucumber")
TSM_C = identity_class_name("twospotted spider mite", "leaf_front", "cucumber")
HEALTHY_C = identity_class_name("healthy", "leaf_front", "cucumber")


def test_baseline_keeps_species_distinct():
    scheme = _scheme(ScenarioConfig(scenario=BASELINE, target_crop="cucumber"))
    ksm = scheme.class_of("Kanzawa spider mite", "leaf_front", "cucumber")
    tsm = scheme.class_of("twospotted spider mite", "leaf_front", "cucumber")
    assert ksm != tsm


def test_integration_cucumber_spider_mites():
    scheme = _scheme(ScenarioConfig(scenario=INTEGRATION, target_crop="cucumber",
                                    integrate_groups={"spider mite"}))
    assert scheme.class_of("Kanzawa spider mite", "leaf_front", "cucumber") == "spider mite"
    assert scheme.class_of("twospotted spider mite", "leaf_back", "cucumber") == "spider mite"
    # untouched species keep identity classes
    assert scheme.class_of("cotton aphid", "leaf_front", "cucumber") \
        == identity_class_name("cotton aphid", "leaf_front", "cucumber")


def test_integration_eggplant_aphids():
    scheme = _scheme(ScenarioConfig(scenario=INTEGRATION, target_crop="eggplant",
                                    integrate_groups={"spider mite", "aphid"}))
    assert scheme.class_of("cotton aphid", "leaf_front", "eggplant") == "aphid"
    assert scheme.class_of("green peach aphid", "leaf_front", "eggplant") == "aphid"


def test_cross_group_rule_fatal():
    rule = SchemeRule(class_name="mites", species=frozenset(
        {"broad mite", "Kanzawa spider mite"}))
    with pytest.raises(SchemeError, match="integration groups"):
        from pestpipe.classes import _check_rules
        _check_rules([rule], TAX)


def test_apply_scheme_spider_mite_merge_cucumber():
    scheme = _scheme(ScenarioConfig(scenario=INTEGRATION, target_crop="cucumber",
                                    integrate_groups={"spider mite"}))
    records = (_bulk("a", "Kanzawa spider mite", "cucumber", 1452)
               + _bulk("b", "twospotted spider mite", "cucumber", 3173))
    counts = class_counts(apply_scheme(records, scheme))
    assert counts["spider mite"] == 4625


def test_apply_scheme_eggplant_merges():
    scheme = _scheme(ScenarioConfig(scenario=INTEGRATION, target_crop="eggplant",
                                    integrate_groups={"spider mite", "aphid"}))
    records = []
    for label, n in EGGPLANT_TRAIN.items():
        records.extend(_bulk("e", label, "eggplant", n))
    counts = class_counts(apply_scheme(records, scheme))
    assert counts["spider mite"] == 3174
    assert counts["aphid"] == 6725


def test_apply_scheme_test_side_merges():
    cuc = _scheme(ScenarioConfig(scenario=INTEGRATION, target_crop="cucumber",
                                 integrate_groups={"spider mite"}))
    records = (_bulk("t1", "Kanzawa spider mite", "cucumber", CUCUMBER_TEST["Kanzawa spider mite"])
               + _bulk("t2", "twospotted spider mite", "cucumber", CUCUMBER_TEST["twospotted spider mite"]))
    assert class_counts(apply_scheme(records, cuc))["spider mite"] == 1371

    egg = _scheme(ScenarioConfig(scenario=INTEGRATION, target_crop="eggplant",
                                 integrate_groups={"spider mite", "aphid"}))
    records = []
    for label, n in EGGPLANT_TEST.items():
        records.extend(_bulk("te", label, "eggplant", n))
    counts = class_counts(apply_scheme(records, egg))
    assert counts["spider mite"] == 492
    assert counts["aphid"] == 519


def test_count_conservation():
    scheme = _scheme(ScenarioConfig(scenario=INTEGRATION, target_crop="cucumber",
                                    integrate_groups={"spider mite"}))
    records = _cucumber_train_records()
    labels = apply_scheme(records, scheme)
    assert sum(class_counts(labels).values()) == len(records)


def test_apply_scheme_idempotent():
    scheme = _scheme(ScenarioConfig(scenario=BASELINE, target_crop="cucumber"))
    records = _bulk("x", "melon thrips", "cucumber", 50)
    once = apply_scheme(records, scheme)
    assert apply_scheme(records, scheme) == once


def test_uncovered_triple_fatal():
    scheme = ClassScheme(rules=[SchemeRule(
        class_name="only-thrips", species=frozenset({"melon thrips"}))],
        identity_fallback=False)
    with pytest.raises(SchemeError, match="cotton aphid"):
        apply_scheme([make_record("r0", pest_label="cotton aphid")], scheme)


def test_cross_crop_healthy_only():
    scenario = ScenarioConfig(scenario=CROSS_CROP_HEALTHY, target_crop="cucumber",
                              donor_crops={"tomato", "strawberry", "eggplant"})
    scheme = _scheme(scenario)
    labels = compose_cross_crop(_cucumber_train_records(), _donor_records(),
                                scenario, scheme)
    counts = class_counts(labels)
    assert counts[HEALTHY_C] == 51719
    # pest donors are not admitted in the healthy-only scenario
    assert counts[THRIPS_C] == 3332
    assert counts[TSM_C] == 3173


def test_cross_crop_full():
    scenario = ScenarioConfig(
        scenario=CROSS_CROP_FULL, target_crop="cucumber",
        donor_crops={"tomato", "strawberry", "eggplant"},
        donor_classes={HEALTHY_C, THRIPS_C, TSM_C})
    scheme = _scheme(scenario)
    labels = compose_cross_crop(_cucumber_train_records(), _donor_records(),
                                scenario, scheme)
    counts = class_counts(labels)
    assert counts[THRIPS_C] == 12686
    assert counts[TSM_C] == 7854
    assert counts[HEALTHY_C] == 51719


def test_combined_scenario_spider_mite():
    scenario = ScenarioConfig(
        scenario=COMBINED, target_crop="cucumber",
        integrate_groups={"spider mite"},
        donor_crops={"tomato", "strawberry", "eggplant"},
        donor_classes={HEALTHY_C, THRIPS_C, "spider mite"})
    scheme = _scheme(scenario)
    labels = compose_cross_crop(_cucumber_train_records(), _donor_records(),
                                scenario, scheme)
    counts = class_counts(labels)
    assert counts["spider mite"] == 9306  # 1,452 + 7,854


def test_donor_outside_target_classes_skipped():
    scenario = ScenarioConfig(scenario=CROSS_CROP_FULL, target_crop="cucumber",
                              donor_classes={THRIPS_C})
    scheme = _scheme(scenario)
    target = _bulk("t", "melon thrips", "cucumber", 10)
    donors = _bulk("d", "hadda beetle", "eggplant", 5)
    with pytest.warns(UserWarning, match="skipped"):
        labels = compose_cross_crop(target, donors, scenario, scheme)
    assert len(labels) == 10


def test_test_set_invariant_under_composition():
    scenario = ScenarioConfig(scenario=CROSS_CROP_FULL, target_crop="cucumber",
                              donor_classes={THRIPS_C})
    scheme = _scheme(scenario)
    test_records = _bulk("test", "melon thrips", "cucumber", 100)
    before = apply_scheme(test_records, scheme)
    compose_cross_crop(_bulk("tr", "melon thrips", "cucumber", 10),
                       _bulk("d", "melon thrips", "eggplant", 50),
                       scenario, scheme)
    assert apply_scheme(test_records, scheme) == before


def test_main_scheme_covers_all_combinations():
    from pestpipe import seeds
    scheme = main_scheme()
    names = set()
    for pest, portion, crop in seeds.known_combinations():
        names.add(scheme.class_of(pest, portion, crop))
    assert names == {name for _, name, _, _, _ in seeds.MAIN_CLASSES}
    assert len(names) == 25


def test_main_scheme_naming_convention():
    scheme = main_scheme()
    assert scheme.class_of("tobacco whitefly", "leaf_front", "tomato") == "Whitefly"
    assert scheme.class_of("broad mite", "fruit", "strawberry") \
        == "Broad mite (fruit_strawberry)"
    assert scheme.class_of("healthy", "leaf_back", "eggplant") == "Healthy (leaf)"
    assert scheme.class_of("western flower thrips", "flower", "strawberry") \
        == "Thrips (flower_strawberry)"


def test_scenario_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(scenario="nope", target_crop="cucumber")
    with pytest.raises(ValueError):
        ScenarioConfig(scenario=BASELINE, target_crop="cucumber",
                       donor_crops={"tomato"})
