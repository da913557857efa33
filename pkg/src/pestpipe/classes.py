"""Training class schemes: species integration, cross-crop composition, and
the production naming convention.

A scheme is an ordered rule list; the first rule matching a record's
{species, portion, crop} wins, with an optional identity fallback that names
classes "Species (portion_crop)". Integration rules may only merge species
that share a taxonomy integration group.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import seeds
from .catalog import ImageRecord, Taxonomy

BASELINE = "baseline"
INTEGRATION = "integration"
CROSS_CROP_HEALTHY = "cross_crop_healthy"
CROSS_CROP_FULL = "cross_crop_full"
COMBINED = "combined"
SCENARIOS = (BASELINE, INTEGRATION, CROSS_CROP_HEALTHY, CROSS_CROP_FULL, COMBINED)


class SchemeError(Exception):
    pass


def identity_class_name(pest_label: str, portion: str, crop: str) -> str:
    portion_name = seeds.PORTION_DISPLAY[portion]
    label = pest_label[0].upper() + pest_label[1:]
    return f"{label} ({portion_name}_{crop})"


@dataclass(frozen=True)
class SchemeRule:
    class_name: str
    species: Optional[frozenset[str]] = None   # None matches any label
    portions: Optional[frozenset[str]] = None  # displayed portions (leaf/fruit/flower)
    crops: Optional[frozenset[str]] = None

    def matches(self, pest_label: str, portion: str, crop: str) -> bool:
        if self.species is not None and pest_label not in self.species:
            return False
        if self.portions is not None and seeds.PORTION_DISPLAY[portion] not in self.portions:
            return False
        if self.crops is not None and crop not in self.crops:
            return False
        return True

    def to_json(self) -> dict:
        return {
            "class_name": self.class_name,
            "species": sorted(self.species) if self.species is not None else None,
            "portions": sorted(self.portions) if self.portions is not None else None,
            "crops": sorted(self.crops) if self.crops is not None else None,
        }


@dataclass
class ClassScheme:
    rules: list[SchemeRule]
    identity_fallback: bool = True

    def class_of(self, pest_label: str, portion: str, crop: str) -> str:
        for rule in self.rules:
            if rule.matches(pest_label, portion, crop):
                return rule.class_name
        if self.identity_fallback:
            return identity_class_name(pest_label, portion, crop)
        raise SchemeError(f"uncovered triple: ({pest_label}, {portion}, {crop})")

    def class_of_record(self, record: ImageRecord) -> str:
        return self.class_of(record.pest_label, record.portion, record.crop)

    def class_names(self) -> list[str]:
        return [r.class_name for r in self.rules]

    def save(self, path: Path) -> None:
        doc = {"identity_fallback": self.identity_fallback,
               "rules": [r.to_json() for r in self.rules]}
        Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "ClassScheme":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        rules = [SchemeRule(
            class_name=r["class_name"],
            species=frozenset(r["species"]) if r["species"] is not None else None,
            portions=frozenset(r["portions"]) if r["portions"] is not None else None,
            crops=frozenset(r["crops"]) if r["crops"] is not None else None,
        ) for r in doc["rules"]]
        return cls(rules=rules, identity_fallback=doc["identity_fallback"])


@dataclass
class ScenarioConfig:
    scenario: str
    target_crop: str
    integrate_groups: Optional[set[str]] = None  # None: every multi-species group
    donor_crops: set[str] = field(default_factory=set)
    donor_classes: set[str] = field(default_factory=set)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario: {self.scenario}")
        if self.target_crop not in seeds.CROPS:
            raise ValueError(f"unknown crop: {self.target_crop}")
        cross = self.scenario in (CROSS_CROP_HEALTHY, CROSS_CROP_FULL, COMBINED)
        if not cross and (self.donor_crops or self.donor_classes):
            raise ValueError("donor fields only apply to cross-crop scenarios")

    @property
    def integrates(self) -> bool:
        return self.scenario in (INTEGRATION, COMBINED)

    @property
    def crosses_crops(self) -> bool:
        return self.scenario in (CROSS_CROP_HEALTHY, CROSS_CROP_FULL, COMBINED)


def _check_rules(rules: list[SchemeRule], taxonomy: Taxonomy) -> None:
    for rule in rules:
        if rule.species is None:
            continue
        groups = {taxonomy.group_of(s) for s in rule.species if s != seeds.HEALTHY}
        groups.discard(None)
        if len(groups) > 1:
            raise SchemeError(
                f"rule '{rule.class_name}' merges species across integration "
                f"groups: {sorted(groups)}")
    # overlap check: a later rule fully shadowed by earlier ones is dead
    for i, rule in enumerate(rules):
        earlier = rules[:i]
        if rule.species is None:
            continue
        shadowed = all(
            any(e.matches(s, p, c) for e in earlier)
            for s in rule.species
            for p in seeds.PORTIONS
            for c in (rule.crops or seeds.CROPS)
            if rule.matches(s, p, c))
        if shadowed and earlier:
            warnings.warn(f"rule '{rule.class_name}' is fully shadowed by "
                          "earlier rules", stacklevel=3)


def build_class_scheme(taxonomy: Taxonomy, scenario: ScenarioConfig) -> ClassScheme:
    """Build the scheme a scenario calls for.

    Baseline and cross-crop-only scenarios keep identity classes; integration
    scenarios add one rule per integrated group, named after the group.
    """
    rules: list[SchemeRule] = []
    if scenario.integrates:
        for group, members in taxonomy.integration_groups.items():
            if scenario.integrate_groups is not None and group not in scenario.integrate_groups:
                continue
            if len(members) < 2:
                continue
            rules.append(SchemeRule(class_name=group, species=frozenset(members),
                                    crops=frozenset({scenario.target_crop})))
    if scenario.integrate_groups:
        missing = scenario.integrate_groups - set(taxonomy.integration_groups)
        if missing:
            raise SchemeError(f"unknown integration groups: {sorted(missing)}")
    _check_rules(rules, taxonomy)
    return ClassScheme(rules=rules, identity_fallback=True)


def main_scheme() -> ClassScheme:
    """The production 25-class scheme (18 integrated pest classes + healthy)."""
    from .catalog import seeded_taxonomy
    rules = []
    taxonomy_groups = seeded_taxonomy().integration_groups
    for _cid, name, group, portion_kind, crop in seeds.MAIN_CLASSES:
        species = frozenset({seeds.HEALTHY}) if group == seeds.HEALTHY \
            else frozenset(taxonomy_groups[group])
        portions = frozenset({portion_kind}) if portion_kind else None
        crops = frozenset({crop}) if crop else None
        rules.append(SchemeRule(class_name=name, species=species,
                                portions=portions, crops=crops))
    return ClassScheme(rules=rules, identity_fallback=False)


def apply_scheme(records: list[ImageRecord], scheme: ClassScheme) -> dict[str, str]:
    """Label every record; an uncovered triple raises with the triple named."""
    return {r.record_id: scheme.class_of_record(r) for r in records}


def class_counts(labels: dict[str, str]) -> dict[str, int]:
    out: dict[str, int] = {}
    for cls in labels.values():
        out[cls] = out.get(cls, 0) + 1
    return out


def compose_cross_crop(target_records: list[ImageRecord],
                       donor_records: list[ImageRecord],
                       scenario: ScenarioConfig,
                       scheme: ClassScheme) -> dict[str, str]:
    """Build a training label map: target records plus other-crop donors.

    A donor is mapped by its species and portion with the target crop
    substituted, so it joins the class its pest would have on the target.
    cross_crop_healthy admits donors only into the healthy class;
    cross_crop_full and combined admit the classes named in the scenario's
    donor_classes. Donors whose class is absent from the target's data are
    skipped with a warning.
    """
    if not scenario.crosses_crops:
        raise ValueError(f"scenario {scenario.scenario} adds no donors")
    labels = apply_scheme(target_records, scheme)
    target_classes = set(labels.values())

    if scenario.scenario == CROSS_CROP_HEALTHY:
        admitted = target_classes & {
            scheme.class_of(seeds.HEALTHY, p, scenario.target_crop)
            for p in seeds.PORTIONS}
    else:
        admitted = set(scenario.donor_classes)

    skipped = 0
    for r in donor_records:
        if r.crop == scenario.target_crop:
            continue
        if scenario.donor_crops and r.crop not in scenario.donor_crops:
            continue
        cls = scheme.class_of(r.pest_label, r.portion, scenario.target_crop)
        if cls not in target_classes:
            skipped += 1
            continue
        if cls in admitted:
            labels[r.record_id] = cls
    if skipped:
        warnings.warn(f"{skipped} donor records map outside the target classes; "
                      "skipped", stacklevel=2)
    return labels
