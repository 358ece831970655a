import json
import os

import numpy as np
import pytest

from threatmesh.attck.layers import (
    DATA_DIR,
    Gradient,
    Layer,
    OverlapPalette,
    TechniqueEntry,
    VersionInfo,
    apply_gradient,
    build_layer,
    gradient_color,
    list_fixtures,
    load_fixture,
    overlap,
    parse_layer,
    serialize_layer,
    validate_layer,
)
from threatmesh.errors import DomainMismatch, LayerSyntaxError, SchemaError

TECHNIQUE_POOL = ["T1059", "T1059.001", "T1105", "T1566", "T1566.001", "T1003", "T1021.002", "T1190"]
TACTIC_POOL = ["", "execution", "command-and-control", "initial-access", "credential-access"]


def _fixture_pairs(name: str) -> set[tuple[str, str]]:
    with open(os.path.join(DATA_DIR, f"{name}.json")) as f:
        raw = json.load(f)
    return {(t["techniqueID"], t.get("tactic", "")) for t in raw["techniques"]}


def _random_layer(rng: np.random.Generator, name: str) -> Layer:
    count = int(rng.integers(0, 8))
    keys = set()
    while len(keys) < count:
        keys.add((TECHNIQUE_POOL[rng.integers(len(TECHNIQUE_POOL))], TACTIC_POOL[rng.integers(len(TACTIC_POOL))]))
    entries = tuple(
        TechniqueEntry(t, tac, score=None if rng.random() < 0.2 else int(rng.integers(0, 10)))
        for t, tac in sorted(keys)
    )
    return Layer(name=name, techniques=entries)


def _brute_force_both(a: Layer, b: Layer) -> set[tuple[str, str]]:
    both = set()
    for ka in a.keys():
        for kb in b.keys():
            if ka[0] == kb[0] and (ka[1] == kb[1] or not ka[1] or not kb[1]):
                both.add(ka)
                both.add(kb)
    return both


def test_parse_minimal_layer():
    layer = parse_layer('{"name":"L","domain":"enterprise-attack","techniques":[]}')
    assert layer.name == "L"
    assert layer.techniques == ()
    assert validate_layer(layer) == []


@pytest.mark.parametrize("text, error", [
    ('{"name": "X", "techniques": [{"techniqueID": "BAD"}]}', SchemaError),
    ('{"techniques": []}', SchemaError),
    ('{"name": "X"}', SchemaError),
    ('{"name": "X", "techniques": [', LayerSyntaxError),
    ('[1, 2]', SchemaError),
    ('{"name": "X", "techniques": [{"techniqueID": "T1105", "tactic": "execution"},'
     ' {"techniqueID": "T1105", "tactic": "execution"}]}', SchemaError),
    ('{"name": "X", "techniques": [{"techniqueID": "T1105", "score": 1.5}]}', SchemaError),
    ('{"name": "X", "techniques": [], "versions": "4.5"}', SchemaError),
    ('{"name": "X", "techniques": [], "versions": ["4.5"]}', SchemaError),
    ('{"name": "X", "techniques": [{"techniqueID": "T1105", "enabled": "false"}]}', SchemaError),
    ('{"name": "X", "techniques": [{"techniqueID": "T1105", "enabled": 0}]}', SchemaError),
])
def test_parse_rejects_malformed_layers(text, error):
    with pytest.raises(error):
        parse_layer(text)


def test_error_exit_codes():
    assert LayerSyntaxError("x").exit_code == 10
    assert SchemaError("x").exit_code == 11
    assert DomainMismatch("x").exit_code == 12


@pytest.mark.parametrize("name", list_fixtures())
def test_fixture_round_trip(name):
    """parse(serialize(parse(f))) == parse(f), and the canonical form is a fixed point."""
    layer = load_fixture(name)
    assert validate_layer(layer) == []
    text = serialize_layer(layer)
    assert parse_layer(text) == layer
    assert serialize_layer(parse_layer(text)) == text
    assert layer.keys() == _fixture_pairs(name)


def test_wicked_panda_fixture():
    layer = load_fixture("wicked_panda_G0096")
    assert "G0096" in layer.name
    assert layer.domain == "enterprise-attack"
    assert len(layer.techniques) == 57
    assert layer.entry("T1003.001", "credential-access").comment == "LSASS Memory"


def test_unknown_fields_survive_round_trip():
    text = json.dumps({
        "name": "X",
        "techniques": [{"techniqueID": "T1105", "tactic": "command-and-control", "showSubtechniques": True}],
        "layout": {"layout": "side"},
        "hideDisabled": False,
    })
    again = json.loads(serialize_layer(parse_layer(text)))
    assert again["layout"] == {"layout": "side"}
    assert again["hideDisabled"] is False
    assert again["techniques"][0]["showSubtechniques"] is True


def test_serialization_is_canonical():
    a = Layer(name="A", techniques=(TechniqueEntry("T1566", "initial-access"), TechniqueEntry("T1059", "execution")))
    b = Layer(name="A", techniques=(TechniqueEntry("T1059", "execution"), TechniqueEntry("T1566", "initial-access")))
    text = serialize_layer(a)
    assert text == serialize_layer(b)
    assert "\n" not in text and ", " not in text
    assert text.index("T1059") < text.index("T1566")
    assert serialize_layer(Layer(name="E")) == serialize_layer(parse_layer(serialize_layer(Layer(name="E"))))


def test_uppercase_colors_are_lowercased():
    layer = parse_layer('{"name": "X", "techniques": [{"techniqueID": "T1105", "color": "#AABBCC"}]}')
    assert layer.techniques[0].color == "#aabbcc"


def test_validate_flags_duplicate_entries():
    entry = TechniqueEntry("T1105", "command-and-control")
    diagnostics = validate_layer(Layer(name="X", techniques=(entry, entry)))
    assert len(diagnostics) == 1
    assert diagnostics[0].severity == "error"
    assert diagnostics[0].index == 1


def test_validate_flags_bad_color():
    layer = parse_layer('{"name": "X", "techniques": [{"techniqueID": "T1105", "color": "#GGGGGG"}]}')
    diagnostics = validate_layer(layer)
    assert len(diagnostics) == 1
    assert "#GGGGGG" in diagnostics[0].message


def test_overlap_small_example():
    a = Layer(name="a", techniques=(TechniqueEntry("T1059", score=2), TechniqueEntry("T1105", score=3)))
    b = Layer(name="b", techniques=(TechniqueEntry("T1105", score=4), TechniqueEntry("T1566")))
    result = overlap(a, b)
    palette = OverlapPalette()
    colors = {e.technique_id: e.color for e in result.techniques}
    assert colors == {"T1059": palette.only_a, "T1105": palette.both, "T1566": palette.only_b}
    assert result.entry("T1105").score == 7
    assert result.entry("T1059").score == 2
    assert result.entry("T1566").score is None
    assert result.name == "a ∩ b"
    assert [item.color for item in result.legend] == [palette.only_a, palette.only_b, palette.both]


def test_overlap_with_empty_layer():
    b = load_fixture("fox_kitten_G0117")
    result = overlap(Layer(name="empty"), b)
    assert len(result.techniques) == len(b.techniques)
    assert {e.color for e in result.techniques} == {OverlapPalette().only_b}


def test_overlap_tactic_less_entry_matches_any_tactic():
    a = Layer(name="a", techniques=(TechniqueEntry("T1059", score=1),))
    b = Layer(name="b", techniques=(TechniqueEntry("T1059", "execution", score=2),))
    result = overlap(a, b)
    assert {e.key: e.color for e in result.techniques} == {("T1059", ""): "#00ff00", ("T1059", "execution"): "#00ff00"}
    assert all(e.score == 3 for e in result.techniques)


def test_overlap_rejects_domain_mismatch():
    with pytest.raises(DomainMismatch):
        overlap(Layer(name="a"), Layer(name="b", domain="mobile-attack"))


def test_overlap_rejects_bad_palette():
    with pytest.raises(ValueError):
        overlap(Layer(name="a"), Layer(name="b"), OverlapPalette("#ff0000", "#ff0000", "#00ff00"))


def test_fixture_overlap_matches_brute_force():
    a, b = load_fixture("wicked_panda_G0096"), load_fixture("fox_kitten_G0117")
    result = overlap(a, b)
    green = {e.key for e in result.techniques if e.color == OverlapPalette().both}
    oracle = _fixture_pairs("wicked_panda_G0096") & _fixture_pairs("fox_kitten_G0117")
    assert green == oracle
    assert oracle
    assert result.keys() == a.keys() | b.keys()


def test_overlap_properties_on_random_layers():
    """Green set equals the brute-force intersection; overlap is symmetric up to palette swap."""
    rng = np.random.default_rng(7)
    palette = OverlapPalette()
    for case in range(1000):
        a, b = _random_layer(rng, f"a{case}"), _random_layer(rng, f"b{case}")
        forward = overlap(a, b, palette)
        backward = overlap(b, a, palette.swapped())

        assert forward.keys() == a.keys() | b.keys()
        assert len(forward.techniques) == len(a.keys() | b.keys())
        green = {e.key for e in forward.techniques if e.color == palette.both}
        assert green == _brute_force_both(a, b), case
        assert {e.key: (e.color, e.score) for e in forward.techniques} == \
               {e.key: (e.color, e.score) for e in backward.techniques}
        assert validate_layer(forward) == []


def test_gradient_endpoints():
    gradient = Gradient()
    assert gradient_color(0, gradient) == "#ffffff"
    assert gradient_color(100, gradient) == "#66b1ff"
    assert gradient_color(1000, gradient) == "#66b1ff"


def test_apply_gradient_keeps_unscored_colors():
    layer = Layer(name="g", techniques=(TechniqueEntry("T1059", score=100), TechniqueEntry("T1105", color="#123456")))
    colored = apply_gradient(layer)
    assert colored.entry("T1059").color == "#66b1ff"
    assert colored.entry("T1105").color == "#123456"
    with pytest.raises(ValueError):
        apply_gradient(layer, Gradient(colors=("#ffffff",)))


def test_build_layer_scores_sightings():
    sightings = [("T1059", "execution")] * 3 + [("T1105", "command-and-control")]
    layer = build_layer("observed", sightings)
    assert layer.entry("T1059", "execution").score == 3
    assert layer.entry("T1105", "command-and-control").score == 1
    assert layer.entry("T1059", "execution").color == "#66b1ff"
    assert validate_layer(layer) == []
    with pytest.raises(SchemaError):
        build_layer("bad", [("1059", "execution")])


def test_enabled_flag_is_read_as_given():
    layer = parse_layer('{"name": "X", "techniques": [{"techniqueID": "T1105", "enabled": false},'
                        ' {"techniqueID": "T1059"}], "versions": null}')
    assert {e.technique_id: e.enabled for e in layer.techniques} == {"T1105": False, "T1059": True}
    assert layer.version_info == VersionInfo()
