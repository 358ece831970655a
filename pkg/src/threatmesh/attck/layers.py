"""
ATT&CK Navigator layers: parsing, canonical serialization, validation and analytic combination.

Layers follow the Navigator layer-format 4.x field names (``techniqueID``, ``tactic``, ``score``,
``color``, ``comment``, ``enabled``, ``legendItems``, ``versions``). Fields the model does not know
are kept verbatim, at layer level and per technique, so nothing is lost on a round trip.
"""

import json
import os
import re
from collections import Counter
from typing import Iterable, NamedTuple, Optional

import numpy as np
from flax import struct

from threatmesh.errors import DomainMismatch, LayerSyntaxError, SchemaError

MODULE_DIR = os.path.dirname(os.path.abspath(__file__))
DATA_DIR = os.path.join(os.path.dirname(MODULE_DIR), "data")

TECHNIQUE_ID = re.compile(r"^T\d{4}(\.\d{3})?$")
TACTIC = re.compile(r"^[a-z]+(-[a-z]+)*$")
COLOR = re.compile(r"^#[0-9a-f]{6}$")
_ANY_HEX_COLOR = re.compile(r"^#[0-9a-fA-F]{6}$")

DEFAULT_DOMAIN = "enterprise-attack"
ERROR = "error"

_LAYER_FIELDS = ("name", "domain", "description", "versions", "techniques", "legendItems", "gradient")
_TECHNIQUE_FIELDS = ("techniqueID", "tactic", "score", "color", "comment", "enabled")


def canonical_dumps(value) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _extras(obj: dict, known: tuple) -> tuple:
    return tuple(sorted((k, canonical_dumps(v)) for k, v in obj.items() if k not in known))


class VersionInfo(NamedTuple):
    layer_format: str = "4.5"
    attack_version: str = "14"
    navigator_version: str = "4.9.1"


class LegendItem(NamedTuple):
    label: str
    color: str


class Gradient(NamedTuple):
    colors: tuple = ("#ffffff", "#66b1ff")
    min_value: float = 0
    max_value: float = 100


@struct.dataclass
class TechniqueEntry:
    technique_id: str
    # empty means every tactic of the technique
    tactic: str = ""
    score: Optional[int] = None
    color: Optional[str] = None
    comment: Optional[str] = None
    enabled: bool = True
    extra: tuple = ()

    @property
    def key(self) -> tuple[str, str]:
        return self.technique_id, self.tactic

    def to_json(self) -> dict:
        obj = {k: json.loads(v) for k, v in self.extra}
        obj.update({"techniqueID": self.technique_id, "enabled": self.enabled})
        if self.tactic:
            obj["tactic"] = self.tactic
        if self.score is not None:
            obj["score"] = self.score
        if self.color is not None:
            obj["color"] = self.color
        if self.comment is not None:
            obj["comment"] = self.comment
        return obj


@struct.dataclass
class Layer:
    name: str
    domain: str = DEFAULT_DOMAIN
    description: str = ""
    version_info: VersionInfo = VersionInfo()
    techniques: tuple = ()
    legend: tuple = ()
    gradient: Optional[Gradient] = None
    # unrecognized top-level fields as sorted (key, canonical JSON) pairs
    extra: tuple = ()

    def entry(self, technique_id: str, tactic: str = "") -> Optional[TechniqueEntry]:
        return next((e for e in self.techniques if e.key == (technique_id, tactic)), None)

    def keys(self) -> set[tuple[str, str]]:
        return {e.key for e in self.techniques}


class OverlapPalette(NamedTuple):
    only_a: str = "#ff0000"
    only_b: str = "#ffff00"
    both: str = "#00ff00"

    def swapped(self) -> "OverlapPalette":
        return OverlapPalette(self.only_b, self.only_a, self.both)

    def validate(self) -> None:
        for color in self:
            if not COLOR.match(color):
                raise ValueError(f"palette color {color!r} is not a lowercase #rrggbb color")
        if len(set(self)) != 3:
            raise ValueError(f"palette colors must be distinct, got {tuple(self)}")


class Diagnostic(NamedTuple):
    severity: str
    # index into Layer.techniques, None for layer-level findings
    index: Optional[int]
    message: str


def _sort_key(entry: TechniqueEntry) -> tuple[str, str]:
    return entry.technique_id, entry.tactic


def _parse_score(value, where: str) -> Optional[int]:
    if value is None or value == "":
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
        raise SchemaError(f"{where}: score must be an integer, got {value!r}")
    return int(value)


def _parse_color(value) -> Optional[str]:
    if value is None or value == "":
        return None
    if isinstance(value, str) and _ANY_HEX_COLOR.match(value):
        return value.lower()
    return value


def _parse_technique(obj, index: int) -> TechniqueEntry:
    where = f"techniques[{index}]"
    if not isinstance(obj, dict):
        raise SchemaError(f"{where} is not an object")
    technique_id = obj.get("techniqueID")
    if not isinstance(technique_id, str) or not TECHNIQUE_ID.match(technique_id):
        raise SchemaError(f"{where}: bad techniqueID {technique_id!r}")
    tactic = obj.get("tactic") or ""
    if not isinstance(tactic, str):
        raise SchemaError(f"{where}: tactic must be a string, got {tactic!r}")
    comment = obj.get("comment")
    enabled = obj.get("enabled", True)
    if not isinstance(enabled, bool):
        raise SchemaError(f"{where}: enabled must be true or false, got {enabled!r}")
    return TechniqueEntry(
        technique_id=technique_id,
        tactic=tactic,
        score=_parse_score(obj.get("score"), where),
        color=_parse_color(obj.get("color")),
        comment=comment if comment else None,
        enabled=enabled,
        extra=_extras(obj, _TECHNIQUE_FIELDS),
    )


def _parse_gradient(obj) -> Optional[Gradient]:
    if obj is None:
        return None
    try:
        return Gradient(tuple(_parse_color(c) for c in obj["colors"]), obj["minValue"], obj["maxValue"])
    except (KeyError, TypeError) as e:
        raise SchemaError(f"malformed gradient {obj!r}") from e


def parse_layer(json_text: str) -> Layer:
    """
    Parses a Navigator layer.

    Techniques are kept in canonical (technique_id, tactic) order. Empty ``score``, ``color`` and
    ``comment`` values read as absent; hex colors are lowercased.

    Raises:
        LayerSyntaxError: ``json_text`` is not JSON.
        SchemaError: ``name`` or ``techniques`` is missing, a techniqueID is malformed, a
            (technique_id, tactic) pair repeats or a field has the wrong JSON type.
    """
    try:
        obj = json.loads(json_text)
    except json.JSONDecodeError as e:
        raise LayerSyntaxError(f"layer is not valid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise SchemaError(f"layer must be a JSON object, got {type(obj).__name__}")
    if not isinstance(obj.get("name"), str):
        raise SchemaError("layer has no name")
    if not isinstance(obj.get("techniques"), list):
        raise SchemaError("layer has no techniques list")

    techniques = [_parse_technique(t, i) for i, t in enumerate(obj["techniques"])]
    duplicates = [key for key, count in Counter(e.key for e in techniques).items() if count > 1]
    if duplicates:
        raise SchemaError(f"duplicate (techniqueID, tactic) pairs: {sorted(duplicates)}")

    versions, defaults = obj.get("versions") or {}, VersionInfo()
    if not isinstance(versions, dict):
        raise SchemaError(f"versions must be an object, got {versions!r}")
    legend = obj.get("legendItems") or []
    try:
        legend = tuple(LegendItem(str(item["label"]), _parse_color(item["color"])) for item in legend)
    except (KeyError, TypeError) as e:
        raise SchemaError(f"malformed legendItems {obj.get('legendItems')!r}") from e
    return Layer(
        name=obj["name"],
        domain=obj.get("domain") or DEFAULT_DOMAIN,
        description=obj.get("description") or "",
        version_info=VersionInfo(
            layer_format=str(versions.get("layer", defaults.layer_format)),
            attack_version=str(versions.get("attack", defaults.attack_version)),
            navigator_version=str(versions.get("navigator", defaults.navigator_version)),
        ),
        techniques=tuple(sorted(techniques, key=_sort_key)),
        legend=legend,
        gradient=_parse_gradient(obj.get("gradient")),
        extra=_extras(obj, _LAYER_FIELDS),
    )


def layer_to_json(layer: Layer) -> dict:
    obj = {k: json.loads(v) for k, v in layer.extra}
    obj.update({
        "name": layer.name,
        "domain": layer.domain,
        "description": layer.description,
        "versions": {
            "layer": layer.version_info.layer_format,
            "attack": layer.version_info.attack_version,
            "navigator": layer.version_info.navigator_version,
        },
        "techniques": [e.to_json() for e in sorted(layer.techniques, key=_sort_key)],
        "legendItems": [{"label": item.label, "color": item.color} for item in layer.legend],
    })
    if layer.gradient is not None:
        obj["gradient"] = {
            "colors": list(layer.gradient.colors),
            "minValue": layer.gradient.min_value,
            "maxValue": layer.gradient.max_value,
        }
    return obj


def serialize_layer(layer: Layer) -> str:
    """Canonical one-line JSON: sorted keys, no insignificant whitespace, techniques in key order."""
    return canonical_dumps(layer_to_json(layer))


def validate_layer(layer: Layer) -> list[Diagnostic]:
    """Returns one diagnostic per violated invariant; an empty list means the layer is well formed."""
    diagnostics = []
    seen: dict[tuple[str, str], int] = {}
    for index, entry in enumerate(layer.techniques):
        if not TECHNIQUE_ID.match(entry.technique_id):
            diagnostics.append(Diagnostic(ERROR, index, f"techniqueID {entry.technique_id!r} is malformed"))
        if entry.tactic and not TACTIC.match(entry.tactic):
            diagnostics.append(Diagnostic(ERROR, index, f"tactic {entry.tactic!r} is not lowercase kebab-case"))
        if entry.color is not None and not COLOR.match(entry.color):
            diagnostics.append(Diagnostic(ERROR, index, f"color {entry.color!r} is not #rrggbb lowercase hex"))
        if entry.score is not None and (isinstance(entry.score, bool) or not isinstance(entry.score, int)):
            diagnostics.append(Diagnostic(ERROR, index, f"score {entry.score!r} is not an integer"))
        if entry.key in seen:
            diagnostics.append(Diagnostic(ERROR, index, f"{entry.key} repeats entry {seen[entry.key]}"))
        else:
            seen[entry.key] = index
    for item in layer.legend:
        if not isinstance(item.color, str) or not COLOR.match(item.color):
            diagnostics.append(Diagnostic(ERROR, None, f"legend color {item.color!r} of {item.label!r} is malformed"))
    return diagnostics


def _matches(entry: TechniqueEntry, other: dict) -> list[TechniqueEntry]:
    """Entries of ``other`` for the same technique whose tactic equals ``entry``'s or either is empty."""
    if entry.key in other:
        return [other[entry.key]]
    return [o for key, o in sorted(other.items())
            if key[0] == entry.technique_id and (not key[1] or not entry.tactic)]


def _merge(key, entries: list[TechniqueEntry], color: str) -> TechniqueEntry:
    comments = list(dict.fromkeys(e.comment for e in entries if e.comment))
    return TechniqueEntry(
        technique_id=key[0],
        tactic=key[1],
        score=sum(e.score or 0 for e in entries) if len(entries) > 1 else entries[0].score,
        color=color,
        comment=" | ".join(comments) or None,
        enabled=any(e.enabled for e in entries),
    )


def overlap(a: Layer, b: Layer, palette: Optional[OverlapPalette] = None) -> Layer:
    """
    Combines two layers into one colored by presence.

    One entry per (technique_id, tactic) key of either layer. A key present in both, directly or
    through a tactic-less entry of the same technique, gets ``palette.both`` and the sum of the
    scores; any other key keeps its own layer's score and that layer's color.

    Raises:
        DomainMismatch: The layers belong to different ATT&CK domains.
    """
    palette = palette or OverlapPalette()
    palette.validate()
    if a.domain != b.domain:
        raise DomainMismatch(f"cannot overlap {a.domain!r} layer {a.name!r} with {b.domain!r} layer {b.name!r}")

    index_a = {e.key: e for e in a.techniques}
    index_b = {e.key: e for e in b.techniques}
    merged = []
    for key in sorted(index_a.keys() | index_b.keys()):
        if key in index_a:
            entries, only = [index_a[key]] + _matches(index_a[key], index_b), palette.only_a
        else:
            entries, only = _matches(index_b[key], index_a) + [index_b[key]], palette.only_b
        merged.append(_merge(key, entries, palette.both if len(entries) > 1 else only))
    return Layer(
        name=f"{a.name} ∩ {b.name}",
        domain=a.domain,
        description=f"Overlap of {a.name} and {b.name}",
        version_info=a.version_info,
        techniques=tuple(merged),
        legend=(
            LegendItem(f"only {a.name}", palette.only_a),
            LegendItem(f"only {b.name}", palette.only_b),
            LegendItem("both", palette.both),
        ),
    )


def _rgb(color: str) -> np.ndarray:
    return np.array([int(color[i:i + 2], 16) for i in (1, 3, 5)], dtype=np.float64)


def gradient_color(score: float, gradient: Gradient) -> str:
    """Navigator gradient: evenly spaced color stops between ``min_value`` and ``max_value``."""
    stops = np.stack([_rgb(c) for c in gradient.colors])
    positions = np.linspace(gradient.min_value, gradient.max_value, len(stops))
    clipped = np.clip(score, gradient.min_value, gradient.max_value)
    rgb = [np.interp(clipped, positions, stops[:, channel]) for channel in range(3)]
    return "#" + "".join(f"{int(round(v)):02x}" for v in rgb)


def apply_gradient(layer: Layer, gradient: Optional[Gradient] = None) -> Layer:
    """Colors every scored entry by its score; unscored entries keep their color."""
    gradient = gradient or layer.gradient or Gradient()
    if len(gradient.colors) < 2 or gradient.max_value <= gradient.min_value:
        raise ValueError(f"gradient needs two or more colors and min < max, got {gradient}")
    techniques = tuple(
        e if e.score is None else e.replace(color=gradient_color(e.score, gradient)) for e in layer.techniques
    )
    return layer.replace(techniques=techniques, gradient=gradient)


def build_layer(name: str, observations: Iterable[tuple[str, str]], domain: str = DEFAULT_DOMAIN,
                description: str = "", gradient: Optional[Gradient] = None) -> Layer:
    """
    Turns observed (technique_id, tactic) sightings from logs into a scored, colored layer.

    Each distinct pair becomes one entry whose score is its sighting count.

    Raises:
        SchemaError: A technique id or tactic is malformed.
    """
    counts = Counter(observations)
    for technique_id, tactic in counts:
        if not TECHNIQUE_ID.match(technique_id) or (tactic and not TACTIC.match(tactic)):
            raise SchemaError(f"bad observation ({technique_id!r}, {tactic!r})")
    gradient = gradient or Gradient(max_value=max(counts.values(), default=1))
    techniques = tuple(sorted((TechniqueEntry(t, tac, score=n) for (t, tac), n in counts.items()), key=_sort_key))
    return apply_gradient(Layer(name=name, domain=domain, description=description, techniques=techniques), gradient)


def load_layer(path: str) -> Layer:
    with open(path, encoding="utf-8") as f:
        return parse_layer(f.read())


def save_layer(layer: Layer, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(serialize_layer(layer))


def list_fixtures() -> list[str]:
    return sorted(name[:-len(".json")] for name in os.listdir(DATA_DIR) if name.endswith(".json"))


def load_fixture(name: str) -> Layer:
    """Loads a bundled group layer, e.g. ``wicked_panda_G0096``."""
    path = os.path.join(DATA_DIR, f"{name}.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no fixture {name!r}; available: {list_fixtures()}")
    return load_layer(path)
