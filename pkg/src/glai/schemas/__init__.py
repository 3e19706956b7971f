"""JSON schemas for every document the package reads or writes."""
import json
from functools import lru_cache
from importlib import resources

import jsonschema
from referencing import Registry, Resource

KINDS = ("common", "config", "mlp_model", "glai_model", "run_report", "comparison", "multi_seed")


def load(kind):
    if kind not in KINDS:
        raise KeyError(f"no schema named {kind!r}")
    text = resources.files(__name__).joinpath(f"{kind}.schema.json").read_text()
    return json.loads(text)


@lru_cache(maxsize=None)
def _validator(kind):
    registry = Registry().with_resources(
        (f"urn:glai:{k}", Resource.from_contents(load(k))) for k in KINDS
    )
    schema = load(kind)
    cls = jsonschema.validators.validator_for(schema)
    return cls(schema, registry=registry)


def validate(document, kind):
    """Raise ``jsonschema.ValidationError`` unless ``document`` matches ``kind``."""
    _validator(kind).validate(document)


def errors(document, kind):
    return [e.message for e in _validator(kind).iter_errors(document)]
