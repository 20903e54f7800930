import re

from app.errors import ConfigError
from app.services.neural import MLPSpec, param_count

CORRECTOR_WIDTH = 10

ARCHITECTURE_LADDER = {
    "Large": ["MLP(100,200)", "MLP(32,64)"],
    "Medium": ["MLP(32,32)", "MLP(16,32)", "MLP(16,16)", "MLP(12,12)"],
    "Small": ["MLP(10,10)", "MLP(10,)", "MLP(6,6)", "MLP(6,)"],
    "Tiny": ["MLP(1,)"],
}

# Compact model from the findings; not part of default ladder runs
SUPPLEMENTARY_ARCHITECTURES = {
    "Small": ["MLP(4,4)"],
}

_NAME_PATTERN = re.compile(r"^MLP\((\d+(?:\s*,\s*\d+)*)\s*,?\s*\)$")


def parse_architecture(name):
    """Turn 'MLP(10,10)' or 'MLP(6,)' into a corrector MLPSpec."""
    match = _NAME_PATTERN.match(name.replace(" ", ""))
    if not match:
        raise ConfigError(f"cannot parse architecture name '{name}'")
    hidden = tuple(int(w) for w in match.group(1).split(",") if w)
    return MLPSpec(CORRECTOR_WIDTH, hidden, CORRECTOR_WIDTH)


def get_ladder(include_supplementary=False):
    """Architecture names from largest to smallest."""
    names = [name for names in ARCHITECTURE_LADDER.values() for name in names]
    if include_supplementary:
        names += [name for names in SUPPLEMENTARY_ARCHITECTURES.values() for name in names]
    return names


def complexity_category(name):
    for registry in (ARCHITECTURE_LADDER, SUPPLEMENTARY_ARCHITECTURES):
        for category, names in registry.items():
            if name in names:
                return category
    return None


def resolve_architecture(name):
    """Parse a name that must belong to the ladder (or its supplement)."""
    if name not in get_ladder(include_supplementary=True):
        raise ConfigError(f"'{name}' is not a known corrector architecture")
    return parse_architecture(name)


def describe_ladder():
    return [
        {"name": name, "parameters": param_count(parse_architecture(name)),
         "category": complexity_category(name)}
        for name in get_ladder(include_supplementary=True)
    ]
