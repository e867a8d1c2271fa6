"""Flat key = value config files with explicit types.

One assignment per line, ``#`` comments, blank lines ignored.  Every key must
appear in the schema passed by the caller; unknown keys are errors so typos
fail loudly instead of silently using a default.
"""


class ConfigError(ValueError):
    pass


def _bool(raw):
    low = raw.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _float_list(raw):
    return tuple(float(x) for x in raw.split(",") if x.strip())


def _int_list(raw):
    return tuple(int(x) for x in raw.split(",") if x.strip())


CONVERTERS = {
    "int": int,
    "float": float,
    "bool": _bool,
    "str": str,
    "float_list": _float_list,
    "int_list": _int_list,
}


def parse_config_text(text, schema):
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in schema:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = CONVERTERS[schema[key]](raw)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad {schema[key]} value for {key!r}: {raw!r}") from exc
    return values


def load_config(path, schema):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), schema)


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def format_config(values):
    return "".join(f"{key} = {format_value(value)}\n" for key, value in values.items())
