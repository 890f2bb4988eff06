"""Plain-text ``key = value`` files used for designs, monitoring state and scenarios."""

import math

from src.errors import KeyValueParseError


class Entries:
    """Parsed ``key = value`` pairs that remember where each key came from."""

    def __init__(self, source="<text>"):
        self.source = source
        self._values = {}
        self._lines = {}
        self._used = set()

    def add(self, key, value, line):
        if key in self._values:
            raise KeyValueParseError(
                f"duplicate key {key!r} (first defined on line {self._lines[key]})",
                self.source, line)
        self._values[key] = value
        self._lines[key] = line

    def __contains__(self, key):
        return key in self._values

    def keys(self):
        return list(self._values)

    def line(self, key):
        return self._lines.get(key)

    def error(self, key, message):
        return KeyValueParseError(f"{key}: {message}", self.source, self.line(key))

    def raw(self, key, default=None, required=False):
        if key not in self._values:
            if required:
                raise KeyValueParseError(f"missing required key {key!r}", self.source)
            return default
        self._used.add(key)
        return self._values[key]

    def get_str(self, key, default=None, required=False):
        value = self.raw(key, default, required)
        return value if value != "" else default

    def get_float(self, key, default=None, required=False):
        value = self.raw(key, None, required)
        if value is None or value == "":
            return default
        try:
            return float(value)
        except ValueError:
            raise self.error(key, f"expected a number, got {value!r}") from None

    def get_int(self, key, default=None, required=False):
        value = self.raw(key, None, required)
        if value is None or value == "":
            return default
        try:
            return int(value)
        except ValueError:
            raise self.error(key, f"expected an integer, got {value!r}") from None

    def get_floats(self, key, default=None, required=False):
        value = self.raw(key, None, required)
        if value is None or value == "":
            return default
        try:
            return tuple(float(v) for v in value.split(","))
        except ValueError:
            raise self.error(key, f"expected comma-separated numbers, got {value!r}") from None

    def get_bool(self, key, default=None, required=False):
        value = self.raw(key, None, required)
        if value is None or value == "":
            return default
        lowered = value.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise self.error(key, f"expected a boolean, got {value!r}")

    def reject_unknown(self, allowed):
        for key in self._values:
            if key not in allowed:
                raise KeyValueParseError(f"unknown key {key!r}", self.source, self._lines[key])


def parse(text, source="<text>"):
    entries = Entries(source)
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        # [section] headers are accepted and ignored
        if stripped.startswith("[") and stripped.endswith("]"):
            continue
        if "=" not in stripped:
            raise KeyValueParseError(f"expected 'key = value', got {stripped!r}", source, number)
        key, value = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise KeyValueParseError("empty key", source, number)
        entries.add(key, value.strip(), number)
    return entries


def read(path):
    with open(path, "r", encoding="utf-8") as handle:
        return parse(handle.read(), source=str(path))


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    if value is None:
        return ""
    return str(value)


def dump(pairs, header=None):
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    for key, value in pairs:
        lines.append(f"{key} = {format_value(value)}")
    return "\n".join(lines) + "\n"
