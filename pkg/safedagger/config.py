"""Configuration helpers: key=value settings parsing, run plans, output directory discovery."""

import os
import pathlib
from importlib.resources import files

from pydantic import ValidationError

from safedagger.errors import ConfigError

PRESETS = ("desk", "full")


def get_runs_dir(out_dir: pathlib.Path | str | None = None) -> pathlib.Path:
    """Resolve where run directories are created.

    Priority: explicit out_dir > SAFEDAGGER_RUNS env var > ./runs.
    """
    if out_dir:
        return pathlib.Path(out_dir)
    env_dir = os.environ.get("SAFEDAGGER_RUNS")
    if env_dir:
        return pathlib.Path(env_dir).expanduser()
    return pathlib.Path("runs")


def parse_settings(text: str) -> dict:
    """Parse flat key=value text with optional [section] headers.

    Values: "quoted" strings, ints, floats, true/false, and comma lists.
    A key repeated within one section collects its values into a list.
    Keys before the first header land at the top level.
    """
    result: dict = {}
    current = result
    seen: dict[int, set] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name:
                raise ConfigError([f"line {lineno}: empty section header"])
            current = result.setdefault(name, {})
            if not isinstance(current, dict):
                raise ConfigError([f"line {lineno}: '{name}' is both a key and a section"])
            continue
        if "=" not in line:
            raise ConfigError([f"line {lineno}: expected key = value, got '{line}'"])
        k, v = line.split("=", 1)
        k = k.strip()
        value = _parse_value(_strip_comment(v.strip()))
        keys = seen.setdefault(id(current), set())
        if k in keys:
            prev = current[k]
            if isinstance(prev, list) and getattr(prev, "_repeated", False):
                prev.append(value)
            else:
                current[k] = _Repeated([prev, value])
        else:
            current[k] = value
            keys.add(k)
    return _plain(result)


class _Repeated(list):
    _repeated = True


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, _Repeated):
        return list(obj)
    return obj


def _strip_comment(v: str) -> str:
    if v.startswith("#"):
        return ""
    if v.startswith('"'):
        end = v.find('"', 1)
        if end != -1:
            rest = v[end + 1:]
            hash_at = rest.find("#")
            return v[:end + 1] + (rest[:hash_at] if hash_at != -1 else rest)
        return v
    hash_at = v.find(" #")
    return v[:hash_at].rstrip() if hash_at != -1 else v


def _parse_scalar(v: str):
    v = v.strip()
    if len(v) >= 2 and v.startswith('"') and v.endswith('"'):
        return v[1:-1]
    if v == "true":
        return True
    if v == "false":
        return False
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def _parse_value(v: str):
    if v.startswith('"') and v.endswith('"') and v.count('"') == 2:
        return v[1:-1]
    if "," in v:
        return [_parse_scalar(part) for part in v.split(",") if part.strip()]
    return _parse_scalar(v)


def format_settings(data: dict) -> str:
    """Inverse of parse_settings for flat scalars, lists and one level of sections."""
    lines = []
    sections = []
    for k, v in data.items():
        if isinstance(v, dict):
            sections.append((k, v))
        else:
            lines.append(f"{k} = {_format_value(v)}")
    for name, body in sections:
        if lines:
            lines.append("")
        lines.append(f"[{name}]")
        for k, v in body.items():
            lines.append(f"{k} = {_format_value(v)}")
    return "\n".join(lines) + "\n"


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, (list, tuple)):
        return ", ".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError([f"unknown preset '{name}' (choose from {', '.join(PRESETS)})"])
    return files("safedagger.configs").joinpath(f"{name}.conf").read_text()


def load_plan(path: pathlib.Path | str | None = None, seed: int | None = None):
    """Load and validate a run configuration.

    `path` may be a file or the name of a shipped preset. Returns the
    validated IterationPlan and the source text it was built from.
    """
    if path is None:
        path = "desk"
    if str(path) in PRESETS:
        text = preset_text(str(path))
        source = f"preset:{path}"
    else:
        p = pathlib.Path(path)
        if not p.exists():
            raise ConfigError([f"config file not found: {p}"])
        text = p.read_text()
        source = str(p)
    data = parse_settings(text)
    if seed is not None:
        data.setdefault("run", {})["seed"] = seed
    return validate_plan(data, source), text


def validate_plan(data: dict, source: str | None = None):
    from safedagger.imitation import IterationPlan

    try:
        return IterationPlan.model_validate(data)
    except ValidationError as e:
        raise ConfigError(format_validation_errors(e), source) from e


def format_validation_errors(err: ValidationError) -> list[str]:
    problems = []
    for item in err.errors():
        path = ".".join(str(p) for p in item["loc"]) or "<root>"
        problems.append(f"{path}: {item['msg']}")
    return problems
