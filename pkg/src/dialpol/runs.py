"""Run directories, config files and deterministic serialisation."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

from .errors import ConfigError, ParseError

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

FLOAT_FMT = "%.17g"


def load_config(path):
    """Read a TOML or JSON config file into a dict (JSON if the suffix is .json)."""
    if path is None:
        return {}
    path = Path(path)
    try:
        if path.suffix.lower() == ".json":
            return json.loads(path.read_text())
        return tomllib.loads(path.read_text())
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ParseError(f"cannot parse config {path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None


def merge(defaults, file_cfg, cli):
    """Flat precedence: CLI values (non-None) over file values over defaults."""
    out = dict(defaults)
    out.update({k: v for k, v in file_cfg.items()})
    out.update({k: v for k, v in cli.items() if v is not None})
    return out


def _fmt(x):
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return FLOAT_FMT % x
    return str(x)


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def json_text(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _zero_keys(obj, keys):
    if isinstance(obj, dict):
        return {k: (0 if k in keys else _zero_keys(v, keys)) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_zero_keys(v, keys) for v in obj]
    return obj


class RunOutput:
    """Output directory of one command invocation, with a manifest.

    Files carrying wall-clock timings are marked volatile; their manifest
    hash is taken over the content with timing fields zeroed, so the
    manifest itself is identical across reruns with the same seed.
    """

    def __init__(self, directory, command, seed, force=False):
        self.dir = Path(directory)
        if self.dir.exists() and any(self.dir.iterdir()) and not force:
            raise ConfigError(f"output directory {self.dir} is not empty (use --force)")
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.seed = seed
        self.files = []

    def _write(self, name, text, stable_text, volatile):
        (self.dir / name).write_text(text)
        digest = hashlib.sha256(stable_text.encode()).hexdigest() if stable_text is not None else None
        self.files.append({"name": name, "sha256": digest, "volatile": volatile})

    def write_json(self, name, obj, volatile_keys=()):
        text = json_text(obj)
        stable = json_text(_zero_keys(obj, set(volatile_keys))) if volatile_keys else text
        self._write(name, text, stable, bool(volatile_keys))

    def write_text(self, name, text):
        self._write(name, text, text, False)

    def write_csv(self, name, header, rows, volatile=False):
        text = csv_text(header, rows)
        self._write(name, text, None if volatile else text, volatile)

    def finish(self):
        manifest = {"command": self.command, "seed": self.seed,
                    "files": sorted(self.files, key=lambda f: f["name"])}
        (self.dir / "manifest.json").write_text(json_text(manifest))
        return manifest


def read_features_csv(path):
    """Numeric CSV, one instance per row; a non-numeric first row is a header."""
    import numpy as np

    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if lineno == 1:
                    continue
                raise ParseError(f"non-numeric value in {row!r}", lineno) from None
    if rows and len({len(r) for r in rows}) != 1:
        raise ParseError("rows have different lengths")
    return np.array(rows, dtype=np.float64).reshape(len(rows), -1 if rows else 0)
