"""Load, validate, and emit the five-file experiment bundle.

An experiment travels as five artifacts under one directory:

  parameters.json        parameter definitions (name, label, kind, default,
                         domain, description)
  trials.csv             header ``trial_id,coverage,<param names...>``; one
                         row per trial; empty cell = unset
  branch_sets.txt        one line per trial: ``<trial_id>: <branch ids...>``
  branch_locations.json  object mapping branch-id string -> {file, line}
  src/                   source tree of the target program

Branch ids in the files may be arbitrary tokens; after ingest they become
dense integers 0..N_B-1 with the originals kept in a side map. Booleans
serialize as ``true``/``false``, numbers in decimal, everything UTF-8.
"""

from __future__ import annotations

import csv
import json
import shutil
from dataclasses import dataclass
from pathlib import Path

from .core import (
    Configuration,
    CoverageVector,
    Experiment,
    ParamValue,
    ParameterDef,
    ParameterSpace,
    SourceLocation,
    Trial,
)
from .errors import ConsistencyError, DomainError, ParseError, SchemaError

PARAMETERS_FILE = "parameters.json"
TRIALS_FILE = "trials.csv"
BRANCH_SETS_FILE = "branch_sets.txt"
BRANCH_LOCATIONS_FILE = "branch_locations.json"
SOURCE_DIR = "src"

_KINDS = ("binary", "continuous", "nominal")


@dataclass(frozen=True)
class ExperimentBundle:
    """Paths of the five input artifacts."""

    parameters_file: Path
    trials_file: Path
    branch_sets_file: Path
    branch_locations_file: Path
    source_root: Path

    @classmethod
    def from_dir(cls, root: Path | str) -> "ExperimentBundle":
        root = Path(root)
        return cls(
            parameters_file=root / PARAMETERS_FILE,
            trials_file=root / TRIALS_FILE,
            branch_sets_file=root / BRANCH_SETS_FILE,
            branch_locations_file=root / BRANCH_LOCATIONS_FILE,
            source_root=root / SOURCE_DIR,
        )

    def check_present(self) -> None:
        for path in (
            self.parameters_file,
            self.trials_file,
            self.branch_sets_file,
            self.branch_locations_file,
        ):
            if not path.is_file():
                raise ParseError("bundle file missing", file=str(path))
        if not self.source_root.is_dir():
            raise ParseError("source root missing", file=str(self.source_root))


def _json_default(pdef_kind: str, raw, fname: str) -> ParamValue:
    if raw is None:
        return None
    if pdef_kind == "binary":
        if not isinstance(raw, bool):
            raise SchemaError("binary default must be a boolean", file=fname)
        return raw
    if pdef_kind == "continuous":
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise SchemaError("continuous default must be a number", file=fname)
        return float(raw)
    if not isinstance(raw, str):
        raise SchemaError("nominal default must be a string", file=fname)
    return raw


def load_parameter_space(path: Path | str) -> ParameterSpace:
    path = Path(path)
    fname = str(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ParseError(f"cannot read parameters file: {e}", file=fname)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", file=fname, line=e.lineno)
    if not isinstance(raw, list):
        raise SchemaError("parameters file must be a top-level array", file=fname)
    params = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict):
            raise SchemaError(f"parameter entry {i} is not an object", file=fname)
        for key in ("name", "kind"):
            if key not in entry:
                raise SchemaError(f"parameter entry {i} missing {key!r}", file=fname)
        kind = entry["kind"]
        if kind not in _KINDS:
            raise SchemaError(
                f"parameter {entry['name']!r}: unknown kind {kind!r}", file=fname
            )
        domain = entry.get("domain", [])
        if kind == "binary":
            if domain and (
                not isinstance(domain, list) or not all(isinstance(v, bool) for v in domain)
            ):
                raise SchemaError(
                    f"parameter {entry['name']!r}: binary domain must list booleans",
                    file=fname,
                )
            domain = tuple(domain) if domain else (True, False)
        elif kind == "continuous":
            if not isinstance(domain, list) or len(domain) != 2:
                raise SchemaError(
                    f"parameter {entry['name']!r}: continuous domain must be [lo, hi]",
                    file=fname,
                )
            domain = tuple(domain)
        else:
            if not isinstance(domain, list) or not domain:
                raise SchemaError(
                    f"parameter {entry['name']!r}: nominal domain must be a value array",
                    file=fname,
                )
            domain = tuple(domain)
        try:
            params.append(
                ParameterDef(
                    name=entry["name"],
                    kind=kind,
                    label=entry.get("label", entry["name"]),
                    default=_json_default(kind, entry.get("default"), fname),
                    domain=domain,
                    description=entry.get("description", ""),
                )
            )
        except DomainError as e:
            raise SchemaError(str(e), file=fname)
    try:
        return ParameterSpace(params=tuple(params))
    except DomainError as e:
        raise SchemaError(str(e), file=fname)


def export_parameter_space(space: ParameterSpace, path: Path | str) -> None:
    """Write the parameters JSON format; re-loadable by the load side."""
    entries = []
    for p in space.params:
        if p.kind == "binary":
            domain = list(p.domain)
        elif p.kind == "continuous":
            domain = [p.domain[0], p.domain[1]]
        else:
            domain = list(p.domain)
        entries.append(
            {
                "name": p.name,
                "label": p.label,
                "kind": p.kind,
                "default": p.default,
                "domain": domain,
                "description": p.description,
            }
        )
    Path(path).write_text(
        json.dumps(entries, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def _parse_cell(pdef: ParameterDef, cell: str, fname: str, line: int) -> ParamValue:
    if cell == "":
        return None
    if pdef.kind == "binary":
        if cell not in ("true", "false"):
            raise ParseError(
                f"parameter {pdef.name!r}: expected true/false, got {cell!r}",
                file=fname,
                line=line,
            )
        value = cell == "true"
    elif pdef.kind == "continuous":
        try:
            value = float(cell)
        except ValueError:
            raise ParseError(
                f"parameter {pdef.name!r}: expected a number, got {cell!r}",
                file=fname,
                line=line,
            )
    else:
        value = cell
    if not pdef.contains(value):
        raise ConsistencyError(
            f"parameter {pdef.name!r}: value {cell!r} outside domain",
            file=fname,
            line=line,
        )
    return value


def _format_cell(pdef: ParameterDef, value: ParamValue) -> str:
    if value is None:
        return ""
    if pdef.kind == "binary":
        return "true" if value else "false"
    if pdef.kind == "continuous":
        return repr(float(value))
    return str(value)


def _load_trial_rows(path: Path, space: ParameterSpace):
    fname = str(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ParseError(f"cannot read trials file: {e}", file=fname)
    reader = csv.reader(text.splitlines())
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("trials file is empty", file=fname, line=1)
    if header[:2] != ["trial_id", "coverage"]:
        raise SchemaError(
            "trials header must start with trial_id,coverage", file=fname, line=1
        )
    param_cols = header[2:]
    for col in param_cols:
        if col not in space:
            raise SchemaError(f"unknown parameter column {col!r}", file=fname, line=1)
    if len(set(param_cols)) != len(param_cols):
        raise SchemaError("duplicate parameter column", file=fname, line=1)
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(
                f"expected {len(header)} cells, got {len(row)}", file=fname, line=lineno
            )
        try:
            trial_id = int(row[0])
            cov = int(row[1])
        except ValueError:
            raise ParseError("trial_id and coverage must be integers", file=fname, line=lineno)
        if cov < 0:
            raise ConsistencyError("coverage must be non-negative", file=fname, line=lineno)
        values = {}
        for col, cell in zip(param_cols, row[2:]):
            value = _parse_cell(space[col], cell, fname, lineno)
            if value is not None:
                values[col] = value
        rows.append((trial_id, cov, values, lineno))
    expected = list(range(1, len(rows) + 1))
    if [r[0] for r in rows] != expected:
        raise ConsistencyError(
            "trial ids must be 1..N_T contiguous in file order", file=fname
        )
    return rows


def _load_branch_sets(path: Path) -> dict[int, list[str]]:
    fname = str(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ParseError(f"cannot read branch sets file: {e}", file=fname)
    sets: dict[int, list[str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        head, sep, tail = line.partition(":")
        if not sep:
            raise ParseError("expected '<trial_id>: <branch ids>'", file=fname, line=lineno)
        try:
            trial_id = int(head.strip())
        except ValueError:
            raise ParseError(f"bad trial id {head.strip()!r}", file=fname, line=lineno)
        if trial_id in sets:
            raise ConsistencyError(f"duplicate line for trial {trial_id}", file=fname, line=lineno)
        sets[trial_id] = tail.split()
    return sets


def _load_branch_locations(path: Path) -> dict[str, SourceLocation]:
    fname = str(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ParseError(f"cannot read branch locations file: {e}", file=fname)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", file=fname, line=e.lineno)
    if not isinstance(raw, dict):
        raise SchemaError("branch locations must be a JSON object", file=fname)
    out = {}
    for bid, loc in raw.items():
        if not isinstance(loc, dict) or "file" not in loc or "line" not in loc:
            raise SchemaError(f"branch {bid!r}: location must have file and line", file=fname)
        rel = str(loc["file"])
        if rel.startswith("/") or ".." in Path(rel).parts:
            raise SchemaError(f"branch {bid!r}: file path must be relative", file=fname)
        if not isinstance(loc["line"], int) or loc["line"] < 1:
            raise SchemaError(f"branch {bid!r}: line must be an integer >= 1", file=fname)
        out[bid] = SourceLocation(file=rel, line=loc["line"])
    return out


def _dense_order(ids: set[str]) -> list[str]:
    try:
        return sorted(ids, key=lambda s: (0, int(s)))
    except ValueError:
        return sorted(ids)


def load_experiment(bundle: ExperimentBundle) -> Experiment:
    """Parse and cross-validate the five files into an Experiment."""
    bundle.check_present()
    space = load_parameter_space(bundle.parameters_file)
    rows = _load_trial_rows(bundle.trials_file, space)
    branch_sets = _load_branch_sets(bundle.branch_sets_file)
    locations = _load_branch_locations(bundle.branch_locations_file)

    sets_name = str(bundle.branch_sets_file)
    missing = [r[0] for r in rows if r[0] not in branch_sets]
    if missing:
        raise ConsistencyError(
            f"trials without a branch-set line: {missing[:5]}", file=sets_name
        )
    extra = sorted(set(branch_sets) - {r[0] for r in rows})
    if extra:
        raise ConsistencyError(
            f"branch-set lines for unknown trials: {extra[:5]}", file=sets_name
        )

    universe = set(locations)
    for ids in branch_sets.values():
        universe.update(ids)
    order = _dense_order(universe)
    dense = {orig: j for j, orig in enumerate(order)}
    n_branches = len(order)

    warnings = []
    unlocated = [orig for orig in order if orig not in locations]
    if unlocated:
        warnings.append(
            f"{len(unlocated)} covered branch ids have no location entry "
            f"(e.g. {unlocated[:3]})"
        )

    trials = []
    for trial_id, cov, values, lineno in rows:
        covered = {dense[b] for b in branch_sets[trial_id]}
        if len(covered) != cov:
            raise ConsistencyError(
                f"trial {trial_id}: coverage value {cov} != branch-set popcount {len(covered)}",
                file=sets_name,
            )
        trials.append(
            Trial(
                id=trial_id,
                config=Configuration(values=values),
                coverage_value=cov,
                coverage=CoverageVector.from_indices(covered, n_branches),
            )
        )

    return Experiment(
        space=space,
        trials=trials,
        n_branches=n_branches,
        branch_locations={dense[b]: loc for b, loc in locations.items()},
        source_root=bundle.source_root,
        branch_ids=order,
        warnings=warnings,
    )


def save_experiment(
    exp: Experiment, out_dir: Path | str, symlink_source: bool = False
) -> ExperimentBundle:
    """Emit all five artifacts; load(save(e)) is semantically identical to e."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle = ExperimentBundle.from_dir(out_dir)

    export_parameter_space(exp.space, bundle.parameters_file)

    with bundle.trials_file.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        names = list(exp.space.names)
        writer.writerow(["trial_id", "coverage", *names])
        for t in exp.trials:
            cells = [_format_cell(exp.space[n], t.config.get(n)) for n in names]
            writer.writerow([t.id, t.coverage_value, *cells])

    with bundle.branch_sets_file.open("w", encoding="utf-8") as f:
        for t in exp.trials:
            ids = " ".join(exp.branch_ids[j] for j in t.coverage.indices())
            f.write(f"{t.id}: {ids}\n")

    locations = {
        exp.branch_ids[j]: {"file": loc.file, "line": loc.line}
        for j, loc in sorted(exp.branch_locations.items())
    }
    bundle.branch_locations_file.write_text(
        json.dumps(locations, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )

    if bundle.source_root.is_symlink() or bundle.source_root.exists():
        if bundle.source_root.is_symlink() or bundle.source_root.is_file():
            bundle.source_root.unlink()
        else:
            shutil.rmtree(bundle.source_root)
    if exp.source_root is not None and exp.source_root.is_dir():
        if symlink_source:
            bundle.source_root.symlink_to(exp.source_root.resolve())
        else:
            shutil.copytree(exp.source_root, bundle.source_root)
    else:
        bundle.source_root.mkdir()
        for rel, text in (exp.sources or {}).items():
            target = bundle.source_root / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(text, encoding="utf-8")
    return bundle
