"""Scenario files: schema, validation and the bundled fixture library.

A scenario is a JSON object with the walk definition plus per-check knobs.
Parsing is strict: unknown keys anywhere raise :class:`SchemaError` naming
the offender, probabilities are parsed as exact rationals, and referenced
closed forms must exist.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .errors import ParseError, SchemaError
from .lattice import ConeRegion, StepDistribution, make_step_distribution
from .errors import ConeLadderError

_TOP_KEYS = {
    "name",
    "dimension",
    "steps",
    "cone_normals",
    "window_bound",
    "seed",
    "tag",
    "regime",
    "harmonic",
    "expected_fail",
    "tolerances",
    "refine_levels",
    "checks",
}

_STEP_KEYS = {"vector", "prob"}

_TAGS = {"centered", "drifted"}
_REGIMES = {"integrable", "non-integrable"}

_CHECK_KEYS = {
    "substochastic_PH": {"bound"},
    "renewal_identity": {"pairs", "tol", "levels"},
    "regime": {"doublings", "stab_tol"},
    "ratio_vs_V": {"targets", "horizon", "final_rtol", "tail_slack"},
    "theorem1": {"u", "tol", "levels"},
    "theorem3": {"tol", "max_iter", "safe_limit"},
    "never_exit": {"x", "u", "levels", "pad", "replicas", "horizon"},
    "ladder_mc_tv": {"x", "replicas", "max_steps", "tv_tol", "row_bound"},
    "tilt_rate": {"u_dir", "v_dir", "n_grid", "rate_rtol", "bound"},
    "slow_variation": {"u", "n_grid", "base_points", "rate_ceiling", "trend_slack", "bound"},
}

_TOLERANCE_KEYS = {
    "row_sum_slack",
    "renewal_origin",
    "identity_residual",
    "harmonic_residual",
    "transform_row",
    "wald_gap",
    "h_tilde_norm",
    "decomposition",
    "doubling",
    "never_exit_pad",
    "mc_tv",
    "rate_ceiling",
    "rate_rtol",
}


@dataclass(frozen=True)
class Tolerances:
    row_sum_slack: float = 1e-10
    renewal_origin: float = 1e-8
    identity_residual: float = 1e-6
    harmonic_residual: float = 1e-6
    transform_row: float = 1e-10
    wald_gap: float = 1e-6
    h_tilde_norm: float = 1e-4
    decomposition: float = 1e-5
    doubling: float = 1e-3
    never_exit_pad: float = 1e-4
    mc_tv: float = 0.02
    rate_ceiling: float = 0.15
    rate_rtol: float = 0.10

    def override(self, table: dict) -> "Tolerances":
        return replace(self, **table)


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    mu: StepDistribution
    cone: ConeRegion
    window_bound: int
    seed: int
    tag: str
    regime: str | None = None
    harmonic_kind: str | None = None
    expected_fail: tuple[str, ...] = ()
    tolerances: Tolerances = field(default_factory=Tolerances)
    refine_levels: int = 2
    checks: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return self.mu.dimension


def _fail(msg: str) -> SchemaError:
    return SchemaError(msg)


def _validate_keys(obj: dict, allowed: set, where: str):
    for key in obj:
        if key not in allowed:
            raise _fail(f"unknown key {key!r} in {where}")


def parse_scenario(doc: dict, origin: str = "<memory>") -> Scenario:
    if not isinstance(doc, dict):
        raise _fail(f"{origin}: scenario must be an object")
    _validate_keys(doc, _TOP_KEYS, origin)
    for key in ("name", "dimension", "steps", "cone_normals", "window_bound", "seed", "tag"):
        if key not in doc:
            raise _fail(f"{origin}: missing required key {key!r}")
    name = doc["name"]
    dimension = doc["dimension"]
    if not isinstance(dimension, int) or dimension < 1:
        raise _fail(f"{origin}: dimension must be a positive integer")
    steps_raw = doc["steps"]
    if not isinstance(steps_raw, list) or not steps_raw:
        raise _fail(f"{origin}: steps must be a non-empty list")
    pairs = []
    for i, entry in enumerate(steps_raw):
        if not isinstance(entry, dict):
            raise _fail(f"{origin}: steps[{i}] must be an object")
        _validate_keys(entry, _STEP_KEYS, f"{origin}: steps[{i}]")
        if "vector" not in entry or "prob" not in entry:
            raise _fail(f"{origin}: steps[{i}] needs 'vector' and 'prob'")
        vec = entry["vector"]
        if not isinstance(vec, list) or len(vec) != dimension:
            raise _fail(f"{origin}: steps[{i}].vector must have length {dimension}")
        pairs.append((vec, entry["prob"]))
    try:
        mu = make_step_distribution(pairs)
    except ConeLadderError as exc:
        raise _fail(f"{origin}: invalid step law: {exc}") from exc
    normals = doc["cone_normals"]
    if (
        not isinstance(normals, list)
        or not normals
        or any(not isinstance(r, list) or len(r) != dimension for r in normals)
    ):
        raise _fail(f"{origin}: cone_normals must be a list of length-{dimension} rows")
    cone = ConeRegion.from_normals(normals)
    bound = doc["window_bound"]
    if not isinstance(bound, int) or bound < 2:
        raise _fail(f"{origin}: window_bound must be an integer >= 2")
    seed = doc["seed"]
    if not isinstance(seed, int) or seed < 0:
        raise _fail(f"{origin}: seed must be a non-negative integer")
    tag = doc["tag"]
    if tag not in _TAGS:
        raise _fail(f"{origin}: tag must be one of {sorted(_TAGS)}")
    regime = doc.get("regime")
    if regime is not None and regime not in _REGIMES:
        raise _fail(f"{origin}: regime must be one of {sorted(_REGIMES)}")
    harmonic = doc.get("harmonic")
    if harmonic is not None and not isinstance(harmonic, str):
        raise _fail(f"{origin}: harmonic must be a closed-form name")
    expected_fail = doc.get("expected_fail", [])
    if not isinstance(expected_fail, list) or any(c not in _CHECK_KEYS for c in expected_fail):
        raise _fail(f"{origin}: expected_fail entries must be registered check names")
    tol_doc = doc.get("tolerances", {})
    if not isinstance(tol_doc, dict):
        raise _fail(f"{origin}: tolerances must be an object")
    _validate_keys(tol_doc, _TOLERANCE_KEYS, f"{origin}: tolerances")
    tolerances = Tolerances().override({k: float(v) for k, v in tol_doc.items()})
    levels = doc.get("refine_levels", 2)
    if not isinstance(levels, int) or levels < 1:
        raise _fail(f"{origin}: refine_levels must be a positive integer")
    checks = doc.get("checks", {})
    if not isinstance(checks, dict):
        raise _fail(f"{origin}: checks must be an object")
    for cname, params in checks.items():
        if cname not in _CHECK_KEYS:
            raise _fail(f"{origin}: unknown check {cname!r} in checks")
        if not isinstance(params, dict):
            raise _fail(f"{origin}: checks.{cname} must be an object")
        _validate_keys(params, _CHECK_KEYS[cname], f"{origin}: checks.{cname}")
    return Scenario(
        name=name,
        mu=mu,
        cone=cone,
        window_bound=bound,
        seed=seed,
        tag=tag,
        regime=regime,
        harmonic_kind=harmonic,
        expected_fail=tuple(expected_fail),
        tolerances=tolerances,
        refine_levels=levels,
        checks=checks,
    )


def bundled_scenario_names() -> list[str]:
    root = resources.files("coneladder") / "scenarios"
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


def load_scenario(path_or_name: str | Path) -> Scenario:
    """Load a scenario from a file path or by bundled fixture name."""
    path = Path(path_or_name)
    if path.suffix == ".json" and path.exists():
        text = path.read_text()
        origin = str(path)
    else:
        candidate = resources.files("coneladder") / "scenarios" / f"{path_or_name}.json"
        if not candidate.is_file():
            raise ParseError(f"no scenario file or bundled fixture named {path_or_name!r}")
        text = candidate.read_text()
        origin = f"bundled:{path_or_name}"
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{origin}: invalid JSON: {exc}") from exc
    return parse_scenario(doc, origin)
