"""
Run configuration: INI file + environment defaults.

Precedence is CLI flag > config file > environment > built-in default.
"""
import configparser
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from pipeline import Tolerances
from solvers import ConfigError, ProblemSpec, Resolution

MODES = ("profile", "hp-spectrum", "find-point", "solve", "verify", "sweep", "scan")
STAGE = "runconfig.load_config"

DEFAULT_OUT_DIR = "out"
DEFAULT_WORKERS = 1
DEFAULT_SCAN_POINTS = 11


def _floats(text: str | None, key: str) -> list[float] | None:
    if text is None or not text.strip():
        return None
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"{key} must be a comma-separated list of numbers, got {text!r}", stage=STAGE)


def _matrix(text: str | None) -> list[list[float]] | None:
    if text is None or not text.strip():
        return None
    try:
        return [[float(v) for v in row.split(",")] for row in text.split(";")]
    except ValueError:
        raise ConfigError(
            f"A must be a constant numeric matrix, got {text!r}; position-dependent A(x) is not supported",
            stage=STAGE,
        )


def _number(section: configparser.SectionProxy, key: str, kind=float):
    raw = section.get(key)
    if raw is None or not raw.strip():
        return None
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key} must be {kind.__name__}, got {raw!r}", stage=STAGE)


@dataclass(frozen=True)
class RunConfig:
    mode: str
    problem: dict | None = None
    variant: str = "general"
    eps: float | None = None
    eps_list: list[float] | None = None
    lambda_bar: float | None = None
    kappa: float | None = None
    p0: list[float] | None = None
    solution: str | None = None
    scan_lower: list[float] | None = None
    scan_upper: list[float] | None = None
    scan_points: int = DEFAULT_SCAN_POINTS
    select: int | None = None
    tolerances: Tolerances = field(default_factory=Tolerances)
    resolution: Resolution | None = None
    out_dir: str = DEFAULT_OUT_DIR
    workers: int = DEFAULT_WORKERS

    @property
    def n(self) -> int | None:
        return self.problem["n"] if self.problem else None

    def spec(self) -> ProblemSpec:
        if self.problem is None:
            raise ConfigError(f"mode {self.mode!r} needs a [problem] section", stage=STAGE)
        return ProblemSpec.from_strings(**self.problem)

    def resolved_resolution(self) -> Resolution | None:
        if self.resolution is not None or self.n is None:
            return self.resolution
        return Resolution.default(self.n)

    def resolved_tolerances(self) -> Tolerances:
        return self.tolerances.resolved(self.n) if self.n else self.tolerances

    def resolved(self) -> dict:
        """Every setting that influences the run, defaults filled in (output location excluded)."""
        res = self.resolved_resolution()
        return {
            "mode": self.mode,
            "problem": self.problem,
            "variant": self.variant,
            "eps": self.eps,
            "eps_list": self.eps_list,
            "lambda_bar": self.lambda_bar,
            "kappa": self.kappa,
            "p0": self.p0,
            "solution": self.solution,
            "scan_lower": self.scan_lower,
            "scan_upper": self.scan_upper,
            "scan_points": self.scan_points,
            "select": self.select,
            "tolerances": self.resolved_tolerances().as_dict(),
            "resolution": res.as_dict() if res else None,
        }

    def content_hash(self) -> str:
        payload = json.dumps(self.resolved(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    def validate(self) -> None:
        """Mode-required fields present."""
        need: list[str] = []
        if self.mode != "verify":
            need.append("problem")
        if self.mode in ("profile", "hp-spectrum", "find-point", "solve", "sweep"):
            need.append("p0")
        if self.mode in ("find-point", "solve"):
            need.append("eps")
        if self.mode == "sweep":
            need.append("eps_list")
        if self.mode == "verify":
            need.append("solution")
        if self.mode == "scan":
            need += ["scan_lower", "scan_upper"]
            if self.select is not None:
                need.append("eps")
        if self.mode != "verify":
            need.append("kappa" if self.variant == "torsion" else "lambda_bar")
        missing = [k for k in need if getattr(self, k) is None]
        if missing:
            raise ConfigError(f"mode {self.mode!r} needs {', '.join(missing)}", stage=STAGE)
        n = self.n
        for key in ("p0", "scan_lower", "scan_upper"):
            value = getattr(self, key)
            if value is not None and n is not None and len(value) != n:
                raise ConfigError(f"{key} needs {n} entries, got {len(value)}", stage=STAGE)


def load_config(path, *, mode: str | None = None, out_dir: str | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}", stage=STAGE)
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}", stage=STAGE) from exc

    run = parser["run"] if parser.has_section("run") else parser[parser.default_section]
    mode = mode or run.get("mode")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {', '.join(MODES)}, got {mode!r}", stage=STAGE)

    problem = None
    if parser.has_section("problem"):
        sec = parser["problem"]
        n = _number(sec, "n", int)
        if n is None:
            raise ConfigError("[problem] needs n", stage=STAGE)
        missing = [k for k in ("F", "f0", "f1") if not sec.get(k, "").strip()]
        if missing:
            raise ConfigError(f"[problem] needs {', '.join(missing)}", stage=STAGE)
        b = sec.get("b")
        problem = {
            "n": n,
            "F": sec["F"].strip(),
            "f0": sec["f0"].strip(),
            "f1": sec["f1"].strip(),
            "b": [v.strip() for v in b.split(",")] if b and b.strip() else ["0"] * n,
            "A": _matrix(sec.get("A")),
        }

    tol = Tolerances()
    if parser.has_section("tolerances"):
        sec = parser["tolerances"]
        values = {}
        for key, kind in (
            ("shape", float),
            ("point", float),
            ("certify", float),
            ("newton", float),
            ("max_shape_iter", int),
            ("max_point_iter", int),
            ("max_newton_iter", int),
        ):
            v = _number(sec, key, kind)
            if v is not None:
                values[key] = v
        tol = Tolerances(**values)

    resolution = None
    if parser.has_section("resolution"):
        sec = parser["resolution"]
        if problem is None:
            raise ConfigError("[resolution] needs a [problem] section to pick defaults", stage=STAGE)
        base = Resolution.default(problem["n"])
        sizes = {}
        for key in ("degree", "inner", "mid", "outer"):
            value = _number(sec, key, int)
            if value is not None and value <= 0:
                raise ConfigError(f"[resolution] {key} must be a positive integer, got {value}", stage=STAGE)
            sizes[key] = getattr(base, key) if value is None else value
        resolution = Resolution(**sizes)

    file_out = parser.get("output", "dir", fallback=None)
    workers = os.getenv("OVERDET_WORKERS")
    try:
        workers = int(workers) if workers else DEFAULT_WORKERS
    except ValueError:
        raise ConfigError(f"OVERDET_WORKERS must be an integer, got {workers!r}", stage=STAGE)

    variant = run.get("variant", "general").strip()
    if variant not in ("general", "torsion", "linear"):
        raise ConfigError(f"variant must be general, torsion or linear, got {variant!r}", stage=STAGE)

    config = RunConfig(
        mode=mode,
        problem=problem,
        variant=variant,
        eps=_number(run, "eps"),
        eps_list=_floats(run.get("eps_list"), "eps_list"),
        lambda_bar=_number(run, "lambda_bar"),
        kappa=_number(run, "kappa"),
        p0=_floats(run.get("p0"), "p0"),
        solution=run.get("solution", "").strip() or None,
        scan_lower=_floats(run.get("scan_lower"), "scan_lower"),
        scan_upper=_floats(run.get("scan_upper"), "scan_upper"),
        scan_points=_number(run, "scan_points", int) or DEFAULT_SCAN_POINTS,
        select=_number(run, "select", int),
        tolerances=tol,
        resolution=resolution,
        out_dir=out_dir or file_out or os.getenv("OVERDET_OUT_DIR") or DEFAULT_OUT_DIR,
        workers=max(1, workers),
    )
    config.validate()
    return config
