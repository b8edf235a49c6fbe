"""Step-size sweeps on the benchmark problem and their CSV tables."""

from __future__ import annotations

import csv
import math
import re
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from .benchmark import ANISOTROPY, run_benchmark_setup
from .diagnostics import eoc
from .flows import FlowConfig, FlowError, FlowOperators, Scheme, run_flow

__all__ = [
    "StudyConfig",
    "StudyRow",
    "StudyError",
    "parse_step",
    "parse_scheme",
    "load_config",
    "parse_config_text",
    "run_study",
    "write_csv",
    "CSV_COLUMNS",
]

CSV_COLUMNS = [
    "scheme",
    "metric",
    "s",
    "iterations",
    "reason",
    "delta_cons",
    "eoc",
    "s_sigma2",
    "s2_sigma2",
    "s2_sigma3",
    "s4_sigma3",
    "rho",
    "s2_rho",
    "energy",
]


class StudyError(RuntimeError):
    pass


_POWER = re.compile(r"^\s*2\s*(?:\^|\*\*)\s*\(?\s*([+-]?\d+)\s*\)?\s*$")


def parse_step(text) -> float:
    """Parse a step size such as ``0.125``, ``2^-3`` or ``2**-3``."""
    if isinstance(text, (int, float)):
        return float(text)
    m = _POWER.match(str(text))
    if m:
        return math.ldexp(1.0, int(m.group(1)))
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"cannot parse step size {text!r}") from None


def parse_scheme(token: str) -> tuple[Scheme, int]:
    """``AF_BDF1``, ``AF_BDF2``, ``GF_BDF1``, ``GF_BDF2`` or ``AF_BDFK<k>`` (modified scheme)."""
    token = token.strip().upper()
    m = re.fullmatch(r"AF_BDFK(?:_MODIFIED)?[:(]?(?:K=)?(\d)\)?", token)
    if m:
        return Scheme.AF_BDFK_MODIFIED, int(m.group(1))
    try:
        scheme = Scheme(token)
    except ValueError:
        raise ValueError(f"unknown scheme {token!r}") from None
    if scheme is Scheme.AF_BDFK_MODIFIED:
        raise ValueError("modified scheme needs an order, e.g. AF_BDFK3")
    return scheme, {Scheme.AF_BDF2: 2, Scheme.GF_BDF2: 2}.get(scheme, 1)


def scheme_label(scheme: Scheme, k: int) -> str:
    return f"AF_BDFK{k}" if scheme is Scheme.AF_BDFK_MODIFIED else scheme.value


@dataclass(frozen=True)
class StudyConfig:
    schemes: tuple[tuple[Scheme, int], ...]
    steps: tuple[float, ...]
    benchmark: str = "anisotropic_dirichlet"
    mesh_n: int = 64
    anisotropy: tuple[float, float] = ANISOTROPY
    metric: str = "H1"
    alpha: float = 25.0
    eps: float = 1e-8
    t_max: float = 1e4
    output: str | None = None
    oracle: bool = False
    timing: bool = False
    max_steps: int | None = None

    def __post_init__(self):
        if self.benchmark != "anisotropic_dirichlet":
            raise ValueError(f"unknown benchmark {self.benchmark!r}")
        if not self.steps:
            raise ValueError("step-size list is empty")
        if not self.schemes:
            raise ValueError("scheme list is empty")
        if any(b >= a for a, b in zip(self.steps, self.steps[1:])):
            raise ValueError("step sizes must be strictly decreasing")
        for scheme, k in self.schemes:
            for s in self.steps:
                self.flow_config(scheme, k, s)

    def flow_config(self, scheme: Scheme, k: int, s: float) -> FlowConfig:
        return FlowConfig(
            scheme=scheme, s=s, k=k, alpha=self.alpha, metric=self.metric, eps=self.eps,
            t_max=self.t_max, oracle=self.oracle,
        )


def _parse_bool(text: str) -> bool:
    val = text.strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def load_config(path) -> StudyConfig:
    """Read a ``key = value`` file (``#`` starts a comment).

    Keys: benchmark, mesh_n, anisotropy (two numbers), schemes, metric, alpha,
    eps, s (comma separated, ``2^-k`` allowed), t_max, output, oracle, timing,
    max_steps.
    """
    return parse_config_text(Path(path).read_text(), source=str(path))


def parse_config_text(text: str, source: str = "<config>") -> StudyConfig:
    """Parse config text in the format of :func:`load_config`."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        raw[key.lower()] = value
    return config_from_mapping(raw)


def _split(value: str) -> list[str]:
    return [tok for tok in re.split(r"[,\s]+", value.strip()) if tok]


def config_from_mapping(raw: dict) -> StudyConfig:
    known = {
        "benchmark", "mesh_n", "anisotropy", "schemes", "metric", "alpha", "eps", "s",
        "t_max", "output", "oracle", "timing", "max_steps",
    }
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    if "schemes" not in raw or "s" not in raw:
        raise ValueError("config needs 'schemes' and 's'")
    kw = {
        "schemes": tuple(parse_scheme(tok) for tok in _split(raw["schemes"])),
        "steps": tuple(parse_step(tok) for tok in _split(raw["s"])),
    }
    if "benchmark" in raw:
        kw["benchmark"] = raw["benchmark"]
    if "mesh_n" in raw:
        kw["mesh_n"] = int(raw["mesh_n"])
    if "anisotropy" in raw:
        vals = tuple(float(x) for x in _split(raw["anisotropy"]))
        if len(vals) != 2:
            raise ValueError("anisotropy needs two diagonal entries")
        kw["anisotropy"] = vals
    for key in ("alpha", "eps", "t_max"):
        if key in raw:
            kw[key] = float(raw[key])
    if "metric" in raw:
        kw["metric"] = raw["metric"].upper()
    if "output" in raw:
        kw["output"] = raw["output"]
    for key in ("oracle", "timing"):
        if key in raw:
            kw[key] = _parse_bool(raw[key])
    if "max_steps" in raw:
        kw["max_steps"] = int(raw["max_steps"])
    return StudyConfig(**kw)


@dataclass
class StudyRow:
    scheme: str
    metric: str
    s: float
    iterations: int
    reason: str
    delta_cons: float
    eoc: float | None
    s_sigma2: float
    s2_sigma2: float
    s2_sigma3: float
    s4_sigma3: float
    rho: float
    s2_rho: float
    energy: float
    wall_time: float | None = field(default=None, compare=False)


def run_study(cfg: StudyConfig, progress=None) -> list[StudyRow]:
    """Run every (scheme, s) pair and write the CSV if ``cfg.output`` is set.

    Rows come ordered by scheme (config order) and decreasing s.  A failed run
    raises :class:`StudyError` naming the pair; nothing is written then.
    """
    setup = run_benchmark_setup(cfg.mesh_n)
    ops = FlowOperators.build(setup.space, cfg.anisotropy, cfg.metric)
    rows: list[StudyRow] = []
    for scheme, k in cfg.schemes:
        label = scheme_label(scheme, k)
        block = []
        for s in cfg.steps:
            fc = cfg.flow_config(scheme, k, s)
            start = time.perf_counter()
            try:
                result = run_flow(ops, fc, setup.u0, max_steps=cfg.max_steps)
            except (FlowError, ValueError) as exc:
                raise StudyError(f"run {label} at s={s!r} failed: {exc}") from exc
            elapsed = time.perf_counter() - start
            reg = result.regularity((2, 3))
            block.append(
                StudyRow(
                    scheme=label,
                    metric=cfg.metric,
                    s=s,
                    iterations=result.n_steps,
                    reason=result.reason,
                    delta_cons=result.final.delta_cons,
                    eoc=None,
                    s_sigma2=reg.s_sigma2,
                    s2_sigma2=reg.s2_sigma2,
                    s2_sigma3=reg.s2_sigma3,
                    s4_sigma3=reg.s4_sigma3,
                    rho=reg.rho,
                    s2_rho=reg.s2_rho,
                    energy=result.final.energy,
                    wall_time=elapsed if cfg.timing else None,
                )
            )
            if progress is not None:
                progress(block[-1])
        _fill_eoc(block)
        rows.extend(block)
    if cfg.output is not None:
        write_csv(rows, cfg.output, timing=cfg.timing)
    return rows


def _fill_eoc(block: list[StudyRow]) -> None:
    for prev, row in zip(block, block[1:]):
        if prev.delta_cons > 0 and row.delta_cons > 0:
            row.eoc = eoc([(prev.s, prev.delta_cons), (row.s, row.delta_cons)])[0]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(rows: list[StudyRow], path, timing: bool = False) -> None:
    columns = CSV_COLUMNS + (["wall_time"] if timing else [])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(getattr(row, c)) for c in columns])


def with_output(cfg: StudyConfig, path) -> StudyConfig:
    return replace(cfg, output=str(path))
