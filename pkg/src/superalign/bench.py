"""Ablation harness over matcher x filter x estimator combinations.

A suite is a TOML document::

    [pairs]
    count = 20
    seed = 0                 # pair k uses seed + k
    point_count = 1000
    overlap_fraction = 1.0
    noise_sigma = 0.0
    outlier_fraction = 0.3   # injected after extraction, before filtering

    [pipeline]               # same keys as the flat config format
    "matcher.temperature" = 0.001

    [[combo]]
    name = "No filtering"
    matcher = "global_softmax"
    filter = 1.0
    estimator = "weighted_kabsch"

Superpoints and descriptors are computed once per pair and correlation once
per (pair, matcher); every combination reuses those stage results and their
measured times, so timing differences between rows come from the stages
that actually differ.
"""
from __future__ import annotations

import dataclasses
import io as _io
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .config import MATCHER_ALIASES, PipelineConfig, apply_overrides
from .errors import FormatError, ParameterError, RegistrationError
from .metrics import inlier_ratio, is_registered, rre, rte
from .parallel import parallel_map
from .pipeline import correlate, estimate, prepare, select
from .synthetic import SyntheticPairSpec, generate_synthetic_pair

CSV_HEADER = "combo,matcher,filter,estimator,rre_deg,rte_m,rr,mean_ir,time_s"

DEFAULT_SUITE = """\
[pairs]
count = 20
seed = 0
point_count = 1000
overlap_fraction = 1.0
noise_sigma = 0.0
outlier_fraction = 0.3

[[combo]]
name = "No filtering"
matcher = "global_softmax"
filter = 1.0
estimator = "weighted_kabsch"

[[combo]]
name = "Ours + RANSAC"
matcher = "global_softmax"
filter = 1.0
estimator = "ransac"

[[combo]]
name = "Ours (top 15%) + RANSAC"
matcher = "global_softmax"
filter = 0.15
estimator = "ransac"

[[combo]]
name = "Correlation scores (top 15%)"
matcher = "global_softmax"
filter = 0.15
estimator = "weighted_kabsch"

[[combo]]
name = "Sinkhorn"
matcher = "sinkhorn"
filter = 0.15
estimator = "weighted_kabsch"

[[combo]]
name = "Dual Softmax"
matcher = "dual_softmax"
filter = 0.15
estimator = "weighted_kabsch"

[[combo]]
name = "Global Softmax (Ours)"
matcher = "global_softmax"
filter = 0.15
estimator = "weighted_kabsch"
"""

_PAIR_KEYS = {f.name for f in dataclasses.fields(SyntheticPairSpec)}


@dataclass(frozen=True)
class Combo:
    name: str
    matcher: str = "global_softmax"
    filter: float = 0.15
    estimator: str = "weighted_kabsch"


@dataclass(frozen=True)
class Suite:
    combos: tuple
    pairs: tuple                 # SyntheticPairSpec per pair
    base: PipelineConfig = PipelineConfig()
    outlier_fraction: float = 0.0

    def config_for(self, combo: Combo) -> PipelineConfig:
        return apply_overrides(self.base, [
            ("matcher.name", combo.matcher), ("filter_fraction", repr(float(combo.filter))),
            ("estimator", combo.estimator), ("outlier_fraction", repr(self.outlier_fraction))])


def _raw(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v)


def parse_suite(text: str, path=None) -> Suite:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise FormatError(str(exc), path=path) from None
    unknown = set(doc) - {"pairs", "pipeline", "combo"}
    if unknown:
        raise FormatError(f"unknown suite sections {sorted(unknown)}", path=path)
    pairs = dict(doc.get("pairs", {}))
    count = int(pairs.pop("count", 1))
    seed = int(pairs.pop("seed", 0))
    outliers = float(pairs.pop("outlier_fraction", 0.0))
    bad = set(pairs) - _PAIR_KEYS
    if bad:
        raise FormatError(f"unknown [pairs] keys {sorted(bad)}", path=path)
    if count < 1:
        raise FormatError("[pairs] count must be >= 1", path=path)
    try:
        specs = tuple(SyntheticPairSpec(**{**pairs, "seed": seed + k}) for k in range(count))
        base = apply_overrides(PipelineConfig(),
                               [(k, _raw(v)) for k, v in doc.get("pipeline", {}).items()])
        combos = []
        for entry in doc.get("combo", []):
            extra = set(entry) - {"name", "matcher", "filter", "estimator"}
            if extra:
                raise ParameterError(f"unknown combo keys {sorted(extra)}")
            filt = entry.get("filter", 0.15)
            if isinstance(filt, str) and filt.lower() == "none":
                filt = 1.0
            combos.append(Combo(str(entry["name"]),
                                MATCHER_ALIASES.get(entry.get("matcher", "global_softmax"),
                                                    entry.get("matcher", "global_softmax")),
                                float(filt), entry.get("estimator", "weighted_kabsch")))
        suite = Suite(tuple(combos), specs, base, outliers)
        for c in suite.combos:
            suite.config_for(c)   # validate every combination up front
    except (ParameterError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid suite: {exc}", path=path) from None
    if not suite.combos:
        raise FormatError("suite lists no [[combo]] entries", path=path)
    return suite


def load_suite(path) -> Suite:
    path = Path(path)
    return parse_suite(path.read_text(), path=path)


@dataclass
class PairOutcome:
    rre: float = math.nan
    rte: float = math.nan
    inlier_ratio: float = math.nan
    time_s: float = 0.0
    registered: bool = False
    error: Optional[str] = None


@dataclass
class AblationRow:
    combo: Combo
    outcomes: list = field(default_factory=list)

    def _mean(self, attr):
        vals = [getattr(o, attr) for o in self.outcomes if o.error is None]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def mean_rre(self):
        return self._mean("rre")

    @property
    def mean_rte(self):
        return self._mean("rte")

    @property
    def mean_ir(self):
        return self._mean("inlier_ratio")

    @property
    def mean_time(self):
        return self._mean("time_s")

    @property
    def rr(self):
        # Failed pairs count as not registered.
        return float(np.mean([o.registered for o in self.outcomes]))

    @property
    def failures(self):
        return [(k, o.error) for k, o in enumerate(self.outcomes) if o.error is not None]


@dataclass
class AblationReport:
    rows: list

    def row(self, name: str) -> AblationRow:
        for r in self.rows:
            if r.combo.name == name:
                return r
        raise KeyError(name)

    def to_csv(self, deterministic: bool = False) -> str:
        """One line per combination, then one line per failed (combination, pair).

        ``deterministic`` writes 0 for wall-clock times so reruns are byte-equal.
        """
        out = _io.StringIO()
        out.write(CSV_HEADER + "\n")

        def g(v):
            return "nan" if not np.isfinite(v) else f"{v:.6f}"

        def filt(f):
            return "none" if f >= 1.0 else g(f)

        for r in self.rows:
            c = r.combo
            t = 0.0 if deterministic else r.mean_time
            out.write(",".join([_csv_field(c.name), c.matcher, filt(c.filter), c.estimator,
                                g(r.mean_rre), g(r.mean_rte), g(r.rr), g(r.mean_ir), g(t)]) + "\n")
        for r in self.rows:
            c = r.combo
            for k, err in r.failures:
                out.write(",".join([_csv_field(f"{c.name} [pair {k}: {err}]"), c.matcher,
                                    filt(c.filter), c.estimator,
                                    "failed", "failed", "0.000000", "failed", "failed"]) + "\n")
        return out.getvalue()


def _csv_field(s: str) -> str:
    if any(ch in s for ch in ',"\n'):
        return '"' + s.replace('"', '""') + '"'
    return s


def _run_pair(suite: Suite, k: int) -> list:
    """Outcomes of every combination on pair ``k`` (stage results shared)."""
    spec = suite.pairs[k]
    try:
        x, y, gt = generate_synthetic_pair(spec)
        front = prepare(x, y, suite.base)
    except RegistrationError as exc:
        return [PairOutcome(error=type(exc).__name__) for _ in suite.combos]
    thresholds = suite.base.thresholds
    front_time = sum(front.timing.values())
    correlations = {}
    results = []
    for combo in suite.combos:
        cfg = dataclasses.replace(suite.config_for(combo), seed=spec.seed)
        timing = {}
        try:
            if combo.matcher not in correlations:
                t = {}
                correlations[combo.matcher] = (correlate(front, cfg, t), t)
            c, t = correlations[combo.matcher]
            timing.update(t)
            wc = select(front, c, cfg, timing)
            res = estimate(front, wc, x, y, cfg, timing)
        except RegistrationError as exc:
            results.append(PairOutcome(error=type(exc).__name__))
            continue
        r_deg, t_m = rre(res.transform, gt), rte(res.transform, gt)
        ir = inlier_ratio(res.correspondences, front.source, front.target, gt, thresholds)
        ok = not res.flagged and is_registered(r_deg, t_m, thresholds)
        results.append(PairOutcome(r_deg, t_m, ir, front_time + sum(timing.values()), ok))
    return results


def run_ablation(suite, threads: Optional[int] = None) -> AblationReport:
    """Run every combination on every pair; pairs run in parallel.

    ``suite`` is a :class:`Suite`, suite text, or ``None`` for the default
    suite. Results are aggregated in pair order, so the report does not
    depend on the thread count.
    """
    if suite is None:
        suite = parse_suite(DEFAULT_SUITE)
    elif isinstance(suite, str):
        suite = parse_suite(suite)
    per_pair = parallel_map(lambda k: _run_pair(suite, k), range(len(suite.pairs)), threads)
    rows = [AblationRow(c, [pp[i] for pp in per_pair]) for i, c in enumerate(suite.combos)]
    return AblationReport(rows)
