"""Command line front end: ``msfspoof gen-trace | run | profile | report``.

Exit status is 0 on success, 1 when the input fails validation and 2 when
a run fails at runtime. ``run`` and ``profile`` read an experiment config
(TOML) and write every artifact into the configured output directory
together with ``manifest.json``. Outputs are staged in a sibling temporary
directory and moved into place only when the whole campaign succeeded.

Only two environment variables are honoured: ``MSFSPOOF_OUTPUT_DIR``
replaces the output directory and ``MSFSPOOF_JOBS`` the worker count.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Callable

from . import __version__
from . import config as C
from . import experiments as X
from .analysis import LOCAL, HIGHWAY, goal_thresholds, random_success_rate, success_metrics
from .attack import dump_outcomes, load_outcomes
from .config import ConfigError
from .profiler import ProfilingConfig
from .replay import Replay
from .trace import (TraceFormatError, TraceValidationError, UnconfidentPeriod, generate_synthetic_trace,
                    inject_unconfident_periods, read_trace, write_trace)

log = logging.getLogger("msfspoof")

EXPERIMENTS = ("upper_bound", "ripper_grid", "ablation", "random_baseline", "robustness", "closed_loop", "profile")
MPH = 0.44704
ENV_OUTPUT = "MSFSPOOF_OUTPUT_DIR"
ENV_JOBS = "MSFSPOOF_JOBS"


class UsageError(ValueError):
    pass


# -- small helpers ---------------------------------------------------------------

def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _goal(value, path: str) -> float:
    """A goal is a number of metres or a name such as ``off_road`` or ``highway.wrong_way``."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        if value <= 0:
            raise ConfigError(path, "goal must be positive")
        return float(value)
    if isinstance(value, str):
        road, _, name = value.rpartition(".")
        geom = {"": LOCAL, "local": LOCAL, "highway": HIGHWAY}.get(road.lower())
        th = goal_thresholds(geom) if geom else None
        if th is not None and name in ("off_road", "wrong_way", "touch_lane_line"):
            return float(getattr(th, name))
    raise ConfigError(path, f"unknown goal {value!r}")


def _num(sec: dict, key: str, path: str, default=None, *, positive=False, integer=False):
    v = sec.get(key, default)
    if v is None:
        raise ConfigError(f"{path}.{key}", "missing")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"{path}.{key}", "expected an integer")
    if positive and not v > 0:
        raise ConfigError(f"{path}.{key}", "must be positive")
    return int(v) if integer else float(v)


def parse_period(spec: str) -> UnconfidentPeriod:
    """``start:end:scale:bias`` as used by ``gen-trace --unconfident``."""
    parts = spec.split(":")
    if len(parts) != 4:
        raise UsageError(f"--unconfident expects start:end:scale:bias, got {spec!r}")
    try:
        start, end, scale, bias = (float(p) for p in parts)
        return UnconfidentPeriod(start, end, scale, bias)
    except ValueError as exc:
        raise UsageError(f"--unconfident {spec!r}: {exc}") from exc


# -- experiment config -----------------------------------------------------------

class Experiment:
    """A validated experiment config plus the resolved trace(s)."""

    def __init__(self, path: Path, out_override: str | None = None, jobs_override: int | None = None):
        self.path = path
        try:
            self.raw_bytes = path.read_bytes()
        except OSError as exc:
            raise ConfigError(str(path), f"cannot read config ({exc.strerror})") from exc
        raw = C.load_toml(path)
        known = set(C.defaults()) | {"experiment", "output_dir", "jobs", "seed", "campaign", "trace"}
        for key in raw:
            if key not in known:
                raise ConfigError(key, f"unknown key; expected one of {', '.join(sorted(known))}")
        self.cfg = C.merge(C.defaults(), raw)
        name = str(raw.get("experiment", "")).lower()
        if name not in EXPERIMENTS:
            raise ConfigError("experiment", f"unknown experiment {raw.get('experiment')!r}; "
                                            f"expected one of {', '.join(EXPERIMENTS)}")
        self.name = name
        base = path.parent
        out = out_override or raw.get("output_dir")
        if not out:
            raise ConfigError("output_dir", "missing")
        self.output_dir = C.resolve_path(base, str(out))
        self.jobs = jobs_override if jobs_override is not None else int(raw.get("jobs", X.default_jobs()))
        if self.jobs < 1:
            raise ConfigError("jobs", "must be at least 1")
        self.seed = _num(raw, "seed", "", 0, integer=True)
        self.campaign = dict(raw.get("campaign", {}))
        if not isinstance(raw.get("campaign", {}), dict):
            raise ConfigError("campaign", "expected a table")
        # building these validates every table the campaign will touch
        self.kf = C.kf_config(self.cfg)
        self.ctrl = C.controller_config(self.cfg)
        att = C.get(self.cfg, "attack", {})
        self.trigger = _num(att, "trigger_threshold", "attack", positive=True)
        self.max_duration = _num(att, "max_duration", "attack", positive=True)
        self.grid_d = C.grid(att.get("grid_d"), "attack.grid_d")
        self.grid_f = C.grid(att.get("grid_f"), "attack.grid_f")
        if min(self.grid_d) <= 0:
            raise ConfigError("attack.grid_d", "distances must be positive")
        if min(self.grid_f) < 1:
            raise ConfigError("attack.grid_f", "bases must be at least 1")
        self.goal = _goal(self.campaign.get("goal", "off_road"), "campaign.goal")
        self.min_duration = _num(self.campaign, "min_duration", "campaign", self.max_duration, positive=True)
        self.trace_paths = self._trace_paths(raw.get("trace", {}), base)
        self.gps_only = bool(C.get(raw, "trace.gps_only", False))
        if self.name == "profile":
            p = C.get(self.cfg, "profiling", {})
            self.pcfg = _profiling_config(p, self.grid_d, self.grid_f)

    @staticmethod
    def _trace_paths(sec, base: Path) -> list[Path]:
        if not isinstance(sec, dict):
            raise ConfigError("trace", "expected a table")
        paths = sec.get("paths", [sec["path"]] if "path" in sec else [])
        out = []
        for k, p in enumerate(paths):
            q = C.resolve_path(base, str(p))
            if not q.exists():
                raise ConfigError(f"trace.paths[{k}]" if "paths" in sec else "trace.path", f"no such file: {q}")
            out.append(q)
        return out

    def traces(self):
        if not self.trace_paths:
            trs = [X.unconfident_trace(self.cfg)]
        else:
            trs = [read_trace(p) for p in self.trace_paths]
        if self.gps_only:
            trs = [X.gps_only(t) for t in trs]
        return trs

    def manifest(self, files: dict[str, bytes]) -> bytes:
        body = {
            "tool": "msfspoof",
            "version": __version__,
            "experiment": self.name,
            "config": self.path.name,
            "config_sha256": _sha256(self.raw_bytes),
            "seed": self.seed,
            "noise_seed": C.get(self.cfg, "noise.seed"),
            "unconfident_seed": C.get(self.cfg, "unconfident.seed"),
            "traces": [{"path": os.path.relpath(p, self.path.parent), "sha256": _sha256(p.read_bytes())} for p in self.trace_paths],
            "files": {k: _sha256(v) for k, v in sorted(files.items())},
        }
        return (json.dumps(body, indent=2, sort_keys=True) + "\n").encode()


def _profiling_config(p: dict, grid_d, grid_f) -> ProfilingConfig:
    try:
        return ProfilingConfig(
            grid_d=grid_d, grid_f=grid_f,
            trials_per_round=_num(p, "trials_per_round", "profiling", positive=True, integer=True),
            min_success_rate=_num(p, "min_success_rate", "profiling"),
            safe_threshold=_num(p, "safe_threshold", "profiling"),
            trial_cap=_num(p, "trial_cap", "profiling"))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("profiling", str(exc)) from exc


# -- campaigns -> files ----------------------------------------------------------

def _csv(rows: list[list]) -> bytes:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue().encode()


def _json(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()


def _outcomes_bytes(outcomes) -> bytes:
    with tempfile.TemporaryDirectory() as tmp:
        p = Path(tmp) / "o.jsonl"
        dump_outcomes(outcomes, p)
        return p.read_bytes()


def _single(exp: Experiment):
    trs = exp.traces()
    if len(trs) != 1:
        raise ConfigError("trace.paths", f"{exp.name} takes exactly one trace")
    return Replay(trs[0], exp.kf)


def _starts(exp: Experiment, rep: Replay) -> list[float]:
    starts = X.eligible_starts(rep, exp.max_duration)
    if not starts:
        raise ConfigError("trace", f"trace too short for a {exp.max_duration:g} s attack")
    stride = _num(exp.campaign, "start_stride", "campaign", 1, positive=True, integer=True)
    return starts[::stride]


def _best_params(exp: Experiment) -> tuple[float, float]:
    d = _num(exp.campaign, "d", "campaign", positive=True)
    f = _num(exp.campaign, "f", "campaign")
    if f < 1:
        raise ConfigError("campaign.f", "must be at least 1")
    return d, f


def run_ripper_grid(exp: Experiment) -> dict[str, bytes]:
    rep = _single(exp)
    starts = _starts(exp, rep)
    outs = X.ripper_grid(rep, starts, exp.grid_d, exp.grid_f, trigger=exp.trigger,
                         max_duration=exp.max_duration, jobs=exp.jobs)
    rep_goal = success_metrics(outs, exp.goal, exp.min_duration)
    return {"outcomes.jsonl": _outcomes_bytes(outs), "report.json": rep_goal.to_json().encode(),
            "report.csv": rep_goal.to_csv().encode()}


def run_ablation(exp: Experiment) -> dict[str, bytes]:
    rep = _single(exp)
    rows = X.ablation(rep, _starts(exp, rep), exp.grid_d, exp.grid_f, goal=exp.goal,
                      min_duration=exp.min_duration, trigger=exp.trigger, jobs=exp.jobs)
    table = [["variant", "d", "f", "rate"]] + [[r.variant, f"{r.d:g}", f"{r.f:g}", f"{r.rate:.6f}"] for r in rows]
    return {"ablation.csv": _csv(table),
            "report.json": _json({"goal": exp.goal, "min_duration": exp.min_duration,
                                  "rows": [r.__dict__ for r in rows]})}


def run_random_baseline(exp: Experiment) -> dict[str, bytes]:
    rep = _single(exp)
    att = C.get(exp.cfg, "attack", {})
    trials = _num(att, "random_trials", "attack", positive=True, integer=True)
    rmax = _num(att, "random_range_max", "attack")
    outs = X.random_baseline(rep, _starts(exp, rep), rmax, trials, max_duration=exp.max_duration, jobs=exp.jobs)
    mean, per = random_success_rate(outs, exp.goal, exp.min_duration)
    return {"outcomes.jsonl": _outcomes_bytes(outs),
            "report.json": _json({"goal": exp.goal, "min_duration": exp.min_duration, "range_max": rmax,
                                  "trials": trials, "mean_rate": mean, "per_trial": per})}


def run_robustness(exp: Experiment) -> dict[str, bytes]:
    rep = _single(exp)
    d, f = _best_params(exp)
    mults = [float(m) for m in exp.campaign.get("multipliers", [0.0, 1.0, 2.0, 3.0])]
    reps = _num(exp.campaign, "repetitions", "campaign", 100, positive=True, integer=True)
    se = C.get(exp.cfg, "spoof_error", {})
    rows = X.robustness(rep, _starts(exp, rep), d, f, multipliers=mults, repetitions=reps, goal=exp.goal,
                        min_duration=exp.min_duration, trigger=exp.trigger,
                        pos_sigma=_num(se, "pos_sigma", "spoof_error"),
                        var_sigma=_num(se, "var_sigma", "spoof_error"), jobs=exp.jobs)
    table = [["multiplier", "mean_rate", "std_rate"]] + [
        [f"{r.multiplier:g}", f"{r.mean_rate:.6f}", f"{r.std_rate:.6f}"] for r in rows]
    return {"robustness.csv": _csv(table),
            "report.json": _json({"d": d, "f": f, "goal": exp.goal,
                                  "rows": [{"multiplier": r.multiplier, "mean_rate": r.mean_rate,
                                            "std_rate": r.std_rate, "rates": list(r.rates)} for r in rows]})}


def run_closed_loop(exp: Experiment) -> dict[str, bytes]:
    rep = _single(exp)
    d, f = _best_params(exp)
    starts = _starts(exp, rep)
    closed = X.closed_loop(rep, starts, d, f, exp.ctrl, trigger=exp.trigger,
                           max_duration=exp.max_duration, jobs=exp.jobs)
    opened = X.ripper_grid(rep, starts, [d], [f], trigger=exp.trigger, max_duration=exp.max_duration,
                           jobs=exp.jobs)
    rc = success_metrics(closed, exp.goal, exp.min_duration).rate(d, f)
    ro = success_metrics(opened, exp.goal, exp.min_duration).rate(d, f)
    return {"outcomes.jsonl": _outcomes_bytes(closed),
            "report.json": _json({"d": d, "f": f, "goal": exp.goal, "closed_loop_rate": rc,
                                  "open_loop_rate": ro})}


def run_upper_bound(exp: Experiment) -> dict[str, bytes]:
    rep = _single(exp)
    n = _num(exp.campaign, "n_points", "campaign", 10, positive=True, integer=True)
    stride = _num(exp.campaign, "window_stride", "campaign", 1, positive=True, integer=True)
    cand = exp.campaign.get("candidates")
    if isinstance(cand, dict):
        cand = [0.0] + [c for c in C.grid(cand, "campaign.candidates") if c > 0]
    res = X.upper_bound(rep, n_points=n, stride=stride, candidates=cand, jobs=exp.jobs)
    if not res:
        raise ConfigError("trace", f"trace has fewer than {n} GPS epochs")
    lines = "".join(json.dumps(r.__dict__, sort_keys=True) + "\n" for r in res).encode()
    table = [["start", "max_deviation", "fitted_base"]] + [
        [f"{r.start:g}", f"{r.max_deviation:.9f}", f"{r.fitted_base:.3f}"] for r in res]
    summary = {
        "n_windows": len(res), "goal": exp.goal,
        "max_deviation": max(r.max_deviation for r in res),
        "max_fitted_base": max(r.fitted_base for r in res),
        "windows_reaching_goal": sum(r.max_deviation >= exp.goal for r in res),
        "takeover_windows": sum(r.fitted_base > 1.1 for r in res),
    }
    return {"windows.jsonl": lines, "report.csv": _csv(table), "report.json": _json(summary)}


def run_profile(exp: Experiment) -> dict[str, bytes]:
    reps = [Replay(t, exp.kf) for t in exp.traces()]
    res = X.profile(reps, exp.pcfg, exp.seed)
    return {"profile.json": res.to_json().encode(), "session.csv": res.session_csv().encode()}


RUNNERS: dict[str, Callable[[Experiment], dict[str, bytes]]] = {
    "upper_bound": run_upper_bound, "ripper_grid": run_ripper_grid, "ablation": run_ablation,
    "random_baseline": run_random_baseline, "robustness": run_robustness, "closed_loop": run_closed_loop,
    "profile": run_profile,
}


def execute(exp: Experiment) -> Path:
    """Run the campaign and atomically publish its files; returns the output directory."""
    files = RUNNERS[exp.name](exp)
    files["manifest.json"] = exp.manifest(files)
    out = exp.output_dir
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        for name, data in files.items():
            (stage / name).write_bytes(data)
        if out.exists():
            shutil.rmtree(out)
        stage.rename(out)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    return out


# -- subcommands -----------------------------------------------------------------

def cmd_gen_trace(args) -> int:
    if not args.duration > 0:
        raise UsageError("--duration must be positive")
    cfg = C.defaults()
    overrides = {"seed": args.seed}
    if args.noise_free:
        overrides.update(gps_pos_sigma=0.0, lidar_pos_sigma=0.0, imu_accel_sigma=0.0, imu_gyro_sigma=0.0)
    sc = C.scenario(C.merge(cfg, {"scenario": {"speed_mps": args.speed_mph * MPH, "heading": args.heading}}))
    tr = generate_synthetic_trace(args.duration, sc, C.noise_model(cfg, **overrides))
    periods = [parse_period(s) for s in args.unconfident or []]
    if periods:
        tr = inject_unconfident_periods(tr, periods, args.unconfident_seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trace(tr, out)
    log.info("wrote %d events to %s", len(tr), out)
    return 0


def _env_overrides(args) -> tuple[str | None, int | None]:
    out = args.out_dir or os.environ.get(ENV_OUTPUT) or None
    jobs = args.jobs
    if jobs is None and os.environ.get(ENV_JOBS):
        try:
            jobs = int(os.environ[ENV_JOBS])
        except ValueError as exc:
            raise ConfigError(ENV_JOBS, "expected an integer") from exc
    return out, jobs


def cmd_run(args, require: str | None = None) -> int:
    out, jobs = _env_overrides(args)
    exp = Experiment(Path(args.config), str(Path(out).resolve()) if out else None, jobs)
    if require and exp.name != require:
        raise ConfigError("experiment", f"the {args.command} command needs experiment = {require!r}")
    path = execute(exp)
    print(path)
    return 0


def cmd_report(args) -> int:
    try:
        outs = load_outcomes(args.outcomes)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read outcomes from {args.outcomes}: {exc}") from exc
    if not outs:
        raise UsageError(f"{args.outcomes} holds no outcomes")
    goal = _goal(_maybe_number(args.goal), "--goal")
    if all(o.mode == "random" for o in outs):
        mean, per = random_success_rate(outs, goal, args.min_duration)
        files = {"report.json": _json({"goal": goal, "min_duration": args.min_duration,
                                       "mean_rate": mean, "per_trial": per})}
    else:
        rep = success_metrics(outs, goal, args.min_duration)
        files = {"report.json": rep.to_json().encode(), "report.csv": rep.to_csv().encode()}
    out_dir = Path(args.out_dir or os.environ.get(ENV_OUTPUT) or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, data in files.items():
        (out_dir / name).write_bytes(data)
    sys.stdout.write(files["report.json"].decode())
    return 0


def _maybe_number(s: str):
    try:
        return float(s)
    except ValueError:
        return s


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msfspoof", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"msfspoof {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-trace", help="synthesize a JSONL sensor trace")
    g.add_argument("--duration", type=float, default=300.0, help="seconds")
    g.add_argument("--speed-mph", type=float, default=45.0)
    g.add_argument("--heading", type=float, default=0.0, help="radians")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise-free", action="store_true", help="zero all sensor noise")
    g.add_argument("--unconfident", action="append", metavar="START:END:SCALE:BIAS",
                   help="inject an unconfident LiDAR period (repeatable)")
    g.add_argument("--unconfident-seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output path (.jsonl or .jsonl.gz)")

    for name, helptext in (("run", "run an experiment config"), ("profile", "run a profiling config")):
        r = sub.add_parser(name, help=helptext)
        r.add_argument("config")
        r.add_argument("--out-dir")
        r.add_argument("--jobs", type=int)

    rp = sub.add_parser("report", help="summarize an outcomes JSONL file")
    rp.add_argument("outcomes")
    rp.add_argument("--goal", default="off_road", help="metres or a goal name (off_road, wrong_way, ...)")
    rp.add_argument("--min-duration", type=float, default=120.0)
    rp.add_argument("--out-dir")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; usage problems are validation failures here
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "gen-trace":
            return cmd_gen_trace(args)
        if args.command == "run":
            return cmd_run(args)
        if args.command == "profile":
            return cmd_run(args, require="profile")
        return cmd_report(args)
    except (ConfigError, UsageError, TraceFormatError, TraceValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
