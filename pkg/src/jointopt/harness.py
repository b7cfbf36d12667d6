"""Config-driven experiments and the command-line interface.

A config is a YAML file::

    task:
      name: bitstring          # bitstring | dtree | symreg
      T: 10
      alpha: 0.9
      objective: f2
    method:
      name: joint              # joint | decoupled-anneal | decoupled-evo | decoupled-bfgs
      inner_budget: 100
    train:
      batch_size: 500
      budget: 200000
    seeds: [0, 1, 2]
    output_dir: runs/bitstring

Relative output directories resolve under ``$JOINTOPT_OUTPUT_ROOT`` when it
is set.
"""

import argparse
import csv
import json
import os
import shutil
import sys
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from . import envs
from .baselines import INNER, run_decoupled
from .designs import DesignParseError, parse_design, serialize_design
from .tasks.bitstring import OBJECTIVES, BitstringTask, make_instance
from .tasks.dtree import DecisionTreeTask
from .tasks.symreg import SymbolicRegressionTask, benchmark_info, benchmark_names
from .trainer import TrainConfig, eval_rng, run

OUTPUT_ROOT_VAR = "JOINTOPT_OUTPUT_ROOT"
METHODS = ("joint",) + tuple(f"decoupled-{name}" for name in INNER)

__all__ = ["ExperimentConfig", "run_experiment", "serialize_design", "parse_design",
           "make_task", "main"]


class ConfigError(ValueError):
    pass


_TASK_PARAMS = {
    "bitstring": {"T", "alpha", "objective", "instance_seed"},
    "dtree": {"env", "n_episodes", "h_frac", "max_length", "normalize"},
    "symreg": {"benchmark", "data_seed", "min_length", "max_length"},
}


def make_task(name, seed=0, **params):
    """Build a task from its config block; ``seed`` supplies the default
    instance or dataset seed."""
    unknown = set(params) - _TASK_PARAMS.get(name, set())
    if name not in _TASK_PARAMS:
        raise ConfigError(f"unknown task {name!r}; choose from {sorted(_TASK_PARAMS)}")
    if unknown:
        raise ConfigError(f"unknown {name} parameters: {sorted(unknown)}")
    if name == "bitstring":
        inst_seed = params.get("instance_seed")
        inst = make_instance(int(params.get("T", 10)), float(params.get("alpha", 0.9)),
                             params.get("objective", "f2"),
                             seed if inst_seed is None else int(inst_seed))
        return BitstringTask(inst)
    if name == "dtree":
        if "env" not in params:
            raise ConfigError("dtree task needs an 'env'")
        try:
            spec = envs.get_spec(params["env"])
        except KeyError as exc:
            raise ConfigError(str(exc)) from None
        return DecisionTreeTask(spec, int(params.get("n_episodes", 100)),
                                float(params.get("h_frac", 0.01)), int(params.get("max_length", 32)),
                                bool(params.get("normalize", True)))
    if "benchmark" not in params:
        raise ConfigError("symreg task needs a 'benchmark'")
    if params["benchmark"] not in benchmark_names():
        raise ConfigError(f"unknown benchmark {params['benchmark']!r}")
    return SymbolicRegressionTask(params["benchmark"], int(params.get("data_seed", 0)),
                                  int(params.get("min_length", 4)), int(params.get("max_length", 32)))


@dataclass
class ExperimentConfig:
    task: dict
    method: str = "joint"
    inner_budget: int = 100
    inner_settings: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "runs"

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        unknown = set(d) - {"task", "method", "train", "seeds", "output_dir"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        task = d.get("task")
        if not isinstance(task, dict) or "name" not in task:
            raise ConfigError("config needs a task block with a name")
        method = d.get("method", {"name": "joint"})
        if isinstance(method, str):
            method = {"name": method}
        train = d.get("train", {}) or {}
        known = {f.name for f in fields(TrainConfig)}
        if set(train) - known:
            raise ConfigError(f"unknown train fields: {sorted(set(train) - known)}")
        try:
            tc = TrainConfig(**train)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad train block: {exc}") from None
        seeds = d.get("seeds", [tc.seed])
        cfg = cls(dict(task), method.get("name", "joint"), int(method.get("inner_budget", 100)),
                  dict(method.get("settings", {}) or {}), tc, list(seeds), str(d.get("output_dir", "runs")))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed YAML: {exc}") from None
        return cls.from_dict(data)

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.inner_budget < 1:
            raise ConfigError("inner_budget must be at least 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not all(isinstance(s, int) for s in self.seeds):
            raise ConfigError("seeds must be integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        params = {k: v for k, v in self.task.items() if k != "name"}
        make_task(self.task["name"], self.seeds[0], **params)

    def task_for_seed(self, seed):
        params = {k: v for k, v in self.task.items() if k != "name"}
        return make_task(self.task["name"], seed, **params)

    def to_dict(self):
        d = {"task": self.task, "method": {"name": self.method, "inner_budget": self.inner_budget,
                                           "settings": self.inner_settings},
             "train": asdict(self.train), "seeds": self.seeds, "output_dir": self.output_dir}
        return d


def resolve_output(path):
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_VAR)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def run_one(config, seed):
    task = config.task_for_seed(seed)
    tc = TrainConfig(**{**asdict(config.train), "seed": seed})
    if config.method == "joint":
        result = run(task, tc)
    else:
        inner = config.method.split("-", 1)[1]
        result = run_decoupled(task, tc, inner, config.inner_budget,
                               inner_settings=config.inner_settings)
    return task, result


def _write_seed(outdir, task, result):
    outdir.mkdir(parents=True, exist_ok=True)
    result.ledger.write_csv(outdir / "ledger.csv")
    (outdir / "best_design.txt").write_text(serialize_design(result.best, task) + "\n")
    with open(outdir / "improvements.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_evals", "best_reward"])
        for n, r in result.ledger.improvements:
            w.writerow([n, repr(float(r))])
    audit = getattr(result, "audit", None)
    if audit is not None:
        with open(outdir / "audit.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["skeleton", "inner_evals", "best_inner_reward"])
            for row in audit:
                w.writerow([row.skeleton, row.inner_evals, repr(float(row.best_reward))])


def run_experiment(config, log=print):
    """Run every seed; returns 0 on success, 1 if any run failed."""
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.from_dict(config)
    out = resolve_output(config.output_dir)
    status = 0
    runs = []
    # build in a scratch directory so a failure leaves no partial outputs behind
    out.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=".partial-", dir=out.parent))
    try:
        for seed in config.seeds:
            entry = {"seed": seed}
            try:
                task, result = run_one(config, seed)
                _write_seed(scratch / f"seed_{seed}", task, result)
                entry.update(best_reward=result.best_reward,
                             best_design=serialize_design(result.best, task),
                             n_evals=result.ledger.n_evals,
                             n_episodes=result.ledger.n_episodes,
                             budget_unit=task.budget_unit,
                             iterations=result.iterations,
                             wall_seconds=result.wall_seconds)
                if isinstance(task, SymbolicRegressionTask):
                    entry["test_reward"] = task.test_reward(result.best.tokens, result.best.betas)
                log(f"seed {seed}: best reward {result.best_reward:.6g} after "
                    f"{result.ledger.n_evals} evaluations")
            except Exception as exc:  # reported per seed, run continues
                status = 1
                entry["error"] = f"{type(exc).__name__}: {exc}"
                log(f"seed {seed}: failed with {entry['error']}")
            runs.append(entry)
        summary = {"config": config.to_dict(), "runs": runs}
        (scratch / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        (scratch / "config.yaml").write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))
        if status != 0:
            return status
        if out.exists():
            shutil.rmtree(out)
        scratch.rename(out)
    finally:
        if scratch.exists():
            shutil.rmtree(scratch)
    return status


# -- evaluation of a single design -----------------------------------------------

def task_from_name(name, seed=0, design=None, episodes=None, alpha=0.9, objective="f2"):
    """Resolve ``bitstring``, ``dtree:<env>`` or ``symreg:<benchmark>``."""
    kind, _, arg = name.partition(":")
    if kind == "bitstring":
        if design is None:
            raise ConfigError("bitstring evaluation needs the design to infer T")
        T = len(design.split(","))
        return make_task("bitstring", seed, T=T, alpha=alpha, objective=objective)
    if kind == "dtree":
        params = {"env": arg}
        if episodes is not None:
            params["n_episodes"] = episodes
        return make_task("dtree", seed, **params)
    if kind == "symreg":
        return make_task("symreg", seed, benchmark=arg, data_seed=seed)
    raise ConfigError(f"unknown task {name!r}")


def evaluate_design(text, task, seed=0):
    seq = parse_design(text, task)
    rng = eval_rng(seed, 0) if task.stochastic else None
    out = {"reward": task.evaluate(seq.tokens, seq.betas, rng)}
    if isinstance(task, SymbolicRegressionTask):
        out["test_reward"] = task.test_reward(seq.tokens, seq.betas)
    return out


def _cmd_run(args):
    try:
        config = ExperimentConfig.load(args.config)
        if args.output_dir is not None:
            config.output_dir = args.output_dir
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    status = run_experiment(config)
    print(f"outputs in {resolve_output(config.output_dir)}" if status == 0 else "run failed",
          file=sys.stderr if status else sys.stdout)
    return status


def _cmd_eval(args):
    try:
        task = task_from_name(args.task, args.seed, args.design, args.episodes, args.alpha,
                              args.objective)
        out = evaluate_design(args.design, task, args.seed)
    except (ConfigError, DesignParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for k, v in out.items():
        print(f"{k}: {v!r}")
    return 0


def _cmd_benchmarks(args):
    for name in benchmark_names():
        info = benchmark_info(name)
        lo, hi = info["domain"]
        print(f"{name:12s} d={info['d']}  U({lo},{hi},{info['n']})  {info['formula']}  "
              f"constants={info['constants']}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="jointopt",
                                description="Joint discrete-continuous design optimization.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment from a YAML config")
    r.add_argument("config", help="path to the YAML config")
    r.add_argument("--output-dir", default=None,
                   help=f"override output_dir (relative paths resolve under ${OUTPUT_ROOT_VAR})")
    r.set_defaults(func=_cmd_run)
    e = sub.add_parser("eval", help="evaluate a serialized design")
    e.add_argument("design", help="comma-separated design string, e.g. 'x3<(0.0),a1,a2'")
    e.add_argument("--task", required=True,
                   help="bitstring, dtree:<cartpole|mountaincar|acrobot> or symreg:<benchmark>")
    e.add_argument("--seed", type=int, default=0,
                   help="instance/dataset seed, and episode seed stream for control tasks")
    e.add_argument("--episodes", type=int, default=None, help="episodes per evaluation (dtree)")
    e.add_argument("--alpha", type=float, default=0.9, help="bit weight (bitstring)")
    e.add_argument("--objective", choices=sorted(OBJECTIVES), default="f2",
                   help="parameter objective (bitstring)")
    e.set_defaults(func=_cmd_eval)
    b = sub.add_parser("benchmarks", help="symbolic-regression benchmarks")
    b.add_argument("action", choices=["list"])
    b.set_defaults(func=_cmd_benchmarks)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
