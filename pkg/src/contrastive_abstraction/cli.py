"""Command-line interface: ``abstract``, ``analyze``, ``generate`` and ``scaling``.

Every subcommand accepts ``--config FILE`` (TOML). Keys are flag names with
underscores, either at top level or inside a table named after the
subcommand; flags given on the command line win. Outputs are computed in
full before anything is written, so a failed run leaves no partial files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import (
    AbstractionResult,
    counterfactual_review,
    episode_log_posterior_series,
    episode_traces,
    posterior_distribution,
    prototype_trace,
    semantic_key,
)
from .core import AbstractionError, DatasetError, Prior, SplitNode, TemporalAbstraction, TransitionDataset
from .divergence import ObjectiveConfig
from .io import ModelFormatError, dataset_to_text, dumps_model, load_model, read_dataset
from .state_abstraction import THRESHOLD_MODES, candidate_thresholds
from .synthdata import (
    RandomWalkConfig,
    generate_changepoint_walks,
    generate_random_walks,
    generate_stationary_walks,
    scaling_experiment,
)
from .temporal_abstraction import run_csta

logger = logging.getLogger("contrastive_abstraction")

EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_CONFIG = 4
EXIT_MODEL = 5
EXIT_ABSTRACTION = 6
EXIT_OUTPUT = 7
EXIT_SELECTION = 8


class ConfigError(ValueError):
    pass


class SelectionError(ValueError):
    """Unknown episode, window or timestep."""


def _fmt(v: float) -> str:
    return f"{float(v):.12g}"


def _masked_fmt(v) -> str:
    return "null" if v is np.ma.masked else _fmt(v)


# ---------------------------------------------------------------------------
# abstract
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    input: str
    output: str
    input_format: str | None = None
    prior: str = "counts"
    alpha: float = 0.05
    beta: float = 0.01
    epsilon: int = 1
    t_init_width: int = 1
    threshold_mode: str = "percentiles"
    threshold_count: int = 19
    max_states: int = 64
    max_windows: int = 32
    dim_names: tuple[str, ...] | None = None
    edge_threshold: float = 0.01
    seed: int = 0

    def validate(self, dataset: TransitionDataset | None = None) -> None:
        if self.prior not in ("counts", "uniform"):
            raise ConfigError(f"prior must be 'counts' or 'uniform', got {self.prior!r}")
        if not (self.alpha >= 0 and self.beta >= 0):
            raise ConfigError("alpha and beta must be nonnegative")
        if self.epsilon < 1:
            raise ConfigError("epsilon must be at least 1")
        if self.t_init_width < 1:
            raise ConfigError("t_init_width must be at least 1")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ConfigError(f"threshold_mode must be one of {', '.join(THRESHOLD_MODES)}")
        if self.threshold_mode != "values" and self.threshold_count < 1:
            raise ConfigError("threshold_count must be at least 1")
        if self.max_states < 1 or self.max_windows < 1:
            raise ConfigError("max_states and max_windows must be at least 1")
        if not 0 <= self.edge_threshold <= 1:
            raise ConfigError("edge_threshold must lie in [0, 1]")
        if dataset is not None and self.dim_names is not None and len(self.dim_names) != dataset.D:
            raise ConfigError(f"{len(self.dim_names)} dim_names given for {dataset.D}-D data")

    def echo(self) -> dict:
        """Settings that affect results; paths are left out so outputs do not depend on them."""
        d = asdict(self)
        for key in ("input", "output", "input_format"):
            d.pop(key)
        d["dim_names"] = list(self.dim_names) if self.dim_names else None
        return d


def _names(dim_names, D: int) -> list[str]:
    return list(dim_names) if dim_names else [f"s_{d}" for d in range(1, D + 1)]


def _state_labels(result: AbstractionResult) -> list[str]:
    labels = [f"x{x + 1}" for x in range(result.m)]
    if result.abstraction.has_terminal:
        labels.append("te")
    return labels


def render_tree(node: SplitNode, names: Sequence[str], depth: int = 0) -> list[str]:
    pad = "  " * depth
    if node.is_leaf:
        return [f"{pad}state {node.state + 1}"]
    cond = f"{names[node.dim]} < {node.threshold:.6g}"
    return ([f"{pad}if {cond}:"] + render_tree(node.lower, names, depth + 1)
            + [f"{pad}else:"] + render_tree(node.upper, names, depth + 1))


def render_dot(result: AbstractionResult, w: int, keys: Sequence[str], edge_threshold: float) -> str:
    """Graphviz digraph for window ``w``.

    Node width and fill opacity scale with marginal visitation, edge pen
    width and opacity with joint probability. Edges below
    ``edge_threshold`` are omitted.
    """
    J = result.joint.probs[w]
    vis = J.sum(axis=1)
    vmax = vis.max() if vis.max() > 0 else 1.0
    jmax = J.max() if J.max() > 0 else 1.0
    l, u = result.windows.windows[w]
    term = result.abstraction.terminal_index
    lines = [f"digraph window_{w + 1} {{",
             f'  graph [label="window {w + 1}: chains {l}-{u - 1}", labelloc=t];',
             '  node [shape=circle, style=filled, fontname="Helvetica"];']
    for x in range(result.abstraction.size):
        frac = vis[x] / vmax
        opacity = int(round(32 + 223 * frac))
        shape = "doublecircle" if x == term else "circle"
        label = "te" if x == term else str(x + 1)
        tip = keys[x].replace('"', '\\"')
        lines.append(f'  x{x + 1} [label="{label}", shape={shape}, width={0.3 + 0.9 * math.sqrt(frac):.3f}, '
                     f'fillcolor="#1f77b4{opacity:02x}", tooltip="{tip}", visitation="{_fmt(vis[x])}"];')
    for a in range(J.shape[0]):
        for b in range(J.shape[1]):
            p = J[a, b]
            if p <= 0 or p < edge_threshold:
                continue
            frac = p / jmax
            lines.append(f'  x{a + 1} -> x{b + 1} [penwidth={0.5 + 4.5 * frac:.3f}, '
                         f'color="#000000{int(round(32 + 223 * frac)):02x}", probability="{_fmt(p)}", label="{p:.3f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def _csv(rows: list[list[str]]) -> str:
    return "\n".join(",".join(r) for r in rows) + "\n"


def render_abstract_outputs(result: AbstractionResult, config: RunConfig, names: list[str],
                            input_digest: str) -> dict[str, str]:
    echo = {**config.echo(), "input_sha256": input_digest}
    files = {"model.json": dumps_model(result, echo, names)}
    abstraction = result.abstraction
    tree = render_tree(abstraction.tree, names)
    if abstraction.has_terminal:
        tree.append(f"terminal pseudo-state: state {abstraction.m + 1}")
    files["tree.txt"] = "\n".join(tree) + "\n"
    keys = semantic_key(abstraction, names)
    files["semantic_key.txt"] = "".join(f"{x + 1}: {label}\n" for x, label in enumerate(keys))
    labels = _state_labels(result)
    vis = result.visitation()
    rows = [["window", "first_chain", "last_chain", "weight", *labels]]
    for w, (l, u) in enumerate(result.windows.windows):
        rows.append([str(w + 1), str(l), str(u - 1), _fmt(result.joint.weights[w]), *(_fmt(v) for v in vis[w])])
    files["visitation.csv"] = _csv(rows)
    P = result.conditional.probs
    for x in range(abstraction.m):
        rows = [["window", "row_mass", *labels]]
        for w in range(result.n):
            rows.append([str(w + 1), _fmt(vis[w, x]), *(_fmt(v) for v in P[w, x])])
        files[f"outbound_x{x + 1}.csv"] = _csv(rows)
    for w in range(result.n):
        files[f"graph_w{w + 1}.dot"] = render_dot(result, w, keys, config.edge_threshold)
    return files


def run_abstract(config: RunConfig) -> dict[str, str]:
    config.validate()
    dataset = read_dataset(config.input, config.input_format)
    config.validate(dataset)
    digest = hashlib.sha256(Path(config.input).read_bytes()).hexdigest()
    prior = Prior.build(dataset, config.prior)
    count = None if config.threshold_mode == "values" else config.threshold_count
    cands = candidate_thresholds(dataset, config.threshold_mode, count)
    t_init = TemporalAbstraction.uniform(dataset.k, config.t_init_width)
    result = run_csta(dataset, prior, t_init, cands, None, ObjectiveConfig(config.alpha, config.beta),
                      config.epsilon, config.max_states, config.max_windows)
    logger.info("abstraction: m=%d states, n=%d windows", result.m, result.n)
    return render_abstract_outputs(result, config, _names(config.dim_names, dataset.D), digest)


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


def _check_consistent(result: AbstractionResult, dataset: TransitionDataset) -> None:
    if dataset.D != result.abstraction.D:
        raise ModelFormatError(f"model is {result.abstraction.D}-D but dataset is {dataset.D}-D")
    if dataset.k != result.windows.k:
        raise ModelFormatError(f"model covers {result.windows.k} chains but dataset has {dataset.k}")
    if dataset.has_terminal and not result.abstraction.has_terminal:
        raise ModelFormatError("dataset has terminal records but the model has no terminal state")


def run_analyze(model_path, input_path, episodes: Sequence[int] = (), windows: Sequence[int] = (),
                t: int | None = None, input_format: str | None = None) -> dict[str, str]:
    result, _, names = load_model(model_path)
    dataset = read_dataset(input_path, input_format)
    _check_consistent(result, dataset)
    traces = episode_traces(dataset, result.abstraction)
    labels = _state_labels(result)
    names = names or _names(None, dataset.D)
    if t is not None and not episodes:
        raise SelectionError("--t needs at least one --episode")
    if not episodes and not windows:
        windows = range(1, result.n + 1)
    files = {}
    for w in windows:
        if not 1 <= w <= result.n:
            raise SelectionError(f"window {w} outside 1..{result.n}")
        try:
            proto = prototype_trace(result, traces, w - 1)
        except ValueError as exc:
            raise SelectionError(str(exc)) from None
        rows = [["t", "chain", "abstract_state", *names]]
        recs = proto.records
        for step, x in enumerate(proto.abstract_path):
            if step < len(recs):
                coords = dataset.states[recs[step]]
            else:
                last = recs[-1]
                coords = None if dataset.terminal[last] else dataset.successors[last]
            cells = [""] * dataset.D if coords is None else [repr(float(v)) for v in coords]
            rows.append([str(step), str(proto.chain), labels[x], *cells])
        files[f"prototype_w{w}.csv"] = _csv(rows)
    for i in episodes:
        if not 1 <= i <= len(traces):
            raise SelectionError(f"episode {i} outside 1..{len(traces)}")
        ep = traces[i - 1]
        series = episode_log_posterior_series(result, ep)
        rows = [["t", "window", "log_posterior", "baseline_subtracted", "posterior"]]
        for step in range(ep.length + 1):
            post = posterior_distribution(series.log_posterior[:, step])
            for w in range(result.n):
                rows.append([str(step), str(w + 1), _masked_fmt(series.log_posterior[w, step]),
                             _masked_fmt(series.relative[w, step]), _fmt(post[w])])
        files[f"posterior_ep{i}.csv"] = _csv(rows)
        if t is not None:
            if not 0 <= t < ep.length:
                raise SelectionError(f"t={t} outside 0..{ep.length - 1} for episode {i}")
            rows = [["rank", "successor", "factual", "tv_distance", *(f"posterior_w{w + 1}" for w in range(result.n))]]
            for rank, cf in enumerate(counterfactual_review(result, ep, t), 1):
                rows.append([str(rank), labels[cf.successor], str(int(cf.factual)), _fmt(cf.tv_distance),
                             *(_fmt(p) for p in cf.posterior)])
            files[f"counterfactual_ep{i}_t{t}.csv"] = _csv(rows)
    return files


# ---------------------------------------------------------------------------
# generate / scaling
# ---------------------------------------------------------------------------


def run_generate(kind: str, config: RandomWalkConfig, output: str, i_star: int | None = None,
                 heading: float = 0.0, fmt: str | None = None) -> dict[str, str]:
    if kind == "rotating":
        data = generate_random_walks(config)
    elif kind == "changepoint":
        if i_star is None:
            raise ConfigError("changepoint generation needs --i-star")
        data = generate_changepoint_walks(config, i_star)
    elif kind == "stationary":
        data = generate_stationary_walks(config, heading)
    else:
        raise ConfigError(f"unknown generator {kind!r}")
    path = Path(output)
    fmt = fmt or ("jsonl" if path.suffix.lower() in (".jsonl", ".ndjson", ".json") else "csv")
    meta = {"generator": kind, **asdict(config), "transitions": len(data)}
    if kind == "changepoint":
        meta["i_star"] = i_star
    if kind == "stationary":
        meta["heading"] = heading
    return {path.name: dataset_to_text(data, fmt),
            path.with_suffix(".meta.json").name: json.dumps(meta, indent=2) + "\n"}


def run_scaling(k: int, T: int, vs: Sequence[float], sigmas: Sequence[float], max_m: int, max_n: int,
                strategies: Sequence[str], seeds: Sequence[int], thresholds_per_dim: int = 19,
                n_states: int = 8) -> dict[str, str]:
    if max_m < 1 or max_n < 1:
        raise ConfigError("max_m and max_n must be at least 1")
    files = {}
    summary = [["axis", "v", "sigma", "size", "strategy", "mean_jsd", "std_jsd"]]
    for v in vs:
        for sigma in sigmas:
            res = scaling_experiment(RandomWalkConfig(k, T, v, sigma, 0), max_m, max_n, strategies, seeds,
                                     thresholds_per_dim, n_states)
            tag = f"v{v:g}_sigma{sigma:g}"
            for axis, rows in (("m", res.by_m), ("n", res.by_n)):
                files[f"scaling_{axis}_{tag}.csv"] = _csv(
                    [["size", "strategy", "seed", "jsd"]]
                    + [[str(r.size), r.strategy, str(r.seed), _fmt(r.jsd)] for r in rows])
                for size, strat, mu, sd in res.summary(axis):
                    summary.append([axis, f"{v:g}", f"{sigma:g}", str(size), strat, _fmt(mu), _fmt(sd)])
    files["scaling_summary.csv"] = _csv(summary)
    return files


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML file with default values for this subcommand")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="contrastive-abstraction",
                                     description="Contrastive spatiotemporal abstraction of trajectory data.")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("abstract", help="build a state and temporal abstraction")
    _add_common(a)
    a.add_argument("--input", "-i", help="dataset CSV or JSONL")
    a.add_argument("--output", "-o", help="output directory")
    a.add_argument("--input-format", choices=["csv", "jsonl"])
    a.add_argument("--prior", choices=["counts", "uniform"], default="counts")
    a.add_argument("--alpha", type=float, default=0.05, help="penalty per extra abstract state")
    a.add_argument("--beta", type=float, default=0.01, help="penalty per extra window")
    a.add_argument("--epsilon", type=int, default=1, help="minimum window width in chains")
    a.add_argument("--t-init-width", type=int, default=1,
                   help="width of the uniform windows used while splitting states (1 = one per chain)")
    a.add_argument("--threshold-mode", choices=THRESHOLD_MODES, default="percentiles")
    a.add_argument("--threshold-count", type=int, default=19, help="candidates per dimension")
    a.add_argument("--max-states", type=int, default=64)
    a.add_argument("--max-windows", type=int, default=32)
    a.add_argument("--dim-names", nargs="+")
    a.add_argument("--edge-threshold", type=float, default=0.01,
                   help="omit DOT edges with joint probability below this")
    a.add_argument("--seed", type=int, default=0, help="recorded in the model; the algorithm is deterministic")

    z = sub.add_parser("analyze", help="posteriors, prototypes and counterfactuals from a saved model")
    _add_common(z)
    z.add_argument("--model", "-m", help="model.json written by 'abstract'")
    z.add_argument("--input", "-i", help="the dataset the model was built from")
    z.add_argument("--output", "-o", help="output directory")
    z.add_argument("--input-format", choices=["csv", "jsonl"])
    z.add_argument("--episode", type=int, action="append", default=None,
                   help="1-based episode number in chain/file order (repeatable)")
    z.add_argument("--window", type=int, action="append", default=None, help="1-based window (repeatable)")
    z.add_argument("--t", type=int, help="0-based timestep for a counterfactual review")

    g = sub.add_parser("generate", help="write a synthetic random-walk dataset")
    _add_common(g)
    g.add_argument("--kind", choices=["rotating", "changepoint", "stationary"], default="rotating")
    g.add_argument("--k", type=int, default=100)
    g.add_argument("--T", type=int, default=100)
    g.add_argument("--v", type=float, default=0.05)
    g.add_argument("--sigma", type=float, default=0.01)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--i-star", type=int)
    g.add_argument("--heading", type=float, default=0.0, help="heading in radians for 'stationary'")
    g.add_argument("--format", choices=["csv", "jsonl"])
    g.add_argument("--output", "-o", help="dataset path")

    s = sub.add_parser("scaling", help="JSD against abstraction size, greedy vs random splits")
    _add_common(s)
    s.add_argument("--k", type=int, default=100)
    s.add_argument("--T", type=int, default=100)
    s.add_argument("--v", type=float, nargs="+", default=[0.02, 0.05])
    s.add_argument("--sigma", type=float, nargs="+", default=[0.01, 0.05])
    s.add_argument("--max-m", type=int, default=32)
    s.add_argument("--max-n", type=int, default=16)
    s.add_argument("--strategy", nargs="+", choices=["greedy", "random"], default=["greedy", "random"])
    s.add_argument("--seeds", type=int, default=10, help="number of seeds")
    s.add_argument("--first-seed", type=int, default=0)
    s.add_argument("--thresholds-per-dim", type=int, default=19)
    s.add_argument("--n-states", type=int, default=8, help="state count fixed for the window curves")
    s.add_argument("--output", "-o", help="output directory")
    return parser, {"abstract": a, "analyze": z, "generate": g, "scaling": s}


def load_config(path, command: str, known: set[str]) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path}: {exc}") from None
    values = {k: v for k, v in data.items() if not isinstance(v, dict)}
    section = data.get(command, {})
    if not isinstance(section, dict):
        raise ConfigError(f"config {path}: [{command}] must be a table")
    values.update(section)
    out = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("config", "verbose"):
            raise ConfigError(f"config {path}: unknown key {key!r} for '{command}'")
        out[dest] = value
    return out


def _require(args, *names: str) -> None:
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        raise ConfigError("missing required setting(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _write_outputs(directory: Path, files: dict[str, str]) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (directory / name).write_text(text, encoding="utf-8")


def _dispatch(args) -> None:
    if args.command == "abstract":
        _require(args, "input", "output")
        cfg = RunConfig(args.input, args.output, args.input_format, args.prior, args.alpha, args.beta,
                        args.epsilon, args.t_init_width, args.threshold_mode, args.threshold_count,
                        args.max_states, args.max_windows, tuple(args.dim_names) if args.dim_names else None,
                        args.edge_threshold, args.seed)
        files = run_abstract(cfg)
        _write_outputs(Path(args.output), files)
    elif args.command == "analyze":
        _require(args, "model", "input", "output")
        files = run_analyze(args.model, args.input, args.episode or (), args.window or (), args.t,
                            args.input_format)
        _write_outputs(Path(args.output), files)
    elif args.command == "generate":
        _require(args, "output")
        try:
            config = RandomWalkConfig(args.k, args.T, args.v, args.sigma, args.seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        try:
            files = run_generate(args.kind, config, args.output, args.i_star, args.heading, args.format)
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None
        _write_outputs(Path(args.output).parent, files)
    else:
        _require(args, "output")
        if args.seeds < 1:
            raise ConfigError("--seeds must be at least 1")
        seeds = range(args.first_seed, args.first_seed + args.seeds)
        try:
            files = run_scaling(args.k, args.T, args.v, args.sigma, args.max_m, args.max_n, args.strategy,
                                seeds, args.thresholds_per_dim, args.n_states)
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None
        _write_outputs(Path(args.output), files)


def main(argv: Sequence[str] | None = None) -> int:
    parser, subparsers = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        if args.config:
            sub = subparsers[args.command]
            sub.set_defaults(**load_config(args.config, args.command, {a.dest for a in sub._actions}))
            args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _dispatch(args)
    except DatasetError as exc:
        print(f"error[input]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ModelFormatError as exc:
        print(f"error[model]: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except SelectionError as exc:
        print(f"error[selection]: {exc}", file=sys.stderr)
        return EXIT_SELECTION
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AbstractionError as exc:
        print(f"error[abstraction]: {exc}", file=sys.stderr)
        return EXIT_ABSTRACTION
    except OSError as exc:
        print(f"error[output]: {exc}", file=sys.stderr)
        return EXIT_OUTPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
