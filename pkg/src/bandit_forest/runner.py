"""Experiment orchestration: seeded replications, identical interaction streams,
artifact CSVs, and snapshot-based diagnostics.

Every agent in a replication faces the same materialized stream: contexts,
and per-(round, arm) reward noise, so agents choosing different arms still
see a common environment realization. Per-replication seeds derive from the
global seed through an explicit splitmix64 mixer; replications can run in
parallel worker processes (capped by BANDIT_FOREST_THREADS) with all file
writes funneled through the parent process.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import BftsAgent, encoded_dim
from .config import AGENT_KINDS, ConfigError, apply_overrides, build_agent
from .diagnostics import (
    DEFAULT_EVAL_ROUNDS,
    ECE_LEVELS,
    policy_delta_tv,
    probe_contexts,
    r_hat,
)
from .environments import ClassificationBanditEnv, LoggedPanel, make_scenario
from .forest import forest_to_text
from .ope import dr_estimate, ess, replay_run, snips
from .seeding import derive_seed

__all__ = [
    "AgentSpec",
    "ExperimentConfig",
    "RunResult",
    "run_experiment",
    "run_ope",
    "diagnose",
    "ROUNDS_SCHEMA",
    "SUMMARY_SCHEMA",
]

ROUNDS_SCHEMA = "# schema: bandit-forest/rounds v1"
SUMMARY_SCHEMA = "# schema: bandit-forest/summary v1"
SNAPSHOT_SCHEMAS = {
    "quantiles": "# schema: bandit-forest/quantiles v1",
    "votes": "# schema: bandit-forest/votes v1",
    "truth": "# schema: bandit-forest/truth v1",
    "rhat": "# schema: bandit-forest/rhat v1",
    "acceptance": "# schema: bandit-forest/acceptance v1",
    "feature_counts": "# schema: bandit-forest/feature_counts v1",
}

# quantile levels stored per snapshot: the 95% interval plus every central
# level needed by the calibration-error grid
_COV_LEVELS = (0.025, 0.975)
_STORED_LEVELS = tuple(
    sorted({round((1.0 - g) / 2.0, 3) for g in ECE_LEVELS} | {round((1.0 + g) / 2.0, 3) for g in ECE_LEVELS} | set(_COV_LEVELS))
)


@dataclass(frozen=True)
class AgentSpec:
    name: str
    kind: str
    overrides: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    scenario: str
    agents: list[AgentSpec]
    horizon: int
    replications: int
    outdir: str
    global_seed: int = 42
    eval_rounds: tuple = DEFAULT_EVAL_ROUNDS
    scenario_overrides: dict = field(default_factory=dict)
    dataset: ClassificationBanditEnv | None = None
    probes: int = 40
    workers: int | None = None
    dump_forest: bool = False
    collect_diagnostics: bool = True

    def validate(self) -> None:
        if self.horizon < 1 or self.replications < 1:
            raise ConfigError("horizon and replications must be >= 1")
        if not self.agents:
            raise ConfigError("no agents configured")
        names = [a.name for a in self.agents]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate agent names: {names}")
        for spec in self.agents:
            if spec.kind not in AGENT_KINDS:
                raise ConfigError(f"unknown agent kind {spec.kind!r}")
            apply_overrides(None, spec.overrides)  # validates keys
        if self.dataset is None:
            make_scenario(self.scenario, **self.scenario_overrides)  # validates name
        elif self.scenario != "dataset":
            raise ConfigError("dataset runs must use scenario='dataset'")


@dataclass
class RunResult:
    outdir: Path
    summary: dict  # agent -> (mean final regret, sd, R)
    stream_hashes: dict  # (replication, agent) -> hex digest
    rounds_path: Path
    summary_path: Path


def _worker_count(config: ExperimentConfig) -> int:
    cap = os.environ.get("BANDIT_FOREST_THREADS")
    cap = int(cap) if cap else (os.cpu_count() or 1)
    want = config.workers if config.workers is not None else cap
    return max(1, min(want, cap, config.replications))


def _effective_horizon(config: ExperimentConfig) -> int:
    if config.dataset is not None:
        return min(config.horizon, len(config.dataset))
    return config.horizon


def _snapshot_rounds(config: ExperimentConfig, T: int, tau_k: int) -> list[int]:
    rounds = {r for r in config.eval_rounds if 1 <= r <= T}
    rounds.add(T)
    if tau_k <= T:
        rounds.add(tau_k)
    return sorted(rounds)


def _replication_worker(config: ExperimentConfig, rep: int) -> dict:
    T = _effective_horizon(config)
    seed_rep = derive_seed(config.global_seed, "rep", rep)
    out: dict = {
        "rounds": [],
        "quantiles": [],
        "votes": [],
        "truth": [],
        "rhat": [],
        "acceptance": [],
        "feature_counts": [],
        "forests": [],
        "stream_hashes": {},
        "final_regret": {},
    }

    if config.dataset is not None:
        env = config.dataset.shuffled(derive_seed(seed_rep, "shuffle"))
        contexts = env.X[:T]
        K, P = env.K, env.P
        mean_matrix = np.zeros((T, K))
        mean_matrix[np.arange(T), env.labels[:T]] = 1.0
        reward_matrix = mean_matrix
        # probe rows: deterministic evenly spaced subsample of the unshuffled data
        probe_idx = np.unique(np.linspace(0, len(config.dataset) - 1, config.probes).astype(int))
        probe_X = config.dataset.X[probe_idx]
        probe_truth = None
    else:
        spec = make_scenario(config.scenario, **config.scenario_overrides)
        env = spec.replicate(derive_seed(seed_rep, "env"))
        K, P = env.K, env.P
        stream_rng = np.random.default_rng(derive_seed(seed_rep, "stream"))
        contexts = env.sample_contexts(T, stream_rng)
        noise = np.random.default_rng(derive_seed(seed_rep, "noise")).standard_normal((T, K))
        mean_matrix = env.arm_means_matrix(contexts)
        reward_matrix = mean_matrix + noise * env.arm_noise_sd
        probe_X = probe_contexts(env.sample_contexts, config.scenario, config.global_seed, config.probes)
        probe_truth = env.arm_means_matrix(probe_X)

    stream_digest = hashlib.sha256(
        np.ascontiguousarray(contexts).tobytes() + np.ascontiguousarray(reward_matrix).tobytes()
    ).hexdigest()
    best_mean = mean_matrix.max(axis=1)

    if probe_truth is not None:
        for j in range(probe_X.shape[0]):
            for a in range(K):
                out["truth"].append((rep, j, a, repr(float(probe_truth[j, a]))))

    for agent_spec in config.agents:
        agent = build_agent(
            agent_spec.kind, K, P, agent_spec.overrides, derive_seed(seed_rep, "agent", agent_spec.name)
        )
        is_forest = isinstance(agent, BftsAgent)
        snapshot_at = (
            set(_snapshot_rounds(config, T, agent.tau * K if is_forest else T))
            if config.collect_diagnostics and is_forest
            else set()
        )
        out["stream_hashes"][agent_spec.name] = stream_digest
        cum_regret = 0.0
        elapsed = 0.0
        seen_refreshes = 0
        for t in range(1, T + 1):
            x = contexts[t - 1]
            tic = time.perf_counter()
            a = agent.select(x)
            r = float(reward_matrix[t - 1, a])
            agent.update(x, a, r)
            elapsed += time.perf_counter() - tic
            regret = float(best_mean[t - 1] - mean_matrix[t - 1, a])
            cum_regret += regret
            out["rounds"].append(
                (rep, t, agent_spec.name, a, repr(r), repr(regret), repr(cum_regret), repr(elapsed))
            )
            if is_forest:
                if config.dump_forest and agent.n_refreshes > seen_refreshes:
                    seen_refreshes = agent.n_refreshes
                    for mi, pool in enumerate(agent.pools):
                        if pool is not None:
                            name = f"rep{rep}_{agent_spec.name}_t{t}_model{mi}.txt"
                            out["forests"].append((name, forest_to_text(pool.draws[0][0])))
                if t in snapshot_at and all(p is not None for p in agent.pools):
                    _capture_snapshot(out, rep, agent_spec.name, agent, t, probe_X)
        out["final_regret"][agent_spec.name] = cum_regret
        if is_forest and config.collect_diagnostics:
            for entry in agent.refresh_history:
                for kind, (att, acc) in entry["acceptance"].items():
                    out["acceptance"].append((rep, agent_spec.name, entry["t"], kind, att, acc))
            if all(p is not None for p in agent.pools):
                p_model = encoded_dim(agent.encoding, P, K)
                counts = np.zeros(p_model)
                for pool in agent.pools:
                    counts += pool.split_counts(p_model)
                for f in range(p_model):
                    out["feature_counts"].append((rep, agent_spec.name, f, repr(float(counts[f]))))
    return out


def _capture_snapshot(out, rep, agent_name, agent: BftsAgent, t: int, probe_X: np.ndarray) -> None:
    preds = agent._pool_matrix_at(probe_X)  # (n_draws, J, K)
    n_draws, J, K = preds.shape
    srt = np.sort(preds, axis=0)
    for level in _STORED_LEVELS:
        rank = min(max(int(math.ceil(level * n_draws)), 1), n_draws)
        values = srt[rank - 1]
        for j in range(J):
            for a in range(K):
                out["quantiles"].append((rep, agent_name, t, j, a, level, repr(float(values[j, a]))))
    votes = np.apply_along_axis(lambda row: np.bincount(row, minlength=K), 1, np.argmax(preds, axis=2).T)
    votes = votes / n_draws
    for j in range(J):
        for a in range(K):
            out["votes"].append((rep, agent_name, t, j, a, repr(float(votes[j, a]))))
    # R-hat over sigma^2 and probe predictions, pooled across the agent's models
    values = []
    for mi, pool in enumerate(agent.pools):
        ids = pool.chain_ids
        uniq = np.unique(ids)
        if len(uniq) < 2 or pool.size // len(uniq) < 4:
            continue
        values.append(r_hat(pool.sigma2_by_chain()))
        if agent.encoding == "separate":
            arm_preds = preds[:, :, mi]
            for j in range(J):
                values.append(r_hat([arm_preds[ids == c, j] for c in uniq]))
        else:
            for a in range(K):
                for j in range(J):
                    values.append(r_hat([preds[ids == c, j, a] for c in uniq]))
    if values:
        out["rhat"].append((rep, agent_name, t, repr(float(np.median(values))), repr(float(np.mean(values)))))


def _write_csv(path: Path, schema: str, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(schema + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def run_experiment(config: ExperimentConfig) -> RunResult:
    """Run all replications and write rounds.csv, summary.csv, and snapshots.

    Deterministic given the config: per-replication seeds mix (global_seed,
    replication index); outputs are written in replication order regardless
    of worker scheduling.
    """
    config.validate()
    outdir = Path(config.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    n_workers = _worker_count(config)
    reps = list(range(config.replications))
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_replication_worker, [config] * len(reps), reps))
    else:
        results = [_replication_worker(config, r) for r in reps]

    rounds_path = outdir / "rounds.csv"
    _write_csv(
        rounds_path,
        ROUNDS_SCHEMA,
        ["replication", "t", "agent", "action", "reward", "regret", "cum_regret", "cum_wall_time"],
        (row for res in results for row in res["rounds"]),
    )

    summary = {}
    finals = {spec.name: [res["final_regret"][spec.name] for res in results] for spec in config.agents}
    scenario_label = config.scenario
    summary_rows = []
    for spec in config.agents:
        vals = np.asarray(finals[spec.name])
        mean = float(vals.mean())
        sd = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        summary[spec.name] = (mean, sd, len(vals))
        summary_rows.append((spec.name, scenario_label, repr(mean), repr(sd), len(vals)))
    summary_path = outdir / "summary.csv"
    _write_csv(
        summary_path,
        SUMMARY_SCHEMA,
        ["agent", "scenario", "mean_final_regret", "sd_final_regret", "replications"],
        summary_rows,
    )

    snapdir = outdir / "snapshots"
    headers = {
        "quantiles": ["replication", "agent", "t", "probe", "arm", "level", "value"],
        "votes": ["replication", "agent", "t", "probe", "arm", "prob"],
        "truth": ["replication", "probe", "arm", "truth"],
        "rhat": ["replication", "agent", "t", "median", "mean"],
        "acceptance": ["replication", "agent", "t", "kind", "attempts", "accepts"],
        "feature_counts": ["replication", "agent", "feature", "count"],
    }
    for key, header in headers.items():
        rows = [row for res in results for row in res[key]]
        if rows:
            _write_csv(snapdir / f"{key}.csv", SNAPSHOT_SCHEMAS[key], header, rows)
    for res in results:
        for name, text in res["forests"]:
            fdir = outdir / "forests"
            fdir.mkdir(parents=True, exist_ok=True)
            (fdir / name).write_text(text)

    hashes = {(rep, name): res["stream_hashes"][name] for rep, res in enumerate(results) for name in res["stream_hashes"]}
    return RunResult(outdir, summary, hashes, rounds_path, summary_path)


# ---------------------------------------------------------------------------
# Replay OPE driver


def run_ope(
    panel: LoggedPanel,
    agents: list[AgentSpec],
    outdir: str,
    estimators=("snips",),
    checkpoints=(1000, 2000, 5000, 10000),
    bootstrap: int = 0,
    global_seed: int = 42,
) -> Path:
    """Replay each agent on the panel and estimate policy values on prefixes.

    Writes ope.csv rows (agent, estimator, checkpoint, value, ess,
    match_rate, bootstrap). Replicate 0 is the full panel; replicates 1..B
    are user-level cluster-bootstrap resamples, each replayed afresh.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for spec in agents:
        if spec.kind not in AGENT_KINDS:
            raise ConfigError(f"unknown agent kind {spec.kind!r}")
    for est in estimators:
        if est not in ("snips", "dr"):
            raise ConfigError(f"unknown estimator {est!r}")
    rows = []
    clusters = panel.cluster_order()
    boot_rng = np.random.default_rng(derive_seed(global_seed, "ope-bootstrap"))
    for b in range(bootstrap + 1):
        if b == 0:
            panel_b = panel
        else:
            picks = [clusters[i] for i in boot_rng.integers(len(clusters), size=len(clusters))]
            panel_b = panel.take_clusters(picks)
        cps = sorted({c for c in checkpoints if c <= len(panel_b)} | {len(panel_b)})
        for spec in agents:
            agent = build_agent(
                spec.kind, panel_b.K, panel_b.p, spec.overrides, derive_seed(global_seed, "ope", spec.name, b)
            )
            replay = replay_run(agent, panel_b)
            for cp in cps:
                w = replay.weights[:cp]
                r = replay.rewards[:cp]
                mr = float(replay.matched[:cp].mean())
                for est in estimators:
                    if est == "snips":
                        value = snips(w, r)
                    else:
                        value = dr_estimate(_panel_prefix(panel_b, cp), replay.policy_dists[:cp])
                    rows.append(
                        (spec.name, est, cp, repr(value), repr(ess(w)), repr(mr), b)
                    )
    path = outdir / "ope.csv"
    _write_csv(
        path,
        "# schema: bandit-forest/ope v1",
        ["agent", "estimator", "checkpoint", "value", "ess", "match_rate", "bootstrap"],
        rows,
    )
    return path


def _panel_prefix(panel: LoggedPanel, n: int) -> LoggedPanel:
    return LoggedPanel(
        panel.contexts[:n],
        panel.actions[:n],
        panel.rewards[:n],
        panel.propensities[:n],
        panel.cluster_ids[:n],
        panel.steps[:n],
    )


# ---------------------------------------------------------------------------
# Diagnostics aggregation from stored snapshots


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            fh.seek(0)
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader if row]


def diagnose(run_dir) -> Path:
    """Recompute aggregate diagnostics CSVs from a run's stored snapshots.

    Per agent, writes coverage_length.csv, ece.csv, rhat.csv, policy_tv.csv,
    acceptance.csv and feature_inclusion.csv under
    ``<run>/diagnostics/<agent>/``.
    """
    run_dir = Path(run_dir)
    snapdir = run_dir / "snapshots"
    if not snapdir.exists():
        raise FileNotFoundError(f"no snapshots under {run_dir}")
    outbase = run_dir / "diagnostics"

    truth = {}
    truth_path = snapdir / "truth.csv"
    if truth_path.exists():
        _, rows = _read_csv(truth_path)
        for rep, probe, arm, value in rows:
            truth[(int(rep), int(probe), int(arm))] = float(value)

    quant: dict = {}
    agents: set[str] = set()
    qpath = snapdir / "quantiles.csv"
    if qpath.exists():
        _, rows = _read_csv(qpath)
        for rep, agent, t, probe, arm, level, value in rows:
            agents.add(agent)
            quant.setdefault((agent, int(t)), {}).setdefault((int(rep), int(probe), int(arm)), {})[
                float(level)
            ] = float(value)

    votes: dict = {}
    vpath = snapdir / "votes.csv"
    if vpath.exists():
        _, rows = _read_csv(vpath)
        for rep, agent, t, probe, arm, prob in rows:
            agents.add(agent)
            votes.setdefault(agent, {}).setdefault(int(t), {}).setdefault((int(rep), int(probe)), {})[
                int(arm)
            ] = float(prob)

    for agent in sorted(agents):
        adir = outbase / agent
        adir.mkdir(parents=True, exist_ok=True)

        cov_rows, ece_rows = [], []
        for (ag, t), cells in sorted(quant.items(), key=lambda kv: kv[0][1]):
            if ag != agent or not truth:
                continue
            lo = np.array([q[_COV_LEVELS[0]] for q in cells.values()])
            hi = np.array([q[_COV_LEVELS[1]] for q in cells.values()])
            tr = np.array([truth[key] for key in cells])
            cov_rows.append((t, repr(float(((lo <= tr) & (tr <= hi)).mean())), repr(float((hi - lo).mean()))))
            gaps = []
            for gamma in ECE_LEVELS:
                a_lo, a_hi = round((1 - gamma) / 2, 3), round((1 + gamma) / 2, 3)
                glo = np.array([q[a_lo] for q in cells.values()])
                ghi = np.array([q[a_hi] for q in cells.values()])
                gaps.append(abs(float(((glo <= tr) & (tr <= ghi)).mean()) - gamma))
            ece_rows.append((t, repr(float(np.mean(gaps)))))
        if cov_rows:
            _write_csv(adir / "coverage_length.csv", "# schema: bandit-forest/coverage_length v1",
                       ["round", "coverage", "mean_length"], cov_rows)
            _write_csv(adir / "ece.csv", "# schema: bandit-forest/ece v1", ["round", "ece"], ece_rows)

        rpath = snapdir / "rhat.csv"
        if rpath.exists():
            _, rows = _read_csv(rpath)
            per_round: dict = {}
            for rep, ag, t, med, mean in rows:
                if ag != agent:
                    continue
                per_round.setdefault(int(t), []).append((float(med), float(mean)))
            rhat_rows = [
                (t, repr(float(np.mean([m for m, _ in vals]))), repr(float(np.mean([m for _, m in vals]))))
                for t, vals in sorted(per_round.items())
            ]
            if rhat_rows:
                _write_csv(adir / "rhat.csv", "# schema: bandit-forest/rhat_agg v1",
                           ["round", "median", "mean"], rhat_rows)

        if agent in votes:
            by_t = votes[agent]
            ts = sorted(by_t)
            tv_rows = []
            for prev_t, t in zip(ts, ts[1:]):
                tvs = []
                for key, dist in by_t[t].items():
                    if key not in by_t[prev_t]:
                        continue
                    K = max(dist) + 1
                    now = np.array([dist.get(a, 0.0) for a in range(K)])
                    before = np.array([by_t[prev_t][key].get(a, 0.0) for a in range(K)])
                    tvs.append(policy_delta_tv(now / now.sum(), before / before.sum()))
                if tvs:
                    tv_rows.append((t, repr(float(np.mean(tvs)))))
            if tv_rows:
                _write_csv(adir / "policy_tv.csv", "# schema: bandit-forest/policy_tv v1",
                           ["round", "mean_tv"], tv_rows)

        apath = snapdir / "acceptance.csv"
        if apath.exists():
            _, rows = _read_csv(apath)
            tally: dict = {}
            for rep, ag, t, kind, att, acc in rows:
                if ag != agent:
                    continue
                cell = tally.setdefault((int(t), kind), [0, 0])
                cell[0] += int(att)
                cell[1] += int(acc)
            pooled: dict = {}
            for (t, kind), (att, acc) in tally.items():
                cell = pooled.setdefault(t, [0, 0])
                cell[0] += att
                cell[1] += acc
            acc_rows = [
                (t, kind, repr(acc / att if att else 0.0))
                for (t, kind), (att, acc) in sorted(tally.items())
            ]
            acc_rows += [(t, "all", repr(acc / att if att else 0.0)) for t, (att, acc) in sorted(pooled.items())]
            if acc_rows:
                _write_csv(adir / "acceptance.csv", "# schema: bandit-forest/acceptance_agg v1",
                           ["round", "move_kind", "rate"], acc_rows)

        fpath = snapdir / "feature_counts.csv"
        if fpath.exists():
            _, rows = _read_csv(fpath)
            counts: dict = {}
            for rep, ag, feature, count in rows:
                if ag != agent:
                    continue
                counts[int(feature)] = counts.get(int(feature), 0.0) + float(count)
            total = sum(counts.values())
            if counts:
                feats = sorted(counts)
                if total > 0:
                    incl = [(f, repr(counts[f] / total)) for f in feats]
                else:
                    incl = [(f, repr(1.0 / len(feats))) for f in feats]
                _write_csv(adir / "feature_inclusion.csv", "# schema: bandit-forest/feature_inclusion v1",
                           ["feature", "inclusion"], incl)
    return outbase
