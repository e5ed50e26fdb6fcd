"""Dotted-key configuration: parsing, defaults, and agent construction.

The config grammar is one ``key = value`` pair per line, ``#`` starts a
comment, keys are dotted paths. Values parse as bool (true/false), int,
float, then string, in that order. ``dump_config`` emits the full default
table in a form that round-trips through the parser.
"""

from __future__ import annotations

from .agents import BftsAgent, EveryN, FeelGoodConfig, LinTSAgent, LinUCBAgent, Logarithmic, SquareRoot
from .forest import DepthGeometric, DirichletSparse, OriginalStructure, PriorConfig, UniformAxes
from .mcmc import SamplerConfig

__all__ = [
    "DEFAULTS",
    "parse_config_text",
    "parse_value",
    "dump_config",
    "load_config_file",
    "apply_overrides",
    "prior_from_config",
    "sampler_from_config",
    "schedule_from_config",
    "build_agent",
    "ConfigError",
]


class ConfigError(ValueError):
    """Invalid configuration key or value."""


DEFAULTS: dict[str, object] = {
    "agent.kind": "bfts",
    "encoding": "separate",
    "tau": 5,
    "bart.n_trees": 100,
    "bart.nskip": 500,
    "bart.ndpost": 500,
    "bart.n_chains": 4,
    "bart.quick_decay": True,
    "bart.tree_alpha": 0.45,
    "bart.alpha_o": 0.95,
    "bart.beta_o": 2.0,
    "bart.f_k": 2.0,
    "bart.max_bins": 100,
    "bart.dirichlet_prior": False,
    "bart.zeta": 1.0,
    "bart.xi": 1.0,
    "bart.nu": 3.0,
    "bart.q": 0.9,
    "bart.p_grow": 0.25,
    "bart.p_prune": 0.25,
    "bart.p_change": 0.4,
    "bart.p_swap": 0.1,
    "refresh.kind": "log",
    "refresh.c": 8.0,
    "refresh.n": 100,
    "fg.eta": 1.0,
    "fg.lambda": 0.0,
    "fg.b": 1.0,
    "lin.nu": 1.0,
    "lin.alpha": 1.0,
    "lin.ridge": 1.0,
}

AGENT_KINDS = ("bfts", "fg_bfts", "lin_ts", "lin_ucb")


def parse_value(raw: str):
    text = raw.strip()
    low = text.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines into a dict, validating keys against DEFAULTS."""
    out: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = body.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        out[key] = parse_value(raw)
    return out


def dump_config(overrides: dict | None = None) -> str:
    cfg = dict(DEFAULTS)
    if overrides:
        cfg.update(overrides)
    return "\n".join(f"{k} = {_format_value(v)}" for k, v in cfg.items()) + "\n"


def load_config_file(path) -> dict:
    with open(path) as fh:
        return parse_config_text(fh.read())


def apply_overrides(base: dict | None, overrides: dict | None = None) -> dict:
    cfg = dict(DEFAULTS)
    if base:
        cfg.update(base)
    if overrides:
        for key in overrides:
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
        cfg.update(overrides)
    return cfg


def prior_from_config(cfg: dict) -> PriorConfig:
    structure = (
        DepthGeometric(alpha=float(cfg["bart.tree_alpha"]))
        if cfg["bart.quick_decay"]
        else OriginalStructure(alpha=float(cfg["bart.alpha_o"]), beta=float(cfg["bart.beta_o"]))
    )
    split_axis = (
        DirichletSparse(zeta=float(cfg["bart.zeta"]), xi=float(cfg["bart.xi"]))
        if cfg["bart.dirichlet_prior"]
        else UniformAxes()
    )
    return PriorConfig(
        m=int(cfg["bart.n_trees"]),
        structure=structure,
        kappa=float(cfg["bart.f_k"]),
        n_max=int(cfg["bart.max_bins"]),
        nu=float(cfg["bart.nu"]),
        q=float(cfg["bart.q"]),
        split_axis=split_axis,
        proposal_probs=(
            float(cfg["bart.p_grow"]),
            float(cfg["bart.p_prune"]),
            float(cfg["bart.p_change"]),
            float(cfg["bart.p_swap"]),
        ),
    )


def sampler_from_config(cfg: dict) -> SamplerConfig:
    return SamplerConfig(
        n_burn=int(cfg["bart.nskip"]),
        n_post=int(cfg["bart.ndpost"]),
        n_chains=int(cfg["bart.n_chains"]),
        prior=prior_from_config(cfg),
    )


def schedule_from_config(cfg: dict):
    kind = str(cfg["refresh.kind"]).lower()
    if kind in ("log", "logarithmic"):
        return Logarithmic(c=float(cfg["refresh.c"]))
    if kind in ("sqrt", "square_root", "squareroot"):
        return SquareRoot(c=float(cfg["refresh.c"]))
    if kind in ("every", "every_n", "everyn"):
        return EveryN(n=int(cfg["refresh.n"]))
    raise ConfigError(f"unknown refresh.kind {cfg['refresh.kind']!r}")


def build_agent(kind: str, K: int, p: int, overrides: dict | None, seed: int):
    """Construct an agent of the named kind from config overrides.

    Unless overridden, forest agents model arms separately while the linear
    baselines use the positional "multi" encoding.
    """
    if kind not in AGENT_KINDS:
        raise ConfigError(f"unknown agent kind {kind!r}; known: {AGENT_KINDS}")
    overrides = dict(overrides or {})
    if "encoding" not in overrides and kind in ("lin_ts", "lin_ucb"):
        overrides["encoding"] = "multi"
    cfg = apply_overrides(None, overrides)
    encoding = str(cfg["encoding"])
    if kind in ("bfts", "fg_bfts"):
        fg = None
        if kind == "fg_bfts":
            fg = FeelGoodConfig(
                eta=float(cfg["fg.eta"]), lam=float(cfg["fg.lambda"]), b=float(cfg["fg.b"])
            )
        return BftsAgent(
            K=K,
            sampler=sampler_from_config(cfg),
            schedule=schedule_from_config(cfg),
            tau=int(cfg["tau"]),
            encoding=encoding,
            seed=seed,
            fg=fg,
        )
    if kind == "lin_ts":
        return LinTSAgent(
            K, p, nu=float(cfg["lin.nu"]), encoding=encoding, ridge=float(cfg["lin.ridge"]), seed=seed
        )
    return LinUCBAgent(
        K, p, alpha=float(cfg["lin.alpha"]), encoding=encoding, ridge=float(cfg["lin.ridge"]), seed=seed
    )
