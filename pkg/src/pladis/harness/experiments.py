"""Sweeps over the Hopfield bounds and the toy diffusion model.

Each ``run_*`` returns an :class:`ExperimentResult`. ``rows`` and
``summary`` are deterministic in (config, seed); ``costs`` carries
wall-clock measurements. ``checks`` lists named outcomes; the gated ones
decide the CLI exit status, the ``reported_only`` ones are logged trends.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import hopfield, simplex
from ..attention import BASELINE, AttentionConfig, row_entropy
from ..diffusion import data, model, sampling, train
from ..diffusion.schedule import NoiseSchedule, forward_noising
from . import metrics, report
from .config import ExperimentConfig, derive_seed


@dataclass
class ExperimentResult:
    name: str
    rows: list = field(default_factory=list)
    summary: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    costs: list = field(default_factory=list)

    def check(self, name: str, passed: bool, value=None, reported_only: bool = False):
        self.checks.append(dict(check=name, value="" if value is None else value,
                                passed=bool(passed), reported_only=reported_only))

    @property
    def gated_failures(self) -> list[str]:
        return [c["check"] for c in self.checks if not c["reported_only"] and not c["passed"]]

    def write(self, out_dir, cfg: ExperimentConfig, elapsed: float | None = None) -> Path:
        d = Path(out_dir)
        report.write_csv(d / f"{self.name}.csv", self.rows)
        if self.summary:
            report.write_csv(d / f"{self.name}_summary.csv", self.summary)
        det = [c for c in self.checks if not c.get("timing")]
        report.write_csv(d / f"{self.name}_checks.csv", det, ["check", "value", "passed", "reported_only"])
        if self.costs:
            report.write_csv(d / f"{self.name}_costs.csv", self.costs)
        report.write_meta(d / f"{self.name}.meta.json", cfg.to_dict(),
                          dict(elapsed_sec=elapsed, gated_failures=self.gated_failures,
                               timing_checks=[c for c in self.checks if c.get("timing")]))
        return d


# -- Hopfield sweeps -------------------------------------------------------------

def _alpha2_closed_form(x, xi, beta: float) -> float:
    # the polynomial bound specialized by hand to alpha = 2
    s = hopfield.sorted_scores(x, xi)
    M = len(s)
    kap = int(simplex.sparsemax(beta * s).kappa)
    nxt = s[kap] if kap < M else s[M - 1] - 1.0 / (M * beta)
    m = hopfield.max_norm(xi)
    return m + m * beta * kap * (s[0] - nxt)


def run_bounds(cfg: ExperimentConfig) -> ExperimentResult:
    """Observed one-step retrieval error against each bound.

    Per instance: random unit-norm patterns, one free Gaussian query (for the
    universally valid sparse bounds) and one query inside the basin of the
    target (for the dense and mixed bounds).
    """
    res = ExperimentResult("bounds")
    d, M = cfg.bound_dim, cfg.bound_patterns
    nb, na = len(cfg.betas), len(cfg.bound_alphas)

    def add(i, kind, query, alpha, beta, lam, err, bound, agree=""):
        res.rows.append(dict(instance=i, kind=kind, query=query, alpha=alpha, beta=beta, lam=lam,
                             error=err, bound=bound, slack=bound - err, agreement=agree))

    for i in range(cfg.bound_instances):
        rng = np.random.default_rng([cfg.seed, i])
        beta = float(cfg.betas[i % nb])
        alpha = float(cfg.bound_alphas[(i // nb) % na])
        xi = hopfield.sphere_patterns(d, M, 1.0, rng)
        mu = int(rng.integers(M))
        free = rng.standard_normal(d) * rng.uniform(0.1, 3.0)
        r = hopfield.basin_radius(xi, mu) * rng.uniform(0.0, 1.0)
        basin = xi[:, mu] + r * hopfield.random_direction(d, rng)

        for qname, x in (("free", free), ("basin", basin)):
            err = float(np.linalg.norm(hopfield.retrieve_alpha(x, xi, beta, alpha) - xi[:, mu]))
            b = hopfield.bound_general(x, xi, mu, beta, alpha)
            agree = abs(b - _alpha2_closed_form(x, xi, beta)) if alpha == 2.0 else ""
            add(i, "general", qname, alpha, beta, "", err, b, agree)
            if alpha == 2.0:
                add(i, "alpha2", qname, alpha, beta, "", err, hopfield.bound_alpha2(x, xi, mu, beta))

        err = float(np.linalg.norm(hopfield.retrieve_dense(basin, xi, beta) - xi[:, mu]))
        add(i, "dense", "basin", 1.0, beta, "", err, hopfield.bound_dense(basin, xi, mu, beta))
        for lam in cfg.bound_lambdas:
            out = hopfield.retrieve_pladis(basin, xi, beta, alpha, lam)
            err = float(np.linalg.norm(out - xi[:, mu]))
            add(i, "pladis", "basin", alpha, beta, float(lam), err,
                hopfield.bound_pladis(basin, xi, mu, beta, alpha, lam))

    groups = {}
    for r in res.rows:
        groups.setdefault((r["kind"], r["alpha"], r["beta"], r["lam"]), []).append(r)
    total_viol = 0
    for (kind, alpha, beta, lam), rs in sorted(groups.items(), key=lambda kv: tuple(map(str, kv[0]))):
        slack = np.array([r["slack"] for r in rs])
        viol = int((slack < 0).sum())
        total_viol += viol
        res.summary.append(dict(kind=kind, alpha=alpha, beta=beta, lam=lam, rows=len(rs), violations=viol,
                                min_slack=float(slack.min()), max_error=max(r["error"] for r in rs)))
    agree = [r["agreement"] for r in res.rows if r["agreement"] != ""]
    res.check("violations", total_viol == 0, total_viol)
    if agree:
        res.check("alpha2_agreement_max", max(agree) <= 1e-10, max(agree))
    return res


def run_noise_robustness(cfg: ExperimentConfig) -> ExperimentResult:
    """Mean/max retrieval error vs noise norm on orthonormal patterns."""
    res = ExperimentResult("noise")
    d = 16
    xi = hopfield.orthonormal_patterns(d, d, 1.0, np.random.default_rng([cfg.seed, 0]))
    res.rows = hopfield.noise_robustness_experiment(xi, 0, cfg.noise_beta, cfg.noise_alphas,
                                                    cfg.noise_grid, cfg.noise_trials, cfg.seed)
    res.summary = hopfield.summarize_noise(res.rows)
    mean = {(r["alpha"], r["noise_norm"]): r["mean_error"] for r in res.summary}
    alphas = sorted(float(a) for a in cfg.noise_alphas)
    ordered = all(mean[(hi, n)] <= mean[(lo, n)]
                  for n in cfg.noise_grid for lo, hi in zip(alphas, alphas[1:]))
    res.check("ordering_by_alpha", ordered)
    if 2.0 in alphas and 0.0 in cfg.noise_grid:
        zero = max(r["error"] for r in res.rows if r["alpha"] == 2.0 and r["noise_norm"] == 0.0)
        res.check("alpha2_exact_at_zero_noise", zero == 0.0, zero)
    grid = sorted(cfg.noise_grid)
    for a in alphas:
        curve = [mean[(a, n)] for n in grid]
        res.check(f"monotone_in_noise_alpha_{a}", all(np.diff(curve) >= -1e-12), reported_only=True)
    return res


# -- diffusion model plumbing ----------------------------------------------------

def train_config(cfg: ExperimentConfig) -> train.TrainConfig:
    return train.TrainConfig(width=cfg.width, blocks=cfg.blocks, heads=cfg.heads, lr=cfg.train_lr,
                             batch=cfg.train_batch, iters=cfg.train_iters, cond_dropout=cfg.cond_dropout)


def _train_key(cfg: ExperimentConfig) -> str:
    keys = ("seed", "n_data", "data_sigma", "width", "blocks", "heads", "train_iters", "train_batch",
            "train_lr", "cond_dropout")
    blob = json.dumps({k: getattr(cfg, k) for k in keys}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def train_reference(cfg: ExperimentConfig, log_every: int = 0):
    sched = NoiseSchedule()
    ds = data.make_dataset(cfg.n_data, cfg.data_sigma, derive_seed(cfg.seed, 1))
    result = train.train(ds, sched, train_config(cfg), derive_seed(cfg.seed, 2), log_every=log_every)
    return result, sched


def get_model(cfg: ExperimentConfig, out_dir=None, log_every: int = 0):
    """Load ``cfg.checkpoint``, reuse a matching cached model in ``out_dir``, or train one."""
    if cfg.checkpoint:
        params, mcfg, sched, _ = model.load_checkpoint(cfg.checkpoint)
        return params, mcfg, sched
    key = _train_key(cfg)
    cached = Path(out_dir) / "model.ckpt" if out_dir is not None else None
    if cached is not None and cached.is_file():
        params, mcfg, sched, header = model.load_checkpoint(cached)
        if header["extra"].get("train_key") == key:
            return params, mcfg, sched
    result, sched = train_reference(cfg, log_every)
    if cached is not None:
        model.save_checkpoint(cached, result.params, result.config.model, sched, dict(train_key=key))
        report.write_csv(Path(out_dir) / "train_loss.csv",
                         [dict(iter=i, loss=v) for i, v in enumerate(result.losses)])
    return result.params, result.config.model, sched


def eval_conds(cfg: ExperimentConfig) -> np.ndarray:
    return np.array(data.CELLS * cfg.samples_per_condition, dtype=np.int64)


def guidance_of(cfg: ExperimentConfig, method: str | None = None) -> sampling.GuidanceConfig:
    method = method or cfg.guidance
    return sampling.GuidanceConfig(method, w=cfg.w, s=cfg.s, seg_sigma=cfg.seg_sigma)


def sample_images(params, mcfg, sched, cfg: ExperimentConfig, attn: AttentionConfig,
                  g: sampling.GuidanceConfig, seed: int):
    den = model.Denoiser(params, mcfg)
    conds = eval_conds(cfg)
    t0 = time.perf_counter()
    out = sampling.sample(den, conds, sched, sampling.SamplerConfig(cfg.steps, seed, attn), g)
    return out.images, conds, out.nfe, time.perf_counter() - t0


class _Sweep:
    """Shared sampling loop: one block of rows per (setting, sample seed)."""

    def __init__(self, name, cfg, params, mcfg, sched):
        self.res = ExperimentResult(name)
        self.cfg, self.params, self.mcfg, self.sched = cfg, params, mcfg, sched
        self.images = {}

    def run(self, label: str, cols: dict, attn: AttentionConfig, g: sampling.GuidanceConfig):
        imgs = []
        for s in self.cfg.sample_seeds:
            seed = derive_seed(self.cfg.seed, 100, s)
            x, conds, nfe, wall = sample_images(self.params, self.mcfg, self.sched, self.cfg, attn, g, seed)
            imgs.append(x)
            ok = metrics.correct(x, conds)
            err = metrics.centroid_errors(x, conds)
            for j in range(len(x)):
                self.res.rows.append(dict(**cols, seed=s, sample=j, cond_row=conds[j, 0], cond_col=conds[j, 1],
                                          correct=bool(ok[j]), centroid_error=float(err[j]),
                                          nfe=nfe // len(x) if nfe % len(x) == 0 else nfe))
            self.res.costs.append(dict(setting=label, seed=s, wall_time=wall, nfe_total=nfe))
        x = np.concatenate(imgs)
        conds = np.concatenate([eval_conds(self.cfg)] * len(imgs))
        summ = dict(**cols, samples=len(x), accuracy=metrics.conditional_accuracy(x, conds),
                    centroid_error=metrics.centroid_error(x, conds),
                    energy_distance=metrics.conditional_energy_distance(x, conds, self.cfg.data_sigma,
                                                                        derive_seed(self.cfg.seed, 200)),
                    nfe_per_step=sampling.NFE_PER_STEP[g.method])
        self.res.summary.append(summ)
        self.images[label] = x
        return summ

    def same(self, a: str, b: str) -> bool:
        return np.array_equal(self.images[a], self.images[b])


def _model_sweep(name, cfg, out_dir):
    params, mcfg, sched = get_model(cfg, out_dir)
    return _Sweep(name, cfg, params, mcfg, sched)


def timing_workload(alpha: float, rows: int = 2048, cols: int = 64, seed: int = 0):
    z = np.random.default_rng(seed).standard_normal((rows, cols))
    return lambda: simplex.entmax(z, alpha)


def run_alpha_sweep(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    sw = _model_sweep("alpha_sweep", cfg, out_dir)
    g = guidance_of(cfg)
    sw.run("baseline", dict(alpha="baseline", lam=0.0), BASELINE, g)
    for a in cfg.alphas:
        sw.run(f"alpha={a}", dict(alpha=float(a), lam=1.0), AttentionConfig(alpha=float(a), lam=1.0), g)
    res = sw.res
    if 1.0 in cfg.alphas:
        res.check("alpha1_equals_baseline", sw.same("alpha=1.0", "baseline"))
    acc = {r["alpha"]: r["accuracy"] for r in res.summary}
    sparse = [a for a in cfg.alphas if a > 1]
    if sparse:
        res.check("sparser_beats_softmax", acc[max(sparse)] >= acc.get(1.0, acc["baseline"]),
                  acc[max(sparse)], reported_only=True)

    # transform-level cost: identical logits, exact vs bisection solvers
    med = {}
    for a in (1.0, 1.25, 1.5, 1.75, 2.0):
        t, times, _ = metrics.time_call(timing_workload(a), cfg.timing_repeats)
        peak, _ = metrics.peak_alloc(timing_workload(a))
        med[a] = t
        res.costs.append(dict(setting=f"transform alpha={a}", seed="", wall_time=t, nfe_total="",
                              solver="exact" if a in (1.0, 1.5, 2.0) else "bisection", peak_bytes=peak))
    fast = max(med[1.5], med[2.0]) < min(med[1.25], med[1.75])
    res.checks.append(dict(check="exact_faster_than_bisection", value=min(med[1.25], med[1.75]) / max(med[1.5], med[2.0]),
                           passed=fast, reported_only=False, timing=True))
    return res


def run_lambda_sweep(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    sw = _model_sweep("lambda_sweep", cfg, out_dir)
    g = guidance_of(cfg)
    sw.run("baseline", dict(lam="baseline", alpha=cfg.attn_alpha, pladis_active=False), BASELINE, g)
    for lam in cfg.lambdas:
        attn = AttentionConfig(alpha=cfg.attn_alpha, lam=float(lam))
        sw.run(f"lam={lam}", dict(lam=float(lam), alpha=cfg.attn_alpha, pladis_active=lam > 1), attn, g)
    res = sw.res
    if 0.0 in cfg.lambdas:
        res.check("lambda0_equals_baseline", sw.same("lam=0.0", "baseline"))
    rows = [r for r in res.summary if r["lam"] != "baseline"]
    best = max(rows, key=lambda r: r["accuracy"])
    res.check("peak_lambda", abs(best["lam"] - 2.0) <= 0.5, best["lam"], reported_only=True)
    acc = {r["lam"]: r["accuracy"] for r in rows}
    if 0.0 in acc and 2.0 in acc:
        res.check("lambda2_improves_on_lambda0", acc[2.0] > acc[0.0], acc[2.0] - acc[0.0], reported_only=True)
    return res


def probe_entropy(params, mcfg, sched, alpha: float, tau: float, seed: int) -> float:
    """Mean row entropy of the first block's cross-attention under ``alpha``-entmax at ``tau``."""
    rng = np.random.default_rng(seed)
    conds = np.array(data.CELLS, dtype=np.int64)
    x0 = data.mean_images(conds)
    t = sched.T // 2
    x_t = forward_noising(x0, t, rng.standard_normal(x0.shape), sched)
    lg = model.cross_attention_logits(params, mcfg, x_t, t, conds, 0, tau)
    return float(row_entropy(simplex.entmax(lg, alpha)).mean())


def run_temperature_sweep(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """tau x {softmax, 1.5-entmax} x {direct replacement (lam=1), PLADIS (lam=attn_lam)}."""
    sw = _model_sweep("temperature_sweep", cfg, out_dir)
    g = guidance_of(cfg)
    sw.run("baseline", dict(tau="baseline", transform="softmax", lam=0.0, attn_entropy=""), BASELINE, g)
    for alpha, tname in ((1.0, "softmax"), (1.5, "entmax15")):
        ent = {}
        for tau in cfg.taus:
            ent[tau] = probe_entropy(sw.params, sw.mcfg, sw.sched, alpha, tau, derive_seed(cfg.seed, 300))
            for lam in (1.0, cfg.attn_lam):
                attn = AttentionConfig(alpha=alpha, lam=float(lam), temperature=float(tau))
                sw.run(f"{tname} tau={tau} lam={lam}",
                       dict(tau=float(tau), transform=tname, lam=float(lam), attn_entropy=ent[tau]), attn, g)
        order = [ent[t] for t in sorted(cfg.taus)]
        res_ok = all(np.diff(order) >= -1e-12)
        sw.res.check(f"entropy_increases_with_tau_{tname}", res_ok, reported_only=True)
    if 1.0 in cfg.taus:
        sw.res.check("tau1_softmax_direct_equals_baseline", sw.same("softmax tau=1.0 lam=1.0", "baseline"))
    return sw.res


LAYER_MASKS = ("none", "first", "last", "all")


def _mask(which: str, blocks: int):
    if which == "none":
        return (False,) * blocks
    if which == "first":
        return (True,) + (False,) * (blocks - 1)
    if which == "last":
        return (False,) * (blocks - 1) + (True,)
    return (True,) * blocks


def run_layer_ablation(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    sw = _model_sweep("layer_ablation", cfg, out_dir)
    if sw.mcfg.blocks < 2:
        raise ValueError("layer ablation needs at least two blocks")
    g = guidance_of(cfg)
    sw.run("baseline", dict(layers="baseline"), BASELINE, g)
    sw.run("default", dict(layers="default"), AttentionConfig(alpha=cfg.attn_alpha, lam=cfg.attn_lam), g)
    for which in LAYER_MASKS:
        attn = AttentionConfig(alpha=cfg.attn_alpha, lam=cfg.attn_lam, layer_group_mask=_mask(which, sw.mcfg.blocks))
        sw.run(which, dict(layers=which), attn, g)
    res = sw.res
    res.check("empty_mask_equals_baseline", sw.same("none", "baseline"))
    res.check("all_equals_default", sw.same("all", "default"))
    res.check("first_differs_from_baseline", not sw.same("first", "baseline"))
    res.check("last_differs_from_baseline", not sw.same("last", "baseline"))
    return res


EXPERIMENTS = {
    "bounds": run_bounds,
    "noise": run_noise_robustness,
    "sweep-alpha": run_alpha_sweep,
    "sweep-lambda": run_lambda_sweep,
    "sweep-temp": run_temperature_sweep,
    "ablate-layers": run_layer_ablation,
}


def run_all(cfg: ExperimentConfig, out_dir, names=None):
    """Train (or load) once, then run each experiment and write its files.

    Returns ``{name: (result, seconds)}`` plus ``"train"`` -> seconds spent
    obtaining the model.
    """
    out_dir = Path(out_dir)
    timings = {}
    t0 = time.perf_counter()
    get_model(cfg, out_dir)
    timings["train"] = time.perf_counter() - t0
    for name in names or EXPERIMENTS:
        fn = EXPERIMENTS[name]
        t0 = time.perf_counter()
        res = fn(cfg) if name in ("bounds", "noise") else fn(cfg, out_dir)
        elapsed = time.perf_counter() - t0
        res.write(out_dir, cfg, elapsed)
        timings[name] = (res, elapsed)
    return timings
