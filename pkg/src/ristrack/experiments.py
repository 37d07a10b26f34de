"""Report generators behind the CLI subcommands.

Every generator returns ``{filename: text}``; nothing touches the disk until
:func:`write_outputs`. Each table starts with ``#`` lines holding the report
name, the fully resolved config (sorted-key JSON) and the seeds used, so a
file is self-describing and reruns are byte-identical. The recorded config
omits ``output_dir`` and ``jobs``, which do not affect any value.

Dispersion (tau1, tau2) populations: at every evaluation step the predictions
of all seeds are compared with their circular mean at that step, and the
per-step deviations are pooled, so Q = seeds x evaluation steps.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from .channel import evolve_trajectory
from .config import PREDICTORS, ConfigError, ExperimentConfig, derive_seed
from .dataio import SyntheticSpec, oracle_trajectory, save_ensemble, save_model, synthetic_trajectory
from .ensemble import ensemble_forecast, ensemble_one_step_predictions, train_ensemble
from .metrics import angular_difference, mean_abs_deviation, std_deviation
from .reservoir import forecast, init_lsm, one_step_predictions, train_readout
from .ris_link import PhaseConfig, random_phase_config, zf_spectral_efficiency
from .trajectory import PhaseTrajectory

__all__ = [
    "SWEEPS",
    "format_table",
    "write_outputs",
    "channel_slots",
    "source_trajectory",
    "train_report",
    "variance_report",
    "tracking_report",
    "se_sweep",
    "se_point",
    "oracle_gen",
]

SWEEPS = ("users", "ris_size")
INIT_MODES = {"xavier_lsm": "xavier", "random_init_lsm": "uniform_random"}


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _config_json(cfg: ExperimentConfig) -> str:
    # where results go and how many workers made them do not change the numbers
    data = {k: v for k, v in cfg.data.items() if k not in ("output_dir", "jobs")}
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def format_table(report: str, cfg: ExperimentConfig, header, rows, notes=(), seeds=()) -> str:
    lines = [f"# report: {report}", "# config: " + _config_json(cfg)]
    if seeds:
        lines.append("# seeds: " + json.dumps([int(s) for s in seeds]))
    lines += [f"# note: {n}" for n in notes]
    lines.append(",".join(header))
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def write_outputs(outputs: dict, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in sorted(outputs):
        path = out / name
        path.write_text(outputs[name])
        paths.append(path)
    return paths


# -- sources ---------------------------------------------------------------------

def channel_slots(cfg: ExperimentConfig, n_slots: int, seed: int, n_users: Optional[int] = None,
                  n_ris_elements: Optional[int] = None) -> list:
    sysd = cfg["system"]
    K = n_users or sysd["n_users"]
    return evolve_trajectory(cfg.cluster_configs(), cfg.geometries(n_ris_elements), K,
                             cfg.mobility(n_slots), seed, sysd["ris_aperture_gain"])


def _oracle(cfg: ExperimentConfig, slots) -> PhaseTrajectory:
    o, s = cfg["oracle"], cfg["system"]
    return oracle_trajectory(slots, s["power_P"], o["grid_B"], o["max_sweeps"], o["warm_start"],
                             s["noise_variance"], cfg["schedule"]["slot_interval"], o["multistart"])


def source_trajectory(cfg: ExperimentConfig, n_slots: int) -> PhaseTrajectory:
    """Pinned synthetic task, or the oracle trajectory of a seeded channel run."""
    src = cfg["source"]
    if src["kind"] == "synthetic":
        spec = SyntheticSpec(T=n_slots, n_elements=cfg["system"]["n_ris_elements"],
                             drift_range=tuple(src["drift_range"]),
                             amplitude_range=tuple(src["amplitude_range"]),
                             omega_range=tuple(src["omega_range"]),
                             shared_dynamics=src["shared_dynamics"],
                             slot_interval=cfg["schedule"]["slot_interval"])
        return synthetic_trajectory(spec, src["synthetic_seed"])
    return _oracle(cfg, channel_slots(cfg, n_slots, derive_seed(cfg.seed, "source")))


def _train_single(cfg: ExperimentConfig, scheme: str, traj, seed: int, target_indices=None):
    model = init_lsm(cfg.arch(traj.n_elements), INIT_MODES[scheme], seed)
    return train_readout(model, traj, cfg["schedule"]["train_fraction"], target_indices)


def _train_ensemble(cfg: ExperimentConfig, traj, master_seed: int):
    e = cfg["ensemble"]
    return train_ensemble(cfg.arch(traj.n_elements), traj, e["m1"], cfg.bootstrap_spec(master_seed),
                          master_seed, cfg["schedule"]["train_fraction"], "xavier", 1)


def _rms(err) -> float:
    err = np.asarray(err)
    return float(np.sqrt(np.mean(err ** 2))) if err.size else float("nan")


# -- train-report ---------------------------------------------------------------------

def train_report(cfg: ExperimentConfig) -> dict:
    """RMSE versus training-prefix length, plus validation loss versus batch size.

    The readout is solved in closed form, so an "epoch" e of E trains on the
    first e/E of the usable training rows. Validation is one-step RMSE on the
    held-out tail of the tracked span; test is the closed-loop forecast RMSE
    over the following horizon.
    """
    sched = cfg["schedule"]
    T, H = sched["T"], sched["horizon"]
    full = source_trajectory(cfg, T + H)
    tracked, future = full[:T], full.phases[T:]
    washout = cfg["learner"]["washout_T0"]
    n_train = cfg.n_train
    usable = n_train - washout - 1
    seed = derive_seed(cfg.seed, "train-report")
    E = cfg["report"]["epochs"]

    rows = []
    for e in range(1, E + 1):
        n_rows = max(1, int(round(usable * e / E)))
        targets = np.arange(washout + 1, washout + 1 + n_rows)
        model = _train_single(cfg, "xavier_lsm", tracked, seed, targets)
        fit = one_step_predictions(model, tracked, washout + 1)[:n_rows]
        train = _rms(angular_difference(fit, tracked.phases[targets]))
        test = _rms(angular_difference(forecast(model, tracked, H).phases, future))
        rows.append((e, n_rows, train, model.diagnostics["validation_rmse"], test))
    epochs = format_table(
        "train-report", cfg, ["epoch", "train_rows", "train_rmse", "validation_rmse", "test_rmse"], rows,
        notes=["epochs are training-prefix increments (closed-form ridge readout has no iterative epochs)",
               "rmse values are per-entry wrapped angular errors in radians",
               f"learner seed {seed}"])

    seeds = cfg["sweeps"]["seeds"]
    brows = []
    for b in cfg["report"]["batch_sizes"]:
        n_rows = min(b, usable)
        targets = np.arange(washout + 1, washout + 1 + n_rows)
        losses = [_train_single(cfg, "xavier_lsm", tracked, derive_seed(cfg.seed, "batch", s), targets)
                  .diagnostics["validation_rmse"] for s in seeds]
        brows.append((b, n_rows, float(np.min(losses)), float(np.median(losses)), float(np.max(losses))))
    batches = format_table(
        "train-report/batch-size", cfg,
        ["batch_size", "train_rows", "loss_min", "loss_median", "loss_max"], brows,
        notes=["loss is validation rmse; range taken over learner seeds",
               "batch sizes above the usable training rows are clipped"], seeds=seeds)
    return {"train_report.csv": epochs, "train_batch_sizes.csv": batches}


# -- variance-report -------------------------------------------------------------------

def _dispersion(preds: np.ndarray):
    """Per-step tau1/tau2 of predictions shaped (seeds, steps, M)."""
    t1 = np.array([mean_abs_deviation(preds[:, j]) for j in range(preds.shape[1])])
    t2 = np.array([std_deviation(preds[:, j]) for j in range(preds.shape[1])])
    return t1, t2


def _pooled(t1: np.ndarray, t2: np.ndarray):
    # every step has the same Q, so pooling is a plain mean over steps
    return float(np.mean(t1)), float(np.sqrt(np.mean(t2 ** 2)))


def variance_report(cfg: ExperimentConfig) -> dict:
    schemes = [b for b in PREDICTORS if b in cfg["baselines"]]
    if len(schemes) < 2:
        raise ConfigError([f"variance-report needs at least two of {list(PREDICTORS)} in baselines"])
    T = cfg["schedule"]["T"]
    traj = source_trajectory(cfg, T)
    start = cfg.n_train
    seeds = cfg["sweeps"]["seeds"]
    notes = ["Q = seeds x evaluation steps; deviations are taken from the per-step circular mean across seeds",
             f"evaluation steps {start}..{T - 1} (one-step predictions on the held-out tail)"]
    if len(seeds) == 1:
        msg = "only one seed: Q per step is 1 and tau1 = tau2 = 0 (degenerate)"
        warnings.warn(msg, stacklevel=2)
        notes.append("warning: " + msg)

    per_scheme, learner_preds = {}, []
    for scheme in schemes:
        preds = []
        for s in seeds:
            seed = derive_seed(cfg.seed, scheme, s)
            if scheme == "ensemble":
                ens = _train_ensemble(cfg, traj, seed)
                preds.append(ensemble_one_step_predictions(ens, traj, start))
                learner_preds.append([one_step_predictions(l, traj, start) for l in ens.learners])
            else:
                preds.append(one_step_predictions(_train_single(cfg, scheme, traj, seed), traj, start))
        per_scheme[scheme] = np.array(preds)

    step_rows, stats = [], {}
    for scheme in schemes:
        t1, t2 = _dispersion(per_scheme[scheme])
        stats[scheme] = (*_pooled(t1, t2), float(np.median(t1)), float(np.median(t2)))
        step_rows += [(scheme, start + j, t1[j], t2[j]) for j in range(t1.size)]
    if learner_preds:
        L = np.array(learner_preds)  # (seeds, learners, steps, M)
        per_learner = [_dispersion(L[:, i]) for i in range(L.shape[1])]
        pooled = [_pooled(*d) for d in per_learner]
        stats["median_single_learner"] = (
            float(np.median([p[0] for p in pooled])), float(np.median([p[1] for p in pooled])),
            float(np.median([np.median(d[0]) for d in per_learner])),
            float(np.median([np.median(d[1]) for d in per_learner])))

    def reduction(name, ref, col):
        if ref not in stats or name == ref or stats[ref][col] == 0:
            return ""
        return 100.0 * (1.0 - stats[name][col] / stats[ref][col])

    summary = []
    for name, (t1, t2, m1, m2) in stats.items():
        summary.append((name, t1, t2, m1, m2,
                        reduction(name, "random_init_lsm", 0), reduction(name, "random_init_lsm", 1),
                        reduction(name, "median_single_learner", 1) if name == "ensemble" else ""))
    header = ["scheme", "tau1", "tau2", "tau1_step_median", "tau2_step_median",
              "tau1_reduction_vs_random_init_pct", "tau2_reduction_vs_random_init_pct",
              "tau2_reduction_vs_median_learner_pct"]
    return {
        "variance_steps.csv": format_table("variance-report/steps", cfg, ["scheme", "step", "tau1", "tau2"],
                                           step_rows, notes, seeds),
        "variance_summary.csv": format_table("variance-report", cfg, header, summary, notes, seeds),
    }


# -- tracking-report -------------------------------------------------------------------

def tracking_report(cfg: ExperimentConfig, save_model_path=None) -> dict:
    """Truth versus prediction for one element over the tracked and forecast spans."""
    sched, tr = cfg["schedule"], cfg["tracking"]
    T, H = sched["T"], sched["horizon"]
    full = source_trajectory(cfg, T + H)
    tracked, future = full[:T], full.phases[T:]
    start = cfg["learner"]["washout_T0"] + 1
    seed = derive_seed(cfg.seed, "tracking", tr["scheme"])
    if tr["scheme"] == "ensemble":
        model = _train_ensemble(cfg, tracked, seed)
        one_step = ensemble_one_step_predictions(model, tracked, start)
        fc = ensemble_forecast(model, tracked, H, cfg["ensemble"]["shared_feedback"]).phases
    else:
        model = _train_single(cfg, tr["scheme"], tracked, seed)
        one_step = one_step_predictions(model, tracked, start)
        fc = forecast(model, tracked, H).phases
    if save_model_path is not None:
        if tr["scheme"] == "ensemble":
            save_ensemble(model, save_model_path)
        else:
            save_model(model, save_model_path)

    m = tr["element"]
    truth = full.phases[:, m]
    rows = [(t, "tracked", truth[t], "", "") for t in range(start)]
    track_err = angular_difference(one_step, tracked.phases[start:])
    rows += [(t, "tracked", truth[t], one_step[t - start, m], abs(track_err[t - start, m]))
             for t in range(start, T)]
    fc_err = angular_difference(fc, future)
    rows += [(T + h, "forecast", truth[T + h], fc[h, m], abs(fc_err[h, m])) for h in range(H)]
    steps = format_table("tracking-report/steps", cfg,
                         ["step", "segment", "truth", "prediction", "abs_error"], rows,
                         notes=[f"element {m}; scheme {tr['scheme']}; model seed {seed}",
                                "tracked predictions are one-step (teacher forced); forecast is closed loop"])

    persistence = angular_difference(np.broadcast_to(tracked.phases[-1], future.shape), future)
    agg = [
        ("tracked_one_step_median_abs_error", float(np.median(np.abs(track_err)))),
        ("tracked_one_step_rms_error", _rms(track_err)),
        ("forecast_mean_abs_error", float(np.mean(np.abs(fc_err)))),
        ("forecast_rms_error", _rms(fc_err)),
        ("persistence_mean_abs_error", float(np.mean(np.abs(persistence)))),
        ("element_tracked_median_abs_error", float(np.median(np.abs(track_err[:, m])))),
        ("element_forecast_mean_abs_error", float(np.mean(np.abs(fc_err[:, m])))),
    ]
    summary = format_table("tracking-report", cfg, ["metric", "value", "context"],
                           [(k, v, "all elements" if not k.startswith("element") else f"element {m}")
                            for k, v in agg],
                           notes=["errors are wrapped angular differences in radians"])
    return {"tracking_steps.csv": steps, "tracking_summary.csv": summary}


# -- se-sweep --------------------------------------------------------------------

def _mean_se(slots, configs, P, noise) -> float:
    return float(np.mean([zf_spectral_efficiency(ch, th, P, noise) for ch, th in zip(slots, configs)]))


def se_point(cfg: ExperimentConfig, n_users: int, n_ris: int, seed: int) -> dict:
    """Mean ZF sum SE over the evaluation slots for every configured scheme.

    Predictors are trained on the oracle trajectory of the first
    ``train_fraction`` of the slots; on each later slot they predict the phases
    from the oracle history up to the previous slot, evaluated on that slot's
    true channel.
    """
    sysd, o = cfg["system"], cfg["oracle"]
    P, noise = sysd["power_P"], sysd["noise_variance"]
    T = cfg["schedule"]["T"]
    chan_seed = derive_seed(cfg.seed, "channel", seed)
    slots = channel_slots(cfg, T, chan_seed, n_users, n_ris)
    traj = _oracle(cfg, slots)
    start = cfg.n_train
    evals = slots[start:]
    out = {}
    for scheme in cfg["baselines"]:
        model_seed = derive_seed(cfg.seed, scheme, seed)
        if scheme == "oracle":
            thetas = [PhaseConfig(p) for p in traj.phases[start:]]
            out[scheme] = _mean_se(evals, thetas, P, noise)
        elif scheme in INIT_MODES:
            pred = one_step_predictions(_train_single(cfg, scheme, traj, model_seed), traj, start)
            out[scheme] = _mean_se(evals, [PhaseConfig(p) for p in pred], P, noise)
        elif scheme == "ensemble":
            pred = ensemble_one_step_predictions(_train_ensemble(cfg, traj, model_seed), traj, start)
            out[scheme] = _mean_se(evals, [PhaseConfig(p) for p in pred], P, noise)
        elif scheme == "random_reflection":
            rng = np.random.default_rng(model_seed)
            out[scheme] = _mean_se(evals, [random_phase_config(n_ris, rng) for _ in evals], P, noise)
        elif scheme == "without_ris":
            out[scheme] = _mean_se(evals, [PhaseConfig.blocked(n_ris)] * len(evals), P, noise)
        elif scheme == "without_direct_link":
            cut = [ch.without_direct_link() for ch in evals]
            seeded = PhaseConfig(traj.phases[start - 1] if o["warm_start"] else np.zeros(n_ris))
            run = oracle_trajectory(cut, P, o["grid_B"], o["max_sweeps"], o["warm_start"], noise,
                                    multistart=o["multistart"], initial=seeded)
            out[scheme] = _mean_se(cut, [PhaseConfig(p) for p in run.phases], P, noise)
    return out


def _se_task(args):
    data, n_users, n_ris, seed = args
    return se_point(ExperimentConfig(data), n_users, n_ris, seed)


def se_sweep(cfg: ExperimentConfig, sweeps=SWEEPS, jobs: Optional[int] = None) -> dict:
    """SE per (sweep, point, seed, scheme) plus median / p10 / p90 over seeds.

    ``users`` varies K at the configured RIS size; ``ris_size`` varies M at the
    configured K. Seeds share the channel seed across sweep points. Tasks run
    on a process pool when ``jobs`` > 1; rows are always emitted in
    (sweep, point, seed) order.
    """
    unknown = [s for s in sweeps if s not in SWEEPS]
    if unknown:
        raise ConfigError([f"unknown sweep {unknown}; choose from {list(SWEEPS)}"])
    sysd, sw = cfg["system"], cfg["sweeps"]
    seeds = sw["seeds"]
    tasks, keys = [], []
    for sweep in sweeps:
        points = sw["users"] if sweep == "users" else sw["ris_sizes"]
        for p in points:
            K, M = (p, sysd["n_ris_elements"]) if sweep == "users" else (sysd["n_users"], p)
            for s in seeds:
                tasks.append((cfg.data, K, M, s))
                keys.append((sweep, p, s))
    jobs = cfg["jobs"] if jobs is None else jobs
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_se_task, tasks))
    else:
        results = [_se_task(t) for t in tasks]

    schemes = list(cfg["baselines"])
    raw = [(sweep, p, s, scheme, res[scheme])
           for (sweep, p, s), res in zip(keys, results) for scheme in schemes]
    summary = []
    for sweep in sweeps:
        points = sw["users"] if sweep == "users" else sw["ris_sizes"]
        for p in points:
            for scheme in schemes:
                vals = [r[4] for r in raw if r[0] == sweep and r[1] == p and r[3] == scheme]
                summary.append((sweep, p, scheme, float(np.median(vals)),
                                float(np.percentile(vals, 10)), float(np.percentile(vals, 90)), len(vals)))
    notes = ["se is the ZF sum spectral efficiency in nats/s/Hz averaged over the evaluation slots",
             "users sweep varies K at the configured RIS size; ris_size sweep varies M at the configured K"]
    return {
        "se_raw.csv": format_table("se-sweep", cfg, ["sweep", "point", "seed", "scheme", "se"], raw, notes, seeds),
        "se_summary.csv": format_table("se-sweep/summary", cfg,
                                       ["sweep", "point", "scheme", "median", "p10", "p90", "n_seeds"],
                                       summary, notes, seeds),
    }


# -- oracle-gen -------------------------------------------------------------------------

def oracle_gen(cfg: ExperimentConfig) -> dict:
    """Ground-truth phase trajectory of the configured system, as trajectory CSV."""
    T = cfg["schedule"]["T"]
    traj = _oracle(cfg, channel_slots(cfg, T, cfg.seed))
    comments = ["report: oracle-gen",
                "config: " + _config_json(cfg),
                f"channel seed {cfg.seed}; per-slot coordinate-ascent optimum on the phase grid"]
    lines = [f"# {c}" for c in comments]
    lines.append(",".join(["t"] + [f"phi_{m}" for m in range(traj.n_elements)]))
    lines += [",".join([str(t)] + [f"{v:.17g}" for v in row]) for t, row in enumerate(traj.phases)]
    return {"oracle_trajectory.csv": "\n".join(lines) + "\n"}
