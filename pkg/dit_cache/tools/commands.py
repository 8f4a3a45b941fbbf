"""
Subcommands of the dit_cache CLI.

Each command reads the validated RunConfig, does its work inside an open
RunDirectory and writes every output through it, so a failed command still
leaves a manifest marked "failed".
"""

import io
from pathlib import Path
from typing import List, Optional

import numpy as np

from dit_cache.common.errors import ConfigError
from dit_cache.common.run_config import RunConfig
from dit_cache.common.run_directory import RunDirectory
from dit_cache.debug_system import get_debug_logger, LogCategory, debug_function
from dit_cache.tools.DiT_Model.Checkpoint import checkpoint_bytes, load_checkpoint
from dit_cache.tools.DiT_Model.Core import DiTModel
from dit_cache.tools.Eval.Core import EvalReport, evaluate_router, seed_inputs, trajectory_mse
from dit_cache.tools.Eval.Heuristics import HeuristicKind, HeuristicSchedule, make_heuristic, random_baseline
from dit_cache.tools.Eval.Reports import curve_csv, render_table, report_csv, report_json
from dit_cache.tools.Feature_Cache.Core import Router
from dit_cache.tools.Feature_Cache.Router_File import grid_csv, load_router, router_bytes
from dit_cache.tools.Router_Trainer.Core import TrainingLog
from dit_cache.tools.Router_Trainer.Dataset import SyntheticDataset
from dit_cache.tools.Router_Trainer.Pretrain import check_held_out_loss, denoising_loss, pretrain_teacher
from dit_cache.tools.Router_Trainer.Proxy import gen_proxy, proxy_trace
from dit_cache.tools.Router_Trainer.Train import train_router
from dit_cache.tools.Sampler.Core import make_schedule, sample

# Module-level debug logger
debug_logger = get_debug_logger()

TEACHER_NAME = "teacher.ditc"
ROUTER_NAME = "router.json"


def require_files(**paths):
    """ConfigError listing every referenced file that is missing"""
    missing = []
    for flag, value in paths.items():
        values = value if isinstance(value, (list, tuple)) else [value]
        if not values or values == [None]:
            missing.append(f"--{flag.replace('_', '-')} is required")
            continue
        missing += [f"--{flag.replace('_', '-')}: file not found: {v}" for v in values if not Path(v).is_file()]
    if missing:
        raise ConfigError(missing)


def load_teacher(path, config: RunConfig) -> DiTModel:
    teacher, _ = load_checkpoint(path)
    if teacher.config.to_dict() != config.model.to_dict():
        debug_logger.warning(LogCategory.CONFIG, "Teacher checkpoint overrides [model] settings", {
            "checkpoint": teacher.config.to_dict()})
    return teacher.requires_grad_(False)


def method_name(path) -> str:
    return Path(path).stem


#######################################################
class Command:
    name = ""
    description = ""

    def run(self, config: RunConfig, args, run_dir: RunDirectory):
        raise NotImplementedError


class PretrainCommand(Command):
    name = "pretrain"
    description = "Pretrain the toy DiT teacher on synthetic images"

    @debug_function(LogCategory.TRAINING)
    def run(self, config: RunConfig, args, run_dir: RunDirectory) -> Path:
        schedule = make_schedule(config.run.t_train)
        dataset = SyntheticDataset.for_model(config.model, config.run.seed)
        model = pretrain_teacher(config.model, dataset, schedule, config.pretrain, config.run.progress)
        held_out = denoising_loss(model, dataset, schedule, seed=config.run.seed + 1000)
        debug_logger.info(LogCategory.TRAINING, "Pretraining finished", {"held_out_loss": held_out})
        metadata = {"steps": config.pretrain.steps, "held_out_loss": held_out, "t_train": config.run.t_train}
        run_dir.write_json("pretrain.json", metadata)
        check_held_out_loss(held_out, config.pretrain)
        return run_dir.write_bytes(TEACHER_NAME, checkpoint_bytes(model, metadata))


class TrainRouterCommand(Command):
    name = "train-router"
    description = "Train a caching router against a frozen teacher"

    @debug_function(LogCategory.TRAINING)
    def run(self, config: RunConfig, args, run_dir: RunDirectory) -> Path:
        require_files(teacher=args.teacher)
        teacher = load_teacher(args.teacher, config)
        schedule = make_schedule(config.run.t_train)
        log = TrainingLog()
        router = train_router(teacher, config.train, config.sampler, schedule, log=log,
                              run_dir=run_dir, progress=config.run.progress)
        run_dir.write_text("training_log.csv", log.to_csv())
        if log.proxies:
            header = ["refreshed_at"] + [f"lambda_{t}" for t in range(1, config.sampler.T + 1)]
            run_dir.write_csv("proxy.csv", header,
                              ([p.refreshed_at] + [float(v) for v in p.lam] for p in log.proxies))
        run_dir.write_text("router_grid.csv", grid_csv(router))
        return run_dir.write_bytes(ROUTER_NAME, router_bytes(router))


class SampleCommand(Command):
    name = "sample"
    description = "Generate samples, optionally under a router, with per-step trajectory CSVs"

    @debug_function(LogCategory.SAMPLER)
    def run(self, config: RunConfig, args, run_dir: RunDirectory) -> Path:
        require_files(teacher=args.teacher)
        routers = args.router or []
        if len(routers) > 1:
            raise ConfigError(["sample takes at most one --router"])
        if routers:
            require_files(router=routers)
        elif args.with_proxy:
            raise ConfigError(["--with-proxy needs a --router"])
        teacher = load_teacher(args.teacher, config)
        router = load_router(routers[0], teacher.n_blocks) if routers else None
        schedule = make_schedule(config.run.t_train)

        header = ["t", "mse", "blocks_computed", "blocks_reused"]
        if args.with_proxy:
            header.append("lambda")
        images = []
        for s in range(config.eval.n_seeds):
            x_T, class_id = seed_inputs(teacher, config.run.seed, s, config.eval.batch)
            trajectory = sample(teacher, router, schedule, config.sampler, x_T, class_id)
            images.append(trajectory.x0)
            reference = sample(teacher, None, schedule, config.sampler, x_T, class_id) if router else trajectory
            rows = [[r.t, float(np.sum((r.x_t - reference.x(r.t)) ** 2)),
                     r.metrics["blocks_computed"], r.metrics["blocks_reused"]] for r in trajectory.records]
            rows.append([0, float(np.sum((trajectory.x0 - reference.x0) ** 2)), 0, 0])
            if args.with_proxy:
                proxy = gen_proxy(teacher, schedule, config.sampler, x_T, class_id, router,
                                  config.train.proxy_metric)
                for row in rows:
                    row.append(proxy.at(row[0]) if row[0] > 0 else 0.0)
            run_dir.write_csv(f"trajectory_seed{s}.csv", header, rows)

        if router is not None:
            curve = trajectory_mse(teacher, router, schedule, config.sampler, config.eval.n_seeds,
                                   config.run.seed, config.eval.batch)
            run_dir.write_csv("trajectory_mean.csv", ("t", "mse"),
                              ((t, float(curve[t])) for t in range(config.sampler.T, -1, -1)))

        buffer = io.BytesIO()
        np.save(buffer, np.stack(images))
        return run_dir.write_bytes("samples.npy", buffer.getvalue())


class EvalCommand(Command):
    name = "eval"
    description = "Evaluate routers and heuristic schedules against the plain teacher"

    def heuristic_routers(self, config: RunConfig, N: int) -> List[tuple]:
        T, tau = config.sampler.T, config.train.tau
        out = []
        for name in config.eval.heuristic_list():
            schedule = HeuristicSchedule(HeuristicKind(name), k=config.eval.fora_k,
                                         target=config.eval.random_target, seed=config.run.seed)
            label = f"fora_k{schedule.k}" if name == "fora_uniform" else name
            out.append((label, make_heuristic(schedule, T, N, tau)))
        return out

    def matched_random_routers(self, config: RunConfig, learned: List[tuple]) -> List[tuple]:
        """eval.random_routers random schedules per loaded router, at its cached-cell count"""
        out = []
        for method, router in learned:
            cells = int(router.gates().cached_mask().sum())
            randoms = random_baseline(router.T, router.N, cells, config.eval.random_routers,
                                      seed=config.run.seed, spread=config.eval.random_spread, tau=router.tau)
            out += [(f"{method}_random{j}", r) for j, r in enumerate(randoms)]
        return out

    @debug_function(LogCategory.EVAL)
    def run(self, config: RunConfig, args, run_dir: RunDirectory) -> Path:
        require_files(teacher=args.teacher)
        if args.router:
            require_files(router=args.router)
        teacher = load_teacher(args.teacher, config)
        schedule = make_schedule(config.run.t_train)

        learned = [(method_name(p), load_router(p, teacher.n_blocks)) for p in args.router or []]
        candidates = learned + self.matched_random_routers(config, learned)
        candidates += self.heuristic_routers(config, teacher.n_blocks)
        if not candidates:
            raise ConfigError(["eval needs at least one --router or a heuristic in eval.heuristics"])

        reports: List[EvalReport] = []
        for method, router in candidates:
            report = evaluate_router(teacher, router, schedule, config.sampler, config.eval.n_seeds,
                                     method, config.run.seed, config.eval.batch,
                                     progress=config.run.progress)
            reports.append(report)
            run_dir.write_text(f"curve_{method}.csv", curve_csv(report))
            run_dir.write_text(f"grid_{method}.csv", grid_csv(router))

        print(render_table(reports))
        run_dir.write_text("report.csv", report_csv(reports))
        return run_dir.write_json("report.json", report_json(reports))


class ProxyTraceCommand(Command):
    name = "proxy-trace"
    description = "Per-step L_MSE and image error proxy of a router"

    @debug_function(LogCategory.TRAINING)
    def run(self, config: RunConfig, args, run_dir: RunDirectory) -> Path:
        require_files(teacher=args.teacher, router=args.router)
        if len(args.router) > 1:
            raise ConfigError(["proxy-trace takes exactly one --router"])
        teacher = load_teacher(args.teacher, config)
        router = load_router(args.router[0], teacher.n_blocks)
        schedule = make_schedule(config.run.t_train)
        x_T = np.random.default_rng(config.run.seed).standard_normal(
            (config.train.batch,) + teacher.config.image_shape)
        class_ids = config.train.class_ids(0, teacher.config.n_classes)
        rows = proxy_trace(teacher, router, schedule, config.sampler, x_T, class_ids, config.train.proxy_metric)
        return run_dir.write_csv("proxy_trace.csv", ("t", "l_mse", "lambda"), rows)
