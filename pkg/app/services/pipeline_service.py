import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn

from app.config.loader import dump_experiment_config
from app.engine.oracle import polygon_bank, polygon_nearest
from app.engine.params import ParamSpec, spec_for
from app.engine.sampling import DomainSampler, SamplerKind, sample_params
from app.exceptions import ConfigError, MissingArtifactError
from app.nets.models import IdentityFeature
from app.schemas import EvalReport, ExperimentConfig, LossReport, MethodRow, RecoveryReport
from app.services.baseline_service import baseline_service
from app.services.data_service import data_service
from app.services.discrepancy_service import discrepancy_service
from app.services.evaluation_service import evaluation_service
from app.services.feature_service import feature_service
from app.services.manifest_service import manifest_service, utcnow
from app.services.persistence_service import persistence_service
from app.services.report_service import report_service
from app.services.retrieval_service import RetrievalSetup, retrieval_service
from app.services.surrogate_service import surrogate_service
from app.services.tos_service import tos_service
from app.services.training_utils import NoisePool, TensorPool, make_optimizer, to_tensor

logger = logging.getLogger(__name__)

BASELINES = ("dcgan", "dtn", "cbar", "tos-fixed-cbar", "dann")


@dataclass
class RunLayout:
    """Directory layout of one run: data/, checkpoints/, losses/, reports/"""

    root: Path

    @property
    def data(self) -> Path:
        return self.root / "data"

    @property
    def checkpoints(self) -> Path:
        return self.root / "checkpoints"

    @property
    def losses(self) -> Path:
        return self.root / "losses"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    def shard(self, name: str) -> Path:
        return self.data / name

    def checkpoint(self, name: str) -> Path:
        return self.checkpoints / name

    def has_checkpoint(self, name: str) -> bool:
        return (self.checkpoint(name) / "manifest.json").is_file()


def _channels(spec: ParamSpec) -> int:
    return 1 if spec.name == "polygon" else 3


class PipelineService:
    """The CLI stages: each reads its inputs from the run directory and records its outputs"""

    # Artifacts

    def load_shard(self, layout: RunLayout, name: str) -> Dict[str, np.ndarray]:
        if not (layout.shard(name) / "manifest.json").is_file():
            raise MissingArtifactError(f"Dataset shard '{name}' not found under {layout.data}; run 'gen-data' first")
        return persistence_service.load_shard(layout.shard(name)).arrays

    def load_net(self, layout: RunLayout, name: str, stage: str) -> nn.Module:
        if not layout.has_checkpoint(name):
            raise MissingArtifactError(f"Checkpoint '{name}' not found under {layout.checkpoints}; run '{stage}' first")
        module, _ = persistence_service.load_checkpoint(layout.checkpoint(name))
        return module

    def load_f(self, layout: RunLayout, config: ExperimentConfig, role: str = "f") -> nn.Module:
        if config.data.domain == "polygon":
            return IdentityFeature(config.train.noise_dim)
        return self.load_net(layout, role, "train-f")

    def save_net(
        self,
        layout: RunLayout,
        config: ExperimentConfig,
        name: str,
        module: nn.Module,
        step: int,
        optimizers: Optional[Dict[str, torch.optim.Optimizer]] = None,
    ) -> Path:
        directory = layout.checkpoint(name)
        persistence_service.save_checkpoint(
            directory, name, module, step=step, seed=config.train.seed, config_hash=config.config_hash(),
            hyperparameters=config.train.model_dump(mode="json"), optimizers=optimizers,
        )
        return directory

    def write_losses(self, layout: RunLayout, report: LossReport) -> Path:
        for term in sorted(report.series):
            head, tail = report.head_tail_means(term)
            logger.debug(f"[{report.name}] {term}: {head:.5f} -> {tail:.5f}")
        return report_service.write_loss_series(report, layout.losses / f"{report.name}.csv")

    def _record(self, layout, config, stage, inputs, outputs, started):
        manifest_service.record_stage(layout.root, config, stage, inputs, outputs, started)

    # Adversarial stages share checkpointing and resume

    def _resume_nets(
        self, layout: RunLayout, prefix: str, nets: Dict[str, nn.Module], resume: bool
    ) -> Tuple[Dict[str, nn.Module], int]:
        names = {key: f"{prefix}_{key}" for key in nets}
        if not resume or not all(layout.has_checkpoint(n) for n in names.values()):
            return nets, 0
        loaded, steps = {}, set()
        for key, name in names.items():
            module, manifest = persistence_service.load_checkpoint(layout.checkpoint(name))
            loaded[key] = module
            steps.add(manifest.step)
        if len(steps) != 1:
            raise ConfigError(f"Checkpoints of '{prefix}' are from different steps {sorted(steps)}; cannot resume")
        step = steps.pop()
        logger.info(f"Resuming '{prefix}' from step {step}")
        return loaded, step

    def _adversarial_hooks(self, layout: RunLayout, config: ExperimentConfig, prefix: str, nets: Dict[str, nn.Module], start: int):
        def restore(trainer):
            if start:
                for key, optimizer in trainer.optimizers().items():
                    if key in nets:
                        persistence_service.restore_optimizers(layout.checkpoint(f"{prefix}_{key}"), {key: optimizer})

        def on_checkpoint(step: int, trainer) -> str:
            optimizers = trainer.optimizers()
            for key, net in nets.items():
                opts = {key: optimizers[key]} if key in optimizers else None
                self.save_net(layout, config, f"{prefix}_{key}", net, step, opts)
            return str(layout.checkpoint(f"{prefix}_g"))

        return restore, on_checkpoint

    def _run_adversarial(
        self,
        layout: RunLayout,
        config: ExperimentConfig,
        prefix: str,
        nets: Dict[str, nn.Module],
        iters: int,
        resume: bool,
        train: Callable[..., object],
    ) -> Tuple[Dict[str, nn.Module], LossReport, List[Path]]:
        nets, start = self._resume_nets(layout, prefix, nets, resume)
        restore, on_checkpoint = self._adversarial_hooks(layout, config, prefix, nets, start)
        captured = {}

        def hook(trainer):
            captured["trainer"] = trainer
            restore(trainer)

        result = train(nets, start, on_checkpoint, hook)
        on_checkpoint(iters, captured["trainer"])
        outputs = [layout.checkpoint(f"{prefix}_{key}") for key in nets]
        outputs.append(self.write_losses(layout, result.report))
        return nets, result.report, outputs

    # Stages

    def gen_data(self, config: ExperimentConfig, layout: RunLayout) -> List[str]:
        started = utcnow()
        dump_experiment_config(config, layout.root / "config.yaml")
        manifests = data_service.generate(config, layout.data)
        self._record(layout, config, "gen-data", [], [layout.shard(n) for n in manifests], started)
        return sorted(manifests)

    def train_e(self, config: ExperimentConfig, layout: RunLayout, resume: bool = False, device: str = "cpu"):
        started = utcnow()
        spec = spec_for(config.data.domain, config.data.variant)
        cfg = config.stage_config("e")
        pairs = self.load_shard(layout, "pairs_train")

        e, start = surrogate_service.build_e(spec, cfg), 0
        if resume and layout.has_checkpoint("e"):
            e, manifest = persistence_service.load_checkpoint(layout.checkpoint("e"))
            start = manifest.step
        e.to(device)
        optimizer = make_optimizer(e, cfg)
        if start:
            persistence_service.restore_optimizers(layout.checkpoint("e"), {"e": optimizer})

        def on_checkpoint(step, module, opt):
            self.save_net(layout, config, "e", module, step, {"e": opt})

        e, report = surrogate_service.train_e(
            e, (pairs["params"], pairs["images"]), cfg, start, optimizer, on_checkpoint, device
        )
        self.save_net(layout, config, "e", e, cfg.iters, {"e": optimizer})
        fidelity = surrogate_service.eval_e_fidelity(
            e, spec, config.eval.fidelity_samples, cfg.resolution, cfg.seed, device
        )
        holdout = self.load_shard(layout, "pairs_holdout")
        fidelity = surrogate_service.split_fidelity(
            fidelity, e, (pairs["params"], pairs["images"]), (holdout["params"], holdout["images"]), device
        )
        layout.reports.mkdir(parents=True, exist_ok=True)
        (layout.reports / "fidelity.json").write_text(fidelity.model_dump_json(indent=2), encoding="utf-8")
        outputs = [layout.checkpoint("e"), self.write_losses(layout, report), layout.reports / "fidelity.json"]
        self._record(
            layout, config, "train-e", [layout.shard("pairs_train"), layout.shard("pairs_holdout")], outputs, started
        )
        return fidelity

    def train_f(self, config: ExperimentConfig, layout: RunLayout, device: str = "cpu") -> List[str]:
        started = utcnow()
        if config.data.domain == "polygon":
            self.save_net(layout, config, "f", IdentityFeature(config.train.noise_dim), 0)
            self._record(layout, config, "train-f", [], [layout.checkpoint("f")], started)
            logger.info("Polygon runs embed noise with the identity map; nothing to train")
            return ["f"]

        outputs, inputs, reports = [], [], []
        for role in ("f", "f_eval"):
            shard = self.load_shard(layout, f"{role}_train")
            fm, loss = feature_service.train_feature_map(
                shard["images"], shard["labels"], config.stage_config(role), role=role, device=device
            )
            self.save_net(layout, config, role, fm, config.stage_config(role).iters)
            reports.append(feature_service.feature_report(fm, shard["images"], shard["labels"], role, role))
            inputs.append(layout.shard(f"{role}_train"))
            outputs += [layout.checkpoint(role), self.write_losses(layout, loss)]

        layout.reports.mkdir(parents=True, exist_ok=True)
        path = layout.reports / "features.json"
        path.write_text("[\n" + ",\n".join(r.model_dump_json(indent=2) for r in reports) + "\n]\n", encoding="utf-8")
        outputs.append(path)
        self._record(layout, config, "train-f", inputs, outputs, started)
        return ["f", "f_eval"]

    def _pools(self, config: ExperimentConfig, layout: RunLayout, device: str):
        seed = config.train.seed
        t_pool = TensorPool("t", to_tensor(self.load_shard(layout, "t")["images"]), seed, device)
        if config.data.domain == "polygon":
            s_pool = NoisePool("s-noise", config.train.noise_dim, seed, device)
            inputs = [layout.shard("t")]
        else:
            s_pool = TensorPool("s", to_tensor(self.load_shard(layout, "s")["images"]), seed, device)
            inputs = [layout.shard("t"), layout.shard("s")]
        return s_pool, t_pool, inputs

    def _g_in_dim(self, config: ExperimentConfig) -> int:
        return config.train.noise_dim if config.data.domain == "polygon" else config.train.embed_dim

    def train_tos(self, config: ExperimentConfig, layout: RunLayout, resume: bool = False, device: str = "cpu") -> LossReport:
        started = utcnow()
        spec = spec_for(config.data.domain, config.data.variant)
        cfg = config.stage_config("tos")
        e = self.load_net(layout, "e", "train-e")
        f = self.load_f(layout, config)
        s_pool, t_pool, inputs = self._pools(config, layout, device)
        g, c, d = tos_service.build_tos_nets(spec, cfg, self._g_in_dim(config), _channels(spec))

        def train(nets, start, on_checkpoint, hook):
            return tos_service.train_tos(
                cfg, e, f, s_pool, t_pool, (nets["g"], nets["c"], nets["d"]),
                start_step=start, trainer_hook=hook, on_checkpoint=on_checkpoint, device=device,
            )

        _, report, outputs = self._run_adversarial(layout, config, "tos", {"g": g, "c": c, "d": d}, cfg.iters, resume, train)
        self._record(layout, config, "train-tos", inputs + [layout.checkpoint("e")], outputs, started)
        return report

    def train_baseline(
        self, kind: str, config: ExperimentConfig, layout: RunLayout, resume: bool = False, device: str = "cpu"
    ) -> LossReport:
        if kind not in BASELINES:
            raise ConfigError(f"Unknown baseline '{kind}'; choose one of {', '.join(BASELINES)}")
        started = utcnow()
        spec = spec_for(config.data.domain, config.data.variant)
        channels = _channels(spec)

        if kind == "dcgan":
            cfg = config.stage_config("dcgan")
            t_pool = TensorPool("t", to_tensor(self.load_shard(layout, "t")["images"]), cfg.seed, device)
            g, d = baseline_service.build_dcgan_nets(cfg, channels)

            def train(nets, start, on_checkpoint, hook):
                return baseline_service.train_dcgan(
                    t_pool, cfg, (nets["g"], nets["d"]), start, on_checkpoint, hook, device
                )

            _, report, outputs = self._run_adversarial(layout, config, "dcgan", {"g": g, "d": d}, cfg.iters, resume, train)
            self._record(layout, config, "train-baseline dcgan", [layout.shard("t")], outputs, started)
            return report

        if kind == "cbar":
            cfg = config.stage_config("cbar")
            pairs = self.load_shard(layout, "pairs_train")
            cbar, report = baseline_service.train_post_hoc_cbar(
                baseline_service.build_cbar(spec, cfg, channels), (pairs["images"], pairs["params"]), cfg, device=device
            )
            self.save_net(layout, config, "cbar", cbar, cfg.iters)
            outputs = [layout.checkpoint("cbar"), self.write_losses(layout, report)]
            self._record(layout, config, "train-baseline cbar", [layout.shard("pairs_train")], outputs, started)
            return report

        if kind == "dann":
            if config.data.domain == "polygon":
                raise ConfigError("The DANN baseline needs photos; the polygon domain has none")
            cfg = config.stage_config("dann")
            pairs = self.load_shard(layout, "pairs_train")
            target = self.load_shard(layout, "s")["images"]
            nets, report = baseline_service.train_dann(
                baseline_service.build_dann(spec, cfg, channels), (pairs["images"], pairs["params"]), target, cfg, device=device
            )
            self.save_net(layout, config, "dann", nets, cfg.iters)
            outputs = [layout.checkpoint("dann"), self.write_losses(layout, report)]
            self._record(layout, config, "train-baseline dann", [layout.shard("pairs_train"), layout.shard("s")], outputs, started)
            return report

        # dtn and tos-fixed-cbar share the TOS generator and discriminator
        stage = kind.replace("-", "_")
        cfg = config.stage_config(stage)
        f = self.load_f(layout, config)
        s_pool, t_pool, inputs = self._pools(config, layout, device)
        g, _, d = tos_service.build_tos_nets(spec, cfg, self._g_in_dim(config), channels)

        if kind == "dtn":
            def train(nets, start, on_checkpoint, hook):
                return baseline_service.train_dtn(
                    cfg, f, s_pool, t_pool, (nets["g"], nets["d"]), start, on_checkpoint, hook, device
                )
        else:
            e = self.load_net(layout, "e", "train-e")
            cbar = self.load_net(layout, "cbar", "train-baseline cbar")
            inputs += [layout.checkpoint("e"), layout.checkpoint("cbar")]

            def train(nets, start, on_checkpoint, hook):
                return baseline_service.train_tos_fixed_cbar(
                    cfg, e, f, cbar, s_pool, t_pool, (nets["g"], nets["d"]), start, on_checkpoint, hook, device
                )

        _, report, outputs = self._run_adversarial(layout, config, stage, {"g": g, "d": d}, cfg.iters, resume, train)
        self._record(layout, config, f"train-baseline {kind}", inputs, outputs, started)
        return report

    # Evaluation

    def _checkpoint_hashes(self, layout: RunLayout, names: List[str]) -> Dict[str, str]:
        return {n: persistence_service.artifact_hash(layout.checkpoint(n)) for n in names if layout.has_checkpoint(n)}

    def _save_grid(self, layout: RunLayout, config: ExperimentConfig, name: str, columns: Dict[str, np.ndarray]):
        n = min(config.eval.grid_rows, *(len(v) for v in columns.values()))
        persistence_service.save_shard(
            layout.reports / f"grid_{name}", f"grid_{name}", {k: v[:n] for k, v in columns.items()},
            spec_hash="", count=n, seed=config.train.seed, resolution=config.train.resolution,
            meta={"columns": list(columns)},
        )
        return layout.reports / f"grid_{name}"

    def evaluate(self, config: ExperimentConfig, layout: RunLayout, device: str = "cpu") -> EvalReport:
        started = utcnow()
        if config.data.domain == "polygon":
            report, inputs, outputs = self._evaluate_polygon(config, layout, device)
        else:
            report, inputs, outputs = self._evaluate_sprite(config, layout, device)
        layout.reports.mkdir(parents=True, exist_ok=True)
        path = layout.reports / "eval_report.json"
        path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
        self._record(layout, config, "evaluate", inputs, outputs + [path], started)
        return report

    def _evaluate_polygon(self, config: ExperimentConfig, layout: RunLayout, device: str):
        spec = spec_for("polygon")
        e = self.load_net(layout, "e", "train-e")
        g = self.load_net(layout, "tos_g", "train-tos")
        c = self.load_net(layout, "tos_c", "train-tos")
        f = self.load_f(layout, config)
        n, seed = config.eval.manifold_samples, config.train.seed

        noise = NoisePool("eval-noise", config.train.noise_dim, seed).batch(0, n)
        tos_images = evaluation_service.generate(g, f, noise, device)
        tied = tos_service.forward_maps(noise.to(device), f, g, c, e).tied.cpu().numpy()
        samples = {"tos": tos_images.numpy()}
        names = ["e", "tos_g", "tos_c"]
        if layout.has_checkpoint("dcgan_g"):
            samples["dcgan"] = baseline_service.sample_generator(self.load_net(layout, "dcgan_g", ""), n, seed, device).numpy()
            names.append("dcgan_g")

        manifold = {name: evaluation_service.engine_manifold_distance(images) for name, images in samples.items()}
        rows = [MethodRow(method="tos", compliance=evaluation_service.compliance_error(tos_images, e, c, device))]
        if "dcgan" in samples:
            rows.append(MethodRow(method="dcgan"))
        for name, value in manifold.items():
            logger.info(f"Engine manifold distance [{name}]: {value:.5f}")

        fidelity = surrogate_service.eval_e_fidelity(e, spec, config.eval.fidelity_samples, config.train.resolution, seed, device)
        grid = self._save_grid(
            layout, config, "tos", {"generated": samples["tos"], "tied": tied, "nearest": _nearest_renders(samples["tos"])}
        )
        grids = [grid]
        if "dcgan" in samples:
            grids.append(self._save_grid(
                layout, config, "dcgan", {"generated": samples["dcgan"], "nearest": _nearest_renders(samples["dcgan"])}
            ))

        report = EvalReport(
            domain="polygon",
            config_hash=config.config_hash(),
            checkpoint_hashes=self._checkpoint_hashes(layout, names),
            rows=rows,
            manifold_distance=manifold,
            fidelity=fidelity,
        )
        return report, [layout.checkpoint(n) for n in names], grids

    def _choose_queries(self, queries: np.ndarray, f, g, c, e, multi_image: bool, device: str) -> np.ndarray:
        """One photo per probe identity: the most self-consistent one, or the first"""
        if not multi_image or c is None:
            return queries[:, 0]
        chosen = []
        for photos in queries:
            def pipeline(x):
                return tos_service.forward_maps(x.to(device), f, g, c, e).tied.cpu()
            chosen.append(photos[retrieval_service.multi_image_select(photos, f, pipeline)])
        return np.stack(chosen)

    def _evaluate_sprite(self, config: ExperimentConfig, layout: RunLayout, device: str):
        spec = spec_for("sprite", config.data.variant)
        res = config.train.resolution
        e = self.load_net(layout, "e", "train-e")
        f = self.load_f(layout, config)
        f_eval = self.load_f(layout, config, "f_eval")
        g = self.load_net(layout, "tos_g", "train-tos")
        c = self.load_net(layout, "tos_c", "train-tos")
        probes = self.load_shard(layout, "probes")
        distractors = self.load_shard(layout, "distractors").get("images", np.zeros((0, 3, res, res), np.float32))
        setup = RetrievalSetup(probes["mates"], distractors, f_eval, config.eval.distance)
        truth = probes["params"]

        rows: List[MethodRow] = []
        recovery: Dict[str, RecoveryReport] = {}
        names = ["e", "f", "f_eval", "tos_g", "tos_c"]

        def e_rank_of(params: np.ndarray) -> int:
            return retrieval_service.retrieval_median_rank(setup, data_service.render_batch(spec, params, res))[0]

        manual, _ = retrieval_service.retrieval_median_rank(setup, data_service.render_batch(spec, truth, res))
        rows.append(MethodRow(method="manual_analog", e_rank=manual, recovery=1.0))

        cbar = self.load_net(layout, "cbar", "") if layout.has_checkpoint("cbar") else None
        methods = [("tos", g, c)]
        if layout.has_checkpoint("tos_fixed_cbar_g") and cbar is not None:
            methods.append(("tos_fixed_cbar", self.load_net(layout, "tos_fixed_cbar_g", ""), cbar))
            names.append("tos_fixed_cbar_g")
        if layout.has_checkpoint("dtn_g"):
            methods.append(("dtn", self.load_net(layout, "dtn_g", ""), cbar))
            names.append("dtn_g")
        if cbar is not None:
            names.append("cbar")

        tos_x = tos_generated = None
        for method, g_net, c_net in methods:
            x = self._choose_queries(probes["queries"], f, g_net, c_net, e, config.eval.multi_image, device)
            generated = evaluation_service.generate(g_net, f, x, device).numpy()
            g_rank, _ = retrieval_service.retrieval_median_rank(setup, generated)
            row = MethodRow(method=method, g_rank=g_rank)
            if c_net is not None:
                predicted = evaluation_service.predict_params(c_net, g_net, f, x, device)
                row.e_rank = e_rank_of(predicted)
                row.compliance = evaluation_service.compliance_error(generated, e, c_net, device)
                recovery[method] = evaluation_service.recovery_from_params(predicted, truth, spec)
                row.recovery = float(np.mean(list(recovery[method].per_slot.values())))
            rows.append(row)
            if method == "tos":
                tos_x, tos_generated = x, generated

        if layout.has_checkpoint("dann"):
            dann = self.load_net(layout, "dann", "")
            predicted = baseline_service.dann_predict(dann, probes["queries"][:, 0], device).numpy()
            recovery["dann"] = evaluation_service.recovery_from_params(predicted, truth, spec)
            rows.append(MethodRow(
                method="dann", e_rank=e_rank_of(predicted),
                recovery=float(np.mean(list(recovery["dann"].per_slot.values()))),
            ))
            names.append("dann")

        random_params = np.stack([p.values for p in _random_params(spec, config, len(truth))])
        rows.append(MethodRow(method="random", e_rank=e_rank_of(random_params)))

        t_images = self.load_shard(layout, "t")["images"][: config.eval.manifold_samples]
        proxy = discrepancy_service.estimate_discrepancy(
            tos_generated, t_images, config.eval, iters=config.stages.critic, seed=config.train.seed
        )
        bound = evaluation_service.bound_term_report(
            e, c, g, f, spec, tos_x, truth, t_images[: len(tos_x)], proxy, device
        )

        tied = tos_service.forward_maps(to_tensor(tos_x, device), f, g, c, e).tied.cpu().numpy()
        grid = self._save_grid(layout, config, "tos", {
            "input": tos_x, "generated": tos_generated, "tied": tied,
            "truth": data_service.render_batch(spec, truth, res),
        })

        report = EvalReport(
            domain="sprite",
            config_hash=config.config_hash(),
            checkpoint_hashes=self._checkpoint_hashes(layout, names),
            rows=rows,
            recovery=recovery,
            bound=bound,
            discrepancy_proxy=proxy,
            gallery_size=setup.gallery_size,
            probes=len(truth),
        )
        inputs = [layout.checkpoint(n) for n in names] + [layout.shard("probes"), layout.shard("distractors")]
        return report, inputs, [grid]

    # Report

    def report(self, config: ExperimentConfig, layout: RunLayout) -> List[Path]:
        started = utcnow()
        path = layout.reports / "eval_report.json"
        if not path.is_file():
            raise MissingArtifactError(f"No evaluation report under {layout.reports}; run 'evaluate' first")
        report = EvalReport.model_validate_json(path.read_text(encoding="utf-8"))
        losses = [
            report_service.read_loss_series(p, p.stem) for p in sorted(layout.losses.glob("*.csv"))
        ] if layout.losses.is_dir() else []

        grids = {}
        for directory in sorted(layout.reports.glob("grid_*")):
            if not (directory / "manifest.json").is_file():
                continue
            shard = persistence_service.load_shard(directory)
            columns = shard.manifest.meta.get("columns", sorted(shard.arrays))
            grids[directory.name[len("grid_"):]] = [
                [shard.arrays[col][i] for col in columns] for i in range(shard.manifest.count)
            ]
        files = report_service.emit_report(report, losses, layout.reports, grids)
        self._record(layout, config, "report", [path], files, started)
        return files


def _nearest_renders(images: np.ndarray) -> np.ndarray:
    """Closest true polygon render per image, as N x 1 x R x R"""
    indices, _ = polygon_nearest(images)
    res = images.shape[-1]
    _, renders = polygon_bank(res)
    return renders[indices].reshape(-1, 1, res, res)


def _random_params(spec: ParamSpec, config: ExperimentConfig, n: int):
    return sample_params(spec, DomainSampler(SamplerKind.PARAMS, config.train.seed, "random-probe"), n)


# Singleton instance
pipeline_service = PipelineService()
