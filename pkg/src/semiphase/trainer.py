"""Training orchestration: supervised warm-up, semi-supervised epochs with
teacher-student consistency and prototype regularization, SGD with classical
momentum and step-halved learning rate, checkpointing, and ablation modes.

Loss assembly is a pure function of (models, bank, batch): triplet terms read
the prototype bank as it stood at the start of the step, and the sequential
per-sample EMA updates (labeled pass first, then gated unlabeled) are applied
to the bank right after, so d(l_total)/d(theta) is exactly what autograd
reports. All stochastic choices derive from per-(epoch, purpose, sample)
streams, which makes runs replayable and checkpoint resume exact without
serializing generator state.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .augment import AugmentPolicy, apply_pixel_policy, strong_policy, strong_view, weak_policy, weak_view
from .checkpoint import load_archive, save_archive
from .config import ModelConfig, RunConfig, TrainConfig, mode_uses_consistency, mode_uses_prototypes, mode_uses_tcn
from .errors import ConfigurationError, DataError, NumericalError
from .model import LOG_EPS, PhaseModel, build_model, normalize_features
from .prototypes import PrototypeBank
from .pseudo import EmaConfig, copy_parameters, ema_update, freeze, gate_batch
from .rng import RngStream
from .synthdata import LabeledVideo, dataset_statistics, load_manifest, load_split, normalization_stats
from .tcn import TemporalRefiner

logger = logging.getLogger(__name__)

# stream namespaces (first child id under the run seed)
NS_TORCH_INIT = 0
NS_SUP_SHUFFLE = 1
NS_UNL_SHUFFLE = 2
NS_LAB_CYCLE = 3
NS_AUG_LABELED = 4
NS_AUG_TEACHER = 5
NS_STRONG_TEMPORAL = 6
NS_STRONG_PIXEL = 7
NS_TCN_SEGMENT = 8


@dataclass
class LossBreakdown:
    """Per-step scalars as logged to the metrics stream."""

    l_sup: float = 0.0
    l_reg: float = 0.0
    l_tri_l: float = 0.0
    l_tri_u: float = 0.0
    l_tcn: float = 0.0
    l_total: float = 0.0
    gate_rate: float = 0.0


@dataclass
class OptimizerState:
    velocity: dict
    lr: float


def init_optimizer(params: dict, lr: float) -> OptimizerState:
    return OptimizerState(
        velocity={name: torch.zeros_like(p) for name, p in params.items()}, lr=lr
    )


@torch.no_grad()
def sgd_step(params: dict, grads: dict, state: OptimizerState,
             momentum: float, weight_decay: float) -> None:
    """Classical momentum with coupled L2: v <- mu v + (g + wd*theta);
    theta <- theta - lr*v. A missing gradient counts as zero."""
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = torch.zeros_like(p)
        elif not torch.isfinite(g).all():
            raise NumericalError(f"non-finite gradient in tensor {name!r}")
        v = state.velocity[name]
        v.mul_(momentum).add_(g + weight_decay * p)
        p.sub_(state.lr * v)


@dataclass
class StepBatch:
    """One optimization step's inputs; unlabeled/TCN parts may be absent."""

    labeled_windows: torch.Tensor | None = None  # (NL, T, C, H, W)
    labels: torch.Tensor | None = None  # (NL,)
    strong_windows: torch.Tensor | None = None  # (NU, T, C, H, W)
    weak_windows: torch.Tensor | None = None  # (NU, T, C, H, W)
    tcn_windows: torch.Tensor | None = None  # (L, T, C, H, W), contiguous video segment
    tcn_labels: torch.Tensor | None = None  # (L,)


@dataclass
class StepLosses:
    """Torch scalars plus the prototype updates the step will apply."""

    l_sup: torch.Tensor
    l_reg: torch.Tensor
    l_tri_l: torch.Tensor
    l_tri_u: torch.Tensor
    l_tcn: torch.Tensor
    l_total: torch.Tensor
    gate_rate: float
    pending_labeled: list  # (class, normalized feature) in batch order
    pending_unlabeled: list  # (pseudo class, normalized teacher feature), gated only

    def breakdown(self) -> LossBreakdown:
        # logged total is the exact float64 sum of the logged components
        parts = [float(t.detach()) for t in
                 (self.l_sup, self.l_reg, self.l_tri_l, self.l_tri_u, self.l_tcn)]
        return LossBreakdown(*parts, l_total=sum(parts), gate_rate=self.gate_rate)


def compute_losses(
    student: PhaseModel,
    teacher: PhaseModel | None,
    bank: PrototypeBank | None,
    refiner: TemporalRefiner | None,
    batch: StepBatch,
    cfg: TrainConfig,
) -> StepLosses:
    """Assemble all active loss terms for one step without mutating anything.

    Triplet terms are evaluated against the bank's current (step-start) state;
    the returned pending lists carry the sequential bank updates to apply
    afterwards. Unlabeled triplet terms use teacher weak-view features unless
    cfg.unlabeled_triplet_student reroutes them through the student.
    """
    anchor = next(student.parameters())
    zero = anchor.new_zeros(())
    l_sup, l_reg, l_tri_l, l_tri_u, l_tcn = zero, zero, zero, zero, zero
    pending_labeled, pending_unlabeled = [], []
    gate_rate = 0.0

    if batch.labeled_windows is not None and len(batch.labeled_windows) > 0:
        labels = batch.labels.to(torch.long)
        feats, probs = student(batch.labeled_windows)
        picked = probs[torch.arange(len(labels)), labels]
        l_sup = -torch.log(picked.clamp_min(LOG_EPS)).mean()
        if bank is not None:
            f_norm = normalize_features(feats)
            l_tri_l = bank.triplet_loss_batch(f_norm, labels).mean()
            pending_labeled = [(int(c), f.detach()) for c, f in zip(labels, f_norm)]

    if batch.strong_windows is not None and len(batch.strong_windows) > 0:
        if teacher is None:
            raise ConfigurationError("unlabeled batch requires a teacher model")
        n_u = len(batch.strong_windows)
        feats_s, probs_s = student(batch.strong_windows)
        with torch.no_grad():
            feats_t, probs_t = teacher(batch.weak_windows)
        mask, classes, _ = gate_batch(probs_t, cfg.delta)
        gate_rate = float(mask.to(torch.float64).mean())
        if bool(mask.any()):
            idx = mask.nonzero(as_tuple=True)[0]
            picked = probs_s[idx, classes[idx]]
            l_reg = -torch.log(picked.clamp_min(LOG_EPS)).sum() / n_u
            if bank is not None:
                f_t_norm = normalize_features(feats_t)
                if cfg.unlabeled_triplet_student:
                    f_loss = normalize_features(feats_s)[idx]
                else:
                    f_loss = f_t_norm[idx]
                l_tri_u = bank.triplet_loss_batch(f_loss, classes[idx]).sum() / n_u
                pending_unlabeled = [
                    (int(classes[i]), f_t_norm[i].detach()) for i in idx.tolist()
                ]

    if batch.tcn_windows is not None and refiner is not None:
        tcn_labels = batch.tcn_labels.to(torch.long)
        seg_feats = student.encoder(batch.tcn_windows)  # (L, D)
        for logits in refiner(seg_feats):
            l_tcn = l_tcn + torch.nn.functional.cross_entropy(logits, tcn_labels)

    l_total = l_sup + l_reg + l_tri_l + l_tri_u + l_tcn
    return StepLosses(
        l_sup=l_sup, l_reg=l_reg, l_tri_l=l_tri_l, l_tri_u=l_tri_u, l_tcn=l_tcn,
        l_total=l_total, gate_rate=gate_rate,
        pending_labeled=pending_labeled, pending_unlabeled=pending_unlabeled,
    )


def apply_prototype_updates(bank: PrototypeBank, losses: StepLosses) -> None:
    """Sequential EMA pulls: labeled pass first, then gated unlabeled pass."""
    for cls, feat in losses.pending_labeled:
        bank.update(cls, feat)
    for cls, feat in losses.pending_unlabeled:
        bank.update(cls, feat)


@dataclass
class DatasetBundle:
    """In-memory dataset view the trainer consumes."""

    labeled: list
    unlabeled: list
    num_classes: int
    stats: tuple  # normalization-ready per-channel (mean, std)

    @classmethod
    def from_directory(cls, dataset_dir) -> "DatasetBundle":
        manifest = load_manifest(dataset_dir)
        mean, std = normalization_stats(
            np.array(manifest["stats"]["mean"]), np.array(manifest["stats"]["std"])
        )
        return cls(
            labeled=load_split(dataset_dir, "train_labeled"),
            unlabeled=load_split(dataset_dir, "train_unlabeled"),
            num_classes=manifest["num_phases"],
            stats=(mean, std),
        )

    @classmethod
    def from_videos(cls, labeled, unlabeled, num_classes) -> "DatasetBundle":
        mean, std = normalization_stats(*dataset_statistics(labeled))
        return cls(labeled=labeled, unlabeled=list(unlabeled), num_classes=num_classes,
                   stats=(mean, std))


@dataclass
class TrainState:
    student: PhaseModel
    teacher: PhaseModel
    refiner: TemporalRefiner | None
    bank: PrototypeBank | None
    opt: OptimizerState
    epoch: int = 0  # last completed epoch
    semi_ready: bool = False  # teacher copied + bank initialized


class Trainer:
    """Runs the full schedule for one RunConfig over a DatasetBundle."""

    def __init__(self, run: RunConfig, bundle: DatasetBundle | None = None):
        self.run = run
        self.cfg = run.train
        self.model_cfg = run.model
        self.bundle = bundle or DatasetBundle.from_directory(run.dataset_dir)
        if self.bundle.num_classes != self.model_cfg.num_classes:
            raise ConfigurationError(
                f"dataset has {self.bundle.num_classes} phases, model expects "
                f"{self.model_cfg.num_classes}"
            )
        self.root = RngStream(self.cfg.seed)
        self.weak_policy = (
            AugmentPolicy.from_dict(run.weak_augment) if run.weak_augment else weak_policy()
        )
        self.strong_policy = (
            AugmentPolicy.from_dict(run.strong_augment) if run.strong_augment else strong_policy()
        )
        self.out_dir = Path(run.out_dir) if run.out_dir else None
        self._metrics_fh = None

        self.labeled_positions = self._positions(self.bundle.labeled, self.cfg.labeled_stride)
        self.unlabeled_positions = self._positions(self.bundle.unlabeled, self.cfg.unlabeled_stride)
        if not self.labeled_positions:
            raise DataError("labeled training set is empty")
        present = np.unique(
            np.concatenate(
                [self.bundle.labeled[vi].labels[t : t + 1] for vi, t in self.labeled_positions]
            )
        )
        missing = sorted(set(range(self.model_cfg.num_classes)) - set(present.tolist()))
        if missing:
            raise DataError(f"labeled data is missing phase(s) {missing}")

    @staticmethod
    def _positions(videos, stride):
        return [(vi, t) for vi, v in enumerate(videos) for t in range(0, len(v.frames), stride)]

    # -- window assembly ---------------------------------------------------

    def _weak_batch(self, videos, positions, epoch, ns):
        arrays, labels = [], []
        for vi, t in positions:
            video = videos[vi]
            win = weak_view(video.frames, t, self.model_cfg.window_len)
            win = apply_pixel_policy(
                win, self.weak_policy, self.root.child(ns, epoch, vi, t), self.bundle.stats
            )
            arrays.append(win.frames)
            labels.append(int(video.labels[t]))
        windows = torch.from_numpy(np.stack(arrays))
        return windows, torch.tensor(labels, dtype=torch.long)

    def _strong_batch(self, positions, epoch):
        arrays = []
        for vi, t in positions:
            video = self.bundle.unlabeled[vi]
            win = strong_view(
                video.frames, t, self.model_cfg.window_len,
                self.root.child(NS_STRONG_TEMPORAL, epoch, vi, t),
            )
            win = apply_pixel_policy(
                win, self.strong_policy,
                self.root.child(NS_STRONG_PIXEL, epoch, vi, t), self.bundle.stats,
            )
            arrays.append(win.frames)
        return torch.from_numpy(np.stack(arrays))

    def _clean_windows(self, video, ts):
        """Consecutive-history windows with normalization only (no pixel ops)."""
        mean, std = self.bundle.stats
        mean = np.asarray(mean, dtype=np.float32).reshape(1, -1, 1, 1)
        std = np.asarray(std, dtype=np.float32).reshape(1, -1, 1, 1)
        arrays = []
        for t in ts:
            win = weak_view(video.frames, t, self.model_cfg.window_len)
            arrays.append((win.frames - mean) / np.maximum(std, 1e-6).astype(np.float32))
        return torch.from_numpy(np.stack(arrays))

    def _tcn_segment(self, epoch, step):
        gen = self.root.child(NS_TCN_SEGMENT, epoch, step).generator()
        vi = int(gen.integers(0, len(self.bundle.labeled)))
        video = self.bundle.labeled[vi]
        seg_len = min(self.cfg.tcn_segment_len, len(video.frames))
        start = int(gen.integers(0, len(video.frames) - seg_len + 1))
        ts = range(start, start + seg_len)
        windows = self._clean_windows(video, ts)
        labels = torch.from_numpy(video.labels[start : start + seg_len].astype(np.int64))
        return windows, labels

    # -- index streams -------------------------------------------------------

    def _cycled_indices(self, ns, epoch, n):
        """Endless index stream; reshuffles each full pass."""
        cycle = 0
        while True:
            perm = self.root.child(ns, epoch, cycle).generator().permutation(n)
            yield from perm.tolist()
            cycle += 1

    # -- state lifecycle -----------------------------------------------------

    def _fresh_state(self) -> TrainState:
        torch_seed = int(self.root.child(NS_TORCH_INIT).generator().integers(2**62))
        student = build_model(self.model_cfg, torch_seed)
        teacher = freeze(build_model(self.model_cfg, torch_seed))
        copy_parameters(teacher, student)
        refiner = None
        if mode_uses_tcn(self.cfg.mode):
            gen_state = torch.random.get_rng_state()
            try:
                torch.manual_seed(torch_seed + 1)
                refiner = TemporalRefiner(self.model_cfg)
            finally:
                torch.random.set_rng_state(gen_state)
        bank = None
        if mode_uses_prototypes(self.cfg.mode):
            bank = PrototypeBank(
                self.model_cfg.num_classes, self.model_cfg.embed_dim,
                eta=self.cfg.eta, margin=self.cfg.margin, k_neg=self.cfg.k_neg,
            )
        opt = init_optimizer(self._opt_params(student, refiner), self.cfg.lr_at_epoch(1))
        return TrainState(student=student, teacher=teacher, refiner=refiner, bank=bank, opt=opt)

    @staticmethod
    def _opt_params(student, refiner):
        params = {f"student.{n}": p for n, p in student.named_parameters()}
        if refiner is not None:
            params.update({f"tcn.{n}": p for n, p in refiner.named_parameters()})
        return params

    def _ensure_semi_ready(self, state: TrainState) -> None:
        """Teacher snapshot and prototype initialization after warm-up."""
        if state.semi_ready:
            return
        copy_parameters(state.teacher, state.student)
        if state.bank is not None:
            self._init_bank(state)
        state.semi_ready = True

    @torch.no_grad()
    def _init_bank(self, state: TrainState) -> None:
        feats, classes = [], []
        by_video: dict[int, list[int]] = {}
        for vi, t in self.labeled_positions:
            by_video.setdefault(vi, []).append(t)
        for vi, ts in by_video.items():
            video = self.bundle.labeled[vi]
            bs = max(1, 4 * self.cfg.batch_size)
            for i in range(0, len(ts), bs):
                chunk = ts[i : i + bs]
                windows = self._clean_windows(video, chunk)
                feats.append(normalize_features(state.student.encoder(windows)))
                classes.extend(int(video.labels[t]) for t in chunk)
        state.bank.init_from_features(torch.cat(feats), torch.tensor(classes))

    # -- steps and epochs ------------------------------------------------------

    def _optimize(self, state: TrainState, losses: StepLosses) -> None:
        params = self._opt_params(state.student, state.refiner)
        for p in params.values():
            p.grad = None
        if losses.l_total.requires_grad:
            losses.l_total.backward()
        grads = {name: p.grad for name, p in params.items()}
        sgd_step(params, grads, state.opt, self.cfg.momentum, self.cfg.weight_decay)

    def _supervised_epoch(self, state: TrainState, epoch: int) -> None:
        n = len(self.labeled_positions)
        steps = max(1, n // self.cfg.batch_size)
        stream = self._cycled_indices(NS_SUP_SHUFFLE, epoch, n)
        breakdowns = []
        for step in range(steps):
            idx = [next(stream) for _ in range(self.cfg.batch_size)]
            positions = [self.labeled_positions[i] for i in idx]
            windows, labels = self._weak_batch(
                self.bundle.labeled, positions, epoch, NS_AUG_LABELED
            )
            losses = compute_losses(
                state.student, None, None, None,
                StepBatch(labeled_windows=windows, labels=labels), self.cfg,
            )
            self._optimize(state, losses)
            breakdowns.append(losses.breakdown())
            self._log_step(epoch, step, "supervised", breakdowns[-1], state.opt.lr)
        self._log_epoch(epoch, "supervised", breakdowns, state.opt.lr)

    def _semi_epoch(self, state: TrainState, epoch: int) -> None:
        bank = state.bank
        refiner = state.refiner
        n_unl = len(self.unlabeled_positions)
        labeled_stream = self._cycled_indices(NS_LAB_CYCLE, epoch, len(self.labeled_positions))
        if n_unl == 0:
            # no unlabeled data: one pass over the labeled set, same loss structure
            steps, unl_perm = max(1, len(self.labeled_positions) // self.cfg.batch_size), None
        else:
            steps = n_unl // self.cfg.batch_size
            dropped = n_unl % self.cfg.batch_size
            if dropped:
                logger.warning(
                    "epoch %d: dropping %d unlabeled positions short of a full batch",
                    epoch, dropped,
                )
            unl_perm = self.root.child(NS_UNL_SHUFFLE, epoch).generator().permutation(n_unl)

        breakdowns = []
        for step in range(steps):
            idx = [next(labeled_stream) for _ in range(self.cfg.batch_size)]
            positions = [self.labeled_positions[i] for i in idx]
            windows, labels = self._weak_batch(
                self.bundle.labeled, positions, epoch, NS_AUG_LABELED
            )
            batch = StepBatch(labeled_windows=windows, labels=labels)
            if unl_perm is not None:
                upos = [
                    self.unlabeled_positions[i]
                    for i in unl_perm[step * self.cfg.batch_size : (step + 1) * self.cfg.batch_size]
                ]
                batch.strong_windows = self._strong_batch(upos, epoch)
                batch.weak_windows, _ = self._weak_batch(
                    self.bundle.unlabeled, upos, epoch, NS_AUG_TEACHER
                )
            if refiner is not None:
                batch.tcn_windows, batch.tcn_labels = self._tcn_segment(epoch, step)
            losses = compute_losses(state.student, state.teacher, bank, refiner, batch, self.cfg)
            if bank is not None:
                apply_prototype_updates(bank, losses)
            self._optimize(state, losses)
            ema_update(state.teacher, state.student, EmaConfig(alpha=self.cfg.alpha))
            breakdowns.append(losses.breakdown())
            self._log_step(epoch, step, "semi", breakdowns[-1], state.opt.lr)
        self._log_epoch(epoch, "semi", breakdowns, state.opt.lr)

    # -- run loop ----------------------------------------------------------

    def execute(self, resume: bool = False):
        """Run (or resume) the schedule; returns the final TrainState."""
        cfg = self.cfg
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            RunConfig(
                model=self.model_cfg, train=cfg,
                dataset_dir=self.run.dataset_dir, out_dir=str(self.out_dir),
                weak_augment=self.weak_policy.to_dict(),
                strong_augment=self.strong_policy.to_dict(),
            ).save(self.out_dir / "config.json")

        state = self._fresh_state()
        start_epoch = 1
        if resume:
            latest = self._latest_checkpoint()
            if latest is not None:
                state = self.load_state(latest)
                start_epoch = state.epoch + 1
                logger.info("resuming from %s (epoch %d)", latest, state.epoch)
        self._open_metrics(truncate_after_epoch=state.epoch if resume else None)

        try:
            for epoch in range(start_epoch, cfg.total_epochs + 1):
                state.opt.lr = cfg.lr_at_epoch(epoch)
                supervised = cfg.mode == "sup" or epoch <= cfg.warmup_epochs
                if not supervised:
                    self._ensure_semi_ready(state)
                    self._semi_epoch(state, epoch)
                else:
                    self._supervised_epoch(state, epoch)
                if epoch == cfg.warmup_epochs and cfg.mode != "sup":
                    self._ensure_semi_ready(state)
                if cfg.mode == "sup":
                    # the deliverable model mirrors the student in supervised mode
                    copy_parameters(state.teacher, state.student)
                state.epoch = epoch
                if self.out_dir and (
                    epoch % cfg.checkpoint_every == 0 or epoch == cfg.total_epochs
                ):
                    self.save_state(
                        state, self.out_dir / "checkpoints" / f"epoch_{epoch:04d}.ckpt"
                    )
            if self.out_dir:
                self.save_state(state, self.out_dir / "final" / "teacher.ckpt")
        finally:
            if self._metrics_fh:
                self._metrics_fh.close()
                self._metrics_fh = None
        return state

    # -- metrics stream ------------------------------------------------------

    def _open_metrics(self, truncate_after_epoch=None):
        if not self.out_dir:
            return
        path = self.out_dir / "metrics.jsonl"
        if truncate_after_epoch is not None and path.exists():
            kept = [
                line
                for line in path.read_text().splitlines()
                if json.loads(line).get("epoch", 0) <= truncate_after_epoch
            ]
            path.write_text("".join(line + "\n" for line in kept))
            self._metrics_fh = open(path, "a")
        else:
            self._metrics_fh = open(path, "w")

    def _log_step(self, epoch, step, phase, bd: LossBreakdown, lr) -> None:
        self._write_record({
            "kind": "step", "epoch": epoch, "step": step, "phase": phase,
            "l_sup": bd.l_sup, "l_reg": bd.l_reg, "l_tri_l": bd.l_tri_l,
            "l_tri_u": bd.l_tri_u, "l_tcn": bd.l_tcn, "l_total": bd.l_total,
            "gate_rate": bd.gate_rate, "lr": lr,
        })

    def _log_epoch(self, epoch, phase, breakdowns, lr) -> None:
        """Per-epoch aggregates, most importantly the gate pass-rate."""
        if not breakdowns:
            return
        fields = ("l_sup", "l_reg", "l_tri_l", "l_tri_u", "l_tcn", "l_total", "gate_rate")
        means = {f: float(np.mean([getattr(b, f) for b in breakdowns])) for f in fields}
        self._write_record({
            "kind": "epoch", "epoch": epoch, "phase": phase,
            "steps": len(breakdowns), **means, "lr": lr,
        })

    def _write_record(self, record: dict) -> None:
        if not self._metrics_fh:
            return
        self._metrics_fh.write(json.dumps(record) + "\n")
        self._metrics_fh.flush()

    # -- checkpoint round trip -------------------------------------------------

    def _latest_checkpoint(self):
        ckpt_dir = self.out_dir / "checkpoints" if self.out_dir else None
        if not ckpt_dir or not ckpt_dir.exists():
            return None
        found = sorted(ckpt_dir.glob("epoch_*.ckpt"))
        return found[-1] if found else None

    def save_state(self, state: TrainState, path) -> None:
        tensors = {}
        for prefix, module in (("student", state.student), ("teacher", state.teacher)):
            for name, val in module.state_dict().items():
                tensors[f"{prefix}.{name}"] = val
        if state.refiner is not None:
            for name, val in state.refiner.state_dict().items():
                tensors[f"tcn.{name}"] = val
        for name, val in state.opt.velocity.items():
            tensors[f"opt.{name}"] = val
        if state.bank is not None and state.bank.initialized:
            tensors["bank.vectors"] = state.bank.vectors
        mean, std = self.bundle.stats
        tensors["stats.mean"] = np.asarray(mean, dtype=np.float32)
        tensors["stats.std"] = np.asarray(std, dtype=np.float32)
        save_archive(
            path,
            tensors,
            configs={"model": self.model_cfg.to_dict(), "train": self.cfg.to_dict()},
            state={
                "epoch": state.epoch,
                "seed": self.cfg.seed,
                "mode": self.cfg.mode,
                "semi_ready": state.semi_ready,
                "bank_initialized": bool(state.bank is not None and state.bank.initialized),
            },
        )

    def load_state(self, path) -> TrainState:
        configs, meta, tensors = load_archive(path)
        if configs["model"] != self.model_cfg.to_dict():
            raise ConfigurationError(f"{path}: checkpoint ModelConfig differs from the run's")
        state = self._fresh_state()
        _load_module(state.student, tensors, "student.")
        _load_module(state.teacher, tensors, "teacher.")
        if state.refiner is not None:
            _load_module(state.refiner, tensors, "tcn.")
        for name, v in state.opt.velocity.items():
            v.copy_(torch.from_numpy(tensors[f"opt.{name}"]))
        if state.bank is not None and meta.get("bank_initialized"):
            state.bank.vectors = torch.from_numpy(tensors["bank.vectors"]).clone()
            state.bank.initialized = True
        state.epoch = int(meta["epoch"])
        state.semi_ready = bool(meta.get("semi_ready", False))
        state.opt.lr = self.cfg.lr_at_epoch(min(state.epoch + 1, self.cfg.total_epochs))
        return state


def _load_module(module, tensors, prefix):
    current = module.state_dict()
    loaded = {}
    for name, val in current.items():
        key = prefix + name
        if key not in tensors:
            raise ConfigurationError(f"checkpoint is missing tensor {key!r}")
        arr = tensors[key]
        if tuple(arr.shape) != tuple(val.shape):
            raise ConfigurationError(
                f"checkpoint tensor {key!r} has shape {arr.shape}, expected {tuple(val.shape)}"
            )
        loaded[name] = torch.from_numpy(arr).to(val.dtype)
    module.load_state_dict(loaded)


def load_inference_model(path, which: str = "teacher"):
    """Load (model, refiner-or-None, normalization stats) from a checkpoint."""
    configs, meta, tensors = load_archive(path)
    model_cfg = ModelConfig.from_dict(configs["model"])
    model = build_model(model_cfg, seed=0)
    _load_module(model, tensors, f"{which}.")
    refiner = None
    if any(key.startswith("tcn.") for key in tensors):
        refiner = TemporalRefiner(model_cfg)
        _load_module(refiner, tensors, "tcn.")
    stats = (
        tensors["stats.mean"].astype(np.float64),
        tensors["stats.std"].astype(np.float64),
    )
    return model, refiner, stats
