"""Training loop for the contrastive MLP head over frozen diffusion output.

Diffusion embeddings are computed once on the train graph and never receive
gradients; only the user/item MLPs learn. Each epoch shuffles users
(seeded), walks contrastive batches, then scores validation recall@k with
the current towers. Early stopping keeps the weights from the best
validation epoch, not the last one.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .contrast import SamplerConfig, kcl_loss, localize_batch, sample_batch
from .corpus import DatasetSplit, MergedCorpus, interaction_quantile
from .diffusion import DiffusionOutput, diffuse
from .errors import DataError
from .ranking import MetricsReport, evaluate
from .tower import AdamState, TwoTowerParams, adam_step, mlp_backward, mlp_forward


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters; defaults follow the tuned-search defaults."""

    lr: float = 5e-4
    d_out: int = 64
    d_hidden: int | None = None      # None -> half the input dim
    n_layers: int = 2
    neg_samples: int = 256
    pos_k: int | None = None         # fixed positive count, overrides quantile
    pos_quantile: float = 0.5        # used when pos_k is None
    temperature: float = 0.15
    batch_users: int = 1024
    patience: int = 20
    max_epochs: int = 500
    seed: int = 0
    tower_mode: str = "two"
    eval_k: int = 20
    eval_every: int = 1

    def __post_init__(self):
        if self.patience < 1:
            raise DataError("patience must be >= 1")
        if self.tower_mode not in ("one", "two"):
            raise DataError(f"unknown tower mode {self.tower_mode!r}")
        if self.eval_every < 1:
            raise DataError("eval_every must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_recall: float | None
    wall_time: float


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_recall: float = float("-inf")
    stop_reason: str = ""
    resolved_pos_k: int = 0

    def to_jsonl(self) -> str:
        """Deterministic per-epoch lines; wall time deliberately omitted."""
        lines = []
        for rec in self.epochs:
            lines.append(json.dumps({
                "epoch": rec.epoch, "loss": rec.loss, "val_recall": rec.val_recall,
                "best": rec.epoch == self.best_epoch,
            }, sort_keys=True))
        return "\n".join(lines) + "\n"


def resolve_pos_k(train, cfg: TrainConfig) -> int:
    if cfg.pos_k is not None:
        if cfg.pos_k < 1:
            raise DataError("pos_k must be >= 1")
        return cfg.pos_k
    return interaction_quantile(train, cfg.pos_quantile)


def project(params: TwoTowerParams, user_in: np.ndarray,
            item_in: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Push both embedding tables through their towers (no tape kept)."""
    user_out, _ = mlp_forward(params.user_mlp, user_in)
    item_out, _ = mlp_forward(params.item_mlp, item_in)
    return user_out, item_out


def _branch_grads(params: TwoTowerParams, user_tape, item_tape,
                  d_user_out: np.ndarray, d_item_out: np.ndarray) -> dict[str, np.ndarray]:
    """Backprop both branches; shared mode sums the contributions."""
    gu = mlp_backward(params.user_mlp, user_tape, d_user_out)[:4]
    gi = mlp_backward(params.item_mlp, item_tape, d_item_out)[:4]
    names = ("w1", "b1", "w2", "b2")
    if params.mode == "one":
        return {f"shared.{n}": u + i for n, u, i in zip(names, gu, gi)}
    out = {f"user.{n}": g for n, g in zip(names, gu)}
    out.update({f"item.{n}": g for n, g in zip(names, gi)})
    return out


def _train_epoch(train, diff: DiffusionOutput, params: TwoTowerParams,
                 adam: AdamState, sampler_cfg: SamplerConfig,
                 users: np.ndarray, epoch: int, seed: int) -> float:
    rng = np.random.default_rng((seed, epoch))
    order = rng.permutation(users)
    batch_size = sampler_cfg.batch_users
    total = 0.0
    tensors = params.named_tensors()
    for index, start in enumerate(range(0, len(order), batch_size)):
        batch_users = order[start:start + batch_size]
        batch = sample_batch(train, batch_users, sampler_cfg, epoch)
        unique_items, pos_local, neg_local = localize_batch(batch)

        user_in = diff.user_final[batch.users]
        item_in = diff.item_final[unique_items]
        user_out, user_tape = mlp_forward(params.user_mlp, user_in)
        item_out, item_tape = mlp_forward(params.item_mlp, item_in)

        try:
            loss, d_user, d_item = kcl_loss(user_out, item_out, pos_local, neg_local,
                                            sampler_cfg.temperature)
            grads = _branch_grads(params, user_tape, item_tape, d_user, d_item)
            adam_step(tensors, grads, adam)
        except DataError as err:
            raise DataError(f"epoch {epoch} batch {index}: {err}") from err
        total += loss * len(batch_users)
    return total / len(order)


def _run_loop(train, diff: DiffusionOutput, cfg: TrainConfig,
              eval_fn) -> tuple[TwoTowerParams, TrainLog]:
    """Shared epoch/early-stop driver; eval_fn(params) -> validation recall."""
    d_in = diff.item_final.shape[1]
    params = TwoTowerParams.init(d_in, cfg.d_out, cfg.d_hidden,
                                 mode=cfg.tower_mode, seed=cfg.seed)
    adam = AdamState(params.named_tensors(), lr=cfg.lr)
    pos_k = resolve_pos_k(train, cfg)
    sampler_cfg = SamplerConfig(pos_k=pos_k, neg_j=cfg.neg_samples,
                                temperature=cfg.temperature, seed=cfg.seed,
                                batch_users=cfg.batch_users)
    users = np.flatnonzero(train.user_degrees > 0)
    if len(users) == 0:
        raise DataError("no trainable users (all train degrees are zero)")

    log = TrainLog(resolved_pos_k=pos_k)
    best_params = params.copy()
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        tic = time.perf_counter()
        loss = _train_epoch(train, diff, params, adam, sampler_cfg,
                            users, epoch, cfg.seed)
        val_recall = eval_fn(params) if epoch % cfg.eval_every == 0 else None
        log.epochs.append(EpochRecord(epoch=epoch, loss=loss, val_recall=val_recall,
                                      wall_time=time.perf_counter() - tic))
        if val_recall is not None:
            if val_recall > log.best_val_recall:
                log.best_val_recall = val_recall
                log.best_epoch = epoch
                best_params = params.copy()
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.stop_reason = "patience"
                    break
    if not log.stop_reason:
        log.stop_reason = "max_epochs"
    return best_params, log


def train(split: DatasetSplit, item_emb: np.ndarray,
          cfg: TrainConfig) -> tuple[TwoTowerParams, TrainLog, DiffusionOutput]:
    """In-domain training; returns best-epoch towers, the log, and the frozen diffusion."""
    diff = diffuse(split.train, item_emb, cfg.n_layers)

    def eval_fn(params: TwoTowerParams) -> float:
        user_out, item_out = project(params, diff.user_final, diff.item_final)
        report = evaluate(split, user_out, item_out, k=cfg.eval_k, part="val",
                          model="textgcn-mlp")
        return report.recall

    params, log = _run_loop(split.train, diff, cfg, eval_fn)
    return params, log, diff


def evaluate_per_part(corpus: MergedCorpus, user_out: np.ndarray,
                      item_out: np.ndarray, k: int, part: str,
                      model: str) -> list[MetricsReport]:
    """Slice merged projections back into parts and score each one."""
    reports = []
    for p, split in enumerate(corpus.parts):
        u_lo, u_hi = corpus.part_user_range(p)
        i_lo, i_hi = corpus.part_item_range(p)
        reports.append(evaluate(split, user_out[u_lo:u_hi], item_out[i_lo:i_hi],
                                k=k, part=part, model=model))
    return reports


def train_joint(corpus: MergedCorpus, item_emb: np.ndarray,
                cfg: TrainConfig) -> tuple[TwoTowerParams, TrainLog, DiffusionOutput]:
    """Joint training on the block-diagonal merged graph.

    The model-selection metric is the unweighted mean of per-part
    validation recalls.
    """
    if item_emb.shape[0] != corpus.n_items:
        raise DataError("merged item embedding rows do not match the corpus")
    diff = diffuse(corpus.train, item_emb, cfg.n_layers)

    def eval_fn(params: TwoTowerParams) -> float:
        user_out, item_out = project(params, diff.user_final, diff.item_final)
        reports = evaluate_per_part(corpus, user_out, item_out,
                                    cfg.eval_k, "val", "textgcn-mlp")
        return float(np.mean([r.recall for r in reports]))

    params, log = _run_loop(corpus.train, diff, cfg, eval_fn)
    return params, log, diff


def apply_zero_shot(params: TwoTowerParams | None, target: DatasetSplit,
                    target_item_emb: np.ndarray, n_layers: int,
                    k: int = 20, part: str = "test") -> MetricsReport:
    """Score a never-seen dataset with frozen towers (or the identity head).

    Target embeddings are diffused from the target's own train graph; no
    IDs cross between corpora, only embedding geometry.
    """
    diff = diffuse(target.train, target_item_emb, n_layers)
    if params is None:
        user_out, item_out = diff.user_final, diff.item_final
        model = "textgcn"
    else:
        if params.user_mlp.d_in != diff.item_final.shape[1]:
            raise DataError(
                f"checkpoint dimension mismatch: d_in {params.user_mlp.d_in} != "
                f"embedding dim {diff.item_final.shape[1]}")
        user_out, item_out = project(params, diff.user_final, diff.item_final)
        model = "textgcn-mlp-zero-shot"
    return evaluate(target, user_out, item_out, k=k, part=part, model=model)


def ablation_variants(base: TrainConfig) -> list[tuple[str, TrainConfig]]:
    """The four head ablations, expressed purely as config changes."""
    return [
        ("one-tower/1-pos", replace(base, tower_mode="one", pos_k=1)),
        ("one-tower/k-pos", replace(base, tower_mode="one", pos_k=None)),
        ("two-tower/1-pos", replace(base, tower_mode="two", pos_k=1)),
        ("two-tower/k-pos", replace(base, tower_mode="two", pos_k=None)),
    ]
