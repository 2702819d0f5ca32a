"""Training loop: batched loss assembly, Adam steps, early stopping, telemetry.

One step samples a batch, orders each candidate set (ranker scores by default,
random permutation under the no-ranker ablation), evaluates the main
consecutive-pair loss on dot-product preference scores, adds the
noise-supervision loss, and applies one Adam update. The candidate ordering is
a constant to the main loss: the ranker's only gradient source is the
supervision loss, and confidence weights are constants everywhere.

Determinism: all randomness flows from three streams spawned off the config
seed (parameter init, batch sampling, noise draws), so identical config and
seed reproduce telemetry and metric files byte for byte. Wall-clock times go
to a separate run-info file, never into deterministic outputs.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .checkpoint import save_checkpoint
from .data import InteractionStore, sample_batch
from .losses import (
    confidence_weights,
    noise_supervision_loss,
    ranking_loss,
    total_loss,
    weighted_ranking_loss,
)
from .metrics import EvalResult, evaluate
from .model import EmbeddingModel, NoiseNet, RankerNet, build_noisy_triples, rank_candidates
from .tensor import NonFiniteGradientError, adam_step

__all__ = [
    "ConfigError",
    "FitResult",
    "TrainConfig",
    "Trainer",
    "TrainingError",
    "fit",
    "load_config",
]

SEED_ENV_VAR = "PRP_SEED"


class ConfigError(ValueError):
    """Invalid or unknown training configuration."""


class TrainingError(RuntimeError):
    """Non-finite loss or gradient encountered; carries epoch/step context."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters and ablation switches for one training run.

    ``loss_mode="bpr"`` is the pairwise baseline: it resolves to k=2 with
    ranker ordering, noise supervision, and confidence weighting all disabled,
    so each step is the classic pairwise loss with in-batch negatives.
    Ablation flags are independent: ``no_ranker`` randomizes candidate order
    (positive still pinned first), ``no_lp`` drops the supervision loss (the
    ranker then stays at its initialization), ``no_confidence`` fixes all
    weights to 1.
    """

    embedding_dim: int = 64
    lr: float = 1e-3
    l2: float = 1e-4
    batch_size: int = 1024
    k: int = 4
    beta: float = 0.3
    thetas: tuple[float, ...] = (0.0, 0.01, 0.1)
    epochs: int = 30
    patience: int = 10
    eval_every: int = 1
    eval_ks: tuple[int, ...] = (10, 20)
    seed: int = 0
    loss_mode: str = "prp"
    no_ranker: bool = False
    no_lp: bool = False
    no_confidence: bool = False
    confidence_on_lp: bool = True
    pin_positive: bool = True

    def __post_init__(self):
        if self.embedding_dim < 1:
            raise ConfigError("embedding_dim must be >= 1")
        if self.lr < 0 or self.l2 < 0 or self.beta < 0:
            raise ConfigError("lr, l2 and beta must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.k < 2:
            raise ConfigError("k must be >= 2 (one positive plus at least one negative)")
        thetas = tuple(float(t) for t in self.thetas)
        object.__setattr__(self, "thetas", thetas)
        if len(thetas) < 2 or thetas[0] != 0.0 or any(a >= b for a, b in zip(thetas, thetas[1:])):
            raise ConfigError(f"thetas must start at 0 and strictly increase, got {thetas}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.patience < 1 or self.eval_every < 1:
            raise ConfigError("patience and eval_every must be >= 1")
        ks = tuple(int(k) for k in self.eval_ks)
        object.__setattr__(self, "eval_ks", ks)
        if not ks or min(ks) < 1:
            raise ConfigError("eval_ks must be non-empty positive integers")
        if self.loss_mode not in ("prp", "bpr"):
            raise ConfigError(f"loss_mode must be 'prp' or 'bpr', got {self.loss_mode!r}")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        d = dict(d)
        for key in ("thetas", "eval_ks"):
            if key in d and isinstance(d[key], list):
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["thetas"] = list(self.thetas)
        d["eval_ks"] = list(self.eval_ks)
        return d

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def resolved(self) -> "TrainConfig":
        """Apply loss-mode constraints; bpr pins k=2 and disables every extra."""
        if self.loss_mode == "bpr":
            return replace(
                self, k=2, beta=0.0, no_ranker=True, no_lp=True, no_confidence=True
            )
        return self


def load_config(path: str | os.PathLike) -> TrainConfig:
    """Read a JSON config file; the PRP_SEED environment variable overrides its seed."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise ConfigError(f"no such config file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            raw["seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}") from exc
    return TrainConfig.from_dict(raw)


@dataclass
class BatchWork:
    """Everything stochastic about one step, frozen before any loss math.

    Holding the batch, the candidate ordering, and the standard-normal noise
    input lets the loss be re-evaluated as a pure function of the parameters
    (the gradient checker relies on this).
    """

    users: np.ndarray  # (B,)
    pos_items: np.ndarray  # (B,)
    candidates: np.ndarray  # (B, k) positive first
    ordered_items: np.ndarray  # (B, k) rank order for the main loss
    eta: np.ndarray | None  # (B, d) or None when the supervision loss is off


@dataclass
class StepResult:
    main_sum: float
    lp_sum: float
    total_mean: float
    main_mean: float
    lp_mean: float
    alpha_main: np.ndarray  # (B, k-1)
    alpha_lp: np.ndarray | None
    g_main: np.ndarray  # (B, k-1)
    g_lp: np.ndarray | None
    main_pool_counts: np.ndarray  # (10,) histogram of the main g pool


@dataclass
class FitResult:
    best_epoch: int
    best_valid: EvalResult | None
    test: EvalResult | None
    history: list[dict]
    epochs_run: int
    checkpoint_path: str | None
    wall_times: list[float] = field(default_factory=list)


_TELEMETRY_HEADER = "epoch,step,loss_rank,loss_p,loss_total,alpha_mean,alpha_hist\n"


class Trainer:
    """Owns the model, optimizer state, rng streams, and the epoch loop."""

    def __init__(self, config: TrainConfig, store: InteractionStore, out_dir: str | os.PathLike | None = None):
        if not store.is_split:
            raise ValueError("Trainer needs a split store")
        self.config = config
        self.cfg = config.resolved()
        if self.cfg.k > store.n_items:
            raise ConfigError(f"k={self.cfg.k} exceeds the item universe ({store.n_items})")
        self.store = store
        self.out_dir = os.fspath(out_dir) if out_dir is not None else None
        if self.out_dir:
            os.makedirs(self.out_dir, exist_ok=True)

        seq = np.random.SeedSequence(self.cfg.seed)
        init_seq, sample_seq, noise_seq = seq.spawn(3)
        self.init_rng = np.random.default_rng(init_seq)
        self.sample_rng = np.random.default_rng(sample_seq)
        self.noise_rng = np.random.default_rng(noise_seq)

        d = self.cfg.embedding_dim
        self.model = EmbeddingModel(store.n_users, store.n_items, d)
        self.model.init_params(self.init_rng)
        self.ranker = RankerNet(d)
        self.ranker.init_params(self.init_rng)
        self.noise_net = NoiseNet(d)
        self.noise_net.init_params(self.init_rng)

        self.lp_active = not self.cfg.no_lp
        self.epoch = 0
        self.global_step = 0
        self._telemetry_rows: list[str] = []

    # -- parameters ---------------------------------------------------------

    @property
    def step_params(self):
        """Tensors the optimizer updates: nets join only while they receive gradients."""
        params = list(self.model.params)
        if self.lp_active:
            params += self.ranker.params + self.noise_net.params
        return params

    def named_tensors(self) -> dict[str, np.ndarray]:
        tensors = {}
        for p in self.model.params + self.ranker.params + self.noise_net.params:
            tensors[p.name] = p.values
        return tensors

    @property
    def steps_per_epoch(self) -> int:
        return max(1, self.store.n_train // self.cfg.batch_size)

    # -- one step -----------------------------------------------------------

    def sample_work(self) -> BatchWork:
        """Draw a batch and freeze its ordering and noise input."""
        cfg = self.cfg
        batch = sample_batch(self.store, cfg.batch_size, cfg.k, self.sample_rng)
        if cfg.no_ranker:
            ordered = batch.candidates.copy()
            for b in range(batch.size):
                perm = self.sample_rng.permutation(cfg.k - 1)
                ordered[b, 1:] = batch.candidates[b, 1:][perm]
        else:
            r_scores, _ = self.ranker.scores_items(self.model, batch.users, batch.candidates)
            if not np.isfinite(r_scores).all():
                raise TrainingError(
                    f"non-finite ranker scores at epoch {self.epoch}, step {self.global_step}"
                )
            ordered = rank_candidates(r_scores, batch.candidates, pin_positive=cfg.pin_positive)
        eta = None
        if self.lp_active:
            eta = self.noise_rng.standard_normal(size=(batch.size, cfg.embedding_dim))
        return BatchWork(
            users=batch.users,
            pos_items=batch.pos_items,
            candidates=batch.candidates,
            ordered_items=ordered,
            eta=eta,
        )

    def evaluate_work(
        self,
        work: BatchWork,
        with_grads: bool = True,
        alpha_main: np.ndarray | None = None,
        alpha_lp: np.ndarray | None = None,
    ) -> StepResult:
        """Loss (and optionally gradients) as a pure function of parameters and work.

        ``alpha_main``/``alpha_lp`` override the confidence weights (the
        gradient checker freezes them); by default each loss builds a profile
        from its own batch pool, or uses ones when confidence is disabled.
        """
        cfg = self.cfg
        batch_size = int(work.users.size)
        e_u = self.model.user_emb.values[work.users]  # (B, d)
        e_pi = self.model.item_emb.values[work.ordered_items]  # (B, k, d)
        scores = np.einsum("bd,bkd->bk", e_u, e_pi)
        if not np.isfinite(scores).all():
            raise TrainingError(
                f"non-finite preference scores at epoch {self.epoch}, step {self.global_step}"
            )

        if alpha_main is None and not cfg.no_confidence:
            _, _, g_pool = ranking_loss(scores)
            profile = confidence_weights(g_pool.ravel())
            main_counts = profile.counts.copy()
            loss_rows, d_scores, g_main, a_main = weighted_ranking_loss(scores, profile=profile)
        else:
            loss_rows, d_scores, g_main, a_main = weighted_ranking_loss(scores, alphas=alpha_main)
            main_counts = confidence_weights(g_main.ravel()).counts.copy()
        main_sum = float(loss_rows.sum())

        if with_grads:
            ds = d_scores / batch_size
            d_eu = np.einsum("bk,bkd->bd", ds, e_pi)
            np.add.at(self.model.user_emb.grad, work.users, d_eu)
            d_ei = ds[..., None] * e_u[:, None, :]
            np.add.at(
                self.model.item_emb.grad,
                work.ordered_items.ravel(),
                d_ei.reshape(batch_size * cfg.k, -1),
            )

        lp_sum = 0.0
        g_lp = None
        a_lp = None
        if self.lp_active:
            triple = build_noisy_triples(
                self.noise_net,
                self.model,
                work.users,
                work.pos_items,
                thetas=cfg.thetas,
                eta=work.eta,
            )
            use_conf = (not cfg.no_confidence) and cfg.confidence_on_lp
            lp_sum, g_lp, a_lp, _ = noise_supervision_loss(
                self.ranker,
                self.noise_net,
                self.model,
                triple,
                alphas=alpha_lp,
                use_confidence=use_conf,
                grad_scale=(cfg.beta / batch_size) if with_grads else None,
            )

        total_mean, main_mean, lp_mean = total_loss(main_sum, lp_sum, cfg.beta, batch_size)
        return StepResult(
            main_sum=main_sum,
            lp_sum=lp_sum,
            total_mean=total_mean,
            main_mean=main_mean,
            lp_mean=lp_mean,
            alpha_main=a_main,
            alpha_lp=a_lp,
            g_main=g_main,
            g_lp=g_lp,
            main_pool_counts=main_counts,
        )

    def do_batch(self) -> StepResult:
        """One full training step: sample, evaluate with gradients, Adam."""
        work = self.sample_work()
        result = self.evaluate_work(work, with_grads=True)
        if not np.isfinite(result.total_mean):
            raise TrainingError(
                f"non-finite loss at epoch {self.epoch}, step {self.global_step}: "
                f"rank={result.main_mean!r}, noise={result.lp_mean!r}"
            )
        try:
            adam_step(self.step_params, lr=self.cfg.lr, l2=self.cfg.l2)
        except NonFiniteGradientError as exc:
            raise TrainingError(
                f"aborted at epoch {self.epoch}, step {self.global_step}: {exc}"
            ) from exc
        self.global_step += 1
        return result

    # -- epochs and fitting ---------------------------------------------------

    def train_epoch(self) -> dict:
        """Run one epoch of steps, appending one telemetry row per step."""
        self.epoch += 1
        sums = np.zeros(3)
        for step in range(1, self.steps_per_epoch + 1):
            res = self.do_batch()
            sums += (res.main_mean, res.lp_mean, res.total_mean)
            hist = "|".join(str(int(c)) for c in res.main_pool_counts)
            self._telemetry_rows.append(
                f"{self.epoch},{step},{res.main_mean!r},{res.lp_mean!r},"
                f"{res.total_mean!r},{float(res.alpha_main.mean())!r},{hist}\n"
            )
        n = self.steps_per_epoch
        return {
            "epoch": self.epoch,
            "loss_rank": float(sums[0] / n),
            "loss_p": float(sums[1] / n),
            "loss_total": float(sums[2] / n),
        }

    def evaluate_split(self, split: str) -> EvalResult:
        ks = sorted(set(self.cfg.eval_ks) | {10})  # NDCG@10 drives early stopping
        return evaluate(self.model, self.store, split=split, ks=ks)

    def _write_telemetry(self) -> None:
        if not self.out_dir:
            return
        with open(os.path.join(self.out_dir, "telemetry.csv"), "w", encoding="utf-8") as fh:
            fh.write(_TELEMETRY_HEADER)
            fh.writelines(self._telemetry_rows)

    def _snapshot(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.named_tensors().items()}

    def _restore(self, snapshot: dict[str, np.ndarray]) -> None:
        for p in self.model.params + self.ranker.params + self.noise_net.params:
            p.values[...] = snapshot[p.name]

    def fit(self) -> FitResult:
        """Train with early stopping on validation NDCG@10; restore and test the best model.

        With epochs=0 the initialized model is evaluated once and returned.
        Writes telemetry.csv, history.json, best.ckpt, and run_info.json to
        the output directory when one was given.
        """
        cfg = self.cfg
        history: list[dict] = []
        wall_times: list[float] = []
        best_ndcg = -np.inf
        best_epoch = 0
        best_valid: EvalResult | None = None
        evals_since_improvement = 0
        best_params = self._snapshot()

        valid0 = self.evaluate_split("valid")
        best_valid = valid0
        best_ndcg = valid0.ndcg[10]
        history.append({"epoch": 0, "valid": valid0.rows()})

        stopped_early = False
        for _ in range(cfg.epochs):
            t0 = time.perf_counter()
            epoch_row = self.train_epoch()
            wall_times.append(time.perf_counter() - t0)
            record = dict(epoch_row)
            if self.epoch % cfg.eval_every == 0:
                ev = self.evaluate_split("valid")
                record["valid"] = ev.rows()
                if ev.ndcg[10] > best_ndcg:
                    best_ndcg = ev.ndcg[10]
                    best_epoch = self.epoch
                    best_valid = ev
                    best_params = self._snapshot()
                    evals_since_improvement = 0
                else:
                    evals_since_improvement += 1
            history.append(record)
            if evals_since_improvement >= cfg.patience:
                stopped_early = True
                break

        self._restore(best_params)
        test = self.evaluate_split("test")
        self._write_telemetry()

        checkpoint_path = None
        if self.out_dir:
            checkpoint_path = os.path.join(self.out_dir, "best.ckpt")
            meta = {
                "config": self.config.to_dict(),
                "config_hash": self.config.config_hash(),
                "seed": cfg.seed,
                "best_epoch": best_epoch,
                "n_users": self.store.n_users,
                "n_items": self.store.n_items,
                "embedding_dim": cfg.embedding_dim,
            }
            save_checkpoint(checkpoint_path, self.named_tensors(), meta)
            summary = {
                "best_epoch": best_epoch,
                "best_valid_ndcg10": best_ndcg,
                "epochs_run": self.epoch,
                "stopped_early": stopped_early,
                "history": history,
                "test": test.rows(),
                "config_hash": self.config.config_hash(),
            }
            with open(os.path.join(self.out_dir, "history.json"), "w", encoding="utf-8") as fh:
                json.dump(summary, fh, sort_keys=True, indent=2)
                fh.write("\n")
            # wall-clock data is machine-dependent; kept out of the deterministic files
            with open(os.path.join(self.out_dir, "run_info.json"), "w", encoding="utf-8") as fh:
                json.dump(
                    {"epoch_wall_times_sec": wall_times, "finished_unix": time.time()},
                    fh,
                    sort_keys=True,
                    indent=2,
                )
                fh.write("\n")
        return FitResult(
            best_epoch=best_epoch,
            best_valid=best_valid,
            test=test,
            history=history,
            epochs_run=self.epoch,
            checkpoint_path=checkpoint_path,
            wall_times=wall_times,
        )


def fit(config: TrainConfig, store: InteractionStore, out_dir: str | os.PathLike | None = None):
    """Convenience wrapper: build a Trainer, fit it, return (trainer, result)."""
    trainer = Trainer(config, store, out_dir=out_dir)
    result = trainer.fit()
    return trainer, result
