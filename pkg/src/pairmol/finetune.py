"""Downstream fine-tuning: property heads, metrics, plateau learning-rate
schedule, and the cross-validation evaluation protocol."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .data import MoleculePair, SplitSpec
from .nets import EncoderConfig, PairEncoder, load_checkpoint, load_state_into

logger = logging.getLogger(__name__)

__all__ = [
    "FinetuneConfig",
    "PropertyModel",
    "UndefinedMetricError",
    "predict_property",
    "evaluate",
    "plateau_schedule",
    "run_finetune",
    "sample_negative_pairs",
]

_FINETUNE_LR = {"chromophore": 0.005, "solvation": 0.001, "ddi": 0.0005}


class UndefinedMetricError(ValueError):
    pass


@dataclass
class FinetuneConfig:
    task: str = "regression"         # regression | binary_classification
    lr: float = 0.001
    plateau_patience: int = 20
    plateau_factor: float = 0.1
    max_epochs: int = 100
    early_stop_patience: int = 50
    batch_size: int = 32
    seed: int = 0
    log_labels: bool = False         # log-normalize regression targets
    checkpoint: str | None = None

    def __post_init__(self):
        if not (0 < self.plateau_factor < 1):
            raise ValueError("plateau_factor must be in (0, 1)")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")
        if self.task not in ("regression", "binary_classification"):
            raise ValueError(f"unknown task {self.task!r}")

    @staticmethod
    def default_lr(dataset: str) -> float:
        return _FINETUNE_LR.get(dataset, 0.001)


class PropertyModel(nn.Module):
    """Pair encoder plus a fresh 2-layer prediction head on z_pair."""

    def __init__(self, cfg: EncoderConfig, task: str):
        super().__init__()
        self.task = task
        self.encoder = PairEncoder(cfg)
        z_dim = 8 * cfg.hidden_dim
        self.head = nn.Sequential(
            nn.Linear(z_dim, cfg.hidden_dim), nn.ReLU(),
            nn.Linear(cfg.hidden_dim, 1))

    def forward(self, pair: MoleculePair) -> torch.Tensor:
        g1 = pair.larger_2d if pair.larger_2d is not None else pair.larger.molecule
        g2 = pair.smaller_2d if pair.smaller_2d is not None else pair.smaller.molecule
        out = self.encoder(g1, g2)
        y = self.head(out.z_pair).squeeze(-1)
        if self.task == "binary_classification":
            y = torch.sigmoid(y)
        return y

    def load_pretrained_encoder(self, checkpoint_path) -> None:
        """Initialize only the encoder from a pre-training checkpoint."""
        _, state = load_checkpoint(checkpoint_path)
        load_state_into(self.encoder, state, prefix="pair_encoder.")


def predict_property(model: PropertyModel, pair: MoleculePair) -> float:
    if not isinstance(model, PropertyModel):
        raise TypeError("predict_property expects a PropertyModel")
    with torch.no_grad():
        return float(model(pair))


def evaluate(preds, labels, task: str) -> float:
    """RMSE for regression; AUROC (ties get half credit) for classification."""
    preds = np.asarray(preds, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if preds.shape != labels.shape or preds.size < 1:
        raise ValueError("preds and labels must have equal nonzero length")
    if task == "regression":
        return float(np.sqrt(np.mean((preds - labels) ** 2)))
    if task == "binary_classification":
        pos = preds[labels == 1]
        neg = preds[labels == 0]
        if len(pos) == 0 or len(neg) == 0:
            raise UndefinedMetricError("AUROC needs both classes present")
        greater = (pos[:, None] > neg[None, :]).sum()
        ties = (pos[:, None] == neg[None, :]).sum()
        return float((greater + 0.5 * ties) / (len(pos) * len(neg)))
    raise ValueError(f"unknown task {task!r}")


def plateau_schedule(best_so_far: float, history: list[float], lr: float,
                     cfg: FinetuneConfig, mode: str = "min") -> float:
    """Plateau rule applied over the whole history (pure function).

    ``lr`` is the initial learning rate; the result is lr scaled by the
    plateau factor once per full stagnation window. The stagnation counter
    resets on improvement and after each reduction.
    """
    sign = 1.0 if mode == "min" else -1.0
    best = np.inf
    stagnant = 0
    reductions = 0
    for value in history:
        if sign * value < sign * best - 0.0:
            best = value
            stagnant = 0
        else:
            stagnant += 1
            if stagnant >= cfg.plateau_patience:
                reductions += 1
                stagnant = 0
    return lr * cfg.plateau_factor ** reductions


def sample_negative_pairs(positive_pairs: list[MoleculePair],
                          seed: int) -> list[MoleculePair]:
    """Equal-size negative set sampled from the complement of positives."""
    molecules = {}
    for p in positive_pairs:
        molecules[p.larger.molecule.id] = (p.larger, p.larger_2d)
        molecules[p.smaller.molecule.id] = (p.smaller, p.smaller_2d)
    ids = sorted(molecules)
    positive = {(p.larger.molecule.id, p.smaller.molecule.id)
                for p in positive_pairs}
    positive |= {(b, a) for a, b in positive}
    rng = np.random.default_rng(seed)
    negatives = []
    guard = 0
    while len(negatives) < len(positive_pairs) and guard < 100 * len(positive_pairs):
        guard += 1
        a, b = rng.choice(len(ids), size=2, replace=False)
        key = (ids[a], ids[b])
        if key in positive:
            continue
        positive.add(key)
        positive.add(key[::-1])
        ca, g2a = molecules[ids[a]]
        cb, g2b = molecules[ids[b]]
        negatives.append(MoleculePair(
            larger=ca, smaller=cb, label=0.0, task_id="negative",
            larger_2d=g2a, smaller_2d=g2b))
    return negatives


def _train_one_fold(cfg: FinetuneConfig, encoder_cfg: EncoderConfig,
                    dataset, split: SplitSpec, seed: int,
                    checkpoint=None) -> dict:
    torch.manual_seed(seed)
    model = PropertyModel(encoder_cfg, cfg.task)
    pretrained = False
    if checkpoint is not None:
        model.load_pretrained_encoder(checkpoint)
        pretrained = True

    labels = {i: dataset[i].label for i in split.train + split.valid + split.test}
    if any(v is None for v in labels.values()):
        raise ValueError("fine-tuning requires labels on every split index")

    def target(i):
        y = labels[i]
        return float(np.log(y)) if cfg.log_labels else float(y)

    loss_fn = (nn.MSELoss() if cfg.task == "regression" else nn.BCELoss())
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(seed)
    best_metric, best_state, stagnant = np.inf, None, 0
    history: list[float] = []
    seen_train: set[int] = set()

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(split.train)
        model.train()
        for start in range(0, len(order), cfg.batch_size):
            idxs = order[start:start + cfg.batch_size]
            seen_train.update(int(i) for i in idxs)
            preds = torch.stack([model(dataset[i]) for i in idxs])
            y = torch.tensor([target(i) for i in idxs], dtype=torch.float32)
            loss = loss_fn(preds, y)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        model.eval()
        with torch.no_grad():
            vp = [float(model(dataset[i])) for i in split.valid]
        vy = [target(i) for i in split.valid]
        metric = (evaluate(vp, vy, "regression") if cfg.task == "regression"
                  else -evaluate(vp, vy, "binary_classification"))
        history.append(metric)
        new_lr = plateau_schedule(best_metric, history, cfg.lr, cfg)
        for group in optimizer.param_groups:
            group["lr"] = new_lr
        if metric < best_metric:
            best_metric = metric
            best_state = {k: v.detach().clone()
                          for k, v in model.state_dict().items()}
            stagnant = 0
        else:
            stagnant += 1
            if stagnant >= cfg.early_stop_patience:
                break

    forbidden = seen_train & set(split.test)
    assert not forbidden, f"trained on test indices {sorted(forbidden)[:5]}"
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    with torch.no_grad():
        tp = [float(model(dataset[i])) for i in split.test]
    ty = [target(i) for i in split.test]
    if cfg.log_labels:
        tp = list(np.exp(tp))
        ty = list(np.exp(ty))
    metric = evaluate(
        tp, ty, "regression" if cfg.task == "regression"
        else "binary_classification")
    return {
        "metric": round(metric, 4),
        "epochs_run": len(history),
        "pretrained": pretrained,
        "seed": seed,
    }


def _file_hash(path) -> str | None:
    if path is None:
        return None
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_finetune(cfg: FinetuneConfig, splits: list[SplitSpec], dataset,
                 checkpoint=None, encoder_cfg: EncoderConfig | None = None,
                 repeats: int = 1, report_path=None) -> dict:
    """Train/evaluate over every split, ``repeats`` times each.

    Returns (and optionally writes) a JSON-ready report with per-run
    metrics, aggregate mean and std, a config echo and content hashes.
    """
    encoder_cfg = encoder_cfg or EncoderConfig()
    runs = []
    for repeat in range(repeats):
        for split in splits:
            fold = split.fold_index if split.fold_index is not None else 0
            seed = cfg.seed + 1000 * repeat + fold
            result = _train_one_fold(
                cfg, encoder_cfg, dataset, split, seed, checkpoint)
            result.update({"repeat": repeat, "fold": fold})
            runs.append(result)
    metrics = [r["metric"] for r in runs]
    report = {
        "task": cfg.task,
        "runs": runs,
        "n_runs": len(runs),
        "mean": round(float(np.mean(metrics)), 4),
        "std": round(float(np.std(metrics)), 4),
        "config": asdict(cfg),
        "encoder_config": asdict(encoder_cfg),
        "checkpoint": str(checkpoint) if checkpoint else None,
        "checkpoint_hash": _file_hash(checkpoint),
        "config_hash": hashlib.sha256(
            json.dumps(asdict(cfg), sort_keys=True).encode()).hexdigest(),
    }
    if report_path is not None:
        Path(report_path).write_text(json.dumps(report, indent=2) + "\n")
    return report
