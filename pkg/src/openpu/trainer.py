"""Cooperative training of the Grad-C / Grad-E network pair.

Each step draws one class-stratified labeled batch and one wild batch and
minimises ``R_c + R_e + beta * R_kl``:

* ``R_c``: cross entropy on ``q_c`` plus the multi-PU risk of ``f_c`` under the
  (weighted) Taylor loss,
* ``R_e``: cross entropy on ``q_e`` plus the multi-PU risk of ``f_e`` under
  (weighted) BCE,
* ``R_kl``: symmetric Bernoulli KL between ``f_c`` and ``f_e`` on the wild batch.

Confidence weights are refreshed once per epoch from a full pass over the
wild set.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .confidence import MODES, ConfidenceState
from .data import LabeledSet, WildSet
from .heads import DEFAULT_THRESHOLD, PredictionBatch, confidence_probs, multi_pu_risk, predict_from_probs
from .losses import ce_loss, kl_align
from .numerics import SGD, Network, TrainingError, add_grads, backward, cosine_lr, forward, init_network

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
HISTORY_COLUMNS = ("epoch", "lr", "R_k_c", "R_mpu_c", "R_k_e", "R_mpu_e", "R_kl", "R_all")
WEIGHTINGS = ("none", "pro", "mixpro")
DEPLOY_MODES = ("c", "e", "mean")


@dataclass
class TrainConfig:
    epochs: int = 130
    base_lr: float = 3e-4
    momentum: float = 0.9
    weight_decay: float = 1e-4
    beta: float = 1.0
    taylor_order: int = 2
    tau: float = 0.95
    alpha: float = 0.9
    mode_c: str = "continuous"
    mode_e: str = "discrete"
    batch_labeled: int = 64
    batch_wild: int = 64
    seed: int = 0
    single_network: bool = False
    weighting: str = "mixpro"
    loss_c: str = "tbce"
    multi_pu: bool = True
    hidden: tuple[int, ...] = (64, 64)
    threshold: float = DEFAULT_THRESHOLD
    deploy: str = "c"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.taylor_order < 1:
            raise ValueError("taylor_order must be >= 1")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if self.loss_c not in ("tbce", "bce"):
            raise ValueError("loss_c must be 'tbce' or 'bce'")
        if self.mode_c not in MODES or self.mode_e not in MODES:
            raise ValueError(f"updating modes must be in {MODES}")
        if self.deploy not in DEPLOY_MODES:
            raise ValueError(f"deploy must be one of {DEPLOY_MODES}")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")

    @property
    def weighted(self) -> bool:
        return self.weighting != "none"

    @property
    def uses_e_branch(self) -> bool:
        # a lone network only carries the BCE branch when it feeds confidence weights
        return not self.single_network or self.weighted

    @property
    def loss_name_c(self) -> str:
        return ("w" + self.loss_c) if self.weighted else self.loss_c

    @property
    def loss_name_e(self) -> str:
        return "wbce" if self.weighted else "bce"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class TrainState:
    net_c: Network
    net_e: Network | None
    opt_c: SGD
    opt_e: SGD | None
    confidence: ConfidenceState
    epoch: int = 0
    history: list[dict] = field(default_factory=list)


def _labeled_batches(y: np.ndarray, n_classes: int, batch: int, n_steps: int, rng) -> list[np.ndarray]:
    """Class-stratified index batches cycling through per-class permutations."""
    per = max(1, math.ceil(batch / n_classes))
    pools = [np.flatnonzero(y == c) for c in range(1, n_classes + 1)]
    perms = [rng.permutation(p) for p in pools]
    pos = [0] * n_classes
    out = []
    for _ in range(n_steps):
        parts = []
        for c in range(n_classes):
            take = []
            while len(take) < min(per, len(pools[c])):
                if pos[c] >= len(perms[c]):
                    perms[c] = rng.permutation(pools[c])
                    pos[c] = 0
                k = min(per - len(take), len(perms[c]) - pos[c])
                take.extend(perms[c][pos[c]:pos[c] + k])
                pos[c] += k
            parts.append(np.asarray(take, dtype=int))
        out.append(np.concatenate(parts))
    return out


def init_state(cfg: TrainConfig, d_in: int, n_classes: int, n_wild: int) -> TrainState:
    heads = n_classes if cfg.multi_pu else 1
    net_c = init_network(d_in, n_classes, cfg.hidden, heads, seed=[cfg.seed, 1])
    net_e = None if cfg.single_network else init_network(d_in, n_classes, cfg.hidden, heads, seed=[cfg.seed, 2])
    conf = ConfidenceState(n_wild, heads, cfg.alpha, cfg.tau, cfg.mode_c, cfg.mode_e)
    return TrainState(net_c, net_e, SGD(cfg.momentum, cfg.weight_decay),
                      None if net_e is None else SGD(cfg.momentum, cfg.weight_decay), conf)


def _branch(net, xk, yk, xw, loss, weights, t):
    """Forward one network on a labeled + wild batch; return risks and upstream grads."""
    nk = len(yk)
    q, f, cache = forward(net, np.vstack([xk, xw]))
    ce, g_ce = ce_loss(q[:nk], yk)
    r_k = float(ce.mean())
    dq = np.zeros_like(q)
    dq[:nk] = g_ce / nk
    r_mpu, g_known, g_wild = multi_pu_risk(f[:nk], yk, f[nk:], loss, weights, t)
    df = np.vstack([g_known, g_wild])
    return r_k, r_mpu, f[nk:], dq, df, cache


def train_epoch(cfg: TrainConfig, state: TrainState, D_k: LabeledSet, D_wild: WildSet) -> dict:
    epoch = state.epoch
    rng = np.random.default_rng([cfg.seed, epoch])
    lr = cosine_lr(epoch, cfg.epochs, cfg.base_lr)
    n_w = len(D_wild)
    order = rng.permutation(n_w)
    wild_batches = [order[i:i + cfg.batch_wild] for i in range(0, n_w, cfg.batch_wild)]
    C = state.net_c.n_classes
    lab_batches = _labeled_batches(D_k.y, C, cfg.batch_labeled, len(wild_batches), rng)
    conf = state.confidence
    t = cfg.taylor_order
    sums = dict.fromkeys(("R_k_c", "R_mpu_c", "R_k_e", "R_mpu_e", "R_kl"), 0.0)
    for step, (li, wi) in enumerate(zip(lab_batches, wild_batches)):
        xk, yk, xw = D_k.X[li], D_k.y[li], D_wild.X[wi]
        r_kc, r_mc, fw_c, dq_c, df_c, cache_c = _branch(
            state.net_c, xk, yk, xw, cfg.loss_name_c, conf.w_c[wi], t)
        terms = {"R_k_c": r_kc, "R_mpu_c": r_mc, "R_k_e": 0.0, "R_mpu_e": 0.0, "R_kl": 0.0}
        if state.net_e is None:
            if cfg.uses_e_branch:
                # single-network ablation: both loss branches on the same heads
                r_ke, r_me, _, dq_e, df_e, _ = _branch(state.net_c, xk, yk, xw, cfg.loss_name_e, conf.w_e[wi], t)
                terms.update(R_k_e=r_ke, R_mpu_e=r_me)
                dq_c, df_c = dq_c + dq_e, df_c + df_e
            _check_finite(terms, epoch, step)
            state.opt_c.step(state.net_c, backward(state.net_c, cache_c, dq_c, df_c), lr)
        else:
            r_ke, r_me, fw_e, dq_e, df_e, cache_e = _branch(
                state.net_e, xk, yk, xw, cfg.loss_name_e, conf.w_e[wi], t)
            terms.update(R_k_e=r_ke, R_mpu_e=r_me)
            if cfg.beta > 0:
                r_kl, g_kl_c, g_kl_e = kl_align(fw_c, fw_e)
                terms["R_kl"] = r_kl
                nk = len(yk)
                df_c[nk:] += cfg.beta * g_kl_c
                df_e[nk:] += cfg.beta * g_kl_e
            _check_finite(terms, epoch, step)
            state.opt_c.step(state.net_c, backward(state.net_c, cache_c, dq_c, df_c), lr)
            state.opt_e.step(state.net_e, backward(state.net_e, cache_e, dq_e, df_e), lr)
        for k, v in terms.items():
            sums[k] += v
    n_steps = len(wild_batches)
    rec = {"epoch": epoch + 1, "lr": lr}
    rec.update({k: v / n_steps for k, v in sums.items()})
    rec["R_all"] = total_risk(rec, cfg.beta)
    if cfg.weighted:
        update_confidence(cfg, state, D_wild.X)
    state.epoch += 1
    state.history.append(rec)
    return rec


def total_risk(rec: dict, beta: float) -> float:
    return (rec["R_k_c"] + rec["R_mpu_c"]) + (rec["R_k_e"] + rec["R_mpu_e"]) + beta * rec["R_kl"]


def _check_finite(terms, epoch, step):
    for k, v in terms.items():
        if not math.isfinite(v):
            raise TrainingError(f"non-finite {k} at epoch {epoch + 1}, batch {step}")


def update_confidence(cfg: TrainConfig, state: TrainState, X_wild) -> None:
    q_c, f_c, _ = forward(state.net_c, X_wild)
    if state.net_e is None:
        q_e, f_e = q_c, f_c
    else:
        q_e, f_e, _ = forward(state.net_e, X_wild)
    p_c = confidence_probs(cfg.weighting, q_c, f_c)
    p_e = confidence_probs(cfg.weighting, q_e, f_e)
    state.confidence.update_all(p_c, p_e)


@dataclass
class TrainResult:
    net_c: Network
    net_e: Network | None
    history: list[dict]
    state: TrainState


def train(cfg: TrainConfig, D_k: LabeledSet, D_wild: WildSet, state: TrainState | None = None,
          stop_after: int | None = None, on_epoch=None) -> TrainResult:
    """Run (or resume) training up to ``cfg.epochs`` or ``stop_after`` epochs."""
    if len(D_wild) == 0:
        raise ValueError("wild set is empty")
    C = int(D_k.y.max()) if len(D_k) else 0
    counts = np.bincount(D_k.y, minlength=C + 1)[1:]
    if C == 0 or np.any(counts == 0):
        raise ValueError("every known class needs at least one labeled sample")
    if state is None:
        state = init_state(cfg, D_k.X.shape[1], C, len(D_wild))
    end = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)
    while state.epoch < end:
        rec = train_epoch(cfg, state, D_k, D_wild)
        log.debug("epoch %d: %s", rec["epoch"], rec)
        if on_epoch is not None:
            on_epoch(state, rec)
    return TrainResult(state.net_c, state.net_e, state.history, state)


def predict(net_c: Network, net_e: Network | None, batch, mode: str = "c",
            threshold: float = DEFAULT_THRESHOLD) -> PredictionBatch:
    """Open-set predictions from the deployed network (or the mean of both)."""
    if mode not in DEPLOY_MODES:
        raise ValueError(f"mode must be one of {DEPLOY_MODES}")
    if mode != "c" and net_e is None:
        raise ValueError(f"mode {mode!r} needs the second network")
    if mode == "c":
        q, f, _ = forward(net_c, batch)
    elif mode == "e":
        q, f, _ = forward(net_e, batch)
    else:
        q1, f1, _ = forward(net_c, batch)
        q2, f2, _ = forward(net_e, batch)
        q, f = (q1 + q2) / 2, (f1 + f2) / 2
    return predict_from_probs(q, f, threshold)


def write_history_csv(path, history: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(HISTORY_COLUMNS) + "\n")
        for rec in history:
            fh.write(",".join(repr(rec[k]) if k != "epoch" else str(rec[k]) for k in HISTORY_COLUMNS) + "\n")


# ---------------------------------------------------------------- checkpoints

class CheckpointError(RuntimeError):
    pass


def _digest(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for k in sorted(arrays):
        a = np.ascontiguousarray(arrays[k])
        h.update(k.encode())
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def save_checkpoint(path, cfg: TrainConfig, state: TrainState) -> None:
    """Write a versioned ``.npz`` container; see the README for the key layout."""
    arrays = {}
    for tag, net, opt in (("c", state.net_c, state.opt_c), ("e", state.net_e, state.opt_e)):
        if net is None:
            continue
        for k, v in net.params.items():
            arrays[f"net_{tag}/{k}"] = v
        for k, v in opt.velocity.items():
            arrays[f"vel_{tag}/{k}"] = v
    arrays["conf/w_c"] = state.confidence.w_c
    arrays["conf/w_e"] = state.confidence.w_e
    conf = state.confidence
    meta = {
        "format": "openpu-checkpoint", "version": CHECKPOINT_VERSION, "package": __version__,
        "epoch": state.epoch, "config": cfg.to_dict(), "config_hash": cfg.config_hash(),
        "d_in": state.net_c.d_in, "n_classes": state.net_c.n_classes, "n_pu_heads": state.net_c.n_pu_heads,
        "confidence": {"alpha": conf.alpha, "tau": conf.tau, "mode_c": conf.mode_c, "mode_e": conf.mode_e},
        "history": state.history, "digest": _digest(arrays),
    }
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[TrainConfig, TrainState]:
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
        meta = json.loads(arrays.pop("__meta__").tobytes().decode())
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("format") != "openpu-checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')!r}")
    if _digest(arrays) != meta.get("digest"):
        raise CheckpointError("checkpoint digest mismatch")
    cfg = TrainConfig.from_dict(meta["config"])

    def restore(tag):
        prefix = f"net_{tag}/"
        params = {k[len(prefix):]: v.copy() for k, v in arrays.items() if k.startswith(prefix)}
        if not params:
            return None, None
        net = Network(meta["d_in"], meta["n_classes"], cfg.hidden, meta["n_pu_heads"], params)
        opt = SGD(cfg.momentum, cfg.weight_decay)
        vp = f"vel_{tag}/"
        opt.velocity = {k[len(vp):]: v.copy() for k, v in arrays.items() if k.startswith(vp)}
        return net, opt

    net_c, opt_c = restore("c")
    net_e, opt_e = restore("e")
    if net_c is None:
        raise CheckpointError("checkpoint holds no network")
    c = meta["confidence"]
    w_c, w_e = arrays["conf/w_c"].copy(), arrays["conf/w_e"].copy()
    conf = ConfidenceState(w_c.shape[0], w_c.shape[1], c["alpha"], c["tau"], c["mode_c"], c["mode_e"], w_c, w_e)
    return cfg, TrainState(net_c, net_e, opt_c, opt_e, conf, meta["epoch"], meta["history"])
