"""End-to-end training of the ΔK regressor through the PnP layer."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .bpnp import NotStationary, bpnp_backward, bpnp_forward, loss_reprojection
from .errors import DimeError
from .features import GridConfig, channel_mask, feature_vector, fit_channel_scaling, FEATURE_MASKS
from .geometry import DEFAULT_PNP, Correspondences, Intrinsics, PnpConfig, Pose, reprojection_errors, solve_pnp
from .mlp import MLP, mlp_backward, mlp_forward, mlp_init

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-3
    optimizer: str = "adam"
    epochs: int = 200
    batch_size: int = 8
    seed: int = 0
    pnp: PnpConfig = field(default_factory=PnpConfig)
    patience: int = 0  # 0 disables early stopping
    val_fraction: float = 0.2
    warm_start: bool = False
    exact_hessian: bool = False
    feature_mask: str = "A"
    fit_scaling: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # Per-step augmentation. Pixels go through a random axis-aligned affine map,
    # which is exactly a change of intrinsics (fx, cx) -> (a fx, a cx + b), so the
    # self-supervised reprojection target stays consistent. A random subset of
    # points is then kept. All zero disables augmentation.
    aug_focal: float = 0.0  # max relative focal change
    aug_center: float = 0.0  # max principal point shift, px
    aug_keep_min: float = 1.0  # min fraction of points kept
    # Mirror an image axis together with the matching camera-frame coordinate:
    # u' = W - u with X' = -X is exactly cx -> W - cx, fx unchanged.
    aug_flip: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 < self.aug_keep_min <= 1.0:
            raise ValueError("aug_keep_min must be in (0, 1]")
        if self.aug_focal < 0 or self.aug_center < 0:
            raise ValueError("augmentation ranges must be non-negative")
        if self.feature_mask not in FEATURE_MASKS:
            raise ValueError(f"unknown feature mask {self.feature_mask!r}")


HIDDEN = (256, 64)


def default_model(grid: GridConfig, seed: int = 0, hidden=HIDDEN) -> MLP:
    """Bias-free tanh MLP ``[feature_dim, *hidden, 4]``."""
    return mlp_init([grid.feature_dim, *hidden, 4], seed)


@dataclass(frozen=True, eq=False)
class TrainSample:
    corrs: Correspondences  # in {C0}
    kc: Intrinsics
    k_true: Intrinsics | None = None

    def __post_init__(self):
        if len(self.corrs) < 6:
            raise ValueError("a training sample needs at least 6 correspondences")


@dataclass
class TrainResult:
    model: MLP
    curve: list  # rows of (epoch, train_loss, val_avg_e)
    best_epoch: int
    skipped: int = 0


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def _make_optimizer(model: MLP, tcfg: TrainConfig):
    if tcfg.optimizer == "adam":
        return Adam(model.params(), tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.eps)
    return SGD(model.params(), tcfg.learning_rate)


def sample_features(samples, grid: GridConfig, mask_name: str = "A") -> np.ndarray:
    mask = None if mask_name == "A" else channel_mask(grid, FEATURE_MASKS[mask_name])
    return np.array([feature_vector(s.kc, s.corrs, grid, mask) for s in samples]).reshape(len(samples), grid.feature_dim)


def split_indices(n: int, val_fraction: float, seed: int):
    """Seeded train/validation split by frame."""
    perm = np.random.default_rng(np.random.SeedSequence([seed, 0xD1E])).permutation(n)
    n_val = int(round(val_fraction * n)) if n > 1 else 0
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def augment_sample(sample: TrainSample, grid: GridConfig, tcfg: TrainConfig, rng: np.random.Generator) -> TrainSample:
    """Random intrinsics-equivalent pixel warp plus random point subset.

    Returns ``sample`` unchanged when augmentation is off or too few points survive.
    """
    if not _augmenting(tcfg):
        return sample
    size = np.array([grid.image_width, grid.image_height])
    a = np.full(2, 1.0 + rng.uniform(-tcfg.aug_focal, tcfg.aug_focal))  # isotropic zoom
    b = rng.uniform(-tcfg.aug_center, tcfg.aug_center, 2)
    points, kc = sample.corrs.points, sample.kc
    if tcfg.aug_flip:
        flip = rng.random(2) < 0.5
        s = np.where(flip, -1.0, 1.0)
        points = points * np.append(s, 1.0)
        # fold the mirror into the affine map: u' = a (W - u) + b = -a u + (a W + b)
        b = np.where(flip, a * size + b, b)
        a = a * s
        kc = Intrinsics(kc.fx, kc.fy, *np.where(flip, size - [kc.cx, kc.cy], [kc.cx, kc.cy]))
    pixels = sample.corrs.pixels * a + b
    ok = np.flatnonzero(np.all((pixels >= 0) & (pixels <= size), axis=1))
    n = len(sample.corrs)
    keep = int(np.ceil(rng.uniform(tcfg.aug_keep_min, 1.0) * n))
    if len(ok) > keep:
        ok = np.sort(rng.choice(ok, keep, replace=False))
    if len(ok) < 6:
        return sample
    k_true = None
    if sample.k_true is not None:
        k = sample.k_true
        fx, fy = np.abs(a) * [k.fx, k.fy]
        k_true = Intrinsics(fx, fy, a[0] * k.cx + b[0], a[1] * k.cy + b[1])
    # re-express in the frame where PnP with K_c gives the identity pose, as real frames are
    corrs = Correspondences(pixels[ok], points[ok])
    try:
        anchor = solve_pnp(kc, corrs)
    except DimeError:
        return sample  # leave failures to the training step, which reports them
    return TrainSample(corrs.transformed(anchor), kc, k_true)


def _augmenting(tcfg: TrainConfig) -> bool:
    return tcfg.aug_focal > 0 or tcfg.aug_center > 0 or tcfg.aug_keep_min < 1.0 or tcfg.aug_flip


def sample_step(model: MLP, sample: TrainSample, y, tcfg: TrainConfig, init: Pose | None = None):
    """Forward + backward for one frame.

    Returns ``(mean loss, parameter gradients)`` of the per-point mean reprojection loss.
    """
    dk, cache = mlp_forward(model, y)
    k = sample.kc.shifted(dk)
    pose, _ = bpnp_forward(k, sample.corrs, tcfg.pnp, init=init)
    n = len(sample.corrs)
    L, gk, gp = loss_reprojection(k, pose, sample.corrs, tcfg.pnp)
    grad_k = gk / n + bpnp_backward(k, sample.corrs, pose, gp / n, tcfg.pnp, exact=tcfg.exact_hessian)
    grads, _ = mlp_backward(model, cache, grad_k)
    return L / n, grads


def predicted_error(model: MLP, sample: TrainSample, y, cfg: PnpConfig = DEFAULT_PNP) -> float:
    """Avg(e) for one frame: predict K, re-solve the pose, average the reprojection error."""
    k = sample.kc.shifted(model.forward(y))
    pose = solve_pnp(k, sample.corrs, cfg)
    return reprojection_errors(k, pose, sample.corrs, cfg)[1]


def _validation_error(model, samples, Y, idx, cfg):
    errs = []
    for i in idx:
        try:
            errs.append(predicted_error(model, samples[i], Y[i], cfg))
        except (DimeError, ValueError):
            errs.append(np.inf)
    return float(np.mean(errs)) if errs else float("nan")


def train(model: MLP, dataset, grid: GridConfig, tcfg: TrainConfig = TrainConfig(), val_dataset=None) -> TrainResult:
    """Train on ``dataset`` (list of :class:`TrainSample`).

    Without ``val_dataset`` the frames are split by ``tcfg.val_fraction``. The
    model with the lowest validation Avg(e) is returned together with the curve.
    """
    samples = list(dataset)
    if not samples:
        raise ValueError("empty training set")
    if model.layer_dims[0] != grid.feature_dim:
        raise ValueError(f"model expects {model.layer_dims[0]} inputs, grid gives {grid.feature_dim}")
    Y = sample_features(samples, grid, tcfg.feature_mask)
    if val_dataset is None:
        tr_idx, val_idx = split_indices(len(samples), tcfg.val_fraction, tcfg.seed)
        val_samples, Y_val = samples, Y
    else:
        val_samples = list(val_dataset)
        Y_val = sample_features(val_samples, grid, tcfg.feature_mask)
        tr_idx, val_idx = np.arange(len(samples)), np.arange(len(val_samples))

    model = model.copy()
    if tcfg.fit_scaling and model.input_scale is None:
        model.input_scale = fit_channel_scaling(Y[tr_idx], grid)
    model.meta.update({"grid": grid.label(), "image_size": [grid.image_width, grid.image_height],
                       "feature_mask": tcfg.feature_mask})
    opt = _make_optimizer(model, tcfg)
    rng = np.random.default_rng(np.random.SeedSequence([tcfg.seed, 0x7A1]))

    best = _validation_error(model, val_samples, Y_val, val_idx, tcfg.pnp)
    curve = [(0, float("nan"), best)]
    best_model, best_epoch, stale, skipped = model.copy(), 0, 0, 0
    init = Pose.identity() if tcfg.warm_start else None
    aug = _augmenting(tcfg)

    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(tr_idx)
        losses = []
        for b in range(0, len(order), tcfg.batch_size):
            batch = order[b : b + tcfg.batch_size]
            acc = [np.zeros_like(p) for p in model.params()]
            used = 0
            for i in batch:
                sample, y = samples[i], Y[i]
                if aug:
                    sample = augment_sample(sample, grid, tcfg, rng)
                    y = sample_features([sample], grid, tcfg.feature_mask)[0]
                try:
                    L, grads = sample_step(model, sample, y, tcfg, init=init)
                except NotStationary as exc:
                    log.info("epoch %d: skipping sample %d (%s)", epoch, i, exc)
                    skipped += 1
                    continue
                except DimeError as exc:
                    exc.args = (f"sample {i}: {exc}",)
                    raise
                if not np.isfinite(L):
                    raise FloatingPointError(f"non-finite loss at epoch {epoch}, sample {i}")
                losses.append(L)
                for a, g in zip(acc, grads):
                    a += g
                used += 1
            if used:
                opt.step(model.params(), [a / used for a in acc])
        val = _validation_error(model, val_samples, Y_val, val_idx, tcfg.pnp)
        train_loss = float(np.mean(losses)) if losses else float("nan")
        curve.append((epoch, train_loss, val))
        log.debug("epoch %d train %.4f val %.4f", epoch, train_loss, val)
        if val < best:
            best, best_model, best_epoch, stale = val, model.copy(), epoch, 0
        else:
            stale += 1
            if tcfg.patience and stale >= tcfg.patience:
                break
    return TrainResult(best_model, curve, best_epoch, skipped)


def infer_k(model: MLP, kc: Intrinsics, corrs: Correspondences, grid: GridConfig, mask_name: str | None = None) -> Intrinsics:
    """Rectified intrinsics ``K_c + ΔK`` for one frame; no pose solve needed."""
    if len(corrs) == 0:
        raise ValueError("need at least one correspondence")
    mask_name = mask_name or model.meta.get("feature_mask", "A")
    mask = None if mask_name == "A" else channel_mask(grid, FEATURE_MASKS[mask_name])
    return kc.shifted(model.forward(feature_vector(kc, corrs, grid, mask)))


def write_curve_csv(curve, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_avg_e"])
        for row in curve:
            w.writerow([row[0], repr(row[1]), repr(row[2])])
