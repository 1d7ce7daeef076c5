"""Pairwise-preference reward model and its fitness integration.

A small two-layer perceptron scores a grasp from fixed geometric features:
the 72 hand keypoints centered on the scene, flattened, plus eight scene
summary scalars. Training minimizes the Bradley-Terry logistic loss on
preferred pairs, with a squared-difference regularizer for pairs labeled
similar. The reward enters the evolutionary fitness as (R - bias) scaled by
the steering weight.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace

import numpy as np

from .evaluator import Grasp
from .evolution import Archive, embedding_distances, success_entries
from .geometry import SdfScene
from .hand import HandModel, HandState, forward_kinematics

HIDDEN_WIDTH = 64
REWARD_BIAS = 6.0
LAMBDA_EQUAL = 0.5
RETRAIN_EVERY = 25  # labels between reward-model refreshes during a steered run

LABELS = ("a_preferred", "b_preferred", "similar", "unlabeled")


class PreferenceError(RuntimeError):
    pass


@dataclass
class PreferencePair:
    pair_id: str
    grasp_a: Grasp
    grasp_b: Grasp
    scene_id: str
    label: str = "unlabeled"

    def __post_init__(self):
        if self.label not in LABELS:
            raise PreferenceError(f"unknown label {self.label!r}")

    def with_label(self, label: str) -> "PreferencePair":
        if self.label != "unlabeled":
            raise PreferenceError("already-labeled")
        if label not in LABELS or label == "unlabeled":
            raise PreferenceError(f"unknown label {label!r}")
        return replace(self, label=label)


class FeatureExtractor:
    """Grasp + scene -> fixed feature vector.

    Keypoints come from forward kinematics at the stored (open) joint vector,
    centered on the scene center; the scene contributes eight summary scalars.
    """

    def __init__(self, model: HandModel):
        self.model = model
        self.dim = 3 * model.keypoint_count + 8

    def __call__(self, grasp: Grasp, scene: SdfScene) -> np.ndarray:
        fk = forward_kinematics(self.model, HandState(grasp.wrist, grasp.q))
        centered = fk.keypoints - scene.center
        return np.concatenate([centered.reshape(-1), scene.summary_features()])


@dataclass
class RewardModel:
    """Two-layer perceptron with feature standardization."""

    extractor: FeatureExtractor
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    feat_mean: np.ndarray
    feat_std: np.ndarray
    bias: float = REWARD_BIAS
    lambda_equal: float = LAMBDA_EQUAL
    version: int = 0

    @classmethod
    def zero(cls, extractor: FeatureExtractor) -> "RewardModel":
        d = extractor.dim
        return cls(extractor, np.zeros((HIDDEN_WIDTH, d)), np.zeros(HIDDEN_WIDTH),
                   np.zeros(HIDDEN_WIDTH), 0.0, np.zeros(d), np.ones(d))

    @classmethod
    def random_init(cls, extractor: FeatureExtractor,
                    rng: np.random.Generator) -> "RewardModel":
        d = extractor.dim
        w1 = rng.normal(0.0, np.sqrt(2.0 / d), size=(HIDDEN_WIDTH, d))
        w2 = rng.normal(0.0, np.sqrt(1.0 / HIDDEN_WIDTH), size=HIDDEN_WIDTH)
        return cls(extractor, w1, rng.normal(0.0, 0.01, size=HIDDEN_WIDTH), w2, 0.0,
                   np.zeros(d), np.ones(d))

    def copy(self) -> "RewardModel":
        return replace(self, w1=self.w1.copy(), b1=self.b1.copy(), w2=self.w2.copy(),
                       feat_mean=self.feat_mean.copy(), feat_std=self.feat_std.copy())

    def forward_features(self, feats: np.ndarray) -> np.ndarray:
        x = (np.atleast_2d(feats) - self.feat_mean) / self.feat_std
        hidden = np.maximum(0.0, x @ self.w1.T + self.b1)
        return hidden @ self.w2 + self.b2


def reward(model: RewardModel, grasp: Grasp, scene: SdfScene) -> float:
    """Deterministic scalar reward for one grasp."""
    return float(model.forward_features(model.extractor(grasp, scene))[0])


def e_reward(model: RewardModel, grasp: Grasp, scene: SdfScene) -> float:
    """The fitness term: reward minus the calibration bias."""
    return reward(model, grasp, scene) - model.bias


def pairwise_loss(model: RewardModel, pair: PreferencePair, scene: SdfScene,
                  similar_fraction: float = 1.0) -> float:
    """Loss of a single labeled pair.

    Preferred pairs use the logistic ranking loss with the preferred grasp
    first; similar pairs use the squared reward difference weighted by
    lambda_equal and the minibatch fraction of similar pairs.
    """
    if pair.label == "unlabeled":
        raise PreferenceError("unlabeled")
    r_a = reward(model, pair.grasp_a, scene)
    r_b = reward(model, pair.grasp_b, scene)
    if pair.label == "similar":
        return model.lambda_equal * (r_b - r_a) ** 2 * similar_fraction
    margin = (r_a - r_b) if pair.label == "a_preferred" else (r_b - r_a)
    return float(np.logaddexp(0.0, -margin))


@dataclass
class TrainResult:
    model: RewardModel
    holdout_accuracy: float | None
    final_loss: float


def _pair_features(model: RewardModel, pairs, scene):
    xa = np.stack([model.extractor(p.grasp_a, scene) for p in pairs])
    xb = np.stack([model.extractor(p.grasp_b, scene) for p in pairs])
    return xa, xb


def holdout_accuracy(model: RewardModel, pairs, scene) -> float:
    """Fraction of preferred holdout pairs ranked correctly."""
    ranked = [p for p in pairs if p.label in ("a_preferred", "b_preferred")]
    if not ranked:
        raise PreferenceError("no-ranking-signal")
    xa, xb = _pair_features(model, ranked, scene)
    margins = model.forward_features(xa) - model.forward_features(xb)
    want = np.array([1.0 if p.label == "a_preferred" else -1.0 for p in ranked])
    return float(np.mean(margins * want > 0))


def train(model: RewardModel, pairs, scene: SdfScene, epochs: int = 300,
          learning_rate: float = 1e-3, rng: np.random.Generator | None = None,
          batch_size: int = 64, holdout=()) -> TrainResult:
    """Adam minimization of the mean pairwise loss with seeded shuffling.

    ``model`` is trained in place on a copy; zero epochs return it unchanged.
    Needs at least one non-similar label for a ranking signal. Note a
    zero-initialized model has no gradient (dead hidden layer); start from
    ``RewardModel.random_init`` or use ``fit_reward_model``.
    """
    labeled = [p for p in pairs if p.label != "unlabeled"]
    if not any(p.label in ("a_preferred", "b_preferred") for p in labeled):
        raise PreferenceError("no-ranking-signal")
    model = model.copy()
    if epochs == 0:
        acc = holdout_accuracy(model, holdout, scene) if holdout else None
        return TrainResult(model, acc, float("nan"))
    rng = rng or np.random.default_rng(0)

    xa, xb = _pair_features(model, labeled, scene)
    stacked = np.vstack([xa, xb])
    model.feat_mean = stacked.mean(axis=0)
    model.feat_std = np.maximum(stacked.std(axis=0), 1e-8)
    # sign: +1 a preferred, -1 b preferred, 0 similar
    sign = np.array([{"a_preferred": 1.0, "b_preferred": -1.0, "similar": 0.0}[p.label]
                     for p in labeled])

    params = [model.w1, model.b1, model.w2, np.array([model.b2])]
    adam_m = [np.zeros_like(p) for p in params]
    adam_v = [np.zeros_like(p) for p in params]
    step = 0
    final_loss = float("nan")
    n = len(labeled)
    for _ in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            loss, grads = _batch_loss_and_grads(model, params, xa[batch], xb[batch],
                                                sign[batch])
            epoch_loss += loss * len(batch)
            step += 1
            for p, g, m, v in zip(params, grads, adam_m, adam_v):
                m *= 0.9
                m += 0.1 * g
                v *= 0.999
                v += 0.001 * g * g
                m_hat = m / (1.0 - 0.9**step)
                v_hat = v / (1.0 - 0.999**step)
                p -= learning_rate * m_hat / (np.sqrt(v_hat) + 1e-8)
        final_loss = epoch_loss / n
    model.w1, model.b1, model.w2, model.b2 = params[0], params[1], params[2], float(params[3][0])
    acc = holdout_accuracy(model, holdout, scene) if holdout else None
    return TrainResult(model, acc, final_loss)


def _batch_loss_and_grads(model, params, xa, xb, sign):
    w1, b1, w2, b2 = params
    mean, std = model.feat_mean, model.feat_std

    def fwd(x):
        xn = (x - mean) / std
        h = np.maximum(0.0, xn @ w1.T + b1)
        return xn, h, h @ w2 + b2[0]

    xan, ha, ra = fwd(xa)
    xbn, hb, rb = fwd(xb)
    batch = len(sign)
    ranked = sign != 0.0
    similar = ~ranked
    sim_fraction = similar.sum() / batch

    loss = 0.0
    d_ra = np.zeros(batch)
    d_rb = np.zeros(batch)
    if ranked.any():
        margin = sign[ranked] * (ra[ranked] - rb[ranked])
        loss += np.logaddexp(0.0, -margin).sum() / ranked.sum()
        # d/d margin of softplus(-margin) = -sigmoid(-margin)
        dm = -_sigmoid(-margin) / ranked.sum()
        d_ra[ranked] = dm * sign[ranked]
        d_rb[ranked] = -dm * sign[ranked]
    if similar.any():
        diff = rb[similar] - ra[similar]
        scale = model.lambda_equal * sim_fraction
        loss += scale * np.mean(diff**2)
        dd = scale * 2.0 * diff / similar.sum()
        d_rb[similar] = dd
        d_ra[similar] = -dd

    g_w1 = np.zeros_like(w1)
    g_b1 = np.zeros_like(b1)
    g_w2 = np.zeros_like(w2)
    g_b2 = 0.0
    for xn, h, d_r in ((xan, ha, d_ra), (xbn, hb, d_rb)):
        g_w2 += h.T @ d_r
        g_b2 += d_r.sum()
        dh = np.outer(d_r, w2) * (h > 0)
        g_w1 += dh.T @ xn
        g_b1 += dh.sum(axis=0)
    return float(loss), [g_w1, g_b1, g_w2, np.array([g_b2])]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def fit_reward_model(pairs, scene: SdfScene, model_hand: HandModel,
                     epochs: int = 300, learning_rate: float = 1e-3,
                     seed: int = 0, holdout=()) -> TrainResult:
    """Fresh randomly initialized model trained on the given labels."""
    rng = np.random.default_rng(seed)
    model = RewardModel.random_init(FeatureExtractor(model_hand), rng)
    return train(model, pairs, scene, epochs, learning_rate, rng, holdout=holdout)


# ---------------------------------------------------------------------------
# annotation sampling and live steering
# ---------------------------------------------------------------------------

def sample_annotation_pair(archive: Archive, rng: np.random.Generator,
                           scene_id: str, pair_id: str,
                           min_lifetime: int = 0,
                           novelty_threshold: float = 0.1,
                           pose_dims: int = 6) -> PreferencePair:
    """Pick two successful grasps to compare: fitness-biased, and at mutual
    embedding distance >= the novelty threshold whenever such a pair exists."""
    succ = success_entries(archive, min_lifetime)
    if len(succ) < 2:
        raise PreferenceError("not-enough-successes")
    emb = np.stack([e.embedding for e in succ])
    totals = np.array([e.fitness.total for e in succ])
    ranks = totals.argsort().argsort().astype(float)  # 0 = worst
    weights = 1.0 + ranks

    qualified = []
    for i in range(len(succ)):
        d = embedding_distances(emb[i], emb, pose_dims)
        partners = np.flatnonzero(d >= novelty_threshold)
        if partners.size:
            qualified.append((i, partners))
    if qualified:
        probs = np.array([weights[i] for i, _ in qualified])
        pick = rng.choice(len(qualified), p=probs / probs.sum())
        first, partners = qualified[pick]
        pw = weights[partners]
        second = int(rng.choice(partners, p=pw / pw.sum()))
    else:  # no pair clears the threshold: fall back to any two distinct grasps
        first, second = rng.choice(len(succ), size=2, replace=False)
    return PreferencePair(
        pair_id=pair_id,
        grasp_a=succ[int(first)].grasp.copy(),
        grasp_b=succ[int(second)].grasp.copy(),
        scene_id=scene_id,
    )


class ModelHolder:
    """Versioned reward-model snapshot with atomic swap.

    Evaluation closures read the current snapshot per call; retraining swaps
    in a new version between reads.
    """

    def __init__(self, model: RewardModel | None = None):
        self._lock = threading.Lock()
        self._model = model
        self._version = 0 if model is None else model.version

    @property
    def version(self) -> int:
        with self._lock:
            return self._version

    def current(self) -> RewardModel | None:
        with self._lock:
            return self._model

    def swap(self, model: RewardModel) -> int:
        with self._lock:
            self._version += 1
            model.version = self._version
            self._model = model
            return self._version


def fitness_hook(holder: ModelHolder, scene: SdfScene):
    """Reward callable for the evaluator: returns (R - bias) under the current
    model snapshot, or 0 before any model exists."""
    def hook(grasp: Grasp) -> float:
        model = holder.current()
        if model is None:
            return 0.0
        return e_reward(model, grasp, scene)
    return hook


def save_model(model: RewardModel, path: str) -> None:
    """Weight-array checkpoint with a version header."""
    np.savez(
        path,
        version=np.array([model.version]),
        w1=model.w1, b1=model.b1, w2=model.w2, b2=np.array([model.b2]),
        feat_mean=model.feat_mean, feat_std=model.feat_std,
        bias=np.array([model.bias]), lambda_equal=np.array([model.lambda_equal]),
    )


def load_model(path: str, model_hand: HandModel) -> RewardModel:
    data = np.load(path)
    extractor = FeatureExtractor(model_hand)
    if data["w1"].shape[1] != extractor.dim:
        raise PreferenceError("model checkpoint does not match the hand's feature size")
    return RewardModel(
        extractor=extractor,
        w1=data["w1"], b1=data["b1"], w2=data["w2"], b2=float(data["b2"][0]),
        feat_mean=data["feat_mean"], feat_std=data["feat_std"],
        bias=float(data["bias"][0]), lambda_equal=float(data["lambda_equal"][0]),
        version=int(data["version"][0]),
    )
