"""Per-user binary verifiers. Every kind scores "higher = more genuine"."""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, fields

import numpy as np

from .._rng import derive_seed
from ..errors import DimensionMismatch, InvalidConfig, NonFiniteFeature, SingleClassTraining
from .forest import ForestModel, Tree, fit_forest
from .knn import KNNModel, fit_knn
from .mlp import MLPModel, fit_mlp
from .svm import SVMModel, fit_svm

MODEL_FORMAT_VERSION = 1


class Kind(enum.Enum):
    SVM_RBF = "SVM_RBF"
    RANDOM_FOREST = "RANDOM_FOREST"
    MLP = "MLP"
    KNN = "KNN"


@dataclass(frozen=True)
class HyperParams:
    svm_C: float = 1.0
    svm_gamma: float | None = None  # None: 1 / (d * mean feature variance)
    svm_tol: float = 1e-3
    rf_trees: int = 100
    mlp_hidden: tuple = (30, 30, 15)
    mlp_dropout: float = 0.3
    mlp_lr: float = 1e-3
    mlp_epochs: int = 50
    mlp_batch: int = 32
    knn_k: int = 18


@dataclass
class TrainSet:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise DimensionMismatch(f"X {self.X.shape} vs y {self.y.shape}")
        if not np.all(np.isfinite(self.X)):
            raise NonFiniteFeature("training matrix contains NaN or inf")
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise InvalidConfig("labels must be +1/-1")
        if not ((self.y > 0).any() and (self.y < 0).any()):
            raise SingleClassTraining("training set needs both genuine and impostor rows")

    @property
    def n_pos(self) -> int:
        return int((self.y > 0).sum())

    @property
    def n_neg(self) -> int:
        return int((self.y < 0).sum())


@dataclass
class Model:
    kind: Kind
    n_features: int
    impl: object


def train(kind: Kind, ts: TrainSet, hp: HyperParams | None = None, seed: int = 0) -> Model:
    hp = hp or HyperParams()
    kind = Kind(kind)
    if kind is Kind.SVM_RBF:
        impl = fit_svm(ts.X, ts.y, C=hp.svm_C, gamma=hp.svm_gamma, tol=hp.svm_tol)
    elif kind is Kind.RANDOM_FOREST:
        impl = fit_forest(ts.X, ts.y, n_trees=hp.rf_trees, seed=seed)
    elif kind is Kind.MLP:
        impl = fit_mlp(ts.X, ts.y, np.random.default_rng(derive_seed(seed, "mlp")),
                       hidden=tuple(hp.mlp_hidden), dropout=hp.mlp_dropout, lr=hp.mlp_lr,
                       epochs=hp.mlp_epochs, batch=hp.mlp_batch)
    else:
        impl = fit_knn(ts.X, ts.y, hp.knn_k)
    return Model(kind, ts.X.shape[1], impl)


def score(m: Model, X: np.ndarray) -> np.ndarray:
    """SVM: signed decision value; forest: share of trees voting genuine;
    MLP: sigmoid output; kNN: share of genuine neighbours."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != m.n_features:
        raise DimensionMismatch(f"model expects {m.n_features} features, got {X.shape}")
    if len(X) == 0:
        return np.empty(0)
    if m.kind is Kind.SVM_RBF:
        return m.impl.decision(X)
    if m.kind is Kind.RANDOM_FOREST:
        return m.impl.votes(X)
    if m.kind is Kind.MLP:
        return m.impl.predict_proba(X)
    return m.impl.genuine_fraction(X)


@dataclass
class MultiClassModel:
    classes: np.ndarray
    members: list  # one SVMModel per class, one-vs-rest

    def decision(self, X: np.ndarray) -> np.ndarray:
        return np.column_stack([m.decision(X) for m in self.members])


def train_multiclass(X: np.ndarray, labels: np.ndarray, hp: HyperParams | None = None
                     ) -> MultiClassModel:
    hp = hp or HyperParams()
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise SingleClassTraining("need at least two classes")
    if not np.all(np.isfinite(X)):
        raise NonFiniteFeature("training matrix contains NaN or inf")
    members = [fit_svm(X, np.where(labels == c, 1.0, -1.0), C=hp.svm_C, gamma=hp.svm_gamma,
                       tol=hp.svm_tol) for c in classes]
    return MultiClassModel(classes, members)


def predict_class(m: MultiClassModel, X: np.ndarray) -> np.ndarray:
    return m.classes[np.argmax(m.decision(np.asarray(X, dtype=np.float64)), axis=1)]


def confusion_matrix(true, pred, classes) -> np.ndarray:
    """Rows: true class, columns: predicted class."""
    index = {c: i for i, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(true, pred):
        cm[index[t], index[p]] += 1
    return cm


# --- serialization -------------------------------------------------------

def _arr(a):
    return {"dtype": str(a.dtype), "data": a.tolist()}


def _unarr(d):
    return np.array(d["data"], dtype=d["dtype"])


def model_to_dict(m: Model) -> dict:
    """JSON-ready dict; floats survive the round trip exactly."""
    impl = m.impl
    if m.kind is Kind.SVM_RBF:
        body = {"support": _arr(impl.support), "coef": _arr(impl.coef), "b": impl.b,
                "gamma": impl.gamma, "C": impl.C}
    elif m.kind is Kind.RANDOM_FOREST:
        body = {"trees": [{f.name: _arr(getattr(t, f.name)) for f in fields(Tree)}
                          for t in impl.trees]}
    elif m.kind is Kind.MLP:
        body = {"params": {k: _arr(v) for k, v in impl.params.items()},
                "stats": {k: _arr(v) for k, v in impl.stats.items()}}
    else:
        body = {"X": _arr(impl.X), "y": _arr(impl.y), "k": impl.k}
    return {"format": "touchpit-model", "version": MODEL_FORMAT_VERSION,
            "kind": m.kind.value, "n_features": m.n_features, "body": body}


def model_from_dict(d: dict) -> Model:
    if d.get("format") != "touchpit-model" or d.get("version") != MODEL_FORMAT_VERSION:
        raise InvalidConfig("unsupported model blob")
    kind = Kind(d["kind"])
    b = d["body"]
    if kind is Kind.SVM_RBF:
        impl = SVMModel(_unarr(b["support"]), _unarr(b["coef"]), b["b"], b["gamma"], b["C"])
    elif kind is Kind.RANDOM_FOREST:
        impl = ForestModel([Tree(**{k: _unarr(v) for k, v in t.items()}) for t in b["trees"]])
    elif kind is Kind.MLP:
        impl = MLPModel({k: _unarr(v) for k, v in b["params"].items()},
                        {k: _unarr(v) for k, v in b["stats"].items()})
    else:
        impl = KNNModel(_unarr(b["X"]), _unarr(b["y"]), b["k"])
    return Model(kind, d["n_features"], impl)


def hyperparams_dict(hp: HyperParams) -> dict:
    return asdict(hp)
