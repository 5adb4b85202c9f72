"""scikit-learn style wrappers around the descriptor network and SHOT."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .descriptors import ShotConfig, compute_shot
from .fmnet import TrainConfig, compute_map, forward, train


class ShotDescriptor(TransformerMixin, BaseEstimator):
    """Stateless transformer: a TriMesh (or a list of them) to its SHOT field(s)."""

    def __init__(self, radius_frac=0.05, radius=None):
        self.radius_frac = radius_frac
        self.radius = radius

    def fit(self, X=None, y=None):
        self.config_ = ShotConfig(self.radius_frac, self.radius)
        return self

    def transform(self, X):
        config = ShotConfig(self.radius_frac, self.radius)
        if isinstance(X, (list, tuple)):
            return [compute_shot(m, config=config).values for m in X]
        return compute_shot(X, config=config).values


class FMNet(BaseEstimator):
    """Descriptor refinement network trained through the functional-map layer.

    ``fit`` takes a list of :class:`~fmcorr.fmnet.TrainPair`; ``transform``
    refines a descriptor matrix; ``predict`` maps a source
    :class:`~fmcorr.fmnet.ShapeBundle` onto a target one.
    """

    def __init__(self, k=30, iters=200, batch_matches=1000, seed=0, ridge=1e-3, loss="soft_error",
                 form="sum", n_blocks=7, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 bidirectional=True, gamma=0.5, margin=1.0):
        self.k = k
        self.iters = iters
        self.batch_matches = batch_matches
        self.seed = seed
        self.ridge = ridge
        self.loss = loss
        self.form = form
        self.n_blocks = n_blocks
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.bidirectional = bidirectional
        self.gamma = gamma
        self.margin = margin

    def _config(self):
        return TrainConfig(**self.get_params())

    def fit(self, X, y=None):
        pairs = list(X)
        self.params_, self.log_ = train(pairs, self._config())
        self.n_features_in_ = self.params_.q
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, the network expects {self.n_features_in_}")
        return forward(self.params_, X)

    def predict(self, src, tgt):
        check_is_fitted(self, "params_")
        return compute_map(src, tgt, self.params_, self.k, self.ridge)[1]

    def score(self, pairs, y=None):
        """Negative mean normalised geodesic error over the given pairs (higher is better)."""
        errs = []
        for pair in pairs:
            dom = pair.domain
            pm = self.predict(pair.src, pair.tgt)
            d = pair.tgt.distance_rows(pair.truth[dom])[np.arange(len(dom)), pm.assignments[dom]]
            errs.append(d / np.sqrt(float(pair.tgt.vertex_areas.sum())))
        return -float(np.concatenate(errs).mean())
