"""Builders shared by the test modules."""

import numpy as np

from compaug.model import init_model
from compaug.training import CompetitiveConfig, ModelArtifact
from compaug.transforms import TransformSetConfig, generate_transform_set
from compaug.types import Dataset, NormStats, Window


def make_window(values, fs=50.0):
    values = np.asarray(values, dtype=np.float64)
    return Window(values, [f"ch{c}" for c in range(values.shape[0])], fs)


def make_artifact(model, n_channels, fs=50.0, set_size=50, seed=0, augment=True,
                  transforms=TransformSetConfig(), n1=20, n2=10):
    specs = generate_transform_set(transforms, set_size, np.random.default_rng(seed), n_channels, fs)
    cfg = CompetitiveConfig(n1=n1, n2=n2, transform_set_size=set_size, augment=augment,
                            transforms=transforms, model_kind=model.kind)
    return ModelArtifact(model, NormStats(np.zeros(n_channels), np.ones(n_channels)), specs, cfg,
                         [f"class{k}" for k in range(model.n_classes)],
                         [f"ch{c}" for c in range(n_channels)], fs)


def constant_artifact(n_channels=3, length=100, n_classes=4, fs=50.0, **kw):
    """Zero-weight softmax: uniform output, so the argmax is always class 0."""
    model = init_model("softmax", (n_channels, length), n_classes, np.random.default_rng(0))
    return make_artifact(model, n_channels, fs, **kw)


class OracleArtifact:
    """Artifact stand-in whose classifier is an arbitrary function of the normalized window."""

    def __init__(self, base: ModelArtifact, decide):
        self._base = base
        self._decide = decide

    def __getattr__(self, name):
        return getattr(self._base, name)

    def predict_proba_normalized(self, z, chunk_rows=1024):
        z = np.asarray(z)
        cls = np.array([self._decide(v) for v in z.reshape((-1,) + z.shape[-2:])])
        probs = np.zeros((cls.size, self._base.model.n_classes))
        probs[np.arange(cls.size), cls] = 1.0
        return probs.reshape(z.shape[:-2] + (self._base.model.n_classes,))

    def predict_proba(self, x, chunk_rows=1024):
        return self.predict_proba_normalized(self.normalize(x))


def segment_oracle(n_channels=3, length=100, lo=40, hi=60):
    """Class 1 iff the mean over timesteps [lo, hi) (all channels) is positive."""
    base = constant_artifact(n_channels, length, n_classes=2)
    return OracleArtifact(base, lambda v: int(v[:, lo:hi].mean() > 0))


def array_dataset(values, labels, n_classes=None, subjects=None, fs=50.0):
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels)
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    subjects = ["s0"] * len(labels) if subjects is None else subjects
    return Dataset(values, labels, subjects, [f"class{k}" for k in range(max(n_classes, 2))],
                   [f"ch{c}" for c in range(values.shape[1])], fs)
