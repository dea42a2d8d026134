"""scikit-learn compatible wrappers around the quantization codecs.

``fit`` learns the scales from a weight matrix (or activation vector),
``transform`` maps data to integer codes with those scales and
``inverse_transform`` maps codes back to reals, so a quantizer can sit in a
Pipeline or be cloned and grid-searched like any other transformer.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import round_half_away
from .errors import LayoutError
from .formats import quant_spec
from .quant import QuantizedTensor, quantize_activation, quantize_ternary
from .quant.activation import ACT_QMAX
from .quant.kquant import encode, fit_scales


def _check_matrix(X, estimator) -> np.ndarray:
    return check_array(X, dtype=np.float64, ensure_all_finite=True, estimator=estimator)


class KQuantizer(TransformerMixin, BaseEstimator):
    """Block-wise k-quantizer.

    Parameters
    ----------
    format : str, default="q4k"
        One of ``"q8"``, ``"q6k"``, ``"q4k"``, ``"q2k"``.

    Attributes
    ----------
    quantized_ : QuantizedTensor
        The fitted matrix in quantized form.
    sub_scales_ : ndarray
        Unquantized absmax scale of every sub-block.
    """

    def __init__(self, format: str = "q4k"):
        self.format = format

    def fit(self, X, y=None):
        X = _check_matrix(X, self)
        spec = quant_spec(self.format)
        if X.shape[1] % spec.super_block_size:
            raise LayoutError(
                f"{spec.format_id.name} needs n_features to be a multiple of {spec.super_block_size}"
            )
        sub_scales, sub_codes, supers = fit_scales(X, spec)
        self.spec_ = spec
        self.sub_scales_ = sub_scales
        self.quantized_ = QuantizedTensor(spec, X.shape, encode(X, sub_scales, spec), sub_codes, supers)
        self.n_features_in_ = X.shape[1]
        return self

    def _check_shape(self, X):
        if X.shape != self.quantized_.shape:
            raise ValueError(f"X has shape {X.shape}, quantizer was fitted on {self.quantized_.shape}")

    def transform(self, X):
        """Integer codes of ``X`` under the fitted scales (int8)."""
        check_is_fitted(self)
        X = _check_matrix(X, self)
        self._check_shape(X)
        return encode(X, self.sub_scales_, self.spec_)

    def inverse_transform(self, X):
        check_is_fitted(self)
        codes = np.asarray(X)
        self._check_shape(codes)
        rows, cols = codes.shape
        sb = self.spec_.sub_block_size
        return (codes.reshape(rows, -1, sb) * self.quantized_.steps[..., None]).reshape(rows, cols)

    def score(self, X, y=None):
        """Negative reconstruction RMSE (higher is better)."""
        X = _check_matrix(X, self)
        err = self.inverse_transform(self.transform(X)) - X
        return -float(np.sqrt(np.mean(err**2)))


class TernaryQuantizer(TransformerMixin, BaseEstimator):
    """Per-tensor ternary quantizer; ``mode`` is ``"absmean"`` or ``"absmax"``."""

    def __init__(self, mode: str = "absmean"):
        self.mode = mode

    def fit(self, X, y=None):
        X = _check_matrix(X, self)
        self.quantized_ = quantize_ternary(X, self.mode)
        self.gamma_ = self.quantized_.gamma
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = _check_matrix(X, self)
        return np.clip(round_half_away(X / self.gamma_), -1, 1).astype(np.int8)

    def inverse_transform(self, X):
        check_is_fitted(self)
        return self.gamma_ * np.asarray(X, dtype=np.float64)

    def score(self, X, y=None):
        X = _check_matrix(X, self)
        err = self.inverse_transform(self.transform(X)) - X
        return -float(np.sqrt(np.mean(err**2)))


class ActivationQuantizer(TransformerMixin, BaseEstimator):
    """Absmax 8-bit quantizer; fitted on one vector, one scale for all
    features. Rows of ``X`` are treated as samples."""

    def fit(self, X, y=None):
        X = _check_matrix(X, self)
        self.scale_ = quantize_activation(X.ravel()).scale
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = _check_matrix(X, self)
        return np.clip(round_half_away(X * self.scale_), -ACT_QMAX, ACT_QMAX).astype(np.int8)

    def inverse_transform(self, X):
        check_is_fitted(self)
        return np.asarray(X, dtype=np.float64) / self.scale_


__all__ = ["ActivationQuantizer", "KQuantizer", "TernaryQuantizer"]
