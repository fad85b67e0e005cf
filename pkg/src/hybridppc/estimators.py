"""scikit-learn style wrappers around the functional designs.

The estimators take a stack of channel matrices ``(K, N_r, N_t)`` (or a
:class:`~hybridppc.channel.ChannelRealization`) as ``X``. ``fit`` designs
the filters, ``transform`` returns the overall precoders and ``score``
evaluates the spectral efficiency of the fitted filters on ``X``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_channels
from .config import SystemConfig
from .digital import DIGITAL_DESIGNS
from .hybrid import design_hybrid
from .metrics import per_antenna_power, spectral_efficiency

__all__ = ["AllDigitalPrecoder", "HybridPrecoder"]


class _PrecoderMixin:
    def _config(self, h, l_tx, l_rx):
        k, n_rx, n_tx = h.shape
        ns = self.n_streams
        return SystemConfig(
            n_tx=n_tx, n_rx=n_rx,
            l_tx=ns if l_tx is None else l_tx,
            l_rx=ns if l_rx is None else l_rx,
            n_streams=ns, n_subcarriers=k, snr_db=float(self.snr_db),
            q_bits_tx=getattr(self, "q_bits_tx", 4), q_bits_rx=getattr(self, "q_bits_rx", 4),
            budgets=None if self.budgets is None else tuple(np.ravel(self.budgets)),
        )

    def _store(self, design, cfg):
        self.design_ = design
        self.config_ = cfg
        self.precoders_ = design.precoders
        self.combiners_ = design.combiners
        self.allocation_ = design.allocation
        self.antenna_powers_ = per_antenna_power(design.precoders, cfg.n_streams)
        self.n_features_in_ = cfg.n_tx
        return self

    def transform(self, X=None):
        """Overall precoders ``(K, N_t, N_s)`` of the fitted design.

        The filters do not depend on new data; ``X`` is only checked for a
        matching shape.
        """
        check_is_fitted(self, "precoders_")
        if X is not None:
            self._check_shape(X)
        return self.precoders_

    def fit_transform(self, X, y=None):
        return self.fit(X, y).transform()

    def _check_shape(self, X):
        cfg = self.config_
        h = check_channels(X, cfg.n_rx, cfg.n_tx)
        if h.shape[0] != cfg.n_subcarriers:
            raise ValueError(f"expected {cfg.n_subcarriers} subcarriers, got {h.shape[0]}")
        return h

    def score(self, X, y=None):
        """Spectral efficiency in bits/s/Hz of the fitted filters on ``X``."""
        check_is_fitted(self, "precoders_")
        h = self._check_shape(X)
        return spectral_efficiency(h, self.precoders_, self.combiners_,
                                   self.config_.snr, self.config_.n_streams)


class AllDigitalPrecoder(_PrecoderMixin, BaseEstimator):
    """All-digital precoder/combiner design.

    Parameters
    ----------
    design : {"ppc_upper", "ppc_relaxed", "tpc"}
    n_streams : int
    snr_db : float
    budgets : array_like of shape (N_t,), optional
        Per-antenna budgets summed over subcarriers. Defaults to
        ``K / N_t`` each.
    """

    def __init__(self, design="ppc_upper", n_streams=1, snr_db=0.0, budgets=None):
        self.design = design
        self.n_streams = n_streams
        self.snr_db = snr_db
        self.budgets = budgets

    def fit(self, X, y=None):
        if self.design not in DIGITAL_DESIGNS:
            raise ValueError(f"design must be one of {sorted(DIGITAL_DESIGNS)}, got {self.design!r}")
        h = check_channels(X)
        cfg = self._config(h, None, None)
        return self._store(DIGITAL_DESIGNS[self.design](h, cfg), cfg)


class HybridPrecoder(_PrecoderMixin, BaseEstimator):
    """Hybrid RF/baseband design built on an all-digital reference.

    Parameters
    ----------
    n_streams : int
    l_tx, l_rx : int, optional
        RF chains; default to ``n_streams``.
    snr_db : float
    q_bits_tx, q_bits_rx : int
    budgets : array_like of shape (N_t,), optional
    reference : {"ppc_upper", "ppc_relaxed", "tpc"}
        All-digital design whose precoders drive the RF eigendesign.
    """

    def __init__(self, n_streams=1, l_tx=None, l_rx=None, snr_db=0.0, q_bits_tx=4,
                 q_bits_rx=4, budgets=None, reference="ppc_upper"):
        self.n_streams = n_streams
        self.l_tx = l_tx
        self.l_rx = l_rx
        self.snr_db = snr_db
        self.q_bits_tx = q_bits_tx
        self.q_bits_rx = q_bits_rx
        self.budgets = budgets
        self.reference = reference

    def fit(self, X, y=None):
        if self.reference not in DIGITAL_DESIGNS:
            raise ValueError(f"reference must be one of {sorted(DIGITAL_DESIGNS)}")
        h = check_channels(X)
        cfg = self._config(h, self.l_tx, self.l_rx)
        ref = DIGITAL_DESIGNS[self.reference](h, cfg)
        self.reference_ = ref
        return self._store(design_hybrid(h, cfg, ref), cfg)
