# salprop/bayes.py
"""
Bayesian edge saliency.

Each edgelet gets a prior from the product of its colour-gradient, texture
and strength features, and likelihoods from two 10-bin histograms of
normalised pixel magnitude: one over the salient edgelets (strength at least
beta times the strongest edgelet) and one over the rest. The posterior is

    p(sal | s) = p(sal) p(s | sal) / ( p(sal) p(s | sal) + (1 - p(sal)) p(s | bg) )
"""

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .common import EmptyInput, atomic_write_text, render_csv
from .edges import Edgelet

logger = logging.getLogger(__name__)

N_BINS = 10
PRIOR_EPS = 1e-3


@dataclass(frozen=True)
class SaliencyHistograms:
    """Smoothed, normalised magnitude histograms of salient and background edgelets."""

    h_s: np.ndarray
    h_bg: np.ndarray
    M: float = 1.0

    def __post_init__(self):
        for name in ("h_s", "h_bg"):
            h = np.array(getattr(self, name), dtype=np.float64)
            if h.shape != (N_BINS,):
                raise ValueError(f"{name} must have {N_BINS} bins")
            if np.any(h <= 0) or abs(h.sum() - 1.0) > 1e-9:
                raise ValueError(f"{name} must be strictly positive and sum to 1")
            h.setflags(write=False)
            object.__setattr__(self, name, h)


@dataclass(frozen=True)
class EdgeletSaliency:
    edgelet_id: int
    prior: float
    posterior: float
    nu: float

    @property
    def background(self) -> float:
        return 1.0 - self.posterior


def magnitude_bins(values, M: float) -> np.ndarray:
    """Bin index of each value normalised by M; the last bin is closed at 1.0."""
    scaled = np.asarray(values, dtype=np.float64) / M
    return np.clip(np.floor(scaled * N_BINS), 0, N_BINS - 1).astype(np.int64)


def saliency_prior(nodes: Sequence) -> Tuple[List[float], List[float]]:
    """
    Priors from the feature product nu = f_G * f_LTP * strength.

    Parameters
    ----------
    nodes : sequence of (f_G, f_LTP, strength)

    Returns
    -------
    (priors, nus)
        priors are nu / max(nu), clamped to [1e-3, 1 - 1e-3]; 0.5 for all when
        every nu is zero.

    Raises
    ------
    EmptyInput
        If ``nodes`` is empty.
    """
    if len(nodes) == 0:
        raise EmptyInput("saliency prior of an empty edgelet list")
    arr = np.asarray(nodes, dtype=np.float64).reshape(-1, 3)
    nu = arr[:, 0] * arr[:, 1] * arr[:, 2]
    top = float(nu.max())
    if top <= 0.0:
        priors = np.full(len(nu), 0.5)
    else:
        priors = np.clip(nu / top, PRIOR_EPS, 1.0 - PRIOR_EPS)
    return priors.tolist(), nu.tolist()


def salient_mask(strengths, beta: float = 0.8) -> np.ndarray:
    strengths = np.asarray(strengths, dtype=np.float64)
    return strengths >= beta * strengths.max()


def build_likelihood_histograms(edgelets: Sequence[Edgelet], beta: float = 0.8) -> SaliencyHistograms:
    """
    Magnitude likelihoods of salient and background edgelets.

    Raises
    ------
    EmptyInput
        If ``edgelets`` is empty.
    """
    if not edgelets:
        raise EmptyInput("likelihood histograms of an empty edgelet list")
    if beta <= 0:
        raise ValueError("beta must be positive")
    strengths = np.array([e.strength for e in edgelets])
    M = float(strengths.max())
    if M <= 0.0:
        M = 1.0
    salient = salient_mask(strengths, beta)
    counts = {True: np.zeros(N_BINS), False: np.zeros(N_BINS)}
    for e, is_salient in zip(edgelets, salient):
        counts[bool(is_salient)] += np.bincount(magnitude_bins(e.magnitudes, M), minlength=N_BINS)
    h_s = counts[True] + 1.0
    h_bg = counts[False] + 1.0
    logger.debug("histograms: %d salient, %d background edgelets", int(salient.sum()), int((~salient).sum()))
    return SaliencyHistograms(h_s=h_s / h_s.sum(), h_bg=h_bg / h_bg.sum(), M=M)


def _likelihoods(strength: float, hist: SaliencyHistograms, M: float) -> Tuple[float, float]:
    b = int(magnitude_bins(strength, M))
    return float(hist.h_s[b]), float(hist.h_bg[b])


def posterior(strength: float, prior: float, hist: SaliencyHistograms, M: float) -> float:
    """p(sal | strength)."""
    if M <= 0:
        raise ValueError("M must be positive")
    p_s, p_bg = _likelihoods(strength, hist, M)
    num = prior * p_s
    return num / (num + (1.0 - prior) * p_bg)


def background_posterior(strength: float, prior: float, hist: SaliencyHistograms, M: float) -> float:
    """p(bg | strength), the complement of :func:`posterior`."""
    if M <= 0:
        raise ValueError("M must be positive")
    p_s, p_bg = _likelihoods(strength, hist, M)
    num = (1.0 - prior) * p_bg
    return num / (prior * p_s + num)


def compute_saliency(edgelets: Sequence[Edgelet], features: Sequence, beta: float = 0.8) -> List[EdgeletSaliency]:
    """
    Saliency record for every edgelet.

    ``features`` holds one NodeFeatures (or any object with ``f_G``,
    ``f_LTP`` and ``strength``) per edgelet.
    """
    if not edgelets:
        raise EmptyInput("no edgelets to score")
    if len(features) != len(edgelets):
        raise ValueError("one feature vector per edgelet is required")
    priors, nus = saliency_prior([(f.f_G, f.f_LTP, f.strength) for f in features])
    hist = build_likelihood_histograms(edgelets, beta)
    return [
        EdgeletSaliency(e.id, prior, posterior(e.strength, prior, hist, hist.M), nu)
        for e, prior, nu in zip(edgelets, priors, nus)
    ]


def write_saliency_csv(
    records: Sequence[EdgeletSaliency], strengths: Sequence[float], path: os.PathLike, comment: str = ""
) -> Path:
    """Debug dump: edgelet_id, prior, posterior, strength."""
    rows = [(r.edgelet_id, repr(r.prior), repr(r.posterior), repr(float(s))) for r, s in zip(records, strengths)]
    return atomic_write_text(path, render_csv(["edgelet_id", "prior", "posterior", "strength"], rows, comment))
