"""Figures written next to the CSV/JSON outputs of the CLI."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {"analytic": "-", "gaussian-sim": "o", "measured": "s"}
# fixed metadata keeps PNG bytes stable between identical runs
_SAVE_KW = {"dpi": 120, "metadata": {"Software": None}}


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def plot_curves(curves, path, labels=None, title=None, log=False):
    """<n>(t) for several PolarizationCurves; simulated/measured ones get error bars."""
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = labels or [c.provenance for c in curves]
    for curve, label in zip(curves, labels):
        style = _STYLE.get(curve.provenance, "-")
        y = curve.n_mean - 0.5 if log else curve.n_mean
        if style == "-":
            ax.plot(curve.times, y, "-", label=label)
        else:
            every = max(len(curve.times) // 60, 1)
            err = None if curve.stderr is None else curve.stderr[::every]
            ax.errorbar(curve.times[::every], y[::every], yerr=err, fmt=style, ms=3, capsize=1.5, label=label)
    ax.set_xlabel(r"$t$ ($\mu$s)")
    if log:
        ax.set_yscale("log")
        ax.set_ylabel(r"$\langle n\rangle - 1/2$")
    else:
        ax.set_ylabel(r"$\langle n\rangle$")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    return _finish(fig, path)


def plot_gamma(est, path):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    t = est.times
    ax1.plot(t, est.autocorrelation, "-")
    ax1.plot(t, np.exp(-t / est.tau_c), "--", label=rf"$e^{{-t/\tau_c}}$, $\tau_c$={est.tau_c:.3g} $\mu$s")
    ax1.set_xlabel(r"$t$ ($\mu$s)")
    ax1.set_ylabel("normalized autocorrelation")
    ax1.set_xlim(0, min(t[-1], 8 * est.tau_c))
    ax1.legend(frameon=False, fontsize=8)
    ax2.plot(t, est.gamma, "-", label=r"$\gamma(t)$")
    ax2.axhline(est.sigma2 * est.tau_c, ls=":", color="k", label=r"$\sigma^2\tau_c$")
    ax2.set_xlabel(r"$t$ ($\mu$s)")
    ax2.set_ylabel(r"$\gamma$ (rad$^2$/$\mu$s)")
    ax2.set_xlim(0, min(t[-1], 8 * est.tau_c))
    ax2.legend(frameon=False, fontsize=8)
    return _finish(fig, path)


def plot_sweep(values, rates, param, path, exponent=None):
    fig, ax = plt.subplots(figsize=(5, 4))
    values, rates = np.asarray(values, float), np.asarray(rates, float)
    ok = np.isfinite(rates) & (rates > 0)
    ax.loglog(values[ok], rates[ok], "o-")
    ax.set_xlabel(param)
    ax.set_ylabel(r"$1/\tau_p$ ($\mu$s$^{-1}$)")
    if exponent is not None:
        ax.set_title(f"log-log slope {exponent:+.3f}")
    return _finish(fig, path)
