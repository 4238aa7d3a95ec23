"""Field-response channel evaluation and its closed-form power-gain expansion.

The channel power gain along the receive axis is a finite cosine series

    g(x) = c + 2 * sum_{a<b} |M_ab| cos(k_ba x + angle(M_ab)),   k_ba = 2pi/lambda (v_b - v_a)

where ``M`` is an L x L Hermitian matrix.  For the plain gain ``M`` is
``Delta^H G G^H Delta`` (entries ``tau_a tau_b^* sum_n exp(j 2pi/lambda t_n.(p_a - p_b))``);
for a beam-weighted power ``h^H W h`` it is ``Delta^H G W G^H Delta``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelVector:
    entries: np.ndarray
    position_x: float


@dataclass(frozen=True)
class CosineSeries:
    """c + 2 sum amp*cos(rate*x + phase); all pair arrays have equal length."""

    const: float
    amp: np.ndarray
    rate: np.ndarray
    phase: np.ndarray

    def value(self, x):
        x = np.asarray(x, float)
        arg = np.multiply.outer(x, self.rate) + self.phase
        return self.const + 2.0 * np.sum(self.amp * np.cos(arg), axis=-1)

    def deriv(self, x):
        x = np.asarray(x, float)
        arg = np.multiply.outer(x, self.rate) + self.phase
        return -2.0 * np.sum(self.amp * self.rate * np.sin(arg), axis=-1)

    def deriv2(self, x):
        x = np.asarray(x, float)
        arg = np.multiply.outer(x, self.rate) + self.phase
        return -2.0 * np.sum(self.amp * self.rate**2 * np.cos(arg), axis=-1)

    @property
    def curvature_bound(self) -> float:
        """Upper bound on |second derivative| over the whole real line."""
        return float(2.0 * np.sum(self.amp * self.rate**2))

    @property
    def amplitude_bound(self) -> float:
        return float(2.0 * np.sum(self.amp))

    def scaled(self, factor: float) -> "CosineSeries":
        return CosineSeries(self.const * factor, self.amp * factor, self.rate, self.phase)


def field_response_matrix(ch) -> np.ndarray:
    """Transmit FRM G, shape (L, N): G[l, n] = exp(j 2pi/lambda t_n . p_l)."""
    k = 2.0 * np.pi / ch.wavelength
    return np.exp(1j * k * ch.aod_directions @ ch.tx_positions.T)


def receive_response(ch, x: float) -> np.ndarray:
    """f(x), shape (L,)."""
    return np.exp(1j * 2.0 * np.pi / ch.wavelength * x * ch.virtual_aoas)


def f_coefficients(ch) -> tuple[np.ndarray, float]:
    """Return the full Hermitian coefficient matrix and G = N sum |tau|^2.

    Entry (a, b) with a < b is the cross-term coefficient F_ab of the gain
    expansion; (b, a) holds its conjugate, the diagonal holds N |tau_l|^2.
    """
    frm = field_response_matrix(ch)
    tau = ch.path_responses
    # Delta = diag(conj(tau)) so Delta^H G G^H Delta = diag(tau) (G G^H) diag(conj(tau))
    m = (tau[:, None] * (frm @ frm.conj().T)) * tau.conj()[None, :]
    m = 0.5 * (m + m.conj().T)
    g = float(ch.n_tx * np.sum(np.abs(tau) ** 2))
    return m, g


def pair_series(m: np.ndarray, virtual_aoas: np.ndarray, wavelength: float,
                const: float | None = None) -> CosineSeries:
    """Cosine series of f(x)^H m f(x) for a Hermitian L x L matrix ``m``."""
    a, b = np.triu_indices(m.shape[0], k=1)
    coeff = m[a, b]
    rate = 2.0 * np.pi / wavelength * (virtual_aoas[b] - virtual_aoas[a])
    c = float(np.real(np.trace(m))) if const is None else const
    return CosineSeries(c, np.abs(coeff), rate, np.angle(coeff))


def gain_series(ch) -> CosineSeries:
    return pair_series(ch.f_coeffs, ch.virtual_aoas, ch.wavelength, const=ch.g_const)


def _check_domain(ch, x) -> None:
    xs = np.asarray(x, float)
    tol = 1e-12 * max(ch.region_len, 1.0)
    if np.any(xs < -tol) or np.any(xs > ch.region_len + tol):
        raise DomainError(f"position outside [0, {ch.region_len}]: {x}")


def channel_vector(ch, x: float) -> ChannelVector:
    """h(x) with entry n = sum_l conj(tau_l) exp(j 2pi/lambda (x v_l - t_n . p_l))."""
    _check_domain(ch, x)
    k = 2.0 * np.pi / ch.wavelength
    phase = k * (x * ch.virtual_aoas[None, :] - ch.tx_positions @ ch.aod_directions.T)
    entries = np.exp(1j * phase) @ ch.path_responses.conj()
    return ChannelVector(entries, float(x))


def channel_matrix(channels, x) -> np.ndarray:
    """Stack h_k(x_k) as columns, shape (N, K)."""
    return np.column_stack([channel_vector(ch, xk).entries for ch, xk in zip(channels, x)])


def gain_closed_form(ch, x):
    """||h(x)||^2 from the cached coefficients, O(L^2) per position."""
    _check_domain(ch, x)
    out = gain_series(ch).value(x)
    return float(out) if np.ndim(out) == 0 else out


def gain_unchecked(ch, x):
    """Closed-form gain without the region check (the formula is periodic on R)."""
    out = gain_series(ch).value(x)
    return float(out) if np.ndim(out) == 0 else out


def beam_coefficients(ch, cov: np.ndarray) -> np.ndarray:
    """A = Delta^H G W G^H Delta for a transmit covariance W, so h^H W h = f^H A f."""
    frm = field_response_matrix(ch)
    tau = ch.path_responses
    left = tau[:, None] * frm
    a = left @ cov @ left.conj().T
    return 0.5 * (a + a.conj().T)


def beam_power_series(ch, cov: np.ndarray) -> CosineSeries:
    return pair_series(beam_coefficients(ch, cov), ch.virtual_aoas, ch.wavelength)
