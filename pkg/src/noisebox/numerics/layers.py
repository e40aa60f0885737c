"""Neural-network layer ops with fused backward passes."""

from __future__ import annotations

import numpy as np

from .tensor import DTYPE, ConfigError, DimensionError, Tensor, add, as_tensor, make, matmul


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """y[..., j] = sum_i x[..., i] W[i, j] + b[j]."""
    x, W = as_tensor(x), as_tensor(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {W.shape}")
    y = matmul(x, W)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[1],):
            raise DimensionError(f"linear: bias {b.shape} does not match weight {W.shape}")
        y = add(y, b)
    return y


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis with population variance."""
    if eps <= 0:
        raise ConfigError("layer_norm eps must be positive")
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data

    def back(g):
        gxhat = g * gd
        gx = rstd * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                     - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make(xhat * gd + beta.data, (x, gamma, beta), back)


def softmax_np(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    x = as_tensor(x)
    p = softmax_np(x.data)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return make(p, (x,), back)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row softmax."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    n = logits.shape[0]
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def back(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (g * p / n,)

    return make(np.asarray(loss), (logits,), back)


# convolutions -----------------------------------------------------------

def conv_out_size(n: int, k: int, stride: int, pad: int) -> int:
    span = n + 2 * pad - k
    if span < 0:
        raise DimensionError(f"kernel {k} larger than padded input {n + 2 * pad}")
    return span // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, Ho: int, Wo: int) -> np.ndarray:
    C = xp.shape[0]
    cols = np.empty((C, kh, kw, Ho, Wo), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride]
    return cols.reshape(C * kh * kw, Ho * Wo)


def _col2im(cols: np.ndarray, shape, kh: int, kw: int, stride: int, Ho: int, Wo: int) -> np.ndarray:
    C, Hp, Wp = shape
    cols = cols.reshape(C, kh, kw, Ho, Wo)
    xp = np.zeros(shape, dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            xp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += cols[:, i, j]
    return xp


def conv2d(x: Tensor, k: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of x[C_in,H,W] with k[C_out,C_in,kh,kw], zero padding.

    Output size is floor((H + 2*pad - kh) / stride) + 1.
    """
    x, k = as_tensor(x), as_tensor(k)
    Cin, H, W = x.shape
    Cout, Ck, kh, kw = k.shape
    if Ck != Cin:
        raise DimensionError(f"conv2d: input {x.shape} vs kernel {k.shape}")
    if kh < 1 or kw < 1:
        raise ConfigError(f"conv2d kernel sides must be >= 1, got {kh}x{kw}")
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    Ho, Wo = conv_out_size(H, kh, stride, pad), conv_out_size(W, kw, stride, pad)
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, kh, kw, stride, Ho, Wo)
    kmat = k.data.reshape(Cout, -1)
    y = (kmat @ cols).reshape(Cout, Ho, Wo)
    parents = [x, k]
    if b is not None:
        b = as_tensor(b)
        y += b.data[:, None, None]
        parents.append(b)

    def back(g):
        g2 = g.reshape(Cout, -1)
        gk = (g2 @ cols.T).reshape(k.shape)
        gx = None
        if x.requires_grad:
            gxp = _col2im(kmat.T @ g2, xp.shape, kh, kw, stride, Ho, Wo)
            gx = gxp[:, pad:pad + H, pad:pad + W] if pad else gxp
        out = [gx, gk]
        if b is not None:
            out.append(g.sum(axis=(1, 2)))
        return tuple(out)

    return make(y, parents, back)


def conv1d_depthwise(x: Tensor, k: Tensor, pad: int | None = None) -> Tensor:
    """Per-channel cross-correlation along the sequence axis of x[L,C]; length preserving."""
    x, k = as_tensor(x), as_tensor(k)
    L, C = x.shape
    Ck, kw = k.shape
    if Ck != C:
        raise DimensionError(f"conv1d_depthwise: input {x.shape} vs kernel {k.shape}")
    if kw % 2 == 0:
        raise ConfigError(f"conv1d kernel width must be odd, got {kw}")
    half = (kw - 1) // 2
    if pad is None:
        pad = half
    if pad != half:
        raise ConfigError(f"conv1d pad must be {half} for width {kw}")
    xp = np.pad(x.data, ((pad, pad), (0, 0)))
    kd = k.data
    y = np.zeros((L, C), dtype=DTYPE)
    for j in range(kw):
        y += xp[j:j + L] * kd[:, j]

    def back(g):
        gk = np.empty_like(kd)
        gxp = np.zeros_like(xp)
        for j in range(kw):
            gk[:, j] = (xp[j:j + L] * g).sum(axis=0)
            gxp[j:j + L] += g * kd[:, j]
        return gxp[pad:pad + L], gk

    return make(y, (x, k), back)


def upsample_nearest2x(x: Tensor) -> Tensor:
    """[C,H,W] -> [C,2H,2W] by pixel replication."""
    x = as_tensor(x)
    C, H, W = x.shape
    y = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def back(g):
        return (g.reshape(C, H, 2, W, 2).sum(axis=(2, 4)),)

    return make(y, (x,), back)
