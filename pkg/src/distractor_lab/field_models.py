"""Static background models trained by masked squared error.

Both models map integer pixel coordinates ``(x, y)`` to RGB. ``GridModel``
stores one parameter triple per pixel. ``FourierModel`` is linear in a
separable truncated Fourier basis of order ``M``; its limited bandwidth makes
high-frequency texture converge slowly or not at all, which stands in for a
radiance field struggling with busy facades.
"""

from __future__ import annotations

import numpy as np

from . import checkpoint


def _check_coords(coords, width: int, height: int) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    x, y = coords[:, 0], coords[:, 1]
    if coords.size and (x.min() < 0 or y.min() < 0 or x.max() >= width or y.max() >= height):
        raise IndexError(f"coordinate outside {width}x{height} domain")
    return coords


def _cut(img: np.ndarray, origins, k: int) -> np.ndarray:
    return np.stack([img[y : y + k, x : x + k] for x, y in origins])


def _scatter(dout: np.ndarray, origins, k: int, shape) -> np.ndarray:
    g = np.zeros(tuple(shape) + dout.shape[3:])
    for (x, y), d in zip(origins, dout):
        g[y : y + k, x : x + k] += d
    return g


class GridModel:
    kind = "grid"

    def __init__(self, width: int, height: int, init: float = 0.5):
        self.width = width
        self.height = height
        self.params = np.full((height, width, 3), float(init))

    def raw(self, coords) -> np.ndarray:
        c = _check_coords(coords, self.width, self.height)
        return self.params[c[:, 1], c[:, 0]]

    def param_grad(self, coords, dout: np.ndarray) -> np.ndarray:
        c = _check_coords(coords, self.width, self.height)
        g = np.zeros_like(self.params)
        np.add.at(g, (c[:, 1], c[:, 0]), dout)
        return g

    def raw_full(self) -> np.ndarray:
        return self.params.copy()

    def raw_patches(self, origins, k: int) -> np.ndarray:
        return _cut(self.params, origins, k)

    def patch_grad(self, origins, k: int, dout: np.ndarray) -> np.ndarray:
        return _scatter(dout, origins, k, (self.height, self.width))

    def copy(self) -> "GridModel":
        m = GridModel(self.width, self.height)
        m.params = self.params.copy()
        return m

    def header(self) -> dict:
        return {"kind": self.kind, "width": self.width, "height": self.height}


class FourierModel:
    """RGB = coeffs . phi(x~, y~), phi the outer product of two 1-D bases.

    The 1-D basis is ``a_0, a_1 cos(2 pi x~), a_1 sin(2 pi x~), ...,
    a_M cos(2 pi M x~), a_M sin(2 pi M x~)`` with ``x~ = (x + 0.5) / width``
    and amplitudes ``a_m = (1 + m / spectral_scale) ** -0.5``. Under gradient
    descent a coefficient converges at a rate proportional to its squared
    amplitude, so fine detail is learned late. Feature ``(i, j)`` is
    ``basis_y[i] * basis_x[j]`` and ``coeffs`` has shape ``(2M+1, 2M+1, 3)``.
    """

    kind = "fourier"

    def __init__(self, width: int, height: int, order: int = 32,
                 spectral_scale: float = 8.0, init: float = 0.5):
        if order < 0:
            raise ValueError("order must be >= 0")
        if spectral_scale <= 0:
            raise ValueError("spectral_scale must be positive")
        self.width = width
        self.height = height
        self.order = order
        self.spectral_scale = float(spectral_scale)
        n = 2 * order + 1
        self.coeffs = np.zeros((n, n, 3))
        self.coeffs[0, 0] = init
        self._bx = basis_1d(order, width, spectral_scale)
        self._by = basis_1d(order, height, spectral_scale)

    @property
    def feature_dim(self) -> int:
        return (2 * self.order + 1) ** 2

    @property
    def params(self) -> np.ndarray:
        return self.coeffs

    @params.setter
    def params(self, value: np.ndarray) -> None:
        self.coeffs = value

    def raw(self, coords) -> np.ndarray:
        c = _check_coords(coords, self.width, self.height)
        px = self._bx[c[:, 0]]
        py = self._by[c[:, 1]]
        out = np.empty((len(c), 3))
        for ch in range(3):
            out[:, ch] = np.einsum("ni,ni->n", py @ self.coeffs[:, :, ch], px)
        return out

    def param_grad(self, coords, dout: np.ndarray) -> np.ndarray:
        c = _check_coords(coords, self.width, self.height)
        px = self._bx[c[:, 0]]
        py = self._by[c[:, 1]]
        g = np.empty_like(self.coeffs)
        for ch in range(3):
            g[:, :, ch] = (py * dout[:, ch : ch + 1]).T @ px
        return g

    def raw_full(self) -> np.ndarray:
        return np.einsum("yi,ijc,xj->yxc", self._by, self.coeffs, self._bx, optimize=True)

    def full_grad(self, dout: np.ndarray) -> np.ndarray:
        """Gradient for an upstream image ``dout`` of shape ``(H, W, 3)``."""
        return np.einsum("yi,yxc,xj->ijc", self._by, dout, self._bx, optimize=True)

    # patches are cut from (and scattered into) the full grid, which is cheaper
    # than per-patch bases at these image sizes
    def raw_patches(self, origins, k: int) -> np.ndarray:
        return _cut(self.raw_full(), origins, k)

    def patch_grad(self, origins, k: int, dout: np.ndarray) -> np.ndarray:
        return self.full_grad(_scatter(dout, origins, k, (self.height, self.width)))

    def copy(self) -> "FourierModel":
        m = FourierModel(self.width, self.height, self.order, self.spectral_scale)
        m.coeffs = self.coeffs.copy()
        return m

    def header(self) -> dict:
        return {"kind": self.kind, "width": self.width, "height": self.height,
                "order": self.order, "spectral_scale": self.spectral_scale}


def basis_1d(order: int, size: int, spectral_scale: float = 8.0) -> np.ndarray:
    t = (np.arange(size) + 0.5) / size
    cols = [np.ones(size)]
    for m in range(1, order + 1):
        a = (1.0 + m / spectral_scale) ** -0.5
        cols += [a * np.cos(2 * np.pi * m * t), a * np.sin(2 * np.pi * m * t)]
    return np.stack(cols, axis=1)


def model_forward(model, coords) -> np.ndarray:
    return np.clip(model.raw(coords), 0.0, 1.0)


def residuals(model, coords, targets: np.ndarray) -> np.ndarray:
    """Per-pixel squared L2 error summed over the three channels."""
    return ((model_forward(model, coords) - targets) ** 2).sum(axis=1)


def masked_loss_and_grad(model, coords, targets, d) -> tuple[float, np.ndarray]:
    """Mean of ``D * ||C_gt - C_pred||^2`` over included pixels and its gradient.

    The clamp passes gradient only where the raw output lies in [0, 1].
    """
    d = np.asarray(d)
    targets = np.asarray(targets, dtype=np.float64)
    if len(d) != len(targets) or len(d) != len(np.asarray(coords).reshape(-1, 2)):
        raise ValueError("coords, targets and d must have the same length")
    keep = d.astype(bool)
    n = int(keep.sum())
    if n == 0:
        return 0.0, np.zeros_like(model.params)
    c = np.asarray(coords).reshape(-1, 2)[keep]
    t = targets[keep]
    raw = model.raw(c)
    pred = np.clip(raw, 0.0, 1.0)
    diff = pred - t
    loss = float((diff**2).sum() / n)
    dout = (2.0 / n) * diff * ((raw >= 0.0) & (raw <= 1.0))
    return loss, model.param_grad(c, dout)


def masked_step(model, coords, targets, d, lr: float):
    """One in-place gradient-descent step; returns the model and the loss before the step."""
    loss, grad = masked_loss_and_grad(model, coords, targets, d)
    if np.any(np.asarray(d)):
        model.params = model.params - lr * grad
    return model, loss


def masked_patch_step(model, origins, k: int, targets: np.ndarray, d: np.ndarray, lr: float,
                      raw: np.ndarray | None = None):
    """``masked_step`` for a batch of ``k x k`` patches; ``targets`` is ``(P, k, k, 3)``.

    ``raw`` may pass in an already computed ``model.raw_patches``. Returns the
    model, the masked loss before the step and the pre-step residuals.
    """
    if raw is None:
        raw = model.raw_patches(origins, k)
    pred = np.clip(raw, 0.0, 1.0)
    diff = pred - targets
    res = (diff**2).sum(axis=3)
    keep = np.asarray(d).reshape(res.shape).astype(bool)
    n = int(keep.sum())
    if n == 0:
        return model, 0.0, res
    loss = float(res[keep].sum() / n)
    dout = (2.0 / n) * diff * ((raw >= 0.0) & (raw <= 1.0)) * keep[..., None]
    model.params = model.params - lr * model.patch_grad(origins, k, dout)
    return model, loss, res


def render_full(model, width: int | None = None, height: int | None = None) -> np.ndarray:
    width = model.width if width is None else width
    height = model.height if height is None else height
    if (width, height) != (model.width, model.height):
        raise ValueError("render size does not match the model domain")
    return np.clip(model.raw_full(), 0.0, 1.0)


def make_model(kind: str, width: int, height: int, order: int = 32, spectral_scale: float = 8.0):
    if kind == "grid":
        return GridModel(width, height)
    if kind == "fourier":
        return FourierModel(width, height, order, spectral_scale)
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    checkpoint.write(path, model.header(), [model.params])


def load_model(path):
    header, (params,) = checkpoint.read(path)
    model = make_model(header["kind"], header["width"], header["height"],
                       header.get("order", 32), header.get("spectral_scale", 8.0))
    model.params = params
    return model
