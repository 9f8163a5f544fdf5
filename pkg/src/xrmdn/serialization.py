"""Binary model files and a readable parameter dump.

Layout, all little-endian::

    magic        4 bytes   b"XRMD" (full model) or b"RMDN" (classic RMDN)
    version      u32       1
    N, K, W      3 x u32   components, units, input width
    flags        u32       bit 0: weight/mean networks carry recurrent blocks
    xi, alpha    2 x f64   activation parameters
    parameters   f64[]     wrnn, mrnn, vrnn; per network in_w, in_b, rec_w,
                           rec_b, mix_w, mix_b (row-major)
    has_context  u32       0 or 1
    context      f64[]     norm mean, norm std, eta[N], mu[N], sigma2[N],
                           resid, last_input[W]   (only when has_context)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import ClassicRmdnModel
from .errors import ConfigError
from .mathkernel import ActivationConfig
from .model import RecurrentState, SubnetParams, XrmdnModel

VERSION = 1
_HEADER = struct.Struct("<4sIIIIIdd")
_KINDS = {XrmdnModel.MAGIC: XrmdnModel, ClassicRmdnModel.MAGIC: ClassicRmdnModel}


@dataclass(frozen=True)
class ModelContext:
    """What a trained model needs to keep forecasting past its training data.

    ``state`` is the recurrent state after the last training step and
    ``last_input`` the (normalized) input row of that step.
    """

    norm_mean: float
    norm_std: float
    state: RecurrentState
    last_input: np.ndarray


def _subnet_shapes(n: int, k: int, w: int, recurrent: bool):
    hidden = 2 * k if recurrent else k
    r = k if recurrent else 0
    return [(k, w), (k,), (r,), (r,), (n, hidden), (n,)]


def to_bytes(model: XrmdnModel, context: ModelContext | None = None) -> bytes:
    n, k, w = model.n_components, model.n_units, model.input_width
    parts = [
        _HEADER.pack(type(model).MAGIC, VERSION, n, k, w, int(model.wrnn.recurrent),
                     model.activation.xi, model.activation.alpha_elu),
        model.to_vector().astype("<f8").tobytes(),
    ]
    if context is None:
        parts.append(struct.pack("<I", 0))
    else:
        s = context.state
        ctx = np.concatenate([[context.norm_mean, context.norm_std], s.eta_prev, s.mu_prev,
                              s.sigma2_prev, [s.resid_prev], context.last_input])
        if ctx.size != 3 + 3 * n + w:
            raise ConfigError("context dimensions do not match the model")
        parts += [struct.pack("<I", 1), ctx.astype("<f8").tobytes()]
    return b"".join(parts)


def from_bytes(blob: bytes) -> tuple[XrmdnModel, ModelContext | None]:
    if len(blob) < _HEADER.size:
        raise ConfigError("model file truncated")
    magic, version, n, k, w, flags, xi, alpha = _HEADER.unpack_from(blob)
    if magic not in _KINDS:
        raise ConfigError(f"not a model file (magic {magic!r})")
    if version != VERSION:
        raise ConfigError(f"unsupported model file version {version}")
    recurrent = bool(flags & 1)
    shapes = (_subnet_shapes(n, k, w, recurrent) + _subnet_shapes(n, k, w, recurrent)
              + _subnet_shapes(n, k, 1, True))
    count = sum(int(np.prod(s)) for s in shapes)
    pos = _HEADER.size
    end = pos + 8 * count
    if len(blob) < end + 4:
        raise ConfigError("model file truncated")
    vec = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).astype(np.float64)
    blocks, i = [], 0
    for s in shapes:
        size = int(np.prod(s))
        blocks.append(vec[i:i + size].reshape(s).copy())
        i += size
    model = _KINDS[magic](
        wrnn=SubnetParams(*blocks[0:6]),
        mrnn=SubnetParams(*blocks[6:12]),
        vrnn=SubnetParams(*blocks[12:18]),
        activation=ActivationConfig(xi, alpha),
    )
    (has_ctx,) = struct.unpack_from("<I", blob, end)
    if not has_ctx:
        return model, None
    m = 3 + 3 * n + w
    if len(blob) < end + 4 + 8 * m:
        raise ConfigError("model file truncated in context block")
    c = np.frombuffer(blob, dtype="<f8", count=m, offset=end + 4).astype(np.float64)
    state = RecurrentState(c[2:2 + n], c[2 + n:2 + 2 * n], c[2 + 2 * n:2 + 3 * n], c[2 + 3 * n])
    return model, ModelContext(float(c[0]), float(c[1]), state, c[3 + 3 * n:].copy())


def save_model(path: str | Path, model: XrmdnModel, context: ModelContext | None = None) -> None:
    Path(path).write_bytes(to_bytes(model, context))


def load_model(path: str | Path) -> tuple[XrmdnModel, ModelContext | None]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{p}: no such model file")
    return from_bytes(p.read_bytes())


def export_text(model: XrmdnModel) -> str:
    """One ``name[index] = value`` line per parameter, for debugging."""
    lines = [
        f"# {type(model).MAGIC.decode()} v{VERSION} N={model.n_components} K={model.n_units} "
        f"W={model.input_width} xi={model.activation.xi!r} alpha_elu={model.activation.alpha_elu!r}"
    ]
    for sub in XrmdnModel.SUBNETS:
        for name, arr in getattr(model, sub).blocks():
            for idx in np.ndindex(arr.shape):
                lines.append(f"{sub}.{name}[{','.join(map(str, idx))}] = {float(arr[idx])!r}")
    return "\n".join(lines) + "\n"
