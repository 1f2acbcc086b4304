"""ctypes bridge to the optional native scan kernel.

The kernel is a C-ABI shared library exposing ``scan_forward`` and
``scan_backward`` over flat float32 buffers (see scan_kernel/README.md for
the exact layout).  When the library is absent everything falls back to the
reference scan, so the package has no hard native dependency.
"""

import ctypes
import os
from pathlib import Path

import numpy as np
import torch

from .scan import ScanParams, _check_shapes

_LIB_ENV = "CROWDCOUNT_SCAN_KERNEL"
_STATUS_MESSAGES = {
    1: "null buffer pointer",
    2: "inconsistent buffer lengths",
    3: "delta must be positive elementwise",
}

_lib = None
_load_attempted = False


def _candidate_paths():
    env = os.environ.get(_LIB_ENV)
    if env:
        yield Path(env)
    pkg_dir = Path(__file__).resolve().parent
    for root in (pkg_dir, pkg_dir.parents[1]):
        for sub in ("scan_kernel/target/release", "scan_kernel/target/debug"):
            for name in ("libscan_kernel.so", "libscan_kernel.dylib", "scan_kernel.dll"):
                yield root / sub / name


def _setup(lib):
    u64 = ctypes.c_uint64
    fp = ctypes.POINTER(ctypes.c_float)
    ip = ctypes.POINTER(ctypes.c_int32)
    common = [fp, u64] * 6 + [u64, u64, u64]
    lib.scan_forward.restype = None
    lib.scan_forward.argtypes = common + [fp, u64, ip]
    lib.scan_backward.restype = None
    lib.scan_backward.argtypes = common + [fp, u64] + [fp, u64] * 6 + [ip]
    return lib


def _load():
    global _lib, _load_attempted
    if _load_attempted:
        return _lib
    _load_attempted = True
    for path in _candidate_paths():
        if path.is_file():
            try:
                _lib = _setup(ctypes.CDLL(str(path)))
                return _lib
            except OSError:
                continue
    return None


def is_available() -> bool:
    return _load() is not None


def _buf(arr: np.ndarray):
    return (
        arr.ctypes.data_as(ctypes.POINTER(ctypes.c_float)),
        ctypes.c_uint64(arr.size),
    )


def _f32(t: torch.Tensor) -> np.ndarray:
    return np.ascontiguousarray(t.detach().cpu().numpy(), dtype=np.float32)


def _check_status(status):
    code = status.value
    if code != 0:
        raise RuntimeError(
            f"scan kernel error {code}: {_STATUS_MESSAGES.get(code, 'unknown')}"
        )


def _forward_single(lib, u, delta, b, c, a_diag, d):
    """One (L, C) sequence through the native kernel; all args float32."""
    L, C = u.shape
    N = b.shape[1]
    out = np.empty((L, C), dtype=np.float32)
    status = ctypes.c_int32(-1)
    lib.scan_forward(
        *_buf(u), *_buf(delta), *_buf(b), *_buf(c), *_buf(a_diag), *_buf(d),
        ctypes.c_uint64(L), ctypes.c_uint64(C), ctypes.c_uint64(N),
        *_buf(out), ctypes.byref(status),
    )
    _check_status(status)
    return out


def _backward_single(lib, u, delta, b, c, a_diag, d, grad_y):
    L, C = u.shape
    N = b.shape[1]
    gu = np.empty((L, C), dtype=np.float32)
    gdelta = np.empty((L, C), dtype=np.float32)
    gb = np.empty((L, N), dtype=np.float32)
    gc = np.empty((L, N), dtype=np.float32)
    ga = np.empty((C, N), dtype=np.float32)
    gd = np.empty((C,), dtype=np.float32)
    status = ctypes.c_int32(-1)
    lib.scan_backward(
        *_buf(u), *_buf(delta), *_buf(b), *_buf(c), *_buf(a_diag), *_buf(d),
        ctypes.c_uint64(L), ctypes.c_uint64(C), ctypes.c_uint64(N),
        *_buf(grad_y),
        *_buf(gu), *_buf(gdelta), *_buf(gb), *_buf(gc), *_buf(ga), *_buf(gd),
        ctypes.byref(status),
    )
    _check_status(status)
    return gu, gdelta, gb, gc, ga, gd


class _NativeScan(torch.autograd.Function):
    @staticmethod
    def forward(ctx, u, a_diag, b, c, delta, d):
        lib = _load()
        if lib is None:
            raise RuntimeError("native scan kernel not available")
        B, C, L = u.shape
        G = b.shape[1]
        cg = C // G
        y = torch.empty_like(u)
        for i in range(B):
            for g in range(G):
                ch = slice(g * cg, (g + 1) * cg)
                out = _forward_single(
                    lib,
                    _f32(u[i, ch].T),
                    _f32(delta[i, ch].T),
                    _f32(b[i, g].T),
                    _f32(c[i, g].T),
                    _f32(a_diag[ch]),
                    _f32(d[ch]),
                )
                y[i, ch] = torch.from_numpy(out.T.copy()).to(u.dtype)
        ctx.save_for_backward(u, a_diag, b, c, delta, d)
        return y

    @staticmethod
    def backward(ctx, grad_y):
        u, a_diag, b, c, delta, d = ctx.saved_tensors
        lib = _load()
        B, C, L = u.shape
        G = b.shape[1]
        cg = C // G
        gu = torch.zeros_like(u)
        gdelta = torch.zeros_like(delta)
        gb = torch.zeros_like(b)
        gc = torch.zeros_like(c)
        ga = torch.zeros_like(a_diag)
        gd = torch.zeros_like(d)
        for i in range(B):
            for g in range(G):
                ch = slice(g * cg, (g + 1) * cg)
                parts = _backward_single(
                    lib,
                    _f32(u[i, ch].T),
                    _f32(delta[i, ch].T),
                    _f32(b[i, g].T),
                    _f32(c[i, g].T),
                    _f32(a_diag[ch]),
                    _f32(d[ch]),
                    _f32(grad_y[i, ch].T),
                )
                pu, pdelta, pb, pc, pa, pd = (torch.from_numpy(p) for p in parts)
                gu[i, ch] = pu.T.to(u.dtype)
                gdelta[i, ch] = pdelta.T.to(u.dtype)
                gb[i, g] += pb.T.to(u.dtype)
                gc[i, g] += pc.T.to(u.dtype)
                ga[ch] += pa.to(u.dtype)
                gd[ch] += pd.to(u.dtype)
        return gu, ga, gb, gc, gdelta, gd


def selective_scan_native(u: torch.Tensor, p: ScanParams) -> torch.Tensor:
    """Drop-in replacement for the reference scan backed by the C kernel."""
    b, c = _check_shapes(u, p)
    if not torch.all(p.delta > 0):
        raise ValueError("delta must be positive elementwise")
    return _NativeScan.apply(u, p.a_diag, b, c, p.delta, p.d)
