"""Input-dependent state-space recurrence (selective scan).

The reference implementation below is a plain sequential loop over the
sequence and serves as the ground truth for every other scan backend.
Discretization is zero-order hold for the state transition and Euler for the
input matrix: Abar_k = exp(delta_k * A), Bbar_k = delta_k * B_k, then

    h_k = Abar_k h_{k-1} + Bbar_k u_k        (h_0 = 0)
    y_k = C_k h_k + D u_k
"""

from dataclasses import dataclass

import torch


@dataclass
class ScanParams:
    """Parameters of one scan: diagonal state transition ``a_diag`` (C, N),
    skip ``d`` (C,), per-step ``delta`` (B, C, L) and per-step input/output
    matrices ``b``/``c`` of shape (B, N, L) or grouped (B, G, N, L) with the
    C channels split into G equal groups."""

    a_diag: torch.Tensor
    b: torch.Tensor
    c: torch.Tensor
    delta: torch.Tensor
    d: torch.Tensor


def _check_shapes(u: torch.Tensor, p: ScanParams):
    if u.ndim != 3:
        raise ValueError(f"u must be (B, C, L), got {tuple(u.shape)}")
    B, C, L = u.shape
    if p.delta.shape != (B, C, L):
        raise ValueError(f"delta shape {tuple(p.delta.shape)} != {(B, C, L)}")
    b = p.b if p.b.ndim == 4 else p.b.unsqueeze(1)
    c = p.c if p.c.ndim == 4 else p.c.unsqueeze(1)
    N = p.a_diag.shape[1]
    G = b.shape[1]
    if p.a_diag.shape != (C, N):
        raise ValueError(f"a_diag shape {tuple(p.a_diag.shape)} != {(C, N)}")
    if b.shape != (B, G, N, L) or c.shape != (B, G, N, L):
        raise ValueError("b/c must be (B, G, N, L) with matching shapes")
    if C % G != 0:
        raise ValueError(f"channels {C} not divisible by {G} groups")
    if p.d.shape != (C,):
        raise ValueError(f"d shape {tuple(p.d.shape)} != {(C,)}")
    return b, c


def selective_scan_reference(u: torch.Tensor, p: ScanParams) -> torch.Tensor:
    """Evaluate the recurrence step by step; returns y of shape (B, C, L)."""
    b, c = _check_shapes(u, p)
    if not torch.all(p.delta > 0):
        raise ValueError("delta must be positive elementwise")
    B, C, L = u.shape
    N = p.a_diag.shape[1]
    reps = C // b.shape[1]

    # Per-step quantities are precomputed; only the recurrence is sequential.
    dt = p.delta.permute(2, 0, 1)  # (L, B, C)
    ut = u.permute(2, 0, 1)  # (L, B, C)
    bt = b.permute(3, 0, 1, 2).repeat_interleave(reps, dim=2)  # (L, B, C, N)
    ct = c.permute(3, 0, 1, 2).repeat_interleave(reps, dim=2)  # (L, B, C, N)
    abar = torch.exp(dt.unsqueeze(-1) * p.a_diag)  # (L, B, C, N)
    x = (dt * ut).unsqueeze(-1) * bt  # (L, B, C, N)

    a_steps = abar.unbind(0)
    x_steps = x.unbind(0)
    h = u.new_zeros(B, C, N)
    states = []
    for t in range(L):
        h = a_steps[t] * h + x_steps[t]
        states.append(h)
    hs = torch.stack(states, 0)  # (L, B, C, N)

    y = (hs * ct).sum(-1) + p.d * ut  # (L, B, C)
    return y.permute(1, 2, 0)


def bench_scan(
    backend: str = "reference",
    length: int = 4096,
    channels: int = 32,
    state_dim: int = 8,
    repeats: int = 3,
    seed: int = 0,
) -> dict:
    """Time a forward scan; returns timings and throughput in steps/s."""
    import time

    fn = get_scan_fn(backend)
    g = torch.Generator().manual_seed(seed)
    u = torch.randn(1, channels, length, generator=g)
    p = ScanParams(
        a_diag=-torch.rand(channels, state_dim, generator=g) - 0.1,
        b=torch.randn(1, state_dim, length, generator=g),
        c=torch.randn(1, state_dim, length, generator=g),
        delta=torch.rand(1, channels, length, generator=g) * 0.1 + 0.01,
        d=torch.ones(channels),
    )
    fn(u, p)  # warmup
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(u, p)
        best = min(best, time.perf_counter() - t0)
    return {
        "backend": backend,
        "length": length,
        "channels": channels,
        "seconds": best,
        "steps_per_s": length / best,
    }


def get_scan_fn(backend: str = "reference"):
    """Return the scan callable for a backend name.

    ``native`` falls back to the reference scan (with a warning) when the
    shared library is not available.
    """
    if backend == "reference":
        return selective_scan_reference
    if backend == "native":
        from . import native

        if native.is_available():
            return native.selective_scan_native
        import warnings

        warnings.warn("native scan kernel not found; falling back to reference scan")
        return selective_scan_reference
    raise ValueError(f"unknown scan backend {backend!r}")
