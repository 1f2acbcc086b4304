//! Native selective-scan kernel with a C-compatible ABI.
//!
//! One call processes a single sequence of length `len` with `channels`
//! input channels and `state_dim` states per channel.  The recurrence is
//!
//! ```text
//! abar[t]     = exp(delta[t] * a)          (per channel & state)
//! h[t]        = abar[t] * h[t-1] + delta[t] * b[t] * u[t]
//! y[t]        = sum_n c[t][n] * h[t][n] + d * u[t]
//! ```
//!
//! Buffer layout (all little-endian f32, row-major, time index outermost):
//!   u, delta, out, grad_y, grad_u, grad_delta : len * channels
//!   b, c, grad_b, grad_c                      : len * state_dim
//!   a_diag, grad_a                            : channels * state_dim
//!   d, grad_d                                 : channels
//!
//! Every function takes each buffer pointer with its element count and a
//! status out-parameter.  Status 0 means success; on any failure nothing is
//! written to the output buffers.  Arithmetic accumulates in f64.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

pub const STATUS_OK: i32 = 0;
pub const STATUS_NULL_POINTER: i32 = 1;
pub const STATUS_BAD_LENGTH: i32 = 2;
pub const STATUS_BAD_DELTA: i32 = 3;
pub const STATUS_PANIC: i32 = 4;

struct Dims {
    len: usize,
    channels: usize,
    state_dim: usize,
}

fn check_lengths(
    dims: &Dims,
    u_len: u64,
    delta_len: u64,
    b_len: u64,
    c_len: u64,
    a_len: u64,
    d_len: u64,
    out_len: u64,
) -> bool {
    let lc = (dims.len * dims.channels) as u64;
    let ln = (dims.len * dims.state_dim) as u64;
    let cn = (dims.channels * dims.state_dim) as u64;
    dims.len > 0
        && dims.channels > 0
        && dims.state_dim > 0
        && u_len == lc
        && delta_len == lc
        && out_len == lc
        && b_len == ln
        && c_len == ln
        && a_len == cn
        && d_len == dims.channels as u64
}

fn forward_impl(
    u: &[f32],
    delta: &[f32],
    b: &[f32],
    c: &[f32],
    a: &[f32],
    d: &[f32],
    dims: &Dims,
    out: &mut [f32],
) {
    let (l, ch_n, n) = (dims.len, dims.channels, dims.state_dim);
    let mut h = vec![0.0f64; ch_n * n];
    for t in 0..l {
        for ch in 0..ch_n {
            let dt = delta[t * ch_n + ch] as f64;
            let ut = u[t * ch_n + ch] as f64;
            let mut acc = d[ch] as f64 * ut;
            let hrow = &mut h[ch * n..(ch + 1) * n];
            for k in 0..n {
                let abar = (dt * a[ch * n + k] as f64).exp();
                hrow[k] = abar * hrow[k] + dt * b[t * n + k] as f64 * ut;
                acc += c[t * n + k] as f64 * hrow[k];
            }
            out[t * ch_n + ch] = acc as f32;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn backward_impl(
    u: &[f32],
    delta: &[f32],
    b: &[f32],
    c: &[f32],
    a: &[f32],
    d: &[f32],
    dims: &Dims,
    grad_y: &[f32],
    grad_u: &mut [f32],
    grad_delta: &mut [f32],
    grad_b: &mut [f32],
    grad_c: &mut [f32],
    grad_a: &mut [f32],
    grad_d: &mut [f32],
) {
    let (l, ch_n, n) = (dims.len, dims.channels, dims.state_dim);

    // recompute the state trajectory (the boundary stays stateless)
    let mut hs = vec![0.0f64; l * ch_n * n];
    {
        let mut h = vec![0.0f64; ch_n * n];
        for t in 0..l {
            for ch in 0..ch_n {
                let dt = delta[t * ch_n + ch] as f64;
                let ut = u[t * ch_n + ch] as f64;
                for k in 0..n {
                    let abar = (dt * a[ch * n + k] as f64).exp();
                    let idx = ch * n + k;
                    h[idx] = abar * h[idx] + dt * b[t * n + k] as f64 * ut;
                    hs[(t * ch_n + ch) * n + k] = h[idx];
                }
            }
        }
    }

    let mut gu = vec![0.0f64; l * ch_n];
    let mut gdelta = vec![0.0f64; l * ch_n];
    let mut gb = vec![0.0f64; l * n];
    let mut gc = vec![0.0f64; l * n];
    let mut ga = vec![0.0f64; ch_n * n];
    let mut gd = vec![0.0f64; ch_n];

    // carry[ch][k] = dL/dh_{t+1} * abar_{t+1}, walked backwards in time
    let mut carry = vec![0.0f64; ch_n * n];
    for t in (0..l).rev() {
        for ch in 0..ch_n {
            let g = grad_y[t * ch_n + ch] as f64;
            let dt = delta[t * ch_n + ch] as f64;
            let ut = u[t * ch_n + ch] as f64;
            gd[ch] += g * ut;
            gu[t * ch_n + ch] += g * d[ch] as f64;
            for k in 0..n {
                let idx = ch * n + k;
                let an = a[idx] as f64;
                let abar = (dt * an).exp();
                let gh = g * c[t * n + k] as f64 + carry[idx];
                let h_here = hs[(t * ch_n + ch) * n + k];
                let h_prev = if t == 0 {
                    0.0
                } else {
                    hs[((t - 1) * ch_n + ch) * n + k]
                };
                gc[t * n + k] += g * h_here;
                // through abar = exp(dt * a)
                let g_abar = gh * h_prev;
                ga[idx] += g_abar * dt * abar;
                gdelta[t * ch_n + ch] += g_abar * an * abar;
                // through the input term dt * b * u
                gdelta[t * ch_n + ch] += gh * b[t * n + k] as f64 * ut;
                gb[t * n + k] += gh * dt * ut;
                gu[t * ch_n + ch] += gh * dt * b[t * n + k] as f64;
                carry[idx] = gh * abar;
            }
        }
    }

    for (dst, src) in grad_u.iter_mut().zip(&gu) {
        *dst = *src as f32;
    }
    for (dst, src) in grad_delta.iter_mut().zip(&gdelta) {
        *dst = *src as f32;
    }
    for (dst, src) in grad_b.iter_mut().zip(&gb) {
        *dst = *src as f32;
    }
    for (dst, src) in grad_c.iter_mut().zip(&gc) {
        *dst = *src as f32;
    }
    for (dst, src) in grad_a.iter_mut().zip(&ga) {
        *dst = *src as f32;
    }
    for (dst, src) in grad_d.iter_mut().zip(&gd) {
        *dst = *src as f32;
    }
}

unsafe fn slice_in<'a>(ptr: *const f32, len: u64) -> Option<&'a [f32]> {
    if ptr.is_null() {
        None
    } else {
        Some(slice::from_raw_parts(ptr, len as usize))
    }
}

unsafe fn slice_out<'a>(ptr: *mut f32, len: u64) -> Option<&'a mut [f32]> {
    if ptr.is_null() {
        None
    } else {
        Some(slice::from_raw_parts_mut(ptr, len as usize))
    }
}

fn write_status(status: *mut i32, value: i32) {
    if !status.is_null() {
        unsafe { *status = value };
    }
}

/// # Safety
/// Pointers must reference buffers of at least the stated element counts.
#[no_mangle]
pub unsafe extern "C" fn scan_forward(
    u: *const f32,
    u_len: u64,
    delta: *const f32,
    delta_len: u64,
    b: *const f32,
    b_len: u64,
    c: *const f32,
    c_len: u64,
    a_diag: *const f32,
    a_len: u64,
    d: *const f32,
    d_len: u64,
    len: u64,
    channels: u64,
    state_dim: u64,
    out: *mut f32,
    out_len: u64,
    status: *mut i32,
) {
    let result = catch_unwind(AssertUnwindSafe(|| {
        let dims = Dims {
            len: len as usize,
            channels: channels as usize,
            state_dim: state_dim as usize,
        };
        let (Some(u), Some(delta), Some(b), Some(c), Some(a), Some(d), Some(out)) = (
            slice_in(u, u_len),
            slice_in(delta, delta_len),
            slice_in(b, b_len),
            slice_in(c, c_len),
            slice_in(a_diag, a_len),
            slice_in(d, d_len),
            slice_out(out, out_len),
        ) else {
            return STATUS_NULL_POINTER;
        };
        if !check_lengths(&dims, u_len, delta_len, b_len, c_len, a_len, d_len, out_len) {
            return STATUS_BAD_LENGTH;
        }
        if delta.iter().any(|v| !(*v > 0.0)) {
            return STATUS_BAD_DELTA;
        }
        forward_impl(u, delta, b, c, a, d, &dims, out);
        STATUS_OK
    }));
    write_status(status, result.unwrap_or(STATUS_PANIC));
}

/// # Safety
/// Pointers must reference buffers of at least the stated element counts.
#[no_mangle]
pub unsafe extern "C" fn scan_backward(
    u: *const f32,
    u_len: u64,
    delta: *const f32,
    delta_len: u64,
    b: *const f32,
    b_len: u64,
    c: *const f32,
    c_len: u64,
    a_diag: *const f32,
    a_len: u64,
    d: *const f32,
    d_len: u64,
    len: u64,
    channels: u64,
    state_dim: u64,
    grad_y: *const f32,
    grad_y_len: u64,
    grad_u: *mut f32,
    grad_u_len: u64,
    grad_delta: *mut f32,
    grad_delta_len: u64,
    grad_b: *mut f32,
    grad_b_len: u64,
    grad_c: *mut f32,
    grad_c_len: u64,
    grad_a: *mut f32,
    grad_a_len: u64,
    grad_d: *mut f32,
    grad_d_len: u64,
    status: *mut i32,
) {
    let result = catch_unwind(AssertUnwindSafe(|| {
        let dims = Dims {
            len: len as usize,
            channels: channels as usize,
            state_dim: state_dim as usize,
        };
        let (Some(u), Some(delta), Some(b), Some(c), Some(a), Some(d), Some(gy)) = (
            slice_in(u, u_len),
            slice_in(delta, delta_len),
            slice_in(b, b_len),
            slice_in(c, c_len),
            slice_in(a_diag, a_len),
            slice_in(d, d_len),
            slice_in(grad_y, grad_y_len),
        ) else {
            return STATUS_NULL_POINTER;
        };
        let (Some(gu), Some(gdelta), Some(gb), Some(gc), Some(ga), Some(gd)) = (
            slice_out(grad_u, grad_u_len),
            slice_out(grad_delta, grad_delta_len),
            slice_out(grad_b, grad_b_len),
            slice_out(grad_c, grad_c_len),
            slice_out(grad_a, grad_a_len),
            slice_out(grad_d, grad_d_len),
        ) else {
            return STATUS_NULL_POINTER;
        };
        if !check_lengths(
            &dims, u_len, delta_len, b_len, c_len, a_len, d_len, grad_y_len,
        ) || grad_u_len != u_len
            || grad_delta_len != delta_len
            || grad_b_len != b_len
            || grad_c_len != c_len
            || grad_a_len != a_len
            || grad_d_len != d_len
        {
            return STATUS_BAD_LENGTH;
        }
        if delta.iter().any(|v| !(*v > 0.0)) {
            return STATUS_BAD_DELTA;
        }
        backward_impl(
            u, delta, b, c, a, d, &dims, gy, gu, gdelta, gb, gc, ga, gd,
        );
        STATUS_OK
    }));
    write_status(status, result.unwrap_or(STATUS_PANIC));
}

#[cfg(test)]
mod tests;
