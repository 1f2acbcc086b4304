use super::*;

struct Case {
    len: usize,
    channels: usize,
    state_dim: usize,
    u: Vec<f32>,
    delta: Vec<f32>,
    b: Vec<f32>,
    c: Vec<f32>,
    a: Vec<f32>,
    d: Vec<f32>,
}

/// xorshift-based deterministic pseudo-random floats in (-1, 1)
struct Rng(u64);

impl Rng {
    fn next(&mut self) -> f32 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 as f64 / u64::MAX as f64 * 2.0 - 1.0) as f32
    }

    fn positive(&mut self) -> f32 {
        self.next().abs() * 0.4 + 0.01
    }
}

impl Case {
    fn random(seed: u64, len: usize, channels: usize, state_dim: usize) -> Self {
        let mut rng = Rng(seed.wrapping_mul(0x9E3779B97F4A7C15).max(1));
        let fill = |rng: &mut Rng, n: usize| (0..n).map(|_| rng.next()).collect::<Vec<_>>();
        Case {
            len,
            channels,
            state_dim,
            u: fill(&mut rng, len * channels),
            delta: (0..len * channels).map(|_| rng.positive()).collect(),
            b: fill(&mut rng, len * state_dim),
            c: fill(&mut rng, len * state_dim),
            a: (0..channels * state_dim)
                .map(|_| -rng.next().abs() - 0.05)
                .collect(),
            d: fill(&mut rng, channels),
        }
    }

    fn forward(&self) -> (Vec<f32>, i32) {
        let mut out = vec![0.0f32; self.len * self.channels];
        let mut status = -1i32;
        unsafe {
            scan_forward(
                self.u.as_ptr(),
                self.u.len() as u64,
                self.delta.as_ptr(),
                self.delta.len() as u64,
                self.b.as_ptr(),
                self.b.len() as u64,
                self.c.as_ptr(),
                self.c.len() as u64,
                self.a.as_ptr(),
                self.a.len() as u64,
                self.d.as_ptr(),
                self.d.len() as u64,
                self.len as u64,
                self.channels as u64,
                self.state_dim as u64,
                out.as_mut_ptr(),
                out.len() as u64,
                &mut status,
            );
        }
        (out, status)
    }

    #[allow(clippy::type_complexity)]
    fn backward(&self, grad_y: &[f32]) -> (Vec<f32>, Vec<f32>, Vec<f32>, Vec<f32>, Vec<f32>, Vec<f32>, i32) {
        let mut gu = vec![0.0f32; self.u.len()];
        let mut gdelta = vec![0.0f32; self.delta.len()];
        let mut gb = vec![0.0f32; self.b.len()];
        let mut gc = vec![0.0f32; self.c.len()];
        let mut ga = vec![0.0f32; self.a.len()];
        let mut gd = vec![0.0f32; self.d.len()];
        let mut status = -1i32;
        unsafe {
            scan_backward(
                self.u.as_ptr(),
                self.u.len() as u64,
                self.delta.as_ptr(),
                self.delta.len() as u64,
                self.b.as_ptr(),
                self.b.len() as u64,
                self.c.as_ptr(),
                self.c.len() as u64,
                self.a.as_ptr(),
                self.a.len() as u64,
                self.d.as_ptr(),
                self.d.len() as u64,
                self.len as u64,
                self.channels as u64,
                self.state_dim as u64,
                grad_y.as_ptr(),
                grad_y.len() as u64,
                gu.as_mut_ptr(),
                gu.len() as u64,
                gdelta.as_mut_ptr(),
                gdelta.len() as u64,
                gb.as_mut_ptr(),
                gb.len() as u64,
                gc.as_mut_ptr(),
                gc.len() as u64,
                ga.as_mut_ptr(),
                ga.len() as u64,
                gd.as_mut_ptr(),
                gd.len() as u64,
                &mut status,
            );
        }
        (gu, gdelta, gb, gc, ga, gd, status)
    }
}

/// Independent f64 evaluation of the same recurrence.
fn reference_f64(case: &Case) -> Vec<f64> {
    let (l, ch_n, n) = (case.len, case.channels, case.state_dim);
    let mut h = vec![0.0f64; ch_n * n];
    let mut out = vec![0.0f64; l * ch_n];
    for t in 0..l {
        for ch in 0..ch_n {
            let dt = case.delta[t * ch_n + ch] as f64;
            let ut = case.u[t * ch_n + ch] as f64;
            let mut acc = case.d[ch] as f64 * ut;
            for k in 0..n {
                let abar = (dt * case.a[ch * n + k] as f64).exp();
                let idx = ch * n + k;
                h[idx] = abar * h[idx] + dt * case.b[t * n + k] as f64 * ut;
                acc += case.c[t * n + k] as f64 * h[idx];
            }
            out[t * ch_n + ch] = acc;
        }
    }
    out
}

#[test]
fn passthrough_when_b_zero_d_one() {
    let mut case = Case::random(1, 12, 3, 2);
    case.b.iter_mut().for_each(|v| *v = 0.0);
    case.d.iter_mut().for_each(|v| *v = 1.0);
    let (out, status) = case.forward();
    assert_eq!(status, STATUS_OK);
    for (y, u) in out.iter().zip(&case.u) {
        assert!((y - u).abs() <= 1e-6);
    }
}

#[test]
fn single_step_closed_form() {
    let case = Case::random(2, 1, 2, 3);
    let (out, status) = case.forward();
    assert_eq!(status, STATUS_OK);
    for ch in 0..case.channels {
        let dt = case.delta[ch] as f64;
        let ut = case.u[ch] as f64;
        let mut expect = case.d[ch] as f64 * ut;
        for k in 0..case.state_dim {
            expect += case.c[k] as f64 * dt * case.b[k] as f64 * ut;
        }
        assert!((out[ch] as f64 - expect).abs() <= 1e-6);
    }
}

#[test]
fn forward_matches_f64_reference() {
    for seed in 0..200 {
        let case = Case::random(seed, 1 + (seed as usize % 16), 1 + (seed as usize % 3), 1 + (seed as usize % 4));
        let (out, status) = case.forward();
        assert_eq!(status, STATUS_OK);
        let expect = reference_f64(&case);
        for (y, e) in out.iter().zip(&expect) {
            assert!((*y as f64 - e).abs() <= 1e-5, "seed {seed}: {y} vs {e}");
        }
    }
}

#[test]
fn backward_zero_upstream_gives_zero_grads() {
    let case = Case::random(3, 8, 2, 2);
    let grad_y = vec![0.0f32; case.len * case.channels];
    let (gu, gdelta, gb, gc, ga, gd, status) = case.backward(&grad_y);
    assert_eq!(status, STATUS_OK);
    for v in gu.iter().chain(&gdelta).chain(&gb).chain(&gc).chain(&ga).chain(&gd) {
        assert_eq!(*v, 0.0);
    }
}

#[test]
fn backward_passthrough_gradient() {
    let mut case = Case::random(4, 10, 2, 2);
    case.b.iter_mut().for_each(|v| *v = 0.0);
    case.d.iter_mut().for_each(|v| *v = 1.0);
    let grad_y: Vec<f32> = (0..case.len * case.channels).map(|i| i as f32 * 0.1).collect();
    let (gu, _, _, _, _, _, status) = case.backward(&grad_y);
    assert_eq!(status, STATUS_OK);
    for (g, e) in gu.iter().zip(&grad_y) {
        assert!((g - e).abs() <= 1e-6);
    }
}

#[test]
fn backward_matches_finite_differences() {
    let case = Case::random(5, 6, 2, 3);
    let grad_y: Vec<f32> = (0..case.len * case.channels)
        .map(|i| ((i * 7 % 5) as f32 - 2.0) * 0.3)
        .collect();
    let (gu, gdelta, gb, gc, ga, gd, status) = case.backward(&grad_y);
    assert_eq!(status, STATUS_OK);

    let objective = |case: &Case| -> f64 {
        let expect = reference_f64(case);
        expect
            .iter()
            .zip(&grad_y)
            .map(|(y, g)| y * *g as f64)
            .sum()
    };

    let eps = 2e-3f32;
    let mut check = |field: &str, analytic: &[f32], get: &dyn Fn(&mut Case) -> &mut Vec<f32>| {
        let mut worst = 0.0f64;
        for i in 0..analytic.len() {
            let mut plus = Case { ..Case::random(5, 6, 2, 3) };
            get(&mut plus)[i] += eps;
            let mut minus = Case { ..Case::random(5, 6, 2, 3) };
            get(&mut minus)[i] -= eps;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * eps as f64);
            let a = analytic[i] as f64;
            let denom = a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max((a - numeric).abs() / denom);
        }
        assert!(worst <= 1e-3, "{field}: worst rel err {worst}");
    };

    check("u", &gu, &|c| &mut c.u);
    check("delta", &gdelta, &|c| &mut c.delta);
    check("b", &gb, &|c| &mut c.b);
    check("c", &gc, &|c| &mut c.c);
    check("a", &ga, &|c| &mut c.a);
    check("d", &gd, &|c| &mut c.d);
}

#[test]
fn length_inconsistency_rejected_without_write() {
    let case = Case::random(6, 4, 2, 2);
    let mut out = vec![7.0f32; case.len * case.channels];
    let mut status = -1i32;
    unsafe {
        scan_forward(
            case.u.as_ptr(),
            case.u.len() as u64 - 1, // wrong
            case.delta.as_ptr(),
            case.delta.len() as u64,
            case.b.as_ptr(),
            case.b.len() as u64,
            case.c.as_ptr(),
            case.c.len() as u64,
            case.a.as_ptr(),
            case.a.len() as u64,
            case.d.as_ptr(),
            case.d.len() as u64,
            case.len as u64,
            case.channels as u64,
            case.state_dim as u64,
            out.as_mut_ptr(),
            out.len() as u64,
            &mut status,
        );
    }
    assert_eq!(status, STATUS_BAD_LENGTH);
    assert!(out.iter().all(|v| *v == 7.0));
}

#[test]
fn null_pointer_rejected() {
    let case = Case::random(7, 4, 2, 2);
    let mut out = vec![0.0f32; case.len * case.channels];
    let mut status = -1i32;
    unsafe {
        scan_forward(
            std::ptr::null(),
            (case.len * case.channels) as u64,
            case.delta.as_ptr(),
            case.delta.len() as u64,
            case.b.as_ptr(),
            case.b.len() as u64,
            case.c.as_ptr(),
            case.c.len() as u64,
            case.a.as_ptr(),
            case.a.len() as u64,
            case.d.as_ptr(),
            case.d.len() as u64,
            case.len as u64,
            case.channels as u64,
            case.state_dim as u64,
            out.as_mut_ptr(),
            out.len() as u64,
            &mut status,
        );
    }
    assert_eq!(status, STATUS_NULL_POINTER);
}

#[test]
fn nonpositive_delta_rejected() {
    let mut case = Case::random(8, 4, 2, 2);
    case.delta[3] = 0.0;
    let (_, status) = case.forward();
    assert_eq!(status, STATUS_BAD_DELTA);
}
