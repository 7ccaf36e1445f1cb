//! Adaptive composite Gauss-Legendre quadrature, tensorised up to three axes.

/// Value of an integral together with the quadrature error estimate that the
/// adaptive driver accumulated while computing it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
}

impl QuadResult {
    pub fn new(value: f64, error: f64) -> Self {
        Self { value, error }
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the Legendre polynomial recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess for the i-th root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_eval(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        let (_, d) = legendre_eval(n, 0.0);
        weights[n / 2] = 2.0 / (d * d);
    }
    (nodes, weights)
}

/// Legendre polynomial P_n and derivative P_n' at x via the three-term recurrence.
fn legendre_eval(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

const GL_ORDER: usize = 16;

thread_local! {
    static GL16: (Vec<f64>, Vec<f64>) = gauss_legendre(GL_ORDER);
}

fn gl_panel(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    GL16.with(|(nodes, weights)| {
        let c = 0.5 * (a + b);
        let r = 0.5 * (b - a);
        let mut s = 0.0;
        for (x, w) in nodes.iter().zip(weights) {
            s += w * f(c + r * x);
        }
        s * r
    })
}

/// Adaptive panel-splitting driver. The error indicator for a panel is the
/// difference between one 16-point rule and the sum of two half-panel rules.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> QuadResult {
    let f: &dyn Fn(f64) -> f64 = &f;
    let whole = gl_panel(f, a, b);
    let mut value = 0.0;
    let mut error = 0.0;
    // Explicit stack of (a, b, coarse estimate, depth).
    let mut stack = vec![(a, b, whole, 0u32)];
    let scale = whole.abs().max(1.0);
    while let Some((lo, hi, coarse, depth)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = gl_panel(f, lo, mid);
        let right = gl_panel(f, mid, hi);
        let fine = left + right;
        let err = (fine - coarse).abs();
        if err < tol * scale * 0.5_f64.powi(depth.min(40) as i32) || depth >= 48 {
            value += fine;
            error += err;
        } else {
            stack.push((lo, mid, left, depth + 1));
            stack.push((mid, hi, right, depth + 1));
        }
    }
    QuadResult::new(value, error)
}

/// Two-dimensional tensor integral over a rectangle, iterated adaptively.
pub fn integrate_2d(
    f: impl Fn(f64, f64) -> f64 + Sync,
    ax: (f64, f64),
    ay: (f64, f64),
    tol: f64,
) -> QuadResult {
    let mut inner_err: f64 = 0.0;
    let err_cell = std::cell::Cell::new(0.0f64);
    let outer = integrate(
        |x| {
            let r = integrate(|y| f(x, y), ay.0, ay.1, tol);
            err_cell.set(err_cell.get().max(r.error));
            r.value
        },
        ax.0,
        ax.1,
        tol,
    );
    inner_err = inner_err.max(err_cell.get());
    QuadResult::new(outer.value, outer.error + inner_err * (ax.1 - ax.0))
}

/// Three-dimensional tensor integral over a box, iterated adaptively.
pub fn integrate_3d(
    f: impl Fn(f64, f64, f64) -> f64 + Sync,
    ax: (f64, f64),
    ay: (f64, f64),
    az: (f64, f64),
    tol: f64,
) -> QuadResult {
    let err_cell = std::cell::Cell::new(0.0f64);
    let outer = integrate(
        |x| {
            let r = integrate_2d(|y, z| f(x, y, z), ay, az, tol);
            err_cell.set(err_cell.get().max(r.error));
            r.value
        },
        ax.0,
        ax.1,
        tol,
    );
    QuadResult::new(
        outer.value,
        outer.error + err_cell.get() * (ax.1 - ax.0),
    )
}
