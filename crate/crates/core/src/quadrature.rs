//! One-dimensional quadrature building blocks.

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess, refined by Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// A set of nodes with weights on the real line.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// Composite Gauss–Legendre with `panels` equal panels on `[a, b]`.
    pub fn composite_gauss(a: f64, b: f64, panels: usize, per_panel: usize) -> Self {
        let edges: Vec<f64> = (0..=panels)
            .map(|k| a + (b - a) * k as f64 / panels as f64)
            .collect();
        Self::gauss_on_edges(&edges, per_panel)
    }

    /// Gauss–Legendre with `per_panel` nodes on each consecutive pair of `edges`.
    pub fn gauss_on_edges(edges: &[f64], per_panel: usize) -> Self {
        let (gn, gw) = gauss_legendre(per_panel);
        let mut nodes = Vec::with_capacity((edges.len().saturating_sub(1)) * per_panel);
        let mut weights = Vec::with_capacity(nodes.capacity());
        for pair in edges.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (z, w) in gn.iter().zip(&gw) {
                nodes.push(mid + half * z);
                weights.push(half * w);
            }
        }
        Rule { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Panel edges on `[t, end]` shrinking geometrically toward `t`.
///
/// The first panel is `[t + (end-t)·ratio, end]`; each following panel is
/// `ratio` times the previous one and the last panel closes the gap to `t`.
pub fn geometric_edges(t: f64, end: f64, panels: usize, ratio: f64) -> Vec<f64> {
    assert!(panels >= 1);
    let len = end - t;
    let mut edges = Vec::with_capacity(panels + 1);
    edges.push(t);
    for k in (1..panels).rev() {
        edges.push(t + len * ratio.powi(k as i32));
    }
    edges.push(end);
    edges
}

/// Number of Simpson panels (always even, at least `min_panels`) for an
/// interval of length `len` at the given density.
pub fn simpson_panels(len: f64, per_unit: usize, min_panels: usize) -> usize {
    let raw = (len * per_unit as f64).ceil() as usize;
    let n = raw.max(min_panels).max(2);
    n + (n % 2)
}

/// Composite Simpson weights for `panels` (even) uniform panels of width `h`.
pub fn simpson_weights(panels: usize, h: f64) -> Vec<f64> {
    debug_assert!(panels.is_multiple_of(2) && panels >= 2);
    (0..=panels)
        .map(|k| {
            let c = if k == 0 || k == panels {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect()
}

/// Running cumulative integral of nodal values on a uniform Simpson grid.
///
/// Even nodes receive the Simpson pair update; odd nodes use the
/// three-point rule `h (5 f0 + 8 f1 - f2) / 12`. Both are exact for
/// quadratics. `values` is laid out node-major with `width` entries per node.
pub fn cumulative_simpson(values: &[f64], width: usize, h: f64) -> Vec<f64> {
    let nodes = values.len() / width;
    debug_assert!(nodes >= 3 && (nodes - 1).is_multiple_of(2));
    let mut out = vec![0.0; values.len()];
    let at = |k: usize, c: usize| values[k * width + c];
    let mut k = 0;
    while k + 2 < nodes {
        for c in 0..width {
            let base = out[k * width + c];
            out[(k + 1) * width + c] =
                base + h * (5.0 * at(k, c) + 8.0 * at(k + 1, c) - at(k + 2, c)) / 12.0;
            out[(k + 2) * width + c] =
                base + h * (at(k, c) + 4.0 * at(k + 1, c) + at(k + 2, c)) / 3.0;
        }
        k += 2;
    }
    out
}

/// Least-squares slope of `ys` against `xs`.
pub fn regression_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

/// Slope of `log(values)` against `log(scales)`.
pub fn log_log_slope(scales: &[f64], values: &[f64]) -> f64 {
    let lx: Vec<f64> = scales.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    regression_slope(&lx, &ly)
}
