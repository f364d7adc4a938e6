//! Adaptive Gauss–Kronrod quadrature on boxes of dimension one or two.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::GaussianMixture;

/// Half-width of the default integration box, in component standard deviations.
pub const DEFAULT_SD_SPAN: f64 = 12.0;
pub const DEFAULT_REL_TOL: f64 = 1e-8;
const MAX_INTERVALS: usize = 20_000;

// 15-point Kronrod extension of the 7-point Gauss rule, on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One G7/K15 panel: `(kronrod estimate, |kronrod - gauss|)`.
pub fn gauss_kronrod_15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

#[derive(PartialEq)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Globally adaptive integration of `f` over `[a, b]`, starting from
/// `panels` equal sub-intervals and bisecting the worst panel until the
/// summed error estimate drops below `max(abs_tol, rel_tol·|I|)`.
pub fn integrate_1d<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    panels: usize,
    rel_tol: f64,
    abs_tol: f64,
) -> f64 {
    let panels = panels.max(1);
    let width = (b - a) / panels as f64;
    let mut heap = BinaryHeap::with_capacity(panels * 4);
    let (mut total, mut total_err) = (0.0, 0.0);
    for i in 0..panels {
        let lo = a + width * i as f64;
        let hi = if i + 1 == panels { b } else { lo + width };
        let (value, err) = gauss_kronrod_15(&mut f, lo, hi);
        total += value;
        total_err += err;
        heap.push(Panel { a: lo, b: hi, value, err });
    }
    while total_err > abs_tol.max(rel_tol * total.abs()) && heap.len() < MAX_INTERVALS {
        let worst = heap.pop().expect("non-empty heap");
        let mid = 0.5 * (worst.a + worst.b);
        let (v1, e1) = gauss_kronrod_15(&mut f, worst.a, mid);
        let (v2, e2) = gauss_kronrod_15(&mut f, mid, worst.b);
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.err;
        heap.push(Panel { a: worst.a, b: mid, value: v1, err: e1 });
        heap.push(Panel { a: mid, b: worst.b, value: v2, err: e2 });
    }
    // re-sum to shed accumulated update rounding
    heap.into_iter().map(|p| p.value).sum()
}

/// Integration box with its starting resolution and tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    pub bounds: Vec<(f64, f64)>,
    /// Initial panels per axis before adaptive refinement.
    pub panels: usize,
    pub rel_tol: f64,
}

impl QuadratureGrid {
    pub fn new(bounds: Vec<(f64, f64)>, panels: usize, rel_tol: f64) -> Result<Self> {
        if bounds.is_empty() || bounds.len() > 2 {
            return Err(Error::Input(format!(
                "quadrature supports dimension 1 or 2, got {}",
                bounds.len()
            )));
        }
        if bounds.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
            return Err(Error::Input("quadrature bounds must be finite with lo < hi".into()));
        }
        Ok(QuadratureGrid {
            bounds,
            panels: panels.max(1),
            rel_tol,
        })
    }

    /// Box spanning every component mean ± 12 standard deviations.
    pub fn covering(p: &GaussianMixture) -> Result<Self> {
        Self::new(p.bounding_box(DEFAULT_SD_SPAN), 16, DEFAULT_REL_TOL)
    }

    /// Smallest box covering both mixtures.
    pub fn covering_pair(a: &GaussianMixture, b: &GaussianMixture) -> Result<Self> {
        let ba = a.bounding_box(DEFAULT_SD_SPAN);
        let bb = b.bounding_box(DEFAULT_SD_SPAN);
        let bounds = ba
            .iter()
            .zip(&bb)
            .map(|(x, y)| (x.0.min(y.0), x.1.max(y.1)))
            .collect();
        Self::new(bounds, 16, DEFAULT_REL_TOL)
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    /// Same box at twice the starting resolution.
    pub fn refined(&self) -> Self {
        QuadratureGrid {
            panels: self.panels * 2,
            ..self.clone()
        }
    }

    /// `∫ f` over the box.
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        let abs_tol = 1e-15;
        match self.bounds.as_slice() {
            [(a, b)] => integrate_1d(|x| f(&[x]), *a, *b, self.panels, self.rel_tol, abs_tol),
            [(ax, bx), (ay, by)] => {
                let inner_tol = self.rel_tol * 1e-2;
                integrate_1d(
                    |x| integrate_1d(|y| f(&[x, y]), *ay, *by, self.panels, inner_tol, abs_tol * 1e-2),
                    *ax,
                    *bx,
                    self.panels,
                    self.rel_tol,
                    abs_tol,
                )
            }
            _ => unreachable!("dimension validated at construction"),
        }
    }

    /// Fails with a coverage error if the box holds less than `1 - 1e-8` of `p`.
    pub fn check_coverage(&self, p: &GaussianMixture) -> Result<f64> {
        if p.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: p.dim(),
            });
        }
        let mass = self.integrate(|x| p.log_density_unchecked(x).exp());
        let missing = 1.0 - mass;
        if missing > 1e-8 {
            Err(Error::Coverage { missing_mass: missing })
        } else {
            Ok(mass)
        }
    }
}
