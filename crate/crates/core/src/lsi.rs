//! Log-Sobolev test-function ratios for measures on thickened planar curves.
//!
//! A [`CurveMeasure`] is the normalized restriction of `e^{-R}` (or of the
//! flat density when there is no tilt) to a union of segments, each
//! thickened into a rectangular tube. For a test function `f` that depends
//! only on arc length within each segment, the ratio
//! `Ent_μ(f²) / ∫‖∇f‖² dμ` lower-bounds the measure's LSI constant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::QuadraticPotential;
use crate::quadrature::integrate_1d;

pub const DEFAULT_THICKNESS: f64 = 1e-2;
const JOIN_TOL: f64 = 1e-12;
const PANELS: usize = 64;
const REL_TOL: f64 = 1e-12;
// 3-point Gauss–Legendre across the tube
const CROSS_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const CROSS_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub label: String,
    pub start: [f64; 2],
    pub end: [f64; 2],
}

impl Segment {
    pub fn new(label: &str, start: [f64; 2], end: [f64; 2]) -> Self {
        Segment {
            label: label.to_string(),
            start,
            end,
        }
    }

    pub fn length(&self) -> f64 {
        (self.end[0] - self.start[0]).hypot(self.end[1] - self.start[1])
    }

    fn tangent(&self) -> [f64; 2] {
        let l = self.length();
        [(self.end[0] - self.start[0]) / l, (self.end[1] - self.start[1]) / l]
    }

    /// Point at arc length `s` from `start`, displaced by `v` along the left normal.
    fn point(&self, s: f64, v: f64) -> [f64; 2] {
        let t = self.tangent();
        [self.start[0] + s * t[0] - v * t[1], self.start[1] + s * t[1] + v * t[0]]
    }
}

fn close(a: [f64; 2], b: [f64; 2]) -> bool {
    (a[0] - b[0]).abs() <= JOIN_TOL && (a[1] - b[1]).abs() <= JOIN_TOL
}

/// Density proportional to `e^{-R}` on a union of thickened segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMeasure {
    segments: Vec<Segment>,
    thickness: f64,
    tilt: Option<QuadraticPotential>,
    connected: bool,
}

impl CurveMeasure {
    /// Fails unless the segments form one connected set.
    pub fn new(segments: Vec<Segment>, thickness: f64, tilt: Option<QuadraticPotential>) -> Result<Self> {
        let m = Self::build(segments, thickness, tilt)?;
        if !m.connected {
            return Err(Error::Input("segments are disconnected; use new_disconnected".into()));
        }
        Ok(m)
    }

    /// Accepts a disconnected union, recording it.
    pub fn new_disconnected(segments: Vec<Segment>, thickness: f64, tilt: Option<QuadraticPotential>) -> Result<Self> {
        Self::build(segments, thickness, tilt)
    }

    fn build(segments: Vec<Segment>, thickness: f64, tilt: Option<QuadraticPotential>) -> Result<Self> {
        if segments.is_empty() || segments.iter().any(|s| !(s.length() > 0.0 && s.length().is_finite())) {
            return Err(Error::Input("every segment needs positive finite length".into()));
        }
        if !(thickness > 0.0 && thickness.is_finite()) {
            return Err(Error::Input(format!("thickness must be positive, got {thickness}")));
        }
        if let Some(r) = &tilt {
            if r.dim() != 2 {
                return Err(Error::DimensionMismatch {
                    expected: 2,
                    found: r.dim(),
                });
            }
        }
        let connected = Self::is_connected(&segments);
        Ok(CurveMeasure {
            segments,
            thickness,
            tilt,
            connected,
        })
    }

    fn is_connected(segments: &[Segment]) -> bool {
        let n = segments.len();
        let touches = |a: &Segment, b: &Segment| {
            [a.start, a.end]
                .iter()
                .any(|p| close(*p, b.start) || close(*p, b.end))
        };
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if !seen[j] && touches(&segments[i], &segments[j]) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn thickness(&self) -> f64 {
        self.thickness
    }

    pub fn tilt(&self) -> Option<&QuadraticPotential> {
        self.tilt.as_ref()
    }

    pub fn is_connected_set(&self) -> bool {
        self.connected
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(Segment::length).sum()
    }

    /// Same curve with a different tube width.
    pub fn with_thickness(&self, thickness: f64) -> Result<Self> {
        Self::build(self.segments.clone(), thickness, self.tilt.clone())
    }

    /// Same curve tilted by `e^{-R}`.
    pub fn tilted(&self, potential: QuadraticPotential) -> Result<Self> {
        Self::build(self.segments.clone(), self.thickness, Some(potential))
    }

    fn weight_at(&self, p: [f64; 2]) -> f64 {
        match &self.tilt {
            None => 1.0,
            Some(r) => (-r.potential(&p).expect("dimension checked at construction")).exp(),
        }
    }

    /// Tube cross-section average of the tilt weight at arc length `s`.
    fn line_weight(&self, seg: &Segment, s: f64) -> f64 {
        if self.tilt.is_none() {
            return 1.0;
        }
        let half = 0.5 * self.thickness;
        CROSS_NODES
            .iter()
            .zip(&CROSS_WEIGHTS)
            .map(|(v, w)| 0.5 * w * self.weight_at(seg.point(s, half * v)))
            .sum()
    }

    fn integrate_segment<F: Fn(f64) -> f64>(&self, seg: &Segment, f: F) -> f64 {
        integrate_1d(|s| self.line_weight(seg, s) * f(s), 0.0, seg.length(), PANELS, REL_TOL, 0.0)
    }

    /// `∫_segment e^{-R}` over the tube divided by its width: the unnormalized
    /// mass of segment `k`. Without a tilt this is the segment length.
    pub fn unnormalized_mass(&self, k: usize) -> f64 {
        self.unnormalized_mass_of(&self.segments[k])
    }

    fn normalizer(&self) -> f64 {
        (0..self.segments.len()).map(|k| self.unnormalized_mass(k)).sum()
    }

    /// Probability of each segment.
    pub fn segment_masses(&self) -> Vec<f64> {
        let z = self.normalizer();
        (0..self.segments.len()).map(|k| self.unnormalized_mass(k) / z).collect()
    }

    /// 2D density at `x`: zero off the tubes.
    pub fn density(&self, x: [f64; 2]) -> f64 {
        let half = 0.5 * self.thickness;
        let hit = self.segments.iter().any(|seg| {
            let t = seg.tangent();
            let (dx, dy) = (x[0] - seg.start[0], x[1] - seg.start[1]);
            let along = dx * t[0] + dy * t[1];
            let across = -dx * t[1] + dy * t[0];
            along >= 0.0 && along <= seg.length() && across.abs() <= half
        });
        if hit {
            self.weight_at(x) / (self.normalizer() * self.thickness)
        } else {
            0.0
        }
    }
}

/// Test function affine in arc length on each segment: `f = value + slope·s`
/// with `s` measured from the segment's start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub pieces: Vec<(f64, f64)>,
}

impl TestFunction {
    pub fn new(pieces: Vec<(f64, f64)>) -> Self {
        TestFunction { pieces }
    }

    /// Same constant on every one of `segments` pieces.
    pub fn constant(c: f64, segments: usize) -> Self {
        TestFunction::new(vec![(c, 0.0); segments])
    }

    pub fn scaled(&self, c: f64) -> Self {
        TestFunction::new(self.pieces.iter().map(|(v, s)| (c * v, c * s)).collect())
    }

    fn check(&self, mu: &CurveMeasure) -> Result<()> {
        if self.pieces.len() != mu.segments.len() {
            return Err(Error::DimensionMismatch {
                expected: mu.segments.len(),
                found: self.pieces.len(),
            });
        }
        if self.pieces.iter().any(|(v, s)| !(v.is_finite() && s.is_finite())) {
            return Err(Error::Input("test function pieces must be finite".into()));
        }
        Ok(())
    }
}

fn xlogx(v: f64) -> f64 {
    if v > 0.0 {
        v * v.ln()
    } else {
        0.0
    }
}

/// `Ent_μ(f²) / ∫‖∇f‖² dμ`.
pub fn lsi_ratio(mu: &CurveMeasure, f: &TestFunction) -> Result<f64> {
    f.check(mu)?;
    let z = mu.normalizer();
    let (mut m2, mut ent, mut energy) = (0.0, 0.0, 0.0);
    for (seg, &(v, slope)) in mu.segments.iter().zip(&f.pieces) {
        let value = |s: f64| v + slope * s;
        m2 += mu.integrate_segment(seg, |s| value(s).powi(2));
        ent += mu.integrate_segment(seg, |s| xlogx(value(s).powi(2)));
        energy += slope * slope * mu.unnormalized_mass_of(seg);
    }
    let (m2, ent, energy) = (m2 / z, ent / z, energy / z);
    if !(energy > 1e-300) || !(m2 > 0.0) {
        return Err(Error::DegenerateTestFunction);
    }
    Ok(((ent - xlogx(m2)) / energy).max(0.0))
}

impl CurveMeasure {
    fn unnormalized_mass_of(&self, seg: &Segment) -> f64 {
        self.integrate_segment(seg, |_| 1.0)
    }
}

/// Uniform measure on the segment `[-e^ℓ, e^ℓ] × {0}` and its tilt by
/// `e^{-x₁²}`, with the test function `f = x₁`.
pub fn segment_instance(l: f64) -> Result<(CurveMeasure, CurveMeasure, TestFunction)> {
    if !(l.is_finite() && l >= 1.0) {
        return Err(Error::Domain(format!("segment instance needs l >= 1, got {l}")));
    }
    let half = l.exp();
    let flat = CurveMeasure::new(
        vec![Segment::new("segment", [-half, 0.0], [half, 0.0])],
        DEFAULT_THICKNESS,
        None,
    )?;
    let tilt = QuadraticPotential::new(vec![vec![1.0, 0.0]], vec![0.0], 0.5)?;
    let tilted = flat.tilted(tilt)?;
    Ok((flat, tilted, TestFunction::new(vec![(-half, 1.0)])))
}

/// The three-segment U: legs `a` and `c` at `x₁ = ∓1` for `x₂ ∈ [0, ℓ]`,
/// joined by the bar `b` at height `ℓ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UShape {
    pub flat: CurveMeasure,
    pub tilted: CurveMeasure,
    /// `0` on `a`, `x₁ + 1` on `b`, `2` on `c`.
    pub test_function: TestFunction,
    pub tilted_ratio: f64,
    pub flat_ratio: f64,
}

/// Index of the bar within [`UShape`] segments.
pub const U_BAR: usize = 1;

/// Builds the U and its tilt by `e^{-‖x‖²/2}`.
pub fn u_shape_instance(l: f64) -> Result<UShape> {
    if !(l.is_finite() && l >= 2.0) {
        return Err(Error::Domain(format!("u-shape instance needs l >= 2, got {l}")));
    }
    let segments = vec![
        Segment::new("a", [-1.0, 0.0], [-1.0, l]),
        Segment::new("b", [-1.0, l], [1.0, l]),
        Segment::new("c", [1.0, l], [1.0, 0.0]),
    ];
    let flat = CurveMeasure::new(segments, DEFAULT_THICKNESS, None)?;
    let tilt = QuadraticPotential::isotropic(vec![0.0, 0.0], 1.0)?;
    let tilted = flat.tilted(tilt)?;
    let f = TestFunction::new(vec![(0.0, 0.0), (0.0, 1.0), (2.0, 0.0)]);
    let tilted_ratio = lsi_ratio(&tilted, &f)?;
    let flat_ratio = lsi_ratio(&flat, &f)?;
    Ok(UShape {
        flat,
        tilted,
        test_function: f,
        tilted_ratio,
        flat_ratio,
    })
}
