//! Time-varying composite drift: background flow plus piecewise-constant
//! electric field (and, for prescribed test drifts, a piecewise-constant
//! velocity added directly).
//!
//! Every time integral here is closed form; quadrature only appears in tests.

use std::f64::consts::PI;
use std::io::Read;

use nalgebra::Vector3;

use crate::config::ScenarioConfig;
use crate::error::{FamcError, Result};

pub type Vec3 = Vector3<f64>;

/// Behaviour of a [`PiecewiseConstantField`] past its last breakpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extension {
    /// The last value persists forever.
    HoldLast,
    /// The last segment ends at `end`; the field is zero afterwards.
    Zero { end: f64 },
    /// The pattern on `[0, period)` repeats; the last segment runs to `period`.
    Periodic { period: f64 },
}

/// Piecewise-constant 3-vector signal on `t >= 0`, left-closed/right-open
/// segments. `breakpoints[k]` is the start of the segment carrying
/// `values[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstantField {
    breakpoints: Vec<f64>,
    values: Vec<Vec3>,
    extension: Extension,
    // ∫ over one period (periodic only)
    period_integral: Vec3,
}

impl PiecewiseConstantField {
    pub fn new(breakpoints: Vec<f64>, values: Vec<Vec3>, extension: Extension) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != values.len() {
            return Err(FamcError::InvalidArgument(format!(
                "need one value per segment: {} breakpoints, {} values",
                breakpoints.len(),
                values.len()
            )));
        }
        if breakpoints[0] != 0.0 {
            return Err(FamcError::InvalidArgument("first breakpoint must be 0".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) || breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(FamcError::InvalidArgument(
                "breakpoints must be finite and strictly ascending".into(),
            ));
        }
        if values.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(FamcError::InvalidArgument("field values must be finite".into()));
        }
        let last = *breakpoints.last().unwrap();
        match extension {
            Extension::HoldLast => {}
            Extension::Zero { end } | Extension::Periodic { period: end } => {
                if !(end > last) || !end.is_finite() {
                    return Err(FamcError::InvalidArgument(format!(
                        "extension end {end} must exceed the last breakpoint {last}"
                    )));
                }
            }
        }
        let mut field = PiecewiseConstantField {
            breakpoints,
            values,
            extension,
            period_integral: Vec3::zeros(),
        };
        if let Extension::Periodic { period } = extension {
            field.period_integral = field.base_integral(period);
        }
        Ok(field)
    }

    /// Constant value for all `t >= 0`.
    pub fn constant(value: Vec3) -> Self {
        Self::new(vec![0.0], vec![value], Extension::HoldLast).expect("valid constant field")
    }

    pub fn zero() -> Self {
        Self::constant(Vec3::zeros())
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[Vec3] {
        &self.values
    }

    pub fn extension(&self) -> Extension {
        self.extension
    }

    /// End of segment `k` within the base pattern (∞ for the held last segment).
    fn segment_end(&self, k: usize) -> f64 {
        match self.breakpoints.get(k + 1) {
            Some(&b) => b,
            None => match self.extension {
                Extension::HoldLast => f64::INFINITY,
                Extension::Zero { end } | Extension::Periodic { period: end } => end,
            },
        }
    }

    fn base_value(&self, t: f64) -> Vec3 {
        // index of last breakpoint <= t
        let k = self.breakpoints.partition_point(|&b| b <= t).saturating_sub(1);
        if t < self.segment_end(k) {
            self.values[k]
        } else {
            Vec3::zeros()
        }
    }

    /// ∫_0^t of the base pattern (no periodic wrap).
    fn base_integral(&self, t: f64) -> Vec3 {
        let mut acc = Vec3::zeros();
        for (k, (&start, v)) in self.breakpoints.iter().zip(&self.values).enumerate() {
            if start >= t {
                break;
            }
            let end = self.segment_end(k).min(t);
            acc += v * (end - start);
        }
        acc
    }

    pub fn value_at(&self, t: f64) -> Vec3 {
        match self.extension {
            Extension::Periodic { period } => self.base_value(t.rem_euclid(period)),
            _ => self.base_value(t),
        }
    }

    /// ∫_0^t value dτ, for t >= 0.
    pub fn integral(&self, t: f64) -> Vec3 {
        if t <= 0.0 {
            return Vec3::zeros();
        }
        match self.extension {
            Extension::Periodic { period } => {
                let n = (t / period).floor();
                let rem = t - n * period;
                self.period_integral * n + self.base_integral(rem)
            }
            _ => self.base_integral(t),
        }
    }

    /// Concrete segments `(start, end, value)` intersecting `[t0, t1]`, with
    /// periodic repetitions unrolled.
    pub fn segments_over(&self, t0: f64, t1: f64) -> Vec<(f64, f64, Vec3)> {
        let mut out = Vec::new();
        let (offset0, period) = match self.extension {
            Extension::Periodic { period } => ((t0 / period).floor() * period, Some(period)),
            _ => (0.0, None),
        };
        let mut offset = offset0;
        loop {
            for k in 0..self.values.len() {
                let s = offset + self.breakpoints[k];
                let e = offset + self.segment_end(k);
                let (a, b) = (s.max(t0), e.min(t1));
                if b > a {
                    out.push((a, b, self.values[k]));
                }
            }
            match period {
                Some(p) if offset + p < t1 => offset += p,
                _ => break,
            }
        }
        out
    }

    /// Breakpoint instants strictly inside `(a, b)`.
    pub fn breakpoints_in(&self, a: f64, b: f64) -> Vec<f64> {
        let mut pts: Vec<f64> = Vec::new();
        for (s, e, _) in self.segments_over(a, b) {
            for p in [s, e] {
                if p > a && p < b {
                    pts.push(p);
                }
            }
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// Largest segment magnitude.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Read the fixture CSV format `t_start_s, phi1_m_per_s, phi2_m_per_s,
    /// phi3_m_per_s` (hold-last extension).
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut bps = Vec::new();
        let mut vals = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 4 {
                return Err(FamcError::Parse(format!(
                    "expected 4 columns, found {}",
                    rec.len()
                )));
            }
            let nums: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let nums = nums.map_err(|e| FamcError::Parse(e.to_string()))?;
            bps.push(nums[0]);
            vals.push(Vec3::new(nums[1], nums[2], nums[3]));
        }
        Self::new(bps, vals, Extension::HoldLast)
    }

    /// The shipped arbitrary-drift benchmark: four 0.5 s segments, held after
    /// 1.5 s. Values are velocities in m/s.
    pub fn benchmark_drift() -> Self {
        Self::from_csv(BENCHMARK_DRIFT_CSV.as_bytes()).expect("fixture parses")
    }
}

pub const BENCHMARK_DRIFT_CSV: &str = include_str!("../fixtures/benchmark_drift.csv");

/// Energy ∫_{t0}^{t1} |E(τ)|² dτ, exact over segments.
pub fn field_energy(field: &PiecewiseConstantField, t0: f64, t1: f64) -> f64 {
    field
        .segments_over(t0, t1)
        .iter()
        .map(|(a, b, v)| v.norm_squared() * (b - a))
        .sum()
}

/// Periodic background flow u(t) = U_peak cos²(πt/T_d) along `axis`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundFlow {
    /// U_peak = μF_0, m/s.
    pub peak_speed: f64,
    pub period: f64,
    pub axis: Vec3,
}

impl BackgroundFlow {
    pub fn new(peak_speed: f64, period: f64, axis: Vec3) -> Result<Self> {
        if !(period > 0.0) {
            return Err(FamcError::InvalidArgument("flow period must be > 0".into()));
        }
        if (axis.norm() - 1.0).abs() > 1e-9 {
            return Err(FamcError::InvalidArgument("flow axis must have unit norm".into()));
        }
        Ok(BackgroundFlow {
            peak_speed,
            period,
            axis,
        })
    }

    pub fn from_force(mobility: f64, force_amplitude: f64, period: f64, axis: Vec3) -> Result<Self> {
        Self::new(mobility * force_amplitude, period, axis)
    }

    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        BackgroundFlow {
            peak_speed: cfg.flow_speed(),
            period: cfg.flow_period,
            axis: cfg.flow_axis,
        }
    }

    pub fn speed_at(&self, t: f64) -> f64 {
        let c = (PI * t / self.period).cos();
        self.peak_speed * c * c
    }

    /// ∫_0^t speed: U_peak (t/2 + T_d/(4π) sin(2πt/T_d)).
    pub fn distance(&self, t: f64) -> f64 {
        self.peak_speed * (0.5 * t + self.period / (4.0 * PI) * (2.0 * PI * t / self.period).sin())
    }

    pub fn velocity(&self, t: f64) -> Vec3 {
        self.axis * self.speed_at(t)
    }

    pub fn displacement(&self, t: f64) -> Vec3 {
        self.axis * self.distance(t)
    }
}

/// Φ(t) = u(t) + c_e E(t) + direct(t).
#[derive(Debug, Clone, PartialEq)]
pub struct DriftWaveform {
    pub flow: Option<BackgroundFlow>,
    /// Electric field, V/m.
    pub efield: Option<PiecewiseConstantField>,
    /// Electrophoretic mobility c_e, m²/(V·s).
    pub c_e: f64,
    /// Prescribed velocity added as is, m/s.
    pub direct: Option<PiecewiseConstantField>,
}

impl DriftWaveform {
    pub fn zero() -> Self {
        DriftWaveform {
            flow: None,
            efield: None,
            c_e: 0.0,
            direct: None,
        }
    }

    pub fn constant(v: Vec3) -> Self {
        Self::direct(PiecewiseConstantField::constant(v))
    }

    pub fn direct(field: PiecewiseConstantField) -> Self {
        DriftWaveform {
            direct: Some(field),
            ..Self::zero()
        }
    }

    /// Background flow and field taken from a scenario.
    pub fn from_config(cfg: &ScenarioConfig, efield: Option<PiecewiseConstantField>) -> Self {
        DriftWaveform {
            flow: Some(BackgroundFlow::from_config(cfg)),
            efield,
            c_e: cfg.electrophoretic_mobility,
            direct: None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.flow.map_or(true, |f| f.peak_speed == 0.0)
            && self
                .efield
                .as_ref()
                .map_or(true, |e| self.c_e == 0.0 || e.sup_norm() == 0.0)
            && self.direct.as_ref().map_or(true, |d| d.sup_norm() == 0.0)
    }

    pub fn drift_at(&self, t: f64) -> Vec3 {
        let mut v = Vec3::zeros();
        if let Some(f) = &self.flow {
            v += f.velocity(t);
        }
        if let Some(e) = &self.efield {
            v += e.value_at(t) * self.c_e;
        }
        if let Some(d) = &self.direct {
            v += d.value_at(t);
        }
        v
    }

    /// ∫_0^T Φ(α) dα; zero for T <= 0.
    pub fn cumulative_displacement(&self, t: f64) -> Vec3 {
        if t <= 0.0 {
            return Vec3::zeros();
        }
        let mut v = Vec3::zeros();
        if let Some(f) = &self.flow {
            v += f.displacement(t);
        }
        if let Some(e) = &self.efield {
            v += e.integral(t) * self.c_e;
        }
        if let Some(d) = &self.direct {
            v += d.integral(t);
        }
        v
    }

    /// Φ_eff(T) = (1/T) ∫_0^T Φ.
    pub fn effective_drift(&self, t: f64) -> Result<Vec3> {
        if !(t > 0.0) {
            return Err(FamcError::InvalidArgument(format!(
                "effective drift needs T > 0, got {t}"
            )));
        }
        Ok(self.cumulative_displacement(t) / t)
    }

    /// Upper bound on ‖Φ(t)‖ over all t.
    pub fn speed_bound(&self) -> f64 {
        let mut s = 0.0;
        if let Some(f) = &self.flow {
            s += f.peak_speed.abs();
        }
        if let Some(e) = &self.efield {
            s += self.c_e.abs() * e.sup_norm();
        }
        if let Some(d) = &self.direct {
            s += d.sup_norm();
        }
        s
    }

    /// Discontinuities of Φ inside `(a, b)`.
    pub fn breakpoints_in(&self, a: f64, b: f64) -> Vec<f64> {
        let mut pts = Vec::new();
        if let Some(e) = &self.efield {
            pts.extend(e.breakpoints_in(a, b));
        }
        if let Some(d) = &self.direct {
            pts.extend(d.breakpoints_in(a, b));
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, QuadOptions};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn quad(f: impl Fn(f64) -> f64, a: f64, b: f64, breaks: &[f64]) -> f64 {
        // Independent oracle: composite Simpson on each smooth piece.
        let mut edges = vec![a];
        edges.extend(breaks.iter().copied().filter(|&p| p > a && p < b));
        edges.push(b);
        let n = 2000;
        edges
            .windows(2)
            .map(|w| {
                let h = (w[1] - w[0]) / n as f64;
                let eps = h * 1e-9;
                let g = |x: f64| f(x.clamp(w[0] + eps, w[1] - eps));
                let mut s = g(w[0]) + g(w[1]);
                for i in 1..n {
                    let x = w[0] + h * i as f64;
                    s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(x);
                }
                s * h / 3.0
            })
            .sum()
    }

    fn flow_x() -> BackgroundFlow {
        BackgroundFlow::from_force(1.77e11, 4.18e-15, 1.0, Vec3::x()).unwrap()
    }

    #[test]
    fn zero_waveform() {
        let w = DriftWaveform::zero();
        assert_eq!(w.drift_at(0.37), Vec3::zeros());
        assert_eq!(w.effective_drift(1.3).unwrap(), Vec3::zeros());
        assert_eq!(w.cumulative_displacement(0.0), Vec3::zeros());
        assert!(w.is_zero());
    }

    #[test]
    fn flow_vanishes_at_half_period() {
        let w = DriftWaveform {
            flow: Some(flow_x()),
            ..DriftWaveform::zero()
        };
        assert!(w.drift_at(0.5).norm() < 1e-20);
        assert_relative_eq!(w.drift_at(0.0).x, 1.77e11 * 4.18e-15);
    }

    #[test]
    fn flow_average_over_one_period() {
        let f = flow_x();
        let w = DriftWaveform {
            flow: Some(f),
            ..DriftWaveform::zero()
        };
        let eff = w.effective_drift(1.0).unwrap();
        let oracle = integrate(|t| f.speed_at(t), 0.0, 1.0, &[], QuadOptions {
            abs_tol: 1e-22,
            rel_tol: 1e-14,
            max_subintervals: 1000,
        })
        .unwrap()
        .value;
        assert_relative_eq!(eff.x, f.peak_speed / 2.0, max_relative = 1e-12);
        assert_relative_eq!(eff.x, oracle, max_relative = 1e-12);
        assert_eq!(eff.y, 0.0);
    }

    #[test]
    fn benchmark_fixture_values() {
        let w = DriftWaveform::direct(PiecewiseConstantField::benchmark_drift());
        assert_relative_eq!(w.drift_at(0.0).x, 4.17e-6, max_relative = 1e-15);
        assert_relative_eq!(w.drift_at(0.4999).x, 4.17e-6, max_relative = 1e-15);
        assert_relative_eq!(w.drift_at(0.5).x, 7.203e-6, max_relative = 1e-15);
        assert_relative_eq!(w.drift_at(7.0).z, 6.852e-6, max_relative = 1e-15);
        let eff = w.effective_drift(1.0).unwrap();
        assert_relative_eq!(eff.x, 5.6865e-6, max_relative = 1e-12);
        let oracle = quad(|t| w.drift_at(t).x, 0.0, 1.0, &[0.5]);
        assert_relative_eq!(eff.x, oracle, max_relative = 1e-10);
    }

    #[test]
    fn benchmark_cumulative_displacement() {
        let w = DriftWaveform::direct(PiecewiseConstantField::benchmark_drift());
        let d = w.cumulative_displacement(2.0);
        let want = Vec3::new(
            0.5 * (4.17e-6 + 7.203e-6 + 0.001e-6 + 3.023e-6),
            0.5 * (1.468e-6 + 0.923e-6 + 1.863e-6 + 3.456e-6),
            0.5 * (3.968e-6 + 5.388e-6 + 4.192e-6 + 6.852e-6),
        );
        for axis in 0..3 {
            let oracle = quad(|t| w.drift_at(t)[axis], 0.0, 2.0, &[0.5, 1.0, 1.5]);
            assert_relative_eq!(d[axis], want[axis], max_relative = 1e-12);
            assert_relative_eq!(d[axis], oracle, max_relative = 1e-10);
        }
    }

    #[test]
    fn constant_drift_displacement() {
        let v = Vec3::new(1e-5, -2e-6, 3e-7);
        let w = DriftWaveform::constant(v);
        let d = w.cumulative_displacement(3.5);
        assert_relative_eq!((d - v * 3.5).norm(), 0.0, epsilon = 1e-20);
    }

    #[test]
    fn effective_drift_rejects_nonpositive_time() {
        assert!(DriftWaveform::zero().effective_drift(0.0).is_err());
        assert!(DriftWaveform::zero().effective_drift(-1.0).is_err());
    }

    #[test]
    fn energy_of_two_phase_field() {
        let e = PiecewiseConstantField::new(
            vec![0.0, 0.1, 1.6],
            vec![Vec3::x() * 3.0, Vec3::zeros(), Vec3::x() * -4.0],
            Extension::Periodic { period: 2.0 },
        )
        .unwrap();
        assert_relative_eq!(field_energy(&e, 0.0, 2.0), 7.3, max_relative = 1e-14);
        let riemann = {
            let n = 200_000;
            let h = 2.0 / n as f64;
            (0..n)
                .map(|i| e.value_at((i as f64 + 0.5) * h).norm_squared() * h)
                .sum::<f64>()
        };
        assert_relative_eq!(riemann, 7.3, max_relative = 1e-9);
        // second period identical
        assert_relative_eq!(field_energy(&e, 2.0, 4.0), 7.3, max_relative = 1e-14);
    }

    #[test]
    fn energy_of_constant_and_zero() {
        assert_eq!(field_energy(&PiecewiseConstantField::zero(), 0.0, 2.0), 0.0);
        let c = PiecewiseConstantField::constant(Vec3::x() * 5.0);
        assert_relative_eq!(field_energy(&c, 0.0, 2.0), 50.0);
    }

    #[test]
    fn periodic_and_zero_extensions() {
        let p = PiecewiseConstantField::new(
            vec![0.0, 0.25],
            vec![Vec3::x(), Vec3::x() * 2.0],
            Extension::Periodic { period: 1.0 },
        )
        .unwrap();
        assert_eq!(p.value_at(1.1).x, 1.0);
        assert_eq!(p.value_at(1.25).x, 2.0);
        assert_relative_eq!(p.integral(2.5).x, 2.0 * 1.75 + 0.25 + 0.5, max_relative = 1e-14);
        let z = PiecewiseConstantField::new(vec![0.0], vec![Vec3::y()], Extension::Zero { end: 1.0 }).unwrap();
        assert_eq!(z.value_at(0.999).y, 1.0);
        assert_eq!(z.value_at(1.0).y, 0.0);
        assert_relative_eq!(z.integral(5.0).y, 1.0);
        assert_eq!(p.breakpoints_in(0.0, 2.0), vec![0.25, 1.0, 1.25]);
    }

    #[test]
    fn rejects_malformed_fields() {
        assert!(PiecewiseConstantField::new(vec![0.1], vec![Vec3::x()], Extension::HoldLast).is_err());
        assert!(PiecewiseConstantField::new(
            vec![0.0, 0.0],
            vec![Vec3::x(), Vec3::y()],
            Extension::HoldLast
        )
        .is_err());
        assert!(PiecewiseConstantField::new(vec![0.0], vec![], Extension::HoldLast).is_err());
        assert!(PiecewiseConstantField::new(
            vec![0.0, 1.0],
            vec![Vec3::x(), Vec3::y()],
            Extension::Periodic { period: 1.0 }
        )
        .is_err());
    }

    fn arb_field() -> impl Strategy<Value = PiecewiseConstantField> {
        (1usize..6, any::<u64>(), 0usize..3).prop_map(|(n, seed, ext)| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut bps = vec![0.0];
            for _ in 1..n {
                let last = *bps.last().unwrap();
                bps.push(last + rng.gen_range(0.05..0.7));
            }
            let vals = (0..n)
                .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let end = bps.last().unwrap() + rng.gen_range(0.05..0.5);
            let extension = match ext {
                0 => Extension::HoldLast,
                1 => Extension::Zero { end },
                _ => Extension::Periodic { period: end },
            };
            PiecewiseConstantField::new(bps, vals, extension).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn effective_drift_matches_quadrature(
            field in arb_field(),
            c_e in 0.1f64..3.0,
            peak in 0.0f64..2.0,
            period in 0.3f64..2.0,
            t in 0.05f64..4.0,
        ) {
            let w = DriftWaveform {
                flow: Some(BackgroundFlow::new(peak, period, Vec3::new(0.6, 0.0, 0.8)).unwrap()),
                efield: Some(field),
                c_e,
                direct: None,
            };
            let eff = w.effective_drift(t).unwrap();
            let breaks = w.breakpoints_in(0.0, t);
            for axis in 0..3 {
                let oracle = integrate(|s| w.drift_at(s)[axis], 0.0, t, &breaks, QuadOptions {
                    abs_tol: 1e-15, rel_tol: 1e-14, max_subintervals: 5000,
                }).unwrap().value / t;
                let scale = eff.norm().max(1e-3);
                prop_assert!((eff[axis] - oracle).abs() <= 1e-10 * scale,
                    "axis {} eff {} oracle {}", axis, eff[axis], oracle);
            }
        }

        #[test]
        fn effective_drift_is_linear(f1 in arb_field(), f2 in arb_field(), t in 0.05f64..4.0) {
            let flow = BackgroundFlow::new(0.7, 0.9, Vec3::x()).unwrap();
            let w1 = DriftWaveform { flow: Some(flow), efield: None, c_e: 2.0, direct: Some(f1.clone()) };
            let w2 = DriftWaveform { flow: None, efield: Some(f2.clone()), c_e: 2.0, direct: None };
            let both = DriftWaveform { flow: Some(flow), efield: Some(f2), c_e: 2.0, direct: Some(f1) };
            let lhs = both.effective_drift(t).unwrap();
            let rhs = w1.effective_drift(t).unwrap() + w2.effective_drift(t).unwrap();
            prop_assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + lhs.norm()));
        }

        #[test]
        fn energy_invariant_under_splitting(field in arb_field(), cut in 0.0f64..1.0, tb in 0.5f64..3.0) {
            // Refine one segment at an interior point without changing values.
            let bps = field.breakpoints().to_vec();
            let k = bps.len() - 1;
            let seg_end = match field.extension() {
                Extension::HoldLast => bps[k] + 1.0,
                Extension::Zero { end } | Extension::Periodic { period: end } => end,
            };
            let split = bps[k] + cut.clamp(0.01, 0.99) * (seg_end - bps[k]);
            let mut nb = bps.clone();
            nb.push(split);
            let mut nv = field.values().to_vec();
            nv.push(*nv.last().unwrap());
            let refined = PiecewiseConstantField::new(nb, nv, field.extension()).unwrap();
            let a = field_energy(&field, 0.0, tb);
            let b = field_energy(&refined, 0.0, tb);
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
        }
    }
}
