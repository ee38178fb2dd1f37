//! Synthetic spines and the Cobb-angle measurement oracle.
//!
//! A spine is 17 vertebrae (thoracic and lumbar), each a quadrilateral with
//! corners ordered top-left, top-right, bottom-left, bottom-right, in image
//! coordinates (`h` to the right, `v` downward). The flattened label layout is
//! `[h_1..h_68, v_1..v_68, TA, MA, BA]`.
//!
//! Cobb angles follow the most-tilted-vertebra rule: the main angle MA is the
//! largest slope difference over all vertebra pairs `(i*, j*)`; TA is the
//! largest difference between `i*` and any vertebra above it, and BA the
//! largest difference between `j*` and any vertebra below it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VERTEBRAE: usize = 17;
pub const CORNERS: usize = 4;
pub const LANDMARKS: usize = VERTEBRAE * CORNERS;
/// Length of the joint label vector, `2c + 3` with `c = 68`.
pub const LABEL_LEN: usize = 2 * LANDMARKS + 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub h: f64,
    pub v: f64,
}

impl Point {
    pub const fn new(h: f64, v: f64) -> Self {
        Self { h, v }
    }
}

/// Corners of one vertebra: top-left, top-right, bottom-left, bottom-right.
pub type Vertebra = [Point; CORNERS];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CobbAngles {
    pub ta: f64,
    pub ma: f64,
    pub ba: f64,
}

impl CobbAngles {
    pub fn as_array(&self) -> [f64; 3] {
        [self.ta, self.ma, self.ba]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpineAnnotation {
    pub vertebrae: Vec<Vertebra>,
    pub angles: CobbAngles,
}

impl SpineAnnotation {
    /// `[h_1..h_68, v_1..v_68, TA, MA, BA]`.
    pub fn to_label_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(LABEL_LEN);
        out.extend(self.vertebrae.iter().flatten().map(|p| p.h));
        out.extend(self.vertebrae.iter().flatten().map(|p| p.v));
        out.extend(self.angles.as_array());
        out
    }

    pub fn from_label_vector(values: &[f64]) -> Result<Self> {
        if values.len() != LABEL_LEN {
            return Err(Error::Shape(format!(
                "label vector must have {LABEL_LEN} entries, got {}",
                values.len()
            )));
        }
        let vertebrae = landmarks_from_labels(values)?;
        Ok(Self {
            vertebrae,
            angles: CobbAngles {
                ta: values[2 * LANDMARKS],
                ma: values[2 * LANDMARKS + 1],
                ba: values[2 * LANDMARKS + 2],
            },
        })
    }
}

/// Unpacks the landmark block of a joint label vector.
pub fn landmarks_from_labels(values: &[f64]) -> Result<Vec<Vertebra>> {
    if values.len() < 2 * LANDMARKS {
        return Err(Error::Shape(format!(
            "need {} landmark coordinates, got {}",
            2 * LANDMARKS,
            values.len()
        )));
    }
    let (hs, vs) = values[..2 * LANDMARKS].split_at(LANDMARKS);
    Ok((0..VERTEBRAE)
        .map(|k| std::array::from_fn(|c| Point::new(hs[k * CORNERS + c], vs[k * CORNERS + c])))
        .collect())
}

fn edge_angle(a: Point, b: Point) -> Result<f64> {
    let dh = b.h - a.h;
    let dv = b.v - a.v;
    if dh.hypot(dv) < 1e-12 {
        return Err(Error::Geometry("coincident vertebra corners".into()));
    }
    let mut deg = dv.atan2(dh).to_degrees();
    // an edge is an undirected line
    if deg > 90.0 {
        deg -= 180.0;
    } else if deg <= -90.0 {
        deg += 180.0;
    }
    Ok(deg)
}

/// Tilt of a vertebra versus the horizontal: the mean of its top-edge and
/// bottom-edge angles, in degrees.
pub fn vertebra_slope(corners: &Vertebra) -> Result<f64> {
    let [tl, tr, bl, br] = *corners;
    let top = edge_angle(tl, tr)?;
    let bottom = edge_angle(bl, br)?;
    Ok(0.5 * (top + bottom))
}

/// Main/top/bottom Cobb angles from 17 vertebrae ordered top to bottom.
pub fn cobb_from_landmarks(vertebrae: &[Vertebra]) -> Result<CobbAngles> {
    if vertebrae.len() != VERTEBRAE {
        return Err(Error::Shape(format!(
            "Cobb measurement needs {VERTEBRAE} vertebrae, got {}",
            vertebrae.len()
        )));
    }
    let slopes = vertebrae
        .iter()
        .map(vertebra_slope)
        .collect::<Result<Vec<_>>>()?;
    Ok(cobb_from_slopes(&slopes))
}

/// Cobb angles from per-vertebra slopes (degrees). Ties resolve to the
/// smallest indices.
pub fn cobb_from_slopes(slopes: &[f64]) -> CobbAngles {
    let n = slopes.len();
    let (mut upper, mut lower, mut ma) = (0, 0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = (slopes[i] - slopes[j]).abs();
            if diff > ma {
                ma = diff;
                upper = i;
                lower = j;
            }
        }
    }
    let ta = (0..=upper)
        .map(|k| (slopes[k] - slopes[upper]).abs())
        .fold(0.0, f64::max);
    let ba = (lower..n)
        .map(|k| (slopes[k] - slopes[lower]).abs())
        .fold(0.0, f64::max);
    CobbAngles { ta, ma, ba }
}

/// `|predicted angles − Cobb(predicted landmarks)|` for a joint prediction.
pub fn consistency_gap(prediction: &[f64]) -> Result<[f64; 3]> {
    if prediction.len() != LABEL_LEN {
        return Err(Error::Mode(format!(
            "consistency gap needs a joint prediction of length {LABEL_LEN}, got {}",
            prediction.len()
        )));
    }
    let vertebrae = landmarks_from_labels(prediction)?;
    let measured = cobb_from_landmarks(&vertebrae)?.as_array();
    let predicted = &prediction[2 * LANDMARKS..];
    Ok(std::array::from_fn(|i| (predicted[i] - measured[i]).abs()))
}

/// One lateral-offset term `amplitude · sin(half_waves · π · t + phase)`,
/// with `t ∈ [0, 1]` running down the spine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveTerm {
    pub amplitude: f64,
    pub half_waves: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpineShapeParams {
    pub terms: Vec<CurveTerm>,
    pub vertebra_height: f64,
    pub vertebra_width: f64,
    pub gap: f64,
    /// Global rotation about the frame center, degrees.
    pub rotation_deg: f64,
    /// Extra per-vertebra tilt in degrees; empty means none.
    pub tilt_offsets_deg: Vec<f64>,
    pub frame_width: f64,
    pub frame_height: f64,
    /// Seed the parameters were sampled from, kept for provenance.
    pub seed: u64,
}

impl Default for SpineShapeParams {
    fn default() -> Self {
        Self {
            terms: Vec::new(),
            vertebra_height: 10.0,
            vertebra_width: 20.0,
            gap: 3.5,
            rotation_deg: 0.0,
            tilt_offsets_deg: Vec::new(),
            frame_width: 64.0,
            frame_height: 256.0,
            seed: 0,
        }
    }
}

/// Ranges for randomly sampled spines.
///
/// The principal term spans between one and two half-waves with its phase
/// placed so that both tilt extremes fall strictly inside the spine. The most
/// tilted pair is then always the interior maximum and minimum, and the top
/// and bottom angles vary smoothly with the shape instead of jumping when the
/// end vertebra changes. Up to `max_terms − 1` weaker, shorter-wavelength terms
/// add variety.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpineDistribution {
    pub max_terms: usize,
    pub min_half_waves: f64,
    pub max_half_waves: f64,
    /// Smallest distance, in radians of phase, between a tilt extreme and the
    /// spine ends.
    pub phase_margin: f64,
    /// Range of the principal term's peak endplate tilt, degrees.
    pub min_tilt_deg: f64,
    pub max_tilt_deg: f64,
    /// Peak tilt of each secondary term relative to the principal one.
    pub secondary_scale: f64,
    pub secondary_min_half_waves: f64,
    pub secondary_max_half_waves: f64,
    pub max_rotation_deg: f64,
    pub vertebra_height: f64,
    pub vertebra_width: f64,
    pub gap: f64,
    pub frame_width: f64,
    pub frame_height: f64,
}

impl Default for SpineDistribution {
    fn default() -> Self {
        let base = SpineShapeParams::default();
        Self {
            max_terms: 3,
            min_half_waves: 1.4,
            max_half_waves: 1.8,
            phase_margin: 0.3,
            min_tilt_deg: 4.0,
            max_tilt_deg: 20.0,
            secondary_scale: 0.12,
            secondary_min_half_waves: 2.5,
            secondary_max_half_waves: 5.0,
            max_rotation_deg: 3.0,
            vertebra_height: base.vertebra_height,
            vertebra_width: base.vertebra_width,
            gap: base.gap,
            frame_width: base.frame_width,
            frame_height: base.frame_height,
        }
    }
}

const MAX_SAMPLE_ATTEMPTS: usize = 10_000;

impl SpineShapeParams {
    fn spine_length(&self) -> f64 {
        VERTEBRAE as f64 * self.vertebra_height + (VERTEBRAE - 1) as f64 * self.gap
    }

    /// Draws a valid (non-overlapping, in-frame) spine shape from `dist`.
    pub fn sample(seed: u64, dist: &SpineDistribution) -> Result<Self> {
        let pi = std::f64::consts::PI;
        let ordered = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !(ordered(dist.min_half_waves, dist.max_half_waves)
            && ordered(dist.min_tilt_deg, dist.max_tilt_deg)
            && ordered(dist.secondary_min_half_waves, dist.secondary_max_half_waves)
            && dist.min_half_waves > 0.0
            && dist.max_tilt_deg < 90.0
            && dist.phase_margin >= 0.0
            && dist.secondary_scale >= 0.0
            && dist.max_rotation_deg >= 0.0)
        {
            return Err(Error::Parameter(format!("invalid spine distribution {dist:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let length = VERTEBRAE as f64 * dist.vertebra_height + (VERTEBRAE - 1) as f64 * dist.gap;
        // amplitude whose slope peaks at `deg`
        let amplitude = |deg: f64, half_waves: f64| deg.to_radians().tan() * length / (half_waves * pi);
        for _ in 0..MAX_SAMPLE_ATTEMPTS {
            let half_waves = rng.random_range(dist.min_half_waves..=dist.max_half_waves);
            let span = half_waves * pi;
            // slope ∝ cos(u) for u ∈ [φ, φ + span]; keep 0 and π inside with margin
            let (lo, hi) = (pi - span + dist.phase_margin, -dist.phase_margin);
            if lo > hi {
                return Err(Error::Parameter(
                    "half-wave range too short for the phase margin".into(),
                ));
            }
            let phase = rng.random_range(lo..=hi) + 0.5 * pi;
            let peak = rng.random_range(dist.min_tilt_deg..=dist.max_tilt_deg);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let mut terms = vec![CurveTerm {
                amplitude: sign * amplitude(peak, half_waves),
                half_waves,
                phase,
            }];
            let extra = rng.random_range(0..dist.max_terms.max(1));
            for _ in 0..extra {
                let hw = rng.random_range(dist.secondary_min_half_waves..=dist.secondary_max_half_waves);
                let tilt = peak * dist.secondary_scale * rng.random_range(-1.0..=1.0);
                terms.push(CurveTerm {
                    amplitude: amplitude(tilt, hw),
                    half_waves: hw,
                    phase: rng.random_range(0.0..2.0 * pi),
                });
            }
            let rotation_deg = if dist.max_rotation_deg > 0.0 {
                rng.random_range(-dist.max_rotation_deg..=dist.max_rotation_deg)
            } else {
                0.0
            };
            let params = Self {
                terms,
                vertebra_height: dist.vertebra_height,
                vertebra_width: dist.vertebra_width,
                gap: dist.gap,
                rotation_deg,
                tilt_offsets_deg: Vec::new(),
                frame_width: dist.frame_width,
                frame_height: dist.frame_height,
                seed,
            };
            if generate_spine(&params).is_ok() {
                return Ok(params);
            }
        }
        Err(Error::Parameter(format!(
            "no valid spine found for seed {seed} after {MAX_SAMPLE_ATTEMPTS} draws"
        )))
    }
}

fn rotate(p: Point, center: Point, deg: f64) -> Point {
    let (s, c) = deg.to_radians().sin_cos();
    let dh = p.h - center.h;
    let dv = p.v - center.v;
    Point::new(center.h + dh * c - dv * s, center.v + dh * s + dv * c)
}

/// Separating-axis test for two convex quadrilaterals.
fn quads_overlap(a: &Vertebra, b: &Vertebra) -> bool {
    // perimeter order: TL, TR, BR, BL
    let ring = |q: &Vertebra| [q[0], q[1], q[3], q[2]];
    let (ra, rb) = (ring(a), ring(b));
    for poly in [&ra, &rb] {
        for i in 0..4 {
            let p0 = poly[i];
            let p1 = poly[(i + 1) % 4];
            let axis = (-(p1.v - p0.v), p1.h - p0.h);
            let project = |r: &[Point; 4]| {
                r.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    let d = p.h * axis.0 + p.v * axis.1;
                    (lo.min(d), hi.max(d))
                })
            };
            let (alo, ahi) = project(&ra);
            let (blo, bhi) = project(&rb);
            if ahi < blo || bhi < alo {
                return false;
            }
        }
    }
    true
}

/// Builds the 17 vertebrae of `params` and measures their Cobb angles.
pub fn generate_spine(params: &SpineShapeParams) -> Result<SpineAnnotation> {
    let p = params;
    let positive = [
        p.vertebra_height,
        p.vertebra_width,
        p.frame_width,
        p.frame_height,
    ];
    if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || !(p.gap >= 0.0) {
        return Err(Error::Parameter(
            "vertebra size, gap and frame must be positive".into(),
        ));
    }
    if !p.tilt_offsets_deg.is_empty() && p.tilt_offsets_deg.len() != VERTEBRAE {
        return Err(Error::Parameter(format!(
            "tilt offsets must be empty or have {VERTEBRAE} entries"
        )));
    }
    let length = p.spine_length();
    let top = 0.5 * (p.frame_height - length);
    if top < 0.0 {
        return Err(Error::Parameter("spine does not fit the frame height".into()));
    }
    let center = Point::new(0.5 * p.frame_width, 0.5 * p.frame_height);
    let pi = std::f64::consts::PI;

    let mut vertebrae = Vec::with_capacity(VERTEBRAE);
    for k in 0..VERTEBRAE {
        let vc = top + k as f64 * (p.vertebra_height + p.gap) + 0.5 * p.vertebra_height;
        let t = (vc - top) / length;
        let (mut offset, mut dxdv) = (0.0, 0.0);
        for term in &p.terms {
            let arg = term.half_waves * pi * t + term.phase;
            offset += term.amplitude * arg.sin();
            dxdv += term.amplitude * term.half_waves * pi / length * arg.cos();
        }
        // endplates stay perpendicular to the spinal axis
        let mut tilt = -dxdv.atan().to_degrees();
        if let Some(extra) = p.tilt_offsets_deg.get(k) {
            tilt += extra;
        }
        let c = Point::new(center.h + offset, vc);
        let (hw, hh) = (0.5 * p.vertebra_width, 0.5 * p.vertebra_height);
        let local = [(-hw, -hh), (hw, -hh), (-hw, hh), (hw, hh)];
        let corners: Vertebra = std::array::from_fn(|i| {
            let corner = Point::new(c.h + local[i].0, c.v + local[i].1);
            rotate(rotate(corner, c, tilt), center, p.rotation_deg)
        });
        vertebrae.push(corners);
    }

    for (k, q) in vertebrae.iter().enumerate() {
        if q
            .iter()
            .any(|pt| pt.h < 0.0 || pt.v < 0.0 || pt.h >= p.frame_width || pt.v >= p.frame_height)
        {
            return Err(Error::Parameter(format!("vertebra {k} leaves the frame")));
        }
    }
    for k in 0..VERTEBRAE - 1 {
        if quads_overlap(&vertebrae[k], &vertebrae[k + 1]) {
            return Err(Error::Parameter(format!(
                "vertebrae {k} and {} overlap",
                k + 1
            )));
        }
    }
    let angles = cobb_from_landmarks(&vertebrae)?;
    if angles.as_array().iter().any(|a| *a >= 90.0) {
        return Err(Error::Parameter("Cobb angle reaches 90 degrees".into()));
    }
    Ok(SpineAnnotation { vertebrae, angles })
}
