use std::f64::consts::PI;

use daa_autograd::{Real, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::record::SubjectRecord;
use crate::error::{DaaError, Result};
use crate::factors::{AnatomyTensor, ChannelRole, Mask, PathologyLabel, SubjectId};
use crate::nets::init::{rng, DetRng};
use crate::nets::ImagingFactor;

pub const LV: usize = 0;
pub const MYO: usize = 1;
pub const RV: usize = 2;
pub const STRUCTURES: [&str; 3] = ["LV", "MYO", "RV"];
pub const VENDORS: [&str; 4] = ["A", "B", "C", "D"];

/// Closed interval for a sampled parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range(pub Real, pub Real);

impl Range {
    fn sample(&self, r: &mut DetRng) -> Real {
        if self.1 <= self.0 {
            self.0
        } else {
            r.random_range(self.0..=self.1)
        }
    }
}

/// Morphology of one pathology class, in pixels at 64x64 (scaled with size).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMorphology {
    pub name: String,
    pub lv_radius: Range,
    pub myo_thickness: Range,
    /// RV half-width (across) and half-height.
    pub rv_width: Range,
    pub rv_height: Range,
}

/// Intensity model of one synthetic scanner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VendorModel {
    pub name: String,
    pub gain: Range,
    pub bias: Range,
    pub blood: Range,
    pub myo: Range,
    pub tissue_low: Range,
    pub tissue_high: Range,
    pub noise: Real,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub n: usize,
    pub size: usize,
    pub channels: usize,
    pub classes: Vec<ClassMorphology>,
    pub vendors: Vec<VendorModel>,
    /// Heart centre jitter in pixels at 64x64.
    pub jitter: Real,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        let class = |name: &str, lv: (Real, Real), t: (Real, Real), rw: (Real, Real), rh: (Real, Real)| ClassMorphology {
            name: name.into(),
            lv_radius: Range(lv.0, lv.1),
            myo_thickness: Range(t.0, t.1),
            rv_width: Range(rw.0, rw.1),
            rv_height: Range(rh.0, rh.1),
        };
        let vendor = |name: &str, gain: Real, bias: Real, blood: Real, myo: Real, lo: Real, hi: Real| VendorModel {
            name: name.into(),
            gain: Range(gain - 0.05, gain + 0.05),
            bias: Range(bias - 0.04, bias + 0.04),
            blood: Range(blood - 0.05, blood + 0.05),
            myo: Range(myo - 0.05, myo + 0.05),
            tissue_low: Range(lo - 0.05, lo + 0.05),
            tissue_high: Range(hi - 0.05, hi + 0.05),
            noise: 0.02,
        };
        Self {
            n: 200,
            size: 64,
            channels: 12,
            classes: vec![
                class("NOR", (7.0, 9.0), (2.5, 3.5), (5.0, 7.0), (9.0, 11.0)),
                class("DCM", (11.0, 13.0), (1.8, 2.6), (5.0, 7.0), (9.0, 11.0)),
                class("HCM", (4.5, 6.0), (5.0, 7.0), (5.0, 7.0), (9.0, 11.0)),
                class("ARV", (7.0, 9.0), (2.5, 3.5), (9.0, 12.0), (13.0, 15.0)),
            ],
            vendors: vec![
                vendor("A", 1.0, 0.0, 0.8, -0.35, -0.5, 0.2),
                vendor("B", 0.9, 0.05, 0.7, -0.2, -0.3, 0.35),
                vendor("C", 1.1, -0.05, 0.85, -0.45, -0.6, 0.05),
                vendor("D", 0.85, 0.1, 0.6, -0.1, -0.2, 0.4),
            ],
            jitter: 3.0,
            seed: 0,
        }
    }
}

/// Sampled shape and appearance of one phantom, in pixels of the actual
/// image.
#[derive(Clone, Debug)]
struct Draw {
    cy: Real,
    cx: Real,
    lv: Real,
    t: Real,
    rv_w: Real,
    rv_h: Real,
    rv_angle: Real,
    body: (Real, Real),
    field: [Real; 4],
    code: [Real; 8],
}

impl PhantomSpec {
    fn scale(&self) -> Real {
        self.size as Real / 64.0
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    /// Reject specs whose ranges cannot produce nested, in-frame hearts.
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(DaaError::SpecInfeasible(format!("image size {} below 16", self.size)));
        }
        if self.channels < 5 {
            return Err(DaaError::SpecInfeasible(format!(
                "need at least 5 channels (3 structures, tissue, air), got {}",
                self.channels
            )));
        }
        if self.classes.len() < 2 {
            return Err(DaaError::SpecInfeasible("need at least two classes".into()));
        }
        if self.vendors.is_empty() {
            return Err(DaaError::SpecInfeasible("need at least one vendor".into()));
        }
        let half = 32.0;
        for c in &self.classes {
            for (what, r) in [
                ("lv_radius", c.lv_radius),
                ("myo_thickness", c.myo_thickness),
                ("rv_width", c.rv_width),
                ("rv_height", c.rv_height),
            ] {
                if !(r.0 > 0.0 && r.1 >= r.0) {
                    return Err(DaaError::SpecInfeasible(format!("{}: bad {what} range", c.name)));
                }
            }
            let outer = c.lv_radius.1 + c.myo_thickness.1;
            // RV centre sits at the epicardial edge; its far edge must stay in frame
            let reach = outer + c.rv_width.1 + self.jitter + 2.0;
            let vertical = outer.max(c.rv_height.1) + self.jitter + 2.0;
            if reach >= half || vertical >= half {
                return Err(DaaError::SpecInfeasible(format!("{}: heart does not fit in the frame", c.name)));
            }
        }
        Ok(())
    }

    fn draw(&self, class: usize, vendor: usize, r: &mut DetRng) -> Draw {
        let s = self.scale();
        let c = &self.classes[class];
        let v = &self.vendors[vendor];
        let mid = self.size as Real / 2.0;
        let jit = self.jitter * s;
        let gain = v.gain.sample(r);
        let bias = v.bias.sample(r);
        let blood = v.blood.sample(r);
        let myo = v.myo.sample(r);
        let lo = v.tissue_low.sample(r);
        let hi = v.tissue_high.sample(r);
        let freq = r.random_range(1.0..3.0);
        let angle = r.random_range(0.0..PI);
        Draw {
            cy: mid + r.random_range(-jit..=jit),
            cx: mid + 2.0 * s + r.random_range(-jit..=jit),
            lv: c.lv_radius.sample(r) * s,
            t: c.myo_thickness.sample(r) * s,
            rv_w: c.rv_width.sample(r) * s,
            rv_h: c.rv_height.sample(r) * s,
            rv_angle: r.random_range(-0.25..0.25),
            body: (r.random_range(0.78..0.9) * mid, r.random_range(0.85..0.95) * mid),
            field: [freq, angle, r.random_range(0.0..2.0 * PI), r.random_range(0.0..2.0 * PI)],
            code: [
                (gain - 1.0) / 0.15,
                bias / 0.15,
                (blood - 0.7) / 0.15,
                (myo + 0.3) / 0.2,
                (lo + 0.4) / 0.25,
                (hi - 0.25) / 0.2,
                (freq - 2.0),
                angle / PI * 2.0 - 1.0,
            ],
        }
    }
}

struct Geometry {
    masks: [Mask; 3],
    /// Per-pixel band coordinate in [-1, 1]: -1 for air, tissue above.
    band: Vec<Real>,
}

fn geometry(d: &Draw, size: usize, bands: usize) -> Geometry {
    let mid = size as Real / 2.0;
    let dist = |y: usize, x: usize| ((y as Real - d.cy).powi(2) + (x as Real - d.cx).powi(2)).sqrt();
    let outer = d.lv + d.t;
    let lv = Mask::from_fn(size, size, |y, x| dist(y, x) <= d.lv);
    let myo = Mask::from_fn(size, size, |y, x| {
        let r = dist(y, x);
        r > d.lv && r <= outer
    });
    // RV: ellipse centred on the septal side of the epicardium, minus a
    // one-pixel gap around the myocardium
    let (sa, ca) = d.rv_angle.sin_cos();
    let ry = d.cy + outer * sa;
    let rx = d.cx - outer * ca;
    let rv = Mask::from_fn(size, size, |y, x| {
        let (dy, dx) = (y as Real - ry, x as Real - rx);
        let u = dx * ca + dy * sa;
        let v = -dx * sa + dy * ca;
        (u / d.rv_w).powi(2) + (v / d.rv_h).powi(2) <= 1.0 && dist(y, x) > outer + 1.0
    });
    let body = Mask::from_fn(size, size, |y, x| {
        ((y as Real - mid) / d.body.0).powi(2) + ((x as Real - mid) / d.body.1).powi(2) <= 1.0
    });
    let [freq, angle, p1, p2] = d.field;
    let (s, c) = angle.sin_cos();
    let band = (0..size * size)
        .map(|j| {
            let (y, x) = ((j / size) as Real / size as Real, (j % size) as Real / size as Real);
            if !body.data()[j] {
                return -1.0;
            }
            let u = x * c + y * s;
            let v = -x * s + y * c;
            let f = 0.6 * (2.0 * PI * freq * u + p1).sin() + 0.4 * (2.0 * PI * (freq + 0.7) * v + p2).sin();
            // map (-1, 1) onto the tissue bins, above the air bin
            let floor = -1.0 + 2.0 / bands as Real;
            floor + (1.0 - floor) * (f.clamp(-0.999, 0.999) + 1.0) / 2.0
        })
        .collect();
    Geometry {
        masks: [lv, myo, rv],
        band,
    }
}

/// Split the non-heart pixels into `k - masks.len()` bands by an intensity
/// coordinate in `[-1, 1]` (equal-width bins), giving one binary channel per
/// structure followed by the band channels.
pub fn masks_to_factors(
    masks: &[Mask],
    intensity: &[Real],
    k: usize,
    subject_id: SubjectId,
    pathology: PathologyLabel,
) -> Result<AnatomyTensor> {
    let Some(first) = masks.first() else {
        return Err(DaaError::InvalidInput("need at least one structure mask".into()));
    };
    let (h, w) = first.dims();
    if k < masks.len() + 1 {
        return Err(DaaError::InvalidInput(format!(
            "{k} channels cannot hold {} structures and background",
            masks.len()
        )));
    }
    if intensity.len() != h * w || masks.iter().any(|m| m.dims() != (h, w)) {
        return Err(DaaError::ShapeMismatch("masks and intensity map differ in size".into()));
    }
    let mut union = Mask::new(h, w);
    let mut overlap = 0;
    for m in masks {
        overlap += union.and(m).count();
        union = union.or(m);
    }
    if overlap > 0 {
        return Err(DaaError::OverlapError { count: overlap });
    }
    let bands = k - masks.len();
    let mut channels: Vec<Mask> = masks.to_vec();
    channels.extend((0..bands).map(|_| Mask::new(h, w)));
    for j in 0..h * w {
        if union.data()[j] {
            continue;
        }
        let t = ((intensity[j].clamp(-1.0, 1.0) + 1.0) / 2.0 * bands as Real).floor() as usize;
        let b = t.min(bands - 1);
        channels[masks.len() + b].set(j / w, j % w, true);
    }
    let mut roles = vec![ChannelRole::Heart; masks.len()];
    roles.extend(std::iter::repeat_n(ChannelRole::Other, bands));
    AnatomyTensor::from_masks(&channels, roles, subject_id, pathology)
}

fn render(anatomy: &AnatomyTensor, d: &Draw, v: &VendorModel, r: &mut DetRng, size: usize) -> Vec<Real> {
    let [gain, bias, blood, myo, lo, hi, _, _] = d.code;
    let gain = 1.0 + 0.15 * gain;
    let bias = 0.15 * bias;
    let blood = 0.7 + 0.15 * blood;
    let myo = -0.3 + 0.2 * myo;
    let lo = -0.4 + 0.25 * lo;
    let hi = 0.25 + 0.2 * hi;
    let k = anatomy.num_channels();
    let bands = k - 3;
    // tissue bands ramp from `lo` to `hi`; the first band is air
    let mut level = vec![0.0; k];
    level[LV] = blood;
    level[MYO] = myo;
    level[RV] = blood - 0.05;
    level[3] = -0.95;
    for b in 1..bands {
        let t = if bands > 2 { (b - 1) as Real / (bands - 2) as Real } else { 0.5 };
        level[3 + b] = lo + (hi - lo) * t;
    }
    let plane = size * size;
    (0..plane)
        .map(|j| {
            let base: Real = (0..k).map(|c| anatomy.values()[c * plane + j] * level[c]).sum();
            let noise: Real = r.sample::<Real, _>(rand_distr::StandardNormal) * v.noise;
            (gain * base + bias + noise).clamp(-1.0, 1.0)
        })
        .collect()
}

/// Generate `spec.n` phantoms. Classes and vendors cycle so counts are as
/// even as possible; every draw comes from one seeded stream per subject.
pub fn generate_phantoms(spec: &PhantomSpec) -> Result<Vec<SubjectRecord>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let class = i % spec.classes.len();
        let vendor = (i / spec.classes.len()) % spec.vendors.len();
        let mut r = rng(spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (i as u64 + 1));
        let d = spec.draw(class, vendor, &mut r);
        let geo = geometry(&d, spec.size, spec.channels - 3);
        let id = SubjectId::new(format!("ph{:04}", i));
        let label = PathologyLabel::new(class, spec.classes[class].name.clone());
        let anatomy = masks_to_factors(&geo.masks, &geo.band, spec.channels, id.clone(), label.clone())?;
        let image = render(&anatomy, &d, &spec.vendors[vendor], &mut r, spec.size);
        let image: Vec<Real> = image.into_iter().map(|v| v as f32 as Real).collect();
        let code: Vec<Real> = d.code.iter().map(|&v| v as f32 as Real).collect();
        out.push(SubjectRecord {
            id: id.clone(),
            image: Tensor::new(&[1, 1, spec.size, spec.size], image),
            masks: geo.masks.to_vec(),
            anatomy,
            imaging: ImagingFactor::new(code, Some(id))?,
            pathology: label,
            vendor: vendor as u8,
            synthetic: false,
            provenance: None,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::heart_mask;
    use proptest::prelude::*;

    fn small(n: usize, seed: u64) -> PhantomSpec {
        PhantomSpec {
            n,
            seed,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn zero_subjects() {
        assert!(generate_phantoms(&small(0, 1)).unwrap().is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_phantoms(&small(6, 3)).unwrap();
        let b = generate_phantoms(&small(6, 3)).unwrap();
        let c = generate_phantoms(&small(6, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].image, c[0].image);
    }

    #[test]
    fn infeasible_specs_rejected() {
        let mut s = small(4, 0);
        s.classes[0].lv_radius = Range(20.0, 25.0);
        assert!(matches!(generate_phantoms(&s), Err(DaaError::SpecInfeasible(_))));
        let mut s = small(4, 0);
        s.channels = 4;
        assert!(generate_phantoms(&s).is_err());
    }

    #[test]
    fn empty_masks_give_background_cover() {
        let m = vec![Mask::new(8, 8); 3];
        let intensity: Vec<Real> = (0..64).map(|j| j as Real / 32.0 - 1.0).collect();
        let c = masks_to_factors(&m, &intensity, 6, "s".into(), PathologyLabel::new(0, "NOR")).unwrap();
        for k in 0..3 {
            assert!(!c.channel(k).any());
        }
        let mut cover = Mask::new(8, 8);
        for k in 3..6 {
            cover = cover.or(&c.channel(k));
        }
        assert_eq!(cover, Mask::full(8, 8));
    }

    #[test]
    fn structures_embed_exactly_and_overlap_is_rejected() {
        let a = Mask::from_fn(8, 8, |y, _| y < 2);
        let b = Mask::from_fn(8, 8, |y, _| y == 3);
        let c = Mask::from_fn(8, 8, |_, x| x == 7).and_not(&a).and_not(&b);
        let z = vec![0.0; 64];
        let t = masks_to_factors(&[a.clone(), b.clone(), c.clone()], &z, 5, "s".into(), PathologyLabel::new(0, "NOR")).unwrap();
        assert_eq!(t.channel(0), a);
        assert_eq!(t.channel(1), b);
        assert_eq!(t.channel(2), c);
        let err = masks_to_factors(&[a.clone(), a], &z, 5, "s".into(), PathologyLabel::new(0, "NOR")).unwrap_err();
        assert!(matches!(err, DaaError::OverlapError { count: 16 }));
        assert!(masks_to_factors(&[b], &z, 1, "s".into(), PathologyLabel::new(0, "NOR")).is_err());
    }

    #[test]
    fn class_morphology_is_ordered() {
        // mean structure areas follow the class definitions
        let recs = generate_phantoms(&small(40, 5)).unwrap();
        let mean_area = |class: usize, s: usize| {
            let v: Vec<usize> = recs.iter().filter(|r| r.pathology.class_index == class).map(|r| r.masks[s].count()).collect();
            v.iter().sum::<usize>() as Real / v.len() as Real
        };
        assert!(mean_area(1, LV) > 1.5 * mean_area(0, LV));
        assert!(mean_area(2, LV) < 0.7 * mean_area(0, LV));
        assert!(mean_area(3, RV) > 1.5 * mean_area(0, RV));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn records_are_consistent(seed in 0u64..10_000) {
            for rec in generate_phantoms(&small(4, seed)).unwrap() {
                let [lv, myo, rv] = [&rec.masks[0], &rec.masks[1], &rec.masks[2]];
                prop_assert!(lv.any() && myo.any() && rv.any());
                prop_assert_eq!(lv.and(myo).count(), 0);
                prop_assert_eq!(lv.and(rv).count(), 0);
                prop_assert_eq!(myo.and(rv).count(), 0);
                // LV lies inside the region enclosed by the myocardium: every
                // LV pixel's 4-neighbours are LV or MYO
                for y in 0..64 {
                    for x in 0..64 {
                        if lv.get(y, x) {
                            for (dy, dx) in [(0isize, 1isize), (0, -1), (1, 0), (-1, 0)] {
                                let (yy, xx) = ((y as isize + dy) as usize, (x as isize + dx) as usize);
                                prop_assert!(lv.get(yy, xx) || myo.get(yy, xx));
                            }
                        }
                    }
                }
                let union = lv.or(myo).or(rv);
                prop_assert_eq!(&heart_mask(&rec.anatomy).mask, &union);
                // every pixel belongs to exactly one channel
                let k = rec.anatomy.num_channels();
                for j in 0..64 * 64 {
                    let s: Real = (0..k).map(|c| rec.anatomy.values()[c * 4096 + j]).sum();
                    prop_assert_eq!(s, 1.0);
                }
                prop_assert!(rec.image.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            }
        }
    }
}
