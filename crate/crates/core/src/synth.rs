//! Procedural rectilinear footprint stocks with correlated metadata.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MarlError, Result};
use crate::exec::Execution;
use crate::geometry::{self, Point};
use crate::ingest::{FootprintRecord, UseClass};
use crate::nn::seeded_rng;
use crate::tasks::VINTAGE_BINS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Rectangle,
    L,
    T,
    U,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 4] = [ShapeFamily::Rectangle, ShapeFamily::L, ShapeFamily::T, ShapeFamily::U];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMix {
    pub sfh: f64,
    pub mfh: f64,
    #[serde(default)]
    pub other: f64,
}

impl Default for ClassMix {
    fn default() -> Self {
        ClassMix { sfh: 0.7, mfh: 0.3, other: 0.0 }
    }
}

impl ClassMix {
    /// Exact per-class counts by largest remainder; ties favour SFH, then MFH.
    pub fn allocate(&self, n: usize) -> [usize; 3] {
        let p = [self.sfh, self.mfh, self.other];
        let mut counts = p.map(|q| (q * n as f64).floor() as usize);
        let mut rest: Vec<(usize, f64)> = p.iter().enumerate().map(|(i, q)| (i, q * n as f64 - counts[i] as f64)).collect();
        rest.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut missing = n.saturating_sub(counts.iter().sum());
        for (i, _) in rest.iter().cycle() {
            if missing == 0 {
                break;
            }
            counts[*i] += 1;
            missing -= 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub n: usize,
    pub seed: u64,
    pub shape_families: Vec<ShapeFamily>,
    pub class_mix: ClassMix,
    /// Probability that a footprint's family determines its vintage bin.
    pub vintage_shape_correlation: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            n: 500,
            seed: 0,
            shape_families: ShapeFamily::ALL.to_vec(),
            class_mix: ClassMix::default(),
            vintage_shape_correlation: 0.8,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let m = self.class_mix;
        if self.n == 0 {
            return Err(MarlError::Config("synthetic stock needs n >= 1".into()));
        }
        if self.shape_families.is_empty() {
            return Err(MarlError::Config("at least one shape family is required".into()));
        }
        if [m.sfh, m.mfh, m.other].iter().any(|p| !(0.0..=1.0).contains(p)) || (m.sfh + m.mfh + m.other - 1.0).abs() > 1e-9 {
            return Err(MarlError::Config("class proportions must lie in [0, 1] and sum to 1".into()));
        }
        if !(0.0..=1.0).contains(&self.vintage_shape_correlation) {
            return Err(MarlError::Config("vintage_shape_correlation must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

struct ClassProfile {
    side_m: (f64, f64),
    height_m: (f64, f64),
    programs: &'static [&'static str],
}

fn profile(class: UseClass) -> ClassProfile {
    match class {
        UseClass::Sfh => ClassProfile { side_m: (8.0, 20.0), height_m: (3.0, 12.0), programs: &["Single Family", "Townhouse"] },
        UseClass::Mfh => ClassProfile {
            side_m: (16.0, 40.0),
            height_m: (9.0, 30.0),
            programs: &["Apartments", "Condominium", "Mixed Use Residential"],
        },
        UseClass::Other => ClassProfile { side_m: (8.0, 40.0), height_m: (3.0, 30.0), programs: &["Office", "Retail"] },
    }
}

/// Construction years spanned by each vintage bin.
const BIN_YEARS: [(i32, i32); VINTAGE_BINS] = [(1920, 1979), (1980, 2003), (2004, 2012), (2013, 2024)];

/// Counter-clockwise outline in a `w × d` bounding box at the origin.
pub fn family_polygon(family: ShapeFamily, w: f64, d: f64, a: f64, b: f64) -> Vec<Point> {
    match family {
        ShapeFamily::Rectangle => vec![(0.0, 0.0), (w, 0.0), (w, d), (0.0, d)],
        ShapeFamily::L => {
            let (cx, cy) = (w * a, d * b);
            vec![(0.0, 0.0), (w, 0.0), (w, cy), (cx, cy), (cx, d), (0.0, d)]
        }
        ShapeFamily::T => {
            let (sw, bd) = (w * a, d * b);
            let (l, r) = ((w - sw) / 2.0, (w + sw) / 2.0);
            vec![(l, 0.0), (r, 0.0), (r, d - bd), (w, d - bd), (w, d), (0.0, d), (0.0, d - bd), (l, d - bd)]
        }
        ShapeFamily::U => {
            let (aw, bd) = (w * a, d * b);
            vec![(0.0, 0.0), (w, 0.0), (w, d), (w - aw, d), (w - aw, bd), (aw, bd), (aw, d), (0.0, d)]
        }
    }
}

fn notch_fractions(family: ShapeFamily, rng: &mut ChaCha8Rng) -> (f64, f64) {
    match family {
        ShapeFamily::Rectangle => (1.0, 1.0),
        ShapeFamily::L => (rng.gen_range(0.4..0.7), rng.gen_range(0.4..0.7)),
        ShapeFamily::T => (rng.gen_range(0.3..0.5), rng.gen_range(0.35..0.6)),
        ShapeFamily::U => (rng.gen_range(0.25..0.35), rng.gen_range(0.3..0.5)),
    }
}

fn generate_one(spec: &GeneratorSpec, index: usize, class: UseClass, width: usize) -> (FootprintRecord, ShapeFamily) {
    let mut rng = seeded_rng(spec.seed, 1 + index as u64);
    let prof = profile(class);
    let fam_idx = rng.gen_range(0..spec.shape_families.len());
    let family = spec.shape_families[fam_idx];
    let family_bin = ShapeFamily::ALL.iter().position(|f| *f == family).expect("known family") % VINTAGE_BINS;
    let bin = if rng.gen::<f64>() < spec.vintage_shape_correlation { family_bin } else { rng.gen_range(0..VINTAGE_BINS) };
    let (y0, y1) = BIN_YEARS[bin];
    let vintage_year = rng.gen_range(y0..=y1);
    let w = rng.gen_range(prof.side_m.0..=prof.side_m.1);
    let d = rng.gen_range(prof.side_m.0..=prof.side_m.1);
    let (a, b) = notch_fractions(family, &mut rng);
    let height_m = rng.gen_range(prof.height_m.0..=prof.height_m.1);
    let program = prof.programs[rng.gen_range(0..prof.programs.len())].to_string();
    // Lay buildings out on a 100 m grid so world coordinates stay distinct.
    let (ox, oy) = ((index % 100) as f64 * 100.0, (index / 100) as f64 * 100.0);
    let polygon: Vec<Point> = family_polygon(family, w, d, a, b).into_iter().map(|(x, y)| (x + ox, y + oy)).collect();
    let record = FootprintRecord {
        id: format!("syn-{index:0width$}"),
        area_m2: geometry::area(&polygon),
        polygon,
        height_m,
        program,
        vintage_year,
        use_class: class,
    };
    (record, family)
}

/// Deterministic per seed; each record draws from its own stream derived
/// from the seed and its index.
pub fn generate_footprints(spec: &GeneratorSpec, exec: Execution) -> Result<Vec<FootprintRecord>> {
    Ok(generate_with_families(spec, exec)?.into_iter().map(|(r, _)| r).collect())
}

/// Like [`generate_footprints`], also reporting each record's shape family.
pub fn generate_with_families(spec: &GeneratorSpec, exec: Execution) -> Result<Vec<(FootprintRecord, ShapeFamily)>> {
    spec.validate()?;
    let counts = spec.class_mix.allocate(spec.n);
    let mut classes: Vec<UseClass> = [UseClass::Sfh, UseClass::Mfh, UseClass::Other]
        .iter()
        .zip(counts)
        .flat_map(|(c, k)| std::iter::repeat(*c).take(k))
        .collect();
    classes.shuffle(&mut seeded_rng(spec.seed, 0));
    let width = spec.n.saturating_sub(1).to_string().len();
    Ok(exec.map_range(spec.n, |i| generate_one(spec, i, classes[i], width)))
}
