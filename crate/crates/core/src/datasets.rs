//! Synthetic two-dimensional regression tasks on concentric circles.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Positive-alignment tolerance: `x_k . x_l < |x_k||x_l| - ALIGN_TOL`.
pub const ALIGN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<f64>,
    pub test_x: Vec<Vec<f64>>,
    pub test_y: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.train_x.len()
    }

    pub fn dim(&self) -> usize {
        self.train_x.first().map_or(0, Vec::len)
    }

    /// Training and test inputs together.
    pub fn all_inputs(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.train_x.iter().chain(self.test_x.iter())
    }

    /// Pairs `(k, l)` of positively aligned training inputs.
    pub fn aligned_pairs(&self) -> Vec<(usize, usize)> {
        aligned_pairs(&self.train_x)
    }

    /// Builds a dataset from explicit training and test sets.
    pub fn from_parts(
        name: impl Into<String>,
        train: (Vec<Vec<f64>>, Vec<f64>),
        test: (Vec<Vec<f64>>, Vec<f64>),
    ) -> Result<Self> {
        let (train_x, train_y) = train;
        let (test_x, test_y) = test;
        if train_x.is_empty() {
            return Err(Error::Config("dataset has no training points".into()));
        }
        if train_x.len() != train_y.len() || test_x.len() != test_y.len() {
            return Err(Error::Config("inputs and labels differ in length".into()));
        }
        let d = train_x[0].len();
        if train_x.iter().chain(&test_x).any(|x| x.len() != d) {
            return Err(Error::Config("inputs of mixed dimension".into()));
        }
        Ok(Self {
            name: name.into(),
            train_x,
            train_y,
            test_x,
            test_y,
            noise_sigma: 0.0,
            seed: 0,
        })
    }
}

/// Pairs `(k, l)`, `k < l`, with `x_k . x_l >= |x_k||x_l| - ALIGN_TOL`.
/// Duplicated points and points on a common ray are aligned.
pub fn aligned_pairs(xs: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for k in 0..xs.len() {
        for l in (k + 1)..xs.len() {
            let dot: f64 = xs[k].iter().zip(&xs[l]).map(|(a, b)| a * b).sum();
            let nk = xs[k].iter().map(|a| a * a).sum::<f64>().sqrt();
            let nl = xs[l].iter().map(|a| a * a).sum::<f64>().sqrt();
            if dot >= nk * nl - ALIGN_TOL {
                out.push((k, l));
            }
        }
    }
    out
}

fn polar(r: f64, theta: f64) -> Vec<f64> {
    vec![r * theta.cos(), r * theta.sin()]
}

fn add_noise(y: &mut [f64], sigma: f64, seed: u64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!(
            "data.noise_sigma must be >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite non-negative sigma");
    for v in y.iter_mut() {
        *v += normal.sample(&mut rng);
    }
    Ok(())
}

/// Angular offset of the inner circle of task 1.
///
/// Half the spacing of an interleaved layout (`pi/9`) is used so that no
/// inner point lands diametrically opposite an outer one; with `pi/9` the
/// nine outer and nine inner directions pair up antipodally and the
/// arc-cosine Gram matrix loses rank.
pub const TASK1_INNER_OFFSET: f64 = PI / 18.0;

/// Eighteen points on two circles: nine at radius 1 labelled `+1`, nine at
/// radius 0.5 labelled `-1`. The test set holds 180 clean points per circle.
pub fn task1(noise_sigma: f64, seed: u64) -> Result<Dataset> {
    let mut train_x = Vec::with_capacity(18);
    let mut train_y = Vec::with_capacity(18);
    for j in 0..9 {
        train_x.push(polar(1.0, 2.0 * PI * j as f64 / 9.0));
        train_y.push(1.0);
    }
    for j in 0..9 {
        train_x.push(polar(0.5, 2.0 * PI * j as f64 / 9.0 + TASK1_INNER_OFFSET));
        train_y.push(-1.0);
    }
    add_noise(&mut train_y, noise_sigma, seed)?;
    let (test_x, test_y) = circle_grid(&[(1.0, 1.0), (0.5, -1.0)], 180);
    Ok(Dataset {
        name: "task1".into(),
        train_x,
        train_y,
        test_x,
        test_y,
        noise_sigma,
        seed,
    })
}

pub const TASK2_RADII: [f64; 4] = [0.5, 1.0, 1.5, 2.0];

/// Per-circle angular offsets of task 2 in units of the spacing `2 pi / 25`.
///
/// A half turn is 12.5 spacings, so two circles whose offsets differ by half a
/// spacing hold antipodal pairs, which make the Gram matrix singular. The
/// evenly spaced choice `c/4` has this defect; these offsets avoid it.
pub const TASK2_OFFSETS: [f64; 4] = [0.0, 0.35, 0.65, 0.75];

/// A hundred points on four concentric circles, 25 each, with labels
/// alternating `+1, -1, +1, -1` by radius. The test set holds 250 clean
/// points per circle.
pub fn task2(noise_sigma: f64, seed: u64) -> Result<Dataset> {
    let step = 2.0 * PI / 25.0;
    let mut train_x = Vec::with_capacity(100);
    let mut train_y = Vec::with_capacity(100);
    for (c, &r) in TASK2_RADII.iter().enumerate() {
        for j in 0..25 {
            train_x.push(polar(r, step * (j as f64 + TASK2_OFFSETS[c])));
            train_y.push(task2_label(c));
        }
    }
    add_noise(&mut train_y, noise_sigma, seed)?;
    let circles: Vec<(f64, f64)> = TASK2_RADII
        .iter()
        .enumerate()
        .map(|(c, &r)| (r, task2_label(c)))
        .collect();
    let (test_x, test_y) = circle_grid(&circles, 250);
    Ok(Dataset {
        name: "task2".into(),
        train_x,
        train_y,
        test_x,
        test_y,
        noise_sigma,
        seed,
    })
}

fn task2_label(circle: usize) -> f64 {
    if circle.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

fn circle_grid(circles: &[(f64, f64)], per_circle: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut xs = Vec::with_capacity(circles.len() * per_circle);
    let mut ys = Vec::with_capacity(circles.len() * per_circle);
    for &(r, y) in circles {
        for j in 0..per_circle {
            xs.push(polar(r, 2.0 * PI * (j as f64 + 0.5) / per_circle as f64));
            ys.push(y);
        }
    }
    (xs, ys)
}

/// Dataset for `data.task`.
pub fn by_task(task: u32, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    match task {
        1 => task1(noise_sigma, seed),
        2 => task2(noise_sigma, seed),
        other => Err(Error::Config(format!(
            "data.task must be 1 or 2, got {other}"
        ))),
    }
}

/// Writes points and labels as CSV with header `x1,...,xd,y`.
pub fn write_csv<W: Write>(w: W, xs: &[Vec<f64>], ys: &[f64]) -> Result<()> {
    let d = xs.first().map_or(2, Vec::len);
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.push("y".into());
    wtr.write_record(&header)?;
    for (x, y) in xs.iter().zip(ys) {
        let mut row: Vec<String> = x.iter().map(|v| format!("{v:e}")).collect();
        row.push(format!("{y:e}"));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, xs: &[Vec<f64>], ys: &[f64]) -> Result<()> {
    write_csv(std::fs::File::create(path)?, xs, ys)
}

/// Parses CSV written by [`write_csv`]: a header row, then rows of `d >= 1`
/// finite inputs followed by one finite label.
pub fn read_csv<R: Read>(r: R) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let width = rdr.headers()?.len();
    if width < 2 {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected at least 2 columns, found {width}"),
        });
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let mut vals = Vec::with_capacity(width);
        for field in rec.iter() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("non-finite value {field:?}"),
                });
            }
            vals.push(v);
        }
        let y = vals.pop().expect("width >= 2");
        xs.push(vals);
        ys.push(y);
    }
    Ok((xs, ys))
}

pub fn read_csv_file(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    read_csv(std::fs::File::open(path)?)
}

/// Parses dataset CSV from a string.
pub fn parse_csv_str(s: &str) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    read_csv(s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task1_shape_and_clean_labels() {
        let ds = task1(0.0, 0).unwrap();
        assert_eq!(ds.n(), 18);
        assert_eq!(ds.dim(), 2);
        assert!(ds.train_y.iter().all(|&y| y == 1.0 || y == -1.0));
        assert_eq!(ds.train_y.iter().filter(|&&y| y == 1.0).count(), 9);
        assert_eq!(ds.test_x.len(), 360);
        assert!(ds.aligned_pairs().is_empty());
    }

    #[test]
    fn task1_noise_is_seeded() {
        let a = task1(0.5, 17).unwrap();
        let b = task1(0.5, 17).unwrap();
        let c = task1(0.5, 18).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train_y, c.train_y);
        assert_eq!(a.test_y, task1(0.0, 0).unwrap().test_y);
    }

    #[test]
    fn noisy_label_magnitude_tail() {
        // Mean |y| exceeds 1 + 3 sigma only through a far Gaussian tail event.
        let sigma = 0.5;
        let within = (0..200)
            .filter(|&s| {
                let ds = task1(sigma, s).unwrap();
                let m = ds.train_y.iter().map(|y| y.abs()).sum::<f64>() / 18.0;
                m <= 1.0 + 3.0 * sigma
            })
            .count();
        assert!(within as f64 >= 0.99 * 200.0);
    }

    #[test]
    fn task2_shape_labels_alternate() {
        let ds = task2(0.0, 0).unwrap();
        assert_eq!(ds.n(), 100);
        assert_eq!(ds.test_x.len(), 1000);
        for (x, &y) in ds.train_x.iter().zip(&ds.train_y) {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            let c = TASK2_RADII
                .iter()
                .position(|&q| (q - r).abs() < 1e-12)
                .unwrap();
            assert_eq!(y, if c % 2 == 0 { 1.0 } else { -1.0 });
            assert!(r <= 2.0 + 1e-12);
        }
        assert!(ds.aligned_pairs().is_empty());
    }

    #[test]
    fn task2_rotation_maps_training_set_to_itself() {
        let ds = task2(0.0, 0).unwrap();
        let (c, s) = ((2.0 * PI / 25.0).cos(), (2.0 * PI / 25.0).sin());
        for (x, y) in ds.train_x.iter().zip(&ds.train_y) {
            let rx = [c * x[0] - s * x[1], s * x[0] + c * x[1]];
            let hit = ds
                .train_x
                .iter()
                .zip(&ds.train_y)
                .find(|(p, _)| (p[0] - rx[0]).abs() < 1e-9 && (p[1] - rx[1]).abs() < 1e-9);
            let (_, &ly) = hit.expect("rotated point missing from training set");
            assert_eq!(ly, *y);
        }
    }

    #[test]
    fn alignment_flags_duplicates_and_rays() {
        let xs = vec![
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![2.0, 0.0],
            vec![0.0, 1.0],
        ];
        assert_eq!(aligned_pairs(&xs), vec![(0, 1), (0, 2), (1, 2)]);
        assert!(aligned_pairs(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).is_empty());
    }

    #[test]
    fn unknown_task_and_negative_noise_rejected() {
        assert!(matches!(by_task(3, 0.0, 0), Err(Error::Config(_))));
        assert!(matches!(task1(-0.1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = task1(0.3, 5).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &ds.train_x, &ds.train_y).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x1,x2,y\n"));
        let (xs, ys) = parse_csv_str(&text).unwrap();
        assert_eq!(xs, ds.train_x);
        assert_eq!(ys, ds.train_y);
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(parse_csv_str("x1,x2,y\n1,2,abc\n").is_err());
        assert!(parse_csv_str("x1,x2,y\n1,2\n").is_err());
        assert!(parse_csv_str("y\n1\n").is_err());
        assert!(parse_csv_str("x1,y\n1,NaN\n").is_err());
        assert!(parse_csv_str("x1,x2,y\n").unwrap().0.is_empty());
    }
}
