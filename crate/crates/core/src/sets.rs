//! Input set representations: hyper-rectangles and zonotopes.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegion {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxRegion {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        check_dim("box bounds", lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(Error::InvalidInput("box has zero dimensions".into()));
        }
        for i in 0..lower.len() {
            if !(lower[i].is_finite() && upper[i].is_finite()) || lower[i] > upper[i] {
                return Err(Error::InvalidInput(format!(
                    "box axis {i}: [{}, {}] is not a finite nonempty interval",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn from_center_radius(center: &DVector<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::InvalidInput(format!("negative radius {radius}")));
        }
        Self::new(center.add_scalar(-radius), center.add_scalar(radius))
    }

    /// The latent box `[-1, 1]^m`.
    pub fn unit(m: usize) -> Self {
        Self {
            lower: DVector::from_element(m, -1.0),
            upper: DVector::from_element(m, 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.lower + &self.upper) * 0.5
    }

    /// Per-axis half-widths.
    pub fn radii(&self) -> DVector<f64> {
        (&self.upper - &self.lower) * 0.5
    }

    pub fn max_radius(&self) -> f64 {
        self.radii().max()
    }

    pub fn widths(&self) -> DVector<f64> {
        &self.upper - &self.lower
    }

    pub fn contains(&self, x: &DVector<f64>, slack: f64) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|i| x[i] >= self.lower[i] - slack && x[i] <= self.upper[i] + slack)
    }

    pub fn clamp(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| x[i].clamp(self.lower[i], self.upper[i]))
    }

    /// Bisects axis `axis` at its midpoint. Both halves share the cut face.
    pub fn bisect(&self, axis: usize) -> (BoxRegion, BoxRegion) {
        let mid = 0.5 * (self.lower[axis] + self.upper[axis]);
        let mut left = self.clone();
        let mut right = self.clone();
        left.upper[axis] = mid;
        right.lower[axis] = mid;
        (left, right)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if hi > lo {
                rng.gen_range(lo..=hi)
            } else {
                lo
            }
        })
    }

    /// All `2^n` vertices; `None` when `n > 20`.
    pub fn vertices(&self) -> Option<Vec<DVector<f64>>> {
        let n = self.dim();
        if n > 20 {
            return None;
        }
        Some(
            (0..1usize << n)
                .map(|mask| {
                    DVector::from_fn(n, |i, _| {
                        if mask >> i & 1 == 1 {
                            self.upper[i]
                        } else {
                            self.lower[i]
                        }
                    })
                })
                .collect(),
        )
    }
}

/// `{ G z + center : ‖z‖∞ ≤ 1 }`.
#[derive(Debug, Clone, PartialEq)]
pub struct Zonotope {
    generators: DMatrix<f64>,
    center: DVector<f64>,
}

impl Zonotope {
    pub fn new(generators: DMatrix<f64>, center: DVector<f64>) -> Result<Self> {
        check_dim("zonotope generator rows", center.len(), generators.nrows())?;
        if generators.ncols() == 0 {
            return Err(Error::InvalidInput("zonotope has no generators".into()));
        }
        if generators.iter().chain(center.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("zonotope has non-finite entries".into()));
        }
        Ok(Self { generators, center })
    }

    /// The box `[lo, hi]` as a zonotope with a diagonal generator.
    pub fn from_box(b: &BoxRegion) -> Self {
        Self {
            generators: DMatrix::from_diagonal(&b.radii()),
            center: b.center(),
        }
    }

    pub fn generators(&self) -> &DMatrix<f64> {
        &self.generators
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.generators.ncols()
    }

    pub fn point(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.generators * z + &self.center
    }

    pub fn interval_hull(&self) -> BoxRegion {
        let r = DVector::from_fn(self.dim(), |i, _| self.generators.row(i).abs().sum());
        BoxRegion {
            lower: &self.center - &r,
            upper: &self.center + &r,
        }
    }

    /// Uniform in the latent cube, pushed through the generator map.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        self.point(&BoxRegion::unit(self.latent_dim()).sample(rng))
    }
}

/// Input set of a reachability query.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSet {
    Box(BoxRegion),
    Zonotope(Zonotope),
}

impl InputSet {
    pub fn dim(&self) -> usize {
        match self {
            InputSet::Box(b) => b.dim(),
            InputSet::Zonotope(z) => z.dim(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match self {
            InputSet::Box(b) => b.sample(rng),
            InputSet::Zonotope(z) => z.sample(rng),
        }
    }

    pub fn interval_hull(&self) -> BoxRegion {
        match self {
            InputSet::Box(b) => b.clone(),
            InputSet::Zonotope(z) => z.interval_hull(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: InputSetFile = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.display().to_string(),
            source,
        })?;
        file.try_into()
    }

    pub fn to_file(&self) -> InputSetFile {
        match self {
            InputSet::Box(b) => InputSetFile::Box {
                lower: b.lower.iter().copied().collect(),
                upper: b.upper.iter().copied().collect(),
            },
            InputSet::Zonotope(z) => InputSetFile::Zonotope {
                g: z.generators.row_iter().map(|r| r.iter().copied().collect()).collect(),
                center: z.center.iter().copied().collect(),
            },
        }
    }
}

/// JSON form: `{ "lower": [..], "upper": [..] }` or `{ "G": [[..]], "center": [..] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputSetFile {
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    Zonotope {
        #[serde(rename = "G")]
        g: Vec<Vec<f64>>,
        center: Vec<f64>,
    },
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidInput(format!("{what}: expected a nonempty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}

impl TryFrom<InputSetFile> for InputSet {
    type Error = Error;

    fn try_from(file: InputSetFile) -> Result<Self> {
        match file {
            InputSetFile::Box { lower, upper } => Ok(InputSet::Box(BoxRegion::new(
                DVector::from_vec(lower),
                DVector::from_vec(upper),
            )?)),
            InputSetFile::Zonotope { g, center } => Ok(InputSet::Zonotope(Zonotope::new(
                matrix_from_rows(&g, "zonotope G")?,
                DVector::from_vec(center),
            )?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn inverted_box_is_rejected() {
        assert!(BoxRegion::new(dv(&[1.0]), dv(&[0.0])).is_err());
    }

    #[test]
    fn bisect_tiles_the_parent() {
        let b = BoxRegion::new(dv(&[0.0, 0.0]), dv(&[4.0, 1.0])).unwrap();
        let (l, r) = b.bisect(0);
        assert_eq!(l.upper()[0], 2.0);
        assert_eq!(r.lower()[0], 2.0);
        assert_eq!(l.lower(), b.lower());
        assert_eq!(r.upper(), b.upper());
        assert_eq!(l.upper()[1], 1.0);
    }

    #[test]
    fn zonotope_hull_of_hexagon() {
        let z = Zonotope::new(
            DMatrix::from_row_slice(2, 3, &[0.1, 0.1, 0.1, -0.1, 0.0, 0.1]),
            dv(&[2.5, 0.0]),
        )
        .unwrap();
        let h = z.interval_hull();
        assert!((h.lower()[0] - 2.2).abs() < 1e-15 && (h.upper()[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn input_set_json_forms() {
        let b: InputSetFile = serde_json::from_str(r#"{"lower":[0,1],"upper":[1,2]}"#).unwrap();
        assert!(matches!(InputSet::try_from(b).unwrap(), InputSet::Box(_)));
        let z: InputSetFile =
            serde_json::from_str(r#"{"G":[[0.1,0.1,0.1],[-0.1,0,0.1]],"center":[2.5,0]}"#).unwrap();
        let z = InputSet::try_from(z).unwrap();
        assert!(matches!(&z, InputSet::Zonotope(zz) if zz.latent_dim() == 3));
    }
}
