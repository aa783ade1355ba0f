//! Uncertain-parameter spaces and sampling designs on them.
//!
//! A [`ParameterSpace`] is an ordered list of named, uniformly distributed
//! inputs with physical ranges. Designs are generated as quasi-Monte Carlo
//! point sets (Sobol sequence, [`sobol_points`]) in the unit box and mapped
//! affinely into the space ([`scale_to_space`]). [`saltelli_design`] arranges
//! one 2d-dimensional low-discrepancy stream into the A/B/AB_i matrices that
//! sensitivity analysis consumes.

mod joe_kuo;
mod sobol;

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

pub use sobol::sobol_points;

use crate::error::{Error, Result};

/// One uncertain input: a name, a closed physical range, and a unit label.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub unit: String,
}

/// An ordered set of uniformly distributed uncertain inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpace {
    params: Vec<Param>,
}

impl ParameterSpace {
    /// Validates and wraps a parameter list: at least one parameter, unique
    /// names, finite ranges with min < max.
    pub fn new(params: Vec<Param>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Config("parameter space needs at least one parameter".into()));
        }
        for p in &params {
            if !(p.min.is_finite() && p.max.is_finite()) {
                return Err(Error::Data(format!("parameter '{}' has a non-finite range", p.name)));
            }
            if p.min >= p.max {
                return Err(Error::Data(format!(
                    "parameter '{}' needs min < max (got [{}, {}])",
                    p.name, p.min, p.max
                )));
            }
            if p.name.is_empty() {
                return Err(Error::Data("parameter with empty name".into()));
            }
        }
        for i in 1..params.len() {
            if params[..i].iter().any(|q| q.name == params[i].name) {
                return Err(Error::Data(format!("duplicate parameter name '{}'", params[i].name)));
            }
        }
        Ok(Self { params })
    }

    pub fn dimension(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    /// True when `x` lies inside the closed box of this space.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.params.len()
            && x.iter()
                .zip(&self.params)
                .all(|(v, p)| *v >= p.min && *v <= p.max)
    }

    /// Maps one point from the unit box to physical units.
    pub fn scale_point(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "point has {} coordinates, space has {}",
                u.len(),
                self.params.len()
            )));
        }
        Ok(u.iter()
            .zip(&self.params)
            .map(|(v, p)| p.min + v * (p.max - p.min))
            .collect())
    }

    /// Maps one physical point to the unit box (inverse of [`Self::scale_point`]).
    pub fn normalize_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "point has {} coordinates, space has {}",
                x.len(),
                self.params.len()
            )));
        }
        Ok(x.iter()
            .zip(&self.params)
            .map(|(v, p)| (v - p.min) / (p.max - p.min))
            .collect())
    }

    /// Parses a space from the plain-text config format: one `[[param]]`
    /// block per input with `name`, `min`, `max`, and `unit` keys.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::Parse(format!("space config: {e}")))?;
        let list = table
            .get("param")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::Parse("space config: no [[param]] blocks found".into()))?;
        let mut params = Vec::with_capacity(list.len());
        for (i, entry) in list.iter().enumerate() {
            let t = entry
                .as_table()
                .ok_or_else(|| Error::Parse(format!("space config: param {i} is not a table")))?;
            let name = t
                .get("name")
                .and_then(|v| v.as_str())
                .ok_or_else(|| Error::Parse(format!("space config: param {i} lacks a string 'name'")))?;
            let unit = t.get("unit").and_then(|v| v.as_str()).unwrap_or("");
            let num = |key: &str| -> Result<f64> {
                match t.get(key) {
                    Some(toml::Value::Float(f)) => Ok(*f),
                    Some(toml::Value::Integer(n)) => Ok(*n as f64),
                    _ => Err(Error::Parse(format!(
                        "space config: param '{name}' lacks a numeric '{key}'"
                    ))),
                }
            };
            params.push(Param {
                name: name.to_string(),
                min: num("min")?,
                max: num("max")?,
                unit: unit.to_string(),
            });
        }
        Self::new(params)
    }

    /// Reads the config format from a file.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.as_ref().display()),
            ))
        })?;
        Self::from_toml_str(&text)
    }

    /// Renders the config format; `from_toml_str` round-trips it.
    pub fn to_toml_string(&self) -> String {
        let mut out = String::new();
        for (i, p) in self.params.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[[param]]");
            let _ = writeln!(out, "name = {:?}", p.name);
            let _ = writeln!(out, "min = {:?}", p.min);
            let _ = writeln!(out, "max = {:?}", p.max);
            let _ = writeln!(out, "unit = {:?}", p.unit);
        }
        out
    }

    /// The four-parameter vessel-remodelling input space bundled with the
    /// toolkit (endothelium regeneration time, blood flow velocity, relative
    /// threshold strain, fenestration percentage).
    pub fn isr3d() -> Self {
        Self::from_toml_str(include_str!("../../../../data/isr3d_params.toml"))
            .expect("bundled isr3d space parses")
    }
}

/// A set of sample points in physical units, tied to its space.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    points: DMatrix<f64>,
    space: ParameterSpace,
}

impl DesignMatrix {
    /// Wraps physical-unit points, checking the in-box invariant.
    pub fn new(points: DMatrix<f64>, space: ParameterSpace) -> Result<Self> {
        if points.ncols() != space.dimension() {
            return Err(Error::Shape(format!(
                "design has {} columns, space has dimension {}",
                points.ncols(),
                space.dimension()
            )));
        }
        for i in 0..points.nrows() {
            for (j, p) in space.params().iter().enumerate() {
                let v = points[(i, j)];
                if !v.is_finite() {
                    return Err(Error::Data(format!("non-finite value at row {i}, column '{}'", p.name)));
                }
                if v < p.min || v > p.max {
                    return Err(Error::Data(format!(
                        "row {i}: '{}' = {v} outside [{}, {}]",
                        p.name, p.min, p.max
                    )));
                }
            }
        }
        Ok(Self { points, space })
    }

    pub fn n_points(&self) -> usize {
        self.points.nrows()
    }

    pub fn dimension(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }

    /// Writes the design as CSV with a header row of parameter names.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(self.space.names())
            .map_err(|e| Error::Parse(e.to_string()))?;
        for i in 0..self.points.nrows() {
            let row: Vec<String> = (0..self.points.ncols())
                .map(|j| format!("{:?}", self.points[(i, j)]))
                .collect();
            wtr.write_record(&row).map_err(|e| Error::Parse(e.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads a design CSV against a known space. The header must contain
    /// exactly the space's parameter names; a permuted column order is
    /// accepted and reordered, reported by the second return value.
    pub fn from_csv(path: impl AsRef<Path>, space: &ParameterSpace) -> Result<(Self, bool)> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.as_ref().display()),
            ))
        })?;
        Self::read_csv(std::io::BufReader::new(file), space)
    }

    pub fn read_csv<R: std::io::Read>(r: R, space: &ParameterSpace) -> Result<(Self, bool)> {
        let (points, reordered) = read_points_csv(r, space)?;
        Ok((Self::new(points, space.clone())?, reordered))
    }
}

/// Reads a points CSV against a space's column names without requiring the
/// values to lie inside the box (a [`DesignMatrix`] does require that, so
/// this is the entry point for query points that may extrapolate). Returns
/// the points in the space's column order plus whether the file's columns
/// had to be reordered.
pub fn read_points_csv<R: std::io::Read>(
    r: R,
    space: &ParameterSpace,
) -> Result<(DMatrix<f64>, bool)> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("inputs CSV header: {e}")))?
        .clone();
    let names = space.names();
    if headers.len() != names.len() {
        return Err(Error::Shape(format!(
            "inputs CSV has {} columns, space has {}",
            headers.len(),
            names.len()
        )));
    }
    // Column j of the file feeds space column col_map[j].
    let mut col_map = Vec::with_capacity(names.len());
    for h in headers.iter() {
        match names.iter().position(|n| *n == h) {
            Some(idx) => col_map.push(idx),
            None => {
                return Err(Error::Parse(format!(
                    "inputs CSV column '{h}' does not name a space parameter"
                )))
            }
        }
    }
    let mut seen = vec![false; names.len()];
    for &idx in &col_map {
        if seen[idx] {
            return Err(Error::Parse(format!(
                "inputs CSV repeats column '{}'",
                names[idx]
            )));
        }
        seen[idx] = true;
    }
    let reordered = col_map.iter().enumerate().any(|(j, &m)| j != m);

    let mut rows: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("inputs CSV row {}: {e}", i + 1)))?;
        if rec.len() != names.len() {
            return Err(Error::Shape(format!(
                "inputs CSV row {} has {} fields, expected {}",
                i + 1,
                rec.len(),
                names.len()
            )));
        }
        let mut row = vec![0.0; names.len()];
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Parse(format!("inputs CSV row {}, column '{}': bad number '{}'", i + 1, headers.get(j).unwrap_or(""), field))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "inputs CSV row {}, column '{}': non-finite value",
                    i + 1,
                    headers.get(j).unwrap_or("")
                )));
            }
            row[col_map[j]] = v;
        }
        rows.extend_from_slice(&row);
        n += 1;
    }
    let points = DMatrix::from_row_slice(n, names.len(), &rows);
    Ok((points, reordered))
}

/// Maps unit-box points into physical units: x_j = min_j + u_j (max_j - min_j).
pub fn scale_to_space(unit_points: &DMatrix<f64>, space: &ParameterSpace) -> Result<DesignMatrix> {
    if unit_points.ncols() != space.dimension() {
        return Err(Error::Shape(format!(
            "points have {} columns, space has dimension {}",
            unit_points.ncols(),
            space.dimension()
        )));
    }
    let mut scaled = unit_points.clone();
    for (j, p) in space.params().iter().enumerate() {
        for i in 0..scaled.nrows() {
            scaled[(i, j)] = p.min + unit_points[(i, j)] * (p.max - p.min);
        }
    }
    DesignMatrix::new(scaled, space.clone())
}

/// Maps a design back to the unit box (inverse of [`scale_to_space`]).
pub fn normalize_to_unit(design: &DesignMatrix) -> DMatrix<f64> {
    let pts = design.points();
    let mut unit = pts.clone();
    for (j, p) in design.space().params().iter().enumerate() {
        let w = p.max - p.min;
        for i in 0..unit.nrows() {
            unit[(i, j)] = (pts[(i, j)] - p.min) / w;
        }
    }
    unit
}

/// Convenience: `n` Sobol points scaled into `space`, skipping `skip` points
/// of the underlying stream.
pub fn qmc_design(space: &ParameterSpace, n: usize, skip: u64) -> Result<DesignMatrix> {
    let unit = sobol_points(space.dimension(), n, skip)?;
    scale_to_space(&unit, space)
}

/// The A/B/AB_i sample arrangement for Sobol-index estimation.
///
/// A and B are disjoint halves of one 2d-dimensional Sobol stream; AB_i
/// equals A with column i replaced by B's column i. Total model evaluations:
/// n_base * (d + 2).
#[derive(Debug, Clone)]
pub struct SaltelliDesign {
    pub a: DesignMatrix,
    pub b: DesignMatrix,
    pub ab: Vec<DesignMatrix>,
    pub n_base: usize,
}

impl SaltelliDesign {
    pub fn total_evaluations(&self) -> usize {
        self.n_base * (self.a.dimension() + 2)
    }
}

/// Builds a Saltelli design: the first d columns of a 2d-dimensional Sobol
/// stream form A, the last d form B, both scaled to physical units.
pub fn saltelli_design(space: &ParameterSpace, n_base: usize, skip: u64) -> Result<SaltelliDesign> {
    if n_base < 2 {
        return Err(Error::Config(format!("n_base must be at least 2, got {n_base}")));
    }
    let d = space.dimension();
    let stream = sobol_points(2 * d, n_base, skip)?;
    let ua = stream.columns(0, d).into_owned();
    let ub = stream.columns(d, d).into_owned();
    let a = scale_to_space(&ua, space)?;
    let b = scale_to_space(&ub, space)?;
    let mut ab = Vec::with_capacity(d);
    for i in 0..d {
        let mut u = ua.clone();
        u.set_column(i, &ub.column(i));
        ab.push(scale_to_space(&u, space)?);
    }
    Ok(SaltelliDesign {
        a,
        b,
        ab,
        n_base,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_space(d: usize) -> ParameterSpace {
        ParameterSpace::new(
            (0..d)
                .map(|j| Param {
                    name: format!("x{}", j + 1),
                    min: -1.0 + j as f64,
                    max: 2.0 + 1.5 * j as f64,
                    unit: String::new(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn bundled_space_matches_published_ranges() {
        let s = ParameterSpace::isr3d();
        assert_eq!(s.dimension(), 4);
        let p = s.params();
        assert_eq!(p[0].name, "endothelium_regeneration_time");
        assert_eq!((p[0].min, p[0].max), (10.0, 20.0));
        assert_eq!(p[0].unit, "day");
        assert_eq!((p[1].min, p[1].max), (0.133, 0.399));
        assert_eq!(p[1].unit, "m/s");
        assert_eq!((p[2].min, p[2].max), (0.446, 0.785));
        assert_eq!((p[3].min, p[3].max), (2.0, 10.0));
        assert_eq!(p[3].unit, "%");
    }

    #[test]
    fn velocity_midpoint_scales_to_0266() {
        let s = ParameterSpace::isr3d();
        let x = s.scale_point(&[0.5, 0.5, 0.5, 0.5]).unwrap();
        assert!((x[1] - 0.266).abs() < 1e-15);
    }

    #[test]
    fn unit_box_boundaries_scale_to_range_ends() {
        let s = toy_space(3);
        let lo = s.scale_point(&[0.0, 0.0, 0.0]).unwrap();
        for (v, p) in lo.iter().zip(s.params()) {
            assert_eq!(*v, p.min);
        }
        let hi = s.scale_point(&[1.0, 1.0, 1.0]).unwrap();
        for (v, p) in hi.iter().zip(s.params()) {
            assert_eq!(*v, p.max);
        }
    }

    #[test]
    fn fenestration_quarter_point() {
        let s = ParameterSpace::isr3d();
        let x = s.scale_point(&[0.0, 0.0, 0.0, 0.25]).unwrap();
        assert_eq!(x[3], 4.0);
    }

    #[test]
    fn invalid_spaces_are_rejected() {
        assert!(ParameterSpace::new(vec![]).is_err());
        assert!(ParameterSpace::new(vec![Param {
            name: "a".into(),
            min: 1.0,
            max: 1.0,
            unit: String::new(),
        }])
        .is_err());
        assert!(ParameterSpace::new(vec![
            Param { name: "a".into(), min: 0.0, max: 1.0, unit: String::new() },
            Param { name: "a".into(), min: 0.0, max: 1.0, unit: String::new() },
        ])
        .is_err());
    }

    #[test]
    fn toml_round_trip() {
        let s = ParameterSpace::isr3d();
        let text = s.to_toml_string();
        let back = ParameterSpace::from_toml_str(&text).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let space = toy_space(2);
        let design = qmc_design(&space, 17, 1).unwrap();
        let mut buf = Vec::new();
        design.write_csv(&mut buf).unwrap();
        let (back, reordered) = DesignMatrix::read_csv(buf.as_slice(), &space).unwrap();
        assert!(!reordered);
        assert_eq!(design.points(), back.points());
    }

    #[test]
    fn csv_with_permuted_columns_is_reordered() {
        let space = toy_space(2);
        let csv = "x2,x1\n3.0,0.5\n";
        let (d, reordered) = DesignMatrix::read_csv(csv.as_bytes(), &space).unwrap();
        assert!(reordered);
        assert_eq!(d.points()[(0, 0)], 0.5);
        assert_eq!(d.points()[(0, 1)], 3.0);
    }

    #[test]
    fn saltelli_column_substitution_structure() {
        let space = toy_space(4);
        let des = saltelli_design(&space, 1000, 1).unwrap();
        assert_eq!(des.total_evaluations(), 6000);
        for i in 0..4 {
            let abi = des.ab[i].points();
            for r in 0..des.n_base {
                for j in 0..4 {
                    let want = if j == i {
                        des.b.points()[(r, j)]
                    } else {
                        des.a.points()[(r, j)]
                    };
                    assert_eq!(abi[(r, j)], want);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn scale_normalize_round_trip(d in 1usize..6, n in 1usize..20, skip in 0u64..64) {
            let space = toy_space(d);
            let design = qmc_design(&space, n, skip).unwrap();
            let unit = normalize_to_unit(&design);
            let back = scale_to_space(&unit, &space).unwrap();
            for (a, b) in design.points().iter().zip(back.points().iter()) {
                let tol = 1e-12 * a.abs().max(1.0);
                prop_assert!((a - b).abs() <= tol);
            }
        }

        #[test]
        fn saltelli_counts_hold_for_small_dimensions(d in 1usize..11, n_base in 2usize..40) {
            let space = toy_space(d);
            let des = saltelli_design(&space, n_base, 1).unwrap();
            prop_assert_eq!(des.ab.len(), d);
            prop_assert_eq!(des.a.n_points(), n_base);
            prop_assert_eq!(des.b.n_points(), n_base);
            prop_assert_eq!(des.total_evaluations(), n_base * (d + 2));
        }
    }
}
