//! Point sets, marginals, cost functions and the dense cost/kernel matrices.
//!
//! Kernels are stored as `log K = -C / lambda` throughout; exponentiation only
//! happens inside log-sum-exp reductions and when a plan is materialized.

use std::io::{BufRead, Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered set of `n` points in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: Array2<f64>,
    id: String,
}

impl PointSet {
    pub fn new(points: Array2<f64>, id: impl Into<String>) -> Result<Self> {
        let (n, d) = points.dim();
        if n == 0 {
            return Err(Error::Empty("point set has no points"));
        }
        if d == 0 {
            return Err(Error::Empty("point set has dimension 0"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point coordinates"));
        }
        Ok(Self {
            points,
            id: id.into(),
        })
    }

    /// Builds a point set from row vectors. All rows must have the same length.
    pub fn from_rows(rows: &[Vec<f64>], id: impl Into<String>) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(d, bad.len()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let points = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Self::new(points, id)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    /// Stacks `self` on top of `other` (rows of `self` first).
    pub fn union(&self, other: &PointSet) -> Result<PointSet> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(self.dim(), other.dim()));
        }
        let stacked = ndarray::concatenate(ndarray::Axis(0), &[self.points(), other.points()])
            .expect("column counts checked");
        PointSet::new(stacked, format!("{}+{}", self.id, other.id))
    }

    /// Reads the text format: a header line `n d`, then `n` rows of `d`
    /// whitespace-separated floats. Lines starting with `#` are skipped.
    pub fn read_text<R: BufRead>(reader: R, id: impl Into<String>) -> Result<Self> {
        let mut header: Option<(usize, usize)> = None;
        let mut data = Vec::new();
        let mut rows = 0usize;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                line: lineno + 1,
                msg,
            };
            match header {
                None => {
                    let mut it = trimmed.split_whitespace();
                    let n = it
                        .next()
                        .and_then(|s| s.parse::<usize>().ok())
                        .ok_or_else(|| parse_err("expected header `n d`".into()))?;
                    let d = it
                        .next()
                        .and_then(|s| s.parse::<usize>().ok())
                        .ok_or_else(|| parse_err("expected header `n d`".into()))?;
                    if it.next().is_some() {
                        return Err(parse_err("trailing tokens in header".into()));
                    }
                    header = Some((n, d));
                    data.reserve(n * d);
                }
                Some((n, d)) => {
                    if rows == n {
                        return Err(parse_err(format!("more than {n} data rows")));
                    }
                    let before = data.len();
                    for tok in trimmed.split_whitespace() {
                        let v: f64 = tok
                            .parse()
                            .map_err(|_| parse_err(format!("invalid float `{tok}`")))?;
                        data.push(v);
                    }
                    if data.len() - before != d {
                        return Err(parse_err(format!(
                            "expected {d} values, found {}",
                            data.len() - before
                        )));
                    }
                    rows += 1;
                }
            }
        }
        let (n, d) = header.ok_or(Error::Empty("missing header"))?;
        if rows != n {
            return Err(Error::Parse {
                line: 0,
                msg: format!("header declares {n} rows, found {rows}"),
            });
        }
        let points = Array2::from_shape_vec((n, d), data).expect("row lengths checked");
        PointSet::new(points, id)
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim())?;
        for row in self.points.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    /// Binary format: magic `LCNPTS1`, `n` and `d` as little-endian u64,
    /// then `n * d` little-endian f64 in row-major order.
    pub fn read_binary<R: Read>(mut reader: R, id: impl Into<String>) -> Result<Self> {
        let mut magic = [0u8; 7];
        reader.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Parse {
                line: 0,
                msg: "bad magic, expected LCNPTS1".into(),
            });
        }
        let mut word = [0u8; 8];
        reader.read_exact(&mut word)?;
        let n = u64::from_le_bytes(word) as usize;
        reader.read_exact(&mut word)?;
        let d = u64::from_le_bytes(word) as usize;
        let total = n
            .checked_mul(d)
            .ok_or_else(|| Error::InvalidParameter("n * d overflows".into()))?;
        let mut data = Vec::with_capacity(total);
        for _ in 0..total {
            reader.read_exact(&mut word)?;
            data.push(f64::from_le_bytes(word));
        }
        let points = Array2::from_shape_vec((n, d), data).expect("length matches");
        PointSet::new(points, id)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        for v in self.points.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Loads either format, sniffing the binary magic.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let id = path.display().to_string();
        if bytes.starts_with(BINARY_MAGIC) {
            Self::read_binary(bytes.as_slice(), id)
        } else {
            Self::read_text(bytes.as_slice(), id)
        }
    }
}

const BINARY_MAGIC: &[u8; 7] = b"LCNPTS1";

/// Pairwise cost between points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CostFunction {
    /// L2 distance.
    #[default]
    Euclidean,
    /// `-<x, y>`, so the kernel becomes `exp(<x, y> / lambda)`.
    NegativeDot,
    /// `sqrt(1 - cos(x, y))`, a metric on directions.
    Cosine,
}

impl CostFunction {
    pub fn eval(&self, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
        match self {
            CostFunction::Euclidean => a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            CostFunction::NegativeDot => -a.dot(&b),
            CostFunction::Cosine => {
                let na = a.dot(&a).sqrt();
                let nb = b.dot(&b).sqrt();
                let cos = a.dot(&b) / (na * nb);
                (1.0 - cos).max(0.0).sqrt()
            }
        }
    }

    /// Whether the cost is a nonnegative symmetric distance.
    pub fn is_metric(&self) -> bool {
        !matches!(self, CostFunction::NegativeDot)
    }

    pub(crate) fn check_inputs(&self, x: &PointSet) -> Result<()> {
        if *self == CostFunction::Cosine {
            for (i, row) in x.points().rows().into_iter().enumerate() {
                if row.iter().all(|v| *v == 0.0) {
                    return Err(Error::ZeroVector(i));
                }
            }
        }
        Ok(())
    }

    /// `log k(a, b) = -c(a, b) / lambda`.
    #[inline]
    pub fn log_kernel(&self, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, lambda: f64) -> f64 {
        -self.eval(a, b) / lambda
    }
}

impl std::str::FromStr for CostFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" | "l2" => Ok(CostFunction::Euclidean),
            "negative-dot" | "dot" => Ok(CostFunction::NegativeDot),
            "cosine" | "cosine-derived" => Ok(CostFunction::Cosine),
            other => Err(Error::InvalidParameter(format!("unknown cost `{other}`"))),
        }
    }
}

/// Source and sink masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    pub p: Array1<f64>,
    pub q: Array1<f64>,
}

impl Marginals {
    pub fn new(p: Array1<f64>, q: Array1<f64>) -> Result<Self> {
        for (name, v) in [("p", &p), ("q", &q)] {
            if v.is_empty() {
                return Err(Error::InvalidMarginals(format!("{name} is empty")));
            }
            if let Some((i, x)) = v.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x > 0.0)) {
                return Err(Error::InvalidMarginals(format!(
                    "{name}[{i}] = {x} must be positive and finite"
                )));
            }
        }
        Ok(Self { p, q })
    }

    pub fn uniform(n: usize, m: usize) -> Self {
        Self {
            p: Array1::from_elem(n, 1.0 / n as f64),
            q: Array1::from_elem(m, 1.0 / m as f64),
        }
    }

    pub fn mass(&self) -> (f64, f64) {
        (self.p.sum(), self.q.sum())
    }

    pub fn is_balanced(&self) -> bool {
        let (a, b) = self.mass();
        (a - b).abs() <= 1e-12 * a.max(b)
    }

    pub fn min_mass(&self) -> f64 {
        self.p
            .iter()
            .chain(self.q.iter())
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Dense `n x m` cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseCost {
    pub values: Array2<f64>,
}

/// Dense kernel stored as `log K = -C / lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseKernel {
    pub log_k: Array2<f64>,
    pub lambda: f64,
}

impl DenseKernel {
    pub fn shape(&self) -> (usize, usize) {
        self.log_k.dim()
    }

    /// Linear-space kernel values.
    pub fn kernel(&self) -> Array2<f64> {
        self.log_k.mapv(f64::exp)
    }

    /// Recovers `C = -lambda * log K` (infinite where the kernel is zero).
    pub fn cost(&self) -> Array2<f64> {
        self.log_k.mapv(|v| -self.lambda * v)
    }
}

pub fn build_cost(p: &PointSet, q: &PointSet, cost: CostFunction) -> Result<DenseCost> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch(p.dim(), q.dim()));
    }
    cost.check_inputs(p)?;
    cost.check_inputs(q)?;
    let values = Array2::from_shape_fn((p.len(), q.len()), |(i, j)| {
        cost.eval(p.point(i), q.point(j))
    });
    Ok(DenseCost { values })
}

pub fn build_kernel(cost: &DenseCost, lambda: f64) -> Result<DenseKernel> {
    check_lambda(lambda)?;
    if cost.values.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
        return Err(Error::NonFinite("cost matrix"));
    }
    Ok(DenseKernel {
        log_k: cost.values.mapv(|c| -c / lambda),
        lambda,
    })
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "regularization must be positive and finite, got {lambda}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ps(rows: &[&[f64]]) -> PointSet {
        let v: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        PointSet::from_rows(&v, "t").unwrap()
    }

    #[test]
    fn cost_examples() {
        let o = ps(&[&[0.0, 0.0]]);
        assert_eq!(build_cost(&o, &o, CostFunction::Euclidean).unwrap().values, array![[0.0]]);
        let far = ps(&[&[3.0, 4.0]]);
        assert_eq!(build_cost(&o, &far, CostFunction::Euclidean).unwrap().values, array![[5.0]]);
        let e1 = ps(&[&[1.0, 0.0]]);
        let e2 = ps(&[&[0.0, 1.0]]);
        let c = build_cost(&e1, &e2, CostFunction::Cosine).unwrap().values[[0, 0]];
        assert!((c - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cost_errors() {
        let a = ps(&[&[1.0, 0.0]]);
        let b = ps(&[&[1.0, 0.0, 0.0]]);
        assert!(matches!(
            build_cost(&a, &b, CostFunction::Euclidean),
            Err(Error::DimensionMismatch(2, 3))
        ));
        let z = ps(&[&[0.0, 0.0]]);
        assert!(matches!(build_cost(&a, &z, CostFunction::Cosine), Err(Error::ZeroVector(0))));
        assert!(PointSet::from_rows(&[vec![f64::NAN]], "x").is_err());
        assert!(PointSet::from_rows(&[vec![1.0], vec![1.0, 2.0]], "x").is_err());
    }

    #[test]
    fn kernel_examples() {
        let k = build_kernel(&DenseCost { values: array![[0.0]] }, 1.0).unwrap();
        assert_eq!(k.kernel(), array![[1.0]]);
        let k = build_kernel(&DenseCost { values: array![[5.0]] }, 5.0).unwrap();
        assert!((k.kernel()[[0, 0]] - 0.367_879_441_171_442_3).abs() < 1e-15);
        let k = build_kernel(&DenseCost { values: array![[f64::INFINITY]] }, 0.3).unwrap();
        assert_eq!(k.kernel()[[0, 0]], 0.0);
        assert!(build_kernel(&DenseCost { values: array![[1.0]] }, 0.0).is_err());
        assert!(build_kernel(&DenseCost { values: array![[1.0]] }, -1.0).is_err());
    }

    #[test]
    fn negative_dot_kernel_may_exceed_one() {
        let a = ps(&[&[1.0, 1.0]]);
        let k = build_kernel(&build_cost(&a, &a, CostFunction::NegativeDot).unwrap(), 1.0).unwrap();
        assert!((k.log_k[[0, 0]] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn text_format_with_comments() {
        let src = "# header comment\n2 3\n1 2 3\n# mid\n4.5 -1e-3 0\n";
        let p = PointSet::read_text(src.as_bytes(), "f").unwrap();
        assert_eq!(p.points(), array![[1.0, 2.0, 3.0], [4.5, -1e-3, 0.0]]);
        assert!(PointSet::read_text("2 2\n1 2\n".as_bytes(), "f").is_err());
        assert!(PointSet::read_text("1 2\n1 2 3\n".as_bytes(), "f").is_err());
        assert!(PointSet::read_text("1 2\n1 x\n".as_bytes(), "f").is_err());
    }

    #[test]
    fn binary_layout() {
        let p = ps(&[&[1.0, -2.0]]);
        let mut buf = Vec::new();
        p.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..7], b"LCNPTS1");
        assert_eq!(u64::from_le_bytes(buf[7..15].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[15..23].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[23..31].try_into().unwrap()), 1.0);
        assert_eq!(buf.len(), 7 + 16 + 16);
        assert_eq!(PointSet::read_binary(buf.as_slice(), "b").unwrap(), PointSet { id: "b".into(), ..p });
    }

    #[test]
    fn marginal_validation() {
        assert!(Marginals::new(array![0.5, 0.5], array![1.0]).unwrap().is_balanced());
        assert!(Marginals::new(array![0.0, 1.0], array![1.0]).is_err());
        assert!(Marginals::new(array![f64::NAN], array![1.0]).is_err());
        assert!(!Marginals::new(array![1.0], array![2.0]).unwrap().is_balanced());
    }
}
