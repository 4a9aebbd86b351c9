use num_complex::Complex;

use super::GridCase;
use crate::scalar::Real;

/// Sparse complex bus admittance matrix stored row-wise.
///
/// Every row keeps its diagonal entry (possibly zero) followed by the
/// off-diagonal entries of in-service branches, sorted by column.
#[derive(Debug, Clone, PartialEq)]
pub struct Admittance<T> {
    n: usize,
    rows: Vec<Vec<(usize, Complex<T>)>>,
}

impl<T: Real> Admittance<T> {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[(usize, Complex<T>)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> Complex<T> {
        self.rows[i]
            .iter()
            .find(|(c, _)| *c == j)
            .map(|(_, y)| *y)
            .unwrap_or_else(|| Complex::new(T::zero(), T::zero()))
    }

    /// `Y · v`
    pub fn mul(&self, v: &[Complex<T>]) -> Vec<Complex<T>> {
        self.rows
            .iter()
            .map(|row| {
                row.iter()
                    .fold(Complex::new(T::zero(), T::zero()), |acc, (j, y)| {
                        acc + *y * v[*j]
                    })
            })
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<Complex<T>>> {
        let mut out = vec![vec![Complex::new(T::zero(), T::zero()); self.n]; self.n];
        for (i, row) in self.rows.iter().enumerate() {
            for (j, y) in row {
                out[i][*j] = *y;
            }
        }
        out
    }
}

/// Series admittance `1 / (r + jx)` of a branch.
pub(crate) fn series_admittance<T: Real>(r: f64, x: f64) -> Complex<T> {
    Complex::new(T::one(), T::zero()) / Complex::new(T::lit(r), T::lit(x))
}

/// Assemble the bus admittance matrix for the lines whose status is `true`.
pub fn build_admittance<T: Real>(case: &GridCase, line_status: &[bool]) -> Admittance<T> {
    assert_eq!(
        line_status.len(),
        case.n_line(),
        "line_status length must equal the line count"
    );
    let n = case.n_bus();
    let zero = Complex::new(T::zero(), T::zero());
    let mut rows: Vec<Vec<(usize, Complex<T>)>> = (0..n).map(|i| vec![(i, zero)]).collect();

    fn add<T: Real>(row: &mut Vec<(usize, Complex<T>)>, col: usize, y: Complex<T>) {
        match row.iter_mut().find(|(c, _)| *c == col) {
            Some((_, v)) => *v = *v + y,
            None => row.push((col, y)),
        }
    }

    for (line, _) in case.lines.iter().zip(line_status).filter(|(_, on)| **on) {
        let f = case.bus_pos(line.from_bus);
        let t = case.bus_pos(line.to_bus);
        let y = series_admittance::<T>(line.r, line.x);
        let half_b = Complex::new(T::zero(), T::lit(line.b / 2.0));
        add(&mut rows[f], f, y + half_b);
        add(&mut rows[t], t, y + half_b);
        add(&mut rows[f], t, -y);
        add(&mut rows[t], f, -y);
    }
    for row in &mut rows {
        row[1..].sort_by_key(|(c, _)| *c);
    }
    Admittance { n, rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;
    use crate::grid::{BusKind, BusSpec, GenKind, GeneratorSpec, LineSpec};

    fn two_bus(r: f64, x: f64, b: f64) -> GridCase {
        let bus = |id, kind| BusSpec {
            id,
            kind,
            v_max: 1.05,
            v_min: 0.95,
        };
        GridCase::new(
            100.0,
            vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq)],
            vec![LineSpec {
                from_bus: 1,
                to_bus: 2,
                r,
                x,
                b,
                i_max: 1.0,
            }],
            vec![GeneratorSpec {
                bus: 1,
                kind: GenKind::Balanced,
                p_max: 100.0,
                p_min: 0.0,
                q_max: 100.0,
                q_min: -100.0,
                v_set: 1.0,
                ramp_rate: 0.0,
                c2: 0.0,
                c1: 0.0,
                c0: 0.0,
                c_onoff: 0.0,
            }],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn single_lossless_line() {
        let y = build_admittance::<f64>(&two_bus(0.0, 0.1, 0.0), &[true]).to_dense();
        let expect = [[-10.0, 10.0], [10.0, -10.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!(y[i][j].re.abs() < 1e-15);
                assert!((y[i][j].im - expect[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn all_lines_out_gives_zero_matrix() {
        let case = cases::six_bus();
        let y = build_admittance::<f64>(&case, &vec![false; case.n_line()]);
        assert!(y.to_dense().iter().flatten().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn toggling_a_line_changes_four_entries() {
        let case = cases::six_bus();
        let mut status = vec![true; case.n_line()];
        let full = build_admittance::<f64>(&case, &status).to_dense();
        for l in 0..case.n_line() {
            status[l] = false;
            let cut = build_admittance::<f64>(&case, &status).to_dense();
            status[l] = true;
            let changed = full
                .iter()
                .flatten()
                .zip(cut.iter().flatten())
                .filter(|(a, b)| (**a - **b).norm() > 1e-12)
                .count();
            assert_eq!(changed, 4, "line {l}");
        }
    }

    #[test]
    fn rows_sum_to_shunts() {
        let case = cases::six_bus();
        let y = build_admittance::<f64>(&case, &vec![true; case.n_line()]);
        for i in 0..y.dim() {
            let s: Complex<f64> = y.row(i).iter().map(|(_, v)| *v).sum();
            let bus_id = case.buses[i].id;
            let shunt: f64 = case
                .lines
                .iter()
                .filter(|l| l.from_bus == bus_id || l.to_bus == bus_id)
                .map(|l| l.b / 2.0)
                .sum();
            assert!(s.re.abs() < 1e-12 && (s.im - shunt).abs() < 1e-12);
        }
    }
}
