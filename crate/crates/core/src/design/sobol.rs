//! Gray-code Sobol sequence generator over Joe-Kuo direction numbers.

use nalgebra::DMatrix;

use super::joe_kuo::{JOE_KUO, MAX_DIMENSION};
use crate::error::{Error, Result};

const BITS: usize = 32;

/// 32-bit direction numbers for one coordinate of the sequence.
///
/// `dim_index` is zero-based: index 0 is the van der Corput coordinate,
/// index j >= 1 uses the Joe-Kuo primitive polynomial of sequence
/// dimension j + 1.
fn direction_numbers(dim_index: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim_index == 0 {
        for (c, slot) in v.iter_mut().enumerate() {
            *slot = 1 << (31 - c);
        }
        return v;
    }
    let (s, a, m) = JOE_KUO[dim_index - 1];
    let s = s as usize;
    for c in 0..s.min(BITS) {
        v[c] = m[c] << (31 - c);
    }
    for c in s..BITS {
        // Classic recurrence: v_c = v_{c-s} xor (v_{c-s} >> s) xor the
        // polynomial-coefficient terms a_k * v_{c-k}.
        let mut val = v[c - s] ^ (v[c - s] >> s);
        for k in 1..s {
            if (a >> (s - 1 - k)) & 1 == 1 {
                val ^= v[c - k];
            }
        }
        v[c] = val;
    }
    v
}

/// Generates `n` consecutive points of the `dim`-dimensional Sobol sequence
/// after discarding the first `skip` points.
///
/// Points are returned as an n-by-dim matrix with entries in [0, 1). The
/// sequence is the plain (unscrambled) one, so identical arguments always
/// produce identical output. `skip = 1` drops the all-zeros point at index 0.
pub fn sobol_points(dim: usize, n: usize, skip: u64) -> Result<DMatrix<f64>> {
    if dim == 0 {
        return Err(Error::Config("Sobol dimension must be at least 1".into()));
    }
    if dim > MAX_DIMENSION {
        return Err(Error::UnsupportedDimension {
            dim,
            max: MAX_DIMENSION,
        });
    }
    let end = (n as u64)
        .checked_add(skip)
        .filter(|&e| e < 1u64 << BITS)
        .ok_or_else(|| {
            Error::Config(format!(
                "n + skip = {} + {} exceeds the 2^32 generator period",
                n, skip
            ))
        })?;
    let mut out = DMatrix::zeros(n, dim);
    if n == 0 {
        return Ok(out);
    }

    let dirs: Vec<[u32; BITS]> = (0..dim).map(direction_numbers).collect();
    // Jump straight to index `skip`: the Gray-code construction gives
    // x_m = xor of v_b over the set bits b of gray(m).
    let mut state = vec![0u32; dim];
    let mut gray = skip ^ (skip >> 1);
    let mut bit = 0;
    while gray != 0 {
        if gray & 1 == 1 {
            for (j, s) in state.iter_mut().enumerate() {
                *s ^= dirs[j][bit];
            }
        }
        gray >>= 1;
        bit += 1;
    }

    let scale = (2f64).powi(-(BITS as i32));
    for (row, index) in (skip..end).enumerate() {
        for j in 0..dim {
            out[(row, j)] = state[j] as f64 * scale;
        }
        // Step to the next index: flip the direction number selected by the
        // lowest zero bit of the current index.
        let c = index.trailing_ones() as usize;
        if c < BITS {
            for (j, s) in state.iter_mut().enumerate() {
                *s ^= dirs[j][c];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_point_after_zero_is_one_half() {
        let pts = sobol_points(1, 1, 1).unwrap();
        assert_eq!(pts.nrows(), 1);
        assert_eq!(pts[(0, 0)], 0.5);
    }

    #[test]
    fn zero_length_request_is_empty() {
        let pts = sobol_points(3, 0, 0).unwrap();
        assert_eq!(pts.nrows(), 0);
        assert_eq!(pts.ncols(), 3);
    }

    #[test]
    fn two_dimensional_golden_points() {
        // First four nonzero points of the standard 2-D sequence, frozen from
        // an independent reference generator.
        let pts = sobol_points(2, 4, 1).unwrap();
        let expect = [(0.5, 0.5), (0.75, 0.25), (0.25, 0.75), (0.375, 0.375)];
        for (i, (a, b)) in expect.iter().enumerate() {
            assert_eq!(pts[(i, 0)], *a, "row {i} col 0");
            assert_eq!(pts[(i, 1)], *b, "row {i} col 1");
        }
    }

    #[test]
    fn five_dimensional_golden_points() {
        let pts = sobol_points(5, 4, 0).unwrap();
        let expect = [
            [0.0, 0.0, 0.0, 0.0, 0.0],
            [0.5, 0.5, 0.5, 0.5, 0.5],
            [0.75, 0.25, 0.25, 0.25, 0.75],
            [0.25, 0.75, 0.75, 0.75, 0.25],
        ];
        for (i, row) in expect.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(pts[(i, j)], *v, "row {i} col {j}");
            }
        }
    }

    #[test]
    fn three_dimensional_golden_points_with_skip() {
        // Points 4..8 of the 3-D sequence, frozen from the same reference.
        let pts = sobol_points(3, 4, 4).unwrap();
        let expect = [
            [0.375, 0.375, 0.625],
            [0.875, 0.875, 0.125],
            [0.625, 0.125, 0.875],
            [0.125, 0.625, 0.375],
        ];
        for (i, row) in expect.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(pts[(i, j)], *v, "row {i} col {j}");
            }
        }
    }

    #[test]
    fn skip_agrees_with_sequential_generation() {
        let all = sobol_points(7, 40, 0).unwrap();
        let tail = sobol_points(7, 25, 15).unwrap();
        for i in 0..25 {
            for j in 0..7 {
                assert_eq!(tail[(i, j)], all[(i + 15, j)]);
            }
        }
    }

    #[test]
    fn maximum_dimension_is_supported() {
        let pts = sobol_points(MAX_DIMENSION, 3, 1).unwrap();
        assert_eq!(pts.ncols(), MAX_DIMENSION);
        assert!(pts.iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn dimension_beyond_table_is_rejected() {
        match sobol_points(MAX_DIMENSION + 1, 1, 0) {
            Err(Error::UnsupportedDimension { dim, max }) => {
                assert_eq!(dim, MAX_DIMENSION + 1);
                assert_eq!(max, MAX_DIMENSION);
            }
            other => panic!("expected UnsupportedDimension, got {other:?}"),
        }
    }

    #[test]
    fn period_overflow_is_rejected() {
        assert!(matches!(
            sobol_points(2, 2, u64::MAX - 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            sobol_points(2, 1, (1 << 32) - 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dyadic_balance_of_elementary_intervals() {
        // (t,m,s)-net property, checked coarsely: for n = 2^m points and any
        // split of one axis into 2^m dyadic cells, every cell holds exactly
        // one point (1-D projection balance), and 2-D cells at level m/2 hold
        // the balanced count.
        for dim in 1..=3usize {
            let m = 6;
            let n = 1usize << m;
            let pts = sobol_points(dim, n, 0).unwrap();
            for j in 0..dim {
                let mut counts = vec![0usize; n];
                for i in 0..n {
                    let cell = (pts[(i, j)] * n as f64) as usize;
                    counts[cell] += 1;
                }
                assert!(counts.iter().all(|&c| c == 1), "dim {dim} axis {j}");
            }
        }
        // Level-3 x level-3 boxes of the 2-D sequence with 2^6 points: one
        // point per box.
        let pts = sobol_points(2, 64, 0).unwrap();
        let mut counts = vec![0usize; 64];
        for i in 0..64 {
            let cx = (pts[(i, 0)] * 8.0) as usize;
            let cy = (pts[(i, 1)] * 8.0) as usize;
            counts[cx * 8 + cy] += 1;
        }
        assert!(counts.iter().all(|&c| c == 1));
    }
}
