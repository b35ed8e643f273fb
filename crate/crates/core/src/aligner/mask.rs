use crate::duration::AttentionMatrix;
use crate::error::{contract, Result};

/// Binary band around the diagonal of a `t x s` attention matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidedMask {
    pub t: usize,
    pub s: usize,
    pub bandwidth: usize,
    data: Vec<f64>,
}

impl GuidedMask {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.s + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.s..(i + 1) * self.s]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// `M[i][j] = 1` iff `i*S/T - W <= j <= i*S/T + W`.
pub fn build_guided_mask(t: usize, s: usize, w: usize) -> GuidedMask {
    band_mask(t, s, w, 0, s, t)
}

/// Chunk-local band: row `i` is centred at `offset + i * num / den`.
pub fn band_mask(rows: usize, cols: usize, w: usize, offset: usize, num: usize, den: usize) -> GuidedMask {
    let den_i = den.max(1) as i128;
    let mut data = vec![0.0; rows * cols];
    for i in 0..rows {
        let centre = offset as i128 * den_i + i as i128 * num as i128;
        let lo = centre - w as i128 * den_i;
        let hi = centre + w as i128 * den_i;
        for j in 0..cols {
            let x = j as i128 * den_i;
            if x >= lo && x <= hi {
                data[i * cols + j] = 1.0;
            }
        }
    }
    GuidedMask {
        t: rows,
        s: cols,
        bandwidth: w,
        data,
    }
}

/// `-mean(M * A)` over all entries.
pub fn guided_loss(a: &AttentionMatrix, m: &GuidedMask) -> Result<f64> {
    if a.t != m.t || a.s != m.s {
        return Err(contract(format!(
            "attention is {}x{} but mask is {}x{}",
            a.t, a.s, m.t, m.s
        )));
    }
    let total: f64 = a.data.iter().zip(&m.data).map(|(x, y)| x * y).sum();
    Ok(-total / (a.t * a.s) as f64)
}
