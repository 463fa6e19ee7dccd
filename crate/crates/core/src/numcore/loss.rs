use alloc::vec;

use super::tensor::Tensor;
use super::NumError;

/// Mean token cross-entropy over positions where `counted[i]` is true.
pub fn cross_entropy(logits: &Tensor, targets: &[usize], counted: &[bool]) -> Result<f64, NumError> {
    cross_entropy_with_grad(logits, targets, counted).map(|(l, _)| l)
}

/// Loss plus its gradient with respect to `logits`. Masked positions get a
/// zero gradient row; with no counted positions the loss is zero.
pub fn cross_entropy_with_grad(
    logits: &Tensor,
    targets: &[usize],
    counted: &[bool],
) -> Result<(f64, Tensor), NumError> {
    let (l, v) = (logits.rows(), logits.cols());
    if targets.len() != l || counted.len() != l {
        return Err(NumError::Shape("targets and mask must match logit rows"));
    }
    let n = counted.iter().filter(|&&c| c).count();
    let mut grad = vec![0.0; l * v];
    if n == 0 {
        return Ok((0.0, Tensor::new(vec![l, v], grad)?));
    }
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    for i in (0..l).filter(|&i| counted[i]) {
        let t = targets[i];
        if t >= v {
            return Err(NumError::Index { index: t, bound: v });
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&x| libm::exp(x - max)).sum();
        let lse = max + libm::log(z);
        loss += lse - row[t];
        let g = &mut grad[i * v..(i + 1) * v];
        for (gv, &x) in g.iter_mut().zip(row) {
            *gv = libm::exp(x - lse) * inv_n;
        }
        g[t] -= inv_n;
    }
    Ok((loss * inv_n, Tensor::new(vec![l, v], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn confident_correct_is_near_zero() {
        let logits = Tensor::from_rows(&[&[30.0, -30.0, -30.0], &[-30.0, -30.0, 30.0]]).unwrap();
        let l = cross_entropy(&logits, &[0, 2], &[true, true]).unwrap();
        assert!(l >= 0.0 && l < 1e-9);
    }

    #[test]
    fn uniform_logits_give_ln_v() {
        let logits = Tensor::zeros(&[3, 4]);
        let l = cross_entropy(&logits, &[0, 1, 3], &[true; 3]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn masked_positions_do_not_count() {
        let logits = Tensor::from_rows(&[&[0.0, 0.0], &[50.0, -50.0]]).unwrap();
        let l = cross_entropy(&logits, &[0, 1], &[true, false]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn matches_log_sum_exp_formula() {
        let mut rng = SeededRng::new(4);
        let data = rng.uniform_vec(15, -3.0, 3.0);
        let logits = Tensor::new(vec![3, 5], data.clone()).unwrap();
        let targets = [4, 0, 2];
        let got = cross_entropy(&logits, &targets, &[true; 3]).unwrap();
        let mut expect = 0.0;
        for i in 0..3 {
            let row = &data[i * 5..(i + 1) * 5];
            let lse = row.iter().map(|x| x.exp()).sum::<f64>().ln();
            expect += lse - row[targets[i]];
        }
        assert!((got - expect / 3.0).abs() < 1e-10);
    }

    #[test]
    fn out_of_range_target() {
        let logits = Tensor::zeros(&[1, 3]);
        assert!(matches!(
            cross_entropy(&logits, &[3], &[true]),
            Err(NumError::Index { index: 3, bound: 3 })
        ));
    }
}
