//! Fit a PCA whitening projection and check the projected covariance.

use dojoba::{whiten_apply, whiten_fit};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> dojoba::Result<()> {
    let (d_in, d_out, n) = (32, 8, 2000);
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mix = DMatrix::<f64>::from_fn(d_in, d_in, |_, _| StandardNormal.sample(&mut rng));
    let xs: Vec<DVector<f64>> = (0..n)
        .map(|_| &mix * DVector::<f64>::from_fn(d_in, |_, _| StandardNormal.sample(&mut rng)))
        .collect();

    let p = whiten_fit(&xs, d_out)?;
    let ys = xs
        .iter()
        .map(|x| whiten_apply(&p, x))
        .collect::<dojoba::Result<Vec<_>>>()?;
    let mean = ys.iter().fold(DVector::zeros(d_out), |a, y| a + y) / n as f64;
    let cov = ys
        .iter()
        .map(|y| (y - &mean) * (y - &mean).transpose())
        .fold(DMatrix::zeros(d_out, d_out), |a, m| a + m)
        / (n as f64 - 1.0);
    println!("{d_in} -> {d_out}");
    println!("component scales {:.4?}", p.scales.as_slice());
    println!(
        "max |cov - I| = {:.2e}",
        (cov - DMatrix::identity(d_out, d_out)).amax()
    );
    Ok(())
}
