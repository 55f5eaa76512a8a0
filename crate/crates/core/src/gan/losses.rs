use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialKind {
    #[default]
    LeastSquares,
    Nonsaturating,
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

fn check_finite(t: &Tensor) -> Result<()> {
    let v = scalar(&t.sum_all()?)?;
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteScores)
    }
}

/// `(discriminator loss, generator loss)` for raw (pre-activation) scores.
pub fn adversarial_losses(
    scores_real: &Tensor,
    scores_fake: &Tensor,
    kind: AdversarialKind,
) -> Result<(Tensor, Tensor)> {
    if scores_real.dims() != scores_fake.dims() {
        return Err(Error::shape(scores_real.dims(), scores_fake.dims()));
    }
    check_finite(scores_real)?;
    check_finite(scores_fake)?;
    let d = discriminator_loss(scores_real, scores_fake, kind)?;
    let g = generator_loss(scores_fake, kind)?;
    Ok((d, g))
}

pub fn discriminator_loss(real: &Tensor, fake: &Tensor, kind: AdversarialKind) -> Result<Tensor> {
    Ok(match kind {
        AdversarialKind::LeastSquares => {
            ((real - 1.0)?.sqr()?.mean_all()? * 0.5)?.add(&(fake.sqr()?.mean_all()? * 0.5)?)?
        }
        AdversarialKind::Nonsaturating => {
            softplus(&real.neg()?)?.mean_all()?.add(&softplus(fake)?.mean_all()?)?
        }
    })
}

pub fn generator_loss(fake: &Tensor, kind: AdversarialKind) -> Result<Tensor> {
    Ok(match kind {
        AdversarialKind::LeastSquares => ((fake - 1.0)?.sqr()?.mean_all()? * 0.5)?,
        AdversarialKind::Nonsaturating => softplus(&fake.neg()?)?.mean_all()?,
    })
}

/// `(lambda_img * mean|x - x_rec|, lambda_z * mean|z - z_rec|)`.
pub fn cycle_losses(
    x: &Tensor,
    x_rec: &Tensor,
    z: &Tensor,
    z_rec: &Tensor,
    lambda_img: f64,
    lambda_z: f64,
) -> Result<(Tensor, Tensor)> {
    if x.dims() != x_rec.dims() {
        return Err(Error::shape(x.dims(), x_rec.dims()));
    }
    if z.dims() != z_rec.dims() {
        return Err(Error::shape(z.dims(), z_rec.dims()));
    }
    let img = ((x - x_rec)?.abs()?.mean_all()? * lambda_img)?;
    let lat = ((z - z_rec)?.abs()?.mean_all()? * lambda_z)?;
    Ok((img, lat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn full(v: f64, n: usize) -> Tensor {
        Tensor::full(v, (n,), &Device::Cpu).unwrap()
    }

    #[test]
    fn least_squares_closed_forms() {
        let (d, g) = adversarial_losses(&full(1.0, 5), &full(0.0, 5), AdversarialKind::LeastSquares).unwrap();
        assert_eq!((scalar(&d).unwrap(), scalar(&g).unwrap()), (0.0, 0.5));
        let (d, g) = adversarial_losses(&full(0.0, 5), &full(1.0, 5), AdversarialKind::LeastSquares).unwrap();
        assert_eq!((scalar(&d).unwrap(), scalar(&g).unwrap()), (1.0, 0.0));
    }

    #[test]
    fn nonsaturating_closed_form() {
        let (d, g) = adversarial_losses(&full(0.0, 3), &full(0.0, 3), AdversarialKind::Nonsaturating).unwrap();
        let ln2 = 2f64.ln();
        assert!((scalar(&d).unwrap() - 2.0 * ln2).abs() < 1e-12);
        assert!((scalar(&g).unwrap() - ln2).abs() < 1e-12);
        // large scores do not overflow
        let (d, _) = adversarial_losses(&full(1e4, 2), &full(-1e4, 2), AdversarialKind::Nonsaturating).unwrap();
        assert!(scalar(&d).unwrap().abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(adversarial_losses(&full(0.0, 3), &full(0.0, 2), AdversarialKind::LeastSquares).is_err());
        assert!(matches!(
            adversarial_losses(&full(f64::NAN, 2), &full(0.0, 2), AdversarialKind::LeastSquares),
            Err(Error::NonFiniteScores)
        ));
    }

    #[test]
    fn cycle_examples() {
        let dev = Device::Cpu;
        let x = Tensor::rand(0f32, 1., (1, 12, 120, 120), &dev).unwrap();
        let z = Tensor::randn(0f32, 1., (1, 16), &dev).unwrap();
        let (i, l) = cycle_losses(&x, &x, &z, &z, 10.0, 0.1).unwrap();
        assert_eq!((scalar(&i).unwrap(), scalar(&l).unwrap()), (0.0, 0.0));

        let zeros = Tensor::zeros((1, 12, 120, 120), DType::F64, &dev).unwrap();
        let mut v = vec![0f64; 12 * 120 * 120];
        v[777] = 1.0;
        let one = Tensor::from_vec(v, (1, 12, 120, 120), &dev).unwrap();
        let zz = Tensor::zeros((1, 16), DType::F64, &dev).unwrap();
        let (i, _) = cycle_losses(&zeros, &one, &zz, &zz, 10.0, 0.1).unwrap();
        assert!((scalar(&i).unwrap() - 10.0 / (12.0 * 120.0 * 120.0)).abs() < 1e-15);
        assert!(cycle_losses(&x, &zeros.narrow(3, 0, 60).unwrap(), &z, &z, 1.0, 1.0).is_err());
    }

    #[test]
    fn cycle_matches_reference_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 2 * 3 * 5 * 5;
        let a: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let za: Vec<f64> = (0..8).map(|_| rng.random()).collect();
        let zb: Vec<f64> = (0..8).map(|_| rng.random()).collect();
        let t = |v: &Vec<f64>, s: &[usize]| Tensor::from_vec(v.clone(), s, &Device::Cpu).unwrap();
        let (i, l) = cycle_losses(&t(&a, &[2, 3, 5, 5]), &t(&b, &[2, 3, 5, 5]), &t(&za, &[2, 4]), &t(&zb, &[2, 4]), 10.0, 0.1).unwrap();
        let mut ri = 0.0;
        for k in 0..n {
            ri += (a[k] - b[k]).abs();
        }
        let mut rl = 0.0;
        for k in 0..8 {
            rl += (za[k] - zb[k]).abs();
        }
        assert!((scalar(&i).unwrap() - 10.0 * ri / n as f64).abs() < 1e-7);
        assert!((scalar(&l).unwrap() - 0.1 * rl / 8.0).abs() < 1e-7);
    }
}
