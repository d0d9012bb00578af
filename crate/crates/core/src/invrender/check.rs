use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{InverseProblem, LatentMaterial};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TextureKind {
    Albedo,
    Roughness,
    Normal,
}

impl TextureKind {
    pub const ALL: [TextureKind; 3] = [
        TextureKind::Albedo,
        TextureKind::Roughness,
        TextureKind::Normal,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn channels(self) -> usize {
        match self {
            TextureKind::Roughness => 1,
            _ => 3,
        }
    }

    pub fn name(self) -> &'static str {
        ["albedo", "roughness", "normal"][self.index()]
    }
}

/// Analytic and central-difference derivative of the loss with respect to
/// one latent texel channel.
#[derive(Clone, Copy, Debug)]
pub struct GradientSample {
    pub kind: TextureKind,
    pub texel: usize,
    pub channel: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradientSample {
    pub fn relative_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

/// Compares the analytic gradient against central differences with step `h`
/// at random covered texels of one texture, over all views. Samples whose
/// derivatives are both below `1e-12` (e.g. the radial component of a normal
/// parameter) are skipped; up to `8 * count` texels are drawn to collect
/// `count` samples. The denominators are frozen at `latent`, as the analytic
/// gradient treats them as constants.
pub fn finite_difference_check(
    problem: &InverseProblem,
    latent: &LatentMaterial,
    kind: TextureKind,
    count: usize,
    h: f64,
    seed: u64,
) -> Result<Vec<GradientSample>> {
    let views: Vec<usize> = (0..problem.view_count()).collect();
    let base = problem.evaluate(latent, &views, None)?;
    let texels: Vec<usize> = problem.coverage()[kind.index()]
        .iter()
        .enumerate()
        .filter_map(|(i, &c)| c.then_some(i))
        .collect();
    if texels.is_empty() {
        return Err(Error::invalid(format!("no covered {} texels", kind.name())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = kind.channels();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count * 8 {
        if out.len() == count {
            break;
        }
        let texel = texels[rng.gen_range(0..texels.len())];
        let channel = rng.gen_range(0..channels);
        let idx = texel * channels + channel;
        let loss_at = |d: f64| -> Result<f64> {
            let mut l = latent.clone();
            l.slices_mut()[kind.index()][idx] += d;
            Ok(problem.evaluate(&l, &views, Some(&base.denominators))?.loss)
        };
        let numeric = (loss_at(h)? - loss_at(-h)?) / (2.0 * h);
        let analytic = base.gradient.slices()[kind.index()][idx];
        if analytic.abs().max(numeric.abs()) < 1e-12 {
            continue;
        }
        out.push(GradientSample {
            kind,
            texel,
            channel,
            analytic,
            numeric,
        });
    }
    Ok(out)
}
