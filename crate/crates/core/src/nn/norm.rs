//! Normalization kernels shared by layer norm, batch norm and the decomposed
//! (centering-only / scaling-only / mixed-axis) variants.
//!
//! A batch `x` of shape `[N, F]` is normalized as
//! `y = (x - m_g) * s_h` where `m_g` is the mean over the centering group of
//! each element and `s_h = (var_h + eps)^(-1/2)` uses the variance over its
//! scaling group. Either part may be absent.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Grouping {
    /// One group per sample, over all of its features (layer-norm axis).
    Sample,
    /// One group per unit (feature, or channel for image features), over the
    /// batch and spatial positions (batch-norm axis).
    Unit,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub batch: usize,
    pub features: usize,
    /// Spatial positions per channel; 1 for flat features.
    pub spatial: usize,
}

impl Layout {
    pub fn units(&self) -> usize {
        self.features / self.spatial
    }

    fn groups(&self, g: Grouping) -> usize {
        match g {
            Grouping::Sample => self.batch,
            Grouping::Unit => self.units(),
        }
    }

    fn group_size(&self, g: Grouping) -> f64 {
        match g {
            Grouping::Sample => self.features as f64,
            Grouping::Unit => (self.batch * self.spatial) as f64,
        }
    }

    #[inline]
    fn group(&self, g: Grouping, n: usize, f: usize) -> usize {
        match g {
            Grouping::Sample => n,
            Grouping::Unit => f / self.spatial,
        }
    }
}

/// Per-group mean and biased variance.
pub(crate) fn group_stats(x: &[f64], layout: Layout, g: Grouping) -> (Vec<f64>, Vec<f64>) {
    let groups = layout.groups(g);
    let size = layout.group_size(g);
    let mut mean = vec![0.0; groups];
    for n in 0..layout.batch {
        let row = &x[n * layout.features..(n + 1) * layout.features];
        for (f, &v) in row.iter().enumerate() {
            mean[layout.group(g, n, f)] += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= size);
    let mut var = vec![0.0; groups];
    for n in 0..layout.batch {
        let row = &x[n * layout.features..(n + 1) * layout.features];
        for (f, &v) in row.iter().enumerate() {
            let gi = layout.group(g, n, f);
            let d = v - mean[gi];
            var[gi] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= size);
    (mean, var)
}

#[derive(Clone, Debug)]
pub(crate) struct NormCache {
    pub center: Option<(Grouping, Vec<f64>)>,
    /// Grouping, per-group mean and per-group inverse std.
    pub scale: Option<(Grouping, Vec<f64>, Vec<f64>)>,
    /// Output before any affine transform.
    pub normalized: Vec<f64>,
}

pub(crate) fn normalize(
    x: &[f64],
    layout: Layout,
    center: Option<Grouping>,
    scale: Option<Grouping>,
    eps: f64,
) -> NormCache {
    let center = center.map(|g| (g, group_stats(x, layout, g).0));
    let scale = scale.map(|g| {
        let (mean, var) = group_stats(x, layout, g);
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        (g, mean, inv)
    });
    let mut normalized = x.to_vec();
    for n in 0..layout.batch {
        for f in 0..layout.features {
            let e = n * layout.features + f;
            let mut v = x[e];
            if let Some((g, m)) = &center {
                v -= m[layout.group(*g, n, f)];
            }
            if let Some((h, _, s)) = &scale {
                v *= s[layout.group(*h, n, f)];
            }
            normalized[e] = v;
        }
    }
    NormCache {
        center,
        scale,
        normalized,
    }
}

/// Gradient with respect to `x` given the gradient with respect to the
/// normalized output.
pub(crate) fn normalize_backward(x: &[f64], layout: Layout, cache: &NormCache, dy: &[f64]) -> Vec<f64> {
    let feats = layout.features;
    let s_of = |n: usize, f: usize| match &cache.scale {
        Some((h, _, s)) => s[layout.group(*h, n, f)],
        None => 1.0,
    };
    let c_of = |n: usize, f: usize| {
        let v = x[n * feats + f];
        match &cache.center {
            Some((g, m)) => v - m[layout.group(*g, n, f)],
            None => v,
        }
    };

    let mut dx = vec![0.0; x.len()];
    for n in 0..layout.batch {
        for f in 0..feats {
            let e = n * feats + f;
            dx[e] = dy[e] * s_of(n, f);
        }
    }

    if let Some((g, _)) = &cache.center {
        let mut acc = vec![0.0; layout.groups(*g)];
        for n in 0..layout.batch {
            for f in 0..feats {
                acc[layout.group(*g, n, f)] += dy[n * feats + f] * s_of(n, f);
            }
        }
        let size = layout.group_size(*g);
        for n in 0..layout.batch {
            for f in 0..feats {
                dx[n * feats + f] -= acc[layout.group(*g, n, f)] / size;
            }
        }
    }

    if let Some((h, mean, s)) = &cache.scale {
        let mut acc = vec![0.0; layout.groups(*h)];
        for n in 0..layout.batch {
            for f in 0..feats {
                acc[layout.group(*h, n, f)] += dy[n * feats + f] * c_of(n, f);
            }
        }
        let size = layout.group_size(*h);
        for n in 0..layout.batch {
            for f in 0..feats {
                let hi = layout.group(*h, n, f);
                let s3 = s[hi] * s[hi] * s[hi];
                dx[n * feats + f] -= s3 / size * (x[n * feats + f] - mean[hi]) * acc[hi];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss(y: &[f64], w: &[f64]) -> f64 {
        y.iter().zip(w).map(|(a, b)| a * b + 0.5 * a * a * b).sum()
    }

    #[test]
    fn backward_matches_finite_differences_for_all_axis_pairs() {
        let layout = Layout {
            batch: 3,
            features: 6,
            spatial: 2,
        };
        let x: Vec<f64> = (0..18).map(|i| ((i * 7 % 11) as f64 * 0.37).sin() * 2.0 + 0.3).collect();
        let w: Vec<f64> = (0..18).map(|i| ((i * 5 % 13) as f64 * 0.21).cos()).collect();
        let axes = [None, Some(Grouping::Sample), Some(Grouping::Unit)];
        for c in axes {
            for s in axes {
                let cache = normalize(&x, layout, c, s, 1e-5);
                let dy: Vec<f64> = cache.normalized.iter().zip(&w).map(|(a, b)| b + a * b).collect();
                let dx = normalize_backward(&x, layout, &cache, &dy);
                let h = 1e-6;
                for e in 0..x.len() {
                    let mut xp = x.clone();
                    xp[e] += h;
                    let mut xm = x.clone();
                    xm[e] -= h;
                    let lp = loss(&normalize(&xp, layout, c, s, 1e-5).normalized, &w);
                    let lm = loss(&normalize(&xm, layout, c, s, 1e-5).normalized, &w);
                    let fd = (lp - lm) / (2.0 * h);
                    assert!((fd - dx[e]).abs() < 1e-7, "axes {c:?}/{s:?} elem {e}: {fd} vs {}", dx[e]);
                }
            }
        }
    }

    #[test]
    fn layer_norm_axis_gives_unit_sample_stats() {
        let layout = Layout {
            batch: 2,
            features: 5,
            spatial: 1,
        };
        let x = [1.0, 4.0, -2.0, 0.5, 3.0, 10.0, 11.0, 9.0, 12.0, 8.5];
        let y = normalize(&x, layout, Some(Grouping::Sample), Some(Grouping::Sample), 1e-12).normalized;
        for n in 0..2 {
            let row = &y[n * 5..n * 5 + 5];
            let m: f64 = row.iter().sum::<f64>() / 5.0;
            let v: f64 = row.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 5.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-10);
        }
    }
}
