//! Guided Euler sampling: two-pass CFG teacher and single-pass distilled student.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::nn::{cast, Model, NetBatch, Real, VelocityNet};
use crate::rng::Rng;
use crate::types::IntentClass;

/// Per-sample conditioning rows (scene features and memory read).
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning<T> {
    pub scene: Array2<T>,
    pub memory: Array2<T>,
}

fn to_rows<T: Real>(rows: &[&[f64]]) -> Array2<T> {
    let cols = rows.first().map_or(0, |r| r.len());
    Array2::from_shape_fn((rows.len(), cols), |(i, j)| cast(rows[i][j]))
}

impl<T: Real> Conditioning<T> {
    pub fn single(scene: &[f64], memory: &[f64]) -> Self {
        Self::batch(&[scene], &[memory])
    }

    pub fn batch(scenes: &[&[f64]], memories: &[&[f64]]) -> Self {
        Self { scene: to_rows(scenes), memory: to_rows(memories) }
    }

    pub fn len(&self) -> usize {
        self.scene.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.scene.nrows() == 0
    }

    /// The same conditioning stacked twice, for one fused cond+uncond forward.
    fn doubled(&self) -> Self {
        let cat = |a: &Array2<T>| ndarray::concatenate(ndarray::Axis(0), &[a.view(), a.view()]).unwrap();
        Self { scene: cat(&self.scene), memory: cat(&self.memory) }
    }
}

/// `v_u + w (v_c - v_u)`.
pub fn cfg_combine<T: Real>(v_cond: &Array2<T>, v_uncond: &Array2<T>, w: T) -> Array2<T> {
    let mut out = v_cond - v_uncond;
    out *= w;
    out += v_uncond;
    out
}

fn batch_of<T: Real>(x: &Array2<T>, t: T, cond: &Conditioning<T>, e: Array2<T>) -> NetBatch<T> {
    NetBatch {
        x: x.clone(),
        t: Array1::from_elem(x.nrows(), t),
        scene: cond.scene.clone(),
        memory: cond.memory.clone(),
        intent: e,
    }
}

/// Guided velocity from two net forwards per sample.
#[allow(clippy::too_many_arguments)]
pub fn cfg_velocity<T: Real>(
    net: &VelocityNet<T>,
    x_t: &Array2<T>,
    t: T,
    cond: &Conditioning<T>,
    e_cond: &Array2<T>,
    e_uncond: &Array2<T>,
    w: f64,
) -> Result<Array2<T>> {
    if !(w >= 0.0) {
        return Err(Error::InvalidConfig(format!("guidance scale {w} must be >= 0")));
    }
    let vc = net.forward(&batch_of(x_t, t, cond, e_cond.clone()))?;
    let vu = net.forward(&batch_of(x_t, t, cond, e_uncond.clone()))?;
    Ok(cfg_combine(&vc, &vu, cast(w)))
}

/// Forward Euler from `t = 1` to `t = 0` with velocities at `t = 1 - i/N`.
pub fn euler_rollout<T, F>(x_start: Array2<T>, n_steps: usize, mut velocity: F) -> Result<Array2<T>>
where
    T: Real,
    F: FnMut(&Array2<T>, T, usize) -> Result<Array2<T>>,
{
    if n_steps == 0 {
        return Err(Error::InvalidConfig("euler steps must be >= 1".into()));
    }
    let dt: T = cast(-1.0 / n_steps as f64);
    let mut x = x_start;
    for i in 0..n_steps {
        let t: T = cast(1.0 - i as f64 / n_steps as f64);
        let v = velocity(&x, t, i)?;
        if v.shape() != x.shape() {
            return Err(Error::ShapeMismatch { expected: x.len(), got: v.len() });
        }
        if v.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFiniteVelocity { step: i });
        }
        x.scaled_add(dt, &v);
    }
    Ok(x)
}

pub fn draw_noise<T: Real>(rows: usize, cols: usize, rng: &mut Rng) -> Array2<T> {
    let v = crate::rng::normal_vec(rng, rows * cols);
    Array2::from_shape_fn((rows, cols), |(i, j)| cast(v[i * cols + j]))
}

/// Teacher guided velocity at `(x, t)`; one fused forward of `2B` rows.
pub fn teacher_velocity<T: Real>(
    model: &Model<T>,
    x: &Array2<T>,
    t: T,
    cond2: &Conditioning<T>,
    e_both: &Array2<T>,
    w: f64,
) -> Result<Array2<T>> {
    let b = x.nrows();
    let x2 = ndarray::concatenate(ndarray::Axis(0), &[x.view(), x.view()]).unwrap();
    let v = model.net.forward(&batch_of(&x2, t, cond2, e_both.clone()))?;
    let vc = v.slice(ndarray::s![..b, ..]).to_owned();
    let vu = v.slice(ndarray::s![b.., ..]).to_owned();
    Ok(cfg_combine(&vc, &vu, cast(w)))
}

/// Stacked `[e(k_1..k_B); e(K) x B]`.
pub fn teacher_embeddings<T: Real>(model: &Model<T>, intents: &[IntentClass]) -> Result<Array2<T>> {
    let mut ks = intents.to_vec();
    ks.extend(std::iter::repeat_n(IntentClass::UNCOND, intents.len()));
    model.embedder.embed_batch(&ks)
}

/// Two-pass CFG sampling from given initial noise: `2 N B` net forwards.
pub fn sample_from_noise<T: Real>(
    model: &Model<T>,
    cond: &Conditioning<T>,
    intents: &[IntentClass],
    w: f64,
    n_steps: usize,
    noise: Array2<T>,
) -> Result<Array2<T>> {
    if !(w >= 0.0) {
        return Err(Error::InvalidConfig(format!("guidance scale {w} must be >= 0")));
    }
    check_intents(intents, cond)?;
    let e = teacher_embeddings(model, intents)?;
    let cond2 = cond.doubled();
    euler_rollout(noise, n_steps, |x, t, _| teacher_velocity(model, x, t, &cond2, &e, w))
}

/// Single-pass sampling with the distilled embedder: `N B` net forwards.
pub fn distilled_from_noise<T: Real>(
    model: &Model<T>,
    cond: &Conditioning<T>,
    intents: &[IntentClass],
    n_steps: usize,
    noise: Array2<T>,
) -> Result<Array2<T>> {
    check_intents(intents, cond)?;
    let student = model
        .distilled
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("checkpoint has no distilled embedder".into()))?;
    let e = student.forward_batch(intents)?;
    euler_rollout(noise, n_steps, |x, t, _| model.net.forward(&batch_of(x, t, cond, e.clone())))
}

fn check_intents<T: Real>(intents: &[IntentClass], cond: &Conditioning<T>) -> Result<()> {
    if intents.len() != cond.len() {
        return Err(Error::ShapeMismatch { expected: cond.len(), got: intents.len() });
    }
    if intents.iter().any(|k| k.is_uncond()) {
        return Err(Error::InvalidIntent);
    }
    Ok(())
}

pub fn sample<T: Real>(
    model: &Model<T>,
    cond: &Conditioning<T>,
    intents: &[IntentClass],
    w: f64,
    n_steps: usize,
    rng: &mut Rng,
) -> Result<Array2<T>> {
    let noise = draw_noise(intents.len(), model.config.chunk_dim(), rng);
    sample_from_noise(model, cond, intents, w, n_steps, noise)
}

pub fn sample_distilled<T: Real>(
    model: &Model<T>,
    cond: &Conditioning<T>,
    intents: &[IntentClass],
    n_steps: usize,
    rng: &mut Rng,
) -> Result<Array2<T>> {
    let noise = draw_noise(intents.len(), model.config.chunk_dim(), rng);
    distilled_from_noise(model, cond, intents, n_steps, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ModelConfig;
    use rand::SeedableRng;

    fn small() -> ModelConfig {
        ModelConfig {
            hidden: 8,
            intent_embed_inner: 8,
            scene_dim: 4,
            chunk_len: 3,
            memory_capacity: 8,
            ..ModelConfig::default()
        }
    }

    fn cond(cfg: &ModelConfig, b: usize, rng: &mut Rng) -> Conditioning<f64> {
        Conditioning {
            scene: draw_noise(b, cfg.scene_dim, rng),
            memory: draw_noise(b, cfg.hidden, rng),
        }
    }

    #[test]
    fn combine_arithmetic() {
        let c = Array2::from_elem((1, 1), 2.0);
        let u = Array2::from_elem((1, 1), 1.0);
        assert_eq!(cfg_combine(&c, &u, 1.5)[[0, 0]], 2.5);
        assert_eq!(cfg_combine(&c, &u, 1.0), c);
        assert_eq!(cfg_combine(&c, &u, 0.0), u);
    }

    #[test]
    fn constant_field_rollout() {
        for n in [1, 2, 8, 64] {
            let x: Array2<f64> = Array2::from_shape_vec((1, 3), vec![0.3, -1.0, 2.0]).unwrap();
            let c = Array2::from_shape_vec((1, 3), vec![1.0, 2.0, -0.5]).unwrap();
            let out = euler_rollout(x.clone(), n, |_, _, _| Ok(c.clone())).unwrap();
            let expect = &x - &c;
            for (a, b) in out.iter().zip(expect.iter()) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn left_endpoint_grid() {
        let mut ts = Vec::new();
        euler_rollout(Array2::<f64>::zeros((1, 1)), 4, |x, t, _| {
            ts.push(t);
            Ok(x.clone())
        })
        .unwrap();
        assert_eq!(ts, vec![1.0, 0.75, 0.5, 0.25]);
    }

    #[test]
    fn non_finite_velocity_aborts() {
        let r = euler_rollout(Array2::<f64>::zeros((1, 1)), 3, |_, _, i| {
            Ok(Array2::from_elem((1, 1), if i == 1 { f64::NAN } else { 0.0 }))
        });
        assert!(matches!(r, Err(Error::NonFiniteVelocity { step: 1 })));
    }

    #[test]
    fn forward_accounting() {
        let cfg = small();
        let mut m = Model::<f64>::new(&cfg).unwrap();
        let mut r = Rng::seed_from_u64(0);
        let c = cond(&cfg, 3, &mut r);
        let ks = [IntentClass::CRUISING, IntentClass::U_TURN, IntentClass::PARKING];
        for n in [1, 2, 5] {
            m.net.reset_forward_count();
            sample(&m, &c, &ks, 1.5, n, &mut r).unwrap();
            assert_eq!(m.net.forward_count(), 2 * n * ks.len());
        }
        m.distilled = Some(crate::distill::warm_start(&m, 1.5));
        for n in [1, 2, 5] {
            m.net.reset_forward_count();
            sample_distilled(&m, &c, &ks, n, &mut r).unwrap();
            assert_eq!(m.net.forward_count(), n * ks.len());
        }
    }

    #[test]
    fn zero_guidance_ignores_intent() {
        let cfg = small();
        let m = Model::<f64>::new(&cfg).unwrap();
        let mut r = Rng::seed_from_u64(1);
        let c = cond(&cfg, 1, &mut r);
        let noise: Array2<f64> = draw_noise(1, cfg.chunk_dim(), &mut r);
        let a = sample_from_noise(&m, &c, &[IntentClass::TURNING_LEFT], 0.0, 2, noise.clone()).unwrap();
        let b = sample_from_noise(&m, &c, &[IntentClass::TURNING_RIGHT], 0.0, 2, noise.clone()).unwrap();
        assert_eq!(a, b);
        let d = sample_from_noise(&m, &c, &[IntentClass::TURNING_LEFT], 1.5, 2, noise).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn rejects_uncond_request() {
        let cfg = small();
        let m = Model::<f64>::new(&cfg).unwrap();
        let mut r = Rng::seed_from_u64(1);
        let c = cond(&cfg, 1, &mut r);
        assert!(matches!(
            sample(&m, &c, &[IntentClass::UNCOND], 1.5, 2, &mut r),
            Err(Error::InvalidIntent)
        ));
    }
}
