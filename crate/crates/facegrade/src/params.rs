//! Named parameter storage, the Adam update, and gradient checking.
//!
//! A [`ParamStore`] owns every learnable matrix of a model, keyed by name but
//! addressed by insertion index so iteration order is deterministic. Each
//! entry carries its gradient accumulator and the two Adam moment buffers,
//! all shaped identically to the value.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Adam hyperparameters. Defaults are the conventional ones.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct Entry {
    name: String,
    value: Matrix,
    grad: Matrix,
    m: Matrix,
    v: Matrix,
}

/// Insertion-ordered collection of named parameters with optimizer state.
#[derive(Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Registers a parameter; gradient and moments start at zero. Errors on a
    /// duplicate name.
    pub fn insert(&mut self, name: &str, value: Matrix) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::Parameter(format!("duplicate parameter {name:?}")));
        }
        let (r, c) = value.shape();
        self.entries.push(Entry {
            name: name.to_string(),
            grad: Matrix::zeros(r, c),
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
            value,
        });
        let idx = self.entries.len() - 1;
        self.index.insert(name.to_string(), idx);
        Ok(idx)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of scalar entries across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.entries[idx].name
    }

    pub fn value(&self, idx: usize) -> &Matrix {
        &self.entries[idx].value
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Matrix {
        &mut self.entries[idx].value
    }

    pub fn value_by_name(&self, name: &str) -> Option<&Matrix> {
        self.index_of(name).map(|i| self.value(i))
    }

    pub fn grad(&self, idx: usize) -> &Matrix {
        &self.entries[idx].grad
    }

    pub fn grad_mut(&mut self, idx: usize) -> &mut Matrix {
        &mut self.entries[idx].grad
    }

    /// Optimizer step counter; 0 until the first [`ParamStore::adam_step`].
    pub fn step(&self) -> u64 {
        self.step
    }

    /// First Adam moment, exposed for inspection in tests.
    pub fn moment1(&self, idx: usize) -> &Matrix {
        &self.entries[idx].m
    }

    pub fn moment2(&self, idx: usize) -> &Matrix {
        &self.entries[idx].v
    }

    pub fn iter_named(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    /// Adds `delta` into the gradient accumulator; shapes must match.
    pub fn accumulate_grad(&mut self, idx: usize, delta: &Matrix) -> Result<()> {
        let e = &mut self.entries[idx];
        if e.grad.shape() != delta.shape() {
            return Err(Error::Shape {
                op: "accumulate_grad",
                lhs_rows: e.grad.rows(),
                lhs_cols: e.grad.cols(),
                rhs_rows: delta.rows(),
                rhs_cols: delta.cols(),
            });
        }
        e.grad = e.grad.add(delta)?;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            for g in e.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    /// One bias-corrected Adam update over every parameter, consuming the
    /// current gradient accumulators (they are left untouched; call
    /// [`ParamStore::zero_grads`] before the next batch).
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for e in &mut self.entries {
            for k in 0..e.value.len() {
                let g = e.grad.data()[k];
                let m = cfg.beta1 * e.m.data()[k] + (1.0 - cfg.beta1) * g;
                let v = cfg.beta2 * e.v.data()[k] + (1.0 - cfg.beta2) * g * g;
                e.m.data_mut()[k] = m;
                e.v.data_mut()[k] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                e.value.data_mut()[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }

    /// Serializes parameter values (names, shapes, raw f64 bits, little
    /// endian) so a round trip is bit-exact. Optimizer state is not saved;
    /// checkpoints capture trained weights, not a resumable session.
    pub fn write_values(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            let name = e.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(e.value.rows() as u64).to_le_bytes())?;
            w.write_all(&(e.value.cols() as u64).to_le_bytes())?;
            for &x in e.value.data() {
                w.write_all(&x.to_bits().to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Inverse of [`ParamStore::write_values`]; builds a fresh store with
    /// zeroed gradients and moments.
    pub fn read_values(r: &mut impl Read) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u32buf)?;
        let count = u32::from_le_bytes(u32buf);
        for _ in 0..count {
            r.read_exact(&mut u32buf)?;
            let name_len = u32::from_le_bytes(u32buf) as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::Incompatible("non-UTF8 parameter name".into()))?;
            r.read_exact(&mut u64buf)?;
            let rows = u64::from_le_bytes(u64buf) as usize;
            r.read_exact(&mut u64buf)?;
            let cols = u64::from_le_bytes(u64buf) as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                r.read_exact(&mut u64buf)?;
                data.push(f64::from_bits(u64::from_le_bytes(u64buf)));
            }
            store.insert(&name, Matrix::from_vec(rows, cols, data)?)?;
        }
        Ok(store)
    }
}

/// Compares the analytic gradients stored in `params` (filled in by the
/// caller, typically via [`crate::tape::Tape::backward_into`]) against
/// central finite differences of `loss_fn`, entry by entry, and returns the
/// maximum relative error `|a - n| / max(|a|, |n|, 1)`.
///
/// `loss_fn` must be deterministic: it is evaluated twice at the unperturbed
/// point first, and any bit-level disagreement is a
/// [`Error::Determinism`] — stochastic pieces (dropout, gate noise) must be
/// frozen or disabled before checking. An empty store returns 0.0.
pub fn grad_check(
    mut loss_fn: impl FnMut(&ParamStore) -> Result<f64>,
    params: &mut ParamStore,
    epsilon: f64,
) -> Result<f64> {
    if epsilon <= 0.0 {
        return Err(Error::Parameter(format!(
            "grad_check epsilon must be positive, got {epsilon}"
        )));
    }
    let base1 = loss_fn(params)?;
    let base2 = loss_fn(params)?;
    if base1.to_bits() != base2.to_bits() {
        return Err(Error::Determinism(format!(
            "loss evaluated twice at the same point gave {base1} and {base2}"
        )));
    }

    let mut max_rel = 0.0f64;
    for idx in 0..params.len() {
        for k in 0..params.value(idx).len() {
            let orig = params.value(idx).data()[k];
            params.value_mut(idx).data_mut()[k] = orig + epsilon;
            let plus = loss_fn(params)?;
            params.value_mut(idx).data_mut()[k] = orig - epsilon;
            let minus = loss_fn(params)?;
            params.value_mut(idx).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = params.grad(idx).data()[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn moments_zero_until_first_step() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Matrix::row(&[1.0, 2.0])).unwrap();
        assert_eq!(store.step(), 0);
        assert!(store.moment1(w).data().iter().all(|&x| x == 0.0));
        assert!(store.moment2(w).data().iter().all(|&x| x == 0.0));
        assert_eq!(store.grad(w).shape(), store.value(w).shape());
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut store = ParamStore::new();
        store.insert("w", Matrix::zeros(1, 1)).unwrap();
        assert!(store.insert("w", Matrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn adam_first_step_matches_hand_arithmetic() {
        // p = 1, g = 0.5, lr = 0.1, defaults otherwise. After one step the
        // bias corrections cancel the (1 - beta) factors exactly:
        // m_hat = g, v_hat = g^2, so p' = 1 - 0.1 * g / (|g| + 1e-8).
        let mut store = ParamStore::new();
        let w = store.insert("w", Matrix::row(&[1.0])).unwrap();
        store.accumulate_grad(w, &Matrix::row(&[0.5])).unwrap();
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        store.adam_step(&cfg);
        let expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((store.value(w).get(0, 0) - expected).abs() < 1e-15);
        assert_eq!(store.step(), 1);
    }

    #[test]
    fn grad_check_quadratic() {
        // loss = 0.5 * ||p||^2, gradient exactly p.
        let mut store = ParamStore::new();
        let w = store
            .insert("w", Matrix::row(&[0.3, -1.2, 2.5, 0.0]))
            .unwrap();
        let g = store.value(w).clone();
        store.accumulate_grad(w, &g).unwrap();
        let max_rel = grad_check(
            |s| Ok(0.5 * s.value(0).data().iter().map(|x| x * x).sum::<f64>()),
            &mut store,
            1e-5,
        )
        .unwrap();
        assert!(max_rel < 1e-6, "max relative error {max_rel}");
    }

    #[test]
    fn grad_check_empty_store_is_zero() {
        let mut store = ParamStore::new();
        let max_rel = grad_check(|_| Ok(1.25), &mut store, 1e-5).unwrap();
        assert_eq!(max_rel, 0.0);
    }

    #[test]
    fn grad_check_flags_nondeterminism() {
        let mut store = ParamStore::new();
        store.insert("w", Matrix::row(&[1.0])).unwrap();
        let mut calls = 0u32;
        let err = grad_check(
            move |_| {
                calls += 1;
                Ok(calls as f64)
            },
            &mut store,
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Determinism(_)));
    }

    #[test]
    fn grad_check_detects_corruption() {
        // A tape-computed gradient passes; the same gradient nudged by 1e-2
        // must push the max relative error well past the 1e-4 gate.
        let mut store = ParamStore::new();
        let w = store.insert("w", Matrix::row(&[0.7, -0.4])).unwrap();
        let loss = |s: &ParamStore| -> Result<f64> {
            let mut t = Tape::new();
            let wn = t.param(0, s.value(0).clone());
            let sq = t.hadamard(wn, wn).unwrap();
            let act = t.activate(sq, crate::tape::Activation::Tanh);
            let sum = t.sum_all(act);
            Ok(t.scalar_value(sum))
        };
        let mut t = Tape::new();
        let wn = t.param(w, store.value(w).clone());
        let sq = t.hadamard(wn, wn).unwrap();
        let act = t.activate(sq, crate::tape::Activation::Tanh);
        let sum = t.sum_all(act);
        t.backward_into(sum, &mut store).unwrap();

        let clean = grad_check(loss, &mut store, 1e-5).unwrap();
        assert!(clean < 1e-6, "clean gradient should pass, got {clean}");

        store.grad_mut(w).data_mut()[0] += 1e-2;
        let corrupted = grad_check(loss, &mut store, 1e-5).unwrap();
        assert!(corrupted > 1e-3, "corruption visible: {corrupted}");
    }

    #[test]
    fn value_roundtrip_is_bit_exact() {
        let mut store = ParamStore::new();
        store
            .insert("a", Matrix::row(&[0.1, -2.7e-13, 3.33333333333333331]))
            .unwrap();
        store.insert("b", Matrix::zeros(2, 3)).unwrap();
        let mut buf = Vec::new();
        store.write_values(&mut buf).unwrap();
        let restored = ParamStore::read_values(&mut buf.as_slice()).unwrap();
        assert_eq!(restored.len(), store.len());
        for i in 0..store.len() {
            assert_eq!(restored.name(i), store.name(i));
            let (a, b) = (store.value(i), restored.value(i));
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
