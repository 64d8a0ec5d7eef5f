//! Feed-forward scorer: embedding lookups, one or two hidden layers,
//! and a final decision layer. Scores are linear in the final-layer
//! parameters. Backpropagation is implemented by hand, including
//! embedding gradients, in 64-bit floats throughout.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{FeatureTemplate, FeatureVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative in terms of (pre-activation, activation).
    fn derivative(&self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - h * h,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// All model parameters: per-group embedding matrices, hidden layers,
/// and the final decision layer (one weight row per decision).
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// One `(vocab_size, dim)` matrix per feature group.
    pub embeddings: Vec<Array2<f64>>,
    /// Hidden layers `(W, b)` with `W: (out, in)`.
    pub hidden: Vec<(Array2<f64>, Array1<f64>)>,
    /// Final layer: `(num_decisions, last_hidden)`.
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
    pub activation: Activation,
    /// Slots per group, cached from the template.
    pub group_arity: Vec<usize>,
    /// Bumped on every optimizer step; guards stale forward caches.
    pub step_tag: u64,
}

/// Same shapes as the [`Params`] they were computed against.
pub type Gradients = Params;

/// Nested trainable parameter subsets, from the final decision layer
/// alone up to the full network including embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainableSet {
    /// Final decision layer only.
    ThetaD,
    /// Last hidden layer and the final layer.
    W2ThetaD,
    /// All hidden layers and the final layer.
    W1W2ThetaD,
    /// Everything, including embeddings.
    Full,
}

impl TrainableSet {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainableSet::ThetaD => "theta_d",
            TrainableSet::W2ThetaD => "w2+theta_d",
            TrainableSet::W1W2ThetaD => "w1+w2+theta_d",
            TrainableSet::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "theta_d" => Ok(TrainableSet::ThetaD),
            "w2+theta_d" => Ok(TrainableSet::W2ThetaD),
            "w1+w2+theta_d" => Ok(TrainableSet::W1W2ThetaD),
            "full" => Ok(TrainableSet::Full),
            other => Err(Error::UnknownSubset(other.to_string())),
        }
    }
}

impl Params {
    /// Seeded initialization: weights uniform in ±(6/(fan_in+fan_out))^0.5,
    /// biases 0.1. Identical seeds give bit-identical parameters.
    pub fn init(
        template: &FeatureTemplate,
        hidden_sizes: &[usize],
        num_decisions: usize,
        activation: Activation,
        seed: u64,
    ) -> Params {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut embeddings = vec![];
        for g in &template.groups {
            embeddings.push(init_matrix(&mut rng, g.vocab.len(), g.dim));
        }
        let mut hidden = vec![];
        let mut width = template.input_width();
        for &h in hidden_sizes {
            let w = init_matrix(&mut rng, h, width);
            let b = Array1::from_elem(h, 0.1);
            hidden.push((w, b));
            width = h;
        }
        let out_w = init_matrix(&mut rng, num_decisions, width);
        let out_b = Array1::zeros(num_decisions);
        Params {
            embeddings,
            hidden,
            out_w,
            out_b,
            activation,
            group_arity: template.groups.iter().map(|g| g.arity()).collect(),
            step_tag: 0,
        }
    }

    /// Re-initialize only the final decision layer (used at the
    /// local-to-global stage switch).
    pub fn reinit_final_layer(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, cols) = self.out_w.dim();
        self.out_w = init_matrix(&mut rng, rows, cols);
        self.out_b = Array1::zeros(rows);
        self.step_tag += 1;
    }

    pub fn zeros_like(&self) -> Params {
        Params {
            embeddings: self
                .embeddings
                .iter()
                .map(|e| Array2::zeros(e.dim()))
                .collect(),
            hidden: self
                .hidden
                .iter()
                .map(|(w, b)| (Array2::zeros(w.dim()), Array1::zeros(b.dim())))
                .collect(),
            out_w: Array2::zeros(self.out_w.dim()),
            out_b: Array1::zeros(self.out_b.dim()),
            activation: self.activation,
            group_arity: self.group_arity.clone(),
            step_tag: self.step_tag,
        }
    }

    pub fn num_decisions(&self) -> usize {
        self.out_w.dim().0
    }

    /// Mutable flat views over every tensor, in a fixed order.
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![];
        for e in &mut self.embeddings {
            out.push(e.as_slice_mut().expect("standard layout"));
        }
        for (w, b) in &mut self.hidden {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out.push(self.out_w.as_slice_mut().expect("standard layout"));
        out.push(self.out_b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut me = self.clone();
        let mut out = vec![];
        for s in me.slices_mut() {
            out.extend_from_slice(s);
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let mut i = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&values[i..i + s.len()]);
            i += s.len();
        }
        assert_eq!(i, values.len(), "flat length mismatch");
    }

    pub fn flat_len(&self) -> usize {
        self.embeddings.iter().map(|e| e.len()).sum::<usize>()
            + self
                .hidden
                .iter()
                .map(|(w, b)| w.len() + b.len())
                .sum::<usize>()
            + self.out_w.len()
            + self.out_b.len()
    }

    /// `self += a * other`, elementwise over every tensor.
    pub fn axpy(&mut self, a: f64, other: &Params) {
        let mut rhs = other.clone();
        for (dst, src) in self.slices_mut().into_iter().zip(rhs.slices_mut()) {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += a * *s;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for s in self.slices_mut() {
            for v in s {
                *v *= a;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.flat().iter().all(|v| v.is_finite())
    }
}

fn init_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-r..=r))
}

/// Activation record for one forward pass; consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fv: FeatureVector,
    /// Concatenated embedding vector.
    x: Array1<f64>,
    /// Pre-activations and activations per hidden layer.
    zs: Vec<Array1<f64>>,
    hs: Vec<Array1<f64>>,
    step_tag: u64,
}

/// Compute decision scores `scores[d] = phi(fv) . theta_d + b_d`.
pub fn forward(fv: &FeatureVector, params: &Params) -> Result<(Array1<f64>, ForwardCache)> {
    if fv.ids.len() != params.embeddings.len() {
        return Err(Error::ShapeMismatch(format!(
            "feature vector has {} groups, params expect {}",
            fv.ids.len(),
            params.embeddings.len()
        )));
    }
    let width: usize = fv
        .ids
        .iter()
        .zip(&params.embeddings)
        .map(|(ids, e)| ids.len() * e.dim().1)
        .sum();
    let mut x = Array1::zeros(width);
    let mut at = 0;
    for (gi, ids) in fv.ids.iter().enumerate() {
        let emb = &params.embeddings[gi];
        let (rows, dim) = emb.dim();
        if fv.ids[gi].len() != params.group_arity[gi] {
            return Err(Error::ShapeMismatch(format!(
                "group {gi}: arity {} != expected {}",
                fv.ids[gi].len(),
                params.group_arity[gi]
            )));
        }
        for &id in ids {
            if id as usize >= rows {
                return Err(Error::ShapeMismatch(format!(
                    "group {gi}: id {id} outside vocabulary of size {rows}"
                )));
            }
            x.slice_mut(ndarray::s![at..at + dim])
                .assign(&emb.row(id as usize));
            at += dim;
        }
    }
    let mut zs = vec![];
    let mut hs = vec![];
    let mut cur = x.clone();
    for (w, b) in &params.hidden {
        if w.dim().1 != cur.len() {
            return Err(Error::ShapeMismatch(format!(
                "hidden layer expects input {}, got {}",
                w.dim().1,
                cur.len()
            )));
        }
        let z = w.dot(&cur) + b;
        let h = z.mapv(|v| params.activation.apply(v));
        zs.push(z);
        hs.push(h.clone());
        cur = h;
    }
    if params.out_w.dim().1 != cur.len() {
        return Err(Error::ShapeMismatch(format!(
            "final layer expects input {}, got {}",
            params.out_w.dim().1,
            cur.len()
        )));
    }
    let scores = params.out_w.dot(&cur) + &params.out_b;
    Ok((
        scores,
        ForwardCache {
            fv: fv.clone(),
            x,
            zs,
            hs,
            step_tag: params.step_tag,
        },
    ))
}

/// Accumulate into `grads` the exact gradient of `scores . upstream`
/// with respect to every parameter, including embeddings.
pub fn backward_into(
    cache: &ForwardCache,
    upstream: &Array1<f64>,
    params: &Params,
    grads: &mut Gradients,
) {
    assert_eq!(
        cache.step_tag, params.step_tag,
        "stale forward cache: params were updated after the forward pass"
    );
    assert_eq!(upstream.len(), params.num_decisions());
    let last = cache.hs.last().unwrap_or(&cache.x);
    // Final layer.
    for (d, &u) in upstream.iter().enumerate() {
        if u != 0.0 {
            let mut row = grads.out_w.row_mut(d);
            row.scaled_add(u, &last.view());
            grads.out_b[d] += u;
        }
    }
    let mut delta: Array1<f64> = params.out_w.t().dot(upstream);
    // Hidden layers, top to bottom.
    for li in (0..params.hidden.len()).rev() {
        let z = &cache.zs[li];
        let h = &cache.hs[li];
        let mut dz = delta.clone();
        for i in 0..dz.len() {
            dz[i] *= params.activation.derivative(z[i], h[i]);
        }
        let below = if li == 0 { &cache.x } else { &cache.hs[li - 1] };
        let (w, _) = &params.hidden[li];
        let (gw, gb) = &mut grads.hidden[li];
        for i in 0..dz.len() {
            if dz[i] != 0.0 {
                gw.row_mut(i).scaled_add(dz[i], &below.view());
            }
        }
        *gb += &dz;
        delta = w.t().dot(&dz);
    }
    // Embeddings: delta is now the gradient w.r.t. the concatenated x.
    let mut at = 0;
    for (gi, ids) in cache.fv.ids.iter().enumerate() {
        let dim = params.embeddings[gi].dim().1;
        for &id in ids {
            let seg = delta.slice(ndarray::s![at..at + dim]);
            grads.embeddings[gi].row_mut(id as usize).scaled_add(1.0, &seg);
            at += dim;
        }
    }
}

/// Like [`backward_into`], returning fresh gradients.
pub fn backward(cache: &ForwardCache, upstream: &Array1<f64>, params: &Params) -> Gradients {
    let mut grads = params.zeros_like();
    backward_into(cache, upstream, params, &mut grads);
    grads
}

/// Zero every gradient outside the named subset; gradients inside are
/// returned unchanged.
pub fn restrict_trainable(mut grads: Gradients, subset: TrainableSet) -> Gradients {
    let keep_embeddings = matches!(subset, TrainableSet::Full);
    let n_hidden = grads.hidden.len();
    let keep_hidden_from = match subset {
        TrainableSet::ThetaD => n_hidden, // none
        TrainableSet::W2ThetaD => n_hidden.saturating_sub(1),
        TrainableSet::W1W2ThetaD | TrainableSet::Full => 0,
    };
    if !keep_embeddings {
        for e in &mut grads.embeddings {
            e.fill(0.0);
        }
    }
    for (i, (w, b)) in grads.hidden.iter_mut().enumerate() {
        if i < keep_hidden_from {
            w.fill(0.0);
            b.fill(0.0);
        }
    }
    grads
}
