use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

macro_rules! layer_tensors {
    ($($field:ident),* $(,)?) => {
        /// Weights of one encoder layer. Projection matrices are stored
        /// `[in, out]` so activations multiply on the left.
        #[derive(Clone, Debug, PartialEq)]
        pub struct LayerTensors<T> {
            $(pub $field: T,)*
        }

        impl<T> LayerTensors<T> {
            pub(crate) fn map_named<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> U) -> LayerTensors<U> {
                LayerTensors { $($field: f(&format!("{prefix}.{}", stringify!($field)), &self.$field),)* }
            }

            pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
                $(out.push((format!("{prefix}.{}", stringify!($field)), &self.$field));)*
            }

            pub(crate) fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
                $(out.push(&mut self.$field);)*
            }

            pub(crate) fn take(it: &mut impl Iterator<Item = T>) -> Option<Self> {
                Some(LayerTensors { $($field: it.next()?,)* })
            }
        }
    };
}

layer_tensors!(
    query_weight,
    query_bias,
    key_weight,
    key_bias,
    value_weight,
    value_bias,
    output_weight,
    output_bias,
    ffn_in_weight,
    ffn_in_bias,
    ffn_out_weight,
    ffn_out_bias,
    norm1_gain,
    norm1_bias,
    norm2_gain,
    norm2_bias,
);

/// Every learnable tensor of the classifier, generic over what is stored per
/// slot (values, tape handles, shapes, optimizer moments).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelTensors<T> {
    pub embed_weight: T,
    pub embed_bias: T,
    pub layers: Vec<LayerTensors<T>>,
    pub final_norm_gain: T,
    pub final_norm_bias: T,
    pub classifier_weight: T,
    pub classifier_bias: T,
}

/// Trainable parameters.
pub type ModelParams<R = f32> = ModelTensors<Tensor<R>>;

impl<T> ModelTensors<T> {
    /// Same structure with every slot transformed; `f` sees the canonical
    /// dotted name of each slot.
    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> ModelTensors<U> {
        ModelTensors {
            embed_weight: f("embed_weight", &self.embed_weight),
            embed_bias: f("embed_bias", &self.embed_bias),
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.map_named(&format!("layers.{i}"), &mut f))
                .collect(),
            final_norm_gain: f("final_norm_gain", &self.final_norm_gain),
            final_norm_bias: f("final_norm_bias", &self.final_norm_bias),
            classifier_weight: f("classifier_weight", &self.classifier_weight),
            classifier_bias: f("classifier_bias", &self.classifier_bias),
        }
    }

    /// Slots in canonical order with their names.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = vec![
            ("embed_weight".to_owned(), &self.embed_weight),
            ("embed_bias".to_owned(), &self.embed_bias),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            l.collect(&format!("layers.{i}"), &mut out);
        }
        out.push(("final_norm_gain".to_owned(), &self.final_norm_gain));
        out.push(("final_norm_bias".to_owned(), &self.final_norm_bias));
        out.push(("classifier_weight".to_owned(), &self.classifier_weight));
        out.push(("classifier_bias".to_owned(), &self.classifier_bias));
        out
    }

    /// Mutable slots in canonical order.
    pub fn slots_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![&mut self.embed_weight, &mut self.embed_bias];
        for l in &mut self.layers {
            l.collect_mut(&mut out);
        }
        out.extend([
            &mut self.final_norm_gain,
            &mut self.final_norm_bias,
            &mut self.classifier_weight,
            &mut self.classifier_bias,
        ]);
        out
    }

    /// Rebuilds the structure from slots in canonical order.
    pub fn from_ordered(num_layers: usize, slots: impl IntoIterator<Item = T>) -> Option<Self> {
        let mut it = slots.into_iter();
        let embed_weight = it.next()?;
        let embed_bias = it.next()?;
        let layers = (0..num_layers).map(|_| LayerTensors::take(&mut it)).collect::<Option<Vec<_>>>()?;
        let out = Self {
            embed_weight,
            embed_bias,
            layers,
            final_norm_gain: it.next()?,
            final_norm_bias: it.next()?,
            classifier_weight: it.next()?,
            classifier_bias: it.next()?,
        };
        it.next().is_none().then_some(out)
    }
}

impl ModelTensors<Vec<usize>> {
    /// Expected shape of every parameter under `config`.
    pub fn shapes(config: &ModelConfig) -> Self {
        let (f, d, ff, c) = (config.input_dim, config.hidden_dim, config.ffn_dim, config.num_classes);
        let layer = LayerTensors {
            query_weight: vec![d, d],
            query_bias: vec![d],
            key_weight: vec![d, d],
            key_bias: vec![d],
            value_weight: vec![d, d],
            value_bias: vec![d],
            output_weight: vec![d, d],
            output_bias: vec![d],
            ffn_in_weight: vec![d, ff],
            ffn_in_bias: vec![ff],
            ffn_out_weight: vec![ff, d],
            ffn_out_bias: vec![d],
            norm1_gain: vec![d],
            norm1_bias: vec![d],
            norm2_gain: vec![d],
            norm2_bias: vec![d],
        };
        Self {
            embed_weight: vec![f, d],
            embed_bias: vec![d],
            layers: vec![layer; config.num_layers],
            final_norm_gain: vec![d],
            final_norm_bias: vec![d],
            classifier_weight: vec![d, c],
            classifier_bias: vec![c],
        }
    }
}

impl<R: Real> ModelParams<R> {
    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<S: Real>(&self) -> ModelParams<S> {
        self.map(|_, t| t.cast())
    }

    /// All-zero tensors with the shapes of `self`.
    pub fn zeros_like(&self) -> Self {
        self.map(|_, t| Tensor::zeros(t.shape()))
    }

    /// Checks every tensor against the shapes implied by `config`.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let shapes = ModelTensors::shapes(config);
        if shapes.layers.len() != self.layers.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} layers, found {}",
                shapes.layers.len(),
                self.layers.len()
            )));
        }
        for ((name, t), (_, want)) in self.named().into_iter().zip(shapes.named()) {
            if t.shape() != want.as_slice() {
                return Err(Error::InvalidConfig(format!("{name}: shape {:?}, expected {want:?}", t.shape())));
            }
            if !t.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} holds non-finite values")));
            }
        }
        Ok(())
    }
}

/// Glorot-uniform matrices, zero biases, unit layer-norm gains.
pub fn init_params<R: Real>(config: &ModelConfig, seed: u64) -> Result<ModelParams<R>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ModelTensors::shapes(config).map(|name, shape| {
        if shape.len() == 2 {
            let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            let len = shape[0] * shape[1];
            let values = (0..len).map(|_| R::from_f64_lossy(rng.gen_range(-bound..=bound))).collect();
            Tensor::new(shape.clone(), values).expect("shape")
        } else if name.ends_with("gain") {
            Tensor::ones(shape)
        } else {
            Tensor::zeros(shape)
        }
    }))
}
