use super::{conv2d, init_params, Rng, Tensor4};
use crate::error::{Error, Result};

/// Walks named parameter tensors. Names are dotted paths; dims are the
/// logical shape written to weight files.
#[allow(clippy::type_complexity)]
pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, Vec<usize>, &[f32]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, Vec<usize>, &mut [f32]));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Stride-1 "same" convolution with an odd square kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub weight: Tensor4,
    pub bias: Vec<f32>,
}

impl Conv {
    /// Fan-in uniform weights drawn from the stream `name`; zero bias.
    pub fn init(seed: u64, name: &str, cout: usize, cin: usize, k: usize) -> Self {
        let mut rng = Rng::stream(seed, name);
        let weight =
            init_params(&mut rng, [cout, cin, k, k], cin * k * k).expect("fan-in is positive for non-empty layers");
        Self {
            weight,
            bias: vec![0.0; cout],
        }
    }

    pub fn zeros(cout: usize, cin: usize, k: usize) -> Self {
        Self {
            weight: Tensor4::zeros([cout, cin, k, k]),
            bias: vec![0.0; cout],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.dims()[2]
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        let k = self.kernel();
        if k.is_multiple_of(2) {
            return Err(Error::shape(format!("layer kernel {k} is not odd")));
        }
        conv2d(x, &self.weight, &self.bias, 1, k / 2)
    }
}

impl Parameters for Conv {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, Vec<usize>, &[f32])) {
        f(join(prefix, "weight"), self.weight.dims().to_vec(), self.weight.data());
        f(join(prefix, "bias"), vec![self.bias.len()], &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, Vec<usize>, &mut [f32])) {
        let dims = self.weight.dims().to_vec();
        f(join(prefix, "weight"), dims, self.weight.data_mut());
        let n = self.bias.len();
        f(join(prefix, "bias"), vec![n], &mut self.bias);
    }
}
