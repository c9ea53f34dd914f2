use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// A named tensor of weights with its accumulated gradient.
///
/// Non-trainable parameters (batch-norm running statistics) are serialized
/// with the model but skipped by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub trainable: bool,
}

impl Param {
    pub fn new(shape: Vec<usize>, value: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Self {
            shape,
            value,
            grad,
            trainable: true,
        }
    }

    pub fn filled(shape: Vec<usize>, v: f32) -> Self {
        let len = shape.iter().product();
        Self::new(shape, vec![v; len])
    }

    pub fn buffer(shape: Vec<usize>, v: f32) -> Self {
        Self {
            trainable: false,
            ..Self::filled(shape, v)
        }
    }

    pub fn init(shape: Vec<usize>, init: Init, rng: &mut impl Rng) -> Self {
        let len: usize = shape.iter().product();
        let value = match init {
            Init::Zeros => vec![0.0; len],
            Init::Normal { mean, std } => {
                let dist = Normal::new(mean, std).expect("valid normal");
                (0..len).map(|_| dist.sample(rng)).collect()
            }
            Init::Uniform { bound } => {
                let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
                (0..len).map(|_| dist.sample(rng)).collect()
            }
        };
        Self::new(shape, value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Normal { mean: f32, std: f32 },
    Uniform { bound: f32 },
}

impl Init {
    /// PyTorch's default for conv layers: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn fan_in(fan_in: usize) -> Self {
        Init::Uniform {
            bound: 1.0 / (fan_in as f32).sqrt(),
        }
    }
}

/// Anything holding parameters. Names are dotted paths and must be stable:
/// checkpoints and optimizer state are keyed by them.
pub trait Module {
    fn visit_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>);

    fn named_params(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        self.visit_params("", &mut out);
        out
    }

    fn zero_grad(&mut self) {
        for (_, p) in self.named_params() {
            p.zero_grad();
        }
    }

    fn num_trainable(&mut self) -> usize {
        self.named_params()
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(_, p)| p.len())
            .sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
