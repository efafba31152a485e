use rand::Rng;

/// A trainable tensor with its accumulated gradient. Storage is row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    name: String,
    shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![0.0; len],
            grad: vec![0.0; len],
        }
    }

    /// Uniform initialization in `[-scale, scale]`.
    pub fn uniform<R: Rng>(name: impl Into<String>, shape: &[usize], scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(name, shape);
        for v in &mut p.value {
            *v = rng.gen_range(-scale..=scale);
        }
        p
    }

    /// Builds a parameter from explicit values; `values.len()` must match the shape.
    pub fn from_values(name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> Self {
        let len: usize = shape.iter().product();
        assert_eq!(len, values.len(), "value count does not match shape");
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            grad: vec![0.0; len],
            value: values,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    /// Row `r` of a rank-2 parameter.
    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.value[r * cols..(r + 1) * cols]
    }

    pub fn grad_row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.shape[1];
        &mut self.grad[r * cols..(r + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.value.iter().all(|v| v.is_finite())
    }
}

/// Anything that owns trainable parameters.
pub trait Parameterized {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Multiplies every gradient by `factor`.
    fn scale_grad(&mut self, factor: f64) {
        for p in self.params_mut() {
            p.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }
}
