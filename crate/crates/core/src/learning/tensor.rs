/// Named trainable tensor with a same-shape gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        let name = name.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            value.len(),
            "tensor {name}: shape {shape:?} does not match {} values",
            value.len()
        );
        let grad = vec![0.0; value.len()];
        Self {
            name,
            shape,
            value,
            grad,
        }
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

    /// `grad += scale · g`
    pub fn accumulate(&mut self, g: &[f64], scale: f64) {
        assert_eq!(g.len(), self.grad.len(), "gradient size mismatch for {}", self.name);
        for (acc, v) in self.grad.iter_mut().zip(g) {
            *acc += scale * v;
        }
    }
}
