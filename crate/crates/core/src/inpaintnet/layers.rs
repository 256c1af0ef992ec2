//! Convolution layers with owned parameters.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Element, Module, Parameter, Shape, Tape, Tensor, Var};

/// Weights are drawn from N(0, WEIGHT_STD); biases start at zero.
pub const WEIGHT_STD: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl<T: Element> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        Conv2d {
            weight: Parameter::new(
                format!("{name}.weight"),
                Tensor::randn(Shape::new(cout, cin, kernel, kernel), WEIGHT_STD, rng),
            ),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(Shape::new(1, cout, 1, 1))),
            stride,
            padding,
            dilation,
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.conv2d(
            tape.param(&self.weight),
            Some(tape.param(&self.bias)),
            self.stride,
            self.padding,
            self.dilation,
        )
    }
}

impl<T: Element> Module<T> for Conv2d<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d<T> {
    /// `cin x cout x k x k`.
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Element> ConvTranspose2d<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        ConvTranspose2d {
            weight: Parameter::new(
                format!("{name}.weight"),
                Tensor::randn(Shape::new(cin, cout, kernel, kernel), WEIGHT_STD, rng),
            ),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(Shape::new(1, cout, 1, 1))),
            stride,
            padding,
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.conv_transpose2d(
            tape.param(&self.weight),
            Some(tape.param(&self.bias)),
            self.stride,
            self.padding,
        )
    }
}

impl<T: Element> Module<T> for ConvTranspose2d<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}
