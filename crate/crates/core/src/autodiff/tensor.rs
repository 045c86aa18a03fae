use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{ensure_arg, Result};
use crate::image::Image;

/// NCHW extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Dense NCHW tensor with an optional gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        ensure_arg!(
            data.len() == shape.numel(),
            "tensor {shape} needs {} values, got {}",
            shape.numel(),
            data.len()
        );
        Ok(Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, v: T) -> Self {
        Tensor {
            shape,
            data: vec![v; shape.numel()],
            grad: None,
            requires_grad: false,
        }
    }

    /// Marks the tensor as a trainable parameter.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the gradient accumulator.
    pub fn accumulate_grad(&mut self, g: &[T]) {
        assert_eq!(g.len(), self.data.len(), "gradient size mismatch");
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Drops the gradient buffer entirely.
    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks same-sized images into an `(N, C, H, W)` batch.
    pub fn from_images(images: &[&Image]) -> Result<Self> {
        ensure_arg!(!images.is_empty(), "empty image batch");
        let first = images[0];
        let shape = Shape::new(images.len(), first.channels(), first.height(), first.width());
        let mut data = Vec::with_capacity(shape.numel());
        for img in images {
            ensure_arg!(
                (img.channels(), img.height(), img.width()) == (shape.c, shape.h, shape.w),
                "images in a batch must share dimensions"
            );
            data.extend(img.data().iter().map(|&v| T::of(v)));
        }
        Self::from_vec(shape, data)
    }

    pub fn from_image(img: &Image) -> Self {
        Self::from_images(&[img]).expect("single image batch")
    }

    /// Splits the batch into images, clamping into `[0, 1]`.
    pub fn to_images(&self) -> Result<Vec<Image>> {
        let per = self.shape.c * self.shape.plane();
        self.data
            .chunks_exact(per)
            .map(|chunk| {
                Image::from_clamped(
                    self.shape.w,
                    self.shape.h,
                    self.shape.c,
                    chunk.iter().map(|v| v.as_f64()).collect(),
                )
            })
            .collect()
    }
}
