//! Layout operations: reshape, gather, concatenation, slicing.

use std::rc::Rc;

use super::{GradArgs, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Gather index meaning "emit zero" (used for padding).
pub const GATHER_ZERO: usize = usize::MAX;

impl<T: Scalar> Tensor<T> {
    /// Same data, new shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape.iter().product::<usize>() != self.numel() || shape.contains(&0) {
            return Err(Error::dim(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape()),
            ));
        }
        Ok(Tensor::from_op(
            self.data().to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            Box::new(|a: &GradArgs<'_, T>| vec![Some(a.grad.to_vec())]),
        ))
    }

    /// `out[i] = self[index[i]]`, or zero where `index[i] == GATHER_ZERO`.
    ///
    /// Any permutation, padding or window extraction is a gather; the
    /// backward pass scatter-adds.
    pub fn gather(&self, index: Rc<Vec<usize>>, shape: &[usize]) -> Result<Tensor<T>> {
        if index.len() != shape.iter().product::<usize>() {
            return Err(Error::dim(
                "gather",
                format!("{} indices for output shape {shape:?}", index.len()),
            ));
        }
        let src = self.data();
        if let Some(bad) = index.iter().find(|&&i| i != GATHER_ZERO && i >= src.len()) {
            return Err(Error::dim(
                "gather",
                format!("index {bad} out of range for shape {:?}", self.shape()),
            ));
        }
        let data = index
            .iter()
            .map(|&i| if i == GATHER_ZERO { T::zero() } else { src[i] })
            .collect();
        let n = self.numel();
        Ok(Tensor::from_op(
            data,
            shape.to_vec(),
            vec![self.clone()],
            Box::new(move |a: &GradArgs<'_, T>| {
                let mut g = vec![T::zero(); n];
                for (&i, &gv) in index.iter().zip(a.grad) {
                    if i != GATHER_ZERO {
                        g[i] += gv;
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Matrix transpose.
    pub fn transpose2d(&self) -> Result<Tensor<T>> {
        let (r, c) = match self.shape() {
            [r, c] => (*r, *c),
            s => {
                return Err(Error::dim(
                    "transpose2d",
                    format!("expected a matrix, got {s:?}"),
                ))
            }
        };
        let index: Vec<usize> = (0..c)
            .flat_map(|j| (0..r).map(move |i| i * c + j))
            .collect();
        self.gather(Rc::new(index), &[c, r])
    }

    /// Concatenates along the leading axis; trailing extents must agree.
    pub fn concat(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat", "no tensors to concatenate"))?;
        let tail = &first.shape()[1..];
        let mut lead = 0;
        for (i, p) in parts.iter().enumerate() {
            if &p.shape()[1..] != tail {
                return Err(Error::dim(
                    "concat",
                    format!(
                        "part {i} has shape {:?}, expected trailing {tail:?}",
                        p.shape()
                    ),
                ));
            }
            lead += p.shape()[0];
        }
        let mut data = Vec::with_capacity(parts.iter().map(Tensor::numel).sum());
        for p in parts {
            data.extend_from_slice(p.data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(tail);
        let sizes: Vec<usize> = parts.iter().map(Tensor::numel).collect();
        Ok(Tensor::from_op(
            data,
            shape,
            parts.to_vec(),
            Box::new(move |a: &GradArgs<'_, T>| {
                let mut off = 0;
                sizes
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| {
                        let g = a.needs(i).then(|| a.grad[off..off + s].to_vec());
                        off += s;
                        g
                    })
                    .collect()
            }),
        ))
    }

    /// Rows `start..end` of the leading axis.
    pub fn slice0(&self, start: usize, end: usize) -> Result<Tensor<T>> {
        let lead = self.shape()[0];
        if start >= end || end > lead {
            return Err(Error::dim(
                "slice0",
                format!("range {start}..{end} invalid for shape {:?}", self.shape()),
            ));
        }
        let row = self.numel() / lead;
        let mut shape = self.shape().to_vec();
        shape[0] = end - start;
        let n = self.numel();
        Ok(Tensor::from_op(
            self.data()[start * row..end * row].to_vec(),
            shape,
            vec![self.clone()],
            Box::new(move |a: &GradArgs<'_, T>| {
                let mut g = vec![T::zero(); n];
                g[start * row..end * row].copy_from_slice(a.grad);
                vec![Some(g)]
            }),
        ))
    }
}
