use crate::array::Array;
use crate::error::Result;
use crate::tensor::Tensor;

impl Tensor {
    pub fn sum_all(&self) -> Tensor {
        let shape = self.shape().to_vec();
        Tensor::from_op(
            Array::scalar(self.value().sum()),
            vec![self.clone()],
            Box::new(move |g, _| Ok(vec![Some(Array::full(shape.clone(), g.data()[0]))])),
        )
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel().max(1) as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Sum over the last axis, keeping it as a singleton.
    pub fn sum_last(&self) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        let k = *shape.last().unwrap_or(&1);
        let mut out_shape = shape.clone();
        if let Some(last) = out_shape.last_mut() {
            *last = 1;
        }
        let sums: Vec<f64> = if k == 0 {
            vec![0.0; out_shape.iter().product()]
        } else {
            self.data().chunks_exact(k).map(|r| r.iter().sum()).collect()
        };
        let value = Array::new(out_shape, sums)?;
        Ok(Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut out = Vec::with_capacity(shape.iter().product());
                for &gv in g.data() {
                    out.extend(std::iter::repeat(gv).take(k));
                }
                Ok(vec![Some(Array::new(shape.clone(), out)?)])
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_last_grad_broadcasts() {
        let x = Tensor::leaf(Array::new([2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let s = x.sum_last().unwrap();
        assert_eq!(s.shape(), &[2, 1]);
        assert_eq!(s.data(), &[6., 15.]);
        let w = Tensor::from_vec([2, 1], vec![1., 2.]).unwrap();
        let g = s.mul(&w).unwrap().sum_all().backward().unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[1., 1., 1., 2., 2., 2.]);
    }

    #[test]
    fn mean_all_value() {
        let x = Tensor::from_vec([4], vec![1., 2., 3., 6.]).unwrap();
        assert_eq!(x.mean_all().item().unwrap(), 3.0);
    }
}
