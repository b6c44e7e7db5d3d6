//! Trainable parameters, the parameter visitor and tensor (de)serialization.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array, ArrayD, ArrayViewD, ArrayViewMutD, Dimension, IxDyn};

use crate::error::{Error, Result};

/// One trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<D: Dimension> {
    pub value: Array<f64, D>,
    pub grad: Array<f64, D>,
}

impl<D: Dimension> Param<D> {
    pub fn new(value: Array<f64, D>) -> Self {
        let grad = Array::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Dimension-erased access to a parameter, for the optimizer and

/// checkpoint (de)serialization.
pub trait ParamAccess {
    fn value(&self) -> ArrayViewD<'_, f64>;
    fn value_mut(&mut self) -> ArrayViewMutD<'_, f64>;
    fn grad(&self) -> ArrayViewD<'_, f64>;
    fn grad_mut(&mut self) -> ArrayViewMutD<'_, f64>;
}

impl<D: Dimension> ParamAccess for Param<D> {
    fn value(&self) -> ArrayViewD<'_, f64> {
        self.value.view().into_dyn()
    }

    fn value_mut(&mut self) -> ArrayViewMutD<'_, f64> {
        self.value.view_mut().into_dyn()
    }

    fn grad(&self) -> ArrayViewD<'_, f64> {
        self.grad.view().into_dyn()
    }

    fn grad_mut(&mut self) -> ArrayViewMutD<'_, f64> {
        self.grad.view_mut().into_dyn()
    }
}

/// Visits every parameter in a fixed, deterministic order.
pub trait VisitParams {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut dyn ParamAccess));

    fn zero_grads(&mut self) {
        self.visit_params(&mut |_, p| p.grad_mut().fill(0.0));
    }

    fn param_names(&mut self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |name, _| names.push(name.to_string()));
        names
    }
}

const MAGIC: &[u8; 8] = b"DRCTNSR1";

/// Writes all visited parameter values to a compact binary tensor file.
/// f64 little-endian payloads round-trip bit-exactly.
pub fn save_tensors(path: impl AsRef<Path>, model: &mut dyn VisitParams) -> Result<()> {
    let mut tensors: Vec<(String, Vec<u64>, Vec<f64>)> = Vec::new();
    model.visit_params(&mut |name, p| {
        let view = p.value();
        tensors.push((
            name.to_string(),
            view.shape().iter().map(|&d| d as u64).collect(),
            view.iter().copied().collect(),
        ));
    });

    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, shape, data) in tensors {
        file.write_all(&(name.len() as u32).to_le_bytes())?;
        file.write_all(name.as_bytes())?;
        file.write_all(&(shape.len() as u32).to_le_bytes())?;
        for dim in &shape {
            file.write_all(&dim.to_le_bytes())?;
        }
        for x in data {
            file.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a tensor file into a name-indexed map.
pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<HashMap<String, ArrayD<f64>>> {
    let path = path.as_ref();
    let mut file = std::io::BufReader::new(
        std::fs::File::open(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?,
    );

    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a tensor file (bad magic)",
            path.display()
        )));
    }

    let mut u32_buf = [0u8; 4];
    let mut u64_buf = [0u8; 8];
    file.read_exact(&mut u32_buf)?;
    let count = u32::from_le_bytes(u32_buf);

    let mut tensors = HashMap::new();
    for _ in 0..count {
        file.read_exact(&mut u32_buf)?;
        let name_len = u32::from_le_bytes(u32_buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        file.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint("non-utf8 tensor name".to_string()))?;

        file.read_exact(&mut u32_buf)?;
        let ndim = u32::from_le_bytes(u32_buf) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            file.read_exact(&mut u64_buf)?;
            shape.push(u64::from_le_bytes(u64_buf) as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            file.read_exact(&mut u64_buf)?;
            data.push(f64::from_le_bytes(u64_buf));
        }
        let array = ArrayD::from_shape_vec(IxDyn(&shape), data)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        tensors.insert(name, array);
    }
    Ok(tensors)
}

/// Assigns saved tensors back onto the visited parameters. Every parameter
/// must be present with a matching shape, and no saved tensor may be left
/// over.
pub fn load_tensors(path: impl AsRef<Path>, model: &mut dyn VisitParams) -> Result<()> {
    let mut tensors = read_tensor_file(&path)?;
    let mut error: Option<Error> = None;
    model.visit_params(&mut |name, p| {
        if error.is_some() {
            return;
        }
        match tensors.remove(name) {
            Some(saved) => {
                let mut target = p.value_mut();
                if target.shape() != saved.shape() {
                    error = Some(Error::Checkpoint(format!(
                        "tensor `{name}` has shape {:?} in the checkpoint but {:?} in the model",
                        saved.shape(),
                        target.shape()
                    )));
                    return;
                }
                target.assign(&saved);
            }
            None => {
                error = Some(Error::Checkpoint(format!(
                    "checkpoint is missing tensor `{name}`"
                )));
            }
        }
    });
    if let Some(err) = error {
        return Err(err);
    }
    if !tensors.is_empty() {
        let mut names: Vec<&String> = tensors.keys().collect();
        names.sort();
        return Err(Error::Checkpoint(format!(
            "checkpoint contains tensors unknown to the model: {names:?}"
        )));
    }
    Ok(())
}
