use crate::error::{Error, Result};

use super::{Tape, Tensor, Var};

/// Named trainable tensors in a fixed insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a parameter.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        match self.position(&name) {
            Some(i) => self.values[i] = value,
            None => {
                self.names.push(name);
                self.values.push(value);
            }
        }
    }

    fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(move |i| &mut self.values[i])
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Param(format!("missing parameter {name}")))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub(crate) fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Records every parameter as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Result<Bindings> {
        let vars = self
            .values
            .iter()
            .map(|v| tape.leaf(v.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bindings {
            names: self.names.clone(),
            vars,
        })
    }
}

/// Tape handles for a bound [`ParamStore`], in store order.
#[derive(Clone, Debug)]
pub struct Bindings {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Param(format!("parameter {name} is not bound")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Accumulated gradients in store order; parameters the loss never
    /// touched get zeros.
    pub fn gradients(&self, tape: &Tape) -> Gradients {
        let values = self
            .vars
            .iter()
            .map(|&v| match tape.grad(v) {
                Some(g) => g.clone(),
                None => {
                    let (r, c) = tape.shape(v);
                    Tensor::zeros(r, c)
                }
            })
            .collect();
        Gradients {
            names: self.names.clone(),
            values,
        }
    }
}

/// Gradient map aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Gradients {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub(crate) fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::is_finite)
    }
}

/// Runs the reverse pass from `loss` and collects parameter gradients.
pub fn backward(tape: &mut Tape, loss: Var, bindings: &Bindings) -> Result<Gradients> {
    tape.backward(loss)?;
    Ok(bindings.gradients(tape))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::filled(2, 2, 1.5));
        store.insert("b", Tensor::zeros(1, 3));
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape).unwrap();
        let a = bound.get("a").unwrap();
        let loss = tape.sum(a).unwrap();
        let grads = backward(&mut tape, loss, &bound).unwrap();
        assert_eq!(grads.get("a").unwrap(), &Tensor::ones(2, 2));
        assert_eq!(grads.get("b").unwrap(), &Tensor::zeros(1, 3));
        assert!(bound.get("c").is_err());
    }

    #[test]
    fn insert_replaces_in_place() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::scalar(1.0));
        store.insert("y", Tensor::scalar(2.0));
        store.insert("x", Tensor::scalar(3.0));
        assert_eq!(store.names(), &["x".to_string(), "y".to_string()]);
        assert_eq!(store.get("x").unwrap().item().unwrap(), 3.0);
    }
}
