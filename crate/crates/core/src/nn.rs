//! Layer building blocks shared by the networks.
//!
//! Each network describes its parameters as a list of [`ParamSpec`]s built
//! from its configuration; the same list drives initialization and the
//! analytic parameter count, so the two can never drift apart.

use autograd::{Conv2dParams, Var};

use crate::params::Bound;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Constant(f64),
    /// Uniform on `(-bound, bound)`.
    Uniform(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Accumulates parameter specs under a dotted name prefix.
#[derive(Debug, Default)]
pub struct SpecBuilder {
    prefix: Vec<String>,
    specs: Vec<ParamSpec>,
}

impl SpecBuilder {
    pub fn new(root: &str) -> Self {
        Self {
            prefix: vec![root.to_string()],
            specs: Vec::new(),
        }
    }

    fn full(&self, name: &str) -> String {
        let mut s = self.prefix.join(".");
        if !s.is_empty() {
            s.push('.');
        }
        s.push_str(name);
        s
    }

    pub fn scope<R>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> R) -> R {
        self.prefix.push(name.into());
        let r = f(self);
        self.prefix.pop();
        r
    }

    pub fn push(&mut self, name: &str, shape: &[usize], init: Init) {
        let full = self.full(name);
        self.specs.push(ParamSpec {
            name: full,
            shape: shape.to_vec(),
            init,
        });
    }

    /// `weight: [cout, cin/groups, k, k]`, `bias: [cout]`.
    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, groups: usize) {
        let fan_in = (cin / groups) * k * k;
        self.scope(name, |b| {
            b.push("weight", &[cout, cin / groups, k, k], Init::Uniform(1.0 / (fan_in as f64).sqrt()));
            b.push("bias", &[cout], Init::Zeros);
        });
    }

    pub fn conv_no_bias(&mut self, name: &str, cin: usize, cout: usize, k: usize, groups: usize) {
        let fan_in = (cin / groups) * k * k;
        self.scope(name, |b| {
            b.push("weight", &[cout, cin / groups, k, k], Init::Uniform(1.0 / (fan_in as f64).sqrt()));
        });
    }

    /// `weight: [fout, fin]`, `bias: [fout]`.
    pub fn linear(&mut self, name: &str, fin: usize, fout: usize) {
        self.linear_with_bias(name, fin, fout, Init::Zeros);
    }

    pub fn linear_with_bias(&mut self, name: &str, fin: usize, fout: usize, bias: Init) {
        self.scope(name, |b| {
            b.push("weight", &[fout, fin], Init::Uniform(1.0 / (fin as f64).sqrt()));
            b.push("bias", &[fout], bias);
        });
    }

    pub fn finish(self) -> Vec<ParamSpec> {
        self.specs
    }
}

pub fn same_padding(k: usize) -> usize {
    k / 2
}

/// Applies the conv layer stored under `name`.
pub fn conv<'t>(b: &Bound<'t>, name: &str, x: Var<'t>, stride: usize, groups: usize) -> Var<'t> {
    let w = b.get(&format!("{name}.weight"));
    let k = w.value().dim(2);
    x.conv2d(
        w,
        b.try_get(&format!("{name}.bias")),
        Conv2dParams {
            stride,
            padding: same_padding(k),
            groups,
        },
    )
}

pub fn linear<'t>(b: &Bound<'t>, name: &str, x: Var<'t>) -> Var<'t> {
    x.linear(
        b.get(&format!("{name}.weight")),
        b.try_get(&format!("{name}.bias")),
    )
}

/// Multiply-accumulates of a same-padded conv producing `hout x wout`.
pub fn conv_macs(cin: usize, cout: usize, k: usize, groups: usize, hout: usize, wout: usize) -> u64 {
    (k * k * (cin / groups) * cout * hout * wout) as u64
}

pub fn linear_macs(fin: usize, fout: usize) -> u64 {
    (fin * fout) as u64
}

/// Output size of a stride-2, same-padded 3x3 conv.
pub fn down2(size: usize) -> usize {
    (size + 2 - 3) / 2 + 1
}
