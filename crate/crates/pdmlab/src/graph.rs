//! Group-membership device graph and a bias-free graph convolution stack.

use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::kv_config;
use crate::numerics::{init_uniform, RngStream, Tape, Tensor, Var};
use crate::persist;

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceGraph {
    pub groups: Vec<usize>,
    /// 0/1, symmetric, zero diagonal.
    pub adjacency: Tensor,
}

impl DeviceGraph {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        (self.adjacency.sum() / 2.0) as usize
    }
}

/// Edge between every distinct pair sharing a group.
pub fn build_graph(groups: &[usize]) -> DeviceGraph {
    let n = groups.len();
    let mut a = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if i != j && groups[i] == groups[j] {
                a.data_mut()[i * n + j] = 1.0;
            }
        }
    }
    DeviceGraph { groups: groups.to_vec(), adjacency: a }
}

/// `D^-1/2 (A + I) D^-1/2` with self-loops, else `D^-1/2 A D^-1/2` where
/// zero-degree rows stay zero.
pub fn normalize(adjacency: &Tensor, self_loops: bool) -> Result<Tensor> {
    let (n, m) = adjacency.dims2()?;
    if n != m {
        return invalid(format!("adjacency must be square, got {}×{}", n, m));
    }
    let mut a = adjacency.clone();
    if self_loops {
        for i in 0..n {
            a.data_mut()[i * n + i] += 1.0;
        }
    }
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
    let d = a.data_mut();
    for i in 0..n {
        for j in 0..n {
            let s = (deg[i] * deg[j]).sqrt();
            d[i * n + j] = if s > 0.0 { d[i * n + j] / s } else { 0.0 };
        }
    }
    Ok(a)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GcnConfig {
    pub layers: usize,
    pub hidden: usize,
    pub output: usize,
    pub self_loops: bool,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self { layers: 3, hidden: 64, output: 32, self_loops: true }
    }
}

kv_config!(GcnConfig, "gcn", {
    "layers" => layers,
    "hidden" => hidden,
    "output" => output,
    "self_loops" => self_loops,
});

impl GcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.output == 0 {
            return Err(Error::Config("gcn: layers, hidden and output must be >= 1".into()));
        }
        Ok(())
    }
}

/// Layer weights `W^(l)`, `[in, out]`; no biases.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub weights: Vec<Tensor>,
}

const PARAMS_KIND: &str = "gcn";

impl GcnParams {
    pub fn init(cfg: &GcnConfig, in_dim: usize, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let mut dims = vec![in_dim];
        dims.extend(std::iter::repeat(cfg.hidden).take(cfg.layers - 1));
        dims.push(cfg.output);
        let weights = dims.windows(2).map(|w| init_uniform(&[w[0], w[1]], w[0], rng)).collect();
        Ok(Self { weights })
    }

    pub fn from_weights(weights: Vec<Tensor>) -> Result<Self> {
        if weights.is_empty() {
            return invalid("GCN needs at least one layer");
        }
        for (i, w) in weights.iter().enumerate() {
            w.dims2()?;
            if i > 0 && weights[i - 1].shape()[1] != w.shape()[0] {
                return invalid(format!("GCN layer {} input does not match previous output", i));
            }
        }
        Ok(Self { weights })
    }

    pub fn in_dim(&self) -> usize {
        self.weights[0].shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.last().expect("non-empty").shape()[1]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::write_params(path, PARAMS_KIND, &self.weights)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_weights(persist::read_params(path, PARAMS_KIND)?)
    }
}

fn check_inputs(x: &Tensor, abar: &Tensor, params: &GcnParams) -> Result<()> {
    let (n, d) = x.dims2()?;
    let (an, am) = abar.dims2()?;
    if an != n || am != n {
        return invalid(format!("Ā is {}×{} for {} nodes", an, am, n));
    }
    if d != params.in_dim() {
        return invalid(format!("node features have {} columns, GCN expects {}", d, params.in_dim()));
    }
    Ok(())
}

/// `H ← ReLU(Ā H W)` on hidden layers, `E = Ā H W` on the last.
pub fn gcn_forward(x: &Tensor, abar: &Tensor, params: &GcnParams) -> Result<Tensor> {
    check_inputs(x, abar, params)?;
    let last = params.weights.len() - 1;
    let mut h = x.clone();
    for (l, w) in params.weights.iter().enumerate() {
        h = abar.matmul(&h.matmul(w)?)?;
        if l != last {
            h = h.map(|v| v.max(0.0));
        }
    }
    Ok(h)
}

/// Tape version of [`gcn_forward`]; `ws` are leaves bound to the layer weights.
pub fn record_gcn(tape: &mut Tape, x: Var, abar: Var, ws: &[Var]) -> Result<Var> {
    if ws.is_empty() {
        return invalid("GCN needs at least one layer");
    }
    let mut h = x;
    for (l, &w) in ws.iter().enumerate() {
        let hw = tape.matmul(h, w)?;
        h = tape.matmul(abar, hw)?;
        if l + 1 != ws.len() {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}
