use super::graph::{Graph, Var};
use crate::error::{Error, Result};

/// Graph handles for one GRU layer.
///
/// Gate blocks are laid out `[reset | update | candidate]` along columns:
/// `w_ih` is `E × 3H`, `w_hh` is `H × 3H`, biases are `1 × 3H`.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b_ih: Var,
    pub b_hh: Var,
}

impl GruVars {
    pub fn hidden_dim(&self, g: &Graph) -> usize {
        g.value(self.w_hh).rows()
    }

    pub fn input_dim(&self, g: &Graph) -> usize {
        g.value(self.w_ih).rows()
    }
}

/// One GRU step:
///
/// ```text
/// r  = σ(x W_ir + b_ir + h W_hr + b_hr)
/// u  = σ(x W_iu + b_iu + h W_hu + b_hu)
/// n  = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
/// h' = (1 − u) ⊙ n + u ⊙ h
/// ```
pub fn gru_cell(g: &mut Graph, p: &GruVars, x: Var, h: Var) -> Result<Var> {
    let hidden = p.hidden_dim(g);
    let [w_in_rows, w_in_cols] = g.value(p.w_ih).shape();
    let x_shape = g.value(x).shape();
    let h_shape = g.value(h).shape();
    if w_in_cols != 3 * hidden || g.value(p.w_hh).cols() != 3 * hidden {
        return Err(Error::contract(format!("gru weights must have 3·{hidden} columns")));
    }
    if x_shape[1] != w_in_rows {
        return Err(Error::contract(format!("gru input has {} features, weights expect {w_in_rows}", x_shape[1])));
    }
    if h_shape != [x_shape[0], hidden] {
        return Err(Error::contract(format!(
            "gru state is {}x{}, expected {}x{hidden}",
            h_shape[0], h_shape[1], x_shape[0]
        )));
    }

    let xi = g.matmul(x, p.w_ih)?;
    let xi = g.add(xi, p.b_ih)?;
    let hh = g.matmul(h, p.w_hh)?;
    let hh = g.add(hh, p.b_hh)?;

    let xi_ru = g.slice(xi, 0, 2 * hidden)?;
    let hh_ru = g.slice(hh, 0, 2 * hidden)?;
    let ru = g.add(xi_ru, hh_ru)?;
    let ru = g.sigmoid(ru);
    let r = g.slice(ru, 0, hidden)?;
    let u = g.slice(ru, hidden, 2 * hidden)?;

    let xi_n = g.slice(xi, 2 * hidden, 3 * hidden)?;
    let hh_n = g.slice(hh, 2 * hidden, 3 * hidden)?;
    let gated = g.mul(r, hh_n)?;
    let n = g.add(xi_n, gated)?;
    let n = g.tanh(n);

    // h' = n + u ⊙ (h − n)
    let diff = g.sub(h, n)?;
    let keep = g.mul(u, diff)?;
    g.add(n, keep)
}
