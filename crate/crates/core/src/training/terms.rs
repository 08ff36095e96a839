use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

fn same_shape(g: &Graph, vars: &[Var], what: &str) -> Result<()> {
    let s = g.shape(vars[0]);
    if vars.iter().any(|&v| g.shape(v) != s) {
        let shapes: Vec<_> = vars.iter().map(|&v| g.shape(v).to_vec()).collect();
        return Err(Error::dim(format!("{what}: shapes differ {shapes:?}")));
    }
    Ok(())
}

/// `Σ ½(μ² + σ² − log σ² − 1)`: KL divergence from `N(μ, σ²)` to `N(0, 1)`,
/// summed over all elements.
pub fn kl_gaussian_std_graph(g: &mut Graph, mu: Var, log_var: Var) -> Result<Var> {
    same_shape(g, &[mu, log_var], "kl")?;
    let mu2 = g.square(mu);
    let var = g.exp(log_var);
    let a = g.add(mu2, var)?;
    let b = g.sub(a, log_var)?;
    let c = g.add_scalar(b, -1.0);
    let s = g.sum(c);
    Ok(g.scale(s, 0.5))
}

/// `Σ −½(log 2π + log σ² + (x − μ)²/σ²)`.
pub fn gaussian_loglik_graph(g: &mut Graph, x: Var, mu: Var, log_var: Var) -> Result<Var> {
    same_shape(g, &[x, mu, log_var], "gaussian log-likelihood")?;
    let r = g.sub(x, mu)?;
    let r2 = g.square(r);
    let neg = g.scale(log_var, -1.0);
    let prec = g.exp(neg);
    let maha = g.mul(r2, prec)?;
    let a = g.add(maha, log_var)?;
    let b = g.add_scalar(a, (2.0 * PI).ln());
    let s = g.sum(b);
    Ok(g.scale(s, -0.5))
}

pub fn kl_gaussian_std(mu: &Tensor, log_var: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let (m, l) = (g.constant(mu.clone()), g.constant(log_var.clone()));
    let kl = kl_gaussian_std_graph(&mut g, m, l)?;
    g.item(kl)
}

pub fn gaussian_loglik(x: &Tensor, mu: &Tensor, log_var: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let (xv, m, l) = (
        g.constant(x.clone()),
        g.constant(mu.clone()),
        g.constant(log_var.clone()),
    );
    let ll = gaussian_loglik_graph(&mut g, xv, m, l)?;
    g.item(ll)
}
